"""Weight serialization: flat float64 stream plus a JSON sidecar.

A weight file is a pair: `<stem>.bin` holds every tensor concatenated as
little-endian 64-bit reals in a fixed order, and `<stem>.json` describes the
layout (format version, tensor names/shapes/offsets, scalar metadata).  File
size depends only on tensor shapes, never on the size of any graph the
weights are applied to.
"""

from __future__ import annotations

import json
import os
from collections import OrderedDict

import numpy as np

from .dsa import AttentionUpsampler, DsaWeights, IdwUpsampler
from .fsa import FsaWeights

FORMAT_VERSION = 1
_DTYPE = "<f8"


def _paths(path) -> tuple[str, str]:
    stem, ext = os.path.splitext(str(path))
    if ext not in ("", ".bin"):
        raise ValueError(f"weight path must end in .bin (or no extension), got {path!r}")
    return stem + ".bin", stem + ".json"


def save_tensors(path, tensors: "OrderedDict[str, np.ndarray] | dict", meta: dict | None = None) -> None:
    """Write named tensors as a flat little-endian float64 stream + sidecar.

    Args:
        path: destination; ".bin" and ".json" siblings are produced.
        tensors: name -> array mapping; iteration order fixes the layout.
        meta: optional JSON-serializable scalar metadata stored in the sidecar.
    """
    bin_path, json_path = _paths(path)
    entries = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.astype(_DTYPE).tobytes(order="C"))
    sidecar = {
        "format_version": FORMAT_VERSION,
        "dtype": _DTYPE,
        "total_elements": offset,
        "tensors": entries,
        "meta": meta or {},
    }
    with open(bin_path, "wb") as fh:
        fh.write(b"".join(chunks))
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensors(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    """Read back a (tensors, meta) pair written by save_tensors."""
    bin_path, json_path = _paths(path)
    with open(json_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    version = sidecar.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported weight format version {version!r} in {json_path}")
    if sidecar.get("dtype") != _DTYPE:
        raise ValueError(f"unsupported dtype {sidecar.get('dtype')!r} in {json_path}")
    flat = np.fromfile(bin_path, dtype=_DTYPE)
    if flat.size != sidecar["total_elements"]:
        raise ValueError(
            f"weight stream {bin_path} holds {flat.size} elements, "
            f"sidecar expects {sidecar['total_elements']}"
        )
    tensors = OrderedDict()
    for entry in sidecar["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        tensors[entry["name"]] = flat[start : start + size].reshape(shape).copy()
    return tensors, sidecar.get("meta", {})


def save_fsa_weights(path, w: FsaWeights) -> None:
    """Serialize one attention block's weights."""
    meta = {"kind": "fsa", "n_heads": w.n_heads, "n_groups": w.n_groups, "eps": w.eps}
    save_tensors(path, w.tensors(), meta=meta)


def load_fsa_weights(path) -> FsaWeights:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "fsa":
        raise ValueError(f"{path} does not hold full-attention weights (kind={meta.get('kind')!r})")
    return FsaWeights(
        **tensors, n_heads=meta["n_heads"], n_groups=meta["n_groups"], eps=meta["eps"]
    )


def save_dsa_weights(path, w: DsaWeights) -> None:
    """Serialize one deformable block's weights, subset block included."""
    tensors = OrderedDict()
    for name, arr in w.fsa.tensors().items():
        tensors[f"fsa.{name}"] = arr
    tensors["w_offset"] = w.w_offset
    tensors["w_align"] = w.w_align
    tensors["w_out"] = w.w_out
    meta = {
        "kind": "dsa",
        "n_heads": w.fsa.n_heads,
        "n_groups": w.fsa.n_groups,
        "eps": w.fsa.eps,
    }
    if isinstance(w.upsampler, IdwUpsampler):
        meta["upsample"] = "idw"
        meta["interp_radius"] = w.upsampler.radius
        meta["interp_samples"] = w.upsampler.max_samples
        tensors["upsample.mlp"] = w.upsampler.mlp
    else:
        meta["upsample"] = "attention"
        tensors["upsample.wq"] = w.upsampler.wq
        tensors["upsample.wk"] = w.upsampler.wk
        tensors["upsample.wv"] = w.upsampler.wv
    save_tensors(path, tensors, meta=meta)


def load_dsa_weights(path) -> DsaWeights:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "dsa":
        raise ValueError(f"{path} does not hold deformable weights (kind={meta.get('kind')!r})")
    fsa_w = FsaWeights(
        wq=tensors["fsa.wq"],
        wk=tensors["fsa.wk"],
        wv=tensors["fsa.wv"],
        wo=tensors["fsa.wo"],
        wpos=tensors["fsa.wpos"],
        gamma=tensors["fsa.gamma"],
        beta=tensors["fsa.beta"],
        n_heads=meta["n_heads"],
        n_groups=meta["n_groups"],
        eps=meta["eps"],
    )
    if meta["upsample"] == "idw":
        ups = IdwUpsampler(
            radius=meta["interp_radius"],
            max_samples=meta["interp_samples"],
            mlp=tensors["upsample.mlp"],
        )
    else:
        ups = AttentionUpsampler(
            wq=tensors["upsample.wq"], wk=tensors["upsample.wk"], wv=tensors["upsample.wv"]
        )
    return DsaWeights(
        fsa=fsa_w,
        w_offset=tensors["w_offset"],
        w_align=tensors["w_align"],
        w_out=tensors["w_out"],
        upsampler=ups,
    )
