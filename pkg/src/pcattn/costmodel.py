"""Analytic parameter and FLOP budgets for attention-augmented 3D detectors.

Architectures are described by declarative configs (see the shipped YAML files
under pcattn/configs/).  Counting follows the rules documented in
configs/assumptions.md:

* one multiply-accumulate = 2 FLOPs; normalization/activation ops excluded;
* a 2D conv block is one strided 3x3 conv followed by `layer_num` 3x3
  refinement convs; transposed-conv upsamplers use kernel = stride (min 1);
* a sparse 3D block is `layer_num` 3x3x3 convs (first changes channels) at a
  declared active-site count, plus a (3,1,1) output projection;
* an attention layer at a stage with C channels and context dim d costs
  4*C*d + 3*d + 2*C parameters (q/k/v/out projections, position encoding,
  norm affine) and 2*n^2*d each for scores and context at n effective nodes;
* a deformable stage additionally carries d*3 + 3 + d^2 + upsampler
  parameters and itemized sampling/interpolation FLOPs, with n replaced by
  the keypoint count m inside the attention terms;
* detection-head/refinement machinery not derivable from the layer tables is
  a per-family constant from configs/counting_rules.yaml.

All totals are exact integers, so ratio identities (for example the (m/n)^2
attention-score relation between deformable and full attention) hold exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .configio import ConfigError, check_keys, expect_int, expect_number, expect_str

FAMILIES = ("pointpillars", "second", "pointrcnn", "pvrcnn")
ATTENTION_KINDS = ("fsa", "dsa")
UPSAMPLE_KINDS = ("idw", "attention")

# baseline-vs-variant pairs shipped with the package
SHIPPED_PAIRS = (
    ("pointpillars", "fsa_pointpillars"),
    ("second", "fsa_second"),
    ("pointrcnn", "fsa_pointrcnn"),
    ("pvrcnn", "fsa_pvrcnn"),
)

CONVENTIONS = "1 MAC = 2 FLOPs; norm/activation ops excluded; heads counted as per-family constants"


@dataclass(frozen=True)
class PfnSpec:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Sparse3dSpec:
    input_channels: int
    stem_channels: int
    block_channels: tuple
    block_layers: tuple
    out_channels: int


@dataclass(frozen=True)
class Backbone2dSpec:
    input_channels: int
    layer_nums: tuple
    layer_strides: tuple
    num_filters: tuple
    upsample_strides: tuple
    num_upsample_filters: tuple


@dataclass(frozen=True)
class SaLayerSpec:
    """One set-abstraction level: grouped multi-scale MLP chains.

    in_channels is the incoming feature width; each chain consumes
    in_channels + 3 (features concatenated with local offsets).
    """

    npoints: int
    in_channels: int
    nsamples: tuple
    mlps: tuple  # tuple of channel chains


@dataclass(frozen=True)
class FpLayerSpec:
    """One feature-propagation level applied at npoints target points."""

    npoints: int
    in_channels: int
    mlp: tuple


@dataclass(frozen=True)
class PointnetSpec:
    sa_layers: tuple
    fp_layers: tuple


@dataclass(frozen=True)
class AttentionStage:
    """One insertion point: stage feature width and optional node counts."""

    name: str
    channels: int
    nodes: int | None = None
    keypoints: int | None = None


@dataclass(frozen=True)
class AttentionSpec:
    kind: str
    layers: int
    heads: int
    dim: int
    stages: tuple
    keypoints: int | None = None
    deform_radius: float | None = None
    pool_radius: float | None = None
    neighbor_k: int | None = None
    interp_radius: float | None = None
    interp_samples: int | None = None
    interp_mlp_dim: int | None = None
    upsample: str | None = None


@dataclass(frozen=True)
class InputStats:
    """Declared workload statistics used by the FLOP model."""

    nodes: int | None = None
    points: int | None = None
    bev_map: tuple | None = None
    sparse_active: tuple | None = None


@dataclass(frozen=True)
class ArchConfig:
    id: str
    family: str
    input_stats: InputStats
    pfn: PfnSpec | None = None
    sparse3d: Sparse3dSpec | None = None
    backbone2d: Backbone2dSpec | None = None
    pointnet: PointnetSpec | None = None
    attention: AttentionSpec | None = None


@dataclass(frozen=True)
class CountingRules:
    """Constants shared by every config: MAC convention and head budgets."""

    mac_flops: int
    head_params: dict
    head_flops: dict


@dataclass(frozen=True)
class CostReport:
    config_id: str
    params_total: int
    params_items: dict
    flops_total: int
    flops_items: dict
    conventions: str = CONVENTIONS

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "conventions": self.conventions,
            "params_total": self.params_total,
            "params_items": dict(self.params_items),
            "flops_total": self.flops_total,
            "flops_items": dict(self.flops_items),
        }


@dataclass(frozen=True)
class Comparison:
    """Reductions of a variant against a baseline, recomputed from absolutes."""

    baseline: CostReport
    variant: CostReport
    param_change_pct: float = field(init=False)
    flop_change_pct: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "param_change_pct",
            100.0 * (self.variant.params_total / self.baseline.params_total - 1.0),
        )
        object.__setattr__(
            self,
            "flop_change_pct",
            100.0 * (self.variant.flops_total / self.baseline.flops_total - 1.0),
        )

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "variant": self.variant.to_dict(),
            "param_change_pct": self.param_change_pct,
            "flop_change_pct": self.flop_change_pct,
        }


# ---------------------------------------------------------------------------
# parsing


def _expect_int_list(value, path, filename, length=None):
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{filename}: {path} must be a list of integers")
    if length is not None and len(value) != length:
        raise ConfigError(f"{filename}: {path} must have {length} entries, got {len(value)}")
    if any(v < 1 for v in value):
        raise ConfigError(f"{filename}: {path} entries must be >= 1")
    return tuple(value)


def _parse_pfn(doc, filename) -> PfnSpec:
    check_keys(doc, {"in_dim", "out_dim"}, {"in_dim", "out_dim"}, "pfn", filename)
    return PfnSpec(
        in_dim=expect_int(doc["in_dim"], "pfn.in_dim", filename, minimum=1),
        out_dim=expect_int(doc["out_dim"], "pfn.out_dim", filename, minimum=1),
    )


def _parse_sparse3d(doc, filename) -> Sparse3dSpec:
    allowed = {"input_channels", "stem_channels", "block_channels", "block_layers", "out_channels"}
    check_keys(doc, allowed, allowed, "sparse3d", filename)
    channels = _expect_int_list(doc["block_channels"], "sparse3d.block_channels", filename)
    layers = _expect_int_list(doc["block_layers"], "sparse3d.block_layers", filename, length=len(channels))
    return Sparse3dSpec(
        input_channels=expect_int(doc["input_channels"], "sparse3d.input_channels", filename, minimum=1),
        stem_channels=expect_int(doc["stem_channels"], "sparse3d.stem_channels", filename, minimum=1),
        block_channels=channels,
        block_layers=layers,
        out_channels=expect_int(doc["out_channels"], "sparse3d.out_channels", filename, minimum=1),
    )


def _parse_backbone2d(doc, filename) -> Backbone2dSpec:
    allowed = {
        "input_channels",
        "layer_nums",
        "layer_strides",
        "num_filters",
        "upsample_strides",
        "num_upsample_filters",
    }
    check_keys(doc, allowed, allowed, "backbone2d", filename)
    nums = _expect_int_list(doc["layer_nums"], "backbone2d.layer_nums", filename)
    nb = len(nums)
    return Backbone2dSpec(
        input_channels=expect_int(doc["input_channels"], "backbone2d.input_channels", filename, minimum=1),
        layer_nums=nums,
        layer_strides=_expect_int_list(doc["layer_strides"], "backbone2d.layer_strides", filename, length=nb),
        num_filters=_expect_int_list(doc["num_filters"], "backbone2d.num_filters", filename, length=nb),
        upsample_strides=_expect_int_list(doc["upsample_strides"], "backbone2d.upsample_strides", filename, length=nb),
        num_upsample_filters=_expect_int_list(
            doc["num_upsample_filters"], "backbone2d.num_upsample_filters", filename, length=nb
        ),
    )


def _parse_pointnet(doc, filename) -> PointnetSpec:
    check_keys(doc, {"sa_layers", "fp_layers"}, {"sa_layers", "fp_layers"}, "pointnet", filename)
    if not isinstance(doc["sa_layers"], list) or not doc["sa_layers"]:
        raise ConfigError(f"{filename}: pointnet.sa_layers must be a non-empty list")
    if not isinstance(doc["fp_layers"], list):
        raise ConfigError(f"{filename}: pointnet.fp_layers must be a list")
    sa = []
    for i, entry in enumerate(doc["sa_layers"]):
        path = f"pointnet.sa_layers[{i}]"
        allowed = {"npoints", "in_channels", "nsamples", "mlps"}
        check_keys(entry, allowed, allowed, path, filename)
        mlps = entry["mlps"]
        if not isinstance(mlps, list) or not mlps:
            raise ConfigError(f"{filename}: {path}.mlps must be a non-empty list of chains")
        chains = tuple(_expect_int_list(ch, f"{path}.mlps[{j}]", filename) for j, ch in enumerate(mlps))
        sa.append(
            SaLayerSpec(
                npoints=expect_int(entry["npoints"], f"{path}.npoints", filename, minimum=1),
                in_channels=expect_int(entry["in_channels"], f"{path}.in_channels", filename, minimum=0),
                nsamples=_expect_int_list(entry["nsamples"], f"{path}.nsamples", filename, length=len(chains)),
                mlps=chains,
            )
        )
    fp = []
    for i, entry in enumerate(doc["fp_layers"]):
        path = f"pointnet.fp_layers[{i}]"
        allowed = {"npoints", "in_channels", "mlp"}
        check_keys(entry, allowed, allowed, path, filename)
        fp.append(
            FpLayerSpec(
                npoints=expect_int(entry["npoints"], f"{path}.npoints", filename, minimum=1),
                in_channels=expect_int(entry["in_channels"], f"{path}.in_channels", filename, minimum=1),
                mlp=_expect_int_list(entry["mlp"], f"{path}.mlp", filename),
            )
        )
    return PointnetSpec(sa_layers=tuple(sa), fp_layers=tuple(fp))


def _parse_attention(doc, filename) -> AttentionSpec:
    allowed = {
        "kind",
        "layers",
        "heads",
        "dim",
        "stages",
        "keypoints",
        "deform_radius",
        "pool_radius",
        "neighbor_k",
        "interp_radius",
        "interp_samples",
        "interp_mlp_dim",
        "upsample",
    }
    check_keys(doc, allowed, {"kind", "layers", "heads", "dim", "stages"}, "attention", filename)
    kind = expect_str(doc["kind"], "attention.kind", filename)
    if kind not in ATTENTION_KINDS:
        raise ConfigError(f"{filename}: attention.kind must be one of {ATTENTION_KINDS}, got {kind!r}")
    dim = expect_int(doc["dim"], "attention.dim", filename, minimum=1)
    heads = expect_int(doc["heads"], "attention.heads", filename, minimum=1)
    if dim % heads != 0:
        raise ConfigError(f"{filename}: attention.dim={dim} is not divisible by attention.heads={heads}")
    if not isinstance(doc["stages"], list) or not doc["stages"]:
        raise ConfigError(f"{filename}: attention.stages must be a non-empty list")
    stages = []
    for i, entry in enumerate(doc["stages"]):
        path = f"attention.stages[{i}]"
        check_keys(entry, {"name", "channels", "nodes", "keypoints"}, {"name", "channels"}, path, filename)
        stages.append(
            AttentionStage(
                name=expect_str(entry["name"], f"{path}.name", filename),
                channels=expect_int(entry["channels"], f"{path}.channels", filename, minimum=1),
                nodes=(
                    expect_int(entry["nodes"], f"{path}.nodes", filename, minimum=1)
                    if "nodes" in entry
                    else None
                ),
                keypoints=(
                    expect_int(entry["keypoints"], f"{path}.keypoints", filename, minimum=1)
                    if "keypoints" in entry
                    else None
                ),
            )
        )
    upsample = None
    if "upsample" in doc:
        upsample = expect_str(doc["upsample"], "attention.upsample", filename)
        if upsample not in UPSAMPLE_KINDS:
            raise ConfigError(
                f"{filename}: attention.upsample must be one of {UPSAMPLE_KINDS}, got {upsample!r}"
            )
    spec = AttentionSpec(
        kind=kind,
        layers=expect_int(doc["layers"], "attention.layers", filename, minimum=1),
        heads=heads,
        dim=dim,
        stages=tuple(stages),
        keypoints=(
            expect_int(doc["keypoints"], "attention.keypoints", filename, minimum=1)
            if "keypoints" in doc
            else None
        ),
        deform_radius=(
            expect_number(doc["deform_radius"], "attention.deform_radius", filename, positive=True)
            if "deform_radius" in doc
            else None
        ),
        pool_radius=(
            expect_number(doc["pool_radius"], "attention.pool_radius", filename, positive=True)
            if "pool_radius" in doc
            else None
        ),
        neighbor_k=(
            expect_int(doc["neighbor_k"], "attention.neighbor_k", filename, minimum=1)
            if "neighbor_k" in doc
            else None
        ),
        interp_radius=(
            expect_number(doc["interp_radius"], "attention.interp_radius", filename, positive=True)
            if "interp_radius" in doc
            else None
        ),
        interp_samples=(
            expect_int(doc["interp_samples"], "attention.interp_samples", filename, minimum=1)
            if "interp_samples" in doc
            else None
        ),
        interp_mlp_dim=(
            expect_int(doc["interp_mlp_dim"], "attention.interp_mlp_dim", filename, minimum=1)
            if "interp_mlp_dim" in doc
            else None
        ),
        upsample=upsample,
    )
    if kind == "dsa":
        if spec.keypoints is None and any(s.keypoints is None for s in spec.stages):
            raise ConfigError(
                f"{filename}: attention.kind=dsa requires attention.keypoints "
                "(or a keypoints entry on every stage)"
            )
    return spec


def _parse_input_stats(doc, filename) -> InputStats:
    allowed = {"nodes", "points", "bev_map", "sparse_active"}
    check_keys(doc, allowed, set(), "input_stats", filename)
    return InputStats(
        nodes=expect_int(doc["nodes"], "input_stats.nodes", filename, minimum=1) if "nodes" in doc else None,
        points=expect_int(doc["points"], "input_stats.points", filename, minimum=1) if "points" in doc else None,
        bev_map=(
            _expect_int_list(doc["bev_map"], "input_stats.bev_map", filename, length=2)
            if "bev_map" in doc
            else None
        ),
        sparse_active=(
            _expect_int_list(doc["sparse_active"], "input_stats.sparse_active", filename)
            if "sparse_active" in doc
            else None
        ),
    )


def parse_config(source) -> ArchConfig:
    """Parse an architecture config from a YAML path or an equivalent mapping.

    Validation is strict: unknown keys, missing keys, wrong types, and
    violated invariants all raise ConfigError naming the offending field and
    file.  Parsing is lossless: serialize_config(parse_config(x)) reproduces
    the same document.
    """
    if isinstance(source, dict):
        doc = source
        filename = "<mapping>"
    else:
        filename = str(source)
        with open(source, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{filename}: config root must be a mapping")
    allowed = {"id", "family", "pfn", "sparse3d", "backbone2d", "pointnet", "attention", "input_stats"}
    check_keys(doc, allowed, {"id", "family"}, "", filename)
    family = expect_str(doc["family"], "family", filename)
    if family not in FAMILIES:
        raise ConfigError(f"{filename}: family must be one of {FAMILIES}, got {family!r}")
    cfg = ArchConfig(
        id=expect_str(doc["id"], "id", filename),
        family=family,
        pfn=_parse_pfn(doc["pfn"], filename) if "pfn" in doc else None,
        sparse3d=_parse_sparse3d(doc["sparse3d"], filename) if "sparse3d" in doc else None,
        backbone2d=_parse_backbone2d(doc["backbone2d"], filename) if "backbone2d" in doc else None,
        pointnet=_parse_pointnet(doc["pointnet"], filename) if "pointnet" in doc else None,
        attention=_parse_attention(doc["attention"], filename) if "attention" in doc else None,
        input_stats=_parse_input_stats(doc.get("input_stats", {}), filename),
    )
    if cfg.sparse3d is not None and cfg.input_stats.sparse_active is not None:
        want = 1 + len(cfg.sparse3d.block_channels)
        if len(cfg.input_stats.sparse_active) != want:
            raise ConfigError(
                f"{filename}: input_stats.sparse_active must have {want} entries "
                f"(stem + one per sparse block), got {len(cfg.input_stats.sparse_active)}"
            )
    return cfg


def serialize_config(cfg: ArchConfig) -> dict:
    """Plain mapping equivalent of a parsed config (inverse of parse_config)."""
    doc: dict = {"id": cfg.id, "family": cfg.family}
    if cfg.pfn is not None:
        doc["pfn"] = {"in_dim": cfg.pfn.in_dim, "out_dim": cfg.pfn.out_dim}
    if cfg.sparse3d is not None:
        s = cfg.sparse3d
        doc["sparse3d"] = {
            "input_channels": s.input_channels,
            "stem_channels": s.stem_channels,
            "block_channels": list(s.block_channels),
            "block_layers": list(s.block_layers),
            "out_channels": s.out_channels,
        }
    if cfg.backbone2d is not None:
        b = cfg.backbone2d
        doc["backbone2d"] = {
            "input_channels": b.input_channels,
            "layer_nums": list(b.layer_nums),
            "layer_strides": list(b.layer_strides),
            "num_filters": list(b.num_filters),
            "upsample_strides": list(b.upsample_strides),
            "num_upsample_filters": list(b.num_upsample_filters),
        }
    if cfg.pointnet is not None:
        doc["pointnet"] = {
            "sa_layers": [
                {
                    "npoints": sa.npoints,
                    "in_channels": sa.in_channels,
                    "nsamples": list(sa.nsamples),
                    "mlps": [list(ch) for ch in sa.mlps],
                }
                for sa in cfg.pointnet.sa_layers
            ],
            "fp_layers": [
                {"npoints": fp.npoints, "in_channels": fp.in_channels, "mlp": list(fp.mlp)}
                for fp in cfg.pointnet.fp_layers
            ],
        }
    if cfg.attention is not None:
        a = cfg.attention
        att: dict = {
            "kind": a.kind,
            "layers": a.layers,
            "heads": a.heads,
            "dim": a.dim,
            "stages": [],
        }
        for s in a.stages:
            entry: dict = {"name": s.name, "channels": s.channels}
            if s.nodes is not None:
                entry["nodes"] = s.nodes
            if s.keypoints is not None:
                entry["keypoints"] = s.keypoints
            att["stages"].append(entry)
        for key in (
            "keypoints",
            "deform_radius",
            "pool_radius",
            "neighbor_k",
            "interp_radius",
            "interp_samples",
            "interp_mlp_dim",
            "upsample",
        ):
            value = getattr(a, key)
            if value is not None:
                att[key] = value
        doc["attention"] = att
    stats: dict = {}
    if cfg.input_stats.nodes is not None:
        stats["nodes"] = cfg.input_stats.nodes
    if cfg.input_stats.points is not None:
        stats["points"] = cfg.input_stats.points
    if cfg.input_stats.bev_map is not None:
        stats["bev_map"] = list(cfg.input_stats.bev_map)
    if cfg.input_stats.sparse_active is not None:
        stats["sparse_active"] = list(cfg.input_stats.sparse_active)
    if stats:
        doc["input_stats"] = stats
    return doc


# ---------------------------------------------------------------------------
# shipped resources


def shipped_config_path(name: str) -> str:
    """Filesystem path of a shipped config (name without the .yaml suffix)."""
    path = resources.files("pcattn").joinpath("configs", f"{name}.yaml")
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return str(path)


def list_shipped_configs() -> list[str]:
    """Names of shipped architecture configs (loadable with parse_config).

    The configs directory also holds counting rules and extraction configs;
    only documents with the architecture keys (id, family) are listed.
    """
    base = resources.files("pcattn").joinpath("configs")
    names = []
    for p in sorted(base.iterdir()):
        if not p.name.endswith(".yaml"):
            continue
        with p.open("r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if isinstance(doc, dict) and "id" in doc and "family" in doc:
            names.append(p.name[: -len(".yaml")])
    return names


def load_counting_rules(path=None) -> CountingRules:
    """Load counting-rule constants (defaults to the shipped file)."""
    if path is None:
        path = str(resources.files("pcattn").joinpath("configs", "counting_rules.yaml"))
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    filename = str(path)
    check_keys(doc, {"mac_flops", "head_params", "head_flops"}, {"mac_flops", "head_params", "head_flops"}, "", filename)
    mac = expect_int(doc["mac_flops"], "mac_flops", filename, minimum=1)
    for section in ("head_params", "head_flops"):
        if not isinstance(doc[section], dict):
            raise ConfigError(f"{filename}: {section} must be a mapping")
        for fam, value in doc[section].items():
            if fam not in FAMILIES:
                raise ConfigError(f"{filename}: {section}.{fam} is not a known family")
            expect_int(value, f"{section}.{fam}", filename, minimum=0)
    return CountingRules(mac_flops=mac, head_params=dict(doc["head_params"]), head_flops=dict(doc["head_flops"]))


# ---------------------------------------------------------------------------
# parameter counting


def _chain_params(in_width: int, chain, normed: bool = True) -> int:
    total = 0
    prev = in_width
    for width in chain:
        total += prev * width
        if normed:
            total += 2 * width
        prev = width
    return total


def _attention_upsampler_params(att: AttentionSpec) -> int:
    if att.kind != "dsa":
        return 0
    if att.upsample == "attention":
        return 3 * att.dim * att.dim
    mlp_dim = att.interp_mlp_dim if att.interp_mlp_dim is not None else att.dim
    return att.dim * mlp_dim


def param_breakdown(cfg: ArchConfig, rules: CountingRules | None = None) -> dict:
    """Per-stage parameter counts for a config (exact integers)."""
    if rules is None:
        rules = load_counting_rules()
    items: dict = {}
    if cfg.pfn is not None:
        items["pfn"] = cfg.pfn.in_dim * cfg.pfn.out_dim + 2 * cfg.pfn.out_dim
    if cfg.sparse3d is not None:
        s = cfg.sparse3d
        total = 27 * s.input_channels * s.stem_channels + 2 * s.stem_channels
        prev = s.stem_channels
        for ch, layers in zip(s.block_channels, s.block_layers):
            total += 27 * prev * ch + 2 * ch
            total += (layers - 1) * (27 * ch * ch + 2 * ch)
            prev = ch
        total += 3 * prev * s.out_channels + 2 * s.out_channels
        items["sparse3d"] = total
    if cfg.backbone2d is not None:
        b = cfg.backbone2d
        total = 0
        prev = b.input_channels
        for f, layers in zip(b.num_filters, b.layer_nums):
            total += 9 * prev * f + 2 * f
            total += layers * (9 * f * f + 2 * f)
            prev = f
        for f, stride, up in zip(b.num_filters, b.upsample_strides, b.num_upsample_filters):
            k = max(stride, 1)
            total += k * k * f * up + 2 * up
        items["backbone2d"] = total
    if cfg.pointnet is not None:
        sa_total = 0
        for sa in cfg.pointnet.sa_layers:
            for chain in sa.mlps:
                sa_total += _chain_params(sa.in_channels + 3, chain)
        fp_total = 0
        for fp in cfg.pointnet.fp_layers:
            fp_total += _chain_params(fp.in_channels, fp.mlp)
        items["pointnet_sa"] = sa_total
        items["pointnet_fp"] = fp_total
    if cfg.attention is not None:
        att = cfg.attention
        per_stage = 0
        for stage in att.stages:
            per_stage += att.layers * (4 * stage.channels * att.dim + 3 * att.dim + 2 * stage.channels)
        items["attention"] = per_stage
        if att.kind == "dsa":
            extras = 0
            for _stage in att.stages:
                extras += att.dim * 3 + 3 + att.dim * att.dim + _attention_upsampler_params(att)
            items["attention_extras"] = extras
    items["head"] = int(rules.head_params.get(cfg.family, 0))
    return items


def count_params(cfg: ArchConfig, rules: CountingRules | None = None) -> int:
    """Total learnable parameters of a config under the documented rules."""
    return sum(param_breakdown(cfg, rules).values())


# ---------------------------------------------------------------------------
# FLOP counting


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _stage_nodes(cfg: ArchConfig, stage: AttentionStage, nodes_override: int | None) -> int:
    if nodes_override is not None:
        return nodes_override
    if stage.nodes is not None:
        return stage.nodes
    if cfg.input_stats.nodes is not None:
        return cfg.input_stats.nodes
    raise ConfigError(
        f"config {cfg.id}: attention stage {stage.name!r} needs a node count "
        "(stage.nodes, input_stats.nodes, or an explicit override)"
    )


def _stage_keypoints(att: AttentionSpec, stage: AttentionStage) -> int:
    if stage.keypoints is not None:
        return stage.keypoints
    return int(att.keypoints)


def flop_breakdown(cfg: ArchConfig, rules: CountingRules | None = None, nodes: int | None = None) -> dict:
    """Per-stage FLOP counts at the declared workload statistics.

    Args:
        cfg: architecture config.
        rules: counting-rule constants (default: shipped).
        nodes: optional override of the graph node count seen by attention
            stages and by deformable sampling.

    Returns:
        dict of exact integer FLOP terms; attention terms are itemized
        (projections, position, scores, context, sampling, upsample).
    """
    if rules is None:
        rules = load_counting_rules()
    mac = rules.mac_flops
    items: dict = {}
    stats = cfg.input_stats
    if cfg.pfn is not None:
        if stats.points is None:
            raise ConfigError(f"config {cfg.id}: pfn FLOPs need input_stats.points")
        items["pfn"] = mac * stats.points * cfg.pfn.in_dim * cfg.pfn.out_dim
    if cfg.sparse3d is not None:
        s = cfg.sparse3d
        if stats.sparse_active is None:
            raise ConfigError(f"config {cfg.id}: sparse3d FLOPs need input_stats.sparse_active")
        active = stats.sparse_active
        total = mac * 27 * s.input_channels * s.stem_channels * active[0]
        prev = s.stem_channels
        for i, (ch, layers) in enumerate(zip(s.block_channels, s.block_layers)):
            sites = active[i + 1]
            total += mac * 27 * prev * ch * sites
            total += (layers - 1) * mac * 27 * ch * ch * sites
            prev = ch
        total += mac * 3 * prev * s.out_channels * active[-1]
        items["sparse3d"] = total
    if cfg.backbone2d is not None:
        b = cfg.backbone2d
        if stats.bev_map is None:
            raise ConfigError(f"config {cfg.id}: backbone2d FLOPs need input_stats.bev_map")
        h, w = stats.bev_map
        total = 0
        prev = b.input_channels
        block_hw = []
        for f, layers, stride in zip(b.num_filters, b.layer_nums, b.layer_strides):
            h = _ceil_div(h, stride)
            w = _ceil_div(w, stride)
            block_hw.append((h, w))
            total += mac * 9 * prev * f * h * w
            total += layers * mac * 9 * f * f * h * w
            prev = f
        for (bh, bw), f, stride, up in zip(block_hw, b.num_filters, b.upsample_strides, b.num_upsample_filters):
            k = max(stride, 1)
            total += mac * k * k * f * up * bh * bw
        items["backbone2d"] = total
    if cfg.pointnet is not None:
        if stats.points is None:
            raise ConfigError(f"config {cfg.id}: pointnet FLOPs need input_stats.points")
        sa_total = 0
        prev_points = stats.points
        for sa in cfg.pointnet.sa_layers:
            sa_total += mac * 3 * prev_points * sa.npoints  # grouping distances
            for chain, nsample in zip(sa.mlps, sa.nsamples):
                chain_macs = 0
                prev = sa.in_channels + 3
                for width in chain:
                    chain_macs += prev * width
                    prev = width
                sa_total += mac * sa.npoints * nsample * chain_macs
            prev_points = sa.npoints
        fp_total = 0
        for fp in cfg.pointnet.fp_layers:
            chain_macs = 0
            prev = fp.in_channels
            for width in fp.mlp:
                chain_macs += prev * width
                prev = width
            fp_total += mac * fp.npoints * chain_macs
        items["pointnet_sa"] = sa_total
        items["pointnet_fp"] = fp_total
    if cfg.attention is not None:
        att = cfg.attention
        proj = pos = scores = context = sampling = upsample = 0
        for stage in att.stages:
            n_base = _stage_nodes(cfg, stage, nodes)
            n_eff = _stage_keypoints(att, stage) if att.kind == "dsa" else n_base
            proj += att.layers * mac * n_eff * stage.channels * att.dim * 4
            pos += att.layers * mac * n_eff * 3 * att.dim
            scores += att.layers * mac * n_eff * n_eff * att.dim
            context += att.layers * mac * n_eff * n_eff * att.dim
            if att.kind == "dsa":
                m = n_eff
                k = att.neighbor_k if att.neighbor_k is not None else 16
                # farthest point sampling + deform/pool/interp neighborhood scans
                sampling += 4 * mac * 3 * n_base * m
                # offset projection and alignment inside the deformation
                sampling += mac * m * k * (att.dim * 3 + 3)
                # pooling map applied to every graph node once
                sampling += mac * n_base * att.dim * att.dim
                if att.upsample == "attention":
                    upsample += mac * n_base * att.dim * att.dim
                    upsample += 2 * mac * m * att.dim * att.dim
                    upsample += 2 * mac * n_base * m * att.dim
                else:
                    samples = att.interp_samples if att.interp_samples is not None else 16
                    mlp_dim = att.interp_mlp_dim if att.interp_mlp_dim is not None else att.dim
                    upsample += mac * n_base * samples * att.dim
                    upsample += mac * n_base * att.dim * mlp_dim
        items["attention_projections"] = proj
        items["attention_position"] = pos
        items["attention_scores"] = scores
        items["attention_context"] = context
        if att.kind == "dsa":
            items["attention_sampling"] = sampling
            items["attention_upsample"] = upsample
    items["head"] = int(rules.head_flops.get(cfg.family, 0))
    return items


def count_flops(cfg: ArchConfig, rules: CountingRules | None = None, nodes: int | None = None) -> int:
    """Total FLOPs of a config at its declared workload statistics."""
    return sum(flop_breakdown(cfg, rules, nodes=nodes).values())


# ---------------------------------------------------------------------------
# reports


def cost_report(cfg: ArchConfig, rules: CountingRules | None = None, nodes: int | None = None) -> CostReport:
    """Full cost report (params + FLOPs, itemized) for one config."""
    if rules is None:
        rules = load_counting_rules()
    p_items = param_breakdown(cfg, rules)
    f_items = flop_breakdown(cfg, rules, nodes=nodes)
    return CostReport(
        config_id=cfg.id,
        params_total=sum(p_items.values()),
        params_items=p_items,
        flops_total=sum(f_items.values()),
        flops_items=f_items,
    )


def compare(cfg_baseline: ArchConfig, cfg_variant: ArchConfig, rules: CountingRules | None = None, nodes: int | None = None) -> Comparison:
    """Cost comparison of a variant against a baseline."""
    if rules is None:
        rules = load_counting_rules()
    return Comparison(
        baseline=cost_report(cfg_baseline, rules, nodes=nodes),
        variant=cost_report(cfg_variant, rules, nodes=nodes),
    )


def render_report_text(report: CostReport) -> str:
    """Aligned, human-readable rendering of one cost report."""
    lines = [
        f"config: {report.config_id}",
        f"conventions: {report.conventions}",
        f"{'stage':<24}{'params':>16}{'flops':>20}",
    ]
    keys = sorted(set(report.params_items) | set(report.flops_items))
    for key in keys:
        p = report.params_items.get(key, 0)
        f = report.flops_items.get(key, 0)
        lines.append(f"{key:<24}{p:>16,}{f:>20,}")
    lines.append(f"{'total':<24}{report.params_total:>16,}{report.flops_total:>20,}")
    lines.append(
        f"{'':<24}{report.params_total / 1e6:>13.3f} M {report.flops_total / 1e9:>16.3f} G"
    )
    return "\n".join(lines)


def render_comparison_text(comp: Comparison) -> str:
    """Aligned rendering of a baseline-vs-variant comparison."""
    b, v = comp.baseline, comp.variant
    lines = [
        f"{'config':<24}{'params (M)':>12}{'flops (G)':>12}",
        f"{b.config_id:<24}{b.params_total / 1e6:>12.3f}{b.flops_total / 1e9:>12.3f}",
        f"{v.config_id:<24}{v.params_total / 1e6:>12.3f}{v.flops_total / 1e9:>12.3f}",
        f"{'change':<24}{comp.param_change_pct:>+11.1f}%{comp.flop_change_pct:>+11.1f}%",
    ]
    return "\n".join(lines)


def render_report_json(report: CostReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
