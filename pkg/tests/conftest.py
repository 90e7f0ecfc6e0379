import pytest

from pcattn import parallel


@pytest.fixture(autouse=True)
def _reset_thread_limit():
    """Tests may pin the worker-thread limit; always restore the default."""
    yield
    parallel.set_max_threads(None)
