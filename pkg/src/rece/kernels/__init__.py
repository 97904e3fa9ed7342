"""Backend selection for the per-block scoring kernels.

The compiled extension is preferred when it was built; otherwise the
numpy formulation takes over.  ``use_backend`` lets benchmarks and tests
pin either one explicitly.
"""

from __future__ import annotations

from contextlib import contextmanager

from . import _chunk_ops_py

try:
    from . import _chunk_ops as _compiled  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on how the package was built
    _compiled = None

_BACKENDS = {_chunk_ops_py.BACKEND_NAME: _chunk_ops_py}
if _compiled is not None:
    _BACKENDS[_compiled.BACKEND_NAME] = _compiled

_active = _compiled if _compiled is not None else _chunk_ops_py

HAVE_COMPILED = _compiled is not None


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active.BACKEND_NAME


def get_backend(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}") from None


def set_backend(name: str) -> None:
    global _active
    _active = get_backend(name)


def active():
    """The module implementing the currently selected backend."""
    return _active


@contextmanager
def use_backend(name: str):
    previous = active_backend()
    set_backend(name)
    try:
        yield _BACKENDS[name]
    finally:
        set_backend(previous)
