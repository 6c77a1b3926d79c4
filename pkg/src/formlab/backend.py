"""Integration backend selection.

Two interchangeable span integrators exist: a compiled Cython kernel
(``formlab._kernel``) and the pure-NumPy reference (``formlab._reference``).
The compiled one is picked at import time when the extension built; the
reference module is always available. Both implement the same contract and
agree to ~1e-12 per span (they order a handful of floating-point reductions
differently, so bitwise equality is not promised across backends; a single
backend is deterministic run to run).

Selection is explicit-only beyond the import-time default: pass
``backend="reference"`` or ``backend="compiled"`` to ``integrate_span``, or
flip the process-wide default with ``set_default_backend``. There is no
environment-variable override.
"""

from __future__ import annotations

from formlab import _reference
from formlab._span import SpanProblem, SpanResult

try:
    from formlab import _kernel
except ImportError:  # extension not built on this install
    _kernel = None

_BACKENDS = {"reference": _reference}
if _kernel is not None:
    _BACKENDS["compiled"] = _kernel

_default = "compiled" if _kernel is not None else "reference"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def default_backend() -> str:
    return _default


def set_default_backend(name: str) -> None:
    global _default
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _default = name


def integrate_span(prob: SpanProblem, backend: str | None = None) -> SpanResult:
    name = backend or _default
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    return _BACKENDS[name].integrate_span(prob)
