"""Backend selection for the numerical kernel.

The compiled extension ``clairaut._kernel`` is used when importable; setting
the environment variable ``CLAIRAUT_PURE_PYTHON=1`` forces the pure-Python
implementation.  Both expose the same ``Kernel`` class.
"""

import os

from . import _pykernel
from .tape import Tape

OK = _pykernel.OK
NO_CONVERGENCE = _pykernel.NO_CONVERGENCE
SINGULAR_JACOBIAN = _pykernel.SINGULAR_JACOBIAN
DOMAIN = _pykernel.DOMAIN
F_SINGULAR = _pykernel.F_SINGULAR

try:
    if os.environ.get("CLAIRAUT_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from ._kernel import Kernel as CompiledKernel
except ImportError:
    CompiledKernel = None

PythonKernel = _pykernel.Kernel
BACKEND = "cython" if CompiledKernel is not None else "python"


def available_backends():
    return ["cython", "python"] if CompiledKernel is not None else ["python"]


def kernel_class(backend=None):
    backend = backend or BACKEND
    if backend == "python":
        return PythonKernel
    if backend == "cython":
        if CompiledKernel is None:
            raise RuntimeError("compiled kernel is not available")
        return CompiledKernel
    raise ValueError(f"unknown backend {backend!r}")


def build_tapes(hess, split):
    """Tapes for one Lagrangian: the full derivative set and the Newton subset.

    Full outputs, in order: ``L``, ``dL/dv`` (n), ``dL/dq`` (n), ``W`` (n*n,
    row-major), ``d2L/dv^A dq^B`` (n*n, row-major).
    """
    n = hess.table.n
    inputs = hess.table.coordinates + hess.table.velocities
    full = [hess.lagrangian, *hess.gradient_v, *hess.gradient_q]
    full += [hess.matrix[a][b] for a in range(n) for b in range(n)]
    full += [hess.mixed[a][b] for a in range(n) for b in range(n)]
    reg = split.regular
    newton = [hess.gradient_v[i] for i in reg]
    newton += [hess.matrix[i][j] for i in reg for j in reg]
    consts = hess.table.parameters
    return Tape(full, inputs, consts), Tape(newton, inputs, consts)


def build_kernel(hess, split, tolerances, backend=None):
    full, newton = build_tapes(hess, split)
    cls = kernel_class(backend)
    return cls(
        full,
        newton,
        hess.table.n,
        list(split.regular),
        list(split.degenerate),
        tolerances.rank_rtol,
        tolerances.newton_tol,
        tolerances.newton_maxit,
    )
