"""M-spline and C-spline bases on [0, 1] and the CSGP action feature map.

An order-``k`` M-spline ``M_j`` is the B-spline ``B_j`` rescaled to integrate
to one, ``M_j = k B_j / (t_{j+k} - t_j)``. The C-spline ``C_j`` is its double
integral from 0. For ``k <= 2`` the second derivative of
``g(a) = sum_j C_j(a) b_j + b_{J-1} a + b_J`` is a nonnegative combination of
M-splines weighted by ``b_j``, so ``g`` is concave exactly when the first
``J - 2`` coefficients are nonpositive.

Both bases are held as :class:`scipy.interpolate.BSpline` objects with an
identity coefficient matrix; the C-spline layer is their exact piecewise
polynomial antiderivative.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from csgp.errors import DomainError

__all__ = [
    "SplineBasisSpec",
    "build_basis",
    "mspline_eval",
    "cspline_eval",
    "phi",
    "phi_matrix",
    "mspline_matrix",
    "second_derivative",
]


@dataclass(frozen=True)
class SplineBasisSpec:
    """Knot sequence and dimensions of a C-spline basis.

    ``knots`` is the full knot vector, boundary knots repeated ``order_k``
    times. ``num_mspline`` is the number of M-/C-spline functions and ``J``
    the total feature count (C-splines, then ``a``, then ``1``).
    """

    knots: tuple
    order_k: int
    num_mspline: int
    J: int

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        if self.order_k not in (1, 2):
            raise ValueError(f"order_k must be 1 or 2, got {self.order_k}")
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) < 0):
            raise ValueError("knots must be nondecreasing from 0 to 1")
        if self.num_mspline != len(t) - self.order_k:
            raise ValueError("num_mspline inconsistent with knot vector")
        if self.J != self.num_mspline + 2:
            raise ValueError("J must equal num_mspline + 2")

    @property
    def interior_knots(self):
        return np.asarray(self.knots[self.order_k:-self.order_k], dtype=float)

    @cached_property
    def _mspline(self):
        t = np.asarray(self.knots, dtype=float)
        k = self.order_k
        widths = t[k:k + self.num_mspline] - t[:self.num_mspline]
        # each M_j integrates to one
        coef = np.diag(k / widths)
        return BSpline(t, coef, k - 1, extrapolate=True)

    @cached_property
    def _cspline(self):
        return self._mspline.antiderivative(2)


def build_basis(num_interior_knots, order_k=2):
    """Uniform C-spline basis with ``num_interior_knots`` interior knots.

    The M-spline count is ``num_interior_knots + order_k``; ``order_k = 2``
    gives piecewise-linear M-splines and cubic C-splines.
    """
    if int(num_interior_knots) != num_interior_knots or num_interior_knots < 1:
        raise ValueError("num_interior_knots must be a positive integer")
    if order_k not in (1, 2):
        raise ValueError(
            f"order_k={order_k} is not supported: coefficient sign no longer "
            "characterises concavity for M-splines of order above 2"
        )
    l = int(num_interior_knots)
    interior = np.linspace(0.0, 1.0, l + 2)[1:-1]
    knots = (0.0,) * order_k + tuple(float(v) for v in interior) + (1.0,) * order_k
    return SplineBasisSpec(knots=knots, order_k=order_k, num_mspline=l + order_k, J=l + order_k + 2)


def _check_actions(a):
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"actions must lie in [0, 1], got {a!r}")
    return arr


def mspline_matrix(spec, a):
    """M-spline values, shape ``(len(a), num_mspline)``."""
    a = np.atleast_1d(_check_actions(a))
    M = spec._mspline(a)
    # tiny negatives from floating-point round-off
    return np.clip(M, 0.0, None)


def mspline_eval(spec, a):
    """``(M_1(a), ..., M_{num_mspline}(a))`` for a scalar action."""
    return mspline_matrix(spec, a)[0] if np.ndim(a) == 0 else mspline_matrix(spec, a)


def _cspline_matrix(spec, a):
    a = np.atleast_1d(_check_actions(a))
    return np.clip(spec._cspline(a), 0.0, None)


def cspline_eval(spec, a):
    """``(C_1(a), ..., C_{num_mspline}(a))`` in closed form."""
    C = _cspline_matrix(spec, a)
    return C[0] if np.ndim(a) == 0 else C


def phi_matrix(spec, a):
    """Feature rows ``(C_1(a), ..., C_{J-2}(a), a, 1)`` for each action, shape ``(n, J)``."""
    a = np.atleast_1d(_check_actions(a))
    out = np.empty((a.size, spec.J))
    out[:, :-2] = _cspline_matrix(spec, a)
    out[:, -2] = a
    out[:, -1] = 1.0
    return out


def phi(spec, a):
    """Feature vector of length ``J`` for a scalar action."""
    if np.ndim(a) != 0:
        raise ValueError("phi expects a scalar action; use phi_matrix for arrays")
    return phi_matrix(spec, a)[0]


def second_derivative(spec, coeffs, a):
    """``g''(a)`` for ``g = phi(a) @ coeffs``; linear and constant terms drop out."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != spec.J:
        raise ValueError(f"expected {spec.J} coefficients, got {coeffs.shape[-1]}")
    M = mspline_matrix(spec, a)
    out = M @ coeffs[..., :-2].T
    if np.ndim(a) == 0:
        return out[0]
    return out
