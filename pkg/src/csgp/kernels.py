"""Base context kernels and the composite CSGP covariance.

The CSGP reward prior places independent GP priors on the spline coefficient
processes ``beta_j(x)`` and induces

    k_f((a, x), (a', x')) = sum_j phi_j(a) k_j(x, x') phi_j(a')
    cov(f(a, x), beta_j(x')) = phi_j(a) k_j(x, x')

Points are passed as 2-D arrays whose first column is the action and whose
remaining columns are the context, so the same helpers serve the joint
``(a, x)`` kernel of the plain GP baselines.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kv

from csgp._linalg import chol_logdet, chol_solve, jitter_cholesky
from csgp.errors import DomainError
from csgp.splines import SplineBasisSpec, build_basis, phi_matrix

__all__ = [
    "BaseKernelSpec",
    "FitBounds",
    "CSGPKernel",
    "make_csgp_kernel",
    "base_kernel_eval",
    "base_gram",
    "kf",
    "kf_beta",
    "gram",
    "csgp_cross",
    "log_marginal_likelihood",
    "fit_hyperparams",
    "fit_base_hyperparams",
]

FAMILIES = ("gaussian", "matern")


@dataclass(frozen=True)
class BaseKernelSpec:
    """Isotropic stationary kernel on contexts (or on joint action-context points).

    ``mean`` is a constant prior mean, used only when the spec is the whole
    model (joint GP); inside a CSGP kernel the coefficient means live on
    :class:`CSGPKernel`.
    """

    family: str = "gaussian"
    lengthscale: float = 1.0
    variance: float = 1.0
    matern_nu: float = 2.5
    mean: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.lengthscale > 0 or not self.variance > 0:
            raise ValueError("lengthscale and variance must be positive")
        if self.family == "matern" and not self.matern_nu > 2:
            raise ValueError("matern_nu must exceed 2")

    def to_dict(self):
        return {
            "family": self.family,
            "lengthscale": float(self.lengthscale),
            "variance": float(self.variance),
            "matern_nu": float(self.matern_nu),
            "mean": float(self.mean),
        }


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X.reshape(1, -1) if X.ndim == 1 else X


def _correlation(spec, r):
    """Unit-variance correlation as a function of distance ``r``."""
    if spec.family == "gaussian":
        return np.exp(-0.5 * (r / spec.lengthscale) ** 2)
    nu = spec.matern_nu
    if nu == 2.5:
        s = math.sqrt(5.0) * r / spec.lengthscale
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    s = math.sqrt(2.0 * nu) * r / spec.lengthscale
    out = np.ones_like(s)
    pos = s > 0
    sp = s[pos]
    out[pos] = np.exp((1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(sp)) * kv(nu, sp)
    return out


def base_gram(spec, X, Y=None):
    """Kernel matrix between the rows of ``X`` and ``Y``."""
    X = _as_2d(X)
    Y = X if Y is None else _as_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.family == "gaussian":
        d2 = cdist(X, Y, metric="sqeuclidean")
        return spec.variance * np.exp(-0.5 * d2 / spec.lengthscale**2)
    return spec.variance * _correlation(spec, cdist(X, Y))


def base_kernel_eval(spec, x, x_prime):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    return float(base_gram(spec, x[None, :], x_prime[None, :])[0, 0])


@dataclass(frozen=True)
class CSGPKernel:
    """Spline basis plus one context kernel per coefficient process.

    ``mean_fns`` holds, per coefficient, ``None`` (zero mean), a constant, or
    a callable mapping an ``(n, d)`` context array to ``n`` values.
    """

    basis: SplineBasisSpec
    components: tuple
    mean_fns: tuple = None
    tied: bool = True

    def __post_init__(self):
        if len(self.components) != self.basis.J:
            raise ValueError(f"need {self.basis.J} component kernels, got {len(self.components)}")
        if self.mean_fns is not None and len(self.mean_fns) != self.basis.J:
            raise ValueError("mean_fns must have one entry per coefficient")

    @property
    def J(self):
        return self.basis.J

    def to_dict(self):
        c0 = self.components[0]
        out = {"family": c0.family, "matern_nu": float(c0.matern_nu), "tied": self.tied}
        if self.tied:
            out["lengthscale"] = float(c0.lengthscale)
            out["variance"] = float(c0.variance)
        else:
            out["lengthscale"] = [float(c.lengthscale) for c in self.components]
            out["variance"] = [float(c.variance) for c in self.components]
        if self.mean_fns is not None and all(m is None or not callable(m) for m in self.mean_fns):
            out["mean"] = [0.0 if m is None else float(m) for m in self.mean_fns]
        return out

    def prior_variance_sum(self):
        """``sum_j k_j(x, x)``; a bound on the prior variance for stationary kernels."""
        return float(sum(c.variance for c in self.components))


def make_csgp_kernel(basis=None, family="gaussian", lengthscale=1.0, variance=1.0,
                     matern_nu=2.5, tied=True, mean_fns=None):
    basis = build_basis(5, 2) if basis is None else basis
    comp = BaseKernelSpec(family, lengthscale, variance, matern_nu)
    return CSGPKernel(basis, (comp,) * basis.J, mean_fns, tied)


def _split(points):
    P = _as_2d(points)
    return P[:, 0], P[:, 1:]


def _component_grams(kernel, X1, X2):
    if kernel.tied:
        K = base_gram(kernel.components[0], X1, X2)
        return [K] * kernel.J
    return [base_gram(c, X1, X2) for c in kernel.components]


def csgp_cross(kernel, P1, P2=None, *, features=None):
    """``k_f`` between the rows of two point arrays (columns: action, context...).

    ``features`` may carry precomputed ``(Phi1, Phi2)`` to skip spline evaluation.
    """
    a1, X1 = _split(P1)
    if P2 is None:
        a2, X2 = a1, X1
    else:
        a2, X2 = _split(P2)
    if features is None:
        Phi1 = phi_matrix(kernel.basis, a1)
        Phi2 = Phi1 if P2 is None else phi_matrix(kernel.basis, a2)
    else:
        Phi1, Phi2 = features
    if kernel.tied:
        return (Phi1 @ Phi2.T) * base_gram(kernel.components[0], X1, X2)
    out = np.zeros((a1.size, a2.size))
    for j, K in enumerate(_component_grams(kernel, X1, X2)):
        out += np.outer(Phi1[:, j], Phi2[:, j]) * K
    return out


def _point(a, x):
    return np.concatenate([[float(a)], np.atleast_1d(np.asarray(x, dtype=float))])


def kf(kernel, p, q):
    """``k_f((a, x), (a', x'))`` for two ``(a, x)`` pairs."""
    (a, x), (a2, x2) = p, q
    for v in (a, a2):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"action {v} outside [0, 1]")
    return float(csgp_cross(kernel, _point(a, x)[None, :], _point(a2, x2)[None, :])[0, 0])


def kf_beta(kernel, p, j, x_prime):
    """``cov(f(a, x), beta_j(x'))`` with a zero-based coefficient index ``j``."""
    a, x = p
    if not 0 <= j < kernel.J:
        raise IndexError(f"coefficient index {j} out of range for J={kernel.J}")
    ph = phi_matrix(kernel.basis, a)[0, j]
    return float(ph * base_kernel_eval(kernel.components[j], x, x_prime))


def gram(kernel, points):
    """CSGP Gram matrix over a list of ``(a, x)`` pairs or an ``(n, 1 + d)`` array."""
    P = _points_array(points)
    if P.shape[0] == 0:
        raise ValueError("gram needs at least one point")
    return csgp_cross(kernel, P)


def _points_array(points):
    if isinstance(points, np.ndarray) and points.ndim == 2:
        return points.astype(float)
    return np.array([_point(a, x) for a, x in points])


def prior_mean_beta(kernel, X):
    """Prior coefficient means at contexts ``X``, shape ``(n, J)``."""
    X = _as_2d(X)
    out = np.zeros((X.shape[0], kernel.J))
    if kernel.mean_fns is None:
        return out
    for j, m in enumerate(kernel.mean_fns):
        if m is None:
            continue
        out[:, j] = m(X) if callable(m) else float(m)
    return out


def prior_mean_f(kernel, P):
    a, X = _split(P)
    if kernel.mean_fns is None:
        return np.zeros(a.size)
    return np.sum(phi_matrix(kernel.basis, a) * prior_mean_beta(kernel, X), axis=1)


# ---------------------------------------------------------------------------
# marginal likelihood and hyperparameter fitting


def _lml_from_cov(K, y, noise_var):
    n = y.size
    L, _ = jitter_cholesky(K + noise_var * np.eye(n))
    alpha = chol_solve(L, y)
    return -0.5 * float(y @ alpha) - 0.5 * chol_logdet(L) - 0.5 * n * math.log(2 * math.pi), L, alpha


def log_marginal_likelihood(kernel, noise_var, history):
    """GP evidence of the observed rewards under the CSGP prior (or a base kernel on ``(a, x)``)."""
    P, y = history.points, history.rewards
    if y.size == 0:
        raise ValueError("history is empty")
    if isinstance(kernel, BaseKernelSpec):
        K, mu = base_gram(kernel, P), np.full(y.size, float(kernel.mean))
    else:
        K, mu = csgp_cross(kernel, P), prior_mean_f(kernel, P)
    return _lml_from_cov(K, y - mu, noise_var)[0]


def _grad_terms(spec, D2):
    """Correlation matrix and its derivative w.r.t. log-lengthscale."""
    if spec.family == "gaussian":
        R = np.exp(-0.5 * D2 / spec.lengthscale**2)
        return R, R * D2 / spec.lengthscale**2
    r = np.sqrt(D2)
    R = _correlation(spec, r)
    if spec.matern_nu == 2.5:
        s = math.sqrt(5.0) * r / spec.lengthscale
        # d/dlog(l) of (1 + s + s^2/3) e^{-s} with ds/dlog(l) = -s
        return R, (s * s / 3.0) * (1.0 + s) * np.exp(-s)
    h = 1e-6
    R2 = _correlation(replace(spec, lengthscale=spec.lengthscale * math.exp(h)), r)
    return R, (R2 - R) / h


class _Objective:
    """Negative log evidence and gradient over log-hyperparameters.

    ``blocks`` lists (design matrix of shape (n, n), component index set) pairs;
    each block owns one (log lengthscale, log variance) pair. With a mean
    design ``H`` the constant mean weights are profiled out by generalised
    least squares; the gradient needs no extra term because the evidence is
    stationary in the weights at their optimum.
    """

    def __init__(self, blocks, template, D2, y, noise_var, H=None):
        self.blocks = blocks
        self.template = template
        self.D2 = D2
        self.y = y
        self.noise_var = noise_var
        self.H = H
        self.nfev = 0

    def specs(self, theta):
        return [
            replace(self.template, lengthscale=math.exp(theta[2 * b]), variance=math.exp(theta[2 * b + 1]))
            for b in range(len(self.blocks))
        ]

    def __call__(self, theta):
        self.nfev += 1
        n = self.y.size
        K = np.zeros((n, n))
        parts = []
        for (F, _), spec in zip(self.blocks, self.specs(theta)):
            R, dR = _grad_terms(spec, self.D2)
            parts.append((F, R, dR, spec.variance))
            K += spec.variance * F * R
        try:
            L, _ = jitter_cholesky(K + self.noise_var * np.eye(n))
            r = self.y if self.H is None else self.y - self.H @ self._gls(L)
            alpha = chol_solve(L, r)
            lml = -0.5 * float(r @ alpha) - 0.5 * chol_logdet(L) - 0.5 * n * math.log(2 * math.pi)
        except Exception:
            return 1e25, np.zeros_like(theta)
        W = np.outer(alpha, alpha) - chol_solve(L, np.eye(n))
        grad = np.empty_like(theta)
        for b, (F, R, dR, v) in enumerate(parts):
            grad[2 * b] = 0.5 * np.sum(W * (v * F * dR))
            grad[2 * b + 1] = 0.5 * np.sum(W * (v * F * R))
        return -lml, -grad

    def _gls(self, L):
        KiH = chol_solve(L, self.H)
        A = self.H.T @ KiH
        ridge = 1e-10 * max(1.0, float(np.trace(A)) / A.shape[0])
        return np.linalg.solve(A + ridge * np.eye(A.shape[0]), KiH.T @ self.y)

    def weights(self, theta):
        """GLS mean weights at log-hyperparameters ``theta``."""
        n = self.y.size
        K = sum(spec.variance * F * _grad_terms(spec, self.D2)[0]
                for (F, _), spec in zip(self.blocks, self.specs(theta)))
        return self._gls(jitter_cholesky(K + self.noise_var * np.eye(n))[0])


@dataclass(frozen=True)
class FitBounds:
    """Box for the evidence search, in natural (not log) units."""

    lengthscale: tuple = (1e-2, 1e2)
    variance: tuple = (1e-4, 1e5)

    def __post_init__(self):
        for lo, hi in (self.lengthscale, self.variance):
            if not 0 < lo <= hi:
                raise ValueError("fit bounds must satisfy 0 < lo <= hi")

    def log_box(self, n_pairs):
        pair = [tuple(math.log(v) for v in self.lengthscale), tuple(math.log(v) for v in self.variance)]
        return pair * n_pairs


def _optimize(obj, starts, budget, rng, bounds, n_random=2):
    """L-BFGS-B from each start plus ``n_random`` log-uniform draws in the box.

    Starts are tried in order until the evaluation budget runs out; the first
    entry is the reference point whose value the result must not undercut.
    """
    box = bounds.log_box(starts[0].size // 2)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    starts = [np.clip(s, lo, hi) for s in starts]
    starts += [rng.uniform(lo, hi) for _ in range(n_random)]
    best, best_val = starts[0], obj(starts[0])[0]
    for start in starts:
        remaining = budget - obj.nfev
        if remaining <= 0:
            break
        try:
            res = minimize(obj, start, jac=True, method="L-BFGS-B", bounds=box,
                           options={"maxfun": remaining, "maxiter": remaining})
        except Exception:
            continue
        if np.all(np.isfinite(res.x)) and res.fun < best_val:
            best_val, best = float(res.fun), res.x
    return best, best_val


def _theta(specs):
    return np.array([v for c in specs for v in (math.log(c.lengthscale), math.log(c.variance))])


def fit_hyperparams(kernel, noise_var, history, budget=60, seed=0, bounds=None, extra_starts=(),
                    learn_mean=False):
    """Maximise the evidence over log lengthscales and variances.

    Tied kernels optimise one pair; untied kernels one pair per coefficient.
    The search starts from ``kernel``, then from each kernel in
    ``extra_starts``, then from random points in ``bounds``. The result is
    accepted only if its evidence is no worse than the input's, and any
    optimiser failure returns the input kernel.

    With ``learn_mean`` each coefficient gets a constant prior mean, set to
    its generalised least squares estimate and profiled out of the search.
    """
    if budget <= 0 or len(history) < 2:
        return kernel
    P, y = history.points, history.rewards
    a, X = _split(P)
    Phi = phi_matrix(kernel.basis, a)
    if not learn_mean:
        y = y - prior_mean_f(kernel, P)
    D2 = cdist(X, X, metric="sqeuclidean")
    if kernel.tied:
        blocks = [(Phi @ Phi.T, None)]
        comps = [kernel.components[0]]
    else:
        blocks = [(np.outer(Phi[:, j], Phi[:, j]), j) for j in range(kernel.J)]
        comps = list(kernel.components)
    theta0 = _theta(comps)
    starts = [theta0] + [_theta(k.components[:1] if kernel.tied else k.components) for k in extra_starts]
    obj = _Objective(blocks, comps[0], D2, y, noise_var, Phi if learn_mean else None)
    best = _search(obj, theta0, starts, budget, seed, bounds, keep_start=learn_mean)
    if best is None:
        return kernel
    specs = obj.specs(best)
    new = replace(kernel, components=tuple(specs * kernel.J) if kernel.tied else tuple(specs))
    if learn_mean:
        new = replace(new, mean_fns=tuple(float(m) for m in obj.weights(best)))
    if log_marginal_likelihood(new, noise_var, history) < log_marginal_likelihood(kernel, noise_var, history):
        return kernel
    return new


def _search(obj, theta0, starts, budget, seed, bounds, keep_start):
    # None means "keep the input"; keep_start returns theta0 instead so that
    # profiled mean weights are still refreshed
    try:
        start_val, _ = obj(theta0)
        best, best_val = _optimize(obj, starts, budget, np.random.default_rng(seed), bounds or FitBounds())
    except Exception:
        return theta0 if keep_start else None
    if not best_val <= start_val:
        return theta0 if keep_start else None
    return best


def fit_base_hyperparams(spec, noise_var, history, budget=60, seed=0, bounds=None, extra_starts=(),
                         learn_mean=False):
    """Evidence maximisation for a single kernel on joint ``(a, x)`` points.

    ``learn_mean`` profiles a constant prior mean as in :func:`fit_hyperparams`.
    """
    if budget <= 0 or len(history) < 2:
        return spec
    P, y = history.points, history.rewards
    n = y.size
    H = np.ones((n, 1)) if learn_mean else None
    if not learn_mean:
        y = y - spec.mean
    obj = _Objective([(np.ones((n, n)), None)], spec, cdist(P, P, metric="sqeuclidean"), y, noise_var, H)
    theta0 = _theta([spec])
    starts = [theta0] + [_theta([k]) for k in extra_starts]
    best = _search(obj, theta0, starts, budget, seed, bounds, keep_start=learn_mean)
    if best is None:
        return spec
    new = obj.specs(best)[0]
    if learn_mean:
        new = replace(new, mean=float(obj.weights(best)[0]))
    return new
