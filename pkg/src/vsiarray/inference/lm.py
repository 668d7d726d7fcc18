"""Levenberg-Marquardt nonlinear least squares."""

from dataclasses import dataclass, field

import numpy as np

XTOL = 1e-10
GTOL = 1e-10
# a fit is reported converged only if the residual is (numerically) orthogonal
# to the Jacobian columns at the returned point
CONVERGED_GRAD = 1e-6
MAX_COND = 1e12


@dataclass(frozen=True)
class FitResult:
    names: tuple
    values: np.ndarray
    sigma: np.ndarray
    rss: float
    iterations: int
    converged: bool
    grad_norm: float
    n_data: int
    flags: tuple = ()
    extra: dict = field(default_factory=dict)
    covariance: np.ndarray = None

    @property
    def params(self):
        return dict(zip(self.names, (float(v) for v in self.values)))

    @property
    def errors(self):
        return dict(zip(self.names, (float(s) for s in self.sigma)))

    def __getitem__(self, name):
        if name in self.names:
            return float(self.values[self.names.index(name)])
        return self.extra[name]

    def sigma_of(self, name):
        if name in self.names:
            return float(self.sigma[self.names.index(name)])
        return self.extra[name + "_sigma"]

    def to_dict(self):
        params = self.params
        sigma = self.errors
        for key, val in self.extra.items():
            if key.endswith("_sigma"):
                sigma[key[: -len("_sigma")]] = _jsonable(val)
            else:
                params[key] = _jsonable(val)
        return {
            "params": params,
            "sigma": sigma,
            "rss": float(self.rss),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "flags": list(self.flags),
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def numeric_jacobian(model, x, p, rel_step=1e-6):
    """Central differences, step scaled to each parameter."""
    p = np.asarray(p, dtype=np.float64)
    cols = []
    for j in range(p.size):
        h = rel_step * max(abs(p[j]), 1e-3)
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(model(x, up)) - np.asarray(model(x, dn))) / (2 * h))
    return np.column_stack(cols)


def _covariance(jw, scale):
    """(J^T J)^-1 * rss/dof with column scaling; None if rank deficient."""
    norms = np.linalg.norm(jw, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(jw)):
        return None
    js = jw / norms
    s = np.linalg.svd(js, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > MAX_COND:
        return None
    cov = np.linalg.inv(js.T @ js) / np.outer(norms, norms)
    return cov * scale


def least_squares_fit(
    model, x, y, p0, sigma=None, jac=None, names=None, max_iter=200, xtol=XTOL, gtol=GTOL, absolute_sigma=False
):
    """Minimise sum(((y - model(x, p)) / sigma)**2) from ``p0``.

    ``model(x, p)`` returns predictions, ``jac(x, p)`` the (n, k) matrix of
    derivatives (central differences when omitted). Iteration stops when the
    relative step or the scaled gradient falls below tolerance, or after
    ``max_iter`` steps. A rank-deficient Jacobian stops the fit and returns
    the best point found with ``converged=False``.

    The covariance is (J^T J)^-1 scaled by the residual variance rss/(n-k),
    or unscaled when ``absolute_sigma`` says ``sigma`` is the true noise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    k = p.size
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(k))
    if y.size < k:
        raise ValueError(f"need at least {k} data points, got {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise ValueError("data and initial guess must be finite")
    if sigma is None:
        w = np.ones_like(y)
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), y.shape)
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValueError("sigma must be positive and finite")
        w = 1.0 / sigma
    jac = jac or (lambda xx, pp: numeric_jacobian(model, xx, pp))

    def resid(pp):
        return (y - np.asarray(model(x, pp), dtype=np.float64)) * w

    r = resid(p)
    rss = float(r @ r)
    # residuals at rounding level of the data count as an exact fit
    exact_rn = 64 * np.finfo(np.float64).eps * float(np.linalg.norm(y * w))
    mu = 1e-3
    flags = []
    stopped = False
    singular = False
    it = 0
    gcos = np.inf
    for it in range(1, max_iter + 1):
        jw = np.asarray(jac(x, p), dtype=np.float64) * w[:, None]
        g = jw.T @ r
        cn = np.linalg.norm(jw, axis=0)
        rn = np.sqrt(rss)
        if np.any(cn == 0):
            singular = True
            break
        gcos = float(np.max(np.abs(g) / cn) / rn) if rn > exact_rn else 0.0
        if gcos < gtol:
            stopped = True
            break
        a = jw.T @ jw
        d = np.diag(a).copy()
        improved = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(a + mu * np.diag(d), g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            p_new = p + step
            r_new = resid(p_new)
            # a wild trial step may overflow the sum of squares; inf rejects it
            with np.errstate(over="ignore"):
                rss_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if rss_new <= rss:
                improved = True
                break
            mu *= 4
        if not improved:
            # no descent direction left: either at the minimum or degenerate
            stopped = True
            break
        small = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
        p, r, rss = p_new, r_new, rss_new
        mu = max(mu / 3, 1e-12)
        if small or rss == 0:
            stopped = True
            break

    jw = np.asarray(jac(x, p), dtype=np.float64) * w[:, None]
    cn = np.linalg.norm(jw, axis=0)
    rn = np.sqrt(rss)
    if rn > exact_rn and np.all(cn > 0):
        gcos = float(np.max(np.abs(jw.T @ r) / cn) / rn)
    elif rn <= exact_rn:
        gcos = 0.0
    scale = 1.0 if absolute_sigma else rss / max(y.size - k, 1)
    cov = None if singular else _covariance(jw, scale)
    if cov is None:
        singular = True
        sig = np.full(k, np.inf)
        flags.append("singular_jacobian")
    else:
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    converged = stopped and not singular and gcos <= CONVERGED_GRAD
    if not converged and not singular:
        flags.append("not_converged")
    return FitResult(names, p, sig, rss, it, bool(converged), gcos, int(y.size), tuple(flags), {}, cov)
