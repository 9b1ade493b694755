"""Linear mixed model for the biomarker trajectory.

The marginal Gaussian log-likelihood is maximized exactly: fixed effects
are profiled out by GLS and the variance parameters (log-Cholesky factor
of the random-effects covariance plus log residual variance) go through
L-BFGS-B with analytic gradients.  Everything per-subject is reduced to
q x q sufficient statistics up front, so likelihood evaluations do not
touch the raw measurements again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError, SingularDesignError, ValidationError
from .splines import SplineBasis, eval_basis

SIGMA2_FLOOR = 1e-10
# bounds on the scaled (D / sigma2) log-Cholesky: the lower diagonal bound
# floors variance ratios near 1e-6, which stops the slow crawl toward zero
# for absent components without disturbing non-degenerate estimates
_LOG_DIAG_BOUNDS = (-7.0, 6.0)
_OFFDIAG_BOUNDS = (-30.0, 30.0)


@dataclass(frozen=True)
class LmmSpec:
    """Model structure: fixed intercept + covariates + time spline;
    random intercept plus (optionally) the same time-spline columns."""

    covariates: tuple = ("sex_male", "age_std", "ckd", "nyha_high")
    time_basis: SplineBasis | None = None  # include_intercept=False basis
    random_time: bool = True

    @property
    def q(self):
        q = 1
        if self.random_time and self.time_basis is not None:
            q += self.time_basis.n_basis
        return q

    @property
    def coef_names(self):
        names = ["intercept", *self.covariates]
        if self.time_basis is not None:
            names += [f"cs(t)#{i + 1}" for i in range(self.time_basis.n_basis)]
        return tuple(names)

    def designs(self, subject, times):
        """Fixed and random design matrices for one subject."""
        times = np.asarray(times, dtype=float)
        n = times.size
        cols = [np.ones(n)]
        cols += [np.full(n, subject.covariate(c)) for c in self.covariates]
        if self.time_basis is not None:
            tb = eval_basis(self.time_basis, times)
            tb = tb.reshape(n, -1)
            cols.append(tb)
        X = np.column_stack(cols) if cols else np.ones((n, 1))
        if self.random_time and self.time_basis is not None:
            Z = np.column_stack([np.ones(n), tb])
        else:
            Z = np.ones((n, 1))
        return X, Z


def default_spec(cohort, covariates=("sex_male", "age_std", "ckd", "nyha_high")):
    """Spec with time-spline knots at the quartiles of the pooled measurement times."""
    times = np.concatenate([cohort.series[s.id].times for s in cohort.subjects])
    basis = SplineBasis.from_sample(times, include_intercept=False)
    return LmmSpec(covariates=tuple(covariates), time_basis=basis)


@dataclass(frozen=True)
class LmmFit:
    spec: LmmSpec
    beta: np.ndarray  # fixed effects, ordered as spec.coef_names
    coef_names: tuple
    chol_D: np.ndarray  # lower Cholesky factor of the random-effects covariance
    sigma2: float
    loglik: float
    fixed_cov: np.ndarray  # GLS covariance of the fixed effects
    n_subjects: int
    n_obs: int
    converged: bool
    grad_norm: float
    n_iter: int

    def __post_init__(self):
        for name in ("beta", "chol_D", "fixed_cov"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def D(self):
        return self.chol_D @ self.chol_D.T

    @property
    def q(self):
        return self.chol_D.shape[0]

    def coefficient(self, name):
        return float(self.beta[self.coef_names.index(name)])


class _Suffstats:
    """Stacked per-subject cross products; everything the likelihood needs."""

    def __init__(self, spec, cohort):
        Gs, ZXs, Zys, XXs, Xys, yys, ns = [], [], [], [], [], [], []
        for s in cohort.subjects:
            ser = cohort.series[s.id]
            X, Z = spec.designs(s, ser.times)
            y = ser.values
            Gs.append(Z.T @ Z)
            ZXs.append(Z.T @ X)
            Zys.append(Z.T @ y)
            XXs.append(X.T @ X)
            Xys.append(X.T @ y)
            yys.append(float(y @ y))
            ns.append(len(y))
        self.G = np.stack(Gs)
        self.ZX = np.stack(ZXs)
        self.Zy = np.stack(Zys)
        self.XX = np.stack(XXs)
        self.Xy = np.stack(Xys)
        self.yy = np.asarray(yys)
        self.n_i = np.asarray(ns, dtype=float)
        self.N = float(self.n_i.sum())
        self.q = self.G.shape[1]
        self.p = self.ZX.shape[2]


def _unpack(theta, q):
    """Cholesky factor of the scaled covariance D / sigma2 from the parameter vector."""
    L = np.zeros((q, q))
    rows, cols = np.tril_indices(q)
    L[rows, cols] = theta
    diag = np.arange(q)
    L[diag, diag] = np.exp(np.diagonal(L))
    return L


def _profile(ss, L):
    """GLS fixed effects and closed-form residual variance at scaled factor ``L``.

    With D = sigma2 * L L^T both beta and sigma2 profile out exactly, so the
    optimizer only sees the scaled Cholesky parameters.
    """
    q = ss.q
    A = L.T[None] @ ss.G @ L[None] + np.eye(q)[None]
    chol = np.linalg.cholesky(A)
    logdetA = 2.0 * float(np.log(np.diagonal(chol, axis1=1, axis2=2)).sum())
    P = L.T[None] @ ss.ZX  # (n, q, p)
    tZy = np.einsum("ba,nb->na", L, ss.Zy)  # L^T Z^T y
    AiP = np.linalg.solve(A, P)
    Aity = np.linalg.solve(A, tZy[..., None])[..., 0]
    Sxx = (ss.XX - np.einsum("nqa,nqb->nab", P, AiP)).sum(axis=0)
    Sxy = (ss.Xy - np.einsum("nqa,nq->na", AiP, tZy)).sum(axis=0)
    Syy = float((ss.yy - np.einsum("nq,nq->n", tZy, Aity)).sum())
    beta, *_ = np.linalg.lstsq(Sxx, Sxy, rcond=None)
    quad = max(Syy - 2.0 * beta @ Sxy + beta @ Sxx @ beta, 0.0)
    sigma2 = max(quad / ss.N, SIGMA2_FLOOR)
    loglik = -0.5 * (ss.N * math.log(sigma2) + logdetA + quad / sigma2 + ss.N * math.log(2.0 * math.pi))
    return beta, sigma2, loglik, A, Sxx


def _value_and_grad(theta, ss):
    q = ss.q
    L = _unpack(theta, q)
    beta, sigma2, loglik, A, _ = _profile(ss, L)

    # per-subject residual projections in the scaled metric W = Z (D/s2) Z^T + I
    u = ss.Zy - np.einsum("nqp,p->nq", ss.ZX, beta)  # Z^T r
    v = np.einsum("ba,nb->na", L, u)
    w = np.linalg.solve(A, v[..., None])[..., 0]
    QL = ss.G @ L[None]
    g = u - np.einsum("nqa,na->nq", QL, w)  # Z^T W^-1 r
    S = ss.G - QL @ np.linalg.solve(A, np.swapaxes(QL, 1, 2))  # Z^T W^-1 Z

    dL = -np.einsum("nab,bc->ac", S, L) + np.einsum("na,nb,bc->ac", g, g, L) / sigma2
    rows, cols = np.tril_indices(q)
    grad_L = dL[rows, cols]
    diag_positions = np.nonzero(rows == cols)[0]
    grad_L[diag_positions] *= L[np.arange(q), np.arange(q)]
    return -loglik, -grad_L


def fit_lmm(cohort, spec, max_iter=500):
    """Maximum-likelihood fit; raises ConvergenceError with diagnostics on failure."""
    if spec.time_basis is None and spec.random_time:
        spec = LmmSpec(spec.covariates, None, False)
    ss = _Suffstats(spec, cohort)
    if ss.N < ss.p:
        raise SingularDesignError("fewer observations than fixed-effect parameters")
    if len(cohort.subjects) < 2:
        raise ValidationError("mixed model needs at least two subjects")

    # start from the scaled identity: random effects worth half the OLS residual variance
    q = ss.q
    theta0 = np.zeros(q * (q + 1) // 2)
    rows, cols = np.tril_indices(q)
    theta0[np.nonzero(rows == cols)[0]] = 0.5 * math.log(0.5)

    lo_diag, hi_diag = _LOG_DIAG_BOUNDS
    bounds = [(lo_diag, hi_diag) if r == c else _OFFDIAG_BOUNDS for r, c in zip(rows, cols)]

    history = []

    def track(xk):
        history.append(-_value_and_grad(xk, ss)[0])

    res = minimize(
        _value_and_grad,
        theta0,
        args=(ss,),
        method="L-BFGS-B",
        jac=True,
        bounds=bounds,
        callback=track,
        options={"maxiter": max_iter, "ftol": 1e-9, "gtol": 1e-5},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    if not res.success:
        raise ConvergenceError(
            f"mixed model did not converge: {res.message}",
            n_iter=int(res.nit),
            grad_norm=grad_norm,
            loglik=-float(res.fun),
            history=history,
        )
    L_scaled = _unpack(res.x, q)
    beta, sigma2, loglik, _, Sxx = _profile(ss, L_scaled)
    L = math.sqrt(sigma2) * L_scaled
    fixed_cov = np.linalg.pinv(Sxx) * sigma2
    return LmmFit(
        spec=spec,
        beta=beta,
        coef_names=spec.coef_names,
        chol_D=L,
        sigma2=float(sigma2),
        loglik=float(loglik),
        fixed_cov=fixed_cov,
        n_subjects=len(cohort.subjects),
        n_obs=int(ss.N),
        converged=True,
        grad_norm=grad_norm,
        n_iter=int(res.nit),
    )


def marginal_loglik(fit, cohort):
    """Marginal log-likelihood of ``cohort`` at the fitted variance structure
    (fixed effects and the residual scale re-profile on the given data)."""
    ss = _Suffstats(fit.spec, cohort)
    value, _ = _value_and_grad(_pack(fit), ss)
    return -float(value)


def _pack(fit):
    q = fit.q
    rows, cols = np.tril_indices(q)
    L = fit.chol_D / math.sqrt(fit.sigma2)
    vals = L[rows, cols].astype(float)
    diag_positions = np.nonzero(rows == cols)[0]
    vals[diag_positions] = np.log(np.maximum(np.diagonal(L), 1e-300))
    return vals


def empirical_bayes(fit, subject, times, values, h=None):
    """Posterior-mean random effects from measurements taken at or before ``h``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if h is not None:
        keep = times <= h
        times, values = times[keep], values[keep]
    q = fit.q
    if times.size == 0:
        return np.zeros(q)
    X, Z = fit.spec.designs(subject, times)
    r = values - X @ fit.beta
    D = fit.D
    G = Z.T @ Z
    u = Z.T @ r
    return np.linalg.solve(D @ G + fit.sigma2 * np.eye(q), D @ u)


def predict_mean(fit, b, subject, t):
    """Subject-level mean biomarker value at time(s) ``t`` (no noise)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    X, Z = fit.spec.designs(subject, t_arr)
    out = X @ fit.beta + Z @ np.asarray(b, dtype=float)
    return float(out[0]) if np.isscalar(t) else out


def residuals(fit, cohort):
    """De-trended series per subject, using each subject's full-series
    posterior random effects; y = fitted + residual exactly."""
    out = {}
    for s in cohort.subjects:
        ser = cohort.series[s.id]
        b = empirical_bayes(fit, s, ser.times, ser.values)
        fitted = predict_mean(fit, b, s, ser.times)
        out[s.id] = (ser.times.copy(), ser.values - fitted)
    return out
