"""Gibbs sampler for the split-shrinkage horseshoe linear model.

Model (rules ``X_R`` with coefficients ``a``, linear terms ``X_L`` with
coefficients ``b``)::

    y        ~ N(X_R a + X_L b, sigma2 I)
    a_k      ~ N(0, lambda_k^2 A_k^2 tau^2 tau_R^2 sigma2)
    b_j      ~ N(0, gamma_j^2 s_j^2 tau^2 tau_L^2 sigma2)
    lambda_k, gamma_j, tau, tau_L, tau_R ~ C+(0, 1)
    p(sigma2) ~ 1 / sigma2

Every half-Cauchy scale is drawn through its inverse-gamma auxiliary pair,
so each full conditional is inverse-gamma.  ``s_j`` is an optional
per-linear-term relaxation multiplier (1 by default).  The intercept is
handled by centering ``y`` and every column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .dataset import quantile

logger = logging.getLogger(__name__)

RATE_FLOOR = 1e-300


class ChainDivergenceError(RuntimeError):
    """A Gibbs draw became non-finite or non-positive."""

    def __init__(self, iteration, what):
        super().__init__(f"chain diverged at iteration {iteration}: {what}")
        self.iteration = iteration


@dataclass(frozen=True)
class GibbsConfig:
    total_iters: int = 22000
    burn_in: int = 2000
    seed: int = 0
    linear_scale: float = 1.0
    method: str = "auto"  # "auto", "cholesky" or "auxiliary"

    def __post_init__(self):
        if not (self.total_iters > self.burn_in >= 0):
            raise ValueError("need total_iters > burn_in >= 0")
        if self.method not in ("auto", "cholesky", "auxiliary"):
            raise ValueError(f"unknown coefficient sampler {self.method!r}")


FAST_PROFILE = {"total_iters": 2000, "burn_in": 500}


@dataclass(frozen=True)
class DesignMatrices:
    """Rule matrix, linear-term matrix, outcome and rule prior scales."""

    X_R: np.ndarray
    X_L: np.ndarray
    y: np.ndarray
    rule_scales: np.ndarray = None

    def __post_init__(self):
        XR = np.asarray(self.X_R, dtype=float)
        XL = np.asarray(self.X_L, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if XR.ndim != 2 or XL.ndim != 2 or XR.shape[0] != n or XL.shape[0] != n:
            raise ValueError("design matrices must be 2-d with one row per outcome")
        if XR.shape[1] + XL.shape[1] < 1:
            raise ValueError("need at least one rule or linear term")
        if not np.isin(XR, (0.0, 1.0)).all():
            raise ValueError("rule matrix entries must be 0 or 1")
        scales = np.ones(XR.shape[1]) if self.rule_scales is None else np.asarray(self.rule_scales, dtype=float)
        if scales.shape != (XR.shape[1],) or not (scales > 0).all():
            raise ValueError("need one positive scale per rule")
        object.__setattr__(self, "X_R", XR)
        object.__setattr__(self, "X_L", XL)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "rule_scales", scales)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def q(self):
        return self.X_R.shape[1]

    @property
    def p(self):
        return self.X_L.shape[1]

    @property
    def y_centered(self):
        return self.y - self.y.mean()


@dataclass
class GibbsState:
    a: np.ndarray
    b: np.ndarray
    sigma2: float
    tau2: float
    tau_L2: float
    tau_R2: float
    lambda2: np.ndarray
    gamma2: np.ndarray
    xi: float
    xi_L: float
    xi_R: float
    eta: np.ndarray
    nu: np.ndarray

    @classmethod
    def initial(cls, q, p, sigma2):
        return cls(
            a=np.zeros(q), b=np.zeros(p), sigma2=sigma2,
            tau2=1.0, tau_L2=1.0, tau_R2=1.0,
            lambda2=np.ones(q), gamma2=np.ones(p),
            xi=1.0, xi_L=1.0, xi_R=1.0, eta=np.ones(q), nu=np.ones(p),
        )

    def check(self, iteration):
        for name in ("sigma2", "tau2", "tau_L2", "tau_R2", "xi", "xi_L", "xi_R"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ChainDivergenceError(iteration, f"{name}={v}")
        for name in ("lambda2", "gamma2", "eta", "nu"):
            v = getattr(self, name)
            if not (np.isfinite(v).all() and (v > 0).all()):
                raise ChainDivergenceError(iteration, f"non-positive {name}")
        if not (np.isfinite(self.a).all() and np.isfinite(self.b).all()):
            raise ChainDivergenceError(iteration, "non-finite coefficient")


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained draws of a single chain.

    ``a`` is ``(draws, q)``, ``b`` is ``(draws, p)``; scale columns hold
    ``tau``, ``tau_L`` and ``tau_R`` (not squared).  ``y_mean`` and the
    column means are what the intercept ``a0 = y_mean - a.rmean - b.xmean``
    is rebuilt from.
    """

    a: np.ndarray
    b: np.ndarray
    sigma2: np.ndarray
    tau: np.ndarray
    tau_L: np.ndarray
    tau_R: np.ndarray
    total_iters: int
    burn_in: int
    seed: int
    y_mean: float = 0.0
    rule_means: np.ndarray = None
    linear_means: np.ndarray = None
    lambda2: np.ndarray = field(default=None, repr=False)
    gamma2: np.ndarray = field(default=None, repr=False)

    @property
    def n_draws(self):
        return self.sigma2.shape[0]

    @property
    def intercept(self):
        rm = np.zeros(self.a.shape[1]) if self.rule_means is None else self.rule_means
        lm = np.zeros(self.b.shape[1]) if self.linear_means is None else self.linear_means
        return self.y_mean - self.a @ rm - self.b @ lm

    def predict(self, X_R, X_L):
        """Per-draw predictions, shape ``(draws, n)``."""
        return self.intercept[:, None] + self.a @ np.asarray(X_R, float).T + self.b @ np.asarray(X_L, float).T

    def predict_mean(self, X_R, X_L):
        """Posterior-mean prediction (the model is linear in the coefficients)."""
        a0 = float(np.mean(self.intercept))
        return a0 + np.asarray(X_R, float) @ self.a.mean(axis=0) + np.asarray(X_L, float) @ self.b.mean(axis=0)

    def columns(self):
        names = [f"a_{k + 1}" for k in range(self.a.shape[1])]
        names += [f"b_{j + 1}" for j in range(self.b.shape[1])]
        names += ["sigma2", "tau", "tau_L", "tau_R"]
        table = np.column_stack([self.a, self.b, self.sigma2, self.tau, self.tau_L, self.tau_R])
        return names, table

    def to_csv(self, path):
        names, table = self.columns()
        np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
        return Path(path)

    @classmethod
    def from_csv(cls, path, total_iters=0, burn_in=0, seed=0, y_mean=0.0, rule_means=None, linear_means=None):
        with Path(path).open() as fh:
            names = fh.readline().strip().split(",")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape[1] != len(names):
            table = table.reshape(-1, len(names))
        q = sum(nm.startswith("a_") for nm in names)
        p = sum(nm.startswith("b_") for nm in names)
        col = {nm: table[:, i] for i, nm in enumerate(names)}
        return cls(
            a=table[:, :q], b=table[:, q:q + p],
            sigma2=col["sigma2"], tau=col["tau"], tau_L=col["tau_L"], tau_R=col["tau_R"],
            total_iters=total_iters, burn_in=burn_in, seed=seed, y_mean=y_mean,
            rule_means=None if rule_means is None else np.asarray(rule_means, float),
            linear_means=None if linear_means is None else np.asarray(linear_means, float),
        )


def inverse_gamma(rng, shape, rate, size=None):
    """Draw ``IG(shape, rate)`` as ``rate / Gamma(shape, 1)``.

    Drawing through the unit-rate gamma keeps draws exactly proportional to
    ``rate`` for a fixed random stream.
    """
    rate = np.maximum(rate, RATE_FLOOR)
    g = rng.standard_gamma(shape, size=size if size is not None else np.shape(rate))
    return rate / g


# Full conditionals as (shape, rate) of an inverse-gamma law.  The shrunk
# sums of squares passed in are already divided by the local variances.


def local_conditional(coef2, mixing, prior_var):
    """``lambda_k^2`` or ``gamma_j^2``: ``IG(1, 1/mixing + coef^2 / (2 prior_var))``.

    ``prior_var`` is everything multiplying the local variance in the prior
    variance of the coefficient, including ``sigma^2``.
    """
    return 1.0, 1.0 / mixing + coef2 / (2.0 * prior_var)


def mixing_conditional(var):
    """Auxiliary of a half-Cauchy scale: ``IG(1, 1 + 1/var)``."""
    return 1.0, 1.0 + 1.0 / var


def group_conditional(count, mixing, shrunk_ss, scale):
    """``tau_R^2`` or ``tau_L^2`` given ``count`` coefficients in the group.

    ``shrunk_ss`` is ``sum coef^2 / (A^2 local^2)``; ``scale`` is
    ``tau^2 sigma^2``.
    """
    return (count + 1) / 2.0, 1.0 / mixing + shrunk_ss / (2.0 * scale)


def global_conditional(P, mixing, grouped_ss, sigma2):
    """``tau^2`` over all ``P`` terms; ``grouped_ss`` divides each group by its scale."""
    return (P + 1) / 2.0, 1.0 / mixing + grouped_ss / (2.0 * sigma2)


def noise_conditional(n, P, resid_ss, prior_ss):
    """``sigma^2``: shape ``(n + P)/2``; ``prior_ss`` is the fully scaled coefficient sum."""
    return (n + P) / 2.0, 0.5 * resid_ss + 0.5 * prior_ss


def coefficient_sampler(XtX, Xty, Lambda, sigma2, rng, X=None, y=None, method="auto"):
    """Draw from ``N(Sigma X'y, sigma2 Sigma)`` with ``Sigma = (X'X + Lambda^-1)^-1``.

    ``Lambda`` is the diagonal of prior variances (without ``sigma2``).  The
    Cholesky route works on ``D X'X D + I`` with ``D = Lambda^(1/2)`` and
    costs ``O(P^3)``; the auxiliary-variable route needs ``X`` and ``y`` and
    costs ``O(n^2 P)``, so ``"auto"`` picks it when ``P > n``.
    """
    Lambda = np.maximum(np.asarray(Lambda, dtype=float), RATE_FLOOR)
    P = Lambda.shape[0]
    if method == "auto":
        method = "auxiliary" if X is not None and P > X.shape[0] else "cholesky"
    s = np.sqrt(sigma2)
    if method == "cholesky":
        d = np.sqrt(Lambda)
        M = d[:, None] * np.asarray(XtX) * d[None, :]
        M[np.diag_indices(P)] += 1.0
        L = _cholesky(M)
        mean = d * linalg.cho_solve((L, True), d * Xty)
        z = rng.standard_normal(P)
        return mean + s * d * linalg.solve_triangular(L, z, lower=True, trans="T")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    u = s * np.sqrt(Lambda) * rng.standard_normal(P)
    v = X @ u / s + rng.standard_normal(n)
    d = np.sqrt(Lambda)
    XD = X * d[None, :]
    M = XD @ XD.T  # symmetric product lets BLAS use syrk
    M[np.diag_indices(n)] += 1.0
    L = _cholesky(M)
    w = linalg.cho_solve((L, True), y / s - v)
    return u + s * d * (XD.T @ w)


def _cholesky(M):
    try:
        return linalg.cholesky(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        jitter = 1e-10 * float(np.mean(np.diag(M)))
        logger.warning("Cholesky failed; retrying with jitter %g", jitter)
        M = M + jitter * np.eye(M.shape[0])
        try:
            return linalg.cholesky(M, lower=True, check_finite=False)
        except linalg.LinAlgError as err:
            raise ChainDivergenceError(-1, "singular coefficient covariance") from err


def gibbs_fit(dm, total_iters, burn_in, seed, cfg=None, callback=None, _update_tau_R=True):
    """Run one chain and return the post-burn-in draws.

    ``callback(iteration, state)`` is invoked after every sweep (used by the
    tests to inspect trajectories).
    """
    cfg = cfg or GibbsConfig(total_iters=total_iters, burn_in=burn_in, seed=seed)
    if not (total_iters > burn_in >= 0):
        raise ValueError("need total_iters > burn_in >= 0")
    main_ss, side_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(main_ss)
    # tau_R and its auxiliary draw from their own stream so that a model
    # without rules follows the same trajectory whether or not they update.
    rng_R = np.random.default_rng(side_ss)

    q, p, n = dm.q, dm.p, dm.n
    P = q + p
    y_mean = float(dm.y.mean())
    rmeans = dm.X_R.mean(axis=0)
    lmeans = dm.X_L.mean(axis=0)
    X = np.hstack([dm.X_R - rmeans, dm.X_L - lmeans])
    y = dm.y - y_mean
    XtX = X.T @ X
    Xty = X.T @ y
    A2 = dm.rule_scales**2
    s2 = np.broadcast_to(np.asarray(cfg.linear_scale, dtype=float) ** 2, (p,)).copy()
    method = cfg.method

    yy = float(y @ y)
    st = GibbsState.initial(q, p, max(yy / max(n - 1, 1), RATE_FLOOR))
    kept = total_iters - burn_in
    out_a = np.empty((kept, q))
    out_b = np.empty((kept, p))
    out = np.empty((kept, 4))

    for it in range(total_iters):
        Lam = np.concatenate([st.tau2 * st.tau_R2 * st.lambda2 * A2, st.tau2 * st.tau_L2 * st.gamma2 * s2])
        beta = coefficient_sampler(XtX, Xty, Lam, st.sigma2, rng, X=X, y=y, method=method)
        st.a, st.b = beta[:q], beta[q:]
        a2, b2 = st.a**2, st.b**2

        st.lambda2 = inverse_gamma(rng, *local_conditional(a2, st.eta, A2 * st.tau2 * st.tau_R2 * st.sigma2))
        st.eta = inverse_gamma(rng, *mixing_conditional(st.lambda2))
        st.gamma2 = inverse_gamma(rng, *local_conditional(b2, st.nu, s2 * st.tau2 * st.tau_L2 * st.sigma2))
        st.nu = inverse_gamma(rng, *mixing_conditional(st.gamma2))

        rule_ss = float(np.sum(a2 / (A2 * st.lambda2)))
        lin_ss = float(np.sum(b2 / (s2 * st.gamma2)))
        if _update_tau_R:
            st.tau_R2 = float(inverse_gamma(rng_R, *group_conditional(q, st.xi_R, rule_ss, st.tau2 * st.sigma2)))
            st.xi_R = float(inverse_gamma(rng_R, *mixing_conditional(st.tau_R2)))
        st.tau_L2 = float(inverse_gamma(rng, *group_conditional(p, st.xi_L, lin_ss, st.tau2 * st.sigma2)))
        st.xi_L = float(inverse_gamma(rng, *mixing_conditional(st.tau_L2)))
        st.tau2 = float(inverse_gamma(
            rng, *global_conditional(P, st.xi, rule_ss / st.tau_R2 + lin_ss / st.tau_L2, st.sigma2)))
        st.xi = float(inverse_gamma(rng, *mixing_conditional(st.tau2)))

        resid = y - X @ beta
        st.sigma2 = float(inverse_gamma(rng, *noise_conditional(
            n, P, float(resid @ resid), (rule_ss / st.tau_R2 + lin_ss / st.tau_L2) / st.tau2)))
        st.check(it)
        if callback is not None:
            callback(it, st)
        if it >= burn_in:
            k = it - burn_in
            out_a[k] = st.a
            out_b[k] = st.b
            out[k] = (st.sigma2, st.tau2, st.tau_L2, st.tau_R2)

    return PosteriorDraws(
        a=out_a, b=out_b, sigma2=out[:, 0],
        tau=np.sqrt(out[:, 1]), tau_L=np.sqrt(out[:, 2]), tau_R=np.sqrt(out[:, 3]),
        total_iters=total_iters, burn_in=burn_in, seed=seed,
        y_mean=y_mean, rule_means=rmeans, linear_means=lmeans,
    )


@dataclass(frozen=True)
class CoefficientSummary:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float

    def as_dict(self):
        return {
            nm: {"mean": float(m), "sd": float(s), "lower": float(lo), "upper": float(hi)}
            for nm, m, s, lo, hi in zip(self.names, self.mean, self.sd, self.lower, self.upper)
        }


def posterior_summary(draws, alpha=0.05):
    """Mean, sd and equal-tailed ``1 - alpha`` interval per coefficient.

    ``draws`` is a :class:`PosteriorDraws` or a ``(draws, k)`` array.
    """
    if isinstance(draws, PosteriorDraws):
        names = [f"a_{k + 1}" for k in range(draws.a.shape[1])] + [f"b_{j + 1}" for j in range(draws.b.shape[1])]
        table = np.hstack([draws.a, draws.b])
    else:
        table = np.asarray(draws, dtype=float)
        if table.ndim == 1:
            table = table[:, None]
        names = [f"c_{k + 1}" for k in range(table.shape[1])]
    if table.shape[0] < 2:
        raise ValueError("posterior summary needs at least two draws")
    lo, hi = quantile(table, [alpha / 2, 1 - alpha / 2])
    return CoefficientSummary(
        names=tuple(names), mean=table.mean(axis=0), sd=table.std(axis=0, ddof=1),
        lower=np.atleast_1d(lo), upper=np.atleast_1d(hi), alpha=alpha,
    )
