"""Credible intervals, rejection rates and importance baselines."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import quantile

MIN_DRAWS = 100


class ConfigError(ValueError):
    """Invalid inference setting."""


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def _interval(draws, alpha):
    """Equal-tailed interval over axis 0 and the significance flag."""
    lo, hi = quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0])
    return lo, hi, (lo > 0) | (hi < 0)


def _fmt(v):
    return repr(float(v))


@dataclass(frozen=True)
class EffectReport:
    """Per-probe, per-feature posterior summaries of Shapley values.

    Arrays are ``(probes, features)``; ``significant`` marks cells whose
    interval excludes zero strictly.
    """

    row_ids: np.ndarray
    feature_names: tuple
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    significant: np.ndarray
    alpha: float = 0.05

    @property
    def rejection_rates(self):
        """Fraction of probes flagged significant, per feature."""
        if self.significant.shape[0] == 0:
            return np.zeros(len(self.feature_names))
        return self.significant.mean(axis=0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "feature", "mean", "lower", "upper", "significant"])
            for i, rid in enumerate(self.row_ids):
                for f, name in enumerate(self.feature_names):
                    w.writerow([int(rid), name, _fmt(self.mean[i, f]), _fmt(self.lower[i, f]),
                                _fmt(self.upper[i, f]), int(self.significant[i, f])])

    @classmethod
    def from_csv(cls, path, alpha=0.05):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = tuple(dict.fromkeys(r["feature"] for r in rows))
        ids = np.array(list(dict.fromkeys(int(r["row_id"]) for r in rows)), dtype=int)
        if len(rows) != len(ids) * len(names):
            raise ValueError(f"{path}: expected {len(ids) * len(names)} rows, found {len(rows)}")
        shape = (len(ids), len(names))

        def grab(key, cast=float):
            return np.array([cast(r[key]) for r in rows]).reshape(shape)

        mean, lower, upper = grab("mean"), grab("lower"), grab("upper")
        sig = grab("significant", lambda s: bool(int(s)))
        return cls(ids, names, mean, np.full(shape, np.nan), lower, upper, sig, alpha)


def effect_report(cube, alpha=0.05):
    """Summarize a :class:`~ruleshap.shapley.ShapleyCube` cell by cell."""
    _check_alpha(alpha)
    if cube.n_draws < MIN_DRAWS:
        warnings.warn(f"only {cube.n_draws} draws; interval endpoints are unstable", RuntimeWarning)
    V = cube.values
    lo, hi, sig = _interval(V, alpha)
    return EffectReport(
        row_ids=np.asarray(cube.probe_ids),
        feature_names=tuple(cube.feature_names),
        mean=V.mean(axis=0),
        sd=V.std(axis=0, ddof=1) if V.shape[0] > 1 else np.zeros(V.shape[1:]),
        lower=lo,
        upper=hi,
        significant=sig,
        alpha=alpha,
    )


def rejection_rates(report, grouping):
    """Mean per-feature rejection rate within each group.

    ``grouping`` maps every feature name to a group label such as
    ``"signal"`` or ``"noise"``.  Groups are returned in first-seen order.
    """
    missing = [f for f in report.feature_names if f not in grouping]
    if missing:
        raise ConfigError(f"grouping does not cover features: {', '.join(missing)}")
    rates = report.rejection_rates
    out = {}
    for f, name in enumerate(report.feature_names):
        out.setdefault(grouping[name], []).append(rates[f])
    return {g: float(np.mean(v)) for g, v in out.items()}


@dataclass(frozen=True)
class InteractionReport:
    """Pairwise interaction summaries.

    ``counts[f, g]`` is the number of probes whose interval for the pair
    excludes zero; ``mean_abs[f, g]`` averages the absolute posterior mean
    over those probes (0 when none).  Both matrices are symmetric.
    ``cells`` maps each modelled pair ``(f, g)``, ``f <= g``, to its
    per-probe ``(mean, lower, upper, significant)`` arrays.
    """

    row_ids: np.ndarray
    feature_names: tuple
    counts: np.ndarray
    mean_abs: np.ndarray
    cells: dict
    alpha: float = 0.05

    def to_csv(self, path):
        names = self.feature_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "feature_a", "feature_b", "mean", "lower", "upper", "significant"])
            for (f, g), (m, lo, hi, sig) in sorted(self.cells.items()):
                for i, rid in enumerate(self.row_ids):
                    w.writerow([int(rid), names[f], names[g], _fmt(m[i]), _fmt(lo[i]), _fmt(hi[i]), int(sig[i])])

    def heat_table(self):
        """Long-form rows ``(feature_a, feature_b, count, mean_abs)`` over all pairs."""
        names = self.feature_names
        F = len(names)
        return [(names[f], names[g], int(self.counts[f, g]), float(self.mean_abs[f, g]))
                for f in range(F) for g in range(F)]

    def heat_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_a", "feature_b", "count", "mean_abs"])
            for a, b, c, m in self.heat_table():
                w.writerow([a, b, c, _fmt(m)])


def interaction_report(cube, alpha=0.05):
    """Count and size significant pairwise interactions per feature pair."""
    _check_alpha(alpha)
    if cube.n_draws < MIN_DRAWS:
        warnings.warn(f"only {cube.n_draws} draws; interval endpoints are unstable", RuntimeWarning)
    F = cube.n_features
    counts = np.zeros((F, F), dtype=int)
    mean_abs = np.zeros((F, F))
    cells = {}
    for f, g in cube.pairs():
        V = cube.interaction(f, g)
        lo, hi, sig = _interval(V, alpha)
        m = V.mean(axis=0)
        cells[(f, g)] = (m, lo, hi, sig)
        c = int(sig.sum())
        counts[f, g] = counts[g, f] = c
        if c:
            mean_abs[f, g] = mean_abs[g, f] = float(np.abs(m[sig]).mean())
    return InteractionReport(np.asarray(cube.probe_ids), tuple(cube.feature_names), counts, mean_abs, cells, alpha)


def rulefit_importance(model, X, x_star=None):
    """RuleFit-style feature importance from posterior-mean coefficients.

    With ``x_star`` the local form is returned, otherwise the global form.
    A rule's contribution is split equally over the distinct features it
    involves; dummy columns are summed into their categorical feature.
    This is a descriptive baseline and carries no uncertainty.

    Parameters
    ----------
    model : RuleShapModel
    X : ndarray, shape (n, p)
        Data defining the means and standard deviations.
    x_star : ndarray, shape (p,), optional

    Returns
    -------
    ndarray, shape (n_features,)
    """
    X = np.asarray(X, dtype=float)
    group = model.column_group_index()
    out = np.zeros(len(model.feature_names))
    a = model.draws.a.mean(axis=0)
    b = model.draws.b.mean(axis=0)

    Z = model.linear_design(X)
    zbar = Z.mean(axis=0)
    if x_star is None:
        lin = np.abs(b) * Z.std(axis=0)
    else:
        zs = model.linear_design(np.asarray(x_star, dtype=float)[None, :])[0]
        lin = np.abs(b) * np.abs(zs - zbar)
    for t, col in enumerate(model.linear_columns):
        out[group[col]] += lin[t]

    if model.rules:
        R = model.rule_design(X)
        rbar = R.mean(axis=0)
        if x_star is None:
            contrib = np.abs(a) * np.sqrt(rbar * (1.0 - rbar))
        else:
            rs = model.rule_design(np.asarray(x_star, dtype=float)[None, :])[0]
            contrib = np.abs(a) * np.abs(rs - rbar)
        for k, rule in enumerate(model.rules):
            share = contrib[k] / rule.depth
            for col in rule.features:
                out[group[col]] += share
    return out
