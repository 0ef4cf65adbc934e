"""Exact marginal and interaction Shapley values for rule ensembles.

For a rule ``r(x) = prod_k R_k(x_k)`` the interventional Shapley value with
sample-mean plug-in expectations has a closed form that only needs, per
background row ``t``, the indicators ``R_k(t_k)`` and their count ``q(t)``.
Features not involved in a rule get exactly zero, so every computation runs
on the rule's own (at most ``max_depth``) features.

Two evaluation paths are provided:

* :func:`rule_shapley` / :func:`rule_interaction_shapley` -- one probe,
  one pass over the background rows;
* :func:`rule_attributions` / :func:`rule_interaction_attributions` -- many
  probes at once.  Rows sharing an indicator pattern contribute identical
  summands, so the background is reduced to ``2**m`` pattern counts first.

:func:`brute_force_shapley` enumerates feature subsets directly and serves
as the reference the closed forms are tested against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_ENUMERATION_FEATURES = 12


class EnumerationGuardError(ValueError):
    """Too many features for subset enumeration."""


def binom_sum_identity_check(a, b, c):
    """Check ``sum_u C(a+u, u) C(b-u, c-u) == C(a+b+1, c)`` in exact integers."""
    if a < 0 or b < 0 or not (0 <= c <= b):
        raise ValueError("need a, b >= 0 and 0 <= c <= b")
    lhs = sum(math.comb(a + u, u) * math.comb(b - u, c - u) for u in range(c + 1))
    return lhs == math.comb(a + b + 1, c)


@lru_cache(maxsize=None)
def inv_binom(top, bottom):
    """``1 / C(top, bottom)`` from the exact integer coefficient."""
    return 1.0 / math.comb(top, bottom)


def _inv_binom_table(size):
    t = np.zeros((size, size))
    for i in range(size):
        for k in range(i + 1):
            t[i, k] = inv_binom(i, k)
    return t


# ---------------------------------------------------------------------------
# Reduced view of a rule over a dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedRuleView:
    """Indicators of a rule's conditions restricted to its involved features.

    ``indicators[t, k]`` is ``R_k`` evaluated at background row ``t`` for the
    ``k``-th involved feature, ``counts[t]`` is ``q(t)``.
    """

    involved: tuple
    indicators: np.ndarray
    counts: np.ndarray

    @property
    def p_r(self):
        return len(self.involved)

    @classmethod
    def of(cls, rule, X):
        R = rule.indicators(X).astype(np.int64)
        return cls(rule.features, R, R.sum(axis=1))


def _as_row(x_star, p):
    x = np.asarray(x_star, dtype=float).ravel()
    if x.shape[0] != p:
        raise ValueError(f"probe has {x.shape[0]} entries, data has {p} columns")
    return x


def rule_shapley(rule, coeff, X, x_star):
    """Marginal Shapley values of ``coeff * rule`` at ``x_star``.

    Returns a length-``p`` vector over all columns of ``X``; columns not in
    the rule are exactly zero.  One pass over the background rows updates
    the accumulators of every involved feature.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    x = _as_row(x_star, p)
    view = ReducedRuleView.of(rule, X)
    m = view.p_r
    Rs = rule.indicators(x[None, :])[0].astype(np.int64)
    qs = int(Rs.sum())
    R, q = view.indicators, view.counts
    # a row contributes only if every condition holds at t or at x*
    live = ((R | Rs[None, :]) == 1).all(axis=1)
    R, q = R[live], q[live]
    table = _inv_binom_table(2 * m + 2)
    out = np.zeros(p)
    for k, j in enumerate(view.involved):
        top = 2 * m - qs - q - 1 + Rs[k] + R[:, k]
        bottom = m - qs + Rs[k]
        acc = np.sum((Rs[k] - R[:, k]) * table[top, bottom])
        out[j] = coeff * acc / (n * (m - qs + Rs[k]))
    return out


def rule_interaction_shapley(rule, coeff, X, x_star, j, jp):
    """Marginal interaction Shapley value of features ``j`` and ``jp``.

    Zero unless both features are involved in the rule.  The binomial in the
    denominator is ``C(2m - q* - q(t) + R_j* + R_j'* + R_j(t) + R_j'(t) - 3,
    m - 1 - q* + R_j* + R_j'*)``, the value obtained when the subset sum of
    the interaction weights is collapsed with the Vandermonde variant.
    """
    if j == jp:
        raise ValueError("interaction needs two different features")
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    x = _as_row(x_star, p)
    feats = rule.features
    if j not in feats or jp not in feats:
        return 0.0
    view = ReducedRuleView.of(rule, X)
    m = view.p_r
    Rs = rule.indicators(x[None, :])[0].astype(np.int64)
    qs = int(Rs.sum())
    R, q = view.indicators, view.counts
    live = ((R | Rs[None, :]) == 1).all(axis=1)
    R, q = R[live], q[live]
    k1, k2 = sorted((feats.index(j), feats.index(jp)))
    s1, s2 = Rs[k1], Rs[k2]
    t1, t2 = R[:, k1], R[:, k2]
    num = s1 * s2 - s2 * t1 - t2 * s1 + t1 * t2
    top = 2 * m - qs - q + s1 + s2 + t1 + t2 - 3
    bottom = m - 1 - qs + s1 + s2
    table = _inv_binom_table(2 * m + 2)
    return float(coeff * np.sum(num * table[top, bottom]) / (n * bottom))


def _patterns(R):
    m = R.shape[1]
    return (R.astype(np.int64) << np.arange(m)).sum(axis=1)


def _pattern_bits(m):
    codes = np.arange(2**m)
    return (codes[:, None] >> np.arange(m)) & 1


def rule_attributions(rule, X_background, X_probes):
    """Unit-coefficient marginal attributions for many probes.

    Returns an array of shape ``(n_probes, m)`` whose columns follow
    ``rule.features``.  Equal to :func:`rule_shapley` with ``coeff=1``.
    """
    Rb = rule.indicators(X_background)
    Rp = rule.indicators(X_probes)
    n, m = Rb.shape
    bits = _pattern_bits(m)  # (2^m, m)
    counts = np.bincount(_patterns(Rb), minlength=2**m).astype(float)
    q = bits.sum(axis=1)
    full = 2**m - 1
    table = _inv_binom_table(2 * m + 2)
    codes = np.arange(2**m)
    per_pattern = np.zeros((2**m, m))
    for s in range(2**m):
        live = (codes | s) == full
        if not live.any():
            continue
        c, tb, qt = counts[live], bits[live], q[live]
        sb, qs = bits[s], q[s]
        for k in range(m):
            top = 2 * m - qs - qt - 1 + sb[k] + tb[:, k]
            bottom = m - qs + sb[k]
            per_pattern[s, k] = np.sum(c * (sb[k] - tb[:, k]) * table[top, bottom]) / (n * bottom)
    return per_pattern[_patterns(Rp)]


def rule_interaction_attributions(rule, X_background, X_probes):
    """Unit-coefficient interaction attributions for many probes.

    Returns ``(pairs, values)`` where ``pairs`` lists ``(j, j')`` feature
    pairs of the rule (``j < j'``) and ``values`` has shape
    ``(n_probes, len(pairs))``.
    """
    feats = rule.features
    Rb = rule.indicators(X_background)
    Rp = rule.indicators(X_probes)
    n, m = Rb.shape
    pair_idx = list(itertools.combinations(range(m), 2))
    pairs = [(feats[a], feats[b]) for a, b in pair_idx]
    if not pairs:
        return pairs, np.zeros((Rp.shape[0], 0))
    bits = _pattern_bits(m)
    counts = np.bincount(_patterns(Rb), minlength=2**m).astype(float)
    q = bits.sum(axis=1)
    full = 2**m - 1
    table = _inv_binom_table(2 * m + 2)
    codes = np.arange(2**m)
    per_pattern = np.zeros((2**m, len(pairs)))
    for s in range(2**m):
        live = (codes | s) == full
        c, tb, qt = counts[live], bits[live], q[live]
        sb, qs = bits[s], q[s]
        for col, (k1, k2) in enumerate(pair_idx):
            num = (sb[k1] - tb[:, k1]) * (sb[k2] - tb[:, k2])
            top = 2 * m - qs - qt + sb[k1] + sb[k2] + tb[:, k1] + tb[:, k2] - 3
            bottom = m - 1 - qs + sb[k1] + sb[k2]
            per_pattern[s, col] = np.sum(c * num * table[top, bottom]) / (n * bottom)
    return pairs, per_pattern[_patterns(Rp)]


def linear_shapley(b_j, xbar_j, xstar_j):
    """Shapley value of a linear term ``b_j x_j``: ``b_j (x*_j - mean(x_j))``."""
    return b_j * (np.asarray(xstar_j, dtype=float) - xbar_j)


# ---------------------------------------------------------------------------
# Brute-force reference
# ---------------------------------------------------------------------------


def _as_function(term, coeff=1.0):
    if hasattr(term, "evaluate"):
        return lambda Z: coeff * term.evaluate(Z)
    if callable(term):
        return term
    value = float(term)
    return lambda Z: np.full(Z.shape[0], value)


def interventional_means(F, X, x_star, features):
    """``v(S) = mean_t F(t with t_S := x*_S)`` for every subset ``S`` of ``features``.

    Subsets are indexed by bitmask over the positions in ``features``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    x = _as_row(x_star, p)
    k = len(features)
    masks = _pattern_bits(k).astype(bool)
    v = np.empty(2**k)
    chunk = max(1, 200_000 // max(n * p, 1))
    for start in range(0, 2**k, chunk):
        block = masks[start:start + chunk]
        Z = np.broadcast_to(X, (len(block), n, p)).copy()
        for pos, j in enumerate(features):
            rows = block[:, pos]
            Z[rows, :, j] = x[j]
        v[start:start + len(block)] = F(Z.reshape(-1, p)).reshape(len(block), n).mean(axis=1)
    return v


def brute_force_shapley(term, X, x_star, mode="marginal", features=None, coeff=1.0):
    """Shapley values by explicit subset enumeration.

    ``term`` is a :class:`~ruleshap.rulegen.Rule` (scaled by ``coeff``), a
    callable mapping an ``(k, p)`` matrix to ``k`` outputs, or a constant.
    Expectations are sample means over the rows of ``X``.  Marginal mode
    returns a length-``p`` vector; interaction mode a symmetric ``p x p``
    matrix with zero diagonal.  Only ``features`` (default: all columns)
    are treated as players.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    features = list(range(p)) if features is None else list(features)
    k = len(features)
    if k > MAX_ENUMERATION_FEATURES:
        raise EnumerationGuardError(f"{k} features exceed the enumeration guard of {MAX_ENUMERATION_FEATURES}")
    F = _as_function(term, coeff)
    v = interventional_means(F, X, x_star, features)
    sizes = _pattern_bits(k).sum(axis=1) if k else np.zeros(1, dtype=int)
    codes = np.arange(2**k)
    if mode == "marginal":
        w_by_size = np.array([1.0 / (k * math.comb(k - 1, s)) for s in range(k)])
        out = np.zeros(p)
        for a in range(k):
            bit = 1 << a
            S = codes[(codes & bit) == 0]
            out[features[a]] = np.sum(w_by_size[sizes[S]] * (v[S | bit] - v[S]))
        return out
    if mode == "interaction":
        w_by_size = np.array([1.0 / ((k - 1) * math.comb(k - 2, s)) for s in range(max(k - 1, 0))])
        out = np.zeros((p, p))
        for a, b in itertools.combinations(range(k), 2):
            ba, bb = 1 << a, 1 << b
            S = codes[(codes & (ba | bb)) == 0]
            val = np.sum(w_by_size[sizes[S]] * (v[S | ba | bb] - v[S | ba] - v[S | bb] + v[S]))
            out[features[a], features[b]] = out[features[b], features[a]] = val
        return out
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Whole-model attributions
# ---------------------------------------------------------------------------


@dataclass
class ShapleyCube:
    """Per-draw, per-probe, per-feature attributions of a fitted model.

    ``values[d, i, f]`` is the marginal Shapley value of original feature
    ``f`` at probe ``i`` under posterior draw ``d``; ``base[d]`` is the mean
    prediction over the background.  Interaction slices are produced on
    demand by :meth:`interaction` from per-rule unit attributions, which
    keeps memory at ``draws x probes`` per feature pair.
    """

    feature_names: tuple
    values: np.ndarray
    base: np.ndarray
    probe_ids: np.ndarray
    predictions: np.ndarray = None
    errors: dict = field(default_factory=dict)
    _pair_terms: dict = field(default_factory=dict, repr=False)
    _coef: np.ndarray = field(default=None, repr=False)

    @property
    def n_draws(self):
        return self.values.shape[0]

    @property
    def n_probes(self):
        return self.values.shape[1]

    @property
    def n_features(self):
        return self.values.shape[2]

    def pairs(self):
        """Feature pairs ``(f, g)``, ``f <= g``, with any interaction term."""
        return sorted(self._pair_terms)

    def interaction(self, f, g):
        """``(draws, probes)`` interaction values of features ``f`` and ``g``.

        ``f == g`` returns the within-factor entry (interactions between
        dummy columns of one categorical feature).
        """
        key = (min(f, g), max(f, g))
        if key not in self._pair_terms:
            return np.zeros((self.n_draws, self.n_probes))
        rule_idx, unit = self._pair_terms[key]
        return self._coef[:, rule_idx] @ unit

    @property
    def interactions(self):
        """Dense ``(draws, probes, F, F)`` interaction array (small models only)."""
        F = self.n_features
        out = np.zeros((self.n_draws, self.n_probes, F, F))
        for f, g in self.pairs():
            sl = self.interaction(f, g)
            out[:, :, f, g] = sl
            out[:, :, g, f] = sl
        return out


def model_shapley(model, X_background, X_probes=None, interactions=True, probe_ids=None):
    """Shapley cube of a fitted :class:`~ruleshap.model.RuleShapModel`.

    Each rule is attributed once with unit coefficient; a draw's attribution
    is then the coefficient-weighted sum, because Shapley values are linear
    in the model.  Dummy columns of one categorical feature are summed into
    one feature-level attribution.  Probes with non-finite entries are
    skipped and reported in ``cube.errors``.
    """
    Xb = np.asarray(X_background, dtype=float)
    Xp = Xb if X_probes is None else np.asarray(X_probes, dtype=float)
    ids = np.arange(Xp.shape[0]) if probe_ids is None else np.asarray(probe_ids)
    finite = np.isfinite(Xp).all(axis=1)
    errors = {int(ids[i]): "probe has non-finite entries" for i in np.flatnonzero(~finite)}
    Xp, ids = Xp[finite], ids[finite]

    draws = model.draws
    group_names = model.feature_names
    col_group = model.column_group_index()
    D, P, F = draws.n_draws, Xp.shape[0], len(group_names)
    A = draws.a
    values = np.zeros((D, P, F))

    # rules: per-feature unit attributions summed within feature groups
    by_group = {}
    pair_terms = {}
    for k, rule in enumerate(model.rules):
        U = rule_attributions(rule, Xb, Xp)
        for pos, col in enumerate(rule.features):
            by_group.setdefault(col_group[col], {}).setdefault(k, np.zeros(P))
            by_group[col_group[col]][k] += U[:, pos]
        if interactions and rule.depth >= 2:
            pairs, V = rule_interaction_attributions(rule, Xb, Xp)
            for pos, (c1, c2) in enumerate(pairs):
                g1, g2 = sorted((col_group[c1], col_group[c2]))
                pair_terms.setdefault((g1, g2), {}).setdefault(k, np.zeros(P))
                pair_terms[(g1, g2)][k] += V[:, pos]
    for g, terms in by_group.items():
        idx = np.fromiter(terms, dtype=int)
        values[:, :, g] += A[:, idx] @ np.vstack([terms[k] for k in idx])

    # linear terms
    Zb = model.linear_design(Xb)
    Zp = model.linear_design(Xp)
    zbar = Zb.mean(axis=0)
    for t, col in enumerate(model.linear_columns):
        values[:, :, col_group[col]] += np.outer(draws.b[:, t], linear_shapley(1.0, zbar[t], Zp[:, t]))

    Rb = model.rule_design(Xb)
    base = draws.intercept + A @ Rb.mean(axis=0) + draws.b @ zbar
    predictions = draws.predict(model.rule_design(Xp), Zp)
    cube = ShapleyCube(
        feature_names=tuple(group_names),
        values=values,
        base=base,
        probe_ids=ids,
        predictions=predictions,
        errors=errors,
        _coef=A,
    )
    cube._pair_terms = {
        key: (np.fromiter(terms, dtype=int), np.vstack([terms[k] for k in terms]))
        for key, terms in pair_terms.items()
    }
    return cube
