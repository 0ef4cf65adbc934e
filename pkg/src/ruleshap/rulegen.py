"""Rule generation: CART trees, (smoothing) random forests and rule extraction.

Trees are grown on a bootstrap sample with greedy variance-reduction splits
over ``mtry`` randomly chosen features.  A path's conditions are merged per
feature, then every non-empty subset of the involved features becomes a
candidate rule ("disaggregation").  Candidate rules are deduplicated,
filtered on support and given a structured prior scale ``A_k``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

LT = "<"
GE = ">="


class Condition(NamedTuple):
    j: int
    op: str
    c: float

    def holds(self, col):
        return col < self.c if self.op == LT else col >= self.c


def _sort_key(cond):
    return (cond.j, 0 if cond.op == LT else 1, cond.c)


def rule_scale(support, depth, mu=1.0, eta=2.0):
    """Structured shrinkage scale of a rule.

    ``(2 min(r, 1-r))^(mu - .5) / (m^eta sqrt(2 max(r, 1-r)))``.  It already
    accounts for the rule column not being standardized.
    """
    lo = min(support, 1.0 - support)
    hi = max(support, 1.0 - support)
    return (2.0 * lo) ** (mu - 0.5) / (depth**eta * math.sqrt(2.0 * hi))


@dataclass(frozen=True)
class Rule:
    """Conjunction of threshold conditions.

    A feature may carry two conditions (an interval ``lo <= x < hi``) after
    merging repeated splits along a tree path; ``depth`` counts distinct
    features.
    """

    conditions: tuple
    support: float = float("nan")
    scale: float = float("nan")

    def __post_init__(self):
        conds = tuple(sorted((Condition(int(c[0]), str(c[1]), float(c[2])) for c in self.conditions), key=_sort_key))
        if not conds:
            raise ValueError("a rule needs at least one condition")
        object.__setattr__(self, "conditions", conds)

    @property
    def features(self):
        return tuple(sorted({c.j for c in self.conditions}))

    @property
    def depth(self):
        return len(self.features)

    @property
    def key(self):
        return tuple((c.j, c.op, c.c) for c in self.conditions)

    def indicators(self, X):
        """0/1 matrix of per-feature condition indicators, columns ordered as ``features``."""
        X = np.asarray(X, dtype=float)
        feats = self.features
        out = np.ones((X.shape[0], len(feats)), dtype=bool)
        for cond in self.conditions:
            k = feats.index(cond.j)
            out[:, k] &= cond.holds(X[:, cond.j])
        return out

    def evaluate(self, X):
        return self.indicators(X).all(axis=1).astype(float)

    def __str__(self):
        return " & ".join(f"x{c.j} {c.op} {c.c:g}" for c in self.conditions)

    def to_json(self):
        return {
            "conditions": [{"j": c.j, "op": c.op, "c": c.c} for c in self.conditions],
            "support": float(self.support),
            "depth": self.depth,
            "scale": float(self.scale),
        }

    @classmethod
    def from_json(cls, d):
        conds = [Condition(int(c["j"]), c["op"], float(c["c"])) for c in d["conditions"]]
        rule = cls(conds, support=float(d["support"]), scale=float(d["scale"]))
        if int(d.get("depth", rule.depth)) != rule.depth:
            raise ValueError(f"rule depth mismatch in {d}")
        return rule


def write_rules(rules, path):
    with Path(path).open("w") as fh:
        for r in rules:
            # json uses repr() for floats, which round-trips exactly
            fh.write(json.dumps(r.to_json()) + "\n")


def read_rules(path):
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                out.append(Rule.from_json(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Trees and forests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothingConfig:
    n_trees: int = 500
    mtry: int | None = None  # None -> ceil(p / 3)
    mu: float = 1.0
    eta: float = 2.0
    seed: int = 0
    min_leaf_fraction: float = 0.025
    min_leaf_size: int = 10
    max_depth: int = 3
    min_support: float = 0.025
    max_support: float = 0.975
    round_digits: int = 3

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.mu <= 0 or self.eta <= 0:
            raise ValueError("mu and eta must be positive")
        if not (1 <= self.max_depth):
            raise ValueError("max_depth must be at least 1")

    def resolve_mtry(self, p):
        m = self.mtry if self.mtry is not None else math.ceil(p / 3)
        if m > p:
            raise ValueError(f"mtry={m} exceeds the number of features p={p}")
        return max(1, m)

    def leaf_floor(self, n):
        return max(self.min_leaf_size, math.ceil(self.min_leaf_fraction * n))


@dataclass(frozen=True)
class Tree:
    """Binary regression tree stored as parallel node arrays.

    Internal nodes send ``x[feature] <= threshold`` to ``left``.  Leaves have
    ``feature == -1``.  ``counts`` holds the number of bootstrap rows (with
    multiplicity) reaching each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    counts: np.ndarray
    bootstrap_indices: np.ndarray = field(default=None, repr=False)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def predict(self, X):
        return self.value[self.apply(X)]

    def paths(self):
        """Yield ``(leaf, conditions)`` for every root-to-leaf path."""
        stack = [(0, ())]
        while stack:
            node, conds = stack.pop()
            f = int(self.feature[node])
            if f < 0:
                yield node, conds
                continue
            c = float(self.threshold[node])
            stack.append((int(self.right[node]), conds + (Condition(f, GE, c),)))
            stack.append((int(self.left[node]), conds + (Condition(f, LT, c),)))

    def depth(self):
        return max((len(c) for _, c in self.paths()), default=0)


def _best_split(Xn, yn, features, min_leaf):
    """Return ``(gain, feature, threshold)`` of the best admissible split."""
    m = len(yn)
    total = yn.sum()
    base = total * total / m
    best = (0.0, -1, 0.0)
    if m < 2 * min_leaf:
        return best
    for f in features:
        xs = Xn[:, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cs = np.cumsum(yn[order])
        # left sizes i = min_leaf .. m - min_leaf, splitting between i-1 and i
        i = np.arange(min_leaf, m - min_leaf + 1)
        ok = xs[i - 1] < xs[i]
        if not ok.any():
            continue
        i = i[ok]
        sl = cs[i - 1]
        gain = sl * sl / i + (total - sl) ** 2 / (m - i) - base
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            best = (float(gain[k]), int(f), 0.5 * (xs[i[k] - 1] + xs[i[k]]))
    return best


def grow_tree(Xs, ys, cfg, rng, min_leaf, bootstrap_indices=None):
    """Grow a tree on an already-sampled design ``Xs`` and outcome ``ys``."""
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    p = Xs.shape[1]
    mtry = cfg.resolve_mtry(p)
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(ys[idx].mean()))
        counts.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(len(ys)))
    queue = [(root, np.arange(len(ys)), 0)]
    while queue:
        node, idx, depth = queue.pop(0)
        if depth >= cfg.max_depth:
            continue
        yn = ys[idx]
        # relative tolerance: a constant outcome has only rounding-level gain
        tol = 1e-12 * (1.0 + float(np.dot(yn, yn)))
        feats = rng.choice(p, size=mtry, replace=False)
        gain, f, c = _best_split(Xs[idx], yn, feats, min_leaf)
        if f < 0 or gain <= tol:
            continue
        mask = Xs[idx, f] <= c
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, c
        left[node] = new_node(li)
        right[node] = new_node(ri)
        queue.append((left[node], li, depth + 1))
        queue.append((right[node], ri, depth + 1))
    return Tree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value),
        counts=np.array(counts, dtype=int),
        bootstrap_indices=None if bootstrap_indices is None else np.asarray(bootstrap_indices),
    )


def fit_tree(rows, X, y, cfg, rng):
    """Fit one regression tree on the row multiset ``rows`` of ``(X, y)``."""
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ValueError("fit_tree needs at least one row")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    min_leaf = cfg.leaf_floor(X.shape[0])
    return grow_tree(X[rows], y[rows], cfg, rng, min_leaf, bootstrap_indices=rows)


@dataclass(frozen=True)
class Forest:
    """Fitted trees plus out-of-bag summaries.

    ``oob_counts[i]`` is the number of trees for which row ``i`` was out of
    bag; rows with zero count fall back to ``fallback_value`` and are listed
    in ``fallback_rows``.
    """

    trees: tuple
    oob_predictions: np.ndarray
    oob_sigma2: float
    oob_counts: np.ndarray
    fallback_rows: tuple = ()
    fallback_value: float = 0.0

    def predict(self, X):
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def _tree_rngs(cfg, rng, n_trees):
    # one independent stream per tree, keyed on (base entropy, tree index)
    base = int(rng.integers(2**63))
    return [np.random.default_rng([base, k]) for k in range(n_trees)]


def _oob(X, trees, reference):
    n = X.shape[0]
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    for t in trees:
        out = np.ones(n, dtype=bool)
        out[t.bootstrap_indices] = False
        if out.any():
            sums[out] += t.predict(X[out])
            counts[out] += 1
    fallback = float(np.mean(reference))
    pred = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
    never = tuple(int(i) for i in np.flatnonzero(counts == 0))
    return pred, counts, never, fallback


def _fit_trees(X, outcome_for, cfg, rng):
    n = X.shape[0]
    min_leaf = cfg.leaf_floor(n)
    trees = []
    for trng in _tree_rngs(cfg, rng, cfg.n_trees):
        rows = trng.integers(0, n, size=n)
        trees.append(grow_tree(X[rows], outcome_for(rows, trng), cfg, trng, min_leaf, bootstrap_indices=rows))
    return tuple(trees)


def fit_forest(X, y, cfg, rng):
    """Plain random forest of ``cfg.n_trees`` bootstrap trees."""
    X = np.asarray(X, dtype=float)
    y = np.asanyarray(y, dtype=float)
    if X.shape[0] < 20:
        raise ValueError("fit_forest needs at least 20 rows")
    trees = _fit_trees(X, lambda rows, _: y[rows], cfg, rng)
    pred, counts, never, fallback = _oob(X, trees, y)
    if never:
        logger.info("%d rows never out-of-bag; using the training mean", len(never))
    sigma2 = float(np.mean((y - pred) ** 2))
    return Forest(trees, pred, sigma2, counts, never, fallback)


def fit_synthetic_forest(X, means, sigma2, cfg, rng):
    """Forest whose tree outcomes are fresh ``Normal(means[i], sigma2)`` draws.

    For each tree the outcome of bootstrap position ``t`` with row ``i_t`` is
    drawn anew, so repeated rows get independent values.
    """
    X = np.asarray(X, dtype=float)
    means = np.asarray(means, dtype=float)
    sd = math.sqrt(max(float(sigma2), 0.0))

    def synth(rows, trng):
        return means[rows] + sd * trng.standard_normal(rows.size)

    trees = _fit_trees(X, synth, cfg, rng)
    pred, counts, never, fallback = _oob(X, trees, means)
    return Forest(trees, pred, float(np.mean((means - pred) ** 2)), counts, never, fallback)


def smoothing_forest(X, y, cfg, rng):
    """Three-step smoothing random forest.

    1. fit a forest on ``(X, y)``;
    2. take its out-of-bag predictions as per-row means and the mean squared
       OOB residual as a common variance;
    3. fit a fresh forest on synthetic outcomes drawn from those normals.

    The observed outcome is read once, in step 1.
    """
    X = np.asarray(X, dtype=float)
    y = np.asanyarray(y, dtype=float)
    first = fit_forest(X, y, cfg, rng)
    return fit_synthetic_forest(X, first.oob_predictions, first.oob_sigma2, cfg, rng)


def residualize(X_linear, y, gibbs_cfg):
    """Residuals of ``y`` after a linear-only horseshoe fit.

    Returns ``y`` minus the posterior-mean linear prediction (intercept
    included), which is what the forest is then grown on.
    """
    from . import horseshoe

    y = np.asarray(y, dtype=float)
    XL = np.asarray(X_linear, dtype=float)
    if XL.shape[1] == 0 or np.ptp(y) == 0:
        return y - y.mean()
    dm = horseshoe.DesignMatrices(X_R=np.zeros((len(y), 0)), X_L=XL, y=y)
    draws = horseshoe.gibbs_fit(dm, gibbs_cfg.total_iters, gibbs_cfg.burn_in, gibbs_cfg.seed, gibbs_cfg)
    return y - draws.predict_mean(np.zeros((len(y), 0)), XL)


# ---------------------------------------------------------------------------
# Rule extraction
# ---------------------------------------------------------------------------


def merge_conditions(path):
    """Collapse repeated conditions on one feature into the tightest interval."""
    by_feature = {}
    for cond in path:
        cond = Condition(int(cond[0]), str(cond[1]), float(cond[2]))
        lo, hi = by_feature.get(cond.j, (None, None))
        if cond.op == LT:
            hi = cond.c if hi is None else min(hi, cond.c)
        else:
            lo = cond.c if lo is None else max(lo, cond.c)
        by_feature[cond.j] = (lo, hi)
    out = {}
    for j, (lo, hi) in sorted(by_feature.items()):
        conds = []
        if lo is not None:
            conds.append(Condition(j, GE, lo))
        if hi is not None:
            conds.append(Condition(j, LT, hi))
        out[j] = tuple(conds)
    return out


def disaggregate(path):
    """All rules formed by non-empty subsets of a path's features.

    Conditions on the same feature are merged first, so a path involving
    ``m`` distinct features yields ``2**m - 1`` rules.
    """
    merged = merge_conditions(path)
    feats = list(merged)
    rules = []
    for size in range(1, len(feats) + 1):
        for subset in itertools.combinations(feats, size):
            rules.append(Rule(tuple(c for j in subset for c in merged[j])))
    return rules


@dataclass(frozen=True)
class RuleSet:
    """Result of rule extraction; ``status`` is ``"ok"`` or ``"empty"``."""

    rules: tuple
    n_candidates: int = 0
    n_dropped_support: int = 0
    n_dropped_duplicate: int = 0

    @property
    def status(self):
        return "ok" if self.rules else "empty"

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __getitem__(self, k):
        return self.rules[k]


def _round_rule(rule, kinds, digits):
    conds = []
    for c in rule.conditions:
        if kinds is None or kinds[c.j] == "continuous":
            c = Condition(c.j, c.op, round(c.c, digits))
        conds.append(c)
    merged = merge_conditions(conds)
    for cs in merged.values():
        if len(cs) == 2 and cs[0].c >= cs[1].c:
            return None  # rounding emptied the interval
    return Rule(tuple(c for cs in merged.values() for c in cs))


def extract_rules(forest, X, cfg, kinds=None):
    """Collect, disaggregate, deduplicate and filter rules from ``forest``.

    Steps: round continuous thresholds, disaggregate every path, drop exact
    duplicates (first occurrence wins), drop ``>=`` single conditions whose
    ``<`` complement is present, compute support on ``X``, drop rules outside
    ``[min_support, max_support]``, drop rules whose training column repeats
    (or complements) an earlier one, then attach the scale ``A_k``.
    """
    X = np.asarray(X, dtype=float)
    seen = {}
    for tree in forest.trees:
        for _, path in tree.paths():
            if not path:
                continue
            for rule in disaggregate(path):
                r = _round_rule(rule, kinds, cfg.round_digits)
                if r is not None and r.depth <= cfg.max_depth and r.key not in seen:
                    seen[r.key] = r
    n_candidates = len(seen)
    keys = set(seen)
    candidates = []
    for key, r in seen.items():
        if len(key) == 1 and key[0][1] == GE and ((key[0][0], LT, key[0][2]),) in keys:
            continue
        candidates.append(r)

    kept, dropped_support, dropped_dup = [], 0, 0
    columns = set()
    for r in candidates:
        col = r.evaluate(X).astype(bool)
        s = float(col.mean())
        if not (0.0 < s < 1.0) or s < cfg.min_support or s > cfg.max_support:
            dropped_support += 1
            continue
        packed = np.packbits(col).tobytes()
        if packed in columns or np.packbits(~col).tobytes() in columns:
            dropped_dup += 1
            continue
        columns.add(packed)
        kept.append(replace(r, support=s, scale=rule_scale(s, r.depth, cfg.mu, cfg.eta)))
    if not kept:
        logger.warning("rule extraction produced no rules; the model is linear-only")
    return RuleSet(tuple(kept), n_candidates, dropped_support, dropped_dup)


def rule_matrix(rules, X):
    """Binary ``n x q`` matrix of rule evaluations."""
    X = np.asarray(X, dtype=float)
    if not len(rules):
        return np.zeros((X.shape[0], 0))
    return np.column_stack([r.evaluate(X) for r in rules])
