"""Data ingestion, preprocessing and Friedman-style simulation.

A :class:`Dataset` is a dense float feature matrix plus outcome.  Categorical
CSV columns are expanded at load time into one dummy column per level, coded
``2`` for members and ``-0.5`` otherwise, so every downstream module sees
only real-valued columns.  Each column remembers the original feature
(``group``) it came from, which the Shapley module uses to aggregate
dummy-column attributions back into one factor-level attribution.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
DUMMY = "dummy"

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan"})
DUMMY_MEMBER = 2.0
DUMMY_NONMEMBER = -0.5

#: Approximate mean of the Friedman signal under independent uniforms.
FRIEDMAN_ETA_BAR = 14.4


class DataError(ValueError):
    """Raised for malformed input data or invalid data configuration."""


def quantile(values, q):
    """Empirical quantile with plotting position ``(k - 1) / (n - 1)``.

    This is linear interpolation between adjacent order statistics and is
    shared by winsorization and posterior summaries.
    """
    return np.quantile(np.asarray(values, dtype=float), q, method="linear", axis=0)


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with outcome.

    Attributes
    ----------
    names : tuple of str
        Column names; dummy columns are named ``"<factor>=<level>"``.
    X : ndarray of shape (n, p)
    y : ndarray of shape (n,)
    kinds : tuple of str
        ``"continuous"`` or ``"dummy"`` per column.
    groups : tuple of str
        Original feature each column belongs to (its own name when continuous).
    levels : tuple
        Category label for dummy columns, ``None`` otherwise.
    """

    names: tuple
    X: np.ndarray
    y: np.ndarray
    kinds: tuple = None
    groups: tuple = None
    levels: tuple = None
    outcome_name: str = "y"
    dropped_rows: tuple = ()
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).ravel()
        if X.ndim != 2:
            raise DataError("feature matrix must be two-dimensional")
        n, p = X.shape
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if y.shape[0] != n:
            raise DataError(f"outcome has {y.shape[0]} rows, features have {n}")
        names = tuple(str(s) for s in self.names)
        if len(names) != p:
            raise DataError(f"{len(names)} names for {p} columns")
        if len(set(names)) != p:
            raise DataError("column names must be unique")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite values")
        kinds = tuple(self.kinds) if self.kinds is not None else (CONTINUOUS,) * p
        groups = tuple(self.groups) if self.groups is not None else names
        levels = tuple(self.levels) if self.levels is not None else (None,) * p
        if not (len(kinds) == len(groups) == len(levels) == p):
            raise DataError("column metadata length mismatch")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "levels", levels)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def column(self, name):
        return self.X[:, self.names.index(name)]

    def feature_groups(self):
        """Ordered mapping of original feature name to its column indices."""
        out = {}
        for j, g in enumerate(self.groups):
            out.setdefault(g, []).append(j)
        return out

    def factor_levels(self):
        """Mapping of categorical feature name to its ordered level labels."""
        out = {}
        for kind, g, lev in zip(self.kinds, self.groups, self.levels):
            if kind == DUMMY:
                out.setdefault(g, []).append(lev)
        return out


# ---------------------------------------------------------------------------
# CSV input / output
# ---------------------------------------------------------------------------


def _parse_cell(cell):
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return None
    try:
        return float(cell)
    except ValueError:
        return cell


def dummy_code(levels, categories=None):
    """Code a categorical sequence into one ``2 / -0.5`` column per level.

    Parameters
    ----------
    levels : sequence
        Category label for each row.
    categories : sequence, optional
        Level order to use.  Defaults to sorted distinct labels.

    Returns
    -------
    categories : list
    coded : ndarray of shape (n, K)
    """
    labels = np.asarray([str(v) for v in levels], dtype=object)
    if categories is None:
        categories = sorted(set(labels.tolist()))
        if len(categories) < 2:
            raise DataError("degenerate factor: fewer than two distinct levels")
    categories = [str(c) for c in categories]
    coded = np.full((len(labels), len(categories)), DUMMY_NONMEMBER)
    for k, c in enumerate(categories):
        coded[labels == c, k] = DUMMY_MEMBER
    return categories, coded


def load_csv(path, outcome_name, factor_levels=None, require_outcome=True):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Non-numeric cells mark a column as categorical; it is expanded with
    :func:`dummy_code`.  Rows containing a missing cell are dropped and
    recorded in ``Dataset.dropped_rows`` (1-based data-row indices).

    ``factor_levels`` fixes the level order for categorical columns, which
    keeps probe files aligned with the training coding.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            rows.append([_parse_cell(c) for c in row])
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    if outcome_name not in header:
        if require_outcome:
            raise DataError(f"outcome column {outcome_name!r} not found in header")
    if not rows:
        raise DataError(f"{path}: no data rows")

    columns = list(zip(*rows))
    for name, col in zip(header, columns):
        if all(v is None for v in col):
            raise DataError(f"column {name!r} rejected: all values missing")

    keep = [i for i, row in enumerate(rows) if all(v is not None for v in row)]
    keep_set = set(keep)
    dropped = tuple(i + 1 for i in range(len(rows)) if i not in keep_set)
    warnings = ()
    if dropped:
        msg = f"dropped {len(dropped)} row(s) with missing values: {list(dropped)}"
        logger.warning(msg)
        warnings = (msg,)
    if not keep:
        raise DataError(f"{path}: every row has a missing value")

    names, mats, kinds, groups, levels = [], [], [], [], []
    y = np.zeros(len(keep))
    factor_levels = dict(factor_levels or {})
    for name, col in zip(header, columns):
        vals = [col[i] for i in keep]
        if name == outcome_name:
            if any(isinstance(v, str) for v in vals):
                raise DataError(f"outcome column {name!r} must be numeric")
            y = np.asarray(vals, dtype=float)
            continue
        if any(isinstance(v, str) for v in vals) or name in factor_levels:
            cats, coded = dummy_code(
                [_label(v) for v in vals], categories=factor_levels.get(name)
            )
            for k, c in enumerate(cats):
                names.append(f"{name}={c}")
                mats.append(coded[:, k])
                kinds.append(DUMMY)
                groups.append(name)
                levels.append(c)
        else:
            names.append(name)
            mats.append(np.asarray(vals, dtype=float))
            kinds.append(CONTINUOUS)
            groups.append(name)
            levels.append(None)
    X = np.column_stack(mats) if mats else np.zeros((len(keep), 0))
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DataError(f"{path}: non-finite numeric values")
    return Dataset(
        names=names,
        X=X,
        y=y,
        kinds=kinds,
        groups=groups,
        levels=levels,
        outcome_name=outcome_name,
        dropped_rows=dropped,
        warnings=warnings,
    )


def _label(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _fmt(v):
    return repr(float(v))


def write_csv(data, path):
    """Write ``data`` in the same CSV dialect :func:`load_csv` reads.

    Dummy columns are folded back into one categorical column per factor.
    """
    header, cols = [], []
    for g, idx in data.feature_groups().items():
        header.append(g)
        if data.kinds[idx[0]] == DUMMY:
            block = data.X[:, idx]
            labels = [data.levels[j] for j in idx]
            cols.append([labels[int(np.argmax(r))] for r in block])
        else:
            cols.append([_fmt(v) for v in data.X[:, idx[0]]])
    header.append(data.outcome_name)
    cols.append([_fmt(v) for v in data.y])
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*cols))
    return path


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessing:
    """Winsorization bounds and linear-term centering/scaling.

    Continuous columns are clipped to ``winsor_bounds`` then standardized.
    Dummy columns keep their ``2 / -0.5`` coding and are only centered.
    Columns with zero variance after winsorization are excluded from the
    linear terms and listed in ``excluded``.
    """

    names: tuple
    kinds: tuple
    winsor_bounds: tuple  # (lower, upper) per column; (-inf, inf) for dummies
    linear_means: tuple
    linear_scales: tuple
    linear_columns: tuple
    excluded: tuple = ()
    dummy_coding: tuple = ((True, DUMMY_MEMBER), (False, DUMMY_NONMEMBER))

    def winsorize(self, X):
        X = np.asarray(X, dtype=float)
        lo = np.array([b[0] for b in self.winsor_bounds])
        hi = np.array([b[1] for b in self.winsor_bounds])
        return np.clip(X, lo, hi)

    def linear_terms(self, X):
        """Linear design matrix: winsorized, centered and scaled columns."""
        W = self.winsorize(X)
        cols = list(self.linear_columns)
        mu = np.asarray(self.linear_means)[cols]
        sd = np.asarray(self.linear_scales)[cols]
        return (W[:, cols] - mu) / sd

    def to_dict(self):
        return {
            "names": list(self.names),
            "kinds": list(self.kinds),
            "winsor_bounds": [[float(a), float(b)] for a, b in self.winsor_bounds],
            "linear_means": [float(v) for v in self.linear_means],
            "linear_scales": [float(v) for v in self.linear_scales],
            "linear_columns": [int(v) for v in self.linear_columns],
            "excluded": [int(v) for v in self.excluded],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            names=tuple(d["names"]),
            kinds=tuple(d["kinds"]),
            winsor_bounds=tuple((float(a), float(b)) for a, b in d["winsor_bounds"]),
            linear_means=tuple(d["linear_means"]),
            linear_scales=tuple(d["linear_scales"]),
            linear_columns=tuple(d["linear_columns"]),
            excluded=tuple(d["excluded"]),
        )


def fit_preprocessing(data, lower_q=0.025, upper_q=0.975):
    """Estimate winsorization bounds and linear-term moments on ``data``."""
    if not (0 <= lower_q < upper_q <= 1):
        raise DataError(f"invalid quantile pair ({lower_q}, {upper_q})")
    if data.n < 2:
        raise DataError("insufficient data: preprocessing needs at least 2 rows")
    bounds, means, scales, linear, excluded = [], [], [], [], []
    for j, kind in enumerate(data.kinds):
        col = data.X[:, j]
        if kind == CONTINUOUS:
            lo, hi = (float(v) for v in quantile(col, [lower_q, upper_q]))
            w = np.clip(col, lo, hi)
            sd = float(np.std(w))
        else:
            lo, hi = -math.inf, math.inf
            w = col
            sd = 1.0 if np.ptp(col) > 0 else 0.0
        bounds.append((lo, hi))
        means.append(float(np.mean(w)))
        # tolerance-based test: a constant column can pick up rounding noise
        if sd > 1e-12 * max(1.0, float(np.max(np.abs(w)))):
            scales.append(sd)
            linear.append(j)
        else:
            scales.append(1.0)
            excluded.append(j)
    if excluded:
        logger.info(
            "zero-variance columns excluded from linear terms: %s",
            [data.names[j] for j in excluded],
        )
    return Preprocessing(
        names=data.names,
        kinds=data.kinds,
        winsor_bounds=tuple(bounds),
        linear_means=tuple(means),
        linear_scales=tuple(scales),
        linear_columns=tuple(linear),
        excluded=tuple(excluded),
    )


# ---------------------------------------------------------------------------
# Friedman simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FriedmanConfig:
    n: int = 1000
    p: int = 10
    rho: float = 0.3
    sigma2: float = 100.0
    seed: int = 0
    outcome_kind: str = "continuous"

    def __post_init__(self):
        if int(self.n) < 1:
            raise DataError("n must be a positive integer")
        if int(self.p) < 5:
            raise DataError("p must be at least 5 so all signal features exist")
        if not (0 <= self.rho < 1):
            raise DataError("rho must lie in [0, 1)")
        if self.sigma2 < 0:
            raise DataError("sigma2 must be non-negative")
        if self.outcome_kind not in ("continuous", "binary"):
            raise DataError(f"unknown outcome_kind {self.outcome_kind!r}")


def friedman_signal(X):
    """Noise-free Friedman response ``10 sin(pi x1 x2) + 20 (x3 - .5)^2 + 10 x4 + 5 x5``."""
    X = np.asarray(X, dtype=float)
    return (
        10 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20 * (X[:, 2] - 0.5) ** 2
        + 10 * X[:, 3]
        + 5 * X[:, 4]
    )


def copula_correlation(rho):
    """Gaussian correlation whose uniform-marginal image has Pearson ``rho``."""
    return 2 * math.sin(math.pi * rho / 6)


def correlated_uniforms(n, p, rho, rng):
    r = copula_correlation(rho)
    common = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, p))
    Z = math.sqrt(r) * common + math.sqrt(1 - r) * own
    return ndtr(Z)


def friedman_generate(cfg):
    """Simulate a Friedman benchmark dataset; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    X = correlated_uniforms(int(cfg.n), int(cfg.p), cfg.rho, rng)
    eta = friedman_signal(X)
    if cfg.outcome_kind == "continuous":
        y = eta + math.sqrt(cfg.sigma2) * rng.standard_normal(int(cfg.n))
    else:
        prob = 1.0 / (1.0 + np.exp(-(eta - FRIEDMAN_ETA_BAR)))
        y = (rng.uniform(size=int(cfg.n)) < prob).astype(float)
    names = [f"x{j + 1}" for j in range(int(cfg.p))]
    return Dataset(names=names, X=X, y=y, outcome_name="y")
