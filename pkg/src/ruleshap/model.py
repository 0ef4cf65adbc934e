"""Fitted rule-ensemble model and the end-to-end fitting pipeline."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import horseshoe, rulegen
from .dataset import Dataset, Preprocessing, fit_preprocessing

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, err):
        super().__init__(f"{stage}: {err}")
        self.stage = stage
        self.__cause__ = err


@dataclass(frozen=True)
class RuleShapModel:
    """Preprocessing record, rules and posterior draws of one fit.

    Rules and linear terms are indexed by design column; ``groups`` maps
    each column to the original feature it came from.
    """

    column_names: tuple
    kinds: tuple
    groups: tuple
    levels: tuple
    preprocessing: Preprocessing
    rules: tuple
    draws: horseshoe.PosteriorDraws
    outcome_name: str = "y"
    config: dict = field(default_factory=dict)

    @property
    def feature_names(self):
        return tuple(dict.fromkeys(self.groups))

    def column_group_index(self):
        names = self.feature_names
        return [names.index(g) for g in self.groups]

    @property
    def linear_columns(self):
        return self.preprocessing.linear_columns

    def linear_design(self, X):
        return self.preprocessing.linear_terms(X)

    def rule_design(self, X):
        return rulegen.rule_matrix(self.rules, X)

    def predict(self, X):
        """Per-draw predictions ``(draws, n)``."""
        return self.draws.predict(self.rule_design(X), self.linear_design(X))

    def predict_mean(self, X):
        return self.draws.predict_mean(self.rule_design(X), self.linear_design(X))

    def linear_coefficients(self):
        """Posterior draws of linear coefficients on the original feature scale."""
        sd = np.asarray(self.preprocessing.linear_scales)[list(self.linear_columns)]
        return self.draws.b / sd

    def factor_levels(self):
        out = {}
        for kind, g, lev in zip(self.kinds, self.groups, self.levels):
            if kind == "dummy":
                out.setdefault(g, []).append(lev)
        return out

    def metadata(self):
        d = self.draws
        return {
            "outcome_name": self.outcome_name,
            "column_names": list(self.column_names),
            "kinds": list(self.kinds),
            "groups": list(self.groups),
            "levels": list(self.levels),
            "preprocessing": self.preprocessing.to_dict(),
            "posterior": {
                "total_iters": d.total_iters,
                "burn_in": d.burn_in,
                "seed": d.seed,
                "y_mean": float(d.y_mean),
                "rule_means": [float(v) for v in d.rule_means],
                "linear_means": [float(v) for v in d.linear_means],
            },
            "config": self.config,
        }

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "model.json").open("w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        rulegen.write_rules(self.rules, directory / "rules.jsonl")
        self.draws.to_csv(directory / "draws.csv")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        if not (directory / "model.json").exists():
            raise FileNotFoundError(f"no model.json in {directory}")
        with (directory / "model.json").open() as fh:
            meta = json.load(fh)
        post = meta["posterior"]
        draws = horseshoe.PosteriorDraws.from_csv(
            directory / "draws.csv",
            total_iters=post["total_iters"], burn_in=post["burn_in"], seed=post["seed"],
            y_mean=post["y_mean"], rule_means=post["rule_means"], linear_means=post["linear_means"],
        )
        return cls(
            column_names=tuple(meta["column_names"]),
            kinds=tuple(meta["kinds"]),
            groups=tuple(meta["groups"]),
            levels=tuple(meta["levels"]),
            preprocessing=Preprocessing.from_dict(meta["preprocessing"]),
            rules=tuple(rulegen.read_rules(directory / "rules.jsonl")),
            draws=draws,
            outcome_name=meta["outcome_name"],
            config=meta.get("config", {}),
        )


def _child_seeds(seed, k):
    return [int(s.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for s in np.random.SeedSequence(seed).spawn(k)]


def fit_ruleshap(data, smoothing=None, gibbs=None, seed=0, lower_q=0.025, upper_q=0.975):
    """Fit the full pipeline on ``data``.

    preprocessing -> linear-only horseshoe residuals -> smoothing forest on
    the residuals -> rule extraction -> horseshoe fit on rules plus linear
    terms.  Returns ``(model, info)`` where ``info`` records per-stage counts.
    """
    smoothing = smoothing or rulegen.SmoothingConfig(seed=seed)
    gibbs = gibbs or horseshoe.GibbsConfig(seed=seed)
    s_resid, s_forest, s_final = _child_seeds(seed, 3)
    info = {}

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except Exception as err:  # surfaced with the stage name
            raise StageError(name, err) from err

    pre = stage("preprocessing", fit_preprocessing, data, lower_q, upper_q)
    XL = pre.linear_terms(data.X)
    info["linear_terms"] = len(pre.linear_columns)
    info["excluded_columns"] = [data.names[j] for j in pre.excluded]

    resid_cfg = horseshoe.GibbsConfig(
        total_iters=gibbs.total_iters, burn_in=gibbs.burn_in, seed=s_resid,
        linear_scale=gibbs.linear_scale, method=gibbs.method,
    )
    resid = stage("residualize", rulegen.residualize, XL, data.y, resid_cfg)

    rng = np.random.default_rng(s_forest)
    forest = stage("smoothing_forest", rulegen.smoothing_forest, data.X, resid, smoothing, rng)
    ruleset = stage("extract_rules", rulegen.extract_rules, forest, data.X, smoothing, data.kinds)
    info.update(
        rule_candidates=ruleset.n_candidates,
        rules=len(ruleset),
        rules_dropped_support=ruleset.n_dropped_support,
        rules_dropped_duplicate_column=ruleset.n_dropped_duplicate,
        rule_status=ruleset.status,
    )
    if ruleset.status == "empty":
        logger.warning("no rules survived extraction; fitting a linear-only model")

    XR = rulegen.rule_matrix(ruleset.rules, data.X)
    scales = np.array([r.scale for r in ruleset.rules])
    dm = stage("design", horseshoe.DesignMatrices, XR, XL, data.y, scales)
    draws = stage("gibbs_fit", horseshoe.gibbs_fit, dm, gibbs.total_iters, gibbs.burn_in, s_final,
                  horseshoe.GibbsConfig(total_iters=gibbs.total_iters, burn_in=gibbs.burn_in, seed=s_final,
                                        linear_scale=gibbs.linear_scale, method=gibbs.method))
    model = RuleShapModel(
        column_names=data.names,
        kinds=data.kinds,
        groups=data.groups,
        levels=data.levels,
        preprocessing=pre,
        rules=ruleset.rules,
        draws=draws,
        outcome_name=data.outcome_name,
        config={"seed": seed, "smoothing": asdict(smoothing), "gibbs": asdict(gibbs),
                "winsor_quantiles": [lower_q, upper_q]},
    )
    return model, info
