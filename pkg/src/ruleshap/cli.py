"""Command-line entry point: ``ruleshap simulate | fit | explain | report``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import horseshoe, rulegen
from .dataset import DataError, FriedmanConfig, friedman_generate, load_csv, write_csv
from .inference import ConfigError, EffectReport, effect_report, interaction_report, rejection_rates
from .model import RuleShapModel, fit_ruleshap
from .shapley import model_shapley

logger = logging.getLogger("ruleshap")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad configuration or input detected before any compute."""


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunConfig:
    """Everything a command depends on besides its input files."""

    command: str
    out: str
    seed: int = 0
    alpha: float = 0.05
    # simulate
    n: int = 1000
    p: int = 10
    rho: float = 0.3
    sigma2: float = 100.0
    outcome_kind: str = "continuous"
    # fit
    data: str | None = None
    outcome: str = "y"
    iters: int = 22000
    burnin: int = 2000
    fast: bool = False
    trees: int = 500
    mtry: int | None = None
    mu: float = 1.0
    eta: float = 2.0
    sampler: str = "auto"
    # explain
    model: str | None = None
    probes: str | None = None
    interactions: bool = True
    # report
    effects: str | None = None
    interaction_cells: str | None = None
    grouping: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total_iters(self):
        return horseshoe.FAST_PROFILE["total_iters"] if self.fast else self.iters

    @property
    def burn_in(self):
        return horseshoe.FAST_PROFILE["burn_in"] if self.fast else self.burnin

    def validate(self):
        if self.extra:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(self.extra))}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        try:
            if self.command == "simulate":
                self.friedman()
            if self.command == "fit":
                self.smoothing()
                self.gibbs()
        except (ValueError, TypeError) as err:
            raise ValidationError(str(err)) from err
        needed = {"fit": ["data"], "explain": ["model", "data"], "report": ["effects"]}
        for key in needed.get(self.command, []):
            value = getattr(self, key)
            if value is None:
                raise ValidationError(f"--{key} is required for {self.command}")
            if not Path(value).exists():
                raise ValidationError(f"--{key}: {value} does not exist")
        for key in ("probes", "interaction_cells", "grouping"):
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ValidationError(f"--{key.replace('_', '-')}: {value} does not exist")
        return self

    def friedman(self):
        return FriedmanConfig(n=self.n, p=self.p, rho=self.rho, sigma2=self.sigma2,
                              seed=self.seed, outcome_kind=self.outcome_kind)

    def smoothing(self):
        return rulegen.SmoothingConfig(n_trees=self.trees, mtry=self.mtry, mu=self.mu,
                                       eta=self.eta, seed=self.seed)

    def gibbs(self):
        return horseshoe.GibbsConfig(total_iters=self.total_iters, burn_in=self.burn_in,
                                     seed=self.seed, method=self.sampler)

    def to_dict(self):
        d = asdict(self)
        d.pop("extra")
        return d


_CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command", "extra"}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="JSON file of option values; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--burnin", type=int)
    common.add_argument("--fast", action="store_true", default=None,
                        help="2000 iterations with 500 burn-in")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ruleshap", description="Rule ensembles with Shapley inference")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="write a Friedman dataset")
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--rho", type=float)
    sim.add_argument("--sigma2", type=float)
    sim.add_argument("--outcome-kind", dest="outcome_kind", choices=["continuous", "binary"])

    fit = sub.add_parser("fit", parents=[common], help="fit a model to a CSV dataset")
    fit.add_argument("--data")
    fit.add_argument("--outcome")
    fit.add_argument("--trees", type=int)
    fit.add_argument("--mtry", type=int)
    fit.add_argument("--mu", type=float)
    fit.add_argument("--eta", type=float)
    fit.add_argument("--sampler", choices=["auto", "cholesky", "auxiliary"])

    exp = sub.add_parser("explain", parents=[common], help="Shapley effect and interaction reports")
    exp.add_argument("--model", help="directory written by fit")
    exp.add_argument("--data", help="background CSV (the training data)")
    exp.add_argument("--probes", help="CSV of rows to explain; defaults to --data")
    exp.add_argument("--outcome")
    exp.add_argument("--no-interactions", dest="interactions", action="store_false", default=None)

    rep = sub.add_parser("report", parents=[common], help="rejection rates and interaction heat table")
    rep.add_argument("--effects", help="effects.csv written by explain")
    rep.add_argument("--interaction-cells", dest="interaction_cells", help="interactions.csv written by explain")
    rep.add_argument("--grouping", help="CSV (feature,group) or JSON object mapping features to groups")
    return parser


def resolve_config(args):
    """Merge defaults, the ``--config`` file and explicit flags, in that order."""
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ValidationError(f"--config: {err}") from err
        if not isinstance(loaded, dict):
            raise ValidationError("--config must hold a JSON object")
        values.update(loaded)
    for key, value in vars(args).items():
        if key in _CONFIG_KEYS and value is not None:
            values[key] = value
    if not values.get("out"):
        raise ValidationError("--out is required")
    extra = {k: v for k, v in values.items() if k not in _CONFIG_KEYS}
    known = {k: v for k, v in values.items() if k in _CONFIG_KEYS}
    cfg = RunConfig(command=args.command, extra=extra, **known)
    return cfg.validate()


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(cfg, out, outputs, info=None, timings=None):
    """Deterministic manifest plus a separate wall-clock timings file."""
    manifest = {
        "command": cfg.command,
        "version": _version(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    if info:
        manifest["info"] = info
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if timings is not None:
        (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return path


class _Timer:
    def __init__(self):
        self.marks = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.marks[name] = round(time.perf_counter() - self.t0, 6)

        return _Ctx()


def _outdir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ValidationError(f"cannot create output directory {out}: {err}") from err
    return out


def cmd_simulate(cfg):
    out = _outdir(cfg)
    timer = _Timer()
    with timer("simulate"):
        data = friedman_generate(cfg.friedman())
        path = write_csv(data, out / "data.csv")
    write_manifest(cfg, out, [path], timings=timer.marks)
    return path


def cmd_fit(cfg):
    out = _outdir(cfg)
    timer = _Timer()
    with timer("load"):
        try:
            data = load_csv(cfg.data, cfg.outcome)
        except DataError as err:
            raise ValidationError(str(err)) from err
    with timer("fit"):
        model, info = fit_ruleshap(data, cfg.smoothing(), cfg.gibbs(), seed=cfg.seed)
    info["dropped_rows"] = list(data.dropped_rows)
    model.save(out)
    outputs = [out / "model.json", out / "rules.jsonl", out / "draws.csv"]
    write_manifest(cfg, out, outputs, info=info, timings=timer.marks)
    return model


def _load_probes(path, model, outcome):
    try:
        data = load_csv(path, outcome, factor_levels=model.factor_levels(), require_outcome=False)
    except DataError as err:
        raise ValidationError(f"{path}: {err}") from err
    missing = [c for c in model.column_names if c not in data.names]
    extra = [c for c in data.names if c not in model.column_names]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing columns {missing}")
        if extra:
            parts.append(f"unexpected columns {extra}")
        raise ValidationError(f"{path}: schema mismatch: {'; '.join(parts)}")
    order = [data.names.index(c) for c in model.column_names]
    return data, data.X[:, order]


def _row_ids(data):
    """1-based data-row numbers of the rows kept after dropping missing ones."""
    dropped = set(data.dropped_rows)
    total = data.n + len(dropped)
    return np.array([i for i in range(1, total + 1) if i not in dropped], dtype=int)


def cmd_explain(cfg):
    out = _outdir(cfg)
    timer = _Timer()
    try:
        model = RuleShapModel.load(cfg.model)
    except (OSError, KeyError, ValueError) as err:
        raise ValidationError(f"--model: {err}") from err
    bdata, Xb = _load_probes(cfg.data, model, cfg.outcome)
    if cfg.probes:
        pdata, Xp = _load_probes(cfg.probes, model, cfg.outcome)
    else:
        pdata, Xp = bdata, None
    ids = _row_ids(pdata)
    with timer("shapley"):
        cube = model_shapley(model, Xb, Xp, interactions=cfg.interactions, probe_ids=ids)
    with timer("reports"):
        eff = effect_report(cube, cfg.alpha)
        eff_path = out / "effects.csv"
        eff.to_csv(eff_path)
        outputs = [eff_path]
        if cfg.interactions:
            inter = interaction_report(cube, cfg.alpha)
            cells_path, heat_path = out / "interactions.csv", out / "interaction_heat.csv"
            inter.to_csv(cells_path)
            inter.heat_csv(heat_path)
            outputs += [cells_path, heat_path]
    info = {"probes": int(cube.n_probes), "draws": int(cube.n_draws), "errors": cube.errors}
    write_manifest(cfg, out, outputs, info=info, timings=timer.marks)
    return eff


def read_grouping(path, features):
    """Feature-to-group mapping; every feature is ``signal`` when ``path`` is None."""
    if path is None:
        return {f: "signal" for f in features}
    path = Path(path)
    if path.suffix.lower() == ".json":
        mapping = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and [c.strip().lower() for c in rows[0]] == ["feature", "group"]:
            rows = rows[1:]
        mapping = {r[0].strip(): r[1].strip() for r in rows if r}
    missing = [f for f in features if f not in mapping]
    if missing:
        raise ValidationError(f"grouping does not cover features: {', '.join(missing)}")
    return mapping


def _heat_from_cells(path, features):
    F = len(features)
    pos = {f: i for i, f in enumerate(features)}
    counts = np.zeros((F, F), dtype=int)
    sums = np.zeros((F, F))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            try:
                f, g = pos[r["feature_a"]], pos[r["feature_b"]]
            except KeyError as err:
                raise ValidationError(f"{path}: unknown feature {err}") from None
            if int(r["significant"]):
                counts[f, g] += 1
                sums[f, g] += abs(float(r["mean"]))
                if f != g:
                    counts[g, f] += 1
                    sums[g, f] += abs(float(r["mean"]))
    mean_abs = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return counts, mean_abs


def cmd_report(cfg):
    out = _outdir(cfg)
    timer = _Timer()
    try:
        eff = EffectReport.from_csv(cfg.effects, alpha=cfg.alpha)
    except (KeyError, ValueError) as err:
        raise ValidationError(f"--effects: {err}") from err
    grouping = read_grouping(cfg.grouping, eff.feature_names)
    with timer("report"):
        rates = rejection_rates(eff, grouping)
        rates_path = out / "rejection_rates.csv"
        per_feature = eff.rejection_rates
        with rates_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "n_features", "rejection_rate"])
            for g, rate in rates.items():
                k = sum(1 for f in eff.feature_names if grouping[f] == g)
                w.writerow([g, k, repr(rate)])
        feat_path = out / "feature_rates.csv"
        with feat_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "group", "rejection_rate"])
            for f, name in enumerate(eff.feature_names):
                w.writerow([name, grouping[name], repr(float(per_feature[f]))])
        outputs = [rates_path, feat_path]
        if cfg.interaction_cells:
            counts, mean_abs = _heat_from_cells(cfg.interaction_cells, eff.feature_names)
            heat_path = out / "interaction_heat.csv"
            with heat_path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature_a", "feature_b", "count", "mean_abs"])
                for i, a in enumerate(eff.feature_names):
                    for j, b in enumerate(eff.feature_names):
                        w.writerow([a, b, int(counts[i, j]), repr(float(mean_abs[i, j]))])
            outputs.append(heat_path)
    write_manifest(cfg, out, outputs, info={"rates": rates}, timings=timer.marks)
    return rates


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "explain": cmd_explain, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[cfg.command](cfg)
    except (ValidationError, ConfigError, DataError) as err:
        print(f"ruleshap {args.command}: invalid input: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as err:  # numeric or stage failure
        print(f"ruleshap {args.command}: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
