import csv
import json

import numpy as np
import pytest

from conftest import assert_shapley_axioms
from ruleshap import cli
from ruleshap.dataset import load_csv
from ruleshap.model import RuleShapModel

FIT_FLAGS = ["--trees", "5", "--iters", "200", "--burnin", "50"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    """simulate -> fit -> explain on a small Friedman dataset."""
    root = tmp_path_factory.mktemp("flow")
    assert cli.main(["simulate", "--out", str(root / "sim"), "--n", "150", "--p", "6", "--seed", "2"]) == 0
    data = root / "sim" / "data.csv"
    assert cli.main(["fit", "--out", str(root / "fit"), "--data", str(data), "--seed", "2", *FIT_FLAGS]) == 0
    lines = data.read_text().splitlines()
    probes = root / "probes.csv"
    probes.write_text("\n".join(lines[:6]) + "\n")
    code = cli.main(["explain", "--out", str(root / "exp"), "--model", str(root / "fit"),
                     "--data", str(data), "--probes", str(probes)])
    assert code == 0
    return root


class TestSimulate:
    def test_byte_identical_reruns(self, tmp_path):
        argv = ["simulate", "--n", "100", "--p", "10", "--seed", "1"]
        assert cli.main([*argv, "--out", str(tmp_path / "a")]) == 0
        assert cli.main([*argv, "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()

    def test_manifest_stable_in_place(self, tmp_path):
        argv = ["simulate", "--n", "50", "--out", str(tmp_path), "--seed", "3"]
        cli.main(argv)
        first = (tmp_path / "manifest.json").read_bytes()
        cli.main(argv)
        assert (tmp_path / "manifest.json").read_bytes() == first
        assert (tmp_path / "timings.json").exists()

    def test_p_below_five_rejected(self, tmp_path, capsys):
        assert cli.main(["simulate", "--out", str(tmp_path), "--p", "4"]) == cli.EXIT_VALIDATION
        assert "invalid input" in capsys.readouterr().err

    def test_bad_alpha_rejected(self, tmp_path):
        assert cli.main(["simulate", "--out", str(tmp_path), "--alpha", "1.5"]) == cli.EXIT_VALIDATION

    def test_config_file_overridden_by_flags(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"n": 40, "p": 7, "seed": 5}))
        assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path / "o"), "--n", "30"]) == 0
        d = load_csv(tmp_path / "o" / "data.csv", "y")
        assert (d.n, d.p) == (30, 7)
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["seed"] == 5

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"bogus": 1}))
        assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION


class TestFit:
    def test_outputs_written(self, flow):
        for name in ("model.json", "rules.jsonl", "draws.csv", "manifest.json", "timings.json"):
            assert (flow / "fit" / name).exists()
        manifest = json.loads((flow / "fit" / "manifest.json").read_text())
        assert manifest["config"]["iters"] == 200
        assert manifest["info"]["rule_status"] == "ok"

    def test_model_satisfies_axioms(self, flow):
        model = RuleShapModel.load(flow / "fit")
        data = load_csv(flow / "sim" / "data.csv", "y")
        assert_shapley_axioms(model, data.X, data.X[:10])

    def test_rerun_identical_manifest(self, flow):
        out = flow / "fit"
        before = {n: (out / n).read_bytes() for n in ("manifest.json", "draws.csv", "rules.jsonl", "model.json")}
        code = cli.main(["fit", "--out", str(out), "--data", str(flow / "sim" / "data.csv"), "--seed", "2", *FIT_FLAGS])
        assert code == 0
        for name, content in before.items():
            assert (out / name).read_bytes() == content

    def test_missing_data_file(self, tmp_path):
        assert cli.main(["fit", "--out", str(tmp_path), "--data", str(tmp_path / "none.csv")]) == cli.EXIT_VALIDATION

    def test_missing_outcome(self, flow, tmp_path, capsys):
        code = cli.main(["fit", "--out", str(tmp_path), "--data", str(flow / "sim" / "data.csv"), "--outcome", "zz"])
        assert code == cli.EXIT_VALIDATION
        assert "'zz'" in capsys.readouterr().err

    def test_runtime_error_exit_code(self, flow, tmp_path, monkeypatch):
        def boom(*args, **kw):
            raise FloatingPointError("chain diverged")

        monkeypatch.setattr(cli, "fit_ruleshap", boom)
        code = cli.main(["fit", "--out", str(tmp_path), "--data", str(flow / "sim" / "data.csv"), *FIT_FLAGS])
        assert code == cli.EXIT_RUNTIME


class TestExplain:
    def test_row_count(self, flow):
        rows = _rows(flow / "exp" / "effects.csv")
        assert len(rows) == 5 * 6
        assert [int(r["row_id"]) for r in rows[::6]] == [1, 2, 3, 4, 5]
        for r in rows:
            sig = float(r["lower"]) > 0 or float(r["upper"]) < 0
            assert int(r["significant"]) == int(sig)

    def test_interaction_outputs(self, flow):
        heat = _rows(flow / "exp" / "interaction_heat.csv")
        assert len(heat) == 36
        table = {(r["feature_a"], r["feature_b"]): int(r["count"]) for r in heat}
        assert all(table[(a, b)] == table[(b, a)] for a, b in table)
        assert all(0 <= c <= 5 for c in table.values())

    def test_schema_mismatch_named(self, flow, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,x2,x3,x4,x5,extra\n0.1,0.2,0.3,0.4,0.5,1\n")
        code = cli.main(["explain", "--out", str(tmp_path / "o"), "--model", str(flow / "fit"),
                         "--data", str(flow / "sim" / "data.csv"), "--probes", str(bad)])
        assert code == cli.EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "x6" in err and "extra" in err

    def test_rerun_identical(self, flow):
        out = flow / "exp"
        before = (out / "manifest.json").read_bytes()
        cli.main(["explain", "--out", str(out), "--model", str(flow / "fit"),
                  "--data", str(flow / "sim" / "data.csv"), "--probes", str(flow / "probes.csv")])
        assert (out / "manifest.json").read_bytes() == before


class TestReport:
    def test_signal_noise_rates(self, flow, tmp_path):
        grouping = tmp_path / "g.csv"
        grouping.write_text("feature,group\n" + "".join(
            f"x{j},{'signal' if j <= 5 else 'noise'}\n" for j in range(1, 7)))
        code = cli.main(["report", "--out", str(tmp_path / "r"), "--effects", str(flow / "exp" / "effects.csv"),
                         "--grouping", str(grouping),
                         "--interaction-cells", str(flow / "exp" / "interactions.csv")])
        assert code == 0
        rates = _rows(tmp_path / "r" / "rejection_rates.csv")
        assert [r["group"] for r in rates] == ["signal", "noise"]
        assert [int(r["n_features"]) for r in rates] == [5, 1]
        feat = _rows(tmp_path / "r" / "feature_rates.csv")
        signal = np.mean([float(r["rejection_rate"]) for r in feat if r["group"] == "signal"])
        assert float(rates[0]["rejection_rate"]) == pytest.approx(signal)
        # heat table rebuilt from the cells matches the one written by explain
        assert _rows(tmp_path / "r" / "interaction_heat.csv") == _rows(flow / "exp" / "interaction_heat.csv")

    def test_all_signal_default(self, flow, tmp_path):
        assert cli.main(["report", "--out", str(tmp_path), "--effects", str(flow / "exp" / "effects.csv")]) == 0
        rates = _rows(tmp_path / "rejection_rates.csv")
        assert len(rates) == 1 and rates[0]["group"] == "signal"

    def test_json_grouping(self, flow, tmp_path):
        g = tmp_path / "g.json"
        g.write_text(json.dumps({f"x{j}": "noise" if j > 3 else "signal" for j in range(1, 7)}))
        assert cli.main(["report", "--out", str(tmp_path / "r"), "--effects", str(flow / "exp" / "effects.csv"),
                         "--grouping", str(g)]) == 0
        assert len(_rows(tmp_path / "r" / "rejection_rates.csv")) == 2

    def test_incomplete_grouping(self, flow, tmp_path, capsys):
        g = tmp_path / "g.csv"
        g.write_text("x1,signal\n")
        code = cli.main(["report", "--out", str(tmp_path / "r"), "--effects", str(flow / "exp" / "effects.csv"),
                         "--grouping", str(g)])
        assert code == cli.EXIT_VALIDATION
        assert "x2" in capsys.readouterr().err


class TestNullModel:
    def test_all_zero_report(self, tmp_path):
        # zero coefficients give zero attributions everywhere
        from conftest import hand_model
        from ruleshap.dataset import Dataset, write_csv
        from ruleshap.rulegen import GE, Rule

        rng = np.random.default_rng(0)
        data = Dataset(names=["a", "b"], X=rng.uniform(size=(30, 2)), y=np.zeros(30))
        write_csv(data, tmp_path / "d.csv")
        hand_model(data, [Rule([(0, GE, 0.5)])], np.zeros((100, 1)), np.zeros((100, 2))).save(tmp_path / "m")
        code = cli.main(["explain", "--out", str(tmp_path / "o"), "--model", str(tmp_path / "m"),
                         "--data", str(tmp_path / "d.csv")])
        assert code == 0
        rows = _rows(tmp_path / "o" / "effects.csv")
        assert len(rows) == 60
        assert all(float(r["mean"]) == 0.0 and r["significant"] == "0" for r in rows)
