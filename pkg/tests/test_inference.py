import warnings

import numpy as np
import pytest

from conftest import hand_model
from ruleshap.dataset import Dataset
from ruleshap.inference import (
    ConfigError,
    EffectReport,
    effect_report,
    interaction_report,
    rejection_rates,
    rulefit_importance,
)
from ruleshap.rulegen import GE, LT, Rule
from ruleshap.shapley import ShapleyCube, model_shapley


def _cube(values, names=None):
    values = np.asarray(values, dtype=float)
    D, P, F = values.shape
    names = names or tuple(f"x{f + 1}" for f in range(F))
    return ShapleyCube(feature_names=names, values=values, base=np.zeros(D), probe_ids=np.arange(1, P + 1))


def _normal_data(seed=0, n=500, p=3):
    X = np.random.default_rng(seed).normal(size=(n, p))
    return Dataset(names=[f"x{j + 1}" for j in range(p)], X=X, y=np.zeros(n))


class TestEffectReport:
    def test_all_zero_not_significant(self):
        rep = effect_report(_cube(np.zeros((200, 2, 1))))
        np.testing.assert_array_equal(rep.lower, 0.0)
        np.testing.assert_array_equal(rep.upper, 0.0)
        assert not rep.significant.any()

    def test_alternating_sign_not_significant(self):
        v = np.where(np.arange(200) % 2 == 0, 1.0, -1.0)[:, None, None]
        rep = effect_report(_cube(v))
        assert rep.lower[0, 0] < 0 < rep.upper[0, 0]
        assert not rep.significant[0, 0]

    def test_tight_positive_significant(self):
        v = 2.0 + 0.01 * np.random.default_rng(0).normal(size=(1000, 1, 1))
        rep = effect_report(_cube(v))
        assert rep.significant[0, 0]
        assert rep.mean[0, 0] == pytest.approx(2.0, abs=0.01)

    def test_flag_consistency_and_order(self):
        v = np.random.default_rng(1).normal(loc=np.linspace(-3, 3, 20)[None, :, None], size=(300, 20, 4))
        rep = effect_report(_cube(v))
        assert np.all(rep.lower <= rep.upper)
        np.testing.assert_array_equal(rep.significant, (rep.lower > 0) | (rep.upper < 0))

    def test_alpha_monotone(self):
        v = np.random.default_rng(2).normal(loc=np.linspace(-3, 3, 30)[None, :, None], size=(400, 30, 3))
        cube = _cube(v)
        rates = [effect_report(cube, a).rejection_rates for a in (0.2, 0.1, 0.05, 0.01)]
        for wide, narrow in zip(rates[1:], rates[:-1]):
            assert np.all(wide <= narrow)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_rejected(self, alpha):
        with pytest.raises(ConfigError):
            effect_report(_cube(np.zeros((200, 1, 1))), alpha)

    def test_few_draws_warn(self):
        with pytest.warns(RuntimeWarning, match="draws"):
            effect_report(_cube(np.zeros((10, 1, 1))))

    def test_csv_roundtrip(self, tmp_path):
        v = np.random.default_rng(3).normal(size=(150, 4, 2))
        rep = effect_report(_cube(v))
        rep.to_csv(tmp_path / "e.csv")
        back = EffectReport.from_csv(tmp_path / "e.csv")
        assert back.feature_names == rep.feature_names
        np.testing.assert_array_equal(back.row_ids, rep.row_ids)
        np.testing.assert_array_equal(back.mean, rep.mean)
        np.testing.assert_array_equal(back.significant, rep.significant)


class TestRejectionRates:
    grouping = {"x1": "signal", "x2": "signal", "x3": "noise"}

    def test_none_significant(self):
        rep = effect_report(_cube(np.zeros((200, 5, 3))))
        assert rejection_rates(rep, self.grouping) == {"signal": 0.0, "noise": 0.0}

    def test_all_significant(self):
        rep = effect_report(_cube(np.ones((200, 5, 3))))
        assert rejection_rates(rep, self.grouping) == {"signal": 1.0, "noise": 1.0}

    def test_group_average_of_feature_rates(self):
        v = np.zeros((200, 4, 3))
        v[:, :1, 0] = 1.0  # x1 significant on 1 of 4 probes
        v[:, :, 1] = 1.0  # x2 on all
        rates = rejection_rates(effect_report(_cube(v)), self.grouping)
        assert rates["signal"] == pytest.approx((0.25 + 1.0) / 2)
        assert rates["noise"] == 0.0

    def test_grouping_must_cover(self):
        rep = effect_report(_cube(np.zeros((200, 1, 3))))
        with pytest.raises(ConfigError, match="x3"):
            rejection_rates(rep, {"x1": "signal", "x2": "noise"})


class TestInteractionReport:
    def test_additive_model_no_counts(self):
        d = _normal_data(1, n=80)
        rules = [Rule([(0, GE, 0.0)]), Rule([(1, LT, 0.5)])]
        model = hand_model(d, rules, np.ones((120, 2)), np.ones((120, 3)))
        rep = interaction_report(model_shapley(model, d.X))
        np.testing.assert_array_equal(rep.counts, 0)
        assert rep.cells == {}

    def test_single_pair_support(self):
        d = _normal_data(2, n=80)
        rng = np.random.default_rng(4)
        a = 3.0 + 0.1 * rng.normal(size=(150, 1))
        model = hand_model(d, [Rule([(0, GE, 0.0), (2, GE, 0.0)])], a, np.zeros((150, 3)))
        rep = interaction_report(model_shapley(model, d.X))
        assert rep.counts[0, 2] > 0
        mask = np.ones((3, 3), dtype=bool)
        mask[0, 2] = mask[2, 0] = False
        np.testing.assert_array_equal(rep.counts[mask], 0)
        np.testing.assert_array_equal(rep.counts, rep.counts.T)
        np.testing.assert_array_equal(rep.mean_abs, rep.mean_abs.T)
        assert np.all(rep.counts <= d.n)

    def test_csv_outputs(self, tmp_path):
        d = _normal_data(3, n=20)
        model = hand_model(d, [Rule([(0, GE, 0.0), (1, GE, 0.0)])], np.full((100, 1), 2.0), np.zeros((100, 3)))
        rep = interaction_report(model_shapley(model, d.X))
        rep.to_csv(tmp_path / "i.csv")
        rep.heat_csv(tmp_path / "h.csv")
        assert len((tmp_path / "i.csv").read_text().splitlines()) == 1 + 20
        assert len((tmp_path / "h.csv").read_text().splitlines()) == 1 + 9

    def test_alpha_rejected(self):
        with pytest.raises(ConfigError):
            interaction_report(_cube(np.zeros((200, 1, 2))), 2.0)


class TestRulefitImportance:
    def test_pure_linear_global(self):
        d = _normal_data(5)
        b = np.array([[1.5, -0.5, 0.0]])
        model = hand_model(d, [], np.zeros((1, 0)), b)
        imp = rulefit_importance(model, d.X)
        np.testing.assert_allclose(imp, np.abs(b[0]), rtol=1e-12)

    def test_dampening_example_by_hand(self):
        # F = x1 + I(x1 < -1) + I(x2 < 3, x3 >= 0) with standard normal features
        d = _normal_data(6, n=2000)
        r1, r2 = Rule([(0, LT, -1.0)]), Rule([(1, LT, 3.0), (2, GE, 0.0)])
        sd1 = d.X[:, 0].clip(*np.quantile(d.X[:, 0], [0.025, 0.975])).std()
        model = hand_model(d, [r1, r2], [[1.0, 1.0]], [[sd1, 0.0, 0.0]])
        rb1, rb2 = r1.evaluate(d.X).mean(), r2.evaluate(d.X).mean()
        imp = rulefit_importance(model, d.X)
        assert imp[0] == pytest.approx(sd1 + np.sqrt(rb1 * (1 - rb1)), rel=1e-12)
        assert imp[1] == pytest.approx(np.sqrt(rb2 * (1 - rb2)) / 2, rel=1e-12)
        assert imp[2] == pytest.approx(imp[1], rel=1e-12)
        x = np.array([0.3, 0.0, 1.0])
        loc = rulefit_importance(model, d.X, x)
        xbar1 = d.X[:, 0].clip(*np.quantile(d.X[:, 0], [0.025, 0.975])).mean()
        assert loc[0] == pytest.approx(abs(0.3 - xbar1) + abs(0.0 - rb1), rel=1e-10)
        assert loc[1] == pytest.approx(abs(1.0 - rb2) / 2, rel=1e-12)

    def test_depth_two_split_in_half(self):
        d = _normal_data(7)
        model = hand_model(d, [Rule([(0, GE, 0.0), (1, GE, 0.0)])], [[4.0]], np.zeros((1, 3)))
        imp = rulefit_importance(model, d.X)
        assert imp[0] == imp[1] > 0
        assert imp[2] == 0.0

    def test_nonnegative_and_absent_zero(self):
        d = _normal_data(8)
        rng = np.random.default_rng(9)
        model = hand_model(d, [Rule([(0, LT, 0.2)]), Rule([(0, GE, -1.0), (1, LT, 1.0)])],
                           rng.normal(size=(50, 2)), np.column_stack([rng.normal(size=(50, 2)), np.zeros(50)]))
        for x in (None, d.X[0], d.X[1]):
            imp = rulefit_importance(model, d.X, x)
            assert np.all(imp >= 0)
            assert imp[2] == 0.0


def test_no_warnings_at_default_draws():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        effect_report(_cube(np.zeros((100, 1, 1))))
