import numpy as np
import pytest

from assertkit.fusion import (CalibrationConfig, CalibrationModel, GreedyFusion, ScoreCalibrator,
                              apply_calibration, fit_calibration, greedy_select, read_fusion_report,
                              write_fusion_report)
from assertkit.metrics import eer, min_tdcf


def gaussian_llr_data(rng, n=4000, mu=1.0):
    keys = rng.random(n) < 0.5
    x = rng.standard_normal(n) + np.where(keys, mu, -mu)
    return 2 * mu * x, keys  # exact log-likelihood ratio of N(mu,1) vs N(-mu,1)


class TestCalibration:
    def test_separable(self):
        keys = np.array([1, 1, 1, 0, 0, 0], bool)
        s = np.array([2.0, 3.0, 4.0, -1.0, -2.0, -3.0])
        model = fit_calibration(s, keys)
        assert model.weights[0] > 0
        assert model.objective_trace[-1] < model.objective_trace[0]

    def test_recovers_ideal_llr(self):
        s, keys = gaussian_llr_data(np.random.default_rng(0))
        model = fit_calibration(s, keys, CalibrationConfig(0.5))
        assert model.weights[0] == pytest.approx(1.0, abs=0.1)
        assert model.bias == pytest.approx(0.0, abs=0.1)

    def test_noise_system_gets_small_weight(self):
        rng = np.random.default_rng(1)
        s, keys = gaussian_llr_data(rng)
        noise = rng.standard_normal(s.size)
        model = fit_calibration(np.column_stack([s, noise]), keys)
        assert abs(model.weights[1]) < 0.05

    @pytest.mark.parametrize("seed", range(5))
    def test_objective_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        s, keys = gaussian_llr_data(rng, n=300, mu=0.5)
        trace = fit_calibration(np.column_stack([s, 3 * s + rng.standard_normal(300)]), keys).objective_trace
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_non_convergence(self):
        s, keys = gaussian_llr_data(np.random.default_rng(2), n=200)
        from assertkit.fusion import CalibrationError
        with pytest.raises(CalibrationError, match="objective"):
            fit_calibration(s, keys, CalibrationConfig(max_iterations=1, tol=1e-30))

    def test_prior_changes_only_parameters(self):
        s, keys = gaussian_llr_data(np.random.default_rng(3), n=500)
        before = s.copy()
        a = fit_calibration(s, keys, CalibrationConfig(0.672))
        b = fit_calibration(s, keys, CalibrationConfig(0.2))
        np.testing.assert_array_equal(s, before)
        assert (a.weights[0], a.bias) != (b.weights[0], b.bias)
        for m in (a, b):
            if m.weights[0] > 0:
                np.testing.assert_array_equal(np.argsort(apply_calibration(m, s)), np.argsort(s))


class TestApply:
    def test_identity(self):
        np.testing.assert_array_equal(apply_calibration(CalibrationModel([1.0], 0.0), [1.0, -2.0]), [1.0, -2.0])

    def test_arithmetic(self):
        assert apply_calibration(CalibrationModel([0.5, 0.5], 1.0), [[2.0, 4.0]])[0] == 4.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_calibration(CalibrationModel([1.0, 1.0], 0.0), [[1.0, 2.0, 3.0]])

    def test_eer_preserved_for_positive_weight(self):
        s, keys = gaussian_llr_data(np.random.default_rng(4), n=400, mu=0.4)
        m = fit_calibration(s, keys)
        assert m.weights[0] > 0
        assert eer(apply_calibration(m, s), keys)[0] == pytest.approx(eer(s, keys)[0], abs=1e-12)


def complementary_systems(rng, n=400):
    """Two systems that each fail on a different half of the trials."""
    keys = rng.random(n) < 0.5
    sign = np.where(keys, 1.0, -1.0)
    half = np.arange(n) < n // 2
    a = sign * np.where(half, 2.0, 0.2) + 0.5 * rng.standard_normal(n)
    b = sign * np.where(half, 0.2, 2.0) + 0.5 * rng.standard_normal(n)
    return {"A": a, "B": b}, keys


class TestGreedy:
    def test_single_system(self):
        s, keys = gaussian_llr_data(np.random.default_rng(5), n=200)
        assert greedy_select({"only": s}, keys).systems == ["only"]

    def test_duplicate_stops_after_one(self):
        s, keys = gaussian_llr_data(np.random.default_rng(6), n=200)
        plan = greedy_select({"a": s, "b": s.copy()}, keys)
        assert plan.systems == ["a"]  # tie resolved by name order, duplicate adds nothing

    def test_complementary_fusion_helps(self):
        systems, keys = complementary_systems(np.random.default_rng(7))
        plan = greedy_select(systems, keys)
        singles = [min_tdcf(s, keys)[0] for s in systems.values()]
        assert sorted(plan.systems) == ["A", "B"]
        assert plan.step_metrics[-1] <= min(singles)
        assert all(b < a - 1e-4 for a, b in zip(plan.step_metrics, plan.step_metrics[1:]))

    def test_eer_metric(self):
        systems, keys = complementary_systems(np.random.default_rng(8))
        plan = greedy_select(systems, keys, metric="eer")
        assert plan.metric == "eer" and plan.step_metrics == plan.step_eers

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            greedy_select({"a": np.zeros(3)}, [1, 0])

    def test_report_round_trip(self, tmp_path):
        systems, keys = complementary_systems(np.random.default_rng(9))
        plan = greedy_select(systems, keys)
        write_fusion_report(tmp_path / "r.txt", plan, 0.672)
        rep = read_fusion_report(tmp_path / "r.txt")
        assert rep["effective_prior"] == "0.672"
        assert [s["system"] for s in rep["steps"]] == plan.systems
        assert [float(s["min_tdcf"]) for s in rep["steps"]] == plan.step_metrics


def test_estimators():
    systems, keys = complementary_systems(np.random.default_rng(10))
    X = np.column_stack([systems["A"], systems["B"]])
    cal = ScoreCalibrator().fit(X[:, :1], keys)
    assert cal.transform(X[:, :1]).shape == (X.shape[0],)
    fuse = GreedyFusion().fit(X, keys, system_names=["A", "B"])
    assert sorted(fuse.plan_.systems) == ["A", "B"]
    assert fuse.transform(X).shape == (X.shape[0],)
    assert fuse.get_params()["metric"] == "min_tdcf"
