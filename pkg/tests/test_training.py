import math

import numpy as np
import pytest

from assertkit.audio import TrialEntry
from assertkit.featmap import SegmenterConfig
from assertkit.models import build_model, tiny_config
from assertkit.nn import OptimizerConfig
from assertkit.training import (EpochReport, LabelSpace, SpoofDetector, TrainConfig, TrainingDiverged,
                                UnknownLabelError, Utterance, bonafide_score, make_labels, score_utterance,
                                select_epoch, train, utterance_log_probs)

D = 16


def toy_data(rng, n, frames=(6, 20)):
    """Bonafide rows carry +1.5 on the first four coefficients."""
    out = []
    for i in range(n):
        bona = i % 3 == 0
        t = int(rng.integers(*frames))
        x = rng.standard_normal((t, D)).astype(np.float32)
        if bona:
            x[:, :4] += 1.5
        out.append(Utterance(f"u{i}", x, 1 if bona else 0, bona))
    return out


def tiny_train_config(**kw):
    base = dict(epochs=3, batch_size=8, optimizer=OptimizerConfig(peak_lr=5e-3, warmup_steps=5),
                segmenter=SegmenterConfig(8, 4), seed=0, eval_batch_size=16)
    base.update(kw)
    return TrainConfig(**base)


class TestLabels:
    def test_binary(self):
        space = LabelSpace.create("PA", "binary")
        assert space.labels == ("spoof", "bonafide") and space.bonafide_index == 1
        assert space.index("AA", "spoof") == 0
        assert space.index("-", "bonafide") == 1

    def test_pa_multiclass(self):
        space = LabelSpace.create("PA", "multiclass")
        assert space.labels == ("bonafide", "AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC")
        assert space.index("AA") == 1
        assert space.index("bonafide") == 0

    def test_la_multiclass(self):
        space = LabelSpace.create("LA", "multiclass")
        assert space.labels == ("bonafide", "SS_1", "SS_2", "SS_4", "US_1", "VC_1", "VC_4")
        with pytest.raises(UnknownLabelError):
            space.index("ZZ")

    def test_make_labels(self):
        protocol = [TrialEntry("S", "a", "-", "bonafide"), TrialEntry("S", "b", "CC", "spoof")]
        assert make_labels(protocol, LabelSpace.create("PA", "multiclass")) == {"a": 0, "b": 9}


class TestScores:
    def test_uniform(self):
        assert bonafide_score([0.0, 0.0], LabelSpace.create()) == pytest.approx(math.log(0.5))

    def test_confident(self):
        s = bonafide_score([-10.0, 10.0], LabelSpace.create())
        assert -1e-8 < s < 0

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            bonafide_score([0.0, 0.0, 0.0], LabelSpace.create())


class TestSelection:
    def test_eer_argmin(self):
        reports = [EpochReport(1, 0.5, 0.05, 0.9, 1e-3), EpochReport(2, 0.4, 0.08, 0.95, 1e-3)]
        assert select_epoch(reports, "dev_eer") == 0

    def test_acc_argmax(self):
        reports = [EpochReport(1, 0.5, 0.05, 0.90, 1e-3), EpochReport(2, 0.4, 0.08, 0.95, 1e-3)]
        assert select_epoch(reports, "dev_acc") == 1

    def test_ties_go_to_earliest(self):
        reports = [EpochReport(i, 0.1, 0.0, 1.0, 1e-3) for i in (1, 2, 3)]
        assert select_epoch(reports, "dev_eer") == 0


class TestSegmentScoring:
    def _model(self):
        m = build_model(tiny_config("senet34", input_dim=D, segment_frames=8))
        return m.eval()

    def test_one_segment_equals_segment_score(self):
        m = self._model()
        x = np.random.default_rng(0).standard_normal((8, D)).astype(np.float32)
        space = LabelSpace.create()
        logits = m(x[None]).data[0]
        assert score_utterance(m, x, SegmenterConfig(8, 4), space) == pytest.approx(bonafide_score(logits, space), abs=1e-6)

    def test_mean_over_three_segments(self):
        m = self._model()
        x = np.random.default_rng(1).standard_normal((10, D)).astype(np.float32)  # E=16 -> 3 segments
        space = LabelSpace.create()
        ext = x[np.arange(16) % 10]
        per = [bonafide_score(m(ext[s:s + 8][None]).data[0], space) for s in (0, 4, 8)]
        assert score_utterance(m, x, SegmenterConfig(8, 4), space) == pytest.approx(np.mean(per), abs=1e-6)

    def test_batching_does_not_change_scores(self):
        m = self._model()
        rng = np.random.default_rng(2)
        feats = [rng.standard_normal((int(rng.integers(3, 30)), D)).astype(np.float32) for _ in range(7)]
        a = utterance_log_probs(m, feats, SegmenterConfig(8, 4), batch_size=2)
        b = utterance_log_probs(m, feats, SegmenterConfig(8, 4), batch_size=64)
        np.testing.assert_allclose(a, b, atol=1e-5)


class TestTrain:
    def test_learns_toy_problem_and_selects_one_epoch(self):
        rng = np.random.default_rng(0)
        tr, dev = toy_data(rng, 48), toy_data(rng, 24)
        model = build_model(tiny_config("senet34", input_dim=D, segment_frames=8))
        ckpt, reports = train(model, tr, dev, tiny_train_config(), LabelSpace.create())
        assert len(reports) == 3
        assert sum(r.selected for r in reports) == 1
        best = next(r for r in reports if r.selected)
        assert best.dev_eer == min(r.dev_eer for r in reports)
        assert best.dev_eer < 0.2
        assert ckpt.metadata["epoch"] == best.epoch
        assert ckpt.metadata["segment_frames"] == 8

    def test_restores_selected_weights(self):
        rng = np.random.default_rng(1)
        tr, dev = toy_data(rng, 24), toy_data(rng, 12)
        model = build_model(tiny_config("senet34", input_dim=D, segment_frames=8))
        ckpt, _ = train(model, tr, dev, tiny_train_config(epochs=2), LabelSpace.create())
        state = model.state_dict()
        assert all(np.array_equal(state[k], ckpt.state[k]) for k in state)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        tr, dev = toy_data(rng, 24), toy_data(rng, 12)
        runs = []
        for _ in range(2):
            model = build_model(tiny_config("senet34", input_dim=D, segment_frames=8))
            _, reports = train(model, tr, dev, tiny_train_config(epochs=2), LabelSpace.create())
            runs.append((model.state_dict(), [r.to_line() for r in reports]))
        assert runs[0][1] == runs[1][1]
        assert all(runs[0][0][k].tobytes() == runs[1][0][k].tobytes() for k in runs[0][0])

    def test_meanstd_trains_on_padded_batches(self):
        rng = np.random.default_rng(3)
        tr, dev = toy_data(rng, 16), toy_data(rng, 8)
        model = build_model(tiny_config("meanstd_resnet", input_dim=D))
        _, reports = train(model, tr, dev, tiny_train_config(epochs=1), LabelSpace.create())
        assert math.isfinite(reports[0].train_loss)

    def test_divergence_detected(self):
        rng = np.random.default_rng(4)
        tr = toy_data(rng, 8)
        for u in tr:
            u.features[:] = 3e38  # finite, but the float32 convolutions overflow
        model = build_model(tiny_config("senet34", input_dim=D, segment_frames=8))
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match="non-finite"):
            train(model, tr, tr, tiny_train_config(epochs=1, batch_size=64), LabelSpace.create())

    def test_class_count_mismatch(self):
        rng = np.random.default_rng(5)
        tr = toy_data(rng, 4)
        model = build_model(tiny_config("senet34", input_dim=D, segment_frames=8, n_classes=10))
        with pytest.raises(ValueError, match="outputs"):
            train(model, tr, tr, tiny_train_config(), LabelSpace.create())

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(selection="loss")
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


def test_spoof_detector_estimator():
    rng = np.random.default_rng(6)
    data = toy_data(rng, 36)
    X = [u.features for u in data]
    y = ["-" if u.bonafide else "AA" for u in data]
    det = SpoofDetector(epochs=2, batch_size=8, peak_lr=5e-3, warmup_steps=5, segment_frames=8, overlap=4,
                        model_overrides=dict(units=(1, 1, 1, 1), channels=(4, 4, 8, 8)))
    assert det.get_params()["epochs"] == 2
    det.fit(X, y)
    proba = det.predict_proba(X)
    assert proba.shape == (36, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
    assert set(det.predict(X)) <= {"spoof", "bonafide"}
    np.testing.assert_allclose(det.decision_function(X), det.predict_log_proba(X)[:, 1])
    np.testing.assert_array_equal(proba.argmax(axis=1), det.predict_log_proba(X).argmax(axis=1))
    assert 0.0 <= det.score(X, y) <= 1.0
