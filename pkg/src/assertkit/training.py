"""Label spaces, the training loop, and per-utterance scoring."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .audio import BONAFIDE_SYSTEM_IDS, LA_SYSTEMS, PA_SYSTEMS
from .checkpoint import Checkpoint
from .featmap import SegmenterConfig, pad_batch, unify_and_segment
from .models import FIXED_SIZE_KINDS, ModelConfig, build_model
from .nn import Adam, OptimizerConfig, no_grad, noam_lr
from .nn import functional as F
from .validation import as_feature_array, check_feature_list

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class UnknownLabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSpace:
    mode: str
    objective: str
    labels: tuple
    bonafide_index: int

    @classmethod
    def create(cls, mode: str = "PA", objective: str = "binary") -> "LabelSpace":
        if mode not in ("PA", "LA"):
            raise ValueError(f"mode must be PA or LA, got {mode!r}")
        if objective == "binary":
            return cls(mode, objective, ("spoof", "bonafide"), 1)
        if objective == "multiclass":
            systems = PA_SYSTEMS if mode == "PA" else LA_SYSTEMS
            return cls(mode, objective, ("bonafide",) + systems, 0)
        raise ValueError(f"objective must be binary or multiclass, got {objective!r}")

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def index(self, system_id: str, key: str | None = None) -> int:
        """Class index for a trial given its system id (and key, if known)."""
        bonafide = (key == "bonafide") if key is not None else system_id in BONAFIDE_SYSTEM_IDS
        if bonafide:
            return self.bonafide_index
        if self.objective == "binary":
            return 1 - self.bonafide_index
        try:
            return self.labels.index(system_id)
        except ValueError:
            raise UnknownLabelError(f"system id {system_id!r} is not in the {self.mode} label list") from None


def make_labels(protocol, space: LabelSpace) -> dict[str, int]:
    return {e.utt_id: space.index(e.system_id, e.key) for e in protocol}


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # T x D
    label: int
    bonafide: bool


@dataclass(frozen=True)
class TrainConfig:
    selection: str = "dev_eer"
    epochs: int = 30
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    seed: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.selection not in ("dev_eer", "dev_acc"):
            raise ValueError(f"selection must be dev_eer or dev_acc, got {self.selection!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("epochs and batch sizes must be >= 1")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    dev_eer: float
    dev_acc: float
    lr: float
    selected: bool = False

    def to_line(self) -> str:
        return (f"epoch={self.epoch} loss={self.train_loss:.6f} dev_eer={self.dev_eer:.6f} "
                f"dev_acc={self.dev_acc:.6f} lr={self.lr:.8g} selected={int(self.selected)}")


def bonafide_score(logits, space: LabelSpace) -> float:
    """Log-probability of the bonafide class."""
    logits = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    if logits.shape != (space.n_classes,):
        raise ValueError(f"expected {space.n_classes} logits, got shape {logits.shape}")
    shifted = logits - logits.max()
    return float(shifted[space.bonafide_index] - np.log(np.exp(shifted).sum()))


def select_epoch(reports: list[EpochReport], selection: str) -> int:
    """Index of the best epoch; ties go to the earliest."""
    if selection == "dev_eer":
        values = [r.dev_eer for r in reports]
        return int(np.argmin(values))
    values = [r.dev_acc for r in reports]
    return int(np.argmax(values))


def _log_probs(logits) -> np.ndarray:
    a = np.asarray(logits.data, dtype=np.float64)
    a = a - a.max(axis=1, keepdims=True)
    return a - np.log(np.exp(a).sum(axis=1, keepdims=True))


def utterance_log_probs(model, feats, seg_cfg: SegmenterConfig, batch_size: int = 64) -> np.ndarray:
    """N x K class log-probabilities per utterance.

    Fixed-size models: mean of the segment log-probabilities over every
    unified-map segment. Mean-std models: one masked whole-utterance pass.
    """
    feats = [as_feature_array(f) for f in feats]
    model.eval()
    out = []
    with no_grad():
        if model.config.kind in FIXED_SIZE_KINDS:
            sets = [unify_and_segment(f, seg_cfg).segments for f in feats]
            owner = np.repeat(np.arange(len(sets)), [len(s) for s in sets])
            segments = np.concatenate(sets).astype(model.dtype)
            seg_lp = np.concatenate([_log_probs(model(segments[i:i + batch_size]))
                                     for i in range(0, len(segments), batch_size)])
            sums = np.zeros((len(sets), seg_lp.shape[1]))
            np.add.at(sums, owner, seg_lp)
            return sums / np.bincount(owner)[:, None]
        order = np.argsort([f.shape[0] for f in feats], kind="stable")
        result = np.zeros((len(feats), model.config.n_classes))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            batch = pad_batch([feats[j] for j in idx])
            result[idx] = _log_probs(model(batch.data.astype(model.dtype), batch.valid_len))
        out = result
    return out


def score_utterance(model, feat, seg_cfg: SegmenterConfig, space: LabelSpace) -> float:
    """Averaged bonafide log-probability of one utterance."""
    return float(utterance_log_probs(model, [feat], seg_cfg)[0, space.bonafide_index])


def score_utterances(model, feats, seg_cfg: SegmenterConfig, space: LabelSpace, batch_size: int = 64) -> np.ndarray:
    return utterance_log_probs(model, feats, seg_cfg, batch_size)[:, space.bonafide_index]


def _training_batches(model, data: list[Utterance], cfg: TrainConfig, rng: np.random.Generator):
    """Yield (inputs, valid_len, labels) for one epoch in a seeded order."""
    if model.config.kind in FIXED_SIZE_KINDS:
        segs, labels = [], []
        for u in data:
            s = unify_and_segment(u.features, cfg.segmenter).segments
            segs.append(s)
            labels.extend([u.label] * len(s))
        segs = np.concatenate(segs).astype(model.dtype)
        labels = np.asarray(labels)
        order = rng.permutation(len(labels))
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            yield segs[idx], None, labels[idx]
    else:
        # length-sorted buckets bound the padding per batch; bucket order is shuffled
        order = np.argsort([u.features.shape[0] for u in data], kind="stable")
        buckets = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        for b in rng.permutation(len(buckets)):
            idx = buckets[b]
            batch = pad_batch([data[j].features for j in idx])
            yield batch.data.astype(model.dtype), batch.valid_len, np.array([data[j].label for j in idx])


def evaluate_dev(model, dev: list[Utterance], cfg: TrainConfig, space: LabelSpace) -> tuple[float, float]:
    lp = utterance_log_probs(model, [u.features for u in dev], cfg.segmenter, cfg.eval_batch_size)
    labels = np.array([u.label for u in dev])
    acc = float(np.mean(lp.argmax(axis=1) == labels))
    bona = np.array([u.bonafide for u in dev])
    if bona.all() or not bona.any():
        return math.nan, acc
    return metrics.eer(lp[:, space.bonafide_index], bona)[0], acc


def train(model, train_data: list[Utterance], dev_data: list[Utterance], cfg: TrainConfig,
          space: LabelSpace, on_step: Callable | None = None) -> tuple[Checkpoint, list[EpochReport]]:
    """Noam-scheduled Adam on cross-entropy; keeps the best epoch by dev EER
    or dev accuracy. The model is left holding the selected weights."""
    if not train_data or not dev_data:
        raise ValueError("training and dev data must be non-empty")
    if model.config.n_classes != space.n_classes:
        raise ValueError(f"model has {model.config.n_classes} outputs, label space has {space.n_classes}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.optimizer)
    step = 0
    reports: list[EpochReport] = []
    best_state, best_index = None, None
    lr = 0.0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for x, valid_len, y in _training_batches(model, train_data, cfg, rng):
            loss = F.cross_entropy(model(x, valid_len), y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {step + 1}")
            model.zero_grad()
            loss.backward()
            step += 1
            lr = noam_lr(step, cfg.optimizer)
            opt.step(lr)
            total += value * len(y)
            count += len(y)
            if on_step is not None:
                on_step(step, lr, value)
        dev_eer, dev_acc = evaluate_dev(model, dev_data, cfg, space)
        report = EpochReport(epoch, total / count, dev_eer, dev_acc, lr)
        reports.append(report)
        log.info(report.to_line())
        index = select_epoch(reports, cfg.selection)
        if index != best_index:
            best_index, best_state = index, model.state_dict()
    reports[best_index].selected = True
    model.load_state_dict(best_state)
    model.eval()
    best = reports[best_index]
    meta = {
        "epoch": best.epoch,
        "selection": cfg.selection,
        "selection_value": best.dev_eer if cfg.selection == "dev_eer" else best.dev_acc,
        "mode": space.mode,
        "objective": space.objective,
        "labels": list(space.labels),
        "bonafide_index": space.bonafide_index,
        "segment_frames": cfg.segmenter.M,
        "overlap": cfg.segmenter.L,
    }
    return Checkpoint.from_model(model, meta), reports


def space_from_metadata(meta: dict) -> LabelSpace:
    return LabelSpace(meta["mode"], meta["objective"], tuple(meta["labels"]), int(meta["bonafide_index"]))


class SpoofDetector(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: fit on feature matrices, score by bonafide log-probability.

    ``y`` holds system ids (``"-"`` / ``"bonafide"`` for genuine speech,
    e.g. ``"AA"`` for an attack) or plain ``"bonafide"`` / ``"spoof"`` keys
    when ``objective="binary"``.
    """

    def __init__(self, model_kind="senet34", mode="PA", objective="binary", selection="dev_eer",
                 epochs=30, batch_size=64, peak_lr=1e-3, warmup_steps=1000, segment_frames=400,
                 overlap=200, seed=0, model_overrides=None):
        self.model_kind = model_kind
        self.mode = mode
        self.objective = objective
        self.selection = selection
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.segment_frames = segment_frames
        self.overlap = overlap
        self.seed = seed
        self.model_overrides = model_overrides

    def _utterances(self, X, y, space):
        out = []
        for i, (x, label) in enumerate(zip(X, y)):
            key = "spoof" if label == "spoof" else None
            idx = space.index(str(label), key)
            out.append(Utterance(str(i), x.astype(np.float32), idx, idx == space.bonafide_index))
        return out

    def fit(self, X, y, X_dev=None, y_dev=None):
        X = check_feature_list(X)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} feature matrices but {len(y)} labels")
        space = LabelSpace.create(self.mode, self.objective)
        train_data = self._utterances(X, y, space)
        if X_dev is None:
            dev_data = train_data
        else:
            dev_data = self._utterances(check_feature_list(X_dev, X[0].shape[1]), y_dev, space)
        overrides = dict(self.model_overrides or {})
        overrides.setdefault("seed", self.seed)
        if self.model_kind in FIXED_SIZE_KINDS:
            overrides.setdefault("segment_frames", self.segment_frames)
        mcfg = ModelConfig.default(self.model_kind, n_classes=space.n_classes, input_dim=X[0].shape[1], **overrides)
        cfg = TrainConfig(
            selection=self.selection, epochs=self.epochs, batch_size=self.batch_size,
            optimizer=OptimizerConfig(peak_lr=self.peak_lr, warmup_steps=self.warmup_steps),
            segmenter=SegmenterConfig(self.segment_frames, self.overlap), seed=self.seed,
        )
        model = build_model(mcfg)
        self.checkpoint_, self.history_ = train(model, train_data, dev_data, cfg, space)
        self.model_ = model
        self.space_ = space
        self.classes_ = np.array(space.labels)
        self.segmenter_ = cfg.segmenter
        return self

    def predict_log_proba(self, X):
        check_is_fitted(self, "model_")
        return utterance_log_probs(self.model_, check_feature_list(X, self.model_.config.input_dim), self.segmenter_)

    def predict_proba(self, X):
        # segment-averaged log-probabilities are not normalised; renormalise
        lp = self.predict_log_proba(X)
        p = np.exp(lp - lp.max(axis=1, keepdims=True))
        return p / p.sum(axis=1, keepdims=True)

    def decision_function(self, X):
        """Bonafide log-probability per utterance (higher = more bonafide)."""
        return self.predict_log_proba(X)[:, self.space_.bonafide_index]

    def predict(self, X):
        return self.classes_[self.predict_log_proba(X).argmax(axis=1)]

    def score(self, X, y, sample_weight=None):
        y_idx = [self.space_.index(str(v), "spoof" if v == "spoof" else None) for v in y]
        return float(np.mean(self.predict_log_proba(X).argmax(axis=1) == np.array(y_idx)))
