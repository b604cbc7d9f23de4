"""Fixed-size unified feature maps and zero-padded whole-utterance batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_feature_array, check_feature_list


@dataclass(frozen=True)
class SegmenterConfig:
    M: int = 400
    L: int = 200

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("segment length M must be positive")
        if not 0 <= self.L < self.M:
            raise ValueError("overlap L must satisfy 0 <= L < M")
        if self.M % (self.M - self.L):
            raise ValueError("the segment shift M - L must divide M")

    @property
    def shift(self) -> int:
        return self.M - self.L


@dataclass
class SegmentSet:
    utt_id: str
    segments: np.ndarray  # S x M x D

    def __len__(self) -> int:
        return self.segments.shape[0]


@dataclass
class PaddedBatch:
    data: np.ndarray  # B x T_max x D
    valid_len: np.ndarray  # B

    def __len__(self) -> int:
        return self.data.shape[0]


def extended_length(n_frames: int, M: int) -> int:
    return -(-n_frames // M) * M


def segment_count(n_frames: int, cfg: SegmenterConfig) -> int:
    return (extended_length(n_frames, cfg.M) - cfg.M) // cfg.shift + 1


def unify_and_segment(feat, cfg: SegmenterConfig = SegmenterConfig(), utt_id: str = "") -> SegmentSet:
    """Tile the utterance cyclically up to a multiple of M frames and cut it
    into M-frame segments that advance by M - L frames."""
    data = as_feature_array(feat)
    t = data.shape[0]
    extended = np.take(data, np.arange(extended_length(t, cfg.M)) % t, axis=0)
    starts = range(0, extended.shape[0] - cfg.M + 1, cfg.shift)
    return SegmentSet(utt_id, np.stack([extended[s:s + cfg.M] for s in starts]))


def pad_batch(feats) -> PaddedBatch:
    """Stack variable-length T_i x D matrices into B x T_max x D with zero rows."""
    arrays = check_feature_list(feats)
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    dtype = np.result_type(*[a.dtype for a in arrays])
    out = np.zeros((len(arrays), lengths.max(), arrays[0].shape[1]), dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return PaddedBatch(out, lengths)


class UnifiedSegmenter(TransformerMixin, BaseEstimator):
    """Transformer: list of feature matrices -> list of SegmentSet."""

    def __init__(self, M=400, L=200):
        self.M = M
        self.L = L

    def fit(self, X=None, y=None):
        self.config_ = SegmenterConfig(self.M, self.L)
        return self

    def transform(self, X, utt_ids=None):
        cfg = getattr(self, "config_", None) or self.fit().config_
        utt_ids = utt_ids if utt_ids is not None else [""] * len(X)
        return [unify_and_segment(x, cfg, u) for x, u in zip(X, utt_ids)]
