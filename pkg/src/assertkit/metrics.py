"""Equal error rate, minimum normalised t-DCF, and score files.

Decision rule everywhere: a trial is accepted as bonafide when its score is
at or above the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_scores


@dataclass(frozen=True)
class TdcfParams:
    """Cost model of the tandem detection cost function.

    Defaults are the ASVspoof 2019 priors and costs. The three ASV error
    rates depend on the organisers' fixed ASV system, which is not part of
    this package; the defaults are placeholders and should be replaced
    with the rates measured for the ASV system at hand.
    """

    p_tar: float = 0.95 * 0.99
    p_non: float = 0.95 * 0.01
    p_spoof: float = 0.05
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    p_miss_asv: float = 0.05
    p_fa_asv: float = 0.05
    p_miss_spoof_asv: float = 0.5

    def __post_init__(self):
        priors = (self.p_tar, self.p_non, self.p_spoof)
        if min(priors) < 0 or abs(sum(priors) - 1.0) > 1e-9:
            raise ValueError("priors must be non-negative and sum to 1")
        for rate in (self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("ASV error rates must lie in [0, 1]")
        c1, c2 = self.coefficients()
        if c1 <= 0 or c2 <= 0:
            raise ValueError(f"t-DCF coefficients must be positive, got C1={c1}, C2={c2}")

    def coefficients(self) -> tuple[float, float]:
        """C1 weighs CM misses, C2 weighs CM false alarms."""
        c1 = self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv) \
            - self.p_non * self.c_fa_asv * self.p_fa_asv
        c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv)
        return c1, c2


@dataclass(frozen=True)
class MetricReport:
    eer: float
    eer_threshold: float
    min_tdcf_norm: float
    threshold_at_min: float

    def to_line(self) -> str:
        return (f"metrics eer={self.eer!r} eer_threshold={self.eer_threshold!r} "
                f"min_tdcf={self.min_tdcf_norm!r} tdcf_threshold={self.threshold_at_min!r}")

    @classmethod
    def from_line(cls, line: str) -> "MetricReport":
        fields = dict(tok.split("=", 1) for tok in line.split()[1:])
        return cls(float(fields["eer"]), float(fields["eer_threshold"]),
                   float(fields["min_tdcf"]), float(fields["tdcf_threshold"]))


def error_rates(scores, keys) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Miss / false-alarm rates at every distinct score and at +inf.

    Returns ``(thresholds, p_miss, p_fa)`` with thresholds ascending; the
    first threshold (lowest score) accepts everything.
    """
    scores, bona = check_scores(scores, keys)
    thresholds = np.append(np.unique(scores), np.inf)
    bona_sorted = np.sort(scores[bona])
    spoof_sorted = np.sort(scores[~bona])
    p_miss = np.searchsorted(bona_sorted, thresholds, side="left") / bona_sorted.size
    p_fa = 1.0 - np.searchsorted(spoof_sorted, thresholds, side="left") / spoof_sorted.size
    return thresholds, p_miss, p_fa


def eer(scores, keys) -> tuple[float, float]:
    """Equal error rate and its threshold.

    P_miss - P_fa is non-decreasing in the threshold; the EER is read at
    the first threshold where it reaches zero, interpolating linearly
    between the two neighbouring ROC points when it jumps over zero.
    """
    thresholds, p_miss, p_fa = error_rates(scores, keys)
    diff = p_miss - p_fa
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float(p_miss[i]), float(thresholds[i])
    d0, d1 = diff[i - 1], diff[i]
    w = -d0 / (d1 - d0)
    rate = p_miss[i - 1] + w * (p_miss[i] - p_miss[i - 1])
    return float(rate), float(thresholds[i])


def min_tdcf(scores, keys, params: TdcfParams = TdcfParams()) -> tuple[float, float]:
    """Minimum over thresholds of (C1 P_miss + C2 P_fa) / min(C1, C2).

    Accept-all and reject-all are among the candidate thresholds, so the
    result never exceeds 1.
    """
    thresholds, p_miss, p_fa = error_rates(scores, keys)
    c1, c2 = params.coefficients()
    cost = (c1 * p_miss + c2 * p_fa) / min(c1, c2)
    i = int(np.argmin(cost))
    return float(cost[i]), float(thresholds[i])


def evaluate(scores, keys, params: TdcfParams = TdcfParams()) -> MetricReport:
    rate, thr = eer(scores, keys)
    cost, cthr = min_tdcf(scores, keys, params)
    return MetricReport(rate, thr, cost, cthr)


# -- score sets ------------------------------------------------------------------

class ScoreSet(dict):
    """utt_id -> score (higher means more bonafide)."""

    def arrays(self, protocol) -> tuple[np.ndarray, np.ndarray]:
        """Scores and bonafide mask ordered like ``protocol``."""
        missing = [e.utt_id for e in protocol if e.utt_id not in self]
        if missing:
            raise KeyError(f"{len(missing)} protocol trials have no score, e.g. {missing[0]!r}")
        scores = np.array([self[e.utt_id] for e in protocol], dtype=np.float64)
        keys = np.array([e.is_bonafide for e in protocol])
        return scores, keys


def write_scores(path, scores: ScoreSet) -> None:
    lines = []
    for utt, s in scores.items():
        if not np.isfinite(s):
            raise ValueError(f"score for {utt!r} is not finite")
        lines.append(f"{utt} {s:.6f}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_scores(path) -> ScoreSet:
    out = ScoreSet()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'utt_id score'")
        if fields[0] in out:
            raise ValueError(f"{path}:{lineno}: duplicate utterance id {fields[0]!r}")
        out[fields[0]] = float(fields[1])
    return out
