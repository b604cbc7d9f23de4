"""Spoofing countermeasures with squeeze-excitation and residual networks."""
from .audio import AudioClip, SynthConfig, TrialEntry, parse_protocol, read_wav, synth_corpus, write_wav
from .featmap import PaddedBatch, SegmenterConfig, SegmentSet, UnifiedSegmenter, pad_batch, unify_and_segment
from .features import CqccConfig, CqccExtractor, FeatureMatrix, LogspecExtractor, StftConfig, cqcc, cqt, logspec
from .fusion import (CalibrationConfig, CalibrationModel, GreedyFusion, ScoreCalibrator, apply_calibration,
                     fit_calibration, greedy_select)
from .metrics import MetricReport, ScoreSet, TdcfParams, eer, min_tdcf
from .models import ModelConfig, build_model
from .training import LabelSpace, SpoofDetector, TrainConfig, bonafide_score, make_labels, score_utterance, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "CalibrationConfig", "CalibrationModel", "CqccConfig", "CqccExtractor", "FeatureMatrix",
    "GreedyFusion", "LabelSpace", "LogspecExtractor", "MetricReport", "ModelConfig", "PaddedBatch",
    "ScoreCalibrator", "ScoreSet", "SegmentSet", "SegmenterConfig", "SpoofDetector", "StftConfig",
    "SynthConfig", "TdcfParams", "TrainConfig", "TrialEntry", "UnifiedSegmenter", "apply_calibration",
    "bonafide_score", "build_model", "cqcc", "cqt", "eer", "fit_calibration", "greedy_select", "logspec",
    "make_labels", "min_tdcf", "pad_batch", "parse_protocol", "read_wav", "score_utterance", "synth_corpus",
    "train", "unify_and_segment", "write_wav",
]
