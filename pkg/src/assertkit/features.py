"""Log power spectra and constant-Q cepstral coefficients.

Neither feature is normalised: no voice activity detection, no CMVN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view
from scipy.fft import dct
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import AudioClip

FEATURE_KINDS = ("logspec", "cqcc")
_ARCHIVE_MAGIC = "ASSERTKIT-FEAT"


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    kind: str
    frame_hop: float

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature data must be T x D with T >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data must be finite")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    win_length: int = 400
    hop_length: int = 160
    window: str = "hamming"
    floor_eps: float = 1e-12

    def __post_init__(self):
        if not 0 < self.win_length <= self.fft_size:
            raise ValueError("need 0 < win_length <= fft_size")
        if not 0 < self.hop_length <= self.win_length:
            raise ValueError("need 0 < hop_length <= win_length")
        if self.window not in ("hamming", "hann"):
            raise ValueError(f"window must be hamming or hann, got {self.window!r}")
        if self.floor_eps <= 0:
            raise ValueError("floor_eps must be positive")


@dataclass(frozen=True)
class CqccConfig:
    bins_per_octave: int = 96
    f_max: float | None = None  # None: Nyquist
    octaves: int = 9
    n_ceps: int = 30
    include_c0: bool = True
    resample_points: int = 96
    hop_length: int = 160
    floor_eps: float = 1e-12

    def resolve(self, sample_rate: int) -> tuple[float, float]:
        f_max = sample_rate / 2 if self.f_max is None else float(self.f_max)
        f_min = f_max / 2**self.octaves
        if f_max > sample_rate / 2:
            raise ValueError(f"f_max {f_max} Hz exceeds Nyquist ({sample_rate / 2} Hz)")
        if not 0 < f_min < f_max:
            raise ValueError("need 0 < f_min < f_max")
        n_uniform = self.resample_points * self.octaves
        if self.n_ceps + (0 if self.include_c0 else 1) > n_uniform:
            raise ValueError("n_ceps exceeds the number of uniformly resampled points")
        return f_min, f_max

    def n_bins(self, sample_rate: int) -> int:
        f_min, f_max = self.resolve(sample_rate)
        return int(math.ceil(self.bins_per_octave * math.log2(f_max / f_min) - 1e-9))


def _window(kind: str, n: int) -> np.ndarray:
    return np.hamming(n) if kind == "hamming" else np.hanning(n)


def frame_count(n_samples: int, win_length: int, hop_length: int) -> int:
    return (n_samples - win_length) // hop_length + 1


def logspec(clip: AudioClip, cfg: StftConfig = StftConfig()) -> FeatureMatrix:
    """log(|STFT|^2 + floor_eps), frames without centre padding: T x (fft/2 + 1)."""
    x = clip.samples
    if x.size < cfg.win_length:
        raise ValueError(f"clip has {x.size} samples, shorter than win_length {cfg.win_length}")
    frames = sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    spec = np.fft.rfft(frames * _window(cfg.window, cfg.win_length), n=cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    return FeatureMatrix(np.log(power + cfg.floor_eps), "logspec", cfg.hop_length / clip.sample_rate)


def cqt_frequencies(cfg: CqccConfig, sample_rate: int) -> np.ndarray:
    f_min, _ = cfg.resolve(sample_rate)
    return f_min * 2.0 ** (np.arange(cfg.n_bins(sample_rate)) / cfg.bins_per_octave)


def cqt(clip: AudioClip, cfg: CqccConfig = CqccConfig()) -> np.ndarray:
    """Constant-Q transform evaluated directly in the time domain.

    Bin k correlates the signal with a Hann-windowed complex exponential of
    length Q * fs / f_k centred on each frame (frame t centred at sample
    t * hop). Samples outside the clip count as zero, so atom taps that
    never overlap the clip are skipped. Returns a complex T x K array.
    """
    fs = clip.sample_rate
    freqs = cqt_frequencies(cfg, fs)
    q = 1.0 / (2.0 ** (1.0 / cfg.bins_per_octave) - 1.0)
    x = clip.samples
    n = x.size
    centers = np.arange(0, n, cfg.hop_length)
    n_frames = centers.size
    xp = np.concatenate([np.zeros(n), x, np.zeros(n)])
    out = np.empty((n_frames, freqs.size), dtype=np.complex128)
    step = xp.strides[0]
    for k, f in enumerate(freqs):
        length = int(round(q * fs / f))
        taps = np.arange(length) - length // 2
        win = np.hanning(length) / length
        keep = (taps > -n) & (taps < n)
        taps, win = taps[keep], win[keep]
        phase = 2.0 * np.pi * f * taps / fs
        kernel = np.stack([win * np.cos(phase), -win * np.sin(phase)], axis=1)
        start = n + taps[0]
        frames = as_strided(xp[start:], shape=(n_frames, taps.size),
                            strides=(cfg.hop_length * step, step), writeable=False)
        re_im = frames @ kernel
        out[:, k] = re_im[:, 0] + 1j * re_im[:, 1]
    return out


def _uniform_resampler(freqs: np.ndarray, n_points: int):
    grid = np.linspace(freqs[0], freqs[-1], n_points)
    hi = np.clip(np.searchsorted(freqs, grid, side="right"), 1, freqs.size - 1)
    lo = hi - 1
    frac = (grid - freqs[lo]) / (freqs[hi] - freqs[lo])
    return lo, hi, np.clip(frac, 0.0, 1.0)


def cepstra_from_log_spectrum(log_power: np.ndarray, freqs: np.ndarray, cfg: CqccConfig) -> np.ndarray:
    """Uniformly resample each frame's log spectrum, DCT-II (orthonormal), truncate."""
    lo, hi, frac = _uniform_resampler(freqs, cfg.resample_points * cfg.octaves)
    uniform = log_power[:, lo] * (1.0 - frac) + log_power[:, hi] * frac
    ceps = dct(uniform, type=2, norm="ortho", axis=1)
    first = 0 if cfg.include_c0 else 1
    return ceps[:, first:first + cfg.n_ceps]


def cqcc(clip: AudioClip, cfg: CqccConfig = CqccConfig()) -> FeatureMatrix:
    """Constant-Q cepstral coefficients (c0 included by default), T x n_ceps."""
    spectrum = cqt(clip, cfg)
    log_power = np.log(spectrum.real**2 + spectrum.imag**2 + cfg.floor_eps)
    ceps = cepstra_from_log_spectrum(log_power, cqt_frequencies(cfg, clip.sample_rate), cfg)
    return FeatureMatrix(ceps, "cqcc", cfg.hop_length / clip.sample_rate)


# -- archive ----------------------------------------------------------------------

def save_features(path, feat: FeatureMatrix) -> None:
    """One ASCII header line ``ASSERTKIT-FEAT 1 <kind> <T> <D> <hop>`` then
    row-major little-endian float32 values."""
    t, d = feat.data.shape
    header = f"{_ARCHIVE_MAGIC} 1 {feat.kind} {t} {d} {feat.frame_hop!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(feat.data, dtype="<f4").tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing feature archive header")
    fields = raw[:newline].decode("ascii").split()
    if len(fields) != 6 or fields[0] != _ARCHIVE_MAGIC or fields[1] != "1":
        raise ValueError(f"{path}: not a version-1 feature archive")
    kind, t, d, hop = fields[2], int(fields[3]), int(fields[4]), float(fields[5])
    body = raw[newline + 1:]
    if len(body) != 4 * t * d:
        raise ValueError(f"{path}: expected {t * d} values, found {len(body) // 4}")
    return FeatureMatrix(np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float32), kind, hop)


# -- estimators -------------------------------------------------------------------

class LogspecExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of AudioClip -> list of logspec FeatureMatrix."""

    def __init__(self, fft_size=512, win_length=400, hop_length=160, window="hamming", floor_eps=1e-12):
        self.fft_size = fft_size
        self.win_length = win_length
        self.hop_length = hop_length
        self.window = window
        self.floor_eps = floor_eps

    def fit(self, X=None, y=None):
        self.config_ = StftConfig(self.fft_size, self.win_length, self.hop_length, self.window, self.floor_eps)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self.fit().config_
        return [logspec(clip, cfg) for clip in X]


class CqccExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of AudioClip -> list of CQCC FeatureMatrix."""

    def __init__(self, bins_per_octave=96, octaves=9, n_ceps=30, include_c0=True,
                 resample_points=96, hop_length=160, floor_eps=1e-12):
        self.bins_per_octave = bins_per_octave
        self.octaves = octaves
        self.n_ceps = n_ceps
        self.include_c0 = include_c0
        self.resample_points = resample_points
        self.hop_length = hop_length
        self.floor_eps = floor_eps

    def fit(self, X=None, y=None):
        self.config_ = CqccConfig(bins_per_octave=self.bins_per_octave, octaves=self.octaves,
                                  n_ceps=self.n_ceps, include_c0=self.include_c0,
                                  resample_points=self.resample_points, hop_length=self.hop_length,
                                  floor_eps=self.floor_eps)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self.fit().config_
        return [cqcc(clip, cfg) for clip in X]


def extract(clip: AudioClip, kind: str, stft: StftConfig = StftConfig(), cq: CqccConfig = CqccConfig()) -> FeatureMatrix:
    if kind == "logspec":
        return logspec(clip, stft)
    if kind == "cqcc":
        return cqcc(clip, cq)
    raise ValueError(f"unknown feature kind {kind!r}")
