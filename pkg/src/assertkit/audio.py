"""WAV I/O, protocol parsing and the deterministic synthetic corpus.

The synthetic corpus replaces the ASVspoof 2019 data at desk scale.
Bonafide clips are multi-harmonic tones with a random fundamental, mild
vibrato and a low noise floor. Each spoof class draws a fresh
bonafide-style tone and passes it through one fixed transform
(see ``SPOOF_TRANSFORMS``), which makes the classes separable.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PA_SYSTEMS = ("AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC")
LA_SYSTEMS = ("SS_1", "SS_2", "SS_4", "US_1", "VC_1", "VC_4")
BONAFIDE_SYSTEM_IDS = ("-", "bonafide")


class WavFormatError(ValueError):
    """The file is not a readable RIFF/WAVE container."""


class UnsupportedEncodingError(ValueError):
    """Valid WAV, but not 16-bit PCM mono."""


class ProtocolError(ValueError):
    """Malformed protocol text."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("an audio clip needs at least one mono sample")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class TrialEntry:
    speaker_id: str
    utt_id: str
    system_id: str
    key: str  # "bonafide" | "spoof"

    @property
    def is_bonafide(self) -> bool:
        return self.key == "bonafide"

    def to_line(self) -> str:
        return f"{self.speaker_id} {self.utt_id} - {self.system_id} {self.key}"


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM mono WAV, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, n = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            if channels != 1:
                raise UnsupportedEncodingError(f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise UnsupportedEncodingError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            raw = wf.readframes(n)
    except wave.Error as exc:
        if str(exc).startswith("unknown format"):
            raise UnsupportedEncodingError(f"{path}: non-PCM encoding ({exc})") from exc
        raise WavFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    data = np.frombuffer(raw, dtype="<i2")
    if data.size != n:
        raise WavFormatError(f"{path}: data chunk holds {data.size} samples, header says {n}")
    if data.size == 0:
        raise WavFormatError(f"{path}: no samples")
    return AudioClip(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as 16-bit PCM mono (values clipped to the int16 range)."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def parse_protocol(text: str) -> list[TrialEntry]:
    """Parse ``speaker utt_id - system_id key`` lines; blank lines are skipped."""
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise ProtocolError(f"line {lineno}: expected 5 fields, found {len(fields)}")
        speaker, utt, _, system, key = fields
        key = key.lower()
        if key not in ("bonafide", "spoof"):
            raise ProtocolError(f"line {lineno}: unknown key {fields[4]!r}")
        if utt in seen:
            raise ProtocolError(f"line {lineno}: duplicate utterance id {utt!r}")
        seen.add(utt)
        entries.append(TrialEntry(speaker, utt, system, key))
    return entries


def read_protocol(path) -> list[TrialEntry]:
    return parse_protocol(Path(path).read_text(encoding="utf-8"))


def write_protocol(path, entries) -> None:
    Path(path).write_text("".join(e.to_line() + "\n" for e in entries), encoding="utf-8")


# -- synthetic corpus ------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    mode: str = "PA"
    n_bonafide: int = 60
    spoof_per_class: int = 60
    duration_range: tuple = (1.0, 4.0)
    sample_rate: int = 16000
    seed: int = 0
    n_speakers: int = 10

    def __post_init__(self):
        if self.mode not in ("PA", "LA"):
            raise ValueError(f"mode must be PA or LA, got {self.mode!r}")
        if self.n_bonafide < 1 or self.spoof_per_class < 1 or self.n_speakers < 1:
            raise ValueError("utterance and speaker counts must be positive")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError("duration_range must satisfy 0 < low <= high")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def systems(self) -> tuple:
        return PA_SYSTEMS if self.mode == "PA" else LA_SYSTEMS


def _bonafide_tone(rng: np.random.Generator, n: int, fs: int, f0_center: float) -> np.ndarray:
    t = np.arange(n) / fs
    f0 = f0_center * rng.uniform(0.9, 1.1)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / fs
    n_harm = int(min(20, (fs / 2 - 100) // f0))
    amps = rng.uniform(0.5, 1.0, n_harm) / np.arange(1, n_harm + 1)
    offsets = rng.uniform(0, 2 * np.pi, n_harm)
    x = sum(a * np.sin(h * phase + o) for h, (a, o) in enumerate(zip(amps, offsets), 1))
    envelope = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.05 + 0.05)
    x = x * envelope
    x = x / (np.max(np.abs(x)) + 1e-12)
    return 0.5 * x + 0.003 * rng.standard_normal(n)


def _fft_gain(x: np.ndarray, fs: int, gain_fn) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / fs)
    return np.fft.irfft(spec * gain_fn(freqs), n=x.size)


def _lowpass(x, fs, rng):
    return _fft_gain(x, fs, lambda f: (f < 2500.0).astype(float))


def _highpass(x, fs, rng):
    return _fft_gain(x, fs, lambda f: (f > 600.0).astype(float))


def _soft_clip(x, fs, rng):
    return np.tanh(6.0 * x) / np.tanh(6.0)


def _comb_reverb(x, fs, rng):
    d = int(0.007 * fs)
    y = x.copy()
    for k in range(1, 6):
        y[k * d:] += (0.6**k) * x[:-k * d]
    return y


def _spectral_tilt(x, fs, rng):
    return np.append(x[0], x[1:] - 0.97 * x[:-1])


def _additive_noise(x, fs, rng):
    return x + 0.05 * rng.standard_normal(x.size)


def _bit_crush(x, fs, rng):
    levels = 2**4
    return np.round(x * levels) / levels


def _sample_hold(x, fs, rng):
    return np.repeat(x[::3], 3)[:x.size]


def _notch_band(x, fs, rng):
    return _fft_gain(x, fs, lambda f: 1.0 - 0.98 * ((f > 1000.0) & (f < 3000.0)))


# class index -> (name, transform); PA uses all nine, LA the first six
SPOOF_TRANSFORMS = (
    ("lowpass_2500Hz", _lowpass),
    ("highpass_600Hz", _highpass),
    ("soft_clip_tanh6", _soft_clip),
    ("comb_reverb_7ms", _comb_reverb),
    ("spectral_tilt_0.97", _spectral_tilt),
    ("white_noise_0.05", _additive_noise),
    ("bit_crush_4bit", _bit_crush),
    ("sample_hold_x3", _sample_hold),
    ("band_stop_1k_3k", _notch_band),
)


def synth_corpus(cfg: SynthConfig, out_dir) -> list[TrialEntry]:
    """Write ``cfg``'s corpus as WAV files plus ``protocol.txt`` under ``out_dir``.

    Every random draw comes from one ``numpy.random.Generator`` seeded with
    ``cfg.seed`` and consumed in a fixed order, so equal configs produce
    byte-identical directories.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.sample_rate
    speaker_f0 = rng.uniform(100.0, 260.0, cfg.n_speakers)

    plan = [("-", "bonafide", None)] * cfg.n_bonafide
    for k, system in enumerate(cfg.systems):
        plan += [(system, "spoof", SPOOF_TRANSFORMS[k][1])] * cfg.spoof_per_class
    order = rng.permutation(len(plan))

    entries = []
    for i, idx in enumerate(order):
        system, key, transform = plan[idx]
        spk = int(rng.integers(cfg.n_speakers))
        n = int(round(rng.uniform(*cfg.duration_range) * fs))
        x = _bonafide_tone(rng, n, fs, speaker_f0[spk])
        if transform is not None:
            x = transform(x, fs, rng)
        peak = np.max(np.abs(x))
        if peak > 0.95:
            x = x * (0.95 / peak)
        utt = f"{cfg.mode}_{i:05d}"
        write_wav(out / "wav" / f"{utt}.wav", AudioClip(x, fs))
        entries.append(TrialEntry(f"S{spk + 1:02d}", utt, system, key))
    write_protocol(out / "protocol.txt", entries)
    return entries


def split_protocol(entries, dev_fraction: float = 0.5, seed: int = 0):
    """Stratified (per system id) train/dev split, deterministic in ``seed``."""
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError("dev_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    by_system: dict[str, list[int]] = {}
    for i, e in enumerate(entries):
        by_system.setdefault(e.system_id, []).append(i)
    dev_idx = set()
    for system in sorted(by_system):
        idx = by_system[system]
        n_dev = int(round(len(idx) * dev_fraction))
        dev_idx.update(np.asarray(idx)[rng.permutation(len(idx))[:n_dev]].tolist())
    train = [e for i, e in enumerate(entries) if i not in dev_idx]
    dev = [e for i, e in enumerate(entries) if i in dev_idx]
    return train, dev
