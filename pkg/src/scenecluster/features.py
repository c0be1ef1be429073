"""Log mel spectrum (LMS) extraction.

framing -> Hamming window -> FFT power spectrum -> triangular mel
filterbank -> logarithm.  Everything here is a pure function of its
inputs.
"""

from __future__ import annotations

import json
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from scenecluster.errors import FeatureError

DEFAULT_FRAME_MS = 40.0
DEFAULT_HOP_MS = 20.0
DEFAULT_N_MEL = 64
DEFAULT_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise FeatureError("signal must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise FeatureError("signal contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise FeatureError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class LmsConfig:
    frame_len_ms: float = DEFAULT_FRAME_MS
    hop_ms: float = DEFAULT_HOP_MS
    n_mel: int = DEFAULT_N_MEL
    fft_size: int | None = None  # None: next power of two >= frame samples
    fmin_hz: float = 0.0
    fmax_hz: float | None = None  # None: Nyquist
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.frame_len_ms:
            raise FeatureError("need 0 < hop_ms <= frame_len_ms")
        if self.n_mel < 1:
            raise FeatureError("n_mel must be positive")
        if self.fft_size is not None and not _is_pow2(self.fft_size):
            raise FeatureError(f"fft_size {self.fft_size} is not a power of two")
        if self.fmin_hz < 0:
            raise FeatureError("fmin_hz must be >= 0")
        if self.fmax_hz is not None and self.fmax_hz <= self.fmin_hz:
            raise FeatureError("need fmin_hz < fmax_hz")
        if not self.log_floor > 0:
            raise FeatureError("log_floor must be > 0")

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return max(1, int(round(self.hop_ms * sample_rate / 1000.0)))

    def resolved_fft_size(self, sample_rate: int) -> int:
        n = self.frame_samples(sample_rate)
        if self.fft_size is None:
            return 1 << max(1, int(n - 1).bit_length())
        if self.fft_size < n:
            raise FeatureError(f"fft_size {self.fft_size} is shorter than a frame ({n} samples)")
        return self.fft_size

    def band_edges(self, sample_rate: int) -> tuple[float, float]:
        nyquist = sample_rate / 2.0
        fmax = nyquist if self.fmax_hz is None else self.fmax_hz
        if fmax > nyquist:
            raise FeatureError(f"fmax_hz {fmax} exceeds Nyquist {nyquist}")
        if self.fmin_hz >= fmax:
            raise FeatureError("need fmin_hz < fmax_hz")
        return self.fmin_hz, fmax

    @classmethod
    def from_dict(cls, d: dict) -> "LmsConfig":
        return cls(**d)


@dataclass
class LmsFeature:
    """``values`` is n_mel x n_frames."""

    values: np.ndarray
    config: LmsConfig = field(default_factory=LmsConfig)
    sample_rate: int | None = None

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _is_pow2(n) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(signal: AudioSignal, cfg: LmsConfig) -> np.ndarray:
    """Split into overlapping frames, shape (n_frames, frame_len).

    Trailing samples that do not fill a whole frame are dropped.
    """
    frame = cfg.frame_samples(signal.sample_rate)
    hop = cfg.hop_samples(signal.sample_rate)
    return _frames(signal.samples, frame, hop)


def _frames(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if x.size < frame:
        raise FeatureError(f"signal too short: {x.size} samples < frame of {frame}")
    n_frames = (x.size - frame) // hop + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop]
    return np.ascontiguousarray(windows[:n_frames])


def apply_hamming(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if n < 2:
        raise FeatureError("Hamming window needs at least 2 samples")
    return frame * hamming(n)


def hamming(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def power_spectrum(frame: np.ndarray, fft_size: int) -> np.ndarray:
    """|DFT|^2 of the zero-padded frame(s), last axis of length fft_size/2 + 1."""
    if not _is_pow2(fft_size):
        raise FeatureError(f"fft_size {fft_size} is not a power of two")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise FeatureError(f"frame of {frame.shape[-1]} samples exceeds fft_size {fft_size}")
    spec = np.fft.rfft(frame, n=fft_size, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def mel_center_frequencies(cfg: LmsConfig, sample_rate: int) -> np.ndarray:
    """Band edges plus centres: n_mel + 2 points equally spaced in mel."""
    fmin, fmax = cfg.band_edges(sample_rate)
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), cfg.n_mel + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: LmsConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters evaluated at the FFT bin frequencies.

    Row b rises linearly from point b to point b+1 and falls to zero at
    point b+2 of :func:`mel_center_frequencies`, with unit peak height.
    """
    fft_size = cfg.resolved_fft_size(sample_rate)
    freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    pts = mel_center_frequencies(cfg, sample_rate)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~np.any(fb > 0, axis=1))
    if empty.size:
        raise FeatureError(
            f"n_mel={cfg.n_mel} too large for fft_size={fft_size}: "
            f"{empty.size} filter(s) cover no FFT bin (first: band {empty[0]})"
        )
    return fb


def extract_lms(signal: AudioSignal, cfg: LmsConfig | None = None) -> LmsFeature:
    cfg = cfg or LmsConfig()
    fft_size = cfg.resolved_fft_size(signal.sample_rate)
    frames = apply_hamming(frame_signal(signal, cfg))
    power = power_spectrum(frames, fft_size)
    fb = mel_filterbank(cfg, signal.sample_rate)
    energies = power @ fb.T  # frames x bands
    values = np.log(np.maximum(energies, cfg.log_floor)).T
    return LmsFeature(np.ascontiguousarray(values), cfg, signal.sample_rate)


# --- I/O -------------------------------------------------------------------


def read_wav(path) -> AudioSignal:
    """16-bit PCM WAV, mono or the first channel of a multi-channel file."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise FeatureError(f"{path}: compressed WAV not supported")
            width = fh.getsampwidth()
            if width != 2:
                raise FeatureError(f"{path}: only 16-bit PCM supported (got {8 * width}-bit)")
            channels = fh.getnchannels()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FeatureError(f"{path}: unreadable WAV ({exc})") from exc
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0 or data.size % channels:
        raise FeatureError(f"{path}: truncated or empty sample data")
    data = data.reshape(-1, channels)[:, 0]
    return AudioSignal(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(signal.sample_rate)
        fh.writeframes(pcm.tobytes())


def save_lms(feature: LmsFeature, csv_path) -> Path:
    """Write the matrix as CSV (rows = mel bands) plus a ``.json`` sidecar."""
    csv_path = Path(csv_path)
    np.savetxt(csv_path, feature.values, delimiter=",", fmt="%.17g")
    sidecar = csv_path.with_suffix(".json")
    meta = {"config": asdict(feature.config), "sample_rate": feature.sample_rate,
            "shape": list(feature.values.shape)}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_lms(csv_path) -> LmsFeature:
    csv_path = Path(csv_path)
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        return LmsFeature(values, LmsConfig.from_dict(meta["config"]), meta.get("sample_rate"))
    return LmsFeature(values)
