"""Deterministic conversion of PCM audio into log-mel features and blocks.

The recipe: frame the 16 kHz signal into non-overlapping 1024-sample
Hamming windows, take the power spectrum, project through a Slaney-style
area-normalized 40-bin mel filterbank, log-compress, then slice the frame
sequence into overlapping 11-frame blocks with hop 1.

Everything here is a pure function of its inputs, so clips can be
featurized in parallel and identical bytes always produce identical
feature matrices.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CacheFormatError,
    ClipTooShortError,
    EmptyFilterError,
    SampleRateMismatchError,
    WavFormatError,
)

SAMPLE_RATE = 16000
FRAME_LEN = 1024
N_MELS = 40
BLOCK_LEN = 11
BLOCK_HOP = 1
LOG_FLOOR = 1e-8

CACHE_MAGIC = b"WTF1"


@dataclass
class AudioClip:
    """A mono waveform with amplitudes in [-1.0, 1.0)."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""


def load_wav(path, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a PCM16 mono WAV file, scaling samples by 1/32768.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    WavFormatError
        For non-RIFF input, compressed codecs, non-mono channel layouts,
        non-16-bit samples, or an empty clip.
    SampleRateMismatchError
        If the container rate differs from ``expected_rate``; there is no
        silent resampling.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV ({wf.getcomptype()}) not supported")
            if wf.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            rate = wf.getframerate()
            if rate != expected_rate:
                raise SampleRateMismatchError(f"{path}: sample rate {rate} != expected {expected_rate}")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if samples.size == 0:
        raise WavFormatError(f"{path}: clip is empty")
    return AudioClip(samples=samples, sample_rate=rate, id=path.stem)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write a float waveform in [-1, 1) as PCM16 mono, inverting load_wav's scale."""
    pcm = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


def power_spectrogram(clip: AudioClip, frame_len: int = FRAME_LEN) -> np.ndarray:
    """Power spectrum of consecutive non-overlapping Hamming-windowed frames.

    Returns a (T, frame_len // 2 + 1) float64 grid where T is
    ``floor(num_samples / frame_len)``; a trailing partial frame is
    discarded. Bin j holds the squared magnitude of DFT bin j.
    """
    n = len(clip.samples)
    if n < frame_len:
        raise ClipTooShortError(f"clip has {n} samples, needs at least {frame_len}")
    t = n // frame_len
    frames = np.asarray(clip.samples[: t * frame_len], dtype=np.float64).reshape(t, frame_len)
    window = np.hamming(frame_len)
    spectrum = np.fft.rfft(frames * window, axis=1)
    return (spectrum.real**2 + spectrum.imag**2)


def _hz_to_mel(freq_hz: np.ndarray) -> np.ndarray:
    """Mel scale: linear below 1 kHz, logarithmic above (Slaney convention)."""
    freq_hz = np.asarray(freq_hz, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = freq_hz / f_sp
    above = freq_hz >= min_log_hz
    mel[above] = min_log_mel + np.log(freq_hz[above] / min_log_hz) / logstep
    return mel


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    freq = f_sp * mel
    above = mel >= min_log_mel
    freq[above] = 1000.0 * np.exp(logstep * (mel[above] - min_log_mel))
    return freq


def mel_filterbank(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE,
                   n_fft_bins: int = FRAME_LEN // 2 + 1) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist, as an (n_mels, n_fft_bins) grid.

    Each filter is scaled by 2 / (f_upper - f_lower) so filters have
    roughly unit area regardless of bandwidth.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    n_fft = 2 * (n_fft_bins - 1)
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft_bins)
    mel_edges = np.linspace(0.0, _hz_to_mel(np.array([sample_rate / 2.0]))[0], n_mels + 2)
    hz_edges = _mel_to_hz(mel_edges)

    ramps = hz_edges[:, None] - fft_freqs[None, :]
    widths = np.diff(hz_edges)
    weights = np.zeros((n_mels, n_fft_bins))
    for b in range(n_mels):
        lower = -ramps[b] / widths[b]
        upper = ramps[b + 2] / widths[b + 1]
        weights[b] = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_edges[2:] - hz_edges[:n_mels]))[:, None]

    empty = np.where(~(weights > 0).any(axis=1))[0]
    if empty.size:
        raise EmptyFilterError(
            f"filter {empty[0]} is empty: {n_mels} mel bins exceed the resolution of "
            f"{n_fft}-point FFT at {sample_rate} Hz"
        )
    return weights


def log_mel(power: np.ndarray, filterbank: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """Log-compressed mel energies: ln(filterbank . power + floor), float32 (T, B)."""
    power = np.asarray(power)
    if power.ndim != 2 or power.shape[1] != filterbank.shape[1]:
        raise ValueError(
            f"power grid {power.shape} does not match filterbank {filterbank.shape}"
        )
    energies = power @ filterbank.T
    return np.log(energies + floor).astype(np.float32)


def extract_features(clip: AudioClip, n_mels: int = N_MELS,
                     frame_len: int = FRAME_LEN) -> np.ndarray:
    """Full recipe: power spectrogram -> mel filterbank -> log, as float32 (T, B)."""
    fb = mel_filterbank(n_mels, clip.sample_rate, frame_len // 2 + 1)
    return log_mel(power_spectrogram(clip, frame_len), fb)


def make_blocks(features: np.ndarray, block_len: int = BLOCK_LEN,
                block_hop: int = BLOCK_HOP) -> np.ndarray:
    """Slice (T, B) features into an (M, block_len, B) stack of overlapping blocks.

    M = floor((T - block_len) / block_hop) + 1; block m starts at frame
    m * block_hop and copies the source rows unmodified.
    """
    features = np.asarray(features)
    t = features.shape[0]
    if t < block_len:
        raise ClipTooShortError(f"clip too short: {t} frames < block length {block_len}")
    m = (t - block_len) // block_hop + 1
    starts = np.arange(m) * block_hop
    return np.stack([features[s : s + block_len] for s in starts])


def block_time_bounds(block_index: int, block_len: int = BLOCK_LEN,
                      frame_len: int = FRAME_LEN, sample_rate: int = SAMPLE_RATE,
                      block_hop: int = BLOCK_HOP) -> tuple:
    """Seconds covered by block m: frames [m*hop, m*hop + block_len)."""
    start = block_index * block_hop * frame_len / sample_rate
    end = (block_index * block_hop + block_len) * frame_len / sample_rate
    return start, end


def block_center_time(block_index: int, block_len: int = BLOCK_LEN,
                      frame_len: int = FRAME_LEN, sample_rate: int = SAMPLE_RATE,
                      block_hop: int = BLOCK_HOP) -> float:
    """Midpoint in seconds of the block's center frame."""
    center_frame = block_index * block_hop + block_len // 2
    return (center_frame + 0.5) * frame_len / sample_rate


def write_feature_cache(path, features: np.ndarray) -> None:
    """Write a (T, B) feature matrix: magic, T and B as u32 LE, float32 LE rows."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"feature cache expects a 2-d matrix, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise CacheFormatError(f"{path}: bad feature cache magic {magic!r}")
        t, b = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * t * b), dtype="<f4")
    if data.size != t * b:
        raise CacheFormatError(f"{path}: truncated feature cache")
    return data.reshape(t, b).astype(np.float32)
