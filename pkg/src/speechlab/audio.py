"""Synthetic 16 kHz audio and the log-mel front end.

Each grapheme is rendered as a 120 ms two-partial tone whose fundamental
is a fixed function of the grapheme, lightly perturbed by a per-utterance
speaker voice, plus seeded white noise. This keeps every downstream
experiment deterministic while exercising the real featurization path.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .seeding import derive_rng
from .tokens import Vocabulary, default_vocabulary

SAMPLE_RATE = 16000
GRAPHEME_MS = 120
GRAPHEME_SAMPLES = SAMPLE_RATE * GRAPHEME_MS // 1000

FRAME_LENGTH_MS = 25
FRAME_SHIFT_MS = 10
WINDOW = SAMPLE_RATE * FRAME_LENGTH_MS // 1000  # 400
HOP = SAMPLE_RATE * FRAME_SHIFT_MS // 1000  # 160
NUM_MEL = 80
MEL_LOW_HZ = 125.0
MEL_HIGH_HZ = 7600.0
LOG_FLOOR = 1e-6
NFFT = 512

NUM_SPEAKERS = 4
# Per-speaker pitch multiplier and second-partial gain.
SPEAKER_PITCH = (0.97, 0.99, 1.01, 1.03)
SPEAKER_TIMBRE = (0.15, 0.38, 0.6, 0.85)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # int16
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.size == 0:
            raise ValueError("waveform must be non-empty")
        if self.samples.dtype != np.int16:
            raise ValueError(f"samples must be int16, got {self.samples.dtype}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def to_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) / 32768.0


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray  # (T, 80)
    frame_shift_ms: int = FRAME_SHIFT_MS
    frame_length_ms: int = FRAME_LENGTH_MS

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != NUM_MEL:
            raise ValueError(f"frames must be Tx{NUM_MEL}, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def grapheme_frequency(grapheme_id: int) -> float:
    """Fundamental for grapheme id >= 1; geometric spacing keeps neighbours
    separated by more than the speaker pitch spread."""
    return 300.0 * (1.115 ** (grapheme_id - 1))


def speaker_of_seed(seed: int) -> int:
    return int(seed) % NUM_SPEAKERS


def synth_utterance(transcript: str, seed: int, noise_level: float,
                    vocab: Vocabulary | None = None) -> Waveform:
    """Render a transcript as a deterministic tone sequence.

    Bit-identical for equal (transcript, seed, noise_level). Raises on an
    empty transcript or any out-of-vocabulary character.
    """
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    vocab = vocab or default_vocabulary()
    ids = vocab.encode(transcript)
    if not ids:
        raise ValueError("transcript must be non-empty")
    speaker = speaker_of_seed(seed)
    pitch = SPEAKER_PITCH[speaker]
    timbre = SPEAKER_TIMBRE[speaker]
    rng = derive_rng("synth", transcript, int(seed))
    t = np.arange(GRAPHEME_SAMPLES) / SAMPLE_RATE
    fade = np.ones(GRAPHEME_SAMPLES)
    edge = SAMPLE_RATE * 5 // 1000
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    fade[:edge] = ramp
    fade[-edge:] = ramp[::-1]
    pieces = []
    for gid in ids:
        f0 = grapheme_frequency(gid) * pitch
        phase = rng.uniform(0.0, 2 * np.pi)
        tone = 0.32 * np.sin(2 * np.pi * f0 * t + phase)
        tone += 0.32 * timbre * np.sin(2 * np.pi * f0 * 1.21 * t)
        pieces.append(tone * fade)
    signal = np.concatenate(pieces)
    if noise_level > 0:
        signal = signal + noise_level * rng.standard_normal(signal.size)
    samples = np.clip(signal, -0.999, 0.999)
    return Waveform(samples=(samples * 32767.0).astype(np.int16))


def write_wav(path, waveform: Waveform) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(waveform.samples.astype("<i2").tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"expected mono PCM16 audio: {path}")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    return Waveform(samples=samples, sample_rate=rate)


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_mel: int = NUM_MEL, nfft: int = NFFT,
                   low_hz: float = MEL_LOW_HZ, high_hz: float = MEL_HIGH_HZ) -> np.ndarray:
    """Triangular filters over rfft bins, (num_mel, nfft//2 + 1)."""
    points = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), num_mel + 2))
    bin_hz = np.arange(nfft // 2 + 1) * SAMPLE_RATE / nfft
    bank = np.zeros((num_mel, nfft // 2 + 1))
    for m in range(num_mel):
        left, center, right = points[m], points[m + 1], points[m + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_band_edges() -> np.ndarray:
    """(num_mel, 2) low/high support edge of each triangular filter in Hz."""
    points = mel_to_hz(np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ), NUM_MEL + 2))
    return np.stack([points[:-2], points[2:]], axis=1)


_FILTERBANK = None


def logmel(waveform: Waveform) -> Spectrogram:
    """80-band log-mel features: 25 ms Hann window, 10 ms hop, natural log
    with an absolute floor of 1e-6 on the mel magnitudes."""
    global _FILTERBANK
    x = waveform.to_float()
    if x.size < WINDOW:
        raise ValueError(f"waveform shorter than one {FRAME_LENGTH_MS} ms window")
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    num_frames = (x.size - WINDOW) // HOP + 1
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(num_frames)[:, None]
    frames = x[idx] * _hann(WINDOW)
    mags = np.abs(np.fft.rfft(frames, n=NFFT, axis=1))
    mel = mags @ _FILTERBANK.T
    return Spectrogram(frames=np.log(np.maximum(mel, LOG_FLOOR)))
