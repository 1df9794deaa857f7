"""Synthetic audio generation and the log-mel front end."""

import numpy as np
import pytest

from speechlab.audio import (GRAPHEME_SAMPLES, HOP, LOG_FLOOR, SAMPLE_RATE, WINDOW,
                             Spectrogram, Waveform, logmel, mel_band_edges, read_wav,
                             synth_utterance, write_wav)


def test_synthesis_is_deterministic():
    a = synth_utterance("ab", 7, 0.0)
    b = synth_utterance("ab", 7, 0.0)
    np.testing.assert_array_equal(a.samples, b.samples)
    noisy1 = synth_utterance("ab", 7, 0.3)
    noisy2 = synth_utterance("ab", 7, 0.3)
    np.testing.assert_array_equal(noisy1.samples, noisy2.samples)


def test_different_seed_changes_waveform():
    a = synth_utterance("ab", 1, 0.1)
    b = synth_utterance("ab", 2, 0.1)
    assert not np.array_equal(a.samples, b.samples)


def test_empty_transcript_rejected():
    with pytest.raises(ValueError, match="non-empty"):
        synth_utterance("", 3, 0.0)


def test_out_of_vocabulary_rejected():
    with pytest.raises(ValueError, match="vocabulary"):
        synth_utterance("aZb", 3, 0.0)


def test_duration_is_120ms_per_grapheme():
    wav = synth_utterance("abc", 11, 0.0)
    assert wav.samples.size == 3 * GRAPHEME_SAMPLES
    assert abs(wav.duration_s - 0.360) < WINDOW / SAMPLE_RATE


def test_waveform_must_be_16khz():
    with pytest.raises(ValueError, match="16000"):
        Waveform(samples=np.zeros(10, dtype=np.int16), sample_rate=8000)


def test_silence_hits_log_floor():
    wav = Waveform(samples=np.zeros(SAMPLE_RATE, dtype=np.int16))
    spec = logmel(wav)
    np.testing.assert_array_equal(spec.frames, np.full_like(spec.frames, np.log(LOG_FLOOR)))


def test_one_second_gives_98_frames():
    wav = Waveform(samples=np.zeros(SAMPLE_RATE, dtype=np.int16))
    assert logmel(wav).num_frames == (SAMPLE_RATE - WINDOW) // HOP + 1 == 98


def test_too_short_waveform_rejected():
    with pytest.raises(ValueError, match="window"):
        logmel(Waveform(samples=np.zeros(WINDOW - 1, dtype=np.int16)))


def test_pure_tone_peaks_in_band_containing_1khz():
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    tone = (0.5 * np.sin(2 * np.pi * 1000.0 * t) * 32767).astype(np.int16)
    spec = logmel(Waveform(samples=tone))
    edges = mel_band_edges()
    for frame in spec.frames:
        band = int(frame.argmax())
        low, high = edges[band]
        assert low <= 1000.0 <= high


def test_prepending_one_hop_of_silence_shifts_frames():
    wav = synth_utterance("cab", 5, 0.2)
    shifted = Waveform(samples=np.concatenate([np.zeros(HOP, dtype=np.int16), wav.samples]))
    base = logmel(wav).frames
    moved = logmel(shifted).frames
    assert moved.shape[0] == base.shape[0] + 1
    np.testing.assert_allclose(moved[1:], base, atol=1e-5)


def test_spectrogram_requires_80_bands():
    with pytest.raises(ValueError, match="80"):
        Spectrogram(frames=np.zeros((5, 13)))


def test_wav_round_trip(tmp_path):
    wav = synth_utterance("ba d", 9, 0.4)
    path = tmp_path / "utt.wav"
    write_wav(path, wav)
    back = read_wav(path)
    assert back.sample_rate == SAMPLE_RATE
    np.testing.assert_array_equal(back.samples, wav.samples)
