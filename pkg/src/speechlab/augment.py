"""Adaptive spectrogram masking for supervised and self-training noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import NUM_MEL, Spectrogram
from .seeding import derive_rng


@dataclass(frozen=True)
class AugmentPolicy:
    freq_mask_count: int = 2
    freq_mask_param: int = 27
    time_mask_count: int = 10
    max_time_mask_ratio: float = 0.05

    def __post_init__(self):
        if self.freq_mask_count < 0 or self.time_mask_count < 0:
            raise ValueError("mask counts must be >= 0")
        if not 0.0 <= self.max_time_mask_ratio <= 1.0:
            raise ValueError("max_time_mask_ratio must lie in [0, 1]")
        if self.freq_mask_param > NUM_MEL:
            raise ValueError(f"freq_mask_param must be <= {NUM_MEL}")


@dataclass(frozen=True)
class MaskRegion:
    axis: str  # "time" | "freq"
    start: int
    width: int


def sample_mask_regions(num_frames: int, policy: AugmentPolicy,
                        rng: np.random.Generator) -> list[MaskRegion]:
    """Draw the mask layout for one spectrogram.

    Frequency masks: width ~ Uniform{0..F}, start uniform over the valid
    range. Time masks: width ~ Uniform{0..floor(ratio*T)}; masks may
    overlap and always lie fully inside the spectrogram.
    """
    regions = []
    for _ in range(policy.freq_mask_count):
        width = int(rng.integers(0, policy.freq_mask_param + 1))
        start = int(rng.integers(0, NUM_MEL - width + 1))
        regions.append(MaskRegion("freq", start, width))
    max_t = int(math.floor(policy.max_time_mask_ratio * num_frames))
    for _ in range(policy.time_mask_count):
        width = int(rng.integers(0, max_t + 1))
        start = int(rng.integers(0, num_frames - width + 1))
        regions.append(MaskRegion("time", start, width))
    return regions


def apply_specaugment(spec: Spectrogram, policy: AugmentPolicy, seed: int) -> Spectrogram:
    """Return a masked copy of the spectrogram; the input is untouched.

    Masked cells are set to 0 (post-log features); all other cells are
    bit-identical to the input. Deterministic per seed.
    """
    if spec.num_frames == 0:
        raise ValueError("spectrogram must be non-empty")
    rng = derive_rng("specaugment", int(seed))
    frames = spec.frames.copy()
    for region in sample_mask_regions(spec.num_frames, policy, rng):
        if region.axis == "freq":
            frames[:, region.start:region.start + region.width] = 0.0
        else:
            frames[region.start:region.start + region.width, :] = 0.0
    return Spectrogram(frames=frames, frame_shift_ms=spec.frame_shift_ms,
                       frame_length_ms=spec.frame_length_ms)
