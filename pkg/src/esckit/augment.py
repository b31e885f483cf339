"""Training-data augmentation: time stretch, pitch shift, and mixup.

Waveform augmentations run through a phase vocoder (1024-point STFT, 256
hop): time stretch resamples the frame sequence while keeping per-bin phase
advance consistent, so pitch is preserved; pitch shift is a time stretch
followed by linear resampling back to the original duration. Mixup forms
convex combinations of feature/label pairs with a Beta(alpha, alpha) weight.

A stretch rate above 1 plays faster, i.e. shortens the clip to ~N/rate
samples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PV_WINDOW = 1024
PV_HOP = 256


@dataclass
class AugmentConfig:
    stretch_range: tuple = (0.8, 1.3)
    shift_range_semitones: tuple = (-3.5, 3.5)
    copies_per_clip: int = 2
    mixup_alpha: float = 0.2
    mixup_enabled: bool = True
    rng_seed: int = 0


def _stft(x, n_fft=PV_WINDOW, hop=PV_HOP):
    n_frames = 1 + (x.size - n_fft) // hop
    window = np.hanning(n_fft)
    starts = np.arange(n_frames) * hop
    return np.fft.rfft(x[starts[:, None] + np.arange(n_fft)] * window, axis=1).T


def _istft(spec, n_fft=PV_WINDOW, hop=PV_HOP):
    n_frames = spec.shape[1]
    window = np.hanning(n_fft)
    length = (n_frames - 1) * hop + n_fft
    out = np.zeros(length)
    norm = np.zeros(length)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1)
    for m in range(n_frames):
        sl = slice(m * hop, m * hop + n_fft)
        out[sl] += frames[m] * window
        norm[sl] += window * window
    return out / np.maximum(norm, 1e-8)


def time_stretch(clip, rate):
    """Phase-vocoder time stretch; duration scales to ~len/rate, pitch kept."""
    if rate <= 0.0:
        raise ValueError(f"stretch rate must be positive, got {rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < PV_WINDOW:
        raise ValueError(f"clip {clip.clip_id!r} shorter than one {PV_WINDOW}-sample window")
    spec = _stft(x)
    n_bins, n_frames = spec.shape
    steps = np.arange(0.0, n_frames, rate)
    spec = np.concatenate([spec, np.zeros((n_bins, 1), dtype=spec.dtype)], axis=1)

    expected = 2.0 * np.pi * PV_HOP * np.arange(n_bins) / PV_WINDOW
    phase = np.angle(spec)
    magnitude = np.abs(spec)
    out = np.empty((n_bins, steps.size), dtype=np.complex128)
    phase_acc = phase[:, 0].copy()
    for m, step in enumerate(steps):
        i = int(step)
        frac = step - i
        mag = (1.0 - frac) * magnitude[:, i] + frac * magnitude[:, i + 1]
        out[:, m] = mag * np.exp(1j * phase_acc)
        dphi = phase[:, i + 1] - phase[:, i] - expected
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase_acc += expected + dphi
    return replace(clip, samples=_istft(out))


def pitch_shift(clip, semitones, valid_range=(-3.5, 3.5)):
    """Shift pitch by 2^(semitones/12) while keeping the duration.

    Realized as a time stretch by 2^(-semitones/12) followed by linear
    resampling back to the original sample count.
    """
    lo, hi = valid_range
    if not lo <= semitones <= hi:
        raise ValueError(f"pitch shift {semitones} outside [{lo}, {hi}] semitones")
    n = np.asarray(clip.samples).size
    stretched = time_stretch(clip, 2.0 ** (-semitones / 12.0))
    y = stretched.samples
    resampled = np.interp(np.linspace(0.0, y.size - 1.0, num=n), np.arange(y.size), y)
    return replace(clip, samples=resampled)


def mixup_arrays(x_i, y_i, x_j, y_j, lam):
    """Convex combination of two feature/label arrays with weight lam.

    lam = 1 returns (x_i, y_i) and lam = 0 returns (x_j, y_j) bitwise.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup lambda must be in [0, 1], got {lam}")
    if x_i.shape != x_j.shape:
        raise ValueError(f"mixup feature shapes differ: {x_i.shape} vs {x_j.shape}")
    if y_i.shape != y_j.shape:
        raise ValueError(f"mixup label shapes differ: {y_i.shape} vs {y_j.shape}")
    if lam == 1.0:
        return x_i.copy(), y_i.copy()
    if lam == 0.0:
        return x_j.copy(), y_j.copy()
    lam = np.float32(lam)
    return (lam * x_i + (1 - lam) * x_j).astype(x_i.dtype), lam * y_i + (1 - lam) * y_j


def mixup(seg_i, y_i, seg_j, y_j, lam):
    """Mixup on two feature segments; the result keeps seg_i's provenance."""
    values, label = mixup_arrays(seg_i.values, np.asarray(y_i, dtype=np.float32),
                                 seg_j.values, np.asarray(y_j, dtype=np.float32), lam)
    return replace(seg_i, values=values), label


def sample_lambda(alpha, rng):
    """One Beta(alpha, alpha) mixing weight."""
    if alpha <= 0.0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def augment_clip(clip, config, rng):
    """Generate waveform-augmented copies of one clip.

    Even copies are time-stretched, odd copies pitch-shifted, with factors
    drawn uniformly from the configured ranges.
    """
    out = []
    for c in range(config.copies_per_clip):
        if c % 2 == 0:
            rate = rng.uniform(*config.stretch_range)
            out.append(time_stretch(clip, rate))
        else:
            semis = rng.uniform(*config.shift_range_semitones)
            out.append(pitch_shift(clip, semis, valid_range=config.shift_range_semitones))
    return out
