"""Exercise the three augmentations and show their invariants numerically."""

import numpy as np

from esckit import augment as aug
from esckit import features as ft

SR = ft.SAMPLE_RATE
n = SR  # one second
clip = ft.WaveClip(samples=0.8 * np.sin(2 * np.pi * 440.0 * np.arange(n) / SR),
                   sample_rate=SR, label=0, fold=1, clip_id="tone")


def peak_hz(c):
    spec = ft.stft_power(c)
    return int(np.bincount(spec.argmax(axis=0)).argmax()) * SR / 1024


print(f"source: {clip.samples.size} samples, peak {peak_hz(clip):.0f} Hz")

print("\ntime stretch (rate > 1 plays faster, pitch preserved):")
for rate in (0.8, 1.0, 1.3):
    out = aug.time_stretch(clip, rate)
    print(f"  rate {rate}: {out.samples.size} samples "
          f"(target {clip.samples.size / rate:.0f}), peak {peak_hz(out):.0f} Hz")

print("\npitch shift (duration preserved, frequency scales by 2^(semitones/12)):")
for semis in (-3.5, 0.0, 3.5):
    out = aug.pitch_shift(clip, semis)
    print(f"  {semis:+.1f} st: {out.samples.size} samples, peak {peak_hz(out):.0f} Hz "
          f"(target {440 * 2 ** (semis / 12):.0f} Hz)")

print("\nmixup (convex combination of two feature/label pairs):")
rng = np.random.default_rng(0)
seg_a = ft.LogGTSegment(values=rng.standard_normal((128, 128, 2)).astype(np.float32),
                        clip_id="a", segment_index=0, label=2, fold=1)
seg_b = ft.LogGTSegment(values=rng.standard_normal((128, 128, 2)).astype(np.float32),
                        clip_id="b", segment_index=0, label=7, fold=1)
onehot = np.eye(10, dtype=np.float32)
for lam in (1.0, 0.7, 0.0):
    mixed, label = aug.mixup(seg_a, onehot[2], seg_b, onehot[7], lam)
    tops = {i: round(float(v), 2) for i, v in enumerate(label) if v > 0}
    print(f"  lambda {lam}: label mass {tops} (sum {label.sum():.4f})")

draws = np.array([aug.sample_lambda(0.2, rng) for _ in range(50_000)])
print(f"\nBeta(0.2, 0.2) draws: mean {draws.mean():.3f}, "
      f"{100 * np.mean((draws < 0.1) | (draws > 0.9)):.0f}% near the endpoints "
      "(small alpha keeps most mixes mild)")
