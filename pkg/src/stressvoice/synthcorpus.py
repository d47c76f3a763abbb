"""Deterministic synthetic corpora with planted acoustic-target couplings.

The real stress-protocol recordings are private, so tests and acceptance
runs use generated stand-ins: either full WAV sessions whose pitch,
loudness dynamics, and spectral tilt are driven by per-speaker latent
controls, or feature-level sequences that bypass the DSP for fast model
tests.  Session metadata is back-solved so the target formulas reproduce
the planted change scores exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer, write_wav, CANONICAL_RATE
from .features import FeatureSequence
from .sessions import SessionRecord, write_sessions

CORTISOL_BASELINE = 10.0  # nmol/l
_PEAK_SHAPE = np.array([0.3, 1.0, 0.8, 0.6, 0.4, 0.2])  # T3..T8 profile


@dataclass
class SynthSpec:
    n_speakers: int = 27
    duration_s: float = 60.0
    # rows: cortisol, appraisal, affect; columns: latent controls
    # (pitch offset, loudness/tilt offset, first-half pitch slope)
    coupling: np.ndarray = field(
        default_factory=lambda: np.diag([5.0, 1.8, 0.7])
    )
    offsets: np.ndarray = field(
        default_factory=lambda: np.array([6.0, 0.0, 0.8])
    )
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.coupling = np.asarray(self.coupling, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        if np.linalg.matrix_rank(self.coupling) < 3:
            raise ValueError("coupling matrix must have full rank")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _split_labels(n):
    """Speaker-disjoint split assignment, roughly 63/18.5/18.5."""
    n_dev = max(1, round(n * 0.185))
    n_test = max(1, round(n * 0.185))
    n_train = n - n_dev - n_test
    return ["train"] * n_train + ["dev"] * n_dev + ["test"] * n_test


def _backsolve_cortisol(delta):
    """T1..T8 such that max(T3..T8) - mean(T1, T2) equals delta exactly."""
    delta = max(delta, -CORTISOL_BASELINE + 0.1)
    if delta >= 0:
        t38 = CORTISOL_BASELINE + _PEAK_SHAPE * delta
    else:
        t38 = np.full(6, CORTISOL_BASELINE + delta)
    return (CORTISOL_BASELINE, CORTISOL_BASELINE) + tuple(t38)


def _session_record(speaker_id, audio_path, deltas, split):
    return SessionRecord(
        speaker_id=speaker_id,
        audio_path=audio_path,
        cortisol=_backsolve_cortisol(deltas[0]),
        si_pre=2.0, si_post=2.0 + deltas[1],
        na_pre=1.5, na_post=1.5 + deltas[2],
        split=split,
    )


def _speaker_signal(latents, duration_s, rng):
    """Harmonic-plus-noise voice stand-in controlled by the latents.

    latents[0] shifts the base pitch, latents[1] sets spectral tilt and a
    second-half gain step (both survive peak normalization), latents[2]
    scales a triangular pitch excursion confined to the first half.  The
    excursion integrates to little mean shift, so the f0-mean feature
    stays rank-correlated with latents[0].
    """
    sr = CANONICAL_RATE
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    half = duration_s / 2.0

    base = 140.0 + 35.0 * latents[0]
    tri = np.clip(1.0 - np.abs(t - half / 2.0) / (half / 2.0), 0.0, 1.0)
    f0 = base + 40.0 * latents[2] * tri
    f0 = f0 + 3.0 * np.sin(2 * np.pi * 5.0 * t)  # vibrato -> jitter

    phase = 2 * np.pi * np.cumsum(f0) / sr
    tilt = 1.5 + 0.8 * latents[1]
    x = np.zeros(n)
    for k in range(1, 6):
        x += (k ** -tilt) * np.sin(k * phase)

    am = 1.0 + 0.1 * np.sin(2 * np.pi * 3.0 * t)  # tremolo -> shimmer
    gain_step = np.where(t < half, 1.0, 10.0 ** (6.0 * latents[1] / 20.0))
    x = x * am * gain_step

    # pink-ish noise floor at roughly -30 dB
    white = rng.standard_normal(n)
    pink = np.convolve(white, np.ones(8) / 8.0, mode="same")
    x = x + 0.03 * pink / (np.std(pink) + 1e-12)

    x = 0.5 * x / (np.max(np.abs(x)) + 1e-12)
    return AudioBuffer(samples=x, sample_rate=sr)


def synth_audio_corpus(spec: SynthSpec, out_dir):
    """Write per-speaker WAVs plus sessions.csv; returns (records, latents).

    Deterministic per seed: identical spec produces byte-identical output.
    """
    os.makedirs(out_dir, exist_ok=True)
    splits = _split_labels(spec.n_speakers)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_speakers)
    records = []
    all_latents = []
    for i in range(spec.n_speakers):
        rng = np.random.default_rng(seeds[i])
        latents = rng.uniform(-1.0, 1.0, size=3)
        deltas = (spec.offsets + spec.coupling @ latents
                  + spec.noise_std * rng.standard_normal(3))
        sid = f"spk{i:03d}"
        wav_path = os.path.join(out_dir, f"{sid}.wav")
        write_wav(_speaker_signal(latents, spec.duration_s, rng), wav_path)
        records.append(_session_record(sid, wav_path, deltas, splits[i]))
        all_latents.append(latents)
    write_sessions(records, os.path.join(out_dir, "sessions.csv"))
    return records, np.array(all_latents)


def synth_feature_corpus(n_train, n_dev, n_test, t_len, d, noise_std, seed,
                         signal_region="full", signal_cols=(0, 1, 2)):
    """Feature-level corpus with a planted linear signal.

    Each sequence's designated columns carry the scaled target value as
    their mean plus seeded noise; remaining columns are standard-normal
    distractors.  With signal_region="first_half" the second half of every
    signal column is replaced by pure noise, leaving all target
    information in the first half.

    Returns (sequences, targets) where targets[i] is the 3-vector in
    [0, 1] for sequences[i]; splits are set on the sequences.
    """
    counts = [("train", n_train), ("dev", n_dev), ("test", n_test)]
    seeds = np.random.SeedSequence(seed).spawn(n_train + n_dev + n_test)
    sequences, targets = [], []
    i = 0
    for split, count in counts:
        for _ in range(count):
            rng = np.random.default_rng(seeds[i])
            y = rng.uniform(0.0, 1.0, size=3)
            data = rng.standard_normal((t_len, d))
            stop = t_len // 2 if signal_region == "first_half" else t_len
            for j, col in enumerate(signal_cols):
                data[:stop, col] = y[j] + noise_std * rng.standard_normal(stop)
            sequences.append(FeatureSequence(
                data=data, valid_len=t_len,
                speaker_id=f"syn{i:04d}", split=split,
            ))
            targets.append(y)
            i += 1
    return sequences, targets
