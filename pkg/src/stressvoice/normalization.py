"""Feature z-scoring: global train-split statistics or per-speaker.

Standard mode computes column means/stds from train-split windows only and
applies them everywhere.  Speaker mode normalizes each speaker with that
speaker's own statistics, including dev/test speakers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import DataError

EPSILON = 1e-8
GLOBAL_KEY = "global"


@dataclass
class NormStats:
    mode: str  # "standard" | "speaker"
    stats: dict = field(default_factory=dict)  # key -> (mean, std) arrays
    epsilon: float = EPSILON

    def constant_columns(self, key=GLOBAL_KEY):
        _, std = self.stats[key]
        return std < self.epsilon

    def to_json(self, path):
        payload = {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "stats": {
                k: {"mean": m.tolist(), "std": s.tolist()}
                for k, (m, s) in self.stats.items()
            },
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as f:
            p = json.load(f)
        stats = {
            k: (np.array(v["mean"]), np.array(v["std"]))
            for k, v in p["stats"].items()
        }
        return cls(mode=p["mode"], stats=stats, epsilon=p["epsilon"])


def _column_stats(rows):
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population convention
    return mean, std


def fit(sequences, mode):
    """Fit normalization statistics.

    standard: pooled over valid rows of train-split sequences.
    speaker: one entry per speaker over all of that speaker's windows,
    regardless of split.
    """
    if mode == "standard":
        rows = [s.data[: s.valid_len] for s in sequences if s.split == "train"]
        if not rows:
            raise DataError("standard normalization needs >=1 train sequence")
        return NormStats(mode=mode,
                         stats={GLOBAL_KEY: _column_stats(np.vstack(rows))})
    if mode == "speaker":
        by_speaker = {}
        for s in sequences:
            by_speaker.setdefault(s.speaker_id, []).append(s.data[: s.valid_len])
        if not by_speaker:
            raise DataError("speaker normalization needs >=1 sequence")
        return NormStats(
            mode=mode,
            stats={k: _column_stats(np.vstack(v)) for k, v in by_speaker.items()},
        )
    raise DataError(f"unknown normalization mode {mode!r}")


def transform(seq, stats):
    """(x - mean) / max(std, epsilon) per column; shape preserved.

    Constant columns map to 0 rather than NaN.
    """
    key = GLOBAL_KEY if stats.mode == "standard" else seq.speaker_id
    if key not in stats.stats:
        raise DataError(f"no normalization statistics for speaker {key!r}")
    mean, std = stats.stats[key]
    data = (seq.data - mean) / np.maximum(std, stats.epsilon)
    return replace(seq, data=data)


def fit_transform(sequences, mode):
    stats = fit(sequences, mode)
    return [transform(s, stats) for s in sequences], stats
