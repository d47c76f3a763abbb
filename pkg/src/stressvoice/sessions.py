"""Session metadata ingestion and regression-target construction.

One session = one speaker undergoing the stress protocol: eight salivary
cortisol samples (two baseline, six follow-up), pre/post stress-index and
negative-affect questionnaire scores, and the path to the session
recording.  Three change scores are derived per session and affinely
scaled to [0, 1] using statistics fitted on the train split only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import ParseError, DataError

SPLITS = ("train", "dev", "test")
TARGET_NAMES = ("cortisol", "appraisal", "affect")

CSV_COLUMNS = (
    ["speaker_id", "audio_path"]
    + [f"cortisol_t{i}" for i in range(1, 9)]
    + ["si_pre", "si_post", "na_pre", "na_post", "split"]
)


@dataclass(frozen=True)
class SessionRecord:
    speaker_id: str
    audio_path: str
    cortisol: tuple  # T1..T8, nmol/l
    si_pre: float
    si_post: float
    na_pre: float
    na_post: float
    split: str

    def __post_init__(self):
        if len(self.cortisol) != 8:
            raise DataError(
                f"speaker {self.speaker_id!r}: expected 8 cortisol values, "
                f"got {len(self.cortisol)}"
            )
        for i, c in enumerate(self.cortisol, start=1):
            if not math.isfinite(c) or c < 0:
                raise DataError(
                    f"speaker {self.speaker_id!r}: cortisol_t{i}={c!r} "
                    "must be finite and >= 0"
                )
        if self.split not in SPLITS:
            raise DataError(
                f"speaker {self.speaker_id!r}: unknown split {self.split!r}"
            )


@dataclass(frozen=True)
class ScalingParams:
    """Per-target (min, max) fitted on the raw train-split deltas."""

    cortisol: tuple
    appraisal: tuple
    affect: tuple

    def pair(self, target):
        return getattr(self, target)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(
                {t: list(self.pair(t)) for t in TARGET_NAMES}, f, indent=2
            )

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        return cls(**{t: tuple(d[t]) for t in TARGET_NAMES})


@dataclass(frozen=True)
class TargetVector:
    cortisol_delta: float
    appraisal_delta: float
    affect_delta: float
    scaled: np.ndarray  # 3 values, train-split records lie in [0, 1]

    @property
    def raw(self):
        return np.array(
            [self.cortisol_delta, self.appraisal_delta, self.affect_delta]
        )


def load_sessions(path):
    """Parse the sessions CSV into a list of SessionRecord.

    Raises ParseError naming the offending row/column on any schema
    violation: missing column, non-numeric cell, duplicate speaker id, or
    unknown split label.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        seen = set()
        for rownum, row in enumerate(reader, start=2):
            def num(col):
                cell = row.get(col)
                if cell is None or cell == "":
                    raise ParseError(f"{path}:{rownum}: empty cell in {col!r}")
                try:
                    return float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{rownum}: non-numeric value {cell!r} "
                        f"in column {col!r}"
                    ) from None

            sid = row["speaker_id"]
            if sid in seen:
                raise ParseError(
                    f"{path}:{rownum}: duplicate speaker_id {sid!r}"
                )
            seen.add(sid)
            split = row["split"]
            if split not in SPLITS:
                raise ParseError(
                    f"{path}:{rownum}: unknown split label {split!r}"
                )
            try:
                records.append(
                    SessionRecord(
                        speaker_id=sid,
                        audio_path=row["audio_path"],
                        cortisol=tuple(
                            num(f"cortisol_t{i}") for i in range(1, 9)
                        ),
                        si_pre=num("si_pre"),
                        si_post=num("si_post"),
                        na_pre=num("na_pre"),
                        na_post=num("na_post"),
                        split=split,
                    )
                )
            except DataError as e:
                raise ParseError(f"{path}:{rownum}: {e}") from None
    return records


def write_sessions(records, path):
    """Write records back to the sessions CSV format (round-trip safe)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(
                [r.speaker_id, r.audio_path]
                + [repr(float(c)) for c in r.cortisol]
                + [repr(float(r.si_pre)), repr(float(r.si_post)),
                   repr(float(r.na_pre)), repr(float(r.na_post)), r.split]
            )


def cortisol_delta(record):
    """max(T3..T8) minus the mean of the two baseline samples T1, T2."""
    c = record.cortisol
    return max(c[2:]) - (c[0] + c[1]) / 2.0


def appraisal_delta(record):
    return record.si_post - record.si_pre


def affect_delta(record):
    return record.na_post - record.na_pre


def target_deltas(record):
    """Raw (cortisol, appraisal, affect) change scores as a 3-vector."""
    return np.array(
        [cortisol_delta(record), appraisal_delta(record), affect_delta(record)]
    )


def fit_scaling(train_records):
    """Fit per-target (min, max) over the raw deltas of the train split."""
    if len(train_records) < 2:
        raise DataError("need at least 2 train records to fit scaling")
    deltas = np.array([target_deltas(r) for r in train_records])
    lo, hi = deltas.min(axis=0), deltas.max(axis=0)
    for i, t in enumerate(TARGET_NAMES):
        if not hi[i] > lo[i]:
            raise DataError(
                f"degenerate spread for target {t!r}: min == max == {lo[i]}"
            )
    return ScalingParams(
        cortisol=(lo[0], hi[0]),
        appraisal=(lo[1], hi[1]),
        affect=(lo[2], hi[2]),
    )


def scale_targets(deltas, params):
    """Affine map (x - min) / (max - min) per target; no clipping.

    Dev/test values outside the train range extrapolate beyond [0, 1].
    """
    deltas = np.asarray(deltas, dtype=float)
    lo = np.array([params.pair(t)[0] for t in TARGET_NAMES])
    hi = np.array([params.pair(t)[1] for t in TARGET_NAMES])
    return (deltas - lo) / (hi - lo)


def build_targets(records, params=None):
    """Construct TargetVector per record.

    When params is None, scaling is fitted on the train-split records.
    Returns (targets dict keyed by speaker_id, params).
    """
    if params is None:
        params = fit_scaling([r for r in records if r.split == "train"])
    out = {}
    for r in records:
        d = target_deltas(r)
        out[r.speaker_id] = TargetVector(
            cortisol_delta=d[0],
            appraisal_delta=d[1],
            affect_delta=d[2],
            scaled=scale_targets(d, params),
        )
    return out, params
