"""Windowed acoustic feature extraction.

The recording is segmented into 1 s windows hopped by 0.5 s.  Inside each
window, frame-level low-level descriptors (25 ms frames, 10 ms hop) cover
frequency (pitch, jitter, formants), energy (loudness, shimmer,
harmonics-to-noise ratio), and spectral shape (alpha ratio, Hammarberg
index, band slopes, formant energies, harmonic differences).  A fixed
88-entry registry of functionals (mean, coefficient of variation,
percentiles) summarizes each window into one feature vector.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import DataError
from .audio import CANONICAL_RATE

WINDOW_S = 1.0
HOP_S = 0.5
FRAME_LEN = 400   # 25 ms at 16 kHz
FRAME_HOP = 160   # 10 ms
NFFT = 512
ACF_NFFT = 1024
F0_MIN = 55.0
F0_MAX = 600.0
LPC_ORDER = 12
LOUDNESS_FLOOR_DB = -120.0
VOICING_THRESHOLD = 0.45

REGISTRY_VERSION = "1.0"

_EPS = 1e-10


@dataclass(frozen=True)
class FrameLLD:
    """Low-level descriptors for one 25 ms frame."""

    f0: float
    voiced: bool
    jitter: float
    shimmer: float
    loudness: float
    hnr: float
    alpha_ratio: float
    hammarberg_index: float
    slope_0_500: float
    slope_500_1500: float
    f1_freq: float
    f1_bw: float
    f1_rel_energy: float
    f2_freq: float
    f2_bw: float
    f2_rel_energy: float
    f3_freq: float
    f3_bw: float
    f3_rel_energy: float
    h1_h2: float
    h1_a3: float


# (lld name, family, aggregate over voiced frames only)
_LLD_DEFS = [
    ("f0", "frequency", True),
    ("jitter", "frequency", True),
    ("f1_freq", "frequency", False),
    ("f1_bw", "frequency", False),
    ("f2_freq", "frequency", False),
    ("f2_bw", "frequency", False),
    ("f3_freq", "frequency", False),
    ("f3_bw", "frequency", False),
    ("loudness", "energy", False),
    ("shimmer", "energy", True),
    ("hnr", "energy", True),
    ("alpha_ratio", "spectral", False),
    ("hammarberg_index", "spectral", False),
    ("slope_0_500", "spectral", False),
    ("slope_500_1500", "spectral", False),
    ("f1_rel_energy", "spectral", False),
    ("f2_rel_energy", "spectral", False),
    ("f3_rel_energy", "spectral", False),
    ("h1_h2", "spectral", True),
    ("h1_a3", "spectral", True),
]

_EXTRA_DEFS = [
    ("f0", "frequency", "p50"),
    ("f0", "frequency", "range"),
    ("jitter", "frequency", "p50"),
    ("loudness", "energy", "p50"),
    ("loudness", "energy", "range"),
    ("shimmer", "energy", "p50"),
    ("hnr", "energy", "p50"),
    ("voiced_fraction", "voicing", "mean"),
]


@dataclass(frozen=True)
class FeatureDescriptor:
    family: str
    lld: str
    functional: str  # mean | cv | p20 | p50 | p80 | range

    @property
    def name(self):
        return f"{self.lld}_{self.functional}"


@dataclass(frozen=True)
class FeatureRegistry:
    entries: tuple
    version: str = REGISTRY_VERSION

    def __len__(self):
        return len(self.entries)

    def names(self):
        return [e.name for e in self.entries]

    def index(self, name):
        return self.names().index(name)


def build_registry():
    """The fixed 88-entry feature registry.

    20 frame LLDs x {mean, cv, p20, p80} plus 8 extra pitch/loudness/
    voice-quality statistics.  Order is stable across runs and versions.
    """
    entries = []
    for lld, family, _ in _LLD_DEFS:
        for fn in ("mean", "cv", "p20", "p80"):
            entries.append(FeatureDescriptor(family, lld, fn))
    for lld, family, fn in _EXTRA_DEFS:
        entries.append(FeatureDescriptor(family, lld, fn))
    assert len(entries) == 88
    names = [e.name for e in entries]
    assert len(set(names)) == len(names)
    return FeatureRegistry(entries=tuple(entries))


@dataclass
class FeatureSequence:
    data: np.ndarray            # (T, d)
    valid_len: int
    speaker_id: str
    split: str | None = None


def window_count(duration_s):
    """Number of 1 s windows at 0.5 s hop; short audio gets one padded window."""
    if duration_s <= 0:
        raise DataError(f"non-positive duration {duration_s}")
    if duration_s <= WINDOW_S:
        return 1
    return int(math.floor((duration_s - WINDOW_S) / HOP_S + 1e-9)) + 1


_FREQS = np.fft.rfftfreq(NFFT, d=1.0 / CANONICAL_RATE)


def _band(lo, hi):
    return (_FREQS > lo) & (_FREQS <= hi)


_BAND_LOW = _band(50.0, 1000.0)
_BAND_HIGH = _band(1000.0, 5000.0)
_BAND_HAM_LO = _band(0.0, 2000.0)
_BAND_HAM_HI = _band(2000.0, 5000.0)


def _slope_solver(lo, hi):
    bins = np.nonzero(_band(lo, hi))[0]
    a = np.stack([np.log2(_FREQS[bins]), np.ones(len(bins))], axis=1)
    return bins, np.linalg.pinv(a)[0]  # row yielding dB/octave slope


_SLOPE1_BINS, _SLOPE1_W = _slope_solver(0.0, 500.0)
_SLOPE2_BINS, _SLOPE2_W = _slope_solver(500.0, 1500.0)

_HANN = np.hanning(FRAME_LEN)


def _pair_delta(values, voiced):
    """Relative change between consecutive voiced frames, 0 elsewhere."""
    out = np.zeros_like(values)
    both = voiced[1:] & voiced[:-1]
    a, b = values[1:], values[:-1]
    denom = np.abs(a) + np.abs(b) + _EPS
    out[1:] = np.where(both, 2.0 * np.abs(a - b) / denom, 0.0)
    return out


def _formants(frames):
    """LPC formant candidates per frame: (freq, bw, rel_energy) x 3."""
    nf = frames.shape[0]
    # pre-emphasis flattens the spectral tilt before LPC
    pe = np.empty_like(frames)
    pe[:, 0] = frames[:, 0]
    pe[:, 1:] = frames[:, 1:] - 0.97 * frames[:, :-1]
    pw = pe * _HANN
    spec_pw = np.fft.rfft(pw, ACF_NFFT, axis=1)
    r = np.fft.irfft(np.abs(spec_pw) ** 2, axis=1)[:, : LPC_ORDER + 1]
    r /= FRAME_LEN

    idx = np.abs(np.arange(LPC_ORDER)[:, None] - np.arange(LPC_ORDER)[None, :])
    toep = r[:, idx]
    ridge = (1e-6 * r[:, 0] + 1e-12)[:, None, None] * np.eye(LPC_ORDER)
    a = np.linalg.solve(toep + ridge, r[:, 1 : LPC_ORDER + 1, None])[..., 0]

    comp = np.zeros((nf, LPC_ORDER, LPC_ORDER))
    comp[:, 0, :] = a
    comp[:, np.arange(1, LPC_ORDER), np.arange(LPC_ORDER - 1)] = 1.0
    roots = np.linalg.eigvals(comp)

    mag = np.abs(roots)
    freq = np.angle(roots) * CANONICAL_RATE / (2.0 * np.pi)
    with np.errstate(divide="ignore"):
        bw = -np.log(np.maximum(mag, 1e-12)) * CANONICAL_RATE / np.pi
    valid = (freq > 90.0) & (freq < 5500.0) & (bw < 1000.0) & (mag > 1e-8)

    out = np.zeros((nf, 3, 2))
    freq_sorted = np.where(valid, freq, np.inf)
    order = np.argsort(freq_sorted, axis=1)
    for k in range(3):
        j = order[:, k]
        rows = np.arange(nf)
        ok = valid[rows, j]
        out[:, k, 0] = np.where(ok, freq[rows, j], 0.0)
        out[:, k, 1] = np.where(ok, bw[rows, j], 0.0)
    return out


def _window_llds(x):
    """All frame-level LLDs for one 1 s window (16000 samples at 16 kHz)."""
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::FRAME_HOP]
    frames = frames - frames.mean(axis=1, keepdims=True)
    nf = frames.shape[0]

    rms = np.sqrt(np.mean(frames**2, axis=1))
    loudness = 20.0 * np.log10(np.maximum(rms, 1e-6))

    spec = np.abs(np.fft.rfft(frames * _HANN, NFFT, axis=1))

    # biased autocorrelation: taper keeps the fundamental lag dominant
    acf = np.fft.irfft(np.abs(np.fft.rfft(frames, ACF_NFFT, axis=1)) ** 2,
                       axis=1)[:, :FRAME_LEN] / FRAME_LEN
    r0 = np.maximum(acf[:, 0], _EPS)
    nacf = acf / r0[:, None]

    lag_min = int(math.ceil(CANONICAL_RATE / F0_MAX))
    lag_max = int(CANONICAL_RATE // F0_MIN)
    rows = np.arange(nf)
    # search after the ACF's first zero crossing so the zero-lag lobe of
    # low-pitched frames cannot masquerade as a short period
    head = nacf[:, : lag_max + 1] < 0.0
    has_neg = head.any(axis=1)
    first_neg = np.where(has_neg, np.argmax(head, axis=1), lag_min)
    start = np.maximum(lag_min, first_neg)
    lags = np.arange(lag_max + 1)
    seg = np.where((lags >= start[:, None]) & (lags >= lag_min),
                   nacf[:, : lag_max + 1], -np.inf)
    lag = np.argmax(seg, axis=1)
    peak = nacf[rows, lag]
    # peak-pick on the biased ACF (taper suppresses lag multiples), then
    # relocate and interpolate on the unbiased values so the taper slope
    # does not skew the sub-sample estimate
    taper = 1.0 - np.arange(FRAME_LEN) / FRAME_LEN
    unb = nacf / taper
    offsets = np.arange(-3, 4)
    cand = np.clip(lag[:, None] + offsets, lag_min, lag_max)
    lag = cand[rows, np.argmax(unb[rows[:, None], cand], axis=1)]
    a = unb[rows, lag - 1]
    b = unb[rows, lag]
    c = unb[rows, np.minimum(lag + 1, FRAME_LEN - 1)]
    denom = a - 2.0 * b + c
    safe = np.where(np.abs(denom) > _EPS, denom, 1.0)
    shift = np.where(np.abs(denom) > _EPS, 0.5 * (a - c) / safe, 0.0)
    lag_f = lag + np.clip(shift, -0.5, 0.5)

    voiced = (peak > VOICING_THRESHOLD) & (rms > 1e-4)
    f0 = np.where(voiced, CANONICAL_RATE / lag_f, 0.0)

    r_cl = np.clip(peak, 1e-6, 1.0 - 1e-6)
    hnr = np.where(voiced, 10.0 * np.log10(r_cl / (1.0 - r_cl)), 0.0)

    period = np.where(voiced, 1.0 / np.maximum(f0, _EPS), 0.0)
    jitter = _pair_delta(period, voiced)
    amp = np.max(np.abs(frames), axis=1)
    shimmer = _pair_delta(amp, voiced)

    e = spec**2
    alpha = 10.0 * np.log10(
        (e[:, _BAND_HIGH].sum(axis=1) + _EPS)
        / (e[:, _BAND_LOW].sum(axis=1) + _EPS)
    )
    hammarberg = 20.0 * np.log10(
        (spec[:, _BAND_HAM_LO].max(axis=1) + _EPS)
        / (spec[:, _BAND_HAM_HI].max(axis=1) + _EPS)
    )

    ldb = 20.0 * np.log10(spec + _EPS)
    slope1 = ldb[:, _SLOPE1_BINS] @ _SLOPE1_W
    slope2 = ldb[:, _SLOPE2_BINS] @ _SLOPE2_W

    fmt = _formants(frames)
    bin_hz = CANONICAL_RATE / NFFT
    spec_max = spec.max(axis=1) + _EPS

    def rel_energy(freqs):
        bins = np.clip(np.round(freqs / bin_hz).astype(int), 0, spec.shape[1] - 1)
        return 20.0 * np.log10((spec[rows, bins] + _EPS) / spec_max)

    out = {
        "f0": f0,
        "voiced": voiced,
        "jitter": jitter,
        "shimmer": shimmer,
        "loudness": loudness,
        "hnr": hnr,
        "alpha_ratio": alpha,
        "hammarberg_index": hammarberg,
        "slope_0_500": slope1,
        "slope_500_1500": slope2,
    }
    for i in range(3):
        fk = fmt[:, i, 0]
        out[f"f{i + 1}_freq"] = fk
        out[f"f{i + 1}_bw"] = fmt[:, i, 1]
        out[f"f{i + 1}_rel_energy"] = np.where(fk > 0, rel_energy(fk), 0.0)

    h1_bins = np.clip(np.round(f0 / bin_hz).astype(int), 0, spec.shape[1] - 1)
    h2_bins = np.clip(np.round(2 * f0 / bin_hz).astype(int), 0, spec.shape[1] - 1)
    h1 = 20.0 * np.log10(spec[rows, h1_bins] + _EPS)
    h2 = 20.0 * np.log10(spec[rows, h2_bins] + _EPS)
    out["h1_h2"] = np.where(voiced, h1 - h2, 0.0)
    f3 = out["f3_freq"]
    a3_freq = np.where(f3 > 0, f3, 3 * f0)
    a3_bins = np.clip(np.round(a3_freq / bin_hz).astype(int), 0, spec.shape[1] - 1)
    a3 = 20.0 * np.log10(spec[rows, a3_bins] + _EPS)
    out["h1_a3"] = np.where(voiced, h1 - a3, 0.0)

    for key, val in out.items():
        if key != "voiced":
            out[key] = np.nan_to_num(val, posinf=0.0, neginf=0.0)
    return out


def _fit_window(samples):
    """Zero-pad or trim a slice to exactly one window of samples."""
    n = int(round(WINDOW_S * CANONICAL_RATE))
    if len(samples) >= n:
        return samples[:n]
    return np.pad(samples, (0, n - len(samples)))


def extract_lld(window_buf):
    """Frame-level descriptors for a 1 s window, one FrameLLD per 10 ms hop."""
    if window_buf.sample_rate != CANONICAL_RATE:
        raise DataError(
            f"expected canonical rate {CANONICAL_RATE}, "
            f"got {window_buf.sample_rate}"
        )
    d = _window_llds(_fit_window(window_buf.samples))
    keys = [f.name for f in FrameLLD.__dataclass_fields__.values()]
    nf = len(d["f0"])
    return [
        FrameLLD(**{k: (bool(d[k][i]) if k == "voiced" else float(d[k][i]))
                    for k in keys})
        for i in range(nf)
    ]


def _lld_dict(llds):
    if isinstance(llds, dict):
        return llds
    keys = list(FrameLLD.__dataclass_fields__)
    return {k: np.array([getattr(f, k) for f in llds]) for k in keys}


_VOICED_ONLY = {lld for lld, _, flag in _LLD_DEFS if flag}


def aggregate_functionals(llds, registry):
    """Summarize one window's frame LLDs into the registry's feature vector.

    Voice-quality descriptors aggregate over voiced frames only; an
    all-unvoiced window yields 0 for those features.
    """
    d = _lld_dict(llds)
    voiced = np.asarray(d["voiced"], dtype=bool)
    out = np.zeros(len(registry))
    for i, entry in enumerate(registry.entries):
        if entry.lld == "voiced_fraction":
            out[i] = voiced.mean()
            continue
        vals = np.asarray(d[entry.lld], dtype=float)
        if entry.lld in _VOICED_ONLY:
            vals = vals[voiced]
            if vals.size == 0:
                continue
        if entry.functional == "mean":
            out[i] = vals.mean()
        elif entry.functional == "cv":
            out[i] = vals.std() / (abs(vals.mean()) + _EPS)
        elif entry.functional == "p20":
            out[i] = np.percentile(vals, 20)
        elif entry.functional == "p50":
            out[i] = np.percentile(vals, 50)
        elif entry.functional == "p80":
            out[i] = np.percentile(vals, 80)
        elif entry.functional == "range":
            out[i] = np.percentile(vals, 80) - np.percentile(vals, 20)
        else:
            raise ValueError(f"unknown functional {entry.functional!r}")
    return out


def extract_sequence(buf, registry, speaker_id="", split=None):
    """Windowed feature matrix (T x d) for canonical audio."""
    if buf.sample_rate != CANONICAL_RATE:
        raise DataError(
            f"expected canonical rate {CANONICAL_RATE}, got {buf.sample_rate}"
        )
    n_win = window_count(buf.duration_s)
    win = int(round(WINDOW_S * CANONICAL_RATE))
    hop = int(round(HOP_S * CANONICAL_RATE))
    need = (n_win - 1) * hop + win
    x = buf.samples
    if len(x) < need:
        x = np.pad(x, (0, need - len(x)))
    rows = np.empty((n_win, len(registry)))
    for t in range(n_win):
        d = _window_llds(x[t * hop : t * hop + win])
        rows[t] = aggregate_functionals(d, registry)
    return FeatureSequence(data=rows, valid_len=n_win,
                           speaker_id=speaker_id, split=split)


# --- feature cache file format ------------------------------------------
# magic "FTRS", version u16, T u32, d u32, then T*d little-endian float32
# row-major; sidecar <path>.json records registry version and speaker id.

_MAGIC = b"FTRS"
_CACHE_VERSION = 1


def save_features(seq, path, registry):
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HII", _CACHE_VERSION, seq.data.shape[0],
                            seq.data.shape[1]))
        f.write(seq.data.astype("<f4").tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(
            {
                "registry_version": registry.version,
                "speaker_id": seq.speaker_id,
                "split": seq.split,
                "valid_len": seq.valid_len,
            },
            f,
        )


def load_features(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise DataError(f"{path}: bad feature-cache magic {magic!r}")
        version, t, d = struct.unpack("<HII", f.read(10))
        if version != _CACHE_VERSION:
            raise DataError(f"{path}: unsupported cache version {version}")
        raw = f.read(t * d * 4)
        if len(raw) != t * d * 4:
            raise DataError(f"{path}: truncated feature cache")
        data = np.frombuffer(raw, dtype="<f4").reshape(t, d).astype(np.float64)
    meta = {"speaker_id": "", "split": None, "valid_len": t}
    try:
        with open(str(path) + ".json", encoding="utf-8") as f:
            meta.update(json.load(f))
    except FileNotFoundError:
        pass
    return FeatureSequence(data=data, valid_len=int(meta["valid_len"]),
                           speaker_id=meta["speaker_id"], split=meta["split"])
