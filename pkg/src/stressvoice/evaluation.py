"""Experiment grid, MAE reporting, and attention analyses.

The grid covers {vanilla, attention} x {single-task, multi-task} x
{standard, speaker} normalization: 8 configurations.  Every configuration
is scored on the dev split; only the per-target dev-best configuration is
evaluated on test, and the selection function never sees test data (the
dataset wrapper counts split accesses so this is checkable).
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import DataError
from .model import forward
from .normalization import fit_transform
from .sessions import TARGET_NAMES
from .training import TrainConfig, train, pad_batch

MODEL_ROWS = (("gru", "stl"), ("gru", "mtl"), ("agru", "stl"), ("agru", "mtl"))
NORM_MODES = ("standard", "speaker")
SMOOTHING_WINDOW_DEFAULT = 25

RESULTS_COLUMNS = ("model", "normalization",
                   "dev_cortisol", "dev_appraisal", "dev_affect",
                   "test_cortisol", "test_appraisal", "test_affect")


def _pooling_of(model):
    return "attention" if model == "agru" else "mean"


def cell_seed(base_seed, model, task, norm, target=""):
    """Independent, reproducible seed per grid cell."""
    text = f"{base_seed}:{model}:{task}:{norm}:{target}"
    return int(hashlib.sha256(text.encode()).hexdigest()[:16], 16)


class SplitDataset:
    """Split-keyed access to (sequence, target) pairs with access counters.

    The counters make the no-test-leakage protocol testable: the test
    counter must be zero until after dev-based selection.
    """

    def __init__(self, sequences, targets_by_speaker):
        self._by_split = {"train": [], "dev": [], "test": []}
        for seq in sequences:
            if seq.split not in self._by_split:
                raise DataError(f"sequence with unknown split {seq.split!r}")
            self._by_split[seq.split].append(
                (seq, np.asarray(targets_by_speaker[seq.speaker_id]))
            )
        self.access_counts = {"train": 0, "dev": 0, "test": 0}

    def get(self, split):
        self.access_counts[split] += 1
        return list(self._by_split[split])


def mae(preds, targets):
    """Per-column mean absolute error over subjects."""
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if preds.shape != targets.shape:
        raise DataError(f"shape mismatch {preds.shape} vs {targets.shape}")
    if preds.shape[0] == 0:
        raise DataError("empty prediction list")
    return np.mean(np.abs(preds - targets), axis=0)


def _eval_split(result, pairs, max_seq_len):
    """Per-target MAE of a trained model on one split (nan where untrained)."""
    x, lengths = pad_batch([s.data[: s.valid_len] for s, _ in pairs],
                           max_seq_len)
    pred = forward(x, lengths, result.params, result.pooling).pred
    y = np.vstack([t for _, t in pairs])
    out = np.full(3, np.nan)
    if result.task == "mtl":
        out[:] = mae(pred, y)
    else:
        i = TARGET_NAMES.index(result.target)
        out[i] = mae(pred[:, [0]], y[:, [i]])[0]
    return out


def _train_cell(args):
    """Train one grid row (1 MTL model or 3 STL models); picklable for --jobs."""
    model, task, norm, train_pairs, dev_pairs, config, base_seed = args
    pooling = _pooling_of(model)
    results = {}
    dev = np.full(3, np.nan)
    if task == "mtl":
        cfg = TrainConfig(**{**config.__dict__,
                             "seed": cell_seed(base_seed, model, task, norm)})
        res = train(train_pairs, dev_pairs, pooling, task, cfg)
        dev = _eval_split(res, dev_pairs, cfg.max_seq_len)
        results["mtl"] = res
    else:
        for target in TARGET_NAMES:
            cfg = TrainConfig(**{**config.__dict__,
                                 "seed": cell_seed(base_seed, model, task,
                                                   norm, target)})
            res = train(train_pairs, dev_pairs, pooling, task, cfg,
                        target_name=target)
            dev[TARGET_NAMES.index(target)] = _eval_split(
                res, dev_pairs, cfg.max_seq_len
            )[TARGET_NAMES.index(target)]
            results[target] = res
    return (model, task, norm), dev, results


@dataclass
class GridRow:
    model: str
    task: str
    normalization: str
    dev_mae: np.ndarray  # per target
    test_mae: list       # per target, None unless dev-best
    results: dict = field(repr=False, default_factory=dict)

    @property
    def label(self):
        return f"{self.model.upper()}-{self.task.upper()}"


@dataclass
class ResultsTable:
    rows: list
    best: dict  # target -> row index
    datasets: dict = field(default_factory=dict, repr=False)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(RESULTS_COLUMNS)
            for r in self.rows:
                w.writerow(
                    [r.label, r.normalization]
                    + [f"{v:.6f}" for v in r.dev_mae]
                    + ["" if v is None else f"{v:.6f}" for v in r.test_mae]
                )


def select_best(dev_table):
    """Per-target argmin over the dev MAE matrix.

    Receives only dev columns by construction; test data cannot leak into
    selection through this interface.
    """
    dev_table = np.asarray(dev_table)
    return {t: int(np.argmin(dev_table[:, i]))
            for i, t in enumerate(TARGET_NAMES)}


def train_grid(sequences, targets_by_speaker, config: TrainConfig, base_seed,
               jobs=1):
    """Train all 8 grid configurations on the train/dev splits only.

    Features are normalized per mode inside the grid (standard statistics
    from train only; speaker statistics per speaker).  Returns (rows,
    datasets); no test row has been touched at this point, which the
    dataset access counters can attest.
    """
    datasets = {}
    for norm in NORM_MODES:
        normed, _ = fit_transform(sequences, norm)
        datasets[norm] = SplitDataset(normed, targets_by_speaker)

    jobs_args = []
    for model, task in MODEL_ROWS:
        for norm in NORM_MODES:
            ds = datasets[norm]
            jobs_args.append((model, task, norm, ds.get("train"),
                              ds.get("dev"), config, base_seed))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_train_cell, jobs_args))
    else:
        outcomes = [_train_cell(a) for a in jobs_args]

    rows = []
    for (model, task, norm), dev, results in outcomes:
        rows.append(GridRow(model=model, task=task, normalization=norm,
                            dev_mae=dev, test_mae=[None, None, None],
                            results=results))
    return rows, datasets


def apply_selection(rows, datasets, config: TrainConfig):
    """Select per-target dev-best rows and evaluate only those on test."""
    best = select_best([r.dev_mae for r in rows])
    for target, idx in best.items():
        row = rows[idx]
        res = row.results["mtl" if row.task == "mtl" else target]
        test_pairs = datasets[row.normalization].get("test")
        ti = TARGET_NAMES.index(target)
        row.test_mae[ti] = float(
            _eval_split(res, test_pairs, config.max_seq_len)[ti]
        )
    return ResultsTable(rows=rows, best=best)


def run_grid(sequences, targets_by_speaker, config: TrainConfig, base_seed,
             jobs=1):
    """Full grid protocol: train every cell, select on dev, report test
    MAE only for the per-target dev-best configuration."""
    rows, datasets = train_grid(sequences, targets_by_speaker, config,
                                base_seed, jobs=jobs)
    table = apply_selection(rows, datasets, config)
    table.datasets = datasets
    return table


def mean_baseline_mae(train_targets, eval_targets):
    """Per-target MAE of always predicting the train-split mean."""
    train_targets = np.atleast_2d(train_targets)
    eval_targets = np.atleast_2d(eval_targets)
    center = train_targets.mean(axis=0)
    return np.mean(np.abs(eval_targets - center), axis=0)


def moving_average(values, window):
    """Centered moving average with truncated edges."""
    values = np.asarray(values, dtype=float)
    half = window // 2
    out = np.empty_like(values)
    for i in range(len(values)):
        lo = max(0, i - half)
        hi = min(len(values), i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


@dataclass
class AttentionReport:
    alphas: list          # one 1-D weight array per test subject
    speaker_ids: list
    mean_curve: np.ndarray  # smoothed pointwise mean over subjects
    std_curve: np.ndarray
    smoothing_window: int


def attention_report(params, test_sequences, smoothing_window=None,
                     max_seq_len=1200):
    """Attention-weight analysis over the test subjects.

    Curves are aligned from t=0; at timesteps beyond a subject's length the
    aggregate averages over the subjects still present.  Both curves are
    smoothed with a centered moving average.
    """
    if params.attn_w is None:
        raise DataError("attention report requires an attention-pooling model")
    if smoothing_window is None:
        smoothing_window = SMOOTHING_WINDOW_DEFAULT
    alphas, sids = [], []
    for seq in test_sequences:
        x, lengths = pad_batch([seq.data[: seq.valid_len]], max_seq_len)
        trace = forward(x, lengths, params, "attention")
        alphas.append(trace.alpha[0, : lengths[0]].copy())
        sids.append(seq.speaker_id)
    tmax = max(len(a) for a in alphas)
    mean_curve = np.empty(tmax)
    std_curve = np.empty(tmax)
    for t in range(tmax):
        vals = np.array([a[t] for a in alphas if len(a) > t])
        mean_curve[t] = vals.mean()
        std_curve[t] = vals.std()
    return AttentionReport(
        alphas=alphas, speaker_ids=sids,
        mean_curve=moving_average(mean_curve, smoothing_window),
        std_curve=moving_average(std_curve, smoothing_window),
        smoothing_window=smoothing_window,
    )


def write_attention_csvs(report, weights_path, curves_path):
    with open(weights_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["subject", "t", "alpha"])
        for sid, alpha in zip(report.speaker_ids, report.alphas):
            for t, a in enumerate(alpha):
                w.writerow([sid, t, f"{a:.8g}"])
    with open(curves_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "mean", "std"])
        for t, (m, s) in enumerate(zip(report.mean_curve, report.std_curve)):
            w.writerow([t, f"{m:.8g}", f"{s:.8g}"])


def plot_attention_svg(report, path):
    """Optional SVG line plot of the smoothed mean/std curves."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.arange(len(report.mean_curve))
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, report.mean_curve, label="mean")
    ax.fill_between(t, report.mean_curve - report.std_curve,
                    report.mean_curve + report.std_curve, alpha=0.3,
                    label="std")
    ax.set_xlabel("window index")
    ax.set_ylabel("attention weight")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def target_histograms(records, bins=10):
    """Raw-delta histogram data with min/max/median per target."""
    from .sessions import target_deltas

    deltas = np.array([target_deltas(r) for r in records])
    out = {}
    for i, t in enumerate(TARGET_NAMES):
        col = deltas[:, i]
        counts, edges = np.histogram(col, bins=bins)
        out[t] = {
            "edges": edges.tolist(),
            "counts": counts.tolist(),
            "min": float(col.min()),
            "max": float(col.max()),
            "median": float(np.median(col)),
        }
    return out


def write_histograms_csv(hists, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["target", "bin_lo", "bin_hi", "count",
                    "min", "max", "median"])
        for tname, h in hists.items():
            for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                w.writerow([tname, lo, hi, c, h["min"], h["max"], h["median"]])
