"""Show attention pooling finding a planted temporal signal.

Builds a feature-level corpus whose target information lives only in the
first half of every sequence, trains an attention-pooled multi-task model,
and prints how much attention mass lands on the signal half of the test
sequences. Mean pooling cannot express this preference; the attention
weights can, and after training they should.
"""

import numpy as np

from stressvoice.evaluation import attention_report, mean_baseline_mae
from stressvoice.synthcorpus import synth_feature_corpus
from stressvoice.training import TrainConfig, train


def main():
    seqs, targets = synth_feature_corpus(
        120, 30, 30, t_len=80, d=12, noise_std=0.02, seed=3,
        signal_region="first_half")
    pairs = {sp: [(s, y) for s, y in zip(seqs, targets) if s.split == sp]
             for sp in ("train", "dev", "test")}
    base = mean_baseline_mae(
        np.vstack([y for _, y in pairs["train"]]),
        np.vstack([y for _, y in pairs["dev"]])).mean()
    print(f"baseline dev MAE {base:.3f}; training attention model...")

    cfg = TrainConfig(seed=11, learning_rate=0.003, max_epochs=120,
                      patience=120, hidden=32)
    res = train(pairs["train"], pairs["dev"], "attention", "mtl", cfg)
    print(f"best dev MAE {res.best_dev_mae:.3f} at epoch {res.best_epoch}")

    report = attention_report(res.params,
                              [s for s in seqs if s.split == "test"],
                              smoothing_window=1)
    mass = np.mean([a[: len(a) // 2].sum() for a in report.alphas])
    print(f"attention mass on the signal half: {mass:.3f} "
          f"(0.5 would be uniform)")

    curve = np.mean([a for a in report.alphas], axis=0)
    bars = (curve / curve.max() * 8).astype(int)
    print("mean attention over time:")
    print("".join(" .:-=+*#%@"[b] for b in bars))


if __name__ == "__main__":
    main()
