import numpy as np
import pytest

from stressvoice import DataError
from stressvoice.evaluation import (
    SplitDataset, mae, cell_seed, select_best, train_grid, apply_selection,
    run_grid, mean_baseline_mae, moving_average, attention_report,
    write_attention_csvs, target_histograms, MODEL_ROWS, NORM_MODES,
    RESULTS_COLUMNS,
)
from stressvoice.features import FeatureSequence
from stressvoice.model import init_params
from stressvoice.synthcorpus import synth_feature_corpus
from stressvoice.training import TrainConfig


def tiny_corpus(seed=0):
    seqs, targets = synth_feature_corpus(12, 4, 4, t_len=8, d=5,
                                         noise_std=0.05, seed=seed)
    return seqs, {s.speaker_id: y for s, y in zip(seqs, targets)}


class TestMae:
    def test_exact(self):
        out = mae([[0.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [0.0, 1.0]])
        assert out == pytest.approx([1.0, 0.0])

    def test_single_row(self):
        assert mae([[0.25]], [[0.75]]) == pytest.approx([0.5])

    def test_empty(self):
        with pytest.raises(DataError):
            mae(np.empty((0, 3)), np.empty((0, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            mae(np.zeros((2, 3)), np.zeros((2, 2)))


class TestCellSeed:
    def test_deterministic(self):
        assert cell_seed(7, "agru", "mtl", "standard") == cell_seed(
            7, "agru", "mtl", "standard")

    def test_distinct_cells(self):
        seeds = {cell_seed(0, m, t, n, tg)
                 for m, t in MODEL_ROWS for n in NORM_MODES
                 for tg in ("", "cortisol")}
        assert len(seeds) == 16


class TestSelectBest:
    def test_argmin_per_column(self):
        table = [[0.5, 0.1, 0.3],
                 [0.2, 0.4, 0.2],
                 [0.3, 0.3, 0.1]]
        best = select_best(table)
        assert best == {"cortisol": 1, "appraisal": 0, "affect": 2}


class TestSplitDataset:
    def test_counters(self):
        seqs, targets = tiny_corpus()
        ds = SplitDataset(seqs, targets)
        assert ds.access_counts == {"train": 0, "dev": 0, "test": 0}
        ds.get("train")
        ds.get("train")
        ds.get("dev")
        assert ds.access_counts == {"train": 2, "dev": 1, "test": 0}

    def test_unknown_split(self):
        seq = FeatureSequence(data=np.zeros((2, 3)), valid_len=2,
                              speaker_id="x", split="holdout")
        with pytest.raises(DataError):
            SplitDataset([seq], {"x": np.zeros(3)})


@pytest.fixture(scope="module")
def grid_outcome():
    seqs, targets = tiny_corpus(seed=3)
    cfg = TrainConfig(max_epochs=3, patience=3, hidden=4, batch_size=4, seed=0)
    rows, datasets = train_grid(seqs, targets, cfg, base_seed=1)
    return rows, datasets, cfg


class TestGridProtocol:
    def test_eight_rows(self, grid_outcome):
        rows, _, _ = grid_outcome
        assert len(rows) == 8
        labels = [(r.model, r.task, r.normalization) for r in rows]
        assert len(set(labels)) == 8
        for r in rows:
            assert np.isfinite(r.dev_mae).all()

    def test_no_test_access_before_selection(self, grid_outcome):
        rows, datasets, _ = grid_outcome
        for norm in NORM_MODES:
            assert datasets[norm].access_counts["test"] == 0

    def test_selection_populates_only_best(self, grid_outcome):
        rows, datasets, cfg = grid_outcome
        table = apply_selection(rows, datasets, cfg)
        filled = [(i, j) for i, r in enumerate(table.rows)
                  for j, v in enumerate(r.test_mae) if v is not None]
        assert len(filled) == 3
        for target, idx in table.best.items():
            j = ("cortisol", "appraisal", "affect").index(target)
            assert table.rows[idx].test_mae[j] is not None

    def test_results_csv_shape(self, grid_outcome, tmp_path):
        rows, datasets, cfg = grid_outcome
        table = apply_selection(rows, datasets, cfg)
        path = tmp_path / "results.csv"
        table.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(RESULTS_COLUMNS)
        assert len(lines) == 9
        blanks = sum(line.split(",")[5:].count("") for line in lines[1:])
        assert blanks == 8 * 3 - 3

    def test_run_grid_deterministic(self):
        seqs, targets = tiny_corpus(seed=4)
        cfg = TrainConfig(max_epochs=2, patience=2, hidden=4,
                          batch_size=4, seed=0)
        t1 = run_grid(seqs, targets, cfg, base_seed=9)
        t2 = run_grid(seqs, targets, cfg, base_seed=9)
        for a, b in zip(t1.rows, t2.rows):
            assert np.array_equal(a.dev_mae, b.dev_mae)
            assert a.test_mae == b.test_mae


class TestBaseline:
    def test_center_is_train_mean(self):
        train = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]
        evals = [[0.5, 0.0, 1.0]]
        assert mean_baseline_mae(train, evals) == pytest.approx([0, 0.5, 0.5])


class TestMovingAverage:
    def test_identity_window_one(self):
        v = np.array([1.0, 3.0, 2.0])
        assert np.array_equal(moving_average(v, 1), v)

    def test_truncated_edges(self):
        out = moving_average([0.0, 3.0, 6.0], 3)
        assert out == pytest.approx([1.5, 3.0, 4.5])

    def test_constant_invariant(self):
        out = moving_average(np.full(10, 2.5), 5)
        assert out == pytest.approx(np.full(10, 2.5))


def attn_params(h=4, d=3, seed=0):
    return init_params(d, h, 1, "attention", np.random.default_rng(seed))


class TestAttentionReport:
    def test_requires_attention_model(self):
        p = init_params(3, 4, 1, "mean", np.random.default_rng(0))
        with pytest.raises(DataError):
            attention_report(p, [])

    def test_single_subject_weights_sum_to_one(self):
        p = attn_params()
        seq = FeatureSequence(
            data=np.random.default_rng(1).normal(size=(12, 3)),
            valid_len=12, speaker_id="a", split="test")
        rep = attention_report(p, [seq], smoothing_window=1)
        assert len(rep.alphas) == 1
        assert rep.alphas[0].sum() == pytest.approx(1.0)
        assert np.array_equal(rep.mean_curve, rep.alphas[0])
        assert (rep.std_curve == 0).all()

    def test_two_identical_subjects_zero_std(self):
        p = attn_params(seed=2)
        data = np.random.default_rng(3).normal(size=(10, 3))
        seqs = [FeatureSequence(data=data.copy(), valid_len=10,
                                speaker_id=s, split="test") for s in "ab"]
        rep = attention_report(p, seqs, smoothing_window=3)
        assert (rep.std_curve == pytest.approx(0.0, abs=1e-15))

    def test_ragged_alignment(self):
        p = attn_params(seed=4)
        rng = np.random.default_rng(5)
        seqs = [FeatureSequence(data=rng.normal(size=(t, 3)), valid_len=t,
                                speaker_id=f"s{t}", split="test")
                for t in (6, 10)]
        rep = attention_report(p, seqs, smoothing_window=1)
        assert len(rep.mean_curve) == 10
        # beyond the short subject only the long one contributes
        assert rep.mean_curve[8] == pytest.approx(rep.alphas[1][8])

    def test_csv_output(self, tmp_path):
        p = attn_params(seed=6)
        seq = FeatureSequence(
            data=np.random.default_rng(7).normal(size=(5, 3)),
            valid_len=5, speaker_id="a", split="test")
        rep = attention_report(p, [seq], smoothing_window=1)
        wp, cp = tmp_path / "w.csv", tmp_path / "c.csv"
        write_attention_csvs(rep, wp, cp)
        assert len(wp.read_text().splitlines()) == 6
        assert len(cp.read_text().splitlines()) == 6


class TestTargetHistograms:
    def test_known_medians(self):
        from stressvoice.sessions import SessionRecord

        def rec(sid, delta_c, si_post, na_post):
            t38 = tuple(10.0 + x * delta_c
                        for x in (0.3, 1.0, 0.8, 0.6, 0.4, 0.2))
            return SessionRecord(
                speaker_id=sid, audio_path="x.wav",
                cortisol=(10.0, 10.0) + t38,
                si_pre=2.0, si_post=si_post, na_pre=1.0, na_post=na_post,
                split="train")

        records = [rec("a", 1.0, 2.5, 1.0), rec("b", 3.0, 3.0, 2.0),
                   rec("c", 5.0, 2.0, 1.5)]
        h = target_histograms(records, bins=4)
        assert h["cortisol"]["median"] == pytest.approx(3.0)
        assert h["appraisal"]["median"] == pytest.approx(0.5)
        assert h["affect"]["median"] == pytest.approx(0.5)
        assert sum(h["cortisol"]["counts"]) == 3
