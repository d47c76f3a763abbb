import numpy as np
import pytest

from stressvoice import DataError
from stressvoice.features import FeatureSequence
from stressvoice.normalization import (NormStats, fit, transform,
                                       fit_transform, GLOBAL_KEY)


def seq(data, speaker="a", split="train", valid_len=None):
    data = np.asarray(data, dtype=float)
    return FeatureSequence(data=data,
                           valid_len=valid_len or data.shape[0],
                           speaker_id=speaker, split=split)


class TestFit:
    def test_population_std(self):
        stats = fit([seq([[0.0], [2.0]])], "standard")
        mean, std = stats.stats[GLOBAL_KEY]
        assert mean[0] == 1.0 and std[0] == 1.0

    def test_constant_column_flagged(self):
        stats = fit([seq([[5.0], [5.0], [5.0]])], "standard")
        mean, std = stats.stats[GLOBAL_KEY]
        assert mean[0] == 5.0 and std[0] == 0.0
        assert stats.constant_columns()[0]

    def test_speaker_mode_distinct_entries(self):
        stats = fit([seq([[1.0]] * 3, speaker="a"),
                     seq([[9.0]] * 3, speaker="b", split="test")], "speaker")
        assert set(stats.stats) == {"a", "b"}
        assert stats.stats["a"][0][0] == 1.0
        assert stats.stats["b"][0][0] == 9.0

    def test_standard_uses_train_rows_only(self):
        stats = fit([seq([[0.0], [2.0]], split="train"),
                     seq([[100.0]], split="test", speaker="b")], "standard")
        assert stats.stats[GLOBAL_KEY][0][0] == 1.0

    def test_empty_population_errors(self):
        with pytest.raises(DataError):
            fit([seq([[1.0]], split="dev")], "standard")
        with pytest.raises(DataError):
            fit([], "speaker")

    def test_valid_len_respected(self):
        s = seq([[0.0], [2.0], [999.0]], valid_len=2)
        stats = fit([s], "standard")
        assert stats.stats[GLOBAL_KEY][0][0] == 1.0


class TestTransform:
    def test_zscole_column(self):
        s = seq([[0.0], [2.0]])
        out = transform(s, fit([s], "standard"))
        assert out.data[:, 0].tolist() == [-1.0, 1.0]

    def test_constant_column_zeroed(self):
        s = seq([[5.0], [5.0]])
        out = transform(s, fit([s], "standard"))
        assert (out.data == 0).all()

    def test_unknown_speaker_errors(self):
        s = seq([[1.0]], speaker="a")
        stats = fit([s], "speaker")
        with pytest.raises(DataError):
            transform(seq([[1.0]], speaker="zz"), stats)

    def test_idempotent_after_refit(self):
        rng = np.random.default_rng(0)
        s = seq(rng.normal(3, 2, size=(50, 4)))
        once = transform(s, fit([s], "standard"))
        twice = transform(once, fit([once], "standard"))
        assert np.abs(twice.data - once.data).max() < 1e-9

    def test_affine_equivariance_via_refit(self):
        rng = np.random.default_rng(1)
        s = seq(rng.normal(size=(40, 3)))
        scaled = seq(2.5 * s.data - 7.0)
        a = transform(s, fit([s], "standard"))
        b = transform(scaled, fit([scaled], "standard"))
        assert np.abs(a.data - b.data).max() < 1e-9


class TestSpeakerModeProperty:
    def test_per_speaker_zero_mean_unit_std(self):
        rng = np.random.default_rng(2)
        seqs = [seq(rng.normal(i, i + 1, size=(30, 5)), speaker=f"s{i}",
                    split=sp)
                for i, sp in enumerate(["train", "dev", "test"])]
        normed, _ = fit_transform(seqs, "speaker")
        for s in normed:
            assert np.abs(s.data.mean(axis=0)).max() < 1e-6
            assert np.abs(s.data.std(axis=0) - 1).max() < 1e-4


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    seqs = [seq(rng.normal(size=(10, 4)), speaker="a"),
            seq(rng.normal(size=(10, 4)), speaker="b", split="dev")]
    stats = fit(seqs, "speaker")
    p = tmp_path / "norm.json"
    stats.to_json(p)
    back = NormStats.from_json(p)
    assert back.mode == "speaker"
    for k in stats.stats:
        assert np.allclose(back.stats[k][0], stats.stats[k][0])
        assert np.allclose(back.stats[k][1], stats.stats[k][1])
