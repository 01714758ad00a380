import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from co3.inference import (LpmlReport, ari, bari, estimate_coclustering, expected_vi_bound,
                           log_cpo, lpml, posterior_similarity, select_d, vi_point_estimate)
from co3.model import ModelConfig, OrdinalDataset, Partition, make_default_cutoffs
from co3.sampler import GibbsControls, run_chain

from oracles import (ari_by_pair_counting, exhaustive_vi_minimum, materialize_cells,
                     random_similarity)

labelings = st.lists(st.integers(0, 4), min_size=2, max_size=12)


class TestSimilarity:
    def test_identical_draws(self):
        s = posterior_similarity([[0, 0, 1, 2]] * 5)
        expected = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
        np.testing.assert_array_equal(s, expected)

    def test_half(self):
        s = posterior_similarity([[0, 0, 1], [0, 1, 1]])
        assert s[0, 1] == 0.5 and s[1, 2] == 0.5 and s[0, 2] == 0.0

    def test_structure(self):
        rng = np.random.default_rng(0)
        s = posterior_similarity(rng.integers(0, 4, (100, 9)))
        np.testing.assert_array_equal(s, s.T)
        np.testing.assert_array_equal(np.diag(s), 1.0)
        assert s.min() >= 0 and s.max() <= 1

    def test_duplicate_draw_moves_toward_it(self):
        rng = np.random.default_rng(1)
        draws = list(rng.integers(0, 3, (10, 6)))
        s = posterior_similarity(draws)
        extra = draws[0]
        target = (extra[:, None] == extra[None, :]).astype(float)
        s2 = posterior_similarity(draws + [extra])
        assert np.all(np.abs(s2 - target) <= np.abs(s - target) + 1e-15)

    @pytest.mark.parametrize("draws", [[], [[0, 1], [0, 1, 2]]])
    def test_invalid(self, draws):
        with pytest.raises(ValueError):
            posterior_similarity(draws)


class TestViEstimate:
    def test_recovers_identical_draws(self):
        truth = [0, 1, 1, 2, 0, 2, 2]
        est = vi_point_estimate(posterior_similarity([truth] * 3))
        assert est == Partition(truth)

    def test_two_perfect_blocks(self):
        s = np.zeros((6, 6))
        s[:3, :3] = 1
        s[3:, 3:] = 1
        assert vi_point_estimate(s) == Partition([0, 0, 0, 1, 1, 1])

    def test_single_item(self):
        assert vi_point_estimate(np.ones((1, 1))).n_clusters == 1

    def test_noisy_three_blocks_n6(self):
        rng = np.random.default_rng(4)
        truth = np.array([0, 0, 1, 1, 2, 2])
        draws = [np.where(rng.random(6) < 0.2, rng.integers(0, 3, 6), truth) for _ in range(30)]
        s = posterior_similarity(draws)
        est = vi_point_estimate(s)
        assert expected_vi_bound(est.labels, s) == pytest.approx(exhaustive_vi_minimum(s), abs=1e-12)

    @pytest.mark.parametrize("kind", ["uniform", "blocks"])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_exhaustive(self, kind, seed):
        rng = np.random.default_rng(seed)
        s = random_similarity(int(rng.integers(2, 9)), rng, kind)
        est = vi_point_estimate(s)
        assert expected_vi_bound(est.labels, s) <= exhaustive_vi_minimum(s) + 1e-12

    def test_bound_is_zero_for_certain_partition(self):
        truth = np.array([0, 0, 1])
        s = posterior_similarity([truth])
        assert expected_vi_bound(truth, s) == pytest.approx(0.0, abs=1e-12)


class TestAri:
    def test_identical(self):
        assert ari([0, 0, 1, 2], [5, 5, 3, 1]) == 1.0

    def test_singletons_vs_one_cluster(self):
        assert ari([0, 1, 2, 3], [0, 0, 0, 0]) == 0.0

    def test_crossed(self):
        a, b = [1, 1, 2, 2], [1, 2, 1, 2]
        assert ari(a, b) == pytest.approx(ari_by_pair_counting(a, b), abs=1e-12)
        assert ari(a, b) == pytest.approx(-0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ari([0, 1], [0, 1, 2])

    @settings(max_examples=200)
    @given(labelings, st.data())
    def test_against_references(self, a, data):
        b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
        value = ari(a, b)
        assert value == pytest.approx(ari_by_pair_counting(a, b), abs=1e-12)
        assert value == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
        assert value == pytest.approx(ari(b, a), abs=1e-15)

    @settings(max_examples=100)
    @given(labelings, st.permutations(range(5)))
    def test_relabel_invariant(self, a, perm):
        b = np.array(perm)[np.array(a)]
        assert ari(a, b) == 1.0


class TestBari:
    def test_identical(self):
        assert bari([0, 1, 1], [0, 0, 1], [0, 1, 1], [0, 0, 1]) == 1.0

    def test_small_materialized_case(self):
        rows_a, cols_a = [1, 1, 2], [1, 2, 2]
        rows_b = [0, 1, 2]
        expected = ari_by_pair_counting(materialize_cells(rows_a, cols_a),
                                        materialize_cells(rows_b, cols_a))
        assert bari(rows_a, cols_a, rows_b, cols_a) == pytest.approx(expected, abs=1e-12)

    def test_random_cases_match_materialization(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n, p = rng.integers(1, 7, 2)
            parts = [rng.integers(0, rng.integers(1, 5), size) for size in (n, p, n, p)]
            expected = adjusted_rand_score(materialize_cells(parts[0], parts[1]),
                                           materialize_cells(parts[2], parts[3]))
            assert abs(bari(*parts) - expected) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bari([0, 1], [0], [0, 1, 1], [0])


class TestLpml:
    def test_single_draw(self):
        L = np.array([[[0.2, 0.5], [0.9, 0.1]]])
        assert lpml(L) == pytest.approx(np.log(L).sum())

    def test_identical_draws(self):
        L = np.array([[0.2, 0.5, 0.7]] * 4)
        assert lpml(L) == pytest.approx(np.log(L[0]).sum())

    def test_harmonic_mean(self):
        L = np.array([0.3, 0.8, 0.05])
        value = lpml(np.stack([L, L / 2]))
        assert value == pytest.approx(np.sum(np.log(2 * L / 3)), rel=1e-12)

    def test_log_scale_equivalent(self):
        rng = np.random.default_rng(0)
        L = rng.random((7, 3, 4)) + 0.01
        assert lpml(np.log(L), log_scale=True) == pytest.approx(lpml(L), rel=1e-12)

    def test_order_invariant(self):
        rng = np.random.default_rng(1)
        L = rng.random((9, 5)) + 0.01
        assert lpml(L[::-1]) == pytest.approx(lpml(L), rel=1e-13)

    def test_tiny_values_stay_finite(self):
        assert np.isfinite(log_cpo(np.full((3, 2), -800.0))).all()

    @pytest.mark.parametrize("bad", [[[0.5, 0.0]], [[0.5, -0.1]]])
    def test_rejects_nonpositive(self, bad):
        with pytest.raises(ValueError):
            lpml(bad)


class TestSelectD:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.data = OrdinalDataset(rng.integers(1, 3, (5, 4)), np.ones((5, 4)), 2)
        self.cut = make_default_cutoffs(2)
        self.ctl = GibbsControls(iterations=20, burn_in=10, seed=1)

    def test_single_d(self):
        report = select_d(self.data, self.cut, ModelConfig(), [2], self.ctl)
        assert list(report.per_d) == [2] and report.best_d == 2

    def test_grid_keys_and_argmax(self):
        report = select_d(self.data, self.cut, ModelConfig(), [1, 2, 3], self.ctl, workers=2)
        assert sorted(report.per_d) == [1, 2, 3] and not report.failed
        assert report.per_d[report.best_d] == max(report.per_d.values())

    def test_worker_count_does_not_change_values(self):
        a = select_d(self.data, self.cut, ModelConfig(), [1, 2], self.ctl, workers=1)
        b = select_d(self.data, self.cut, ModelConfig(), [1, 2], self.ctl, workers=2)
        assert a.per_d == b.per_d

    def test_failed_d_is_omitted(self, monkeypatch):
        import co3.inference as inf_mod

        real = ModelConfig.with_d

        def broken(self, d):
            cfg = real(self, d)
            if d == 2:
                cfg.V1 = -np.eye(d)
            return cfg

        monkeypatch.setattr(ModelConfig, "with_d", broken)
        report = inf_mod.select_d(self.data, self.cut, ModelConfig(), [1, 2], self.ctl)
        assert list(report.per_d) == [1] and 2 in report.failed

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            select_d(self.data, self.cut, ModelConfig(), [], self.ctl)

    def test_report_without_values(self):
        assert LpmlReport({}).best_d is None


def test_estimate_coclustering_shapes():
    rng = np.random.default_rng(0)
    data = OrdinalDataset(rng.integers(1, 4, (6, 5)), np.ones((6, 5)), 3)
    chain = run_chain(data, make_default_cutoffs(3), ModelConfig(d=1),
                      GibbsControls(iterations=30, burn_in=10, seed=0))
    est = estimate_coclustering(chain)
    assert est.rows.labels.size == 6 and est.cols.labels.size == 5
    assert est.row_similarity.shape == (6, 6)
