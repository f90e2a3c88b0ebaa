import math

import numpy as np
import pytest

from dualpotts.dualgraph import build_partition, completion_plan
from dualpotts.estimators import (
    AnnealSchedule,
    SamplerSpec,
    draw_xA,
    draw_y,
    estimate,
    estimate_annealed,
    estimate_importance,
    estimate_uniform,
    log_Z_qd,
)
from dualpotts.model import build_torus_model
from dualpotts.oracles import brute_force_log_Z, exact_chi_squared


def comb_mixed_model(q=3, j_cotree=0.5, j_tree=2.0, field=None):
    """3x3 model with different constant couplings on the comb tree and co-tree."""
    base = build_torus_model(3, 3, q, 1.0)
    comb = build_partition(base, "comb")
    j = np.full(18, j_cotree)
    j[list(comb.tree_bonds)] = j_tree
    model = build_torus_model(3, 3, q, j, field)
    return model, build_partition(model, list(comb.tree_bonds))


class TestSpecs:
    def test_sampler_spec_validation(self):
        with pytest.raises(ValueError):
            SamplerSpec(method="gibbs", L=10, seed=0)
        with pytest.raises(ValueError):
            SamplerSpec(method="importance", L=0, seed=0)
        with pytest.raises(ValueError):
            SamplerSpec(method="importance", L=10, seed=0, workers=0)
        with pytest.raises(ValueError):
            SamplerSpec(method="annealed", L=10, seed=0)  # schedule missing
        sched = AnnealSchedule(alphas=(1.0, 2.0))
        with pytest.raises(ValueError):
            SamplerSpec(method="importance", L=10, seed=0, schedule=sched)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            AnnealSchedule(alphas=(2.0, 3.0))
        with pytest.raises(ValueError):
            AnnealSchedule(alphas=(1.0, 1.0))
        with pytest.raises(ValueError):
            AnnealSchedule(alphas=(1.0, 2.0), sweeps_per_level=0)

    def test_geometric_schedule(self):
        sched = AnnealSchedule.geometric(8.0, 3)
        assert sched.alphas == pytest.approx((1.0, 2.0, 4.0, 8.0))
        assert sched.levels == 3
        with pytest.raises(ValueError):
            AnnealSchedule.geometric(0.9, 3)

    def test_large_alphabet_rejected(self):
        m = build_torus_model(3, 3, 130, 1.0)
        p = build_partition(m)
        with pytest.raises(ValueError, match="127"):
            estimate_importance(m, p, SamplerSpec(method="importance", L=10, seed=0))


class TestLogZqd:
    def test_constant_coupling(self):
        m = build_torus_model(3, 3, 3, 1.0)
        p = build_partition(m)
        assert log_Z_qd(m, p) == pytest.approx(10 * math.log(3) + 10, rel=1e-12)

    def test_zero_coupling(self):
        m = build_torus_model(3, 3, 3, 0.0)
        p = build_partition(m)
        assert log_Z_qd(m, p) == pytest.approx(10 * math.log(3), rel=1e-12)

    def test_field_normalizer(self):
        # per-site factors sum to e^H over the alphabet, so the field adds
        # only the H-sum over the free sites (no extra powers of q); this is
        # exactly the constant that makes the field estimator unbiased
        m = build_torus_model(3, 3, 3, 1.0, 0.1)
        p = build_partition(m)
        assert log_Z_qd(m, p) == pytest.approx(10 * math.log(3) + 10 + 0.8, rel=1e-12)

    def test_is_true_proposal_normalizer(self):
        # sum the proposal numerator over every free assignment (q=2 keeps
        # the field-case enumeration small) and compare
        from dualpotts.dualgraph import log_edge_factor_tables, log_field_factor_tables
        from dualpotts.oracles import _decode_base_q

        m = build_torus_model(3, 3, 2, {"uniform": [0.3, 1.5], "seed": 2}, 0.4)
        p = build_partition(m)
        plan = completion_plan(m, p)
        lg0, lg1 = log_edge_factor_tables(2, m.couplings)
        l0, l1 = log_field_factor_tables(2, m.fields)
        digits = 10 + 8
        free = _decode_base_q(0, 2**digits, 2, digits)
        bonds = free[:, :10]
        sites = free[:, 10:]
        log_psi = (
            np.where(bonds == 0, lg0[plan.cotree_bonds], lg1[plan.cotree_bonds]).sum(axis=1)
            + np.where(sites == 0, l0[:-1], l1[:-1]).sum(axis=1)
        )
        assert np.logaddexp.reduce(log_psi) == pytest.approx(log_Z_qd(m, p), rel=1e-10)


class TestDraws:
    def test_zero_coupling_always_zero(self):
        m = build_torus_model(3, 3, 3, 0.0)
        p = build_partition(m)
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert np.all(draw_xA(m, p, rng) == 0)

    def test_strong_coupling_near_uniform(self):
        m = build_torus_model(3, 3, 3, 50.0)
        p = build_partition(m)
        rng = np.random.default_rng(1)
        draws = np.array([draw_xA(m, p, rng) for _ in range(10_000)])
        counts = np.bincount(draws.ravel(), minlength=3)
        n = draws.size
        sigma = math.sqrt((1 / 3) * (2 / 3) * n)
        for c in counts:
            assert abs(c - n / 3) < 3 * sigma

    def test_log4_coupling_frequencies(self):
        # zero probability (1 + 2/4)/3 = 1/2; nonzero values split the rest
        m = build_torus_model(3, 3, 3, math.log(4.0))
        p = build_partition(m)
        rng = np.random.default_rng(2)
        draws = np.array([draw_xA(m, p, rng) for _ in range(10_000)])
        n = draws.size
        freq = np.bincount(draws.ravel(), minlength=3) / n
        sigma_half = 3 * math.sqrt(0.25 / n)
        sigma_quarter = 3 * math.sqrt(0.25 * 0.75 / n)
        assert abs(freq[0] - 0.5) < sigma_half
        assert abs(freq[1] - 0.25) < sigma_quarter
        assert abs(freq[2] - 0.25) < sigma_quarter

    def test_draw_y_thresholds(self):
        m = build_torus_model(3, 3, 3, 1.0, math.log(4.0))
        rng = np.random.default_rng(3)
        draws = np.array([draw_y(m, rng) for _ in range(10_000)])
        freq0 = np.mean(draws == 0)
        assert abs(freq0 - 0.5) < 3 * math.sqrt(0.25 / draws.size)

    def test_draw_y_zero_field_sites(self):
        fields = np.zeros(9)
        fields[3] = 0.7  # keeps has_field true while other sites stay at H=0
        m = build_torus_model(3, 3, 3, 1.0, fields)
        rng = np.random.default_rng(4)
        draws = np.array([draw_y(m, rng) for _ in range(200)])
        zero_sites = [s for s in range(8) if fields[s] == 0.0]
        assert np.all(draws[:, zero_sites] == 0)

    def test_draw_y_strong_field_near_uniform(self):
        m = build_torus_model(3, 3, 3, 1.0, 50.0)
        rng = np.random.default_rng(5)
        draws = np.array([draw_y(m, rng) for _ in range(5_000)])
        counts = np.bincount(draws.ravel(), minlength=3)
        n = draws.size
        sigma = math.sqrt((1 / 3) * (2 / 3) * n)
        for c in counts:
            assert abs(c - n / 3) < 3 * sigma

    def test_draw_y_requires_field(self):
        m = build_torus_model(3, 3, 3, 1.0)
        with pytest.raises(ValueError):
            draw_y(m, np.random.default_rng(0))


class TestImportance:
    def test_zero_coupling_zero_variance(self):
        m = build_torus_model(3, 3, 3, 0.0)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=1000, seed=0))
        assert res.ess == 1000.0
        assert res.chi2_hat == 0.0
        # every sample weight is the tree-bond product q^(N-1); the estimate
        # is exactly q^(2N)
        assert res.log_weight_mean == pytest.approx(8 * math.log(3), rel=1e-13)
        assert res.log_Zd_hat == pytest.approx(18 * math.log(3), rel=1e-13)

    def test_matches_brute_force_small_model(self):
        m = build_torus_model(3, 3, 3, 1.5)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=200_000, seed=5))
        exact = brute_force_log_Z(m)
        assert abs(res.log_Z_hat - exact) / exact < 2e-3

    def test_field_matches_brute_force(self):
        m = build_torus_model(3, 3, 3, 2.0, 0.1)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=200_000, seed=6))
        exact = brute_force_log_Z(m)
        assert abs(res.log_Z_hat - exact) / exact < 5e-3

    def test_field_matches_brute_force_ising(self):
        # q=2 exercises the field path where the dependent site value's sign
        # flip is invisible (-x = x mod 2) but the weights still must match
        m = build_torus_model(3, 3, 2, {"uniform": [0.8, 2.0], "seed": 21}, 0.5)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=200_000, seed=22))
        exact = brute_force_log_Z(m)
        assert abs(res.log_Z_hat - exact) / exact < 5e-3

    def test_field_strength_varies_by_site(self):
        fields = np.linspace(0.0, 0.5, 9)
        m = build_torus_model(3, 3, 3, 2.0, fields)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=200_000, seed=23))
        exact = brute_force_log_Z(m)
        assert abs(res.log_Z_hat - exact) / exact < 5e-3

    def test_extreme_couplings_stay_finite(self):
        # J = 300 keeps every quantity hundreds of orders of magnitude above
        # float range in the linear domain; the log-domain pipeline must not
        # overflow, and the weight variance collapses at such couplings
        m = build_torus_model(3, 3, 3, 300.0)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=2000, seed=9))
        exact = brute_force_log_Z(m)
        assert math.isfinite(res.log_Z_hat)
        assert abs(res.log_Z_hat - exact) / exact < 1e-6
        assert res.ess > 1999.0

    def test_result_shape(self):
        m = build_torus_model(3, 3, 3, 1.0)
        p = build_partition(m)
        res = estimate_importance(
            m, p, SamplerSpec(method="importance", L=5000, seed=1, trace_stride=500)
        )
        assert res.method == "importance"
        assert res.L == 5000
        assert 1.0 <= res.ess <= 5000.0
        assert res.chi2_hat >= 0.0
        assert res.log_Z_per_site == pytest.approx(res.log_Z_hat / 9)
        assert len(res.trace) == 10
        assert [t.index for t in res.trace] == list(range(500, 5001, 500))
        # running estimate at the last trace point agrees with the final one
        assert res.trace[-1].log_z_per_site == pytest.approx(res.log_Z_per_site, rel=1e-9)
        assert res.trace[-1].ess == pytest.approx(res.ess, rel=1e-9)

    def test_wrong_method_rejected(self):
        m = build_torus_model(3, 3, 3, 1.0)
        p = build_partition(m)
        with pytest.raises(ValueError):
            estimate_importance(m, p, SamplerSpec(method="uniform", L=10, seed=0))

    def test_mismatched_partition_rejected(self):
        m = build_torus_model(3, 3, 3, 1.0)
        other = build_torus_model(4, 4, 3, 1.0)
        p_other = build_partition(other)
        with pytest.raises(ValueError, match="partition does not match"):
            estimate_importance(m, p_other, SamplerSpec(method="importance", L=10, seed=0))


class TestUniform:
    def test_matches_brute_force_strong_coupling(self):
        m = build_torus_model(3, 3, 3, 3.0)
        p = build_partition(m)
        res = estimate_uniform(m, p, SamplerSpec(method="uniform", L=10**6, seed=7))
        exact = brute_force_log_Z(m)
        assert abs(res.log_Z_hat - exact) / exact < 1e-3

    def test_zero_coupling_weights_mostly_zero(self):
        m = build_torus_model(3, 3, 3, 0.0)
        p = build_partition(m)
        res = estimate_uniform(m, p, SamplerSpec(method="uniform", L=2000, seed=8))
        # only the all-zero draw has nonzero weight (value q^18, hit
        # probability q^-10, so the estimator stays unbiased for q^18 even
        # though most draws contribute nothing); with k hits the estimate is
        # q^28 * k / L exactly
        if res.ess == 0.0:
            assert res.log_Zd_hat == -math.inf
        else:
            k = round(res.ess)
            expected = 28 * math.log(3) + math.log(k) - math.log(2000)
            assert res.log_Zd_hat == pytest.approx(expected, rel=1e-12)

    def test_field_rejected(self):
        m = build_torus_model(3, 3, 3, 1.0, 0.1)
        p = build_partition(m)
        with pytest.raises(ValueError):
            estimate_uniform(m, p, SamplerSpec(method="uniform", L=10, seed=0))

    def test_higher_variance_than_importance_on_mixed_couplings(self):
        model, partition = comb_mixed_model(j_cotree=0.5, j_tree=2.0)
        spec_u = SamplerSpec(method="uniform", L=100_000, seed=9)
        spec_i = SamplerSpec(method="importance", L=100_000, seed=9)
        chi_u = estimate_uniform(model, partition, spec_u).chi2_hat
        chi_i = estimate_importance(model, partition, spec_i).chi2_hat
        assert chi_u > chi_i


class TestAnnealed:
    def test_matches_brute_force(self):
        model, partition = comb_mixed_model(j_cotree=0.5, j_tree=1.3)
        alpha_max = math.log(4.0) / math.log(1.3)
        sched = AnnealSchedule.geometric(alpha_max, 8, sweeps_per_level=5)
        res = estimate_annealed(
            model, partition, SamplerSpec(method="annealed", L=10_000, seed=10, schedule=sched)
        )
        exact = brute_force_log_Z(model)
        assert abs(res.log_Z_hat - exact) / exact < 0.01

    def test_weights_finite_for_positive_couplings(self):
        model, partition = comb_mixed_model(j_cotree=0.4, j_tree=1.2)
        sched = AnnealSchedule.geometric(3.0, 4, sweeps_per_level=2)
        res = estimate_annealed(
            model, partition, SamplerSpec(method="annealed", L=2000, seed=11, schedule=sched)
        )
        assert math.isfinite(res.log_Zd_hat)
        assert res.ess > 1.0

    def test_level_zero_schedule_equals_importance(self):
        model, partition = comb_mixed_model(j_cotree=0.5, j_tree=1.3)
        sched = AnnealSchedule(alphas=(1.0,))
        spec_a = SamplerSpec(method="annealed", L=20_000, seed=12, schedule=sched)
        spec_i = SamplerSpec(method="importance", L=20_000, seed=12)
        res_a = estimate_annealed(model, partition, spec_a)
        res_i = estimate_importance(model, partition, spec_i)
        assert res_a.log_Zd_hat == pytest.approx(res_i.log_Zd_hat, rel=1e-12)
        assert res_a.ess == pytest.approx(res_i.ess, rel=1e-12)

    def test_weak_tree_bond_rejected_with_bond_id(self):
        model, partition = comb_mixed_model(j_cotree=0.5, j_tree=0.9)
        sched = AnnealSchedule.geometric(4.0, 3)
        weakest = min(partition.tree_bonds)
        with pytest.raises(ValueError, match=f"bond {weakest}"):
            estimate_annealed(
                model, partition, SamplerSpec(method="annealed", L=10, seed=0, schedule=sched)
            )

    def test_level_zero_schedule_allows_weak_tree(self):
        model, partition = comb_mixed_model(j_cotree=0.5, j_tree=0.9)
        sched = AnnealSchedule(alphas=(1.0,))
        res = estimate_annealed(
            model, partition, SamplerSpec(method="annealed", L=100, seed=0, schedule=sched)
        )
        assert math.isfinite(res.log_Zd_hat)

    def test_unbiased_over_repetitions(self):
        # the annealed weights must average to Z_d across independent runs,
        # which exercises the level ratios and the Metropolis bridging
        from dualpotts.oracles import brute_force_log_Zd

        model, partition = comb_mixed_model(j_cotree=0.6, j_tree=1.4)
        log_zd = brute_force_log_Zd(model, partition)
        sched = AnnealSchedule.geometric(4.0, 4, sweeps_per_level=2)
        reps = 100
        ratios = np.empty(reps)
        for r in range(reps):
            res = estimate_annealed(
                model, partition,
                SamplerSpec(method="annealed", L=2000, seed=3000 + r, schedule=sched),
            )
            ratios[r] = math.exp(res.log_Zd_hat - log_zd)
        standardized = (ratios.mean() - 1.0) / (ratios.std(ddof=1) / math.sqrt(reps))
        assert abs(standardized) < 4.0

    def test_incremental_updates_match_full_recompletion(self):
        # force-accept sweeps, then re-complete the final co-tree state from
        # scratch: the incrementally maintained tree values must agree
        from dualpotts import _kernels
        from dualpotts.dualgraph import log_edge_factor_tables

        model, partition = comb_mixed_model(j_cotree=0.8, j_tree=1.5)
        plan = completion_plan(model, partition)
        rng = np.random.default_rng(13)
        batch = 64
        values = np.zeros((batch, 18), dtype=np.int8)
        values[:, plan.cotree_bonds] = rng.integers(0, 3, size=(batch, 10), dtype=np.int8)
        _kernels.complete_batch(
            values, None, 3,
            plan.step_site, plan.step_bond, plan.step_sign,
            plan.step_other_bonds, plan.step_other_signs,
            plan.root, plan.root_bonds, plan.root_signs,
        )
        lg0, lg1 = log_edge_factor_tables(3, model.couplings)
        proposals = rng.integers(0, 3, size=(batch, 3, 10), dtype=np.int8)
        accept_u = np.zeros((batch, 3, 10))  # accept everything
        _kernels.metropolis_level(
            values, 3, plan.cotree_bonds,
            lg0[plan.cotree_bonds], lg1[plan.cotree_bonds],
            lg0, lg1,
            plan.cycle_offsets, plan.cycle_bonds, plan.cycle_signs,
            proposals, accept_u,
        )
        fresh = np.zeros_like(values)
        fresh[:, plan.cotree_bonds] = values[:, plan.cotree_bonds]
        bad = _kernels.complete_batch(
            fresh, None, 3,
            plan.step_site, plan.step_bond, plan.step_sign,
            plan.step_other_bonds, plan.step_other_signs,
            plan.root, plan.root_bonds, plan.root_signs,
        )
        assert bad == 0
        assert np.array_equal(values, fresh)


class TestDeterminismAndUnbiasedness:
    def test_bit_reproducible(self):
        m = build_torus_model(3, 3, 3, {"uniform": [0.5, 2.5], "seed": 1})
        p = build_partition(m)
        spec = SamplerSpec(method="importance", L=30_000, seed=42, workers=3, trace_stride=1000)
        assert estimate_importance(m, p, spec) == estimate_importance(m, p, spec)

    def test_workers_change_stream(self):
        m = build_torus_model(3, 3, 3, 1.0)
        p = build_partition(m)
        r1 = estimate_importance(m, p, SamplerSpec(method="importance", L=10_000, seed=1, workers=1))
        r2 = estimate_importance(m, p, SamplerSpec(method="importance", L=10_000, seed=1, workers=2))
        assert r1.log_Zd_hat != r2.log_Zd_hat

    def test_chunking_is_contiguous(self):
        # a two-worker run equals gluing the two chunk streams back to back
        m = build_torus_model(3, 3, 3, 1.3)
        p = build_partition(m)
        res = estimate_importance(m, p, SamplerSpec(method="importance", L=8192, seed=3, workers=2))
        halves = [
            estimate_importance(m, p, SamplerSpec(method="importance", L=4096, seed=3, workers=1)),
        ]
        # second chunk draws from spawn_key (1, 1); reproduce via workers=2 on
        # a half-length run with the same seed: chunk 0 of that run matches
        # chunk 0 above, so the difference isolates chunk 1 determinism
        again = estimate_importance(m, p, SamplerSpec(method="importance", L=8192, seed=3, workers=2))
        assert res == again
        assert res.log_Zd_hat != halves[0].log_Zd_hat

    def test_unbiased_mean_over_repetitions(self):
        from dualpotts.oracles import brute_force_log_Zd

        m = build_torus_model(3, 3, 3, 1.5)
        p = build_partition(m)
        log_zd = brute_force_log_Zd(m, p)
        reps = 200
        ratios = np.empty(reps)
        for r in range(reps):
            res = estimate_importance(m, p, SamplerSpec(method="importance", L=10_000, seed=1000 + r))
            ratios[r] = math.exp(res.log_Zd_hat - log_zd)
        standardized = (ratios.mean() - 1.0) / (ratios.std(ddof=1) / math.sqrt(reps))
        assert abs(standardized) < 4.0

    def test_importance_and_uniform_agree(self):
        m = build_torus_model(3, 3, 3, 2.0)
        p = build_partition(m)
        exact = brute_force_log_Z(m)
        res_i = estimate_importance(m, p, SamplerSpec(method="importance", L=10**6, seed=2))
        res_u = estimate_uniform(m, p, SamplerSpec(method="uniform", L=10**6, seed=2))
        assert abs(res_i.log_Z_hat - exact) / exact < 0.01
        assert abs(res_u.log_Z_hat - exact) / exact < 0.01

    def test_weight_variance_decreases_with_tree_coupling(self):
        chis = []
        for j_tree in [1.0, 2.0, 3.0, 4.0]:
            model, partition = comb_mixed_model(j_cotree=1.0, j_tree=j_tree)
            res = estimate_importance(
                model, partition, SamplerSpec(method="importance", L=100_000, seed=4)
            )
            chis.append(res.chi2_hat)
        assert all(b < a for a, b in zip(chis, chis[1:]))

    def test_empirical_chi2_converges_to_exact(self):
        model, partition = comb_mixed_model(j_cotree=1.0, j_tree=2.0)
        exact = exact_chi_squared(model, partition, "importance")
        res = estimate_importance(
            model, partition, SamplerSpec(method="importance", L=10**6, seed=5)
        )
        assert res.chi2_hat == pytest.approx(exact, rel=0.05)

    def test_dispatch(self):
        m = build_torus_model(3, 3, 3, 1.0)
        p = build_partition(m)
        spec = SamplerSpec(method="importance", L=100, seed=0)
        assert estimate(m, p, spec) == estimate_importance(m, p, spec)
