"""Backend parity: the compiled kernels must reproduce the numpy fallback
bit for bit, on integer states and on accumulated floating-point weights."""

import importlib.util
import math

import numpy as np
import pytest

from dualpotts._kernels import _fallback, backend_name
from dualpotts.dualgraph import build_partition, completion_plan, log_edge_factor_tables
from dualpotts.model import build_torus_model

_core = None
if importlib.util.find_spec("dualpotts._kernels._core") is not None:
    from dualpotts._kernels import _core

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernel not built")


def make_plan(width=4, height=3, q=5, seed=3, field=False):
    m = build_torus_model(
        width, height, q,
        {"uniform": [0.2, 3.0], "seed": seed},
        0.4 if field else None,
    )
    return m, completion_plan(m, build_partition(m))


def complete_with(kernel, model, plan, xa, ysite):
    values = np.zeros((xa.shape[0], model.num_bonds), dtype=np.int8)
    values[:, plan.cotree_bonds] = xa
    bad = kernel.complete_batch(
        values, ysite, model.q,
        plan.step_site, plan.step_bond, plan.step_sign,
        plan.step_other_bonds, plan.step_other_signs,
        plan.root, plan.root_bonds, plan.root_signs,
    )
    return bad, values


class TestFallbackCorrectness:
    def test_complete_batch_matches_reference_completion(self):
        from dualpotts.dualgraph import complete_configuration

        m, plan = make_plan()
        p = build_partition(m)
        rng = np.random.default_rng(0)
        xa = rng.integers(0, m.q, size=(50, plan.cotree_bonds.size), dtype=np.int8)
        bad, values = complete_with(_fallback, m, plan, xa, None)
        assert bad == 0
        for i in range(50):
            cfg = complete_configuration(p, m, xa[i])
            assert [cfg.bond_values[b] for b in range(m.num_bonds)] == values[i].tolist()

    def test_bond_log_sum_reference(self):
        m, plan = make_plan()
        rng = np.random.default_rng(1)
        xa = rng.integers(0, m.q, size=(20, plan.cotree_bonds.size), dtype=np.int8)
        _, values = complete_with(_fallback, m, plan, xa, None)
        lg0, lg1 = log_edge_factor_tables(m.q, m.couplings)
        got = _fallback.bond_log_sum(values, plan.tree_bonds, lg0[plan.tree_bonds], lg1[plan.tree_bonds])
        ref = np.where(values[:, plan.tree_bonds] == 0, lg0[plan.tree_bonds], lg1[plan.tree_bonds]).sum(axis=1)
        assert np.allclose(got, ref, rtol=1e-13)


@needs_core
class TestBackendParity:
    @pytest.mark.parametrize("field", [False, True])
    def test_complete_batch(self, field):
        m, plan = make_plan(field=field)
        rng = np.random.default_rng(2)
        batch = 400
        xa = rng.integers(0, m.q, size=(batch, plan.cotree_bonds.size), dtype=np.int8)
        ysite = None
        if field:
            yfree = rng.integers(0, m.q, size=(batch, m.num_sites - 1), dtype=np.int8)
            ysite = np.empty((batch, m.num_sites), dtype=np.int8)
            ysite[:, :-1] = yfree
            ysite[:, -1] = (-yfree.astype(np.int64).sum(axis=1)) % m.q
        bad_c, values_c = complete_with(_core, m, plan, xa, ysite)
        bad_f, values_f = complete_with(_fallback, m, plan, xa, ysite)
        assert bad_c == bad_f == 0
        assert np.array_equal(values_c, values_f)

    def test_bond_log_sum_bitwise(self):
        m, plan = make_plan(q=4)
        rng = np.random.default_rng(3)
        xa = rng.integers(0, 4, size=(300, plan.cotree_bonds.size), dtype=np.int8)
        _, values = complete_with(_core, m, plan, xa, None)
        lg0, lg1 = log_edge_factor_tables(4, m.couplings)
        for bonds in (plan.tree_bonds, plan.cotree_bonds, np.arange(m.num_bonds)):
            a = _core.bond_log_sum(values, bonds, lg0[bonds], lg1[bonds])
            b = _fallback.bond_log_sum(values, bonds, lg0[bonds], lg1[bonds])
            assert np.array_equal(a, b)

    def test_bond_log_sum_neg_inf(self):
        m = build_torus_model(3, 3, 3, 0.0)
        plan = completion_plan(m, build_partition(m))
        values = np.ones((4, 18), dtype=np.int8)
        lg0, lg1 = log_edge_factor_tables(3, m.couplings)
        bonds = np.arange(18)
        a = _core.bond_log_sum(values, bonds, lg0[bonds], lg1[bonds])
        b = _fallback.bond_log_sum(values, bonds, lg0[bonds], lg1[bonds])
        assert np.all(a == -math.inf)
        assert np.array_equal(a, b)

    def test_metropolis_trajectories_bitwise(self):
        m, plan = make_plan(width=3, height=3, q=3, seed=9)
        rng = np.random.default_rng(4)
        batch = 500
        xa = rng.integers(0, 3, size=(batch, 10), dtype=np.int8)
        lg0, lg1 = log_edge_factor_tables(3, m.couplings)
        lvl0 = np.zeros(18)
        lvl1 = np.zeros(18)
        t0, t1 = log_edge_factor_tables(3, m.couplings[plan.tree_bonds] ** 1.7)
        lvl0[plan.tree_bonds] = t0
        lvl1[plan.tree_bonds] = t1
        proposals = rng.integers(0, 3, size=(batch, 6, 10), dtype=np.int8)
        accept_u = rng.random((batch, 6, 10))

        states = []
        for kernel in (_core, _fallback):
            _, values = complete_with(kernel, m, plan, xa, None)
            kernel.metropolis_level(
                values, 3, plan.cotree_bonds,
                lg0[plan.cotree_bonds], lg1[plan.cotree_bonds],
                lvl0, lvl1,
                plan.cycle_offsets, plan.cycle_bonds, plan.cycle_signs,
                proposals, accept_u,
            )
            states.append(values)
        assert np.array_equal(states[0], states[1])

    def test_estimates_bitwise_across_backends(self, monkeypatch):
        import dualpotts.estimators as est
        from dualpotts._kernels import _fallback as fb
        from dualpotts.estimators import AnnealSchedule, SamplerSpec

        m = build_torus_model(3, 3, 3, {"uniform": [1.1, 2.5], "seed": 7})
        p = build_partition(m)
        sched = AnnealSchedule.geometric(3.0, 3, sweeps_per_level=2)
        specs = [
            SamplerSpec(method="importance", L=20_000, seed=11, workers=2),
            SamplerSpec(method="uniform", L=20_000, seed=11),
            SamplerSpec(method="annealed", L=2_000, seed=11, schedule=sched),
        ]
        results_compiled = [est.estimate(m, p, s) for s in specs]
        monkeypatch.setattr(est, "_kernels", fb)
        results_python = [est.estimate(m, p, s) for s in specs]
        assert results_compiled == results_python


class TestRootViolationDetection:
    def test_bad_site_values_counted(self):
        # breaking the site-value zero-sum makes the root constraint fail
        m, plan = make_plan(width=3, height=3, q=3, field=True)
        rng = np.random.default_rng(5)
        batch = 30
        xa = rng.integers(0, 3, size=(batch, 10), dtype=np.int8)
        ysite = rng.integers(0, 3, size=(batch, 9), dtype=np.int8)
        ysite[:, -1] = (-ysite[:, :-1].astype(np.int64).sum(axis=1) + 1) % 3  # off by one
        bad = complete_with(_fallback, m, plan, xa, ysite)[0]
        assert bad == batch


def test_selected_backend_name():
    assert backend_name() in ("compiled", "python")
