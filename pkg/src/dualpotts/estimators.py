"""Monte Carlo estimators of the dual partition function.

Three samplers share one accumulation pipeline:

* ``importance``: draws the free co-tree values from the product proposal
  whose per-bond zero probability is (1 + (q-1) e^-J) / q, completes the
  spanning tree, and weights each sample by the log product of tree-bond
  factors (plus the last site's field factor under an external field).
* ``uniform``: draws the co-tree values uniformly and weights by the full
  factor product (field-free models only).
* ``annealed``: anneals the tree-bond couplings down a schedule of exponents
  alpha_V > ... > alpha_0 = 1, bridging levels with single-coordinate
  Metropolis sweeps and accumulating the standard annealed log-weights.

Everything is log-domain and streaming.  Sample generation is split into
``workers`` contiguous chunks; chunk c draws from the stream seeded by
(seed, c), and chunk results are merged in index order, so a result depends
only on (model, partition, spec) and is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .diagnostics import WeightAccumulator, empirical_chi2, ess
from .dualgraph import (
    CompletionError,
    CompletionPlan,
    DualPartition,
    completion_plan,
    duality_scale,
    log_edge_factor_tables,
    log_field_factor_tables,
)
from .model import PottsModel

__all__ = [
    "SamplerSpec",
    "AnnealSchedule",
    "TracePoint",
    "EstimateResult",
    "log_Z_qd",
    "draw_xA",
    "draw_y",
    "estimate_importance",
    "estimate_uniform",
    "estimate_annealed",
    "estimate",
]

_METHODS = ("importance", "uniform", "annealed")
_BLOCK = 1 << 14


def _block_size(num_bonds: int, per_sample_draws: int = 0) -> int:
    """Samples per processing block.

    Blocks bound the working-set memory (draw buffers scale with the model
    size).  The size is a fixed function of the model and schedule only, so
    it is part of the reproducibility contract: results depend on
    (model, partition, spec) and nothing else.
    """
    cap = (1 << 24) // max(1, num_bonds)
    if per_sample_draws:
        cap = min(cap, (1 << 23) // per_sample_draws)
    return min(_BLOCK, max(256, cap))


@dataclass(frozen=True)
class AnnealSchedule:
    """Strictly increasing annealing exponents starting at 1."""

    alphas: tuple[float, ...]
    sweeps_per_level: int = 5

    def __post_init__(self) -> None:
        if not self.alphas or self.alphas[0] != 1.0:
            raise ValueError("alphas must start at 1")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if self.sweeps_per_level < 1:
            raise ValueError("sweeps_per_level must be positive")

    @property
    def levels(self) -> int:
        return len(self.alphas) - 1

    @classmethod
    def geometric(
        cls, alpha_max: float, num_levels: int, sweeps_per_level: int = 5
    ) -> "AnnealSchedule":
        """Geometrically spaced exponents 1 = alpha_0 < ... < alpha_max."""
        if alpha_max <= 1.0 or num_levels < 1:
            raise ValueError("need alpha_max > 1 and at least one level")
        alphas = tuple(alpha_max ** (i / num_levels) for i in range(num_levels + 1))
        return cls(alphas=alphas, sweeps_per_level=sweeps_per_level)


@dataclass(frozen=True)
class SamplerSpec:
    """What to run: method, sample count, seed, worker chunking, schedule."""

    method: str
    L: int
    seed: int
    workers: int = 1
    schedule: Optional[AnnealSchedule] = None
    trace_stride: Optional[int] = None

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        if self.L < 1:
            raise ValueError("sample count L must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if (self.schedule is not None) != (self.method == "annealed"):
            raise ValueError("a schedule is required iff method == 'annealed'")
        if self.trace_stride is not None and self.trace_stride < 1:
            raise ValueError("trace_stride must be positive")


@dataclass(frozen=True)
class TracePoint:
    index: int
    log_z_per_site: float
    ess: float


@dataclass(frozen=True)
class EstimateResult:
    """Log-domain estimate plus weight diagnostics for one sampler run."""

    method: str
    L: int
    seed: int
    workers: int
    log_Zd_hat: float
    log_Z_hat: float
    log_Z_per_site: float
    log_weight_mean: float
    log_weight_second_moment: float
    ess: float
    chi2_hat: float
    trace: Optional[tuple[TracePoint, ...]] = None


def log_Z_qd(model: PottsModel, partition: DualPartition) -> float:
    """Log normalizer of the product proposal over the free dual variables.

    Each co-tree bond's factor sums to q * e^J over its q values, and each
    free site's field factor sums to e^H, so the normalizer is
    |cotree| * ln q + sum(co-tree J) plus, under a field, the H-sum over
    sites 0..N-2.
    """
    cotree = np.asarray(partition.cotree_bonds, dtype=np.int64)
    total = cotree.size * math.log(model.q) + float(model.couplings[cotree].sum())
    if model.has_field:
        total += float(model.fields[:-1].sum())
    return total


def _zero_probabilities(q: int, strengths: np.ndarray) -> np.ndarray:
    return (1.0 + (q - 1) * np.exp(-np.asarray(strengths, dtype=float))) / q


def draw_xA(model: PottsModel, partition: DualPartition, rng: np.random.Generator) -> np.ndarray:
    """One proposal draw of the co-tree values, aligned with partition.cotree_bonds."""
    cotree = np.asarray(partition.cotree_bonds, dtype=np.int64)
    p0 = _zero_probabilities(model.q, model.couplings[cotree])
    u = rng.random(cotree.size)
    nz = rng.integers(1, model.q, size=cotree.size, dtype=np.int64)
    return np.where(u < p0, 0, nz)


def draw_y(model: PottsModel, rng: np.random.Generator) -> np.ndarray:
    """One proposal draw of the free dual site values (sites 0..N-2)."""
    if not model.has_field:
        raise ValueError("model has no external field")
    p0 = _zero_probabilities(model.q, model.fields[:-1])
    u = rng.random(model.num_sites - 1)
    nz = rng.integers(1, model.q, size=model.num_sites - 1, dtype=np.int64)
    return np.where(u < p0, 0, nz)


# ---------------------------------------------------------------------------
# Shared accumulation machinery
# ---------------------------------------------------------------------------

def _chunk_lengths(L: int, workers: int) -> list[int]:
    base, rem = divmod(L, workers)
    return [base + 1 if c < rem else base for c in range(workers)]


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, chunk)))


class _RunningStats:
    """Chunk-ordered weight accumulation with optional stride-sampled trace."""

    def __init__(self, stride: Optional[int], num_sites: int, offset: float, scale: float):
        self.acc = WeightAccumulator()
        self.stride = stride
        self.num_sites = num_sites
        self.offset = offset          # added to log-mean-weight for log Zd
        self.scale = scale            # duality scale, subtracted for log Z
        self.seen = 0
        self._carry_lse = -math.inf
        self._carry_lse2 = -math.inf
        self.points: list[TracePoint] = []

    def add_block(self, w: np.ndarray) -> None:
        if self.stride is not None:
            run = np.logaddexp(self._carry_lse, np.logaddexp.accumulate(w))
            run2 = np.logaddexp(self._carry_lse2, np.logaddexp.accumulate(2.0 * w))
            self._carry_lse = float(run[-1])
            self._carry_lse2 = float(run2[-1])
            first = self.seen + 1
            idx = np.arange(first, first + w.size)
            hits = np.nonzero(idx % self.stride == 0)[0]
            for p in hits:
                i = int(idx[p])
                lse_i, lse2_i = float(run[p]), float(run2[p])
                log_zd = self.offset + lse_i - math.log(i)
                point_ess = 0.0 if lse_i == -math.inf else math.exp(2 * lse_i - lse2_i)
                self.points.append(
                    TracePoint(
                        index=i,
                        log_z_per_site=(log_zd - self.scale) / self.num_sites,
                        ess=point_ess,
                    )
                )
        self.seen += w.size
        self.acc.add_array(w)

    def result(self, method: str, L: int, seed: int, workers: int) -> EstimateResult:
        acc = self.acc
        log_l = math.log(L)
        if acc.shifted_sum > 0.0:
            log_weight_mean = acc.max_log + (math.log(acc.shifted_sum) - log_l)
            log_weight_m2 = 2 * acc.max_log + (math.log(acc.shifted_sum_sq) - log_l)
            sample_ess = ess(acc)
            chi2 = empirical_chi2(acc) if L >= 2 else 0.0
        else:
            log_weight_mean = -math.inf
            log_weight_m2 = -math.inf
            sample_ess = 0.0
            chi2 = math.inf
        log_zd = self.offset + log_weight_mean
        log_z = log_zd - self.scale
        return EstimateResult(
            method=method,
            L=L,
            seed=seed,
            workers=workers,
            log_Zd_hat=log_zd,
            log_Z_hat=log_z,
            log_Z_per_site=log_z / self.num_sites,
            log_weight_mean=log_weight_mean,
            log_weight_second_moment=log_weight_m2,
            ess=sample_ess,
            chi2_hat=chi2,
            trace=tuple(self.points) if self.stride is not None else None,
        )


def _complete_block(
    model: PottsModel,
    plan: CompletionPlan,
    xa_block: np.ndarray,
    ysite: Optional[np.ndarray],
) -> np.ndarray:
    batch = xa_block.shape[0]
    values = np.zeros((batch, model.num_bonds), dtype=np.int8)
    values[:, plan.cotree_bonds] = xa_block
    bad = _kernels.complete_batch(
        values,
        ysite,
        model.q,
        plan.step_site,
        plan.step_bond,
        plan.step_sign,
        plan.step_other_bonds,
        plan.step_other_signs,
        plan.root,
        plan.root_bonds,
        plan.root_signs,
    )
    if bad:
        raise CompletionError(
            f"{bad} of {batch} completions violated the root constraint"
        )
    return values


def _draw_threshold_block(
    rng: np.random.Generator, p0: np.ndarray, q: int, batch: int
) -> np.ndarray:
    u = rng.random((batch, p0.size))
    nz = rng.integers(1, q, size=(batch, p0.size), dtype=np.int8)
    return np.where(u < p0, np.int8(0), nz)


def _require_small_alphabet(q: int) -> None:
    if q > 127:
        raise ValueError("sampling kernels support q <= 127")


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def estimate_importance(
    model: PottsModel, partition: DualPartition, spec: SamplerSpec
) -> EstimateResult:
    """Importance sampling from the dual product proposal (Zd estimate)."""
    if spec.method != "importance":
        raise ValueError("spec.method must be 'importance'")
    _require_small_alphabet(model.q)
    plan = completion_plan(model, partition)
    q = model.q
    lg0, lg1 = log_edge_factor_tables(q, model.couplings)
    tree = plan.tree_bonds
    lg0_tree, lg1_tree = lg0[tree], lg1[tree]
    p0_bonds = _zero_probabilities(q, model.couplings[plan.cotree_bonds])

    with_field = model.has_field
    if with_field:
        p0_sites = _zero_probabilities(q, model.fields[:-1])
        l0, l1 = log_field_factor_tables(q, model.fields)
        last0, last1 = float(l0[-1]), float(l1[-1])

    stats = _RunningStats(
        spec.trace_stride, model.num_sites, log_Z_qd(model, partition), duality_scale(model)
    )
    block = _block_size(model.num_bonds)
    for chunk, length in enumerate(_chunk_lengths(spec.L, spec.workers)):
        rng = _chunk_rng(spec.seed, chunk)
        done = 0
        while done < length:
            batch = min(block, length - done)
            xa = _draw_threshold_block(rng, p0_bonds, q, batch)
            ysite = None
            if with_field:
                yfree = _draw_threshold_block(rng, p0_sites, q, batch)
                ysite = np.empty((batch, model.num_sites), dtype=np.int8)
                ysite[:, :-1] = yfree
                ysite[:, -1] = (-yfree.astype(np.int64).sum(axis=1)) % q
            values = _complete_block(model, plan, xa, ysite)
            w = _kernels.bond_log_sum(values, tree, lg0_tree, lg1_tree)
            if with_field:
                w = w + np.where(ysite[:, -1] == 0, last0, last1)
            stats.add_block(w)
            done += batch
    return stats.result("importance", spec.L, spec.seed, spec.workers)


def estimate_uniform(
    model: PottsModel, partition: DualPartition, spec: SamplerSpec
) -> EstimateResult:
    """Uniform sampling over the free co-tree values (field-free models)."""
    if spec.method != "uniform":
        raise ValueError("spec.method must be 'uniform'")
    if model.has_field:
        raise ValueError("uniform sampling is defined for field-free models only")
    _require_small_alphabet(model.q)
    plan = completion_plan(model, partition)
    q = model.q
    lg0, lg1 = log_edge_factor_tables(q, model.couplings)
    all_bonds = np.arange(model.num_bonds, dtype=np.int64)
    n_a = plan.cotree_bonds.size

    stats = _RunningStats(
        spec.trace_stride, model.num_sites, n_a * math.log(q), duality_scale(model)
    )
    block = _block_size(model.num_bonds)
    for chunk, length in enumerate(_chunk_lengths(spec.L, spec.workers)):
        rng = _chunk_rng(spec.seed, chunk)
        done = 0
        while done < length:
            batch = min(block, length - done)
            xa = rng.integers(0, q, size=(batch, n_a), dtype=np.int8)
            values = _complete_block(model, plan, xa, None)
            w = _kernels.bond_log_sum(values, all_bonds, lg0, lg1)
            stats.add_block(w)
            done += batch
    return stats.result("uniform", spec.L, spec.seed, spec.workers)


def estimate_annealed(
    model: PottsModel, partition: DualPartition, spec: SamplerSpec
) -> EstimateResult:
    """Annealed importance sampling along exponentiated tree couplings.

    Level v replaces each tree-bond coupling J by J ** alpha_v (co-tree
    couplings never change, so the level-V proposal coincides with the plain
    importance proposal).  Each run draws from the proposal, seeds the weight
    with the level-V importance weight, then for v = V-1 .. 0 accumulates the
    log-density difference between levels v and v+1 and applies the level-v
    Metropolis sweeps.
    """
    if spec.method != "annealed":
        raise ValueError("spec.method must be 'annealed'")
    if spec.schedule is None:
        raise ValueError("annealed sampling requires a schedule")
    if model.has_field:
        raise ValueError("annealed sampling is defined for field-free models only")
    _require_small_alphabet(model.q)
    plan = completion_plan(model, partition)
    q = model.q
    schedule = spec.schedule
    levels = schedule.levels
    tree = plan.tree_bonds
    tree_j = model.couplings[tree]
    if levels >= 1:
        weak = np.nonzero(tree_j <= 1.0)[0]
        if weak.size:
            b = int(tree[weak[0]])
            raise ValueError(
                f"annealing exponents only strengthen couplings above 1; tree bond "
                f"{b} has J = {float(model.couplings[b])!r} <= 1"
            )

    lg0, lg1 = log_edge_factor_tables(q, model.couplings)
    cotree = plan.cotree_bonds
    lg0_a, lg1_a = lg0[cotree], lg1[cotree]
    p0_bonds = _zero_probabilities(q, model.couplings[cotree])

    # Per-level tree tables, aligned to the tree subset and, for the kernel,
    # scattered to full bond-id indexing.
    lvl_tree0, lvl_tree1, lvl_full0, lvl_full1 = [], [], [], []
    for alpha in schedule.alphas:
        t0, t1 = log_edge_factor_tables(q, tree_j**alpha)
        lvl_tree0.append(t0)
        lvl_tree1.append(t1)
        f0 = np.zeros(model.num_bonds)
        f1 = np.zeros(model.num_bonds)
        f0[tree] = t0
        f1[tree] = t1
        lvl_full0.append(f0)
        lvl_full1.append(f1)

    stats = _RunningStats(spec.trace_stride, model.num_sites, 0.0, duality_scale(model))
    log_norm = log_Z_qd(model, partition)
    block = _block_size(model.num_bonds, schedule.sweeps_per_level * cotree.size)
    for chunk, length in enumerate(_chunk_lengths(spec.L, spec.workers)):
        rng = _chunk_rng(spec.seed, chunk)
        done = 0
        while done < length:
            batch = min(block, length - done)
            xa = _draw_threshold_block(rng, p0_bonds, q, batch)
            values = _complete_block(model, plan, xa, None)
            w = log_norm + _kernels.bond_log_sum(
                values, tree, lvl_tree0[levels], lvl_tree1[levels]
            )
            for v in range(levels - 1, -1, -1):
                w = w + _kernels.bond_log_sum(
                    values,
                    tree,
                    lvl_tree0[v] - lvl_tree0[v + 1],
                    lvl_tree1[v] - lvl_tree1[v + 1],
                )
                proposals = rng.integers(
                    0, q, size=(batch, schedule.sweeps_per_level, cotree.size), dtype=np.int8
                )
                accept_u = rng.random((batch, schedule.sweeps_per_level, cotree.size))
                _kernels.metropolis_level(
                    values,
                    q,
                    cotree,
                    lg0_a,
                    lg1_a,
                    lvl_full0[v],
                    lvl_full1[v],
                    plan.cycle_offsets,
                    plan.cycle_bonds,
                    plan.cycle_signs,
                    proposals,
                    accept_u,
                )
            stats.add_block(w)
            done += batch
    return stats.result("annealed", spec.L, spec.seed, spec.workers)


def estimate(model: PottsModel, partition: DualPartition, spec: SamplerSpec) -> EstimateResult:
    """Dispatch on spec.method."""
    fn = {
        "importance": estimate_importance,
        "uniform": estimate_uniform,
        "annealed": estimate_annealed,
    }[spec.method]
    return fn(model, partition, spec)
