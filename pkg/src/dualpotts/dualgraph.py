"""Dual factor graph of the torus Potts model.

In the dual graph every bond carries a variable in {0, ..., q-1} and every
site imposes a mod-q constraint: the signed sum of its incident bond values
(plus the site's own dual variable when an external field is present) must
vanish mod q.  The sign of a bond at a site is +1 at the tail and -1 at the
head, with the orientation fixed canonically by the grid geometry (see
`model`).  Each bond also carries a scalar factor

    edge_factor(t) = e^J + q - 1   if t == 0
                     e^J - 1       otherwise

and, with a field, each site carries

    field_factor(t) = (e^H + q - 1) / q   if t == 0
                      (e^H - 1) / q       otherwise.

The dual partition function Z_d (sum of factor products over all valid
configurations) relates to the primal one by ``ln Z_d = ln Z + N ln q``; the
relation holds with and without a field (validated against brute force in the
test suite).

Valid configurations are parametrized by the values on the co-tree bonds of a
chosen spanning tree (plus, under a field, the dual site values at all sites
except the last one): tree-bond values follow by solving the site constraints
leaves-to-root, and the root constraint then holds automatically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .model import PottsModel, torus_bonds

__all__ = [
    "dual_edge_factor",
    "log_dual_edge_factor",
    "dual_field_factor",
    "log_dual_field_factor",
    "log_edge_factor_tables",
    "log_field_factor_tables",
    "DualPartition",
    "DualConfiguration",
    "build_partition",
    "complete_configuration",
    "site_constraint_residuals",
    "log_gamma_product",
    "duality_scale",
    "save_partition",
    "load_partition",
    "CompletionPlan",
    "completion_plan",
]


# ---------------------------------------------------------------------------
# Dual factors
# ---------------------------------------------------------------------------

def dual_edge_factor(q: int, J: float, t: int) -> float:
    """Dual bond factor value at t.  Requires J >= 0 and 0 <= t < q."""
    _check_factor_args(q, J, t, "J")
    return math.exp(J) + q - 1 if t == 0 else math.exp(J) - 1


def log_dual_edge_factor(q: int, J: float, t: int) -> float:
    """ln of `dual_edge_factor`, stable for both tiny and large J.

    Returns -inf at J == 0, t != 0 (the factor is exactly zero there).
    """
    _check_factor_args(q, J, t, "J")
    if t == 0:
        return J + math.log1p((q - 1) * math.exp(-J))
    if J == 0.0:
        return -math.inf
    # expm1 is accurate for small J; switch before e^J overflows.
    if J < 700.0:
        return math.log(math.expm1(J))
    return J + math.log1p(-math.exp(-J))


def dual_field_factor(q: int, H: float, t: int) -> float:
    """Dual site factor value at t (1/q-normalized form).  Requires H >= 0."""
    _check_factor_args(q, H, t, "H")
    return (math.exp(H) + q - 1) / q if t == 0 else (math.exp(H) - 1) / q


def log_dual_field_factor(q: int, H: float, t: int) -> float:
    """ln of `dual_field_factor`; -inf at H == 0, t != 0."""
    _check_factor_args(q, H, t, "H")
    if t == 0:
        return H + math.log1p((q - 1) * math.exp(-H)) - math.log(q)
    if H == 0.0:
        return -math.inf
    if H < 700.0:
        return math.log(math.expm1(H)) - math.log(q)
    return H + math.log1p(-math.exp(-H)) - math.log(q)


def _check_factor_args(q: int, strength: float, t: int, name: str) -> None:
    if q < 2:
        raise ValueError(f"q must be >= 2 (got {q})")
    if strength < 0:
        raise ValueError(f"{name} must be nonnegative (got {strength})")
    if not 0 <= t < q:
        raise ValueError(f"value {t} outside alphabet range [0, {q})")


def log_edge_factor_tables(q: int, couplings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (log factor at 0, log factor at nonzero) per bond."""
    j = np.asarray(couplings, dtype=float)
    lg0 = j + np.log1p((q - 1) * np.exp(-j))
    with np.errstate(divide="ignore"):
        small = np.log(np.expm1(np.minimum(j, 700.0)))
        lg1 = np.where(j < 700.0, small, j + np.log1p(-np.exp(-j)))
    return lg0, lg1


def log_field_factor_tables(q: int, fields: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (log field factor at 0, at nonzero) per site."""
    l0, l1 = log_edge_factor_tables(q, fields)
    return l0 - math.log(q), l1 - math.log(q)


# ---------------------------------------------------------------------------
# Spanning-tree partition of the bonds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualPartition:
    """Spanning tree / co-tree split of the bond set.

    ``tree_bonds`` are the N-1 bonds whose dual values are determined by the
    site constraints; ``cotree_bonds`` are the N+1 free bonds.
    ``completion_order`` lists (site, tree-bond-to-parent) pairs, children
    before parents, ending just below the root.  ``orientations`` repeats the
    canonical (tail, head) per bond id: +1 at the tail site's constraint, -1
    at the head site's.
    """

    tree_bonds: tuple[int, ...]
    cotree_bonds: tuple[int, ...]
    root: int
    completion_order: tuple[tuple[int, int], ...]
    orientations: tuple[tuple[int, int], ...]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def _comb_tree(width: int, height: int) -> list[int]:
    """Deterministic comb spanning tree.

    All horizontal bonds except each row's wrap-around (col == width-1), plus
    the vertical bonds of column 0 except the wrap-around (row == height-1).
    """
    tree = []
    for r in range(height):
        for c in range(width - 1):
            tree.append(2 * (r * width + c))
    for r in range(height - 1):
        tree.append(2 * (r * width) + 1)
    return sorted(tree)


def _max_coupling_tree(model: PottsModel) -> list[int]:
    # Greedy maximum-weight spanning tree; ties broken by canonical bond id.
    tails, heads = torus_bonds(model.width, model.height)
    order = sorted(range(model.num_bonds), key=lambda b: (-model.couplings[b], b))
    uf = _UnionFind(model.num_sites)
    tree = []
    for b in order:
        if uf.union(int(tails[b]), int(heads[b])):
            tree.append(b)
            if len(tree) == model.num_sites - 1:
                break
    return sorted(tree)


def build_partition(
    model: PottsModel,
    strategy: Union[str, Iterable[int]] = "max_coupling",
) -> DualPartition:
    """Choose the spanning tree of determined bonds.

    ``max_coupling`` (default) puts the strongest couplings in the tree,
    which minimizes the importance-weight variance; ``comb`` is the fixed
    comb-shaped tree documented in `_comb_tree`; any iterable of bond ids is
    validated as an explicit spanning tree.
    """
    n = model.num_sites
    tails, heads = _canonical_endpoints(model)
    if isinstance(strategy, str):
        key = strategy.replace("-", "_")
        if key == "max_coupling":
            tree = _max_coupling_tree(model)
        elif key == "comb":
            tree = _comb_tree(model.width, model.height)
        else:
            raise ValueError(f"unknown partition strategy: {strategy!r}")
    else:
        tree = sorted(int(b) for b in strategy)
        if len(tree) != n - 1:
            raise ValueError(
                f"explicit tree has {len(tree)} bonds, expected {n - 1}"
            )
        if any(b < 0 or b >= model.num_bonds for b in tree):
            raise ValueError("explicit tree contains invalid bond ids")
        uf = _UnionFind(n)
        for b in tree:
            if not uf.union(int(tails[b]), int(heads[b])):
                raise ValueError(f"explicit bond list is not a spanning tree (cycle at bond {b})")

    tree_set = set(tree)
    cotree = tuple(b for b in range(model.num_bonds) if b not in tree_set)

    # BFS from the root over tree adjacency; completion solves in reverse
    # BFS order so every child is visited before its parent.
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for b in tree:
        u, v = int(tails[b]), int(heads[b])
        adj[u].append((v, b))
        adj[v].append((u, b))
    root = 0
    parent_bond = [-1] * n
    bfs = [root]
    seen = [False] * n
    seen[root] = True
    head = 0
    while head < len(bfs):
        u = bfs[head]
        head += 1
        for v, b in sorted(adj[u]):
            if not seen[v]:
                seen[v] = True
                parent_bond[v] = b
                bfs.append(v)
    if not all(seen):
        raise ValueError("bond list does not span all sites")
    completion_order = tuple((v, parent_bond[v]) for v in reversed(bfs) if v != root)

    return DualPartition(
        tree_bonds=tuple(tree),
        cotree_bonds=cotree,
        root=root,
        completion_order=completion_order,
        orientations=tuple(zip(tails.tolist(), heads.tolist())),
    )


def save_partition(partition: DualPartition, fp: Union[str, IO[str]]) -> None:
    doc = {"tree_bonds": list(partition.tree_bonds), "root": partition.root}
    if isinstance(fp, str):
        with open(fp, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
    else:
        json.dump(doc, fp, sort_keys=True)


def load_partition(model: PottsModel, fp: Union[str, IO[str]]) -> DualPartition:
    if isinstance(fp, str):
        with open(fp) as fh:
            doc = json.load(fh)
    else:
        doc = json.load(fp)
    if doc.get("root", 0) != 0:
        raise ValueError("partition files must use root site 0")
    return build_partition(model, doc["tree_bonds"])


# ---------------------------------------------------------------------------
# Completion of free values to a valid dual configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompletionPlan:
    """Precomputed arrays for solving the site constraints.

    ``step_*`` encode the leaves-to-root solve: at step i, tree bond
    ``step_bond[i]`` at site ``step_site[i]`` is set to
    ``-step_sign[i] * (signed sum of the three other incident bonds + y)``
    mod q.  ``coeff_bonds`` / ``coeff_sites`` are the equivalent linear maps
    (tree values = coeff @ free values mod q), used by tests and by the
    incremental cycle updates: column k of ``coeff_bonds`` is the fundamental
    cycle of co-tree bond k through the tree.
    """

    q: int
    num_bonds: int
    tree_bonds: np.ndarray       # (N-1,) int64
    cotree_bonds: np.ndarray     # (N+1,) int64
    step_site: np.ndarray        # (N-1,) int64
    step_bond: np.ndarray        # (N-1,) int64
    step_sign: np.ndarray        # (N-1,) int64, sign of solved bond at its site
    step_other_bonds: np.ndarray  # (N-1, 3) int64
    step_other_signs: np.ndarray  # (N-1, 3) int64
    root: int
    root_bonds: np.ndarray       # (4,) int64
    root_signs: np.ndarray       # (4,) int64
    coeff_bonds: np.ndarray      # (N-1, N+1) int8, tree value coeffs on co-tree values
    coeff_sites: np.ndarray      # (N-1, N) int8, tree value coeffs on site values
    cycle_offsets: np.ndarray    # (N+2,) int64 CSR offsets per co-tree bond
    cycle_bonds: np.ndarray      # flattened tree-bond ids per cycle
    cycle_signs: np.ndarray      # flattened coefficients per cycle


def _canonical_endpoints(
    model: PottsModel, flip_bonds: Sequence[int] = ()
) -> tuple[np.ndarray, np.ndarray]:
    # Signs always derive from grid geometry, never from how a bond's
    # endpoints happen to be stored, so estimates cannot depend on input
    # endpoint order.  flip_bonds is a verification hook: it flips the sign
    # convention of the listed bonds consistently, which must leave the dual
    # partition function unchanged (tested) though per-sample weights move.
    tails, heads = torus_bonds(model.width, model.height)
    if flip_bonds:
        tails = tails.copy()
        heads = heads.copy()
        for b in flip_bonds:
            tails[b], heads[b] = heads[b], tails[b]
    return tails, heads


def completion_plan(
    model: PottsModel,
    partition: DualPartition,
    flip_bonds: Sequence[int] = (),
) -> CompletionPlan:
    """Build the solve/cycle structures for a (model, partition) pair."""
    n = model.num_sites
    nb = model.num_bonds
    ids = set(partition.tree_bonds) | set(partition.cotree_bonds)
    if len(partition.tree_bonds) != n - 1 or ids != set(range(nb)):
        raise ValueError(
            f"partition does not match model: need {n - 1} tree bonds covering "
            f"{nb} bonds with the co-tree"
        )
    tails, heads = _canonical_endpoints(model, flip_bonds)

    incident: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for b in range(nb):
        incident[int(tails[b])].append((b, +1))
        incident[int(heads[b])].append((b, -1))

    steps_site = []
    steps_bond = []
    steps_sign = []
    steps_other_b = []
    steps_other_s = []
    for site, bond in partition.completion_order:
        others = [(b, s) for (b, s) in incident[site] if b != bond]
        sign = +1 if int(tails[bond]) == site else -1
        steps_site.append(site)
        steps_bond.append(bond)
        steps_sign.append(sign)
        steps_other_b.append([b for b, _ in others])
        steps_other_s.append([s for _, s in others])

    root_pairs = incident[partition.root]
    root_bonds = np.array([b for b, _ in root_pairs], dtype=np.int64)
    root_signs = np.array([s for _, s in root_pairs], dtype=np.int64)

    # Subtree intervals via iterative DFS over the tree from the root.
    children: list[list[int]] = [[] for _ in range(n)]
    for site, bond in partition.completion_order:
        other = int(heads[bond]) if int(tails[bond]) == site else int(tails[bond])
        children[other].append(site)
    tin = np.zeros(n, dtype=np.int64)
    tout = np.zeros(n, dtype=np.int64)
    clock = 0
    stack: list[tuple[int, bool]] = [(partition.root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            tout[v] = clock
            continue
        tin[v] = clock
        clock += 1
        stack.append((v, True))
        for c in children[v]:
            stack.append((c, False))

    tree_arr = np.array(partition.tree_bonds, dtype=np.int64)
    cotree_arr = np.array(partition.cotree_bonds, dtype=np.int64)
    tree_row = {b: i for i, b in enumerate(partition.tree_bonds)}

    # Sum of constraints over subtree(site): internal bonds cancel, so
    # sigma_out * x_bond + sum(crossing co-tree terms) + sum(y in subtree) = 0,
    # where a bond crosses with +1 if only its tail is inside, -1 if only its
    # head is.  Subtree membership tests use the DFS intervals, vectorized
    # per completion step.
    tin_cot_tails = tin[tails[cotree_arr]]
    tin_cot_heads = tin[heads[cotree_arr]]
    coeff_bonds = np.zeros((n - 1, n + 1), dtype=np.int8)
    coeff_sites = np.zeros((n - 1, n), dtype=np.int8)
    for site, bond in partition.completion_order:
        row = tree_row[bond]
        lo, hi = tin[site], tout[site]
        sigma_out = 1 if lo <= tin[tails[bond]] < hi else -1
        crossing = ((lo <= tin_cot_tails) & (tin_cot_tails < hi)).astype(np.int8)
        crossing -= ((lo <= tin_cot_heads) & (tin_cot_heads < hi)).astype(np.int8)
        coeff_bonds[row] = -sigma_out * crossing
        coeff_sites[row] = -sigma_out * ((lo <= tin) & (tin < hi)).astype(np.int8)

    # Fundamental cycles: nonzero rows of each co-tree column.
    offs = [0]
    cyc_bonds: list[int] = []
    cyc_signs: list[int] = []
    for col in range(n + 1):
        rows = np.nonzero(coeff_bonds[:, col])[0]
        cyc_bonds.extend(int(tree_arr[r]) for r in rows)
        cyc_signs.extend(int(coeff_bonds[r, col]) for r in rows)
        offs.append(len(cyc_bonds))

    return CompletionPlan(
        q=model.q,
        num_bonds=nb,
        tree_bonds=tree_arr,
        cotree_bonds=cotree_arr,
        step_site=np.array(steps_site, dtype=np.int64),
        step_bond=np.array(steps_bond, dtype=np.int64),
        step_sign=np.array(steps_sign, dtype=np.int64),
        step_other_bonds=np.array(steps_other_b, dtype=np.int64),
        step_other_signs=np.array(steps_other_s, dtype=np.int64),
        root=partition.root,
        root_bonds=root_bonds,
        root_signs=root_signs,
        coeff_bonds=coeff_bonds,
        coeff_sites=coeff_sites,
        cycle_offsets=np.array(offs, dtype=np.int64),
        cycle_bonds=np.array(cyc_bonds, dtype=np.int64),
        cycle_signs=np.array(cyc_signs, dtype=np.int64),
    )


@dataclass(frozen=True)
class DualConfiguration:
    """Per-bond dual values, plus per-site values when a field is present."""

    bond_values: dict[int, int]
    site_values: Optional[dict[int, int]] = None


class CompletionError(RuntimeError):
    """Root constraint violated after completion: an internal sign bug."""


def _free_site_values(model: PottsModel, y) -> np.ndarray:
    n = model.num_sites
    if isinstance(y, Mapping):
        missing = [m for m in range(n - 1) if m not in y]
        if missing:
            raise ValueError(f"field values missing for sites {missing[:5]}")
        arr = np.array([int(y[m]) for m in range(n - 1)], dtype=np.int64)
    else:
        arr = np.asarray(y, dtype=np.int64)
        if arr.shape != (n - 1,):
            raise ValueError(f"expected {n - 1} site values, got {arr.size}")
    if np.any(arr < 0) or np.any(arr >= model.q):
        raise ValueError("site values outside alphabet range")
    return arr


def complete_configuration(
    partition: DualPartition,
    model: PottsModel,
    xA,
    y=None,
) -> DualConfiguration:
    """Extend free values to the unique valid dual configuration.

    ``xA`` assigns every co-tree bond (mapping bond-id -> value, or a
    sequence aligned with ``partition.cotree_bonds``).  With a field, ``y``
    assigns sites 0..N-2; the last site's value is set so all site values
    sum to zero mod q, which is what makes the root constraint solvable.
    Tree bonds are then solved leaves-to-root and the root constraint is
    asserted: a violation raises `CompletionError` (an internal bug, never a
    user error).
    """
    q = model.q
    n = model.num_sites
    if isinstance(xA, Mapping):
        missing = [b for b in partition.cotree_bonds if b not in xA]
        if missing:
            raise ValueError(f"co-tree values missing for bonds {missing[:5]}")
        xa = np.array([int(xA[b]) for b in partition.cotree_bonds], dtype=np.int64)
    else:
        xa = np.asarray(xA, dtype=np.int64)
        if xa.shape != (len(partition.cotree_bonds),):
            raise ValueError(
                f"expected {len(partition.cotree_bonds)} co-tree values, got {xa.size}"
            )
    if np.any(xa < 0) or np.any(xa >= q):
        raise ValueError("co-tree values outside alphabet range")

    if model.has_field:
        if y is None:
            raise ValueError("model has a field: values for sites 0..N-2 are required")
        yfree = _free_site_values(model, y)
        ysite = np.empty(n, dtype=np.int64)
        ysite[: n - 1] = yfree
        ysite[n - 1] = (-int(yfree.sum())) % q
    else:
        if y is not None:
            raise ValueError("site values given but the model has no field")
        ysite = None

    values = np.zeros(model.num_bonds, dtype=np.int64)
    values[list(partition.cotree_bonds)] = xa

    plan = completion_plan(model, partition)
    for i in range(plan.step_site.size):
        site = int(plan.step_site[i])
        s = int(
            (plan.step_other_signs[i] * values[plan.step_other_bonds[i]]).sum()
        )
        if ysite is not None:
            s += int(ysite[site])
        values[plan.step_bond[i]] = (-int(plan.step_sign[i]) * s) % q

    root_sum = int((plan.root_signs * values[plan.root_bonds]).sum())
    if ysite is not None:
        root_sum += int(ysite[plan.root])
    if root_sum % q != 0:
        raise CompletionError(
            f"root constraint violated (residual {root_sum % q} mod {q}); "
            "this indicates broken sign bookkeeping"
        )

    return DualConfiguration(
        bond_values={b: int(values[b]) for b in range(model.num_bonds)},
        site_values=None if ysite is None else {m: int(ysite[m]) for m in range(n)},
    )


def site_constraint_residuals(model: PottsModel, config: DualConfiguration) -> np.ndarray:
    """Mod-q residual of every site constraint; all zero iff the config is valid."""
    tails, heads = _canonical_endpoints(model)
    res = np.zeros(model.num_sites, dtype=np.int64)
    for b in range(model.num_bonds):
        v = config.bond_values[b]
        res[int(tails[b])] += v
        res[int(heads[b])] -= v
    if config.site_values is not None:
        for m, t in config.site_values.items():
            res[m] += t
    return res % model.q


def log_gamma_product(
    model: PottsModel,
    partition: DualPartition,
    config: DualConfiguration,
    side: str,
) -> float:
    """Log product of dual factors on one side of the partition.

    Side "A" covers the co-tree bonds (plus, with a field, the site factors
    of all sites except the last); side "B" covers the tree bonds (plus the
    last site's factor).  Returns -inf if any factor vanishes.
    """
    if side not in ("A", "B"):
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    bonds = partition.cotree_bonds if side == "A" else partition.tree_bonds
    total = 0.0
    for b in bonds:
        total += log_dual_edge_factor(model.q, float(model.couplings[b]), config.bond_values[b])
    if model.has_field:
        if config.site_values is None:
            raise ValueError("field model requires site values in the configuration")
        n = model.num_sites
        sites = range(n - 1) if side == "A" else (n - 1,)
        for m in sites:
            total += log_dual_field_factor(
                model.q, float(model.fields[m]), config.site_values[m]
            )
    return total


def duality_scale(model) -> float:
    """Log scale relating dual and primal partition functions: ln Zd - ln Z.

    ``N ln q`` for the torus model, with and without a field (the field case
    is validated numerically against brute force).  Zero for 1D chains, whose
    dualization carries no local scale factors.
    """
    if isinstance(model, PottsModel):
        return model.num_sites * math.log(model.q)
    from .oracles import Chain1D  # local import to avoid a module cycle

    if isinstance(model, Chain1D):
        return 0.0
    raise TypeError(f"unsupported model type: {type(model).__name__}")
