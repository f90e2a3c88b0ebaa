"""Ferromagnetic q-state Potts model on a 2D torus.

Sites live on a ``width x height`` grid with periodic boundaries and are
indexed row-major: site ``(row, col) -> row * width + col``.  Bonds are
enumerated canonically: for each site in row-major order, first its rightward
bond, then its downward bond, so bond ``2*s`` is the rightward bond of site
``s`` and bond ``2*s + 1`` its downward bond.  There are exactly ``2 * N``
bonds and every site has degree four.

Every bond carries an orientation (tail -> head) fixed by the grid geometry:
rightward bonds point left -> right, downward bonds point top -> bottom.  The
orientation is canonical; it is derived from geometry and cannot be changed
by reordering endpoints in any input, which keeps all downstream sign
bookkeeping (and therefore all sampled estimates) reproducible.

The energy of a configuration ``x`` is

    E(x) = - sum_bonds J_b * [x_tail == x_head] - sum_sites H_m * [x_m == 0]

with temperature fixed to 1 (temperature sweeps are expressed by scaling J).
The per-site field H couples to symbol 0 only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import IO, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "PottsModel",
    "PrimalConfiguration",
    "build_torus_model",
    "torus_bonds",
    "hamiltonian",
    "log_weight",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "model_hash",
]

# Sub-stream tags so that model randomization never shares a stream with the
# estimator chunks (which use spawn_key=(1, chunk)).
_COUPLING_STREAM = (2, 1)
_FIELD_STREAM = (2, 2)

CouplingSpec = Union[float, int, Sequence[float], Mapping]
FieldSpec = Union[None, float, int, Sequence[float], Mapping]


def torus_bonds(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical bond endpoints (tails, heads) for a width x height torus."""
    n = width * height
    sites = np.arange(n)
    rows, cols = divmod(sites, width)
    right = rows * width + (cols + 1) % width
    down = ((rows + 1) % height) * width + cols
    tails = np.repeat(sites, 2)
    heads = np.empty(2 * n, dtype=np.int64)
    heads[0::2] = right
    heads[1::2] = down
    return tails, heads


@dataclass(frozen=True)
class PottsModel:
    """Immutable torus Potts model: grid shape, alphabet size, J and H arrays.

    ``couplings`` maps bond id -> J (index = canonical bond id) and ``fields``
    maps site id -> H.  Both arrays are read-only; the model is safe to share
    across concurrent workers.
    """

    width: int
    height: int
    q: int
    couplings: np.ndarray
    fields: np.ndarray
    bond_tails: np.ndarray
    bond_heads: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 3 or self.height < 3:
            raise ValueError(
                f"grid must be at least 3x3 (got {self.width}x{self.height}); "
                "smaller tori create multi-edges between site pairs"
            )
        if self.q < 2:
            raise ValueError(f"alphabet size q must be >= 2 (got {self.q})")
        n = self.width * self.height
        if self.couplings.shape != (2 * n,):
            raise ValueError(
                f"expected {2 * n} couplings, got {self.couplings.shape}"
            )
        if self.fields.shape != (n,):
            raise ValueError(f"expected {n} fields, got {self.fields.shape}")
        if np.any(self.couplings < 0):
            raise ValueError("couplings must be nonnegative (ferromagnetic)")
        if np.any(self.fields < 0):
            raise ValueError("fields must be nonnegative")
        for name in ("couplings", "fields", "bond_tails", "bond_heads"):
            getattr(self, name).setflags(write=False)

    @property
    def num_sites(self) -> int:
        return self.width * self.height

    @property
    def num_bonds(self) -> int:
        return 2 * self.num_sites

    @property
    def has_field(self) -> bool:
        return bool(np.any(self.fields != 0.0))

    @property
    def bonds(self) -> list[tuple[int, int]]:
        """Bonds as (tail, head) pairs in canonical order."""
        return list(zip(self.bond_tails.tolist(), self.bond_heads.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PottsModel):
            return NotImplemented
        return (
            (self.width, self.height, self.q) == (other.width, other.height, other.q)
            and np.array_equal(self.couplings, other.couplings)
            and np.array_equal(self.fields, other.fields)
        )


@dataclass(frozen=True)
class PrimalConfiguration:
    """A full site assignment, each value in {0, ..., q-1}."""

    values: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.values)


def _resolve_per_item(spec, count: int, what: str, stream_key) -> np.ndarray:
    """Resolve a constant / explicit / seeded-uniform spec to a float array."""
    if spec is None:
        return np.zeros(count)
    if isinstance(spec, (int, float)):
        return np.full(count, float(spec))
    if isinstance(spec, Mapping):
        keys = set(spec.keys())
        if keys and all(isinstance(k, int) for k in keys):
            # explicit index -> value map; every bond (site) must be present
            missing = [i for i in range(count) if i not in spec]
            if missing:
                raise ValueError(
                    f"explicit {what} map missing entries for {missing[:5]}"
                    f"{'...' if len(missing) > 5 else ''}"
                )
            return np.array([float(spec[i]) for i in range(count)])
        if "constant" in keys:
            return np.full(count, float(spec["constant"]))
        if "per_bond" in keys or "per_site" in keys:
            values = spec.get("per_bond", spec.get("per_site"))
            arr = np.asarray(values, dtype=float)
            if arr.shape != (count,):
                raise ValueError(
                    f"explicit {what} map has {arr.size} entries, expected {count}"
                )
            return arr
        if "uniform" in keys:
            lo, hi = spec["uniform"]
            if "seed" not in spec:
                raise ValueError(f"uniform {what} spec requires a 'seed'")
            if not 0 <= lo <= hi:
                raise ValueError(f"uniform {what} range must satisfy 0 <= lo <= hi")
            ss = np.random.SeedSequence(entropy=int(spec["seed"]), spawn_key=stream_key)
            rng = np.random.default_rng(ss)
            return lo + (hi - lo) * rng.random(count)
        raise ValueError(f"unrecognized {what} spec keys: {sorted(keys)}")
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (count,):
        raise ValueError(f"explicit {what} list has {arr.size} entries, expected {count}")
    return arr


def build_torus_model(
    width: int,
    height: int,
    q: int,
    couplings: CouplingSpec,
    fields: FieldSpec = None,
) -> PottsModel:
    """Build a torus model from a coupling spec and an optional field spec.

    Accepted specs: a constant value, an explicit per-bond (per-site)
    sequence in canonical order, or ``{"uniform": [lo, hi], "seed": s}`` for
    i.i.d. uniform draws.  Randomized specs use a dedicated sub-stream of the
    given seed, so model generation is reproducible independently of any
    sampling done later with the same seed.
    """
    n = width * height
    tails, heads = torus_bonds(width, height)
    j = _resolve_per_item(couplings, 2 * n, "coupling", _COUPLING_STREAM)
    h = _resolve_per_item(fields, n, "field", _FIELD_STREAM)
    return PottsModel(
        width=width,
        height=height,
        q=q,
        couplings=j,
        fields=h,
        bond_tails=tails,
        bond_heads=heads,
    )


def _config_values(x, n: int) -> np.ndarray:
    values = x.values if isinstance(x, PrimalConfiguration) else x
    arr = np.asarray(values, dtype=np.int64)
    if arr.shape != (n,):
        raise ValueError(f"configuration has length {arr.size}, expected {n}")
    return arr


def hamiltonian(model: PottsModel, x) -> float:
    """Energy of a configuration: bond agreements and symbol-0 field terms."""
    arr = _config_values(x, model.num_sites)
    if np.any(arr < 0) or np.any(arr >= model.q):
        raise ValueError(f"configuration values must lie in [0, {model.q})")
    agree = arr[model.bond_tails] == arr[model.bond_heads]
    e = -float(model.couplings[agree].sum())
    e -= float(model.fields[arr == 0].sum())
    return e


def log_weight(model: PottsModel, x) -> float:
    """Log of the unnormalized configuration weight; equals -hamiltonian at T=1."""
    return -hamiltonian(model, x)


def model_to_dict(model: PottsModel) -> dict:
    """Canonical JSON-ready form with couplings and fields fully resolved."""
    return {
        "width": model.width,
        "height": model.height,
        "q": model.q,
        "couplings": {"per_bond": model.couplings.tolist()},
        "fields": {"per_site": model.fields.tolist()},
    }


def model_from_dict(doc: Mapping) -> PottsModel:
    for key in ("width", "height", "q", "couplings"):
        if key not in doc:
            raise ValueError(f"model document missing key '{key}'")
    return build_torus_model(
        int(doc["width"]),
        int(doc["height"]),
        int(doc["q"]),
        doc["couplings"],
        doc.get("fields"),
    )


def save_model(model: PottsModel, fp: Union[str, IO[str]]) -> None:
    doc = model_to_dict(model)
    if isinstance(fp, str):
        with open(fp, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
    else:
        json.dump(doc, fp, sort_keys=True)


def load_model(fp: Union[str, IO[str]]) -> PottsModel:
    if isinstance(fp, str):
        with open(fp) as fh:
            doc = json.load(fh)
    else:
        doc = json.load(fp)
    return model_from_dict(doc)


def model_hash(model: PottsModel) -> str:
    """sha256 over the canonical JSON form (stable across runs and platforms)."""
    blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
