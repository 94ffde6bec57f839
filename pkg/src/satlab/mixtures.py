"""Finite labeled distributions, mixtures, the four-component counterexample
and seeded sampling.

Feature coordinates double as the candidate features: on the counterexample
support, coordinate 0 is phi_1 and coordinate 1 is phi_2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from . import rng
from .errors import DimMismatch, InvalidK, LabelConflict

MASS_TOL = 1e-12
SCHEMA_VERSION = 1

# The artifact's canonical skewed mixture: unique least-weighted point (-1, 0).
CANONICAL_LAMBDA = (0.5, 0.2, 0.2, 0.1)


@dataclass(frozen=True)
class LabeledPoint:
    features: tuple
    label: int
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label!r}")
        if not (0.0 < self.mass <= 1.0 + MASS_TOL):
            raise ValueError(f"mass must lie in (0, 1], got {self.mass!r}")


@dataclass(frozen=True)
class DiscreteDistribution:
    points: tuple
    dim: int

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("distribution needs at least one point")
        seen = set()
        for p in pts:
            if len(p.features) != self.dim:
                raise DimMismatch(f"point {p.features} has dim {len(p.features)}, expected {self.dim}")
            if p.features in seen:
                raise ValueError(f"duplicate support point {p.features}; merge it first")
            seen.add(p.features)
        total = sum(p.mass for p in pts)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1")

    @classmethod
    def from_arrays(cls, X, y, mass):
        X = np.asarray(X, dtype=float)
        pts = [LabeledPoint(tuple(x), int(l), float(m)) for x, l, m in zip(X, y, mass)]
        return cls(tuple(pts), X.shape[1])

    def __len__(self):
        return len(self.points)

    @cached_property
    def X(self) -> np.ndarray:
        a = np.array([p.features for p in self.points], dtype=float)
        a.setflags(write=False)
        return a

    @cached_property
    def y(self) -> np.ndarray:
        a = np.array([p.label for p in self.points], dtype=float)
        a.setflags(write=False)
        return a

    @cached_property
    def mass(self) -> np.ndarray:
        a = np.array([p.mass for p in self.points], dtype=float)
        a.setflags(write=False)
        return a

    def mass_at(self, features) -> float:
        key = tuple(float(v) for v in features)
        for p in self.points:
            if p.features == key:
                return p.mass
        return 0.0

    def index_of(self, features) -> int:
        key = tuple(float(v) for v in features)
        for i, p in enumerate(self.points):
            if p.features == key:
                return i
        raise KeyError(key)


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple
    weights: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        if not comps:
            raise ValueError("mixture needs at least one component")
        if len(w) != len(comps):
            raise ValueError(f"{len(w)} weights for {len(comps)} components")
        if any(v <= 0 for v in w):
            raise ValueError("mixture weights must be strictly positive")
        if abs(sum(w) - 1.0) > MASS_TOL:
            raise ValueError(f"mixture weights sum to {sum(w)!r}, not 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DimMismatch(f"components disagree on dim: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass(frozen=True)
class Dataset:
    """Finite sample; row ``i`` is (X[i], y[i], component_id[i])."""

    X: np.ndarray
    y: np.ndarray
    component_id: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if len(self.y) == 0:
            raise ValueError("dataset must be nonempty")

    def __len__(self):
        return len(self.y)

    @property
    def examples(self):
        return [(tuple(x), int(l), int(c)) for x, l, c in zip(self.X, self.y, self.component_id)]

    def to_bytes(self) -> bytes:
        return self.X.tobytes() + self.y.tobytes() + self.component_id.tobytes()


Distribution = Union[DiscreteDistribution, MixtureSpec]


def _dist(entries, dim):
    return DiscreteDistribution(tuple(LabeledPoint(x, y, m) for x, y, m in entries), dim)


def counterexample_components() -> list:
    """The four three-point distributions P1..P4 on the (phi_1, phi_2) plane."""
    q = 0.25
    return [
        _dist([((1, 0), 1, 0.5), ((0, 1), -1, q), ((0, -1), -1, q)], 2),
        _dist([((-1, 0), 1, 0.5), ((0, 1), -1, q), ((0, -1), -1, q)], 2),
        _dist([((0, 1), -1, 0.5), ((1, 0), 1, q), ((-1, 0), 1, q)], 2),
        _dist([((0, -1), -1, 0.5), ((1, 0), 1, q), ((-1, 0), 1, q)], 2),
    ]


def canonical_mixture() -> MixtureSpec:
    return MixtureSpec(tuple(counterexample_components()), CANONICAL_LAMBDA)


def mix(spec: MixtureSpec) -> DiscreteDistribution:
    """Merge the lambda-weighted components into one distribution.

    Support order is first appearance, scanning components in order.
    """
    masses: dict = {}
    labels: dict = {}
    for lam, comp in zip(spec.weights, spec.components):
        if comp.dim != spec.dim:
            raise DimMismatch(f"component dim {comp.dim} != {spec.dim}")
        for p in comp.points:
            prev = labels.setdefault(p.features, p.label)
            if prev != p.label:
                raise LabelConflict(f"point {p.features} labelled {prev} and {p.label}")
            masses[p.features] = masses.get(p.features, 0.0) + lam * p.mass
    pts = tuple(LabeledPoint(k, labels[k], m) for k, m in masses.items())
    # float rounding can leave the total a few ulps off 1
    total = sum(p.mass for p in pts)
    if abs(total - 1.0) > MASS_TOL:
        pts = tuple(LabeledPoint(p.features, p.label, p.mass / total) for p in pts)
    return DiscreteDistribution(pts, spec.dim)


def embed_pair(dist: DiscreteDistribution, K: int, pair: int) -> DiscreteDistribution:
    """Place a 2-d distribution on coordinates (2*pair, 2*pair + 1) of R^K."""
    pts = []
    for p in dist.points:
        x = [0.0] * K
        x[2 * pair], x[2 * pair + 1] = p.features
        pts.append(LabeledPoint(tuple(x), p.label, p.mass))
    return DiscreteDistribution(tuple(pts), K)


def gen_counterexample_family(K: int) -> list:
    """2K components: the counterexample replicated on each coordinate pair.

    Components ``4m .. 4m+3`` live on coordinates ``(2m, 2m+1)``.
    """
    if not isinstance(K, (int, np.integer)) or K < 2 or K % 2:
        raise InvalidK(f"K must be an even integer >= 2, got {K!r}")
    base = counterexample_components()
    return [embed_pair(c, int(K), m) for m in range(K // 2) for c in base]


def pair_of_component(index: int) -> int:
    return index // 4


def sample(dist: Distribution, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. draws by inverse CDF on the SplitMix64 stream.

    For a mixture, draw ``i`` uses uniform ``i`` of stream ``derive_seed(seed, 0)``
    to pick the component by lambda, then uniform ``i`` of ``derive_seed(seed, 1)``
    to pick the point inside it. component_id is 0-based.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(dist, DiscreteDistribution):
        u = rng.uniform(rng.derive_seed(seed, 1), n)
        idx = _inverse_cdf(dist.mass, u)
        comp = np.zeros(n, dtype=np.int64)
        return Dataset(dist.X[idx].copy(), dist.y[idx].copy(), comp, seed)

    comp = _inverse_cdf(np.asarray(dist.weights), rng.uniform(rng.derive_seed(seed, 0), n))
    u = rng.uniform(rng.derive_seed(seed, 1), n)
    X = np.empty((n, dist.dim))
    y = np.empty(n)
    for j, c in enumerate(dist.components):
        sel = np.nonzero(comp == j)[0]
        if len(sel):
            idx = _inverse_cdf(c.mass, u[sel])
            X[sel] = c.X[idx]
            y[sel] = c.y[idx]
    return Dataset(X, y, comp.astype(np.int64), seed)


def _inverse_cdf(p, u):
    cdf = np.cumsum(p)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(p) - 1)


# -- serialisation ---------------------------------------------------------

def to_json_obj(obj: Distribution) -> dict:
    spec = obj if isinstance(obj, MixtureSpec) else MixtureSpec((obj,), (1.0,))
    return {
        "version": SCHEMA_VERSION,
        "dim": spec.dim,
        "components": [
            {"points": [{"x": list(p.features), "y": p.label, "mass": p.mass} for p in c.points]}
            for c in spec.components
        ],
        "weights": list(spec.weights),
    }


def from_json_obj(doc: dict) -> MixtureSpec:
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported distribution schema version {doc.get('version')!r}")
    dim = int(doc["dim"])
    comps = tuple(
        DiscreteDistribution(
            tuple(LabeledPoint(tuple(p["x"]), int(p["y"]), float(p["mass"])) for p in c["points"]), dim
        )
        for c in doc["components"]
    )
    return MixtureSpec(comps, tuple(doc["weights"]))


def dumps(obj: Distribution) -> str:
    return json.dumps(to_json_obj(obj), indent=2)


def loads(text: str) -> MixtureSpec:
    return from_json_obj(json.loads(text))
