"""Exact ground truth on small finite supports.

The optimal affine classifier is found by walking candidate sets of
misclassified points in order of increasing mass and asking an LP whether the
remaining labelling is strictly linearly separable. The first feasible set is
optimal; every set of the same mass (within ``TIE_TOL``) is checked so ties go
to the lexicographically smallest index set.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import rng
from .errors import AllZeroCovs, DegenerateVariance, DimMismatch, EmptyRestriction, SupportTooLarge
from .mixtures import DiscreteDistribution, MixtureSpec, mix, pair_of_component
from .models import features_batch, input_dim

MAX_SUPPORT = 20
TIE_TOL = 1e-12
CANCEL_TOL = 1e-9


@dataclass
class OptimalClassifier:
    weights: np.ndarray
    bias: float
    risk: float
    ignored_points: frozenset

    def predict(self, X):
        return np.where(np.asarray(X, float) @ self.weights + self.bias > 0, 1.0, -1.0)


@dataclass
class CovarianceReport:
    component_covs: np.ndarray
    mixture_cov: float
    between_term: float
    weights: np.ndarray = field(default=None)

    @property
    def weighted_sum(self) -> float:
        """The cancellation-equation value: sum of lambda_j * cov_j."""
        return float(self.weights @ self.component_covs)

    @property
    def identity_residual(self) -> float:
        """|mixture_cov - (sum lambda_j cov_j + between_term)|; zero up to rounding."""
        return abs(self.mixture_cov - self.weighted_sum - self.between_term)

    @property
    def between_free_deviation(self) -> float:
        """How far the mixture covariance is from the weighted sum alone."""
        return abs(self.mixture_cov - self.weighted_sum)

    def to_dict(self):
        return {
            "component_covs": [float(c) for c in self.component_covs],
            "weights": [float(w) for w in self.weights],
            "mixture_cov": self.mixture_cov,
            "weighted_sum": self.weighted_sum,
            "between_term": self.between_term,
            "identity_residual": self.identity_residual,
            "between_free_deviation": self.between_free_deviation,
            "between_free_identity_holds": self.between_free_deviation <= TIE_TOL,
        }


@dataclass
class CancellationProbe:
    hit_fraction: float
    hits: int
    trials: int
    constructed_lambda: Optional[np.ndarray]
    constructed_sum: Optional[float]
    min_abs_sum: float


def _separator(X, s):
    """Affine (w, b) with s_i (w.x_i + b) >= 1 for all i, or None."""
    n, d = X.shape
    A = -s[:, None] * np.hstack([X, np.ones((n, 1))])
    res = linprog(np.zeros(d + 1), A_ub=A, b_ub=-np.ones(n), bounds=[(None, None)] * (d + 1),
                  method="highs")
    if res.status != 0:
        return None
    w, b = res.x[:d], res.x[d]
    if np.all(s * (X @ w + b) > 0):
        return w, float(b)
    return None


def _subsets_by_cost(costs):
    """All subsets of range(len(costs)) in nondecreasing total cost."""
    order = sorted(range(len(costs)), key=lambda i: (costs[i], i))
    yield 0.0, ()
    if not order:
        return
    heap = [(costs[order[0]], (0,))]
    while heap:
        c, pos = heapq.heappop(heap)
        yield c, tuple(sorted(order[p] for p in pos))
        k = pos[-1]
        if k + 1 < len(order):
            nxt = order[k + 1]
            heapq.heappush(heap, (c + costs[nxt], pos + (k + 1,)))
            heapq.heappush(heap, (c - costs[order[k]] + costs[nxt], pos[:-1] + (k + 1,)))


def _optimal_on_groups(X, pos_mass, neg_mass):
    """Minimum-risk affine labelling of weighted points that may carry both labels.

    Returns (risk, w, b, flipped) where ``flipped`` are the groups labelled
    against their majority.
    """
    base = np.where(pos_mass > neg_mass, 1.0, -1.0)
    base_risk = float(np.minimum(pos_mass, neg_mass).sum())
    costs = list(np.abs(pos_mass - neg_mass))
    best = None
    for cost, flip in _subsets_by_cost(costs):
        if best is not None and cost > best[0] + TIE_TOL:
            break
        s = base.copy()
        s[list(flip)] *= -1
        sep = _separator(X, s)
        if sep is None:
            continue
        if best is None or (cost < best[0] - TIE_TOL) or flip < best[3]:
            best = (cost, sep[0], sep[1], flip)
    cost, w, b, flip = best
    return base_risk + cost, w, b, flip


def optimal_affine_classifier(dist: DiscreteDistribution) -> OptimalClassifier:
    """Risk-minimising affine classifier over the full feature space."""
    if len(dist) > MAX_SUPPORT:
        raise SupportTooLarge(f"support has {len(dist)} points; the brute-force limit is {MAX_SUPPORT}")
    pos = np.where(dist.y > 0, dist.mass, 0.0)
    neg = np.where(dist.y < 0, dist.mass, 0.0)
    _, w, b, flip = _optimal_on_groups(dist.X, pos, neg)
    clf = OptimalClassifier(np.asarray(w), b, 0.0, frozenset(flip))
    clf.risk = float(dist.mass @ (clf.predict(dist.X) != dist.y))
    return clf


def project(dist: DiscreteDistribution, subset: Sequence[int]):
    """Group the support by its coordinates in ``subset``: (Xs, pos_mass, neg_mass)."""
    return project_rows(dist.X[:, list(subset)], dist.y, dist.mass)


def optimal_risk_in_span(dist: DiscreteDistribution, subset) -> float:
    """Least zero-one risk of affine rules reading only the listed coordinates."""
    subset = sorted(set(int(j) for j in subset))
    if not subset:
        raise EmptyRestriction("feature subset must be nonempty")
    if len(dist) > MAX_SUPPORT:
        raise SupportTooLarge(f"support has {len(dist)} points; the brute-force limit is {MAX_SUPPORT}")
    if subset[0] < 0 or subset[-1] >= dist.dim:
        raise DimMismatch(f"subset {subset} outside 0..{dist.dim - 1}")
    Xs, pm, nm = project(dist, subset)
    return _optimal_on_groups(Xs, pm, nm)[0]


def project_rows(F, y, mass):
    """Group feature rows by value: (distinct rows, positive mass, negative mass)."""
    F = np.asarray(F, float)
    keys: dict = {}
    for f, l, m in zip(F, y, mass):
        k = tuple(f)
        p, n = keys.get(k, (0.0, 0.0))
        keys[k] = (p + m, n) if l > 0 else (p, n + m)
    Xs = np.array(list(keys), dtype=float).reshape(len(keys), F.shape[1])
    return Xs, np.array([v[0] for v in keys.values()]), np.array([v[1] for v in keys.values()])


def optimal_risk_on_features(F, y, mass) -> float:
    """Least affine zero-one risk using arbitrary feature rows ``F`` (one per point)."""
    Xs, pm, nm = project_rows(F, y, mass)
    if len(Xs) > MAX_SUPPORT:
        raise SupportTooLarge(f"{len(Xs)} distinct feature vectors")
    return _optimal_on_groups(Xs, pm, nm)[0]


# -- covariance ------------------------------------------------------------

def _phi_values(phi, X):
    if isinstance(phi, (int, np.integer)):
        if not 0 <= phi < X.shape[1]:
            raise DimMismatch(f"feature index {phi} outside 0..{X.shape[1] - 1}")
        return X[:, int(phi)]
    v = np.asarray(phi, dtype=float).ravel()
    if len(v) != X.shape[1]:
        raise DimMismatch(f"functional has length {len(v)}, support dim is {X.shape[1]}")
    return X @ v


def _moments(phi, dist):
    f = _phi_values(phi, dist.X)
    m = dist.mass
    mu_f, mu_y = float(m @ f), float(m @ dist.y)
    return float(m @ (f * dist.y)) - mu_f * mu_y, mu_f, mu_y


def covariance(phi, dist: DiscreteDistribution) -> float:
    return _moments(phi, dist)[0]


def covariance_report(phi, mixture: MixtureSpec) -> CovarianceReport:
    """Exact Cov(Y, phi) per component and for the merged mixture.

    ``phi`` is a coordinate index or a linear functional (vector).
    """
    lam = np.asarray(mixture.weights)
    stats = np.array([_moments(phi, c) for c in mixture.components])
    covs, mu_f, mu_y = stats[:, 0], stats[:, 1], stats[:, 2]
    mix_cov, mix_f, mix_y = _moments(phi, mix(mixture))
    between = float(lam @ ((mu_f - mix_f) * (mu_y - mix_y)))
    return CovarianceReport(covs, mix_cov, between, lam)


def cancellation_lambda(component_covs, zero_share=0.2) -> Optional[np.ndarray]:
    """A strictly positive lambda on the hyperplane sum lambda_j cov_j = 0.

    Positive-cov components share weight alpha each, negative ones beta each
    with alpha * S+ = beta * S-; zero-cov components split ``zero_share``.
    Returns None when all nonzero covariances share one sign.
    """
    c = np.asarray(component_covs, dtype=float)
    if np.any(c != 0):
        c = c / np.max(np.abs(c))  # the hyperplane is scale-free; avoids overflow on tiny covs
    P, N, Z = c > 0, c < 0, c == 0
    if not P.any() or not N.any():
        return None
    sp, sn = c[P].sum(), -c[N].sum()
    zt = zero_share if Z.any() else 0.0
    alpha = (1.0 - zt) / (P.sum() + N.sum() * sp / sn)
    beta = alpha * sp / sn
    lam = np.where(P, alpha, np.where(N, beta, zt / max(Z.sum(), 1)))
    return lam / lam.sum()


def cancellation_set_probe(component_covs, trials: int, seed: int) -> CancellationProbe:
    """Fraction of uniform simplex draws landing on the cancellation set."""
    c = np.asarray(component_covs, dtype=float)
    if not np.any(c != 0):
        raise AllZeroCovs("at least one component covariance must be nonzero")
    lam = rng.simplex(seed, trials, len(c))
    sums = np.abs(lam @ c)
    hits = int(np.sum(sums < CANCEL_TOL))
    cl = cancellation_lambda(c)
    return CancellationProbe(
        hits / trials, hits, trials, cl, None if cl is None else float(cl @ c), float(sums.min()),
    )


def mixture_cov_sweep(phi, components, trials: int, seed: int):
    """Exact mixture covariance of ``phi`` at uniformly drawn lambdas.

    Returns (lambdas, reports).
    """
    lams = rng.simplex(seed, trials, len(components))
    reports = []
    for lam in lams:
        lam = np.maximum(lam, np.finfo(float).tiny)
        lam = lam / lam.sum()
        reports.append(covariance_report(phi, MixtureSpec(tuple(components), tuple(lam))))
    return lams, reports


# -- feature recovery ------------------------------------------------------

def _latent_values(latent, X):
    if callable(latent):
        return np.array([float(latent(x)) for x in X])
    return _phi_values(latent, X)


def feature_recovery_probe(extractor, latent_targets, eval_dist) -> list:
    """Weighted R^2 of the best affine reconstruction of each latent from features.

    ``eval_dist`` is a DiscreteDistribution (mass-weighted) or a Dataset
    (uniform weights). Latents are coordinate indices, linear functionals or
    callables on a single input. R^2 is clamped to [0, 1].
    """
    if isinstance(eval_dist, DiscreteDistribution):
        X, w = eval_dist.X, eval_dist.mass
    else:
        X = np.asarray(eval_dist.X, float)
        w = np.full(len(X), 1.0 / len(X))
    if X.shape[1] != input_dim(extractor):
        raise DimMismatch(f"eval data dim {X.shape[1]} != extractor input dim {input_dim(extractor)}")
    F = features_batch(extractor, X)
    A = np.hstack([F, np.ones((len(X), 1))]) * np.sqrt(w)[:, None]
    out = []
    for latent in latent_targets:
        t = _latent_values(latent, X)
        mu = float(w @ t)
        sst = float(w @ (t - mu) ** 2)
        if sst <= 1e-15:
            raise DegenerateVariance(f"latent {latent!r} is constant on the evaluation support")
        coef, *_ = np.linalg.lstsq(A, t * np.sqrt(w), rcond=None)
        resid = t * np.sqrt(w) - A @ coef
        r2 = 1.0 - float(resid @ resid) / sst
        out.append(min(1.0, max(0.0, r2)))
    return out


# -- sweeps ----------------------------------------------------------------

def sparse_feature(dist: DiscreteDistribution) -> Optional[int]:
    """The single coordinate an optimal sparse classifier reads, if one suffices.

    Returns the coordinate whose one-feature optimum matches the unrestricted
    optimum, preferring the lowest index; None if no single coordinate does.
    """
    best = optimal_affine_classifier(dist).risk
    for j in range(dist.dim):
        if optimal_risk_in_span(dist, [j]) <= best + TIE_TOL:
            return j
    return None


def pair_local_mixture(components, weights, pair: int) -> MixtureSpec:
    """The renormalised sub-mixture of the four components hosted on ``pair``."""
    idx = [i for i in range(len(components)) if pair_of_component(i) == pair]
    lam = np.array([weights[i] for i in idx], float)
    return MixtureSpec(tuple(components[i] for i in idx), tuple(lam / lam.sum()))


def minority_components(components, weights) -> list:
    """Components whose needed feature loses the pair-local sparse selection.

    Inside a pair hosting the counterexample, components 0 and 1 are solved by
    the pair's first coordinate and components 2 and 3 by its second.
    """
    K = components[0].dim
    out = []
    for m in range(K // 2):
        sub = pair_local_mixture(components, weights, m)
        chosen = sparse_feature(mix(sub))
        local = 2 * m if chosen == 2 * m else 2 * m + 1
        for k in range(4):
            needs = 2 * m if k < 2 else 2 * m + 1
            if needs != local:
                out.append(4 * m + k)
    return out


def lambda_sweep_rows(components, lambdas):
    """(lambda..., oracle_risk, surviving_feature) per lambda."""
    rows = []
    for lam in lambdas:
        d = mix(MixtureSpec(tuple(components), tuple(lam)))
        rows.append((*[float(v) for v in lam], optimal_affine_classifier(d).risk, sparse_feature(d)))
    return rows
