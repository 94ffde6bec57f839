"""Linear probing, NTK features and NTK-linearised fine-tuning.

Probes fit the exact expected logistic loss by Newton's method. With
``polish=True`` (the default) and a support of at most ``oracle.MAX_SUPPORT``
points, a surrogate head whose zero-one risk is above the exact optimum over
the same frozen features is replaced by the oracle's optimal affine head on
those features; the surrogate head stays available on the result. The polish
matters on symmetric supports where the logistic optimum is the zero head.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import oracle
from .errors import DimMismatch, EmptyRestriction, LengthMismatch, NonFinite
from .mixtures import DiscreteDistribution
from .models import (
    ComposedModel, LinearHead, flatten_params, features_batch, input_dim, output_dim,
    score_batch, score_jacobian, sign, unflatten_params,
)
from .training import TrainedOutcome, exact_zero_one_risk

GRAD_TOL = 1e-8


@dataclass
class LogisticFit:
    coef: np.ndarray
    loss: float
    grad_norm: float
    iterations: int


@dataclass
class ProbeResult:
    head: LinearHead
    exact_risk: float
    feature_subset: Optional[frozenset] = None
    surrogate_loss: float = float("nan")
    grad_norm: float = float("nan")
    surrogate_head: Optional[LinearHead] = None
    surrogate_risk: float = float("nan")
    polished: bool = False


def _polish(F, target, coef, risk):
    """Oracle head on feature rows ``F`` when it beats the surrogate's risk.

    Returns (weights, bias, risk) or None.
    """
    if len(target) > oracle.MAX_SUPPORT:
        return None
    Xs, pm, nm = oracle.project_rows(F, target.y, target.mass)
    best, w, b, _ = oracle._optimal_on_groups(Xs, pm, nm)
    if risk <= best + oracle.TIE_TOL:
        return None
    s = F @ w + b
    return np.asarray(w, float), float(b), float(target.mass @ (sign(s) != target.y))


def _logistic(z):
    return np.logaddexp(0.0, -z)


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


def fit_logistic(A, y, w, offset=None, ridge=0.0, tol=GRAD_TOL, max_iter=500) -> LogisticFit:
    """Damped Newton on ``sum_i w_i log(1 + exp(-y_i (offset_i + A_i c))) + ridge/2 |c|^2``.

    Singular Hessians (dead features, rank-deficient NTK blocks) are handled
    with a minimum-norm least-squares solve. Stops when the gradient norm drops
    below ``tol`` or the loss stops decreasing.
    """
    A = np.asarray(A, float)
    n, p = A.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, float)
    c = np.zeros(p)

    def value(c):
        z = y * (off + A @ c)
        return float(w @ _logistic(z)) + 0.5 * ridge * float(c @ c), z

    f, z = value(c)
    g = np.zeros(p)
    it = 0
    for it in range(1, max_iter + 1):
        s = _sigmoid(-z)  # = sigma(-y f)
        g = A.T @ (w * (-y * s)) + ridge * c
        gn = float(np.linalg.norm(g))
        if gn < tol:
            break
        h = w * s * (1.0 - s)
        H = (A * h[:, None]).T @ A + ridge * np.eye(p)
        step = np.linalg.lstsq(H, -g, rcond=None)[0]
        if not np.all(np.isfinite(step)) or g @ step >= 0:
            step = -g
        t = 1.0
        while True:
            f_new, z_new = value(c + t * step)
            if f_new <= f + 1e-4 * t * float(g @ step) or t < 1e-12:
                break
            t *= 0.5
        if f_new >= f and t < 1e-12:
            break
        c, f, z = c + t * step, f_new, z_new
    s = _sigmoid(-z)
    g = A.T @ (w * (-y * s)) + ridge * c
    return LogisticFit(c, f, float(np.linalg.norm(g)), it)


def _check_restrict(restrict, D):
    if restrict is None:
        return None
    r = sorted(set(int(j) for j in restrict))
    if not r:
        raise EmptyRestriction("restrict must name at least one feature")
    if r[0] < 0 or r[-1] >= D:
        raise DimMismatch(f"restrict {r} outside feature indices 0..{D - 1}")
    return r


def linear_probe(extractor, target: DiscreteDistribution, restrict=None, ridge=0.0,
                 polish=True) -> ProbeResult:
    """Fit only a linear head (plus bias) on frozen features of ``extractor``."""
    if target.dim != input_dim(extractor):
        raise DimMismatch(f"target dim {target.dim} != extractor input dim {input_dim(extractor)}")
    D = output_dim(extractor)
    r = _check_restrict(restrict, D)
    F = features_batch(extractor, target.X)
    cols = list(range(D)) if r is None else r
    A = np.hstack([F[:, cols], np.ones((len(F), 1))])
    fit = fit_logistic(A, target.y, target.mass, ridge=ridge)
    gamma_full = np.zeros(D)
    gamma_full[cols] = fit.coef[:-1]
    risk = exact_zero_one_risk(ComposedModel(extractor, LinearHead(gamma_full, fit.coef[-1])), target)
    sur = LinearHead(fit.coef[:-1], fit.coef[-1])
    res = ProbeResult(sur, risk, None if r is None else frozenset(r), fit.loss, fit.grad_norm, sur, risk)
    better = _polish(F[:, cols], target, fit.coef, risk) if polish else None
    if better is not None:
        res.head, res.exact_risk, res.polished = LinearHead(better[0], better[1]), better[2], True
    return res


@dataclass
class NtkFeatures:
    """Tangent features of a model at its current parameters.

    The linearised predictor is ``base_score(x) * gamma0 + jacobian(x) . delta``
    with ``gamma0 = 1``.
    """

    model: ComposedModel
    base_params: np.ndarray

    def jacobian(self, X) -> np.ndarray:
        return score_jacobian(self.model, X)

    def base_score(self, X) -> np.ndarray:
        return score_batch(self.model, X)

    def linearized_score(self, X, delta) -> np.ndarray:
        return self.base_score(X) + self.jacobian(X) @ np.asarray(delta, float)


def ntk_features(model: ComposedModel) -> NtkFeatures:
    w = flatten_params(model)
    if not np.all(np.isfinite(w)):
        raise NonFinite(0, "parameter")
    return NtkFeatures(model, w)


def ntk_probe(model: ComposedModel, target: DiscreteDistribution, restrict=None, fit_gamma0=False,
              ridge=0.0, polish=True) -> ProbeResult:
    """Probe on NTK features, keeping the base score with coefficient 1.

    ``restrict`` limits the fitted tangent coordinates (partial fine-tuning);
    ``fit_gamma0`` also fits the base-score coefficient instead of fixing it.
    The returned head holds the fitted tangent coefficients plus, as its
    bias, a constant added to the linearised score. A polished head is the
    oracle's affine rule on the tangent features; that rule equals
    ``base + J . delta`` for some delta whenever the model has a bias, since the
    base score lies in the span of the head and bias tangents.
    """
    if target.dim != input_dim(model.extractor):
        raise DimMismatch(f"target dim {target.dim} != model input dim")
    nf = ntk_features(model)
    J = nf.jacobian(target.X)
    base = nf.base_score(target.X)
    r = _check_restrict(restrict, J.shape[1])
    if r is not None:
        J = J[:, r]
    if fit_gamma0:
        A, off = np.hstack([J, base[:, None]]), None
    else:
        A, off = J, base
    fit = fit_logistic(A, target.y, target.mass, offset=off, ridge=ridge)
    s = A @ fit.coef + (0.0 if off is None else off)
    risk = float(target.mass @ (sign(s) != target.y))
    sur = LinearHead(fit.coef, 0.0)
    res = ProbeResult(sur, risk, None if r is None else frozenset(r), fit.loss, fit.grad_norm, sur, risk)
    if polish:
        feats = np.hstack([J, base[:, None]])
        better = _polish(feats, target, fit.coef, risk)
        if better is not None:
            res.head, res.exact_risk, res.polished = LinearHead(better[0], better[1]), better[2], True
    return res


def full_finetune(model: ComposedModel, target: DiscreteDistribution, steps=50, ridge=0.0) -> ProbeResult:
    """Fine-tune every parameter by Gauss-Newton on the exact logistic loss.

    Each outer step re-linearises at the current parameters and takes the
    Newton solution of the linearised problem; for models linear in their
    parameters one step already solves the full problem.
    """
    cur = model
    total = np.zeros(len(flatten_params(model)))
    fit = None
    for _ in range(steps):
        J = score_jacobian(cur, target.X)
        fit = fit_logistic(J, target.y, target.mass, offset=score_batch(cur, target.X), ridge=ridge)
        if np.linalg.norm(fit.coef) < 1e-12:
            break
        total = total + fit.coef
        cur = unflatten_params(cur, flatten_params(cur) + fit.coef)
    risk = exact_zero_one_risk(cur, target)
    return ProbeResult(LinearHead(total, 0.0), risk, None, fit.loss, fit.grad_norm)


def linearization_error(model: ComposedModel, delta, probe_points) -> float:
    """max_x |f(x; w + delta) - f(x; w) - J(x) . delta| over ``probe_points``."""
    delta = np.asarray(delta, float).ravel()
    w = flatten_params(model)
    if len(delta) != len(w):
        raise LengthMismatch(f"delta has {len(delta)} entries, model has {len(w)} parameters")
    X = np.asarray(probe_points, float)
    if X.ndim == 1:
        X = X[None, :]
    moved = unflatten_params(model, w + delta)
    lin = score_batch(model, X) + score_jacobian(model, X) @ delta
    return float(np.max(np.abs(score_batch(moved, X) - lin)))


def transfer_gap(direct: TrainedOutcome, probe: ProbeResult) -> float:
    """Probe risk minus direct risk; positive means transfer does worse."""
    return probe.exact_risk - direct.exact_risk


# -- gap tables ------------------------------------------------------------

GAP_COLUMNS = ("target_id", "direct_risk", "probe_risk", "gap", "feature_subset")


@dataclass
class GapRow:
    target_id: str
    direct_risk: float
    probe_risk: float
    gap: float
    feature_subset: Optional[frozenset]

    def as_list(self):
        fs = "" if self.feature_subset is None else " ".join(str(j) for j in sorted(self.feature_subset))
        return [self.target_id, repr(self.direct_risk), repr(self.probe_risk), repr(self.gap), fs]


def gap_row(target_id, direct: TrainedOutcome, probe: ProbeResult) -> GapRow:
    return GapRow(str(target_id), direct.exact_risk, probe.exact_risk, transfer_gap(direct, probe),
                  probe.feature_subset)


def gap_table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAP_COLUMNS)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()


def gap_table_json(rows) -> str:
    return json.dumps(
        [
            {
                "target_id": r.target_id, "direct_risk": r.direct_risk, "probe_risk": r.probe_risk,
                "gap": r.gap,
                "feature_subset": None if r.feature_subset is None else sorted(r.feature_subset),
            }
            for r in rows
        ],
        indent=2,
    )
