"""Direct training, mixture pretraining and exact risk.

Training minimises the expected surrogate loss plus ``l2/2 * |w|^2`` on the
weight parameters (see :func:`satlab.models.l2_mask`) by constant-step
gradient descent. When ``l1_gate > 0`` every step ends with a soft-threshold of
the dictionary gates by ``step_size * l1_gate``; this is the explicit sparsity
mechanism.

Supports of at most :data:`EXACT_SUPPORT_LIMIT` points are trained on the exact
expected loss (full batch weighted by point mass). Larger supports draw a
minibatch of ``batch_size`` points per step from the seeded stream.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, rng
from .errors import DimMismatch, NonFinite
from .mixtures import DiscreteDistribution, MixtureSpec, mix, sample
from .models import (
    ArchSpec, ComposedModel, DictionaryExtractor, LinearHead, flatten_params, gate_mask,
    init_model, input_dim, l2_mask, loss_and_grad, loss_code, predict_batch, unflatten_params,
)

EXACT_SUPPORT_LIMIT = 64
GATE_THRESHOLD = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 64
    step_size: float = 0.5
    l1_gate: float = 0.01
    l2: float = 0.03
    loss: str = "logistic"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.l1_gate < 0 or self.l2 < 0:
            raise ValueError("regularisation strengths must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        loss_code(self.loss)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainedOutcome:
    model: ComposedModel
    loss_trace: list
    exact_risk: float
    surviving_gates: frozenset
    trace_steps: list = field(default_factory=list)
    risk_trace: list = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "exact_risk"])
        for t, l, r in zip(self.trace_steps, self.loss_trace, self.risk_trace):
            w.writerow([t, repr(float(l)), repr(float(r))])
        return buf.getvalue()


@dataclass
class SgdTrace:
    params: np.ndarray
    steps: list
    losses: list
    snapshots: list
    monitor: list


def exact_zero_one_risk(model: ComposedModel, dist: DiscreteDistribution) -> float:
    """Mass of the support points the model misclassifies (sign(0) = -1)."""
    if dist.dim != input_dim(model.extractor):
        raise DimMismatch(f"distribution dim {dist.dim} != model input dim {input_dim(model.extractor)}")
    wrong = predict_batch(model, dist.X) != dist.y
    return float(dist.mass @ wrong)


def surviving_gates(model: ComposedModel, threshold=GATE_THRESHOLD) -> frozenset:
    ex = model.extractor
    if not isinstance(ex, DictionaryExtractor):
        return frozenset()
    return frozenset(int(j) for j in np.nonzero(np.abs(ex.gates) > threshold)[0])


def sgd_run(objective, params0, cfg: TrainConfig, gates=None, l2=None, monitor=None) -> SgdTrace:
    """Constant-step proximal gradient descent.

    ``objective(params, step)`` returns ``(loss, grad)``. ``gates`` and ``l2``
    are boolean masks over the parameter vector selecting where the L1 prox and
    the L2 penalty apply. Snapshots and losses are kept at every
    ``cfg.log_every`` steps and at the final step.
    """
    p = np.array(params0, dtype=float)
    gates = np.zeros(len(p), bool) if gates is None else np.asarray(gates, bool)
    l2 = np.zeros(len(p), bool) if l2 is None else np.asarray(l2, bool)
    lr = cfg.step_size
    thresh = lr * cfg.l1_gate
    out = SgdTrace(p, [], [], [], [])
    for t in range(cfg.steps + 1):
        loss, grad = objective(p, t)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NonFinite(t)
        if t == cfg.steps or t % cfg.log_every == 0:
            out.steps.append(t)
            out.losses.append(float(loss))
            out.snapshots.append(p.copy())
            if monitor is not None:
                out.monitor.append(monitor(p))
        if t == cfg.steps:
            break
        g = grad + cfg.l2 * np.where(l2, p, 0.0)
        p = p - lr * g
        if thresh > 0 and gates.any():
            pg = p[gates]
            p[gates] = np.sign(pg) * np.maximum(np.abs(pg) - thresh, 0.0)
    out.params = p
    return out


def _fit(model: ComposedModel, dist: DiscreteDistribution, cfg: TrainConfig) -> TrainedOutcome:
    exact = len(dist) <= EXACT_SUPPORT_LIMIT
    code = loss_code(cfg.loss)
    if exact and isinstance(model.extractor, DictionaryExtractor):
        g, gm, b, ts, tl, tr, bad = kernels.dict_descent(
            dist.X, dist.y, dist.mass, model.extractor.gates, model.head.gamma, model.head.bias,
            model.use_bias, cfg.steps, cfg.step_size, cfg.l1_gate, cfg.l2, code, cfg.log_every,
        )
        if bad >= 0:
            raise NonFinite(bad)
        trained = ComposedModel(DictionaryExtractor(g), LinearHead(gm, b), model.use_bias)
        return TrainedOutcome(
            trained, tl, exact_zero_one_risk(trained, dist), surviving_gates(trained), ts, tr
        )

    if exact:
        def objective(p, t):
            return loss_and_grad(unflatten_params(model, p), dist.X, dist.y, dist.mass, cfg.loss)
    else:
        def objective(p, t):
            batch = sample(dist, cfg.batch_size, rng.derive_seed(cfg.seed, 2, t))
            w = np.full(len(batch), 1.0 / len(batch))
            return loss_and_grad(unflatten_params(model, p), batch.X, batch.y, w, cfg.loss)

    trace = sgd_run(
        objective, flatten_params(model), cfg, gate_mask(model), l2_mask(model),
        monitor=lambda p: exact_zero_one_risk(unflatten_params(model, p), dist),
    )
    trained = unflatten_params(model, trace.params)
    return TrainedOutcome(
        trained, trace.losses, exact_zero_one_risk(trained, dist), surviving_gates(trained),
        trace.steps, trace.monitor,
    )


def direct_train(target: DiscreteDistribution, arch: ArchSpec, cfg: TrainConfig) -> TrainedOutcome:
    """Train extractor and head together on the target distribution."""
    if target.dim != arch.input_dim:
        raise DimMismatch(f"target dim {target.dim} != arch input dim {arch.input_dim}")
    return _fit(init_model(arch, cfg.seed), target, cfg)


def pretrain(mixture: MixtureSpec, arch: ArchSpec, cfg: TrainConfig) -> TrainedOutcome:
    """Train on the merged mixture distribution."""
    return direct_train(mix(mixture), arch, cfg)


def train_from(model: ComposedModel, dist: DiscreteDistribution, cfg: TrainConfig) -> TrainedOutcome:
    """Continue training an existing model."""
    if dist.dim != input_dim(model.extractor):
        raise DimMismatch(f"distribution dim {dist.dim} != model input dim")
    return _fit(model, dist, cfg)
