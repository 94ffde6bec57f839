"""Feature extractor + linear head models and their gradients.

A :class:`ComposedModel` scores an input as ``head.gamma . features(x) + head.bias``.

Flat parameter layout (used by checkpoints, NTK features and the optimiser):

* extractor parameters first
    - ``IdentityExtractor``: none
    - ``DictionaryExtractor``: the gates, one per input coordinate
    - ``MlpExtractor``: for each layer, ``W`` row-major with shape (out, in),
      then ``b`` of length out
    - ``ConcatExtractor``: member parameters in member order
* then the head weights ``gamma``
* then the head bias, only when ``use_bias`` is true
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels, rng
from .errors import DimMismatch, LengthMismatch, UnknownLoss

LOSSES = ("logistic", "squared")
ACTIVATIONS = ("tanh", "relu")
CHECKPOINT_VERSION = 1


def loss_code(loss):
    try:
        return LOSSES.index(loss)
    except ValueError:
        raise UnknownLoss(f"unknown loss {loss!r}; expected one of {LOSSES}") from None


@dataclass
class LinearHead:
    gamma: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.bias = float(self.bias)


@dataclass
class IdentityExtractor:
    """Parameter-free extractor returning the raw input."""

    dim: int


@dataclass
class DictionaryExtractor:
    """Gated dictionary: ``features(x)_j = gates_j * x_j``."""

    gates: np.ndarray

    def __post_init__(self):
        self.gates = np.asarray(self.gates, dtype=float).ravel()

    @property
    def dictionary_dim(self):
        return len(self.gates)


@dataclass
class MlpExtractor:
    layer_widths: list
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float).ravel() for b in self.biases]
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_widths) < 2 or len(self.weights) != len(self.layer_widths) - 1:
            raise ValueError("layer_widths must list input width plus one width per layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_widths[l + 1], self.layer_widths[l])
            if W.shape != shape or b.shape != (shape[0],):
                raise DimMismatch(f"layer {l}: W{W.shape} b{b.shape}, expected W{shape}")


@dataclass
class ConcatExtractor:
    members: list

    def __post_init__(self):
        self.members = list(self.members)
        if not self.members:
            raise ValueError("ConcatExtractor needs at least one member")
        dims = {input_dim(m) for m in self.members}
        if len(dims) != 1:
            raise DimMismatch(f"members disagree on input dim: {sorted(dims)}")


Extractor = Union[IdentityExtractor, DictionaryExtractor, MlpExtractor, ConcatExtractor]


@dataclass
class ComposedModel:
    extractor: Extractor
    head: LinearHead
    use_bias: bool = True

    def __post_init__(self):
        if len(self.head.gamma) != output_dim(self.extractor):
            raise DimMismatch(
                f"head has {len(self.head.gamma)} weights, extractor emits {output_dim(self.extractor)}"
            )
        if not self.use_bias and self.head.bias != 0.0:
            raise ValueError("bias must be 0 when use_bias is false")


# -- shapes ----------------------------------------------------------------

def input_dim(ex) -> int:
    if isinstance(ex, IdentityExtractor):
        return ex.dim
    if isinstance(ex, DictionaryExtractor):
        return ex.dictionary_dim
    if isinstance(ex, MlpExtractor):
        return ex.layer_widths[0]
    if isinstance(ex, ConcatExtractor):
        return input_dim(ex.members[0])
    raise TypeError(f"not an extractor: {type(ex).__name__}")


def output_dim(ex) -> int:
    if isinstance(ex, IdentityExtractor):
        return ex.dim
    if isinstance(ex, DictionaryExtractor):
        return ex.dictionary_dim
    if isinstance(ex, MlpExtractor):
        return ex.layer_widths[-1]
    if isinstance(ex, ConcatExtractor):
        return sum(output_dim(m) for m in ex.members)
    raise TypeError(f"not an extractor: {type(ex).__name__}")


def n_extractor_params(ex) -> int:
    if isinstance(ex, IdentityExtractor):
        return 0
    if isinstance(ex, DictionaryExtractor):
        return ex.dictionary_dim
    if isinstance(ex, MlpExtractor):
        w = ex.layer_widths
        return sum(w[l + 1] * (w[l] + 1) for l in range(len(w) - 1))
    if isinstance(ex, ConcatExtractor):
        return sum(n_extractor_params(m) for m in ex.members)
    raise TypeError(f"not an extractor: {type(ex).__name__}")


def param_count(model: ComposedModel) -> int:
    return n_extractor_params(model.extractor) + len(model.head.gamma) + int(model.use_bias)


# -- flat parameter vector -------------------------------------------------

def _extractor_flat(ex) -> list:
    if isinstance(ex, IdentityExtractor):
        return []
    if isinstance(ex, DictionaryExtractor):
        return [ex.gates]
    if isinstance(ex, MlpExtractor):
        out = []
        for W, b in zip(ex.weights, ex.biases):
            out += [W.ravel(), b]
        return out
    return [a for m in ex.members for a in _extractor_flat(m)]


def _extractor_from_flat(ex, v, pos):
    if isinstance(ex, IdentityExtractor):
        return ex, pos
    if isinstance(ex, DictionaryExtractor):
        d = ex.dictionary_dim
        return DictionaryExtractor(v[pos:pos + d].copy()), pos + d
    if isinstance(ex, MlpExtractor):
        Ws, bs = [], []
        for W in ex.weights:
            n = W.size
            Ws.append(v[pos:pos + n].reshape(W.shape).copy())
            pos += n
            bs.append(v[pos:pos + W.shape[0]].copy())
            pos += W.shape[0]
        return MlpExtractor(list(ex.layer_widths), Ws, bs, ex.activation), pos
    members = []
    for m in ex.members:
        m2, pos = _extractor_from_flat(m, v, pos)
        members.append(m2)
    return ConcatExtractor(members), pos


def flatten_params(model: ComposedModel) -> np.ndarray:
    parts = _extractor_flat(model.extractor) + [model.head.gamma]
    if model.use_bias:
        parts.append(np.array([model.head.bias]))
    return np.concatenate(parts).astype(float)


def unflatten_params(model: ComposedModel, v) -> ComposedModel:
    v = np.asarray(v, dtype=float).ravel()
    if len(v) != param_count(model):
        raise LengthMismatch(f"expected {param_count(model)} parameters, got {len(v)}")
    ex, pos = _extractor_from_flat(model.extractor, v, 0)
    D = len(model.head.gamma)
    gamma = v[pos:pos + D].copy()
    bias = float(v[pos + D]) if model.use_bias else 0.0
    return ComposedModel(ex, LinearHead(gamma, bias), model.use_bias)


def _extractor_masks(ex, kind):
    if isinstance(ex, IdentityExtractor):
        return []
    if isinstance(ex, DictionaryExtractor):
        return [np.full(ex.dictionary_dim, kind == "gate")]
    if isinstance(ex, MlpExtractor):
        out = []
        for W in ex.weights:
            out += [np.full(W.size, kind == "l2"), np.zeros(W.shape[0], bool)]
        return out
    return [a for m in ex.members for a in _extractor_masks(m, kind)]


def gate_mask(model: ComposedModel) -> np.ndarray:
    """True on dictionary gates, the only parameters the L1 prox touches."""
    parts = _extractor_masks(model.extractor, "gate") + [np.zeros(len(model.head.gamma), bool)]
    if model.use_bias:
        parts.append(np.zeros(1, bool))
    return np.concatenate(parts)


def l2_mask(model: ComposedModel) -> np.ndarray:
    """True on weight matrices and head weights; biases and gates are exempt."""
    parts = _extractor_masks(model.extractor, "l2") + [np.ones(len(model.head.gamma), bool)]
    if model.use_bias:
        parts.append(np.zeros(1, bool))
    return np.concatenate(parts)


# -- forward / backward ----------------------------------------------------

def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _dact(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(float)


def _forward(ex, X):
    if isinstance(ex, IdentityExtractor):
        return X, None
    if isinstance(ex, DictionaryExtractor):
        return X * ex.gates, X
    if isinstance(ex, MlpExtractor):
        cache = []
        a = X
        for W, b in zip(ex.weights, ex.biases):
            z = a @ W.T + b
            a_next = _act(ex.activation, z)
            cache.append((a, z, a_next))
            a = a_next
        return a, cache
    outs, caches = [], []
    for m in ex.members:
        F, c = _forward(m, X)
        outs.append(F)
        caches.append(c)
    return np.concatenate(outs, axis=1), caches


def _backward(ex, cache, G, per_example):
    """Parameter gradient of ``sum_i G[i] . F[i]`` (or per-row when ``per_example``)."""
    n = G.shape[0]
    if isinstance(ex, IdentityExtractor):
        return np.zeros((n, 0)) if per_example else np.zeros(0)
    if isinstance(ex, DictionaryExtractor):
        g = G * cache
        return g if per_example else g.sum(axis=0)
    if isinstance(ex, MlpExtractor):
        parts = []
        delta = None
        for l in range(len(ex.weights) - 1, -1, -1):
            a_prev, z, a = cache[l]
            upstream = G if delta is None else delta @ ex.weights[l + 1]
            delta = upstream * _dact(ex.activation, z, a)
            if per_example:
                dW = (delta[:, :, None] * a_prev[:, None, :]).reshape(n, -1)
                parts.append(np.concatenate([dW, delta], axis=1))
            else:
                parts.append(np.concatenate([(delta.T @ a_prev).ravel(), delta.sum(axis=0)]))
        parts.reverse()
        return np.concatenate(parts, axis=-1)
    parts, pos = [], 0
    for m, c in zip(ex.members, cache):
        d = output_dim(m)
        parts.append(_backward(m, c, G[:, pos:pos + d], per_example))
        pos += d
    return np.concatenate(parts, axis=-1)


def _as_batch(ex, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != input_dim(ex):
        raise DimMismatch(f"input has dim {X.shape[1]}, extractor expects {input_dim(ex)}")
    return X


def features_batch(ex, X) -> np.ndarray:
    return _forward(ex, _as_batch(ex, X))[0]


def features(ex, x) -> np.ndarray:
    return features_batch(ex, x)[0]


def score_batch(model: ComposedModel, X) -> np.ndarray:
    return features_batch(model.extractor, X) @ model.head.gamma + model.head.bias


def score(model: ComposedModel, x) -> float:
    return float(score_batch(model, x)[0])


def sign(s):
    """Sign with sign(0) = -1."""
    return np.where(np.asarray(s) > 0, 1.0, -1.0)


def predict_batch(model, X) -> np.ndarray:
    return sign(score_batch(model, X))


def predict(model, x) -> int:
    return int(predict_batch(model, x)[0])


def score_jacobian(model: ComposedModel, X) -> np.ndarray:
    """d score / d params for each row of ``X``; shape (n, param_count)."""
    X = _as_batch(model.extractor, X)
    F, cache = _forward(model.extractor, X)
    G = np.broadcast_to(model.head.gamma, F.shape)
    parts = [_backward(model.extractor, cache, G, True), F]
    if model.use_bias:
        parts.append(np.ones((len(X), 1)))
    return np.concatenate(parts, axis=1)


def loss_values(s, y, loss):
    """Pointwise loss and its derivative in the score."""
    code = loss_code(loss)
    if code == 0:
        m = -y * s
        return np.logaddexp(0.0, m), -y * _expit(m)
    r = y - s
    return r * r, -2.0 * r


def _expit(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_and_grad(model: ComposedModel, X, y, w, loss="logistic"):
    """``sum_i w_i * loss(score(x_i), y_i)`` and its gradient in the flat params."""
    X = _as_batch(model.extractor, X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if isinstance(model.extractor, MlpExtractor):
        return kernels.mlp_loss_grad(
            flatten_params(model), np.asarray(model.extractor.layer_widths, dtype=np.int64),
            ACTIVATIONS.index(model.extractor.activation), bool(model.use_bias),
            X, y, w, loss_code(loss),
        )
    return _generic_loss_and_grad(model, X, y, w, loss)


def _generic_loss_and_grad(model, X, y, w, loss):
    F, cache = _forward(model.extractor, X)
    s = F @ model.head.gamma + model.head.bias
    l, dl = loss_values(s, y, loss)
    r = w * dl
    G = r[:, None] * model.head.gamma[None, :]
    parts = [_backward(model.extractor, cache, G, False), F.T @ r]
    if model.use_bias:
        parts.append(np.array([r.sum()]))
    return float(w @ l), np.concatenate(parts)


def grad_params(model: ComposedModel, x, y, loss="logistic") -> np.ndarray:
    """Gradient of the single-point loss in the flat parameter vector."""
    loss_code(loss)
    X = _as_batch(model.extractor, x)
    return _generic_loss_and_grad(model, X, np.array([float(y)]), np.ones(1), loss)[1]


def linear_model(w, bias=None) -> ComposedModel:
    """``f(x; w) = w . x`` (plus ``bias`` when given): linear in its parameters."""
    w = np.asarray(w, dtype=float)
    if bias is None:
        return ComposedModel(IdentityExtractor(len(w)), LinearHead(w, 0.0), use_bias=False)
    return ComposedModel(IdentityExtractor(len(w)), LinearHead(w, bias), use_bias=True)


# -- construction ----------------------------------------------------------

@dataclass(frozen=True)
class ArchSpec:
    """How to build and initialise a fresh model.

    ``kind`` is ``"dictionary"`` or ``"mlp"``. For an MLP, ``hidden`` lists
    the layer widths after the input; the last one is the representation size.
    """

    kind: str = "dictionary"
    input_dim: int = 2
    hidden: tuple = (8,)
    activation: str = "tanh"
    gate_init: float = 1.0
    gate_jitter: float = 0.1
    head_scale: float = 0.1

    def __post_init__(self):
        if self.kind not in ("dictionary", "mlp"):
            raise ValueError(f"unknown arch kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self):
        return {
            "kind": self.kind, "input_dim": self.input_dim, "hidden": list(self.hidden),
            "activation": self.activation, "gate_init": self.gate_init,
            "gate_jitter": self.gate_jitter, "head_scale": self.head_scale,
        }


def init_model(arch: ArchSpec, seed: int) -> ComposedModel:
    """Seeded initialisation.

    Dictionary gates start at ``gate_init`` with uniform jitter of half-width
    ``gate_jitter``; MLP weights are uniform with variance 2/fan_in and zero
    biases. Head weights are uniform in ``[-head_scale, head_scale]``; the head
    bias starts at 0.
    """
    s_ex, s_head = rng.derive_seed(seed, 0), rng.derive_seed(seed, 1)
    if arch.kind == "dictionary":
        d = arch.input_dim
        gates = arch.gate_init + rng.uniform_range(s_ex, d, -arch.gate_jitter, arch.gate_jitter)
        ex = DictionaryExtractor(gates)
    else:
        widths = [arch.input_dim, *arch.hidden]
        Ws, bs = [], []
        for l in range(len(widths) - 1):
            fan_in, fan_out = widths[l], widths[l + 1]
            a = np.sqrt(6.0 / fan_in)
            u = rng.uniform_range(rng.derive_seed(s_ex, l), fan_in * fan_out, -a, a)
            Ws.append(u.reshape(fan_out, fan_in))
            bs.append(np.zeros(fan_out))
        ex = MlpExtractor(widths, Ws, bs, arch.activation)
    D = output_dim(ex)
    gamma = rng.uniform_range(s_head, D, -arch.head_scale, arch.head_scale)
    return ComposedModel(ex, LinearHead(gamma, 0.0))


def same_params(a: ComposedModel, b: ComposedModel) -> bool:
    fa, fb = flatten_params(a), flatten_params(b)
    return fa.shape == fb.shape and fa.tobytes() == fb.tobytes()


# -- checkpoints -----------------------------------------------------------

def _extractor_doc(ex):
    if isinstance(ex, IdentityExtractor):
        return {"kind": "identity", "dim": ex.dim}
    if isinstance(ex, DictionaryExtractor):
        return {"kind": "dictionary", "dictionary_dim": ex.dictionary_dim}
    if isinstance(ex, MlpExtractor):
        return {"kind": "mlp", "layer_widths": list(ex.layer_widths), "activation": ex.activation}
    return {"kind": "concat", "members": [_extractor_doc(m) for m in ex.members]}


def _extractor_skeleton(doc):
    kind = doc["kind"]
    if kind == "identity":
        return IdentityExtractor(int(doc["dim"]))
    if kind == "dictionary":
        return DictionaryExtractor(np.zeros(int(doc["dictionary_dim"])))
    if kind == "mlp":
        w = doc["layer_widths"]
        return MlpExtractor(
            w, [np.zeros((w[l + 1], w[l])) for l in range(len(w) - 1)],
            [np.zeros(w[l + 1]) for l in range(len(w) - 1)], doc.get("activation", "tanh"),
        )
    if kind == "concat":
        return ConcatExtractor([_extractor_skeleton(m) for m in doc["members"]])
    raise ValueError(f"unknown extractor kind {kind!r}")


def checkpoint_dict(model: ComposedModel, seed_lineage=()) -> dict:
    ex_doc = _extractor_doc(model.extractor)
    doc = {"version": CHECKPOINT_VERSION, **ex_doc}
    doc["use_bias"] = model.use_bias
    doc["head_dim"] = len(model.head.gamma)
    doc["parameters"] = flatten_params(model).tolist()
    doc["activation"] = ex_doc.get("activation")
    doc["seed_lineage"] = [int(s) for s in seed_lineage]
    return doc


def model_from_checkpoint(doc: dict) -> ComposedModel:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    ex = _extractor_skeleton(doc)
    skel = ComposedModel(ex, LinearHead(np.zeros(int(doc["head_dim"]))), bool(doc["use_bias"]))
    return unflatten_params(skel, np.array(doc["parameters"], dtype=float))


def dumps_checkpoint(model, seed_lineage=()) -> str:
    return json.dumps(checkpoint_dict(model, seed_lineage), indent=2)


def loads_checkpoint(text: str) -> ComposedModel:
    return model_from_checkpoint(json.loads(text))
