"""Pure-numpy kernels. Same signatures and results as the compiled ``_kernels``."""
import numpy as np

LOGISTIC, SQUARED = 0, 1
TANH, RELU = 0, 1


def _pointwise(s, y, loss):
    if loss == LOGISTIC:
        m = -y * s
        sig = np.where(m >= 0, 1.0 / (1.0 + np.exp(-np.abs(m))), np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))))
        return np.logaddexp(0.0, m), -y * sig
    r = y - s
    return r * r, -2.0 * r


def mlp_loss_grad(params, widths, act, use_bias, X, y, w, loss):
    """Weighted loss and flat gradient of an MLP extractor with a linear head."""
    L = len(widths) - 1
    pos = 0
    Ws, bs = [], []
    for l in range(L):
        n_out, n_in = int(widths[l + 1]), int(widths[l])
        Ws.append(params[pos:pos + n_out * n_in].reshape(n_out, n_in))
        pos += n_out * n_in
        bs.append(params[pos:pos + n_out])
        pos += n_out
    D = int(widths[-1])
    gamma = params[pos:pos + D]
    bias = params[pos + D] if use_bias else 0.0

    acts = [X]
    a = X
    for W, b in zip(Ws, bs):
        z = a @ W.T + b
        a = np.tanh(z) if act == TANH else np.maximum(z, 0.0)
        acts.append(a)
    s = a @ gamma + bias
    lv, dl = _pointwise(s, y, loss)
    r = w * dl

    grad = np.empty(len(params))
    grad[pos:pos + D] = a.T @ r
    if use_bias:
        grad[pos + D] = r.sum()
    delta = r[:, None] * gamma[None, :]
    end = pos
    for l in range(L - 1, -1, -1):
        a_out = acts[l + 1]
        delta = delta * (1.0 - a_out * a_out if act == TANH else (a_out > 0).astype(float))
        n_out, n_in = Ws[l].shape
        gb_start = end - n_out
        gw_start = gb_start - n_out * n_in
        grad[gw_start:gb_start] = (delta.T @ acts[l]).ravel()
        grad[gb_start:end] = delta.sum(axis=0)
        end = gw_start
        delta = delta @ Ws[l]
    return float(w @ lv), grad


def dict_descent(X, y, w, gates, gamma, bias, use_bias, steps, lr, l1, l2, loss, log_every):
    """Full-batch proximal gradient on a gated dictionary model.

    Minimises ``sum_i w_i loss(f(x_i), y_i) + l2/2 |gamma|^2`` with the L1 prox
    on the gates. Returns updated parameters, the trace (step, loss, risk) and
    the index of the first non-finite step, or -1.
    """
    gates, gamma = gates.copy(), gamma.copy()
    t_steps, t_loss, t_risk = [], [], []
    thresh = lr * l1
    for t in range(steps + 1):
        s = X @ (gates * gamma) + bias
        l, dl = _pointwise(s, y, loss)
        lv = float(w @ l)
        if not np.isfinite(lv):
            return gates, gamma, bias, t_steps, t_loss, t_risk, t
        if t == steps or t % log_every == 0:
            t_steps.append(t)
            t_loss.append(lv)
            t_risk.append(float(w @ (np.where(s > 0, 1.0, -1.0) != y)))
        if t == steps:
            break
        r = w * dl
        xr = X.T @ r
        g_gates = gamma * xr
        g_gamma = gates * xr + l2 * gamma
        g_bias = r.sum()
        gates = gates - lr * g_gates
        gamma = gamma - lr * g_gamma
        if use_bias:
            bias = bias - lr * g_bias
        if thresh > 0:
            gates = np.sign(gates) * np.maximum(np.abs(gates) - thresh, 0.0)
    return gates, gamma, float(bias), t_steps, t_loss, t_risk, -1
