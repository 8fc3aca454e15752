"""Dense and LSTM layers with hand-written reverse-mode gradients, Adam, and a
finite-difference gradient checker.

Internally every sequence tensor is time-major, shape ``(T, B, features)``.
The public ``lstm_forward``/``lstm_backward`` also accept the column layout
``(features, T)`` (one sequence) or ``(B, features, T)`` and answer in kind.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidState, NonFiniteError

VAR_MIN, VAR_MAX = 1e-6, 1e6
_LOG_MIN, _LOG_MAX = np.log(VAR_MIN), np.log(VAR_MAX)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTMLayer:
    """LSTM cell with gate order (input, forget, cell, output).

    ``W`` maps the input (4h x d_in), ``U`` the previous hidden state (4h x h).
    """

    def __init__(self, input_dim, hidden_dim, rng=None, scale=None):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        h = self.hidden_dim
        if rng is None:
            self.W = np.zeros((4 * h, self.input_dim))
            self.U = np.zeros((4 * h, h))
            self.b = np.zeros(4 * h)
        else:
            sw = scale or 1.0 / np.sqrt(self.input_dim)
            su = scale or 1.0 / np.sqrt(h)
            self.W = rng.uniform(-sw, sw, (4 * h, self.input_dim))
            self.U = rng.uniform(-su, su, (4 * h, h))
            self.b = np.zeros(4 * h)
            self.b[h:2 * h] = 1.0
        self.version = 0

    def params(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def set_params(self, W=None, U=None, b=None):
        if W is not None:
            self.W = np.array(W, dtype=float).reshape(4 * self.hidden_dim, self.input_dim)
        if U is not None:
            self.U = np.array(U, dtype=float).reshape(4 * self.hidden_dim, self.hidden_dim)
        if b is not None:
            self.b = np.array(b, dtype=float).reshape(4 * self.hidden_dim)
        self.version += 1


class DenseHead:
    """Affine map plus activation, applied independently at each time step.

    ``activation="exp"`` is the clamped exponential used for variances: output
    lies in ``[VAR_MIN, VAR_MAX]``, shifted up by ``floor``.
    """

    def __init__(self, input_dim, output_dim, activation="identity", rng=None, scale=None,
                 floor=0.0):
        if activation not in ("identity", "exp"):
            raise InvalidArgument(f"unknown activation {activation!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.activation = activation
        self.floor = float(floor)
        if rng is None:
            self.W = np.zeros((self.output_dim, self.input_dim))
        else:
            s = scale or 1.0 / np.sqrt(self.input_dim)
            self.W = rng.uniform(-s, s, (self.output_dim, self.input_dim))
        self.b = np.zeros(self.output_dim)
        self.version = 0

    def params(self):
        return {"W": self.W, "b": self.b}

    def set_params(self, W=None, b=None):
        if W is not None:
            self.W = np.array(W, dtype=float).reshape(self.output_dim, self.input_dim)
        if b is not None:
            self.b = np.array(b, dtype=float).reshape(self.output_dim)
        self.version += 1


# --------------------------------------------------------------------- dense

def dense_forward(head, x):
    """Apply ``head`` on the last axis of ``x``; returns ``(y, cache)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != head.input_dim:
        raise InvalidArgument(f"dense input has {x.shape[-1]} features, expected {head.input_dim}")
    a = x @ head.W.T + head.b
    if head.activation == "identity":
        y = a
    else:
        e = np.exp(np.clip(a, _LOG_MIN, _LOG_MAX))
        y = e + head.floor if head.floor else e
    return y, {"x": x, "a": a, "y": y, "head": id(head), "version": head.version}


def dense_backward(head, cache, dy):
    """Returns ``(dx, {"W": dW, "b": db})``."""
    if cache["head"] != id(head) or cache["version"] != head.version:
        raise InvalidState("dense cache does not belong to the current head parameters")
    dy = np.asarray(dy, dtype=float)
    if dy.shape != cache["y"].shape:
        raise InvalidArgument(f"upstream gradient shape {dy.shape} != output {cache['y'].shape}")
    if head.activation == "exp":
        a = cache["a"]
        da = dy * (cache["y"] - head.floor) * ((a > _LOG_MIN) & (a < _LOG_MAX))
    else:
        da = dy
    x2 = cache["x"].reshape(-1, head.input_dim)
    da2 = da.reshape(-1, head.output_dim)
    grads = {"W": da2.T @ x2, "b": da2.sum(axis=0)}
    return da @ head.W, grads


# ---------------------------------------------------------------------- lstm

def lstm_forward_tbd(layer, x):
    """Time-major LSTM forward. ``x``: (T, B, d_in) -> h: (T, B, h)."""
    T, B, d = x.shape
    if d != layer.input_dim:
        raise InvalidArgument(f"LSTM input has {d} features, expected {layer.input_dim}")
    H = layer.hidden_dim
    xp = x @ layer.W.T + layer.b
    UT = layer.U.T
    gates = np.empty((T, B, 4 * H))
    cs = np.empty((T, B, H))
    hs = np.empty((T, B, H))
    tcs = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = xp[t] + h @ UT
        g = gates[t]
        g[:, :2 * H] = sigmoid(a[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = g[:, 3 * H:] * tc
        cs[t], tcs[t], hs[t] = c, tc, h
    cache = {"x": x, "gates": gates, "c": cs, "tc": tcs, "h": hs,
             "layer": id(layer), "version": layer.version}
    return hs, cache


def lstm_backward_tbd(layer, cache, dh):
    """Backpropagation through time. Returns ``(dx, {"W", "U", "b"})``."""
    if cache.get("layer") != id(layer) or cache.get("version") != layer.version:
        raise InvalidState("LSTM cache is stale or belongs to another layer")
    if dh.shape != cache["h"].shape:
        raise InvalidState(f"upstream gradient shape {dh.shape} != cached output {cache['h'].shape}")
    T, B, H = dh.shape
    gates, cs, tcs, hs = cache["gates"], cache["c"], cache["tc"], cache["h"]
    U = layer.U
    da = np.empty((T, B, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else zeros
        dht = dh[t] + dh_next
        tc = tcs[t]
        dc = dc_next + dht * o * (1.0 - tc * tc)
        d = da[t]
        d[:, :H] = dc * gg * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        d[:, 3 * H:] = dht * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ U
        if t > 0:
            dU += d.T @ hs[t - 1]
    x = cache["x"]
    da2 = da.reshape(-1, 4 * H)
    grads = {"W": da2.T @ x.reshape(-1, layer.input_dim), "U": dU, "b": da2.sum(axis=0)}
    return da @ layer.W, grads


def _to_tbd(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x.T[:, None, :]
    if x.ndim == 3:
        return x.transpose(2, 0, 1)
    raise InvalidArgument(f"expected (features, T) or (B, features, T), got shape {x.shape}")


def _from_tbd(y, ndim):
    return y[:, 0, :].T if ndim == 2 else y.transpose(1, 2, 0)


def lstm_forward(layer, x):
    """LSTM over a ``(d_in, T)`` or ``(B, d_in, T)`` sequence, zero initial state.

    Returns the hidden sequence in the same layout and the cache for
    :func:`lstm_backward`.
    """
    x = np.asarray(x, dtype=float)
    hs, cache = lstm_forward_tbd(layer, _to_tbd(x))
    cache["ndim"] = x.ndim
    return _from_tbd(hs, x.ndim), cache


def lstm_backward(layer, cache, dh):
    ndim = cache.get("ndim")
    if ndim is None:
        raise InvalidState("cache was not produced by lstm_forward")
    dh = np.asarray(dh, dtype=float)
    if dh.ndim != ndim:
        raise InvalidState("upstream gradient layout does not match the forward call")
    dx, grads = lstm_backward_tbd(layer, cache, _to_tbd(dh))
    return _from_tbd(dx, ndim), grads


# ----------------------------------------------------------------- optimizer

def adam_init(params):
    return {"t": 0, "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step (descent on the gradient).

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    if state is None:
        state = adam_init(params)
    t = state["t"] + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise InvalidArgument(f"gradient for {k!r} has shape {g.shape}, param {p.shape}")
        m = beta1 * state["m"][k] + (1 - beta1) * g
        v = beta2 * state["v"][k] + (1 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, {"t": t, "m": new_m, "v": new_v}


# ----------------------------------------------------------------- gradcheck

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple
    n_checked: int
    tolerance: float
    raw_rel_error: float = 0.0  # before the roundoff allowance

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def grad_check(fn, params, tolerance=1e-5, h=1e-5, max_per_tensor=None, rng=None):
    """Compare analytic gradients with central differences.

    ``fn(params) -> (value, grads)`` where ``params``/``grads`` are dicts of
    arrays. Entries are compared as ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-6 * max(1, max|a|)`` so that near-zero components are judged
    on an absolute scale. The discrepancy is first reduced by the roundoff
    bound of the central difference, ``8 * eps * max(|f+|, |f-|) / h``, so
    that tiny gradients of a large objective are not judged on noise.
    ``max_per_tensor`` subsamples coordinates.
    """
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    value, grads = fn(params)
    if not np.isfinite(value):
        raise NonFiniteError(f"function value is {value} at the base point")
    amax = max([float(np.max(np.abs(g))) for g in grads.values() if g.size] + [1.0])
    floor = 1e-6 * amax
    worst = (0.0, None)
    raw = 0.0
    n = 0
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        if not np.all(np.isfinite(g)):
            bad = np.unravel_index(np.flatnonzero(~np.isfinite(g))[0], g.shape)
            raise NonFiniteError(f"analytic gradient of {name!r} non-finite at {bad}")
        idx = np.arange(p.size)
        if max_per_tensor is not None and p.size > max_per_tensor:
            idx = (rng or np.random.default_rng(0)).choice(p.size, max_per_tensor, replace=False)
        flat = p.reshape(-1)
        for j in idx:
            old = flat[j]
            flat[j] = old + h
            fp = fn(params)[0]
            flat[j] = old - h
            fm = fn(params)[0]
            flat[j] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite value perturbing {name}[{j}]")
            num = (fp - fm) / (2 * h)
            noise = 8 * np.finfo(float).eps * max(abs(fp), abs(fm)) / h
            a = g.reshape(-1)[j]
            scale = max(abs(a), abs(num), floor)
            raw = max(raw, abs(a - num) / scale)
            err = max(abs(a - num) - noise, 0.0) / scale
            n += 1
            if err > worst[0] or worst[1] is None:
                worst = (err, (name, int(j), float(a), float(num)))
    return GradCheckReport(worst[0], worst[1], n, tolerance, raw)
