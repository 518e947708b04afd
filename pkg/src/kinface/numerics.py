"""Two-layer aggregator MLP, MSE loss, Adam and a finite-difference oracle.

Architecture (fixed for production use)::

    input (B, 16384) -> Linear(16384, 512) -> ReLU -> Dropout(p=0.25)
                     -> Linear(512, 8192) -> output (B, 8192)

Dropout is inverted: kept units are scaled by ``1 / (1 - p)`` at train time,
so evaluation needs no rescaling.  Everything is float64.  Smaller widths are
accepted so tests can run a tiny variant of the same network.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math

import numba
import numpy as np

from .errors import DimensionError, NumericError

INPUT_DIM = 2 * 16 * 512
HIDDEN_DIM = 512
OUTPUT_DIM = 16 * 512
DROPOUT_P = 0.25
PARAM_NAMES = ("w1", "b1", "w2", "b2")


def seeded_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally split into a named substream.

    Stream keys may be ints or strings; strings are hashed with SHA-256 so
    the derived stream does not depend on Python's salted ``hash``.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for part in stream:
        if isinstance(part, str):
            part = int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little")
        key.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclasses.dataclass
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    dropout_p: float = DROPOUT_P

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        n_in, n_hidden = self.w1.shape
        expected = {"b1": (n_hidden,), "w2": (n_hidden, self.w2.shape[1]),
                    "b2": (self.w2.shape[1],)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(name, shape, getattr(self, name).shape)

    @classmethod
    def init(cls, rng, in_dim=INPUT_DIM, hidden=HIDDEN_DIM, out_dim=OUTPUT_DIM,
             dropout_p=DROPOUT_P, out_init="glorot"):
        """Random weights, zero biases.

        The ReLU-feeding first layer is He-normal.  The linear output layer is
        Glorot-normal by default (``out_init="he"`` gives He-normal instead).
        """
        w1 = rng.standard_normal((in_dim, hidden)) * math.sqrt(2.0 / in_dim)
        if out_init == "glorot":
            out_std = math.sqrt(2.0 / (hidden + out_dim))
        elif out_init == "he":
            out_std = math.sqrt(2.0 / hidden)
        else:
            raise ValueError(f"unknown output init {out_init!r}")
        w2 = rng.standard_normal((hidden, out_dim)) * out_std
        return cls(w1, np.zeros(hidden), w2, np.zeros(out_dim), dropout_p)

    @classmethod
    def zeros(cls, in_dim=INPUT_DIM, hidden=HIDDEN_DIM, out_dim=OUTPUT_DIM,
              dropout_p=DROPOUT_P):
        return cls(np.zeros((in_dim, hidden)), np.zeros(hidden),
                   np.zeros((hidden, out_dim)), np.zeros(out_dim), dropout_p)

    @property
    def dims(self):
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return dataclasses.replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self):
        return dataclasses.replace(self, **{k: np.zeros_like(v) for k, v in self.arrays().items()})


@dataclasses.dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Per-row "has ever seen a non-zero gradient" flags for each array.
    # Rows that never did have m = v = 0, so Adam leaves them untouched and
    # the kernel may skip them.  Rebuilt from m and v when absent.
    live: dict | None = dataclasses.field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, params: MlpParams, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)

    def live_rows(self):
        if self.live is None:
            self.live = {}
            for name in PARAM_NAMES:
                m = getattr(self.m, name).reshape(getattr(self.m, name).shape[0], -1)
                v = getattr(self.v, name).reshape(m.shape)
                self.live[name] = np.any(m != 0, axis=1) | np.any(v != 0, axis=1)
        return self.live

    def copy(self):
        live = None if self.live is None else {k: a.copy() for k, a in self.live.items()}
        return dataclasses.replace(self, m=self.m.copy(), v=self.v.copy(), live=live)


@dataclasses.dataclass
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray
    keep: np.ndarray | None
    hidden: np.ndarray


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    n_in = params.w1.shape[0]
    if x.ndim != 2 or x.shape[1] != n_in:
        raise DimensionError("MLP input", f"(B, {n_in})", x.shape)
    return x


def dropout_keep(rng, shape, p):
    """Scaled inverted-dropout multipliers: 0 or 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def mlp_forward(params: MlpParams, x, train_mode=False, rng=None, keep=None):
    """Return ``(output, cache)``.

    In train mode a dropout mask is drawn from ``rng`` unless ``keep`` pins
    one explicitly (scaled multipliers as produced by :func:`dropout_keep`).
    """
    x = _check_input(params, x)
    pre = x @ params.w1 + params.b1
    hidden = np.maximum(pre, 0.0)
    if keep is None and train_mode and params.dropout_p > 0.0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for the dropout mask")
        keep = dropout_keep(rng, hidden.shape, params.dropout_p)
    if keep is not None:
        if keep.shape != hidden.shape:
            raise DimensionError("dropout mask", hidden.shape, keep.shape)
        hidden = hidden * keep
    out = hidden @ params.w2 + params.b2
    return out, ForwardCache(x, pre, keep, hidden)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("mse operand", a.shape, b.shape)
    return float(np.mean((a - b) ** 2))


def _input_grad_rows(x, dpre):
    # Columns of x that are zero across the batch give exactly-zero rows of
    # dW1; only compute the others (zero-padded latents make this common).
    cols = np.flatnonzero(np.any(x != 0.0, axis=0))
    if cols.size > 0.75 * x.shape[1]:
        return x.T @ dpre
    gw1 = np.zeros((x.shape[1], dpre.shape[1]))
    if cols.size:
        gw1[cols] = x[:, cols].T @ dpre
    return gw1


def mlp_backward(params: MlpParams, cache: ForwardCache, dout) -> MlpParams:
    """Gradients of a scalar loss given ``dout = dL/d(output)``."""
    gw2 = cache.hidden.T @ dout
    gb2 = dout.sum(axis=0)
    dhidden = dout @ params.w2.T
    if cache.keep is not None:
        dhidden = dhidden * cache.keep
    dpre = dhidden * (cache.pre > 0.0)
    gw1 = _input_grad_rows(cache.x, dpre)
    gb1 = dpre.sum(axis=0)
    return MlpParams(gw1, gb1, gw2, gb2, params.dropout_p)


def mlp_loss_and_grads(params, x, target, train_mode=False, rng=None, keep=None):
    """Mean-squared-error loss and its exact gradients for every parameter."""
    out, cache = mlp_forward(params, x, train_mode, rng, keep)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != out.shape:
        raise DimensionError("MLP target", out.shape, target.shape)
    resid = out - target
    loss = float(np.mean(resid ** 2))
    grads = mlp_backward(params, cache, resid * (2.0 / resid.size))
    return loss, grads


# -- Adam ------------------------------------------------------------------


@numba.njit(cache=True)
def _adam_rows(p, g, m, v, live, lr, beta1, beta2, eps, corr1, corr2):
    """Update ``p, m, v`` in place row by row; returns the first bad row or -1.

    A row not yet marked live is skipped when its gradient is all zero
    (its moments are zero, so the dense update would leave it unchanged).
    """
    n_rows, n_cols = p.shape
    step = lr / corr1
    inv_sqrt_corr2 = 1.0 / math.sqrt(corr2)
    for r in range(n_rows):
        if not live[r]:
            touched = False
            for c in range(n_cols):
                if g[r, c] != 0.0:
                    touched = True
                    break
            if not touched:
                continue
            live[r] = True
        for c in range(n_cols):
            gi = g[r, c]
            if not math.isfinite(gi):
                return r
            mi = beta1 * m[r, c] + (1.0 - beta1) * gi
            vi = beta2 * v[r, c] + (1.0 - beta2) * gi * gi
            m[r, c] = mi
            v[r, c] = vi
            # m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in.
            p[r, c] -= step * mi / (math.sqrt(vi) * inv_sqrt_corr2 + eps)
    return -1


def _as_rows(a):
    return a.reshape(a.shape[0], -1)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, inplace=False):
    """One bias-corrected Adam update; returns ``(params, state)``.

    With ``inplace=False`` (default) the inputs are left untouched, also when
    a non-finite gradient is rejected.  With ``inplace=True`` a rejected
    step may leave ``params``/``state`` partially updated; discard them.
    Rows that have never received a non-zero gradient are skipped, which is
    exact because their moments are still zero.
    """
    for name in PARAM_NAMES:
        if getattr(grads, name).shape != getattr(params, name).shape:
            raise DimensionError(f"gradient {name}", getattr(params, name).shape,
                                 getattr(grads, name).shape)
    if not inplace:
        params = params.copy()
        state = state.copy()
    live = state.live_rows()
    t = state.t + 1
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    for name in PARAM_NAMES:
        bad = _adam_rows(_as_rows(getattr(params, name)),
                         _as_rows(np.ascontiguousarray(getattr(grads, name), dtype=np.float64)),
                         _as_rows(getattr(state.m, name)), _as_rows(getattr(state.v, name)),
                         live[name], state.lr, state.beta1, state.beta2, state.eps, corr1, corr2)
        if bad >= 0:
            raise NumericError(f"non-finite gradient in {name} (row {bad}) at Adam step {t}")
    state.t = t
    return params, state


# -- finite-difference oracle ----------------------------------------------


def _sample_coords(params, max_per_array, rng):
    coords = {}
    for name, arr in params.arrays().items():
        n = arr.size
        if max_per_array is None or n <= max_per_array:
            coords[name] = np.arange(n)
        else:
            coords[name] = np.sort(rng.choice(n, size=max_per_array, replace=False))
    return coords


def finite_diff_gradcheck(params: MlpParams, x, target, eps=1e-5, keep=None,
                          max_per_array=None, seed=0, return_details=False):
    """Largest relative error between analytic and central-difference gradients.

    Each perturbed loss is evaluated from the perturbed parameter directly;
    only the output entries the parameter can influence are recomputed, and
    terms of the loss that cannot change are dropped from the difference.
    Differences of squared residuals are formed in factored form.
    Coordinates whose +/- perturbations straddle a ReLU kink are skipped and
    counted.  The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, floor)`` with ``floor = 1e-7 * max|a|``.

    ``max_per_array`` limits the number of checked coordinates per parameter
    array to a seeded random subset.
    """
    if not eps > 0.0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    x = _check_input(params, x)
    target = np.asarray(target, dtype=np.float64)
    out, cache = mlp_forward(params, x, keep=keep)
    if target.shape != out.shape:
        raise DimensionError("MLP target", out.shape, target.shape)
    resid = out - target
    analytic = mlp_backward(params, cache, resid * (2.0 / resid.size))
    n_total = resid.size
    scale = 1.0 if keep is None else keep
    w1, b1, w2, b2 = params.w1, params.b1, params.w2, params.b2
    n_in, n_hidden, n_out = params.dims
    coords = _sample_coords(params, max_per_array, np.random.default_rng(seed))

    # (a - t)^2 - (b - t)^2 == (a - b) * (a + b - 2t), which avoids cancelling
    # two large sums of squares against each other.
    def sq_diff(a, b, t):
        return float(np.sum((a - b) * (a + b - 2.0 * t))) / n_total

    def diff_output_column(j, col_plus, col_minus):
        return sq_diff(col_plus, col_minus, target[:, j])

    def diff_hidden_unit(i, pre_plus, pre_minus):
        if np.any((pre_plus > 0) != (pre_minus > 0)):
            return None
        h_plus = np.maximum(pre_plus, 0.0) * (scale if np.isscalar(scale) else scale[:, i])
        h_minus = np.maximum(pre_minus, 0.0) * (scale if np.isscalar(scale) else scale[:, i])
        base = out - np.outer(cache.hidden[:, i], w2[i])
        o_plus = base + np.outer(h_plus, w2[i])
        o_minus = base + np.outer(h_minus, w2[i])
        return sq_diff(o_plus, o_minus, target)

    numeric = {}
    skipped = 0
    for name, idx in coords.items():
        vals = np.empty(idx.size)
        for k, flat in enumerate(idx):
            if name == "w2":
                i, j = divmod(int(flat), n_out)
                col = cache.hidden[:, np.arange(n_hidden) != i] @ w2[np.arange(n_hidden) != i, j]
                d = diff_output_column(j, col + cache.hidden[:, i] * (w2[i, j] + eps) + b2[j],
                                       col + cache.hidden[:, i] * (w2[i, j] - eps) + b2[j])
            elif name == "b2":
                j = int(flat)
                col = cache.hidden @ w2[:, j]
                d = diff_output_column(j, col + (b2[j] + eps), col + (b2[j] - eps))
            elif name == "w1":
                r, i = divmod(int(flat), n_hidden)
                rest = np.delete(x, r, axis=1) @ np.delete(w1[:, i], r)
                d = diff_hidden_unit(i, rest + x[:, r] * (w1[r, i] + eps) + b1[i],
                                     rest + x[:, r] * (w1[r, i] - eps) + b1[i])
            else:
                i = int(flat)
                lin = x @ w1[:, i]
                d = diff_hidden_unit(i, lin + (b1[i] + eps), lin + (b1[i] - eps))
            if d is None:
                vals[k] = np.nan
                skipped += 1
            else:
                vals[k] = d / (2.0 * eps)
        numeric[name] = vals

    a_all = np.concatenate([getattr(analytic, n).ravel()[coords[n]] for n in PARAM_NAMES])
    n_all = np.concatenate([numeric[n] for n in PARAM_NAMES])
    ok = ~np.isnan(n_all)
    a_ok, n_ok = a_all[ok], n_all[ok]
    floor = 1e-7 * max(float(np.max(np.abs(a_all))), np.finfo(float).tiny)
    denom = np.maximum(np.maximum(np.abs(a_ok), np.abs(n_ok)), floor)
    max_rel = float(np.max(np.abs(a_ok - n_ok) / denom)) if a_ok.size else 0.0
    if return_details:
        return max_rel, {"checked": int(ok.sum()), "skipped_kinks": skipped}
    return max_rel
