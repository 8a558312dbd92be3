"""Forward and backward passes for the building-block operations.

Every op comes as a pair: ``op(...) -> (out, cache)`` and
``op_backward(d_out, cache) -> gradients``.  Parameters live in a
:class:`ParamStore`, a flat name-to-array mapping with a parallel gradient
accumulator, which keeps optimizer steps and finite-difference checks
trivial.  Reduction order is fixed, so runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-7   # probability clamp applied before logs


class ParamStore(dict):
    """Named parameters plus a gradient accumulator of matching shapes."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.grads = {}

    def zero_grads(self):
        self.grads = {}

    def add_grad(self, name, g):
        if name not in self:
            raise KeyError(f"unknown parameter {name!r}")
        if self[name].shape != np.shape(g):
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = np.array(g, copy=True)

    def scoped(self, prefix):
        """View helper: add_grad/read with a name prefix."""
        return _ScopedParams(self, prefix)

    def flat(self):
        names = sorted(self)
        vec = np.concatenate([self[n].ravel() for n in names])
        return names, vec

    def load_flat(self, names, vec):
        i = 0
        for n in names:
            size = self[n].size
            self[n] = vec[i:i + size].reshape(self[n].shape).astype(self[n].dtype)
            i += size

    def flat_grads(self, names):
        outs = []
        for n in names:
            g = self.grads.get(n)
            outs.append((g if g is not None else np.zeros_like(self[n])).ravel())
        return np.concatenate(outs)


class _ScopedParams:
    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name):
        return self.store[self.prefix + name]

    def add_grad(self, name, g):
        self.store.add_grad(self.prefix + name, g)


# ----------------------------------------------------------------------
# initializers

def init_linear_params(store, prefix, fan_in, fan_out, rng, dtype=np.float64):
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    store[prefix + "W"] = (rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype)
    store[prefix + "b"] = np.zeros(fan_out, dtype=dtype)


def init_gru_params(store, prefix, fan_in, hidden, rng, dtype=np.float64):
    si = np.sqrt(1.0 / fan_in)
    sh = np.sqrt(1.0 / hidden)
    store[prefix + "W"] = (rng.standard_normal((fan_in, 3 * hidden)) * si).astype(dtype)
    store[prefix + "U"] = (rng.standard_normal((hidden, 3 * hidden)) * sh).astype(dtype)
    store[prefix + "b"] = np.zeros(3 * hidden, dtype=dtype)


def init_bigru_params(store, prefix, fan_in, hidden, rng, dtype=np.float64):
    init_gru_params(store, prefix + "fwd.", fan_in, hidden, rng, dtype)
    init_gru_params(store, prefix + "bwd.", fan_in, hidden, rng, dtype)


# ----------------------------------------------------------------------
# elementwise

def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ----------------------------------------------------------------------
# linear

def linear(x, params, prefix=""):
    """y = x @ W + b over the trailing axis."""
    W, b = params[prefix + "W"], params[prefix + "b"]
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: got {x.shape[-1]} features, want {W.shape[0]}")
    return x @ W + b, (x, prefix)


def linear_backward(dy, cache, params):
    x, prefix = cache
    W = params[prefix + "W"]
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    params.add_grad(prefix + "W", flat_x.T @ flat_dy)
    params.add_grad(prefix + "b", flat_dy.sum(axis=0))
    return dy @ W.T


# ----------------------------------------------------------------------
# GRU

def gru_cell(x, h_prev, params, prefix=""):
    """One gated recurrent update for a batch of rows.

    Gate layout in the fused matrices is (reset, update, candidate);
    the new state is ``(1 - z) * n + z * h_prev``.
    """
    W, U, b = params[prefix + "W"], params[prefix + "U"], params[prefix + "b"]
    H = U.shape[0]
    if x.shape[-1] != W.shape[0] or h_prev.shape[-1] != H:
        raise ValueError("gru_cell: shape mismatch")
    xw = x @ W + b
    hu = h_prev @ U
    r = sigmoid(xw[..., :H] + hu[..., :H])
    z = sigmoid(xw[..., H:2 * H] + hu[..., H:2 * H])
    n = np.tanh(xw[..., 2 * H:] + r * hu[..., 2 * H:])
    h = (1.0 - z) * n + z * h_prev
    return h, (x, h_prev, r, z, n, hu[..., 2 * H:], prefix)


def gru_cell_backward(dh, cache, params, accumulate=True):
    """Returns (dx, dh_prev); parameter gradients go into `params.grads`."""
    x, h_prev, r, z, n, hun, prefix = cache
    U = params[prefix + "U"]
    W = params[prefix + "W"]
    H = U.shape[0]

    dz = dh * (h_prev - n)
    dn = dh * (1.0 - z)
    dh_prev = dh * z

    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * hun
    dhun = dn_pre * r
    dr_pre = dr * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)

    dgates = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
    dhu = np.concatenate([dr_pre, dz_pre, dhun], axis=-1)

    if accumulate:
        fx = x.reshape(-1, x.shape[-1])
        fh = h_prev.reshape(-1, H)
        params.add_grad(prefix + "W", fx.T @ dgates.reshape(-1, 3 * H))
        params.add_grad(prefix + "U", fh.T @ dhu.reshape(-1, 3 * H))
        params.add_grad(prefix + "b", dgates.reshape(-1, 3 * H).sum(axis=0))

    dx = dgates @ W.T
    dh_prev = dh_prev + dhu @ U.T
    return dx, dh_prev


def gru_sequence(x, params, prefix="", h0=None):
    """Run a GRU over [B, T, in]; returns states [B, T, H].

    Matches repeated :func:`gru_cell` exactly, but hoists the input
    projection ``x @ W + b`` out of the time loop as a single matmul.
    """
    B, T, _ = x.shape
    W, U, b = params[prefix + "W"], params[prefix + "U"], params[prefix + "b"]
    H = U.shape[0]
    if x.shape[-1] != W.shape[0]:
        raise ValueError("gru_sequence: input width mismatch")
    xw = x @ W + b                              # [B, T, 3H]
    h = np.zeros((B, H), dtype=x.dtype) if h0 is None else h0
    states = np.empty((B, T, H), dtype=x.dtype)
    step_cache = []
    for t in range(T):
        hu = h @ U
        r = sigmoid(xw[:, t, :H] + hu[:, :H])
        z = sigmoid(xw[:, t, H:2 * H] + hu[:, H:2 * H])
        n = np.tanh(xw[:, t, 2 * H:] + r * hu[:, 2 * H:])
        h_new = (1.0 - z) * n + z * h
        step_cache.append((h, r, z, n, hu[:, 2 * H:]))
        states[:, t] = h_new
        h = h_new
    return states, (step_cache, x, prefix)


def gru_sequence_backward(d_states, cache, params):
    step_cache, x, prefix = cache
    B, T, _ = x.shape
    U = params[prefix + "U"]
    W = params[prefix + "W"]
    H = U.shape[0]
    dxw = np.empty((B, T, 3 * H), dtype=d_states.dtype)
    dhu_all = np.empty((B, T, 3 * H), dtype=d_states.dtype)
    h_prev_all = np.empty((B, T, H), dtype=d_states.dtype)
    dh = np.zeros((B, H), dtype=d_states.dtype)
    for t in range(T - 1, -1, -1):
        h_prev, r, z, n, hun = step_cache[t]
        dh = dh + d_states[:, t]
        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        dh_next = dh * z
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hun
        dhun = dn_pre * r
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dxw[:, t, :H] = dr_pre
        dxw[:, t, H:2 * H] = dz_pre
        dxw[:, t, 2 * H:] = dn_pre
        dhu_all[:, t, :H] = dr_pre
        dhu_all[:, t, H:2 * H] = dz_pre
        dhu_all[:, t, 2 * H:] = dhun
        h_prev_all[:, t] = h_prev
        dh = dh_next + dhu_all[:, t] @ U.T
    flat_dxw = dxw.reshape(-1, 3 * H)
    params.add_grad(prefix + "W", x.reshape(-1, x.shape[-1]).T @ flat_dxw)
    params.add_grad(prefix + "U",
                    h_prev_all.reshape(-1, H).T @ dhu_all.reshape(-1, 3 * H))
    params.add_grad(prefix + "b", flat_dxw.sum(axis=0))
    return dxw @ W.T


def _reverse_within(x, lengths):
    """Reverse each row of [B, T, ...] inside its valid length; padding
    positions keep their place.  The map is an involution."""
    B, T = x.shape[0], x.shape[1]
    idx = np.tile(np.arange(T), (B, 1))
    for b, ln in enumerate(lengths):
        idx[b, :ln] = np.arange(ln - 1, -1, -1)
    return np.take_along_axis(x, idx.reshape(B, T, *([1] * (x.ndim - 2))), axis=1), idx


def _apply_index(x, idx):
    return np.take_along_axis(x, idx.reshape(*idx.shape, *([1] * (x.ndim - 2))), axis=1)


def bigru(x, params, prefix="", lengths=None):
    """Bidirectional GRU over [B, T, in] -> [B, T, 2H].

    The backward half runs over each sequence reversed inside its own
    valid length, so tail padding never leaks into valid positions.
    """
    B, T, _ = x.shape
    if lengths is None:
        lengths = np.full(B, T, dtype=int)
    fwd, cache_f = gru_sequence(x, params, prefix + "fwd.")
    x_rev, idx = _reverse_within(x, lengths)
    bwd_rev, cache_b = gru_sequence(x_rev, params, prefix + "bwd.")
    bwd = _apply_index(bwd_rev, idx)
    out = np.concatenate([fwd, bwd], axis=-1)
    return out, (cache_f, cache_b, idx, prefix)


def bigru_backward(d_out, cache, params):
    cache_f, cache_b, idx, prefix = cache
    H = d_out.shape[-1] // 2
    dx = gru_sequence_backward(np.ascontiguousarray(d_out[..., :H]),
                               cache_f, params)
    d_bwd_rev = _apply_index(np.ascontiguousarray(d_out[..., H:]), idx)
    dx_rev = gru_sequence_backward(d_bwd_rev, cache_b, params)
    dx += _apply_index(dx_rev, idx)
    return dx


# ----------------------------------------------------------------------
# temporal shift

def _tsm_axes(x):
    if x.ndim == 2:       # [T, C]
        return 0, 1
    if x.ndim == 3:       # [B, T, C]
        return 1, 2
    if x.ndim == 4:       # [T, C, H, W]
        return 0, 1
    raise ValueError("tsm_shift expects 2, 3 or 4 dims")


def tsm_quarter(channels):
    """Number of shifted channels: one quarter, to the nearest multiple
    of four (half-up), split evenly between the two directions."""
    if channels < 8:
        raise ValueError("tsm_shift needs at least 8 channels")
    return 4 * ((channels + 8) // 16)


def tsm_shift(x):
    """Shift a quarter of the channels one frame along time.

    The first q/2 shifted channels carry the previous frame's values and
    the next q/2 carry the following frame's; vacated boundary slots are
    zero-filled and the remaining channels pass through unchanged.
    """
    t_ax, c_ax = _tsm_axes(x)
    C = x.shape[c_ax]
    q = tsm_quarter(C)
    out = np.array(x, copy=True)

    def seg(cs, ce):
        sl = [slice(None)] * x.ndim
        sl[c_ax] = slice(cs, ce)
        return tuple(sl)

    def tslice(block, ts, te):
        sl = [slice(None)] * x.ndim
        sl[c_ax] = block
        sl[t_ax] = slice(ts, te)
        return tuple(sl)

    half = q // 2
    past, future = slice(0, half), slice(half, q)
    out[tslice(past, 1, None)] = x[tslice(past, 0, -1)]
    out[tslice(past, 0, 1)] = 0.0
    out[tslice(future, 0, -1)] = x[tslice(future, 1, None)]
    out[tslice(future, -1, None)] = 0.0
    return out, (x.shape,)


def tsm_shift_backward(dy, cache):
    """The adjoint of a shift is the opposite shift."""
    t_ax, c_ax = _tsm_axes(dy)
    C = dy.shape[c_ax]
    q = tsm_quarter(C)
    dx = np.array(dy, copy=True)

    def tslice(block, ts, te):
        sl = [slice(None)] * dy.ndim
        sl[c_ax] = block
        sl[t_ax] = slice(ts, te)
        return tuple(sl)

    half = q // 2
    past, future = slice(0, half), slice(half, q)
    dx[tslice(past, 0, -1)] = dy[tslice(past, 1, None)]
    dx[tslice(past, -1, None)] = 0.0
    dx[tslice(future, 1, None)] = dy[tslice(future, 0, -1)]
    dx[tslice(future, 0, 1)] = 0.0
    return dx


# ----------------------------------------------------------------------
# convolutional backbone (pixel mode)

def _im2col(x, kh, kw):
    """[N,H,W,C] -> [N,H,W,kh*kw*C] patches with same-padding."""
    N, H, W, C = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((N, H, W, kh * kw * C), dtype=x.dtype)
    k = 0
    for i in range(kh):
        for j in range(kw):
            cols[..., k * C:(k + 1) * C] = xp[:, i:i + H, j:j + W, :]
            k += 1
    return cols


def _col2im(dcols, shape, kh, kw):
    N, H, W, C = shape
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((N, H + 2 * ph, W + 2 * pw, C), dtype=dcols.dtype)
    k = 0
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + H, j:j + W, :] += dcols[..., k * C:(k + 1) * C]
            k += 1
    return dxp[:, ph:ph + H, pw:pw + W, :]


def conv2d(x, params, prefix=""):
    """3x3 same-padding convolution on [N,H,W,Cin] via patch matmul."""
    W, b = params[prefix + "W"], params[prefix + "b"]
    kh, kw, cin, cout = W.shape
    if x.shape[-1] != cin:
        raise ValueError("conv2d: channel mismatch")
    cols = _im2col(x, kh, kw)
    y = cols @ W.reshape(-1, cout) + b
    return y, (cols, x.shape, prefix)


def conv2d_backward(dy, cache, params):
    cols, x_shape, prefix = cache
    W = params[prefix + "W"]
    kh, kw, cin, cout = W.shape
    flat_cols = cols.reshape(-1, kh * kw * cin)
    flat_dy = dy.reshape(-1, cout)
    params.add_grad(prefix + "W", (flat_cols.T @ flat_dy).reshape(W.shape))
    params.add_grad(prefix + "b", flat_dy.sum(axis=0))
    dcols = (flat_dy @ W.reshape(-1, cout).T).reshape(cols.shape)
    return _col2im(dcols, x_shape, kh, kw)


def avgpool2(x):
    """2x2 average pooling; odd trailing rows or columns are dropped."""
    N, H, W, C = x.shape
    H2, W2 = H // 2, W // 2
    v = x[:, :H2 * 2, :W2 * 2, :].reshape(N, H2, 2, W2, 2, C)
    return v.mean(axis=(2, 4)), (x.shape,)


def avgpool2_backward(dy, cache):
    (shape,) = cache
    N, H, W, C = shape
    H2, W2 = H // 2, W // 2
    dx = np.zeros(shape, dtype=dy.dtype)
    dx[:, :H2 * 2, :W2 * 2, :] = np.repeat(
        np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0
    return dx


def init_conv_backbone_params(store, prefix, out_dim, rng, channels=(8, 16),
                              dtype=np.float64):
    cin = 3
    for i, cout in enumerate(channels):
        scale = np.sqrt(2.0 / (9 * cin + cout))
        store[f"{prefix}conv{i}.W"] = (
            rng.standard_normal((3, 3, cin, cout)) * scale).astype(dtype)
        store[f"{prefix}conv{i}.b"] = np.zeros(cout, dtype=dtype)
        cin = cout
    init_linear_params(store, prefix + "head.", cin, out_dim, rng, dtype)


def conv_backbone(x, params, prefix="", channels=(8, 16)):
    """Per-frame embedding of [N,H,W,3] pixels.

    Blocks of conv3x3 + tanh + 2x2 average pooling, with a temporal
    channel shift between blocks so neighbouring frames mix, then global
    average pooling and a linear head to the embedding width.
    """
    caches = []
    h = x
    for i in range(len(channels)):
        h, c_conv = conv2d(h, params, f"{prefix}conv{i}.")
        a = np.tanh(h)
        caches.append(("conv", c_conv, a))
        h, c_pool = avgpool2(a)
        caches.append(("pool", c_pool, None))
        if i + 1 < len(channels):
            # [N,H,W,C] -> [N,C,H,W] so the shift runs along frames
            hm = np.moveaxis(h, -1, 1)
            hm, c_shift = tsm_shift(hm)
            h = np.moveaxis(hm, 1, -1)
            caches.append(("shift", c_shift, None))
    pooled = h.mean(axis=(1, 2))
    caches.append(("gap", h.shape, None))
    y, c_head = linear(pooled, params, prefix + "head.")
    caches.append(("head", c_head, None))
    return y, caches


def conv_backbone_backward(dy, caches, params):
    kind, c_head, _ = caches[-1]
    d = linear_backward(dy, c_head, params)
    kind, shape, _ = caches[-2]
    N, H, W, C = shape
    d = np.broadcast_to(d[:, None, None, :], shape) / (H * W)
    d = np.array(d)
    for kind, cache, act in reversed(caches[:-2]):
        if kind == "shift":
            dm = tsm_shift_backward(np.moveaxis(d, -1, 1), cache)
            d = np.moveaxis(dm, 1, -1)
        elif kind == "pool":
            d = avgpool2_backward(d, cache)
        elif kind == "conv":
            d = conv2d_backward(d * (1.0 - act * act), cache, params)
    return d


# ----------------------------------------------------------------------
# losses

def weighted_bce(pred, target, fg_weight=1.0, mask=None):
    """Mean binary cross-entropy with an extra weight on positive targets.

    Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs;
    masked-out entries contribute neither to the sum nor to the mean count.
    Returns (loss, d_loss/d_pred).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if np.any(np.isnan(pred)):
        raise ValueError("weighted_bce: NaN predictions")
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    w = np.where(target > 0.5, float(fg_weight), 1.0)
    if mask is not None:
        w = w * mask
        n = float(np.sum(mask))
    else:
        n = float(target.size)
    if n == 0:
        return 0.0, np.zeros_like(pred)
    loss = -np.sum(w * (target * np.log(p) + (1.0 - target) * np.log1p(-p))) / n
    inside = (pred > PROB_EPS) & (pred < 1.0 - PROB_EPS)
    dpred = np.where(inside, -w * (target / p - (1.0 - target) / (1.0 - p)) / n, 0.0)
    return float(loss), dpred


def softmax_cross_entropy(logits, target_idx, class_weights=None, mask=None):
    """Mean weighted cross-entropy over [*, C] logits with integer targets.

    Returns (loss, d_loss/d_logits)."""
    flat = logits.reshape(-1, logits.shape[-1]).astype(np.float64)
    tgt = np.asarray(target_idx).reshape(-1)
    m = np.ones(len(tgt)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    w = np.ones(len(tgt)) if class_weights is None else np.asarray(class_weights)[tgt]
    w = w * m
    n = float(w.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)
    picked = probs[np.arange(len(tgt)), tgt]
    loss = float(-np.sum(w * np.log(np.clip(picked, PROB_EPS, None))) / n)
    dlogits = probs * w[:, None]
    dlogits[np.arange(len(tgt)), tgt] -= w
    dlogits /= n
    return loss, dlogits.reshape(logits.shape)
