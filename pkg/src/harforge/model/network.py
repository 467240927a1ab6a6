"""Two-layer bidirectional LSTM encoder with analytic gradients, plus the
two affine classification heads, all in plain numpy.

The gate block layout inside every 4H-wide weight slab is [input, forget,
cell, output]. Layer 1 reads the 5-channel minute features; layer 2 reads
the concatenated forward/backward outputs of layer 1 (after inverted
dropout in train mode). The window representation is the concatenation of
the two final hidden states of layer 2 (the forward direction's last step
and the backward direction's first step), or the mean over time of the
concatenated outputs when mean pooling is selected.

Everything runs in float64: the backward pass is checked coordinate by
coordinate against central finite differences, and that comparison needs
the headroom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_LEVEL1 = 3

GATE_BLOCKS = 4  # input, forget, cell, output

POOLING_MODES = ("final", "mean")

#: Construction order of the parameter arrays. Initialization draws follow
#: this order, which pins the random stream for a given seed.
_ARRAY_ORDER = (
    "enc1_fwd_wx",
    "enc1_fwd_wh",
    "enc1_fwd_b",
    "enc1_bwd_wx",
    "enc1_bwd_wh",
    "enc1_bwd_b",
    "enc2_fwd_wx",
    "enc2_fwd_wh",
    "enc2_fwd_b",
    "enc2_bwd_wx",
    "enc2_bwd_wh",
    "enc2_bwd_b",
    "head1_w",
    "head1_b",
    "head2_w",
    "head2_b",
)


@dataclass
class ModelParams:
    """All weight arrays plus the shape and behaviour metadata.

    The arrays dict is keyed by the names in _ARRAY_ORDER. Treat instances
    as value objects: use copy() before mutating the arrays in place.
    """

    arrays: dict[str, np.ndarray]
    input_size: int
    hidden_size: int
    n_level1: int
    n_level2: int
    dropout: float = 0.1
    pooling: str = "final"

    def __post_init__(self) -> None:
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def feature_size(self) -> int:
        return 2 * self.hidden_size

    def copy(self) -> "ModelParams":
        return ModelParams(
            arrays={k: v.copy() for k, v in self.arrays.items()},
            input_size=self.input_size,
            hidden_size=self.hidden_size,
            n_level1=self.n_level1,
            n_level2=self.n_level2,
            dropout=self.dropout,
            pooling=self.pooling,
        )


def _array_shapes(
    input_size: int, hidden_size: int, n_level1: int, n_level2: int
) -> dict[str, tuple[int, ...]]:
    h = hidden_size
    return {
        "enc1_fwd_wx": (input_size, 4 * h),
        "enc1_fwd_wh": (h, 4 * h),
        "enc1_fwd_b": (4 * h,),
        "enc1_bwd_wx": (input_size, 4 * h),
        "enc1_bwd_wh": (h, 4 * h),
        "enc1_bwd_b": (4 * h,),
        "enc2_fwd_wx": (2 * h, 4 * h),
        "enc2_fwd_wh": (h, 4 * h),
        "enc2_fwd_b": (4 * h,),
        "enc2_bwd_wx": (2 * h, 4 * h),
        "enc2_bwd_wh": (h, 4 * h),
        "enc2_bwd_b": (4 * h,),
        "head1_w": (2 * h, n_level1),
        "head1_b": (n_level1,),
        "head2_w": (2 * h, n_level2),
        "head2_b": (n_level2,),
    }


def _fan_in(name: str, shape: tuple[int, ...], hidden_size: int) -> int:
    if name.endswith("_b"):
        # biases share the fan of the matrix they accompany
        return hidden_size if name.startswith("enc") else 2 * hidden_size
    return shape[0]


def init_params(
    input_size: int,
    hidden_size: int,
    n_level2: int,
    *,
    n_level1: int = N_LEVEL1,
    seed: int = 0,
    dropout: float = 0.1,
    pooling: str = "final",
) -> ModelParams:
    """Seeded uniform initialization, each array in (-1, 1)/sqrt(fan_in)."""
    if min(input_size, hidden_size, n_level1, n_level2) <= 0:
        raise ValueError("all model dimensions must be positive")
    rng = np.random.default_rng(seed)
    shapes = _array_shapes(input_size, hidden_size, n_level1, n_level2)
    arrays: dict[str, np.ndarray] = {}
    for name in _ARRAY_ORDER:
        shape = shapes[name]
        bound = 1.0 / np.sqrt(_fan_in(name, shape, hidden_size))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(
        arrays=arrays,
        input_size=input_size,
        hidden_size=hidden_size,
        n_level1=n_level1,
        n_level2=n_level2,
        dropout=dropout,
        pooling=pooling,
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lstm_forward(x, wx, wh, b, reverse: bool):
    """Run one direction of one layer over a (B, W, D) batch.

    Returns the per-step hidden states in time order and the cache needed
    by the backward pass.
    """
    batch, width, _ = x.shape
    h_dim = wh.shape[0]
    pre = x @ wx + b  # input contribution for every step at once
    h = np.zeros((batch, h_dim))
    c = np.zeros((batch, h_dim))
    gates_i = np.empty((batch, width, h_dim))
    gates_f = np.empty((batch, width, h_dim))
    gates_g = np.empty((batch, width, h_dim))
    gates_o = np.empty((batch, width, h_dim))
    c_seq = np.empty((batch, width, h_dim))
    h_seq = np.empty((batch, width, h_dim))
    steps = range(width - 1, -1, -1) if reverse else range(width)
    for t in steps:
        z = pre[:, t] + h @ wh
        i_t = _sigmoid(z[:, :h_dim])
        f_t = _sigmoid(z[:, h_dim : 2 * h_dim])
        g_t = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        o_t = _sigmoid(z[:, 3 * h_dim :])
        c = f_t * c + i_t * g_t
        h = o_t * np.tanh(c)
        gates_i[:, t] = i_t
        gates_f[:, t] = f_t
        gates_g[:, t] = g_t
        gates_o[:, t] = o_t
        c_seq[:, t] = c
        h_seq[:, t] = h
    cache = {
        "x": x,
        "i": gates_i,
        "f": gates_f,
        "g": gates_g,
        "o": gates_o,
        "c": c_seq,
        "h": h_seq,
        "reverse": reverse,
    }
    return h_seq, cache


def _lstm_backward(dh_seq, cache, wx, wh):
    """Backpropagate through one direction. dh_seq holds the gradient
    arriving at every per-step hidden output."""
    x = cache["x"]
    gates_i, gates_f = cache["i"], cache["f"]
    gates_g, gates_o = cache["g"], cache["o"]
    c_seq, h_seq = cache["c"], cache["h"]
    reverse = cache["reverse"]
    batch, width, h_dim = h_seq.shape

    dz_seq = np.empty((batch, width, 4 * h_dim))
    d_wh = np.zeros_like(wh)
    dh_carry = np.zeros((batch, h_dim))
    dc_carry = np.zeros((batch, h_dim))
    zeros = np.zeros((batch, h_dim))
    steps = range(width) if reverse else range(width - 1, -1, -1)
    for t in steps:
        prev_t = t + 1 if reverse else t - 1
        in_range = 0 <= prev_t < width
        h_prev = h_seq[:, prev_t] if in_range else zeros
        c_prev = c_seq[:, prev_t] if in_range else zeros
        i_t, f_t = gates_i[:, t], gates_f[:, t]
        g_t, o_t = gates_g[:, t], gates_o[:, t]
        tanh_c = np.tanh(c_seq[:, t])

        dh = dh_seq[:, t] + dh_carry
        do = dh * tanh_c
        dc = dh * o_t * (1.0 - tanh_c**2) + dc_carry
        di = dc * g_t
        dg = dc * i_t
        df = dc * c_prev

        dz = dz_seq[:, t]
        dz[:, :h_dim] = di * i_t * (1.0 - i_t)
        dz[:, h_dim : 2 * h_dim] = df * f_t * (1.0 - f_t)
        dz[:, 2 * h_dim : 3 * h_dim] = dg * (1.0 - g_t**2)
        dz[:, 3 * h_dim :] = do * o_t * (1.0 - o_t)

        d_wh += h_prev.T @ dz
        dh_carry = dz @ wh.T
        dc_carry = dc * f_t

    flat_x = x.reshape(batch * width, -1)
    flat_dz = dz_seq.reshape(batch * width, 4 * h_dim)
    d_wx = flat_x.T @ flat_dz
    d_b = flat_dz.sum(axis=0)
    dx = (flat_dz @ wx.T).reshape(x.shape)
    return dx, d_wx, d_wh, d_b


def _check_input(x: np.ndarray, params: ModelParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise ValueError(
            f"expected input of shape (batch, width, {params.input_size}), "
            f"got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in model input")
    return x


def make_dropout_mask(
    shape: tuple[int, ...], dropout: float, rng: np.random.Generator
) -> np.ndarray:
    """Inverted dropout mask: zeros with probability ``dropout``, survivors
    scaled by 1/(1-dropout) so the expected activation is unchanged."""
    keep = rng.random(shape) >= dropout
    return keep.astype(np.float64) / (1.0 - dropout)


def encoder_forward(
    x: np.ndarray,
    params: ModelParams,
    *,
    train_mode: bool = False,
    dropout_mask: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
):
    """Encode a batch of windows into fixed-size feature vectors.

    In train mode, inter-layer dropout uses ``dropout_mask`` when given
    (fixed per call, which keeps gradient checks exact) or draws one from
    ``rng``. Returns (features, cache).
    """
    x = _check_input(x, params)
    a = params.arrays
    h1f, cache1f = _lstm_forward(x, a["enc1_fwd_wx"], a["enc1_fwd_wh"], a["enc1_fwd_b"], False)
    h1b, cache1b = _lstm_forward(x, a["enc1_bwd_wx"], a["enc1_bwd_wh"], a["enc1_bwd_b"], True)
    out1 = np.concatenate([h1f, h1b], axis=2)

    mask = None
    if train_mode and params.dropout > 0.0:
        if dropout_mask is not None:
            mask = np.asarray(dropout_mask, dtype=np.float64)
            if mask.shape != out1.shape:
                raise ValueError(f"dropout mask shape {mask.shape} != {out1.shape}")
        else:
            mask = make_dropout_mask(out1.shape, params.dropout, rng or np.random.default_rng())
        out1 = out1 * mask

    h2f, cache2f = _lstm_forward(out1, a["enc2_fwd_wx"], a["enc2_fwd_wh"], a["enc2_fwd_b"], False)
    h2b, cache2b = _lstm_forward(out1, a["enc2_bwd_wx"], a["enc2_bwd_wh"], a["enc2_bwd_b"], True)

    if params.pooling == "final":
        features = np.concatenate([h2f[:, -1], h2b[:, 0]], axis=1)
    else:
        features = np.concatenate([h2f, h2b], axis=2).mean(axis=1)

    cache = {
        "cache1f": cache1f,
        "cache1b": cache1b,
        "cache2f": cache2f,
        "cache2b": cache2b,
        "mask": mask,
        "width": x.shape[1],
        "pooling": params.pooling,
    }
    return features, cache


def encoder_backward(dfeatures: np.ndarray, cache, params: ModelParams):
    """Gradients of every encoder array given dLoss/dfeatures."""
    a = params.arrays
    h = params.hidden_size
    batch = dfeatures.shape[0]
    width = cache["width"]

    dh2f = np.zeros((batch, width, h))
    dh2b = np.zeros((batch, width, h))
    if cache["pooling"] == "final":
        dh2f[:, -1] = dfeatures[:, :h]
        dh2b[:, 0] = dfeatures[:, h:]
    else:
        dh2f += dfeatures[:, None, :h] / width
        dh2b += dfeatures[:, None, h:] / width

    dx2f, dwx2f, dwh2f, db2f = _lstm_backward(dh2f, cache["cache2f"], a["enc2_fwd_wx"], a["enc2_fwd_wh"])
    dx2b, dwx2b, dwh2b, db2b = _lstm_backward(dh2b, cache["cache2b"], a["enc2_bwd_wx"], a["enc2_bwd_wh"])
    dout1 = dx2f + dx2b
    if cache["mask"] is not None:
        dout1 = dout1 * cache["mask"]

    dh1f = dout1[:, :, :h]
    dh1b = dout1[:, :, h:]
    _, dwx1f, dwh1f, db1f = _lstm_backward(dh1f, cache["cache1f"], a["enc1_fwd_wx"], a["enc1_fwd_wh"])
    _, dwx1b, dwh1b, db1b = _lstm_backward(dh1b, cache["cache1b"], a["enc1_bwd_wx"], a["enc1_bwd_wh"])

    return {
        "enc1_fwd_wx": dwx1f,
        "enc1_fwd_wh": dwh1f,
        "enc1_fwd_b": db1f,
        "enc1_bwd_wx": dwx1b,
        "enc1_bwd_wh": dwh1b,
        "enc1_bwd_b": db1b,
        "enc2_fwd_wx": dwx2f,
        "enc2_fwd_wh": dwh2f,
        "enc2_fwd_b": db2f,
        "enc2_bwd_wx": dwx2b,
        "enc2_bwd_wh": dwh2b,
        "enc2_bwd_b": db2b,
    }


def heads_forward(features: np.ndarray, params: ModelParams):
    """Affine logits for both taxonomy levels."""
    a = params.arrays
    if features.ndim != 2 or features.shape[1] != params.feature_size:
        raise ValueError(
            f"expected features of shape (batch, {params.feature_size}), "
            f"got {features.shape}"
        )
    logits1 = features @ a["head1_w"] + a["head1_b"]
    logits2 = features @ a["head2_w"] + a["head2_b"]
    return logits1, logits2


def heads_backward(features, dlogits1, dlogits2, params: ModelParams):
    """Head gradients plus the gradient flowing back into the features."""
    a = params.arrays
    grads = {
        "head1_w": features.T @ dlogits1,
        "head1_b": dlogits1.sum(axis=0),
        "head2_w": features.T @ dlogits2,
        "head2_b": dlogits2.sum(axis=0),
    }
    dfeatures = dlogits1 @ a["head1_w"].T + dlogits2 @ a["head2_w"].T
    return grads, dfeatures


def model_forward(
    x: np.ndarray,
    params: ModelParams,
    *,
    train_mode: bool = False,
    dropout_mask: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
):
    """Full forward pass: (logits1, logits2, cache)."""
    features, cache = encoder_forward(
        x, params, train_mode=train_mode, dropout_mask=dropout_mask, rng=rng
    )
    logits1, logits2 = heads_forward(features, params)
    cache["features"] = features
    return logits1, logits2, cache


def model_backward(dlogits1, dlogits2, cache, params: ModelParams):
    """Gradients for every parameter array given the logit gradients."""
    head_grads, dfeatures = heads_backward(cache["features"], dlogits1, dlogits2, params)
    grads = encoder_backward(dfeatures, cache, params)
    grads.update(head_grads)
    return grads
