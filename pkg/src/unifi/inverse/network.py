"""Hand-built sequence network mapping feature frames to events and positions.

Architecture: a per-frame encoder (two dense layers) feeds a temporal context
block, either banded causal self-attention with a position-wise feedforward
(the default) or a tanh recurrence (the comparison baseline). Two heads read
the contextualized stream: a 4-way event classifier and a 2-D position
regressor.

Forward and backward passes are written out explicitly on float64 numpy
arrays; ``grad_check`` compares the analytic gradient against central finite
differences and is the correctness gate for every change in here.

Loss: lambda_sta * cross-entropy over events + lambda_pos * per-coordinate
Huber on positions, computed only on frames whose true event is not absence.
Sentinel (NaN) frames are excluded from both terms via the validity mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..domain import N_FEATURES, N_REAL_EVENTS, RealEvent
from ..errors import ConfigError

HUBER_DELTA = 0.5  # meters; transition point of the position loss

ARCHITECTURES = ("attention", "recurrent")


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions and seed.

    ``state_hidden`` sizes the per-frame state encoder, ``traj_hidden`` the
    position head. ``context`` bounds how far back the temporal block looks,
    in frames.
    """

    state_hidden: int = 256
    traj_hidden: int = 128
    context: int = 128
    n_heads_attn: int = 4
    architecture: str = "attention"
    d_model: int = 64
    ffn_hidden: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("state_hidden", "traj_hidden", "context", "n_heads_attn", "d_model", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.d_model % self.n_heads_attn != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads_attn ({self.n_heads_attn})"
            )


# The five evaluated configurations; setting 5 also adjusts training
# hyper-parameters (see training.setting_configs).
MODEL_SETTINGS: dict[int, dict] = {
    1: {"state_hidden": 256, "traj_hidden": 128},
    2: {"state_hidden": 128, "traj_hidden": 128},
    3: {"state_hidden": 512, "traj_hidden": 128},
    4: {"state_hidden": 256, "traj_hidden": 256},
    5: {"state_hidden": 256, "traj_hidden": 128},
}

Params = dict[str, np.ndarray]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter name -> shape map; the order fixes serialization."""
    hs, ht, d, f = cfg.state_hidden, cfg.traj_hidden, cfg.d_model, cfg.ffn_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "enc_w1": (N_FEATURES, hs),
        "enc_b1": (hs,),
        "enc_w2": (hs, d),
        "enc_b2": (d,),
    }
    if cfg.architecture == "attention":
        shapes.update(
            {
                "attn_wq": (d, d),
                "attn_wk": (d, d),
                "attn_wv": (d, d),
                "attn_wo": (d, d),
                "ffn_w1": (d, f),
                "ffn_b1": (f,),
                "ffn_w2": (f, d),
                "ffn_b2": (d,),
            }
        )
    else:
        shapes.update(
            {
                "rnn_wx": (d, d),
                "rnn_wh": (d, d),
                "rnn_b": (d,),
            }
        )
    shapes.update(
        {
            "ev_w": (d, N_REAL_EVENTS),
            "ev_b": (N_REAL_EVENTS,),
            "pos_w1": (d, ht),
            "pos_b1": (ht,),
            "pos_w2": (ht, 2),
            "pos_b2": (2,),
        }
    )
    return shapes


def init_params(cfg: ModelConfig) -> Params:
    """Seeded scaled-Gaussian initialization (std 1/sqrt(fan_in), zero biases)."""
    rng = np.random.default_rng(cfg.seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
    return params


def flatten_params(params: Params, cfg: ModelConfig) -> np.ndarray:
    return np.concatenate([params[name].reshape(-1) for name in param_shapes(cfg)])


def unflatten_params(flat: np.ndarray, cfg: ModelConfig) -> Params:
    shapes = param_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes.values())
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (total,):
        raise ConfigError(f"parameter vector has {flat.shape[0]} entries, config needs {total}")
    out: Params = {}
    offset = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        out[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    return out


def positional_encoding(t: int, d: int) -> np.ndarray:
    """Standard sinusoidal encoding, (t, d)."""
    pos = np.arange(t)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.empty((t, d))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


def _attention_mask(t: int, context: int, valid: np.ndarray) -> np.ndarray:
    """(B, T, T) boolean: query i may attend key j."""
    idx = np.arange(t)
    band = (idx[None, :] <= idx[:, None]) & (idx[:, None] - idx[None, :] < context)
    return band[None, :, :] & valid[:, None, :]


def forward(params: Params, cfg: ModelConfig, x: np.ndarray, valid: np.ndarray) -> dict:
    """Run the network; returns a cache with every intermediate needed for backward.

    ``x`` is (B, T, 5) with sentinel frames already zeroed; ``valid`` is
    (B, T) bool marking frames that carry real data.
    """
    x = np.asarray(x, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    b, t, _ = x.shape
    h1 = np.tanh(x @ params["enc_w1"] + params["enc_b1"])
    h2 = h1 @ params["enc_w2"] + params["enc_b2"]

    cache: dict = {"x": x, "valid": valid, "h1": h1, "h2": h2}
    if cfg.architecture == "attention":
        e = h2 + positional_encoding(t, cfg.d_model)[None]
        nh, dh = cfg.n_heads_attn, cfg.d_model // cfg.n_heads_attn

        def to_heads(m):
            return m.reshape(b, t, nh, dh).transpose(0, 2, 1, 3)

        q = to_heads(e @ params["attn_wq"])
        k = to_heads(e @ params["attn_wk"])
        v = to_heads(e @ params["attn_wv"])
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        allowed = _attention_mask(t, cfg.context, valid)[:, None, :, :]
        scores = np.where(allowed, scores, -np.inf)
        # Rows with no allowed key (invalid queries) get a uniform, unused
        # distribution instead of NaN.
        dead = ~allowed.any(axis=3, keepdims=True)
        scores = np.where(dead, 0.0, scores)
        scores -= scores.max(axis=3, keepdims=True)
        expv = np.exp(scores)
        attn = expv / expv.sum(axis=3, keepdims=True)
        z = attn @ v  # (B, nh, T, dh)
        z_merged = z.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
        att_out = z_merged @ params["attn_wo"]
        u = e + att_out
        f1 = np.tanh(u @ params["ffn_w1"] + params["ffn_b1"])
        g = u + f1 @ params["ffn_w2"] + params["ffn_b2"]
        cache.update({"e": e, "q": q, "k": k, "v": v, "attn": attn, "z_merged": z_merged, "u": u, "f1": f1})
    else:
        s = np.empty((b, t, cfg.d_model))
        prev = np.zeros((b, cfg.d_model))
        wx, wh, bias = params["rnn_wx"], params["rnn_wh"], params["rnn_b"]
        for i in range(t):
            prev = np.tanh(h2[:, i] @ wx + prev @ wh + bias)
            s[:, i] = prev
        g = s
        cache["s"] = s

    logits = g @ params["ev_w"] + params["ev_b"]
    p1 = np.tanh(g @ params["pos_w1"] + params["pos_b1"])
    pos = p1 @ params["pos_w2"] + params["pos_b2"]
    cache.update({"g": g, "logits": logits, "p1": p1, "pos": pos})
    return cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_terms(cache: dict, y: np.ndarray, pos_true: np.ndarray) -> dict:
    """Unweighted loss sums and mask counts for a forward cache."""
    valid = cache["valid"]
    logits = cache["logits"]
    pos = cache["pos"]
    logp = _log_softmax(logits)
    b, t, _ = logits.shape
    y = np.asarray(y)
    onehot_ll = np.take_along_axis(logp, y[..., None], axis=2)[..., 0]
    ce = -(onehot_ll * valid).sum()

    pos_mask = valid & (y != RealEvent.ABSENCE.value)
    r = pos - np.asarray(pos_true, dtype=np.float64)
    absr = np.abs(r)
    hub = np.where(absr <= HUBER_DELTA, 0.5 * r * r, HUBER_DELTA * (absr - 0.5 * HUBER_DELTA))
    hub_sum = (hub.sum(axis=2) * pos_mask).sum()

    return {
        "ce_sum": float(ce),
        "pos_sum": float(hub_sum),
        "n_ev": int(valid.sum()),
        "n_pos": int(pos_mask.sum()),
        "pos_mask": pos_mask,
    }


def backward(
    params: Params,
    cfg: ModelConfig,
    cache: dict,
    y: np.ndarray,
    pos_true: np.ndarray,
    w_ce: float,
    w_pos: float,
) -> Params:
    """Gradients of w_ce * CE_sum + w_pos * Huber_sum w.r.t. every parameter."""
    x, valid = cache["x"], cache["valid"]
    g, logits, p1, pos = cache["g"], cache["logits"], cache["p1"], cache["pos"]
    b, t, _ = x.shape
    y = np.asarray(y)

    logp = _log_softmax(logits)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=2)
    dlogits = (probs - onehot) * valid[..., None] * w_ce

    pos_mask = valid & (y != RealEvent.ABSENCE.value)
    r = pos - np.asarray(pos_true, dtype=np.float64)
    dpos = np.clip(r, -HUBER_DELTA, HUBER_DELTA) * pos_mask[..., None] * w_pos

    grads: Params = {name: np.zeros_like(p) for name, p in params.items()}

    def flat(m):
        return m.reshape(-1, m.shape[-1])

    grads["ev_w"] += flat(g).T @ flat(dlogits)
    grads["ev_b"] += dlogits.sum(axis=(0, 1))
    dg = dlogits @ params["ev_w"].T

    grads["pos_w2"] += flat(p1).T @ flat(dpos)
    grads["pos_b2"] += dpos.sum(axis=(0, 1))
    dp1 = (dpos @ params["pos_w2"].T) * (1.0 - p1 * p1)
    grads["pos_w1"] += flat(g).T @ flat(dp1)
    grads["pos_b1"] += dp1.sum(axis=(0, 1))
    dg += dp1 @ params["pos_w1"].T

    if cfg.architecture == "attention":
        e, q, k, v, attn, z_merged, u, f1 = (
            cache["e"],
            cache["q"],
            cache["k"],
            cache["v"],
            cache["attn"],
            cache["z_merged"],
            cache["u"],
            cache["f1"],
        )
        nh, dh = cfg.n_heads_attn, cfg.d_model // cfg.n_heads_attn
        # FFN block (residual).
        du = dg.copy()
        grads["ffn_w2"] += flat(f1).T @ flat(dg)
        grads["ffn_b2"] += dg.sum(axis=(0, 1))
        df1 = (dg @ params["ffn_w2"].T) * (1.0 - f1 * f1)
        grads["ffn_w1"] += flat(u).T @ flat(df1)
        grads["ffn_b1"] += df1.sum(axis=(0, 1))
        du += df1 @ params["ffn_w1"].T
        # Attention block (residual).
        de = du.copy()
        grads["attn_wo"] += flat(z_merged).T @ flat(du)
        dz_merged = du @ params["attn_wo"].T
        dz = dz_merged.reshape(b, t, nh, dh).transpose(0, 2, 1, 3)
        dattn = dz @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dz
        dscores = attn * (dattn - (attn * dattn).sum(axis=3, keepdims=True))
        dscores /= math.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        def from_heads(m):
            return m.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)

        dq_m, dk_m, dv_m = from_heads(dq), from_heads(dk), from_heads(dv)
        grads["attn_wq"] += flat(e).T @ flat(dq_m)
        grads["attn_wk"] += flat(e).T @ flat(dk_m)
        grads["attn_wv"] += flat(e).T @ flat(dv_m)
        de += dq_m @ params["attn_wq"].T + dk_m @ params["attn_wk"].T + dv_m @ params["attn_wv"].T
        dh2 = de  # positional encoding is constant
    else:
        s = cache["s"]
        h2 = cache["h2"]
        wx, wh = params["rnn_wx"], params["rnn_wh"]
        dh2 = np.zeros_like(h2)
        ds_next = np.zeros((b, cfg.d_model))
        for i in range(t - 1, -1, -1):
            ds = dg[:, i] + ds_next
            dpre = ds * (1.0 - s[:, i] * s[:, i])
            prev = s[:, i - 1] if i > 0 else np.zeros((b, cfg.d_model))
            grads["rnn_wx"] += h2[:, i].T @ dpre
            grads["rnn_wh"] += prev.T @ dpre
            grads["rnn_b"] += dpre.sum(axis=0)
            dh2[:, i] = dpre @ wx.T
            ds_next = dpre @ wh.T

    h1 = cache["h1"]
    grads["enc_w2"] += flat(h1).T @ flat(dh2)
    grads["enc_b2"] += dh2.sum(axis=(0, 1))
    dh1 = (dh2 @ params["enc_w2"].T) * (1.0 - h1 * h1)
    grads["enc_w1"] += flat(x).T @ flat(dh1)
    grads["enc_b1"] += dh1.sum(axis=(0, 1))
    return grads


def weighted_loss(
    params: Params,
    cfg: ModelConfig,
    x: np.ndarray,
    valid: np.ndarray,
    y: np.ndarray,
    pos_true: np.ndarray,
    lambda_sta: float,
    lambda_pos: float,
    reduction: str = "mean",
) -> tuple[float, dict]:
    """Total loss under sum or mean reduction, plus the raw terms."""
    cache = forward(params, cfg, x, valid)
    terms = loss_terms(cache, y, pos_true)
    w_ce, w_pos = loss_weights(terms, lambda_sta, lambda_pos, reduction)
    total = w_ce * terms["ce_sum"] + w_pos * terms["pos_sum"]
    return float(total), terms


def loss_weights(terms: Mapping, lambda_sta: float, lambda_pos: float, reduction: str) -> tuple[float, float]:
    if reduction == "sum":
        return lambda_sta, lambda_pos
    if reduction == "mean":
        return (
            lambda_sta / max(terms["n_ev"], 1),
            lambda_pos / max(terms["n_pos"], 1),
        )
    raise ConfigError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def loss_and_grads(
    params: Params,
    cfg: ModelConfig,
    x: np.ndarray,
    valid: np.ndarray,
    y: np.ndarray,
    pos_true: np.ndarray,
    w_ce: float,
    w_pos: float,
) -> tuple[float, dict, Params]:
    cache = forward(params, cfg, x, valid)
    terms = loss_terms(cache, y, pos_true)
    total = w_ce * terms["ce_sum"] + w_pos * terms["pos_sum"]
    grads = backward(params, cfg, cache, y, pos_true, w_ce, w_pos)
    return float(total), terms, grads


def grad_check(
    cfg: ModelConfig,
    x: np.ndarray,
    valid: np.ndarray,
    y: np.ndarray,
    pos_true: np.ndarray,
    lambda_sta: float = 1.0,
    lambda_pos: float = 1.0,
    reduction: str = "sum",
    step: float = 1e-5,
    params: Params | None = None,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    Relative error uses max(1e-6, |g_a| + |g_fd|) in the denominator so that
    near-zero gradients are compared at an absolute 1e-6 scale.
    """
    if params is None:
        params = init_params(cfg)
    base_terms = weighted_loss(params, cfg, x, valid, y, pos_true, lambda_sta, lambda_pos, reduction)[1]
    w_ce, w_pos = loss_weights(base_terms, lambda_sta, lambda_pos, reduction)
    _, _, grads = loss_and_grads(params, cfg, x, valid, y, pos_true, w_ce, w_pos)

    worst = 0.0
    for name in param_shapes(cfg):
        p = params[name]
        g = grads[name]
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            lo_plus = weighted_loss(params, cfg, x, valid, y, pos_true, lambda_sta, lambda_pos, reduction)[0]
            p[idx] = orig - step
            lo_minus = weighted_loss(params, cfg, x, valid, y, pos_true, lambda_sta, lambda_pos, reduction)[0]
            p[idx] = orig
            fd = (lo_plus - lo_minus) / (2 * step)
            rel = abs(g[idx] - fd) / max(1e-6, abs(g[idx]) + abs(fd))
            worst = max(worst, rel)
            it.iternext()
    return worst
