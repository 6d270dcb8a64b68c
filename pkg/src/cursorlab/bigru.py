"""Bidirectional GRU classifier over padded (x, y, t) sequences.

Implemented directly on numpy arrays: forward recurrence, backpropagation
through time, inverted dropout, Adam, and early stopping all live here.

Frozen cell convention (gate order z, r, c inside stacked matrices):

    z_t = sigmoid(x_t Wx_z + h_prev Wh_z + b_z)
    r_t = sigmoid(x_t Wx_r + h_prev Wh_r + b_r)
    c_t = tanh(x_t Wx_c + (r_t * h_prev) Wh_c + b_c)    reset gates h_prev
                                                        before the matmul
    h_t = (1 - z_t) * h_prev + z_t * c_t

Both directions run over all T rows, zero padding included; there is no
masking by default (a masked variant sits behind a config flag).  The two
final hidden states are concatenated, dropped out (inverted, rate q), and
fed to a dense sigmoid unit that outputs the probability of class 1.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import substream
from .sessions import SequenceTensor

log = logging.getLogger(__name__)

_PRED_CHUNK = 256  # fixed inference batch so scores never depend on callers


@dataclass(frozen=True)
class TrainConfig:
    max_len: int = 100
    hidden: int = 64
    dropout: float = 0.25
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 400
    early_stop_patience: int = 40
    seed: int = 0
    validation_fraction: float = 0.10
    masked: bool = False          # skip state updates on padding rows
    standardize: bool = False     # z-score content rows with train statistics
    precision: str = "float64"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("bad optimizer constants")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform input and dense weights, orthogonal recurrent blocks,
    zero biases.  Glorot limits are computed per gate block."""
    h = cfg.hidden
    dt = cfg.dtype

    def glorot(fan_in: int, fan_out: int, size) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=size).astype(dt)

    def orthogonal(n: int) -> np.ndarray:
        a = rng.normal(size=(n, n))
        q, r = np.linalg.qr(a)
        return (q * np.sign(np.diag(r))).astype(dt)

    params: dict[str, np.ndarray] = {}
    for d in ("fwd", "bwd"):
        params[f"{d}_Wx"] = np.concatenate([glorot(3, h, (3, h)) for _ in range(3)], axis=1)
        params[f"{d}_Wh"] = np.concatenate([orthogonal(h) for _ in range(3)], axis=1)
        params[f"{d}_b"] = np.zeros(3 * h, dtype=dt)
    params["dense_w"] = glorot(2 * h, 1, (2 * h,))
    params["dense_b"] = np.zeros(1, dtype=dt)
    return params


def gru_cell_forward(x_t: np.ndarray, h_prev: np.ndarray, Wx: np.ndarray,
                     Wh: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Single unbatched cell step; the reference form of the recurrence."""
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev))):
        raise FloatingPointError("non-finite cell inputs")
    h = h_prev.shape[-1]
    g = x_t @ Wx + b
    zr = _sigmoid(g[..., :2 * h] + h_prev @ Wh[:, :2 * h])
    z, r = zr[..., :h], zr[..., h:]
    c = np.tanh(g[..., 2 * h:] + (r * h_prev) @ Wh[:, 2 * h:])
    return (1.0 - z) * h_prev + z * c


def _run_direction(X: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray,
                   upd: np.ndarray | None):
    """Full-length recurrence for one direction.

    X is (B, T, 3) already oriented in processing order.  ``upd`` is an
    optional (B, T) 0/1 matrix; zero rows freeze the state (masked mode).
    Returns the final state plus the per-step caches backprop needs.
    """
    B, T, _ = X.shape
    h_dim = Wh.shape[0]
    pre_x = X.reshape(B * T, 3) @ Wx
    pre_x = pre_x.reshape(B, T, 3 * h_dim) + b

    h = np.zeros((B, h_dim), dtype=X.dtype)
    Hprev = np.empty((B, T, h_dim), dtype=X.dtype)
    Z = np.empty_like(Hprev)
    R = np.empty_like(Hprev)
    C = np.empty_like(Hprev)
    for t in range(T):
        Hprev[:, t] = h
        g = pre_x[:, t]
        zr = _sigmoid(g[:, :2 * h_dim] + h @ Wh[:, :2 * h_dim])
        z, r = zr[:, :h_dim], zr[:, h_dim:]
        c = np.tanh(g[:, 2 * h_dim:] + (r * h) @ Wh[:, 2 * h_dim:])
        h_new = (1.0 - z) * h + z * c
        if upd is not None:
            u = upd[:, t:t + 1]
            h_new = u * h_new + (1.0 - u) * h
        Z[:, t], R[:, t], C[:, t] = z, r, c
        h = h_new
    return h, {"X": X, "Hprev": Hprev, "Z": Z, "R": R, "C": C, "upd": upd}


def _direction_backward(dh_final: np.ndarray, cache: dict, Wh: np.ndarray):
    """Backprop through one direction; returns parameter grads."""
    X = cache["X"]
    Hprev = cache["Hprev"]
    Z = cache["Z"]
    R = cache["R"]
    C = cache["C"]
    upd = cache["upd"]
    B, T, h_dim = Hprev.shape
    Wh_zr = Wh[:, :2 * h_dim]
    Wh_c = Wh[:, 2 * h_dim:]

    Dg = np.empty((B, T, 3 * h_dim), dtype=X.dtype)  # pre-activation grads
    dh = dh_final
    for t in range(T - 1, -1, -1):
        h_prev, z, r, c = Hprev[:, t], Z[:, t], R[:, t], C[:, t]
        if upd is not None:
            u = upd[:, t:t + 1]
            dh_step = dh * u
            dh_carry = dh * (1.0 - u)
        else:
            dh_step = dh
            dh_carry = 0.0
        dz = dh_step * (c - h_prev) * z * (1.0 - z)
        dc = dh_step * z * (1.0 - c * c)
        dh_prev = dh_step * (1.0 - z)
        d_rh = dc @ Wh_c.T
        dr = d_rh * h_prev * r * (1.0 - r)
        dh_prev = dh_prev + d_rh * r
        dzr = np.concatenate([dz, dr], axis=1)
        dh_prev = dh_prev + dzr @ Wh_zr.T
        Dg[:, t, :h_dim] = dz
        Dg[:, t, h_dim:2 * h_dim] = dr
        Dg[:, t, 2 * h_dim:] = dc
        dh = dh_prev + dh_carry

    flatX = X.reshape(B * T, 3)
    flatDg = Dg.reshape(B * T, 3 * h_dim)
    dWx = flatX.T @ flatDg
    db = flatDg.sum(axis=0)
    RH = R * Hprev  # inputs to the candidate's recurrent matmul
    flatH = Hprev.reshape(B * T, h_dim)
    dWh = np.empty_like(Wh)
    dWh[:, :2 * h_dim] = flatH.T @ flatDg[:, :2 * h_dim]
    dWh[:, 2 * h_dim:] = RH.reshape(B * T, h_dim).T @ flatDg[:, 2 * h_dim:]
    return dWx, dWh, db


def bigru_forward(X: np.ndarray, lengths: np.ndarray | None,
                  params: dict[str, np.ndarray], cfg: TrainConfig,
                  train_mode: bool = False,
                  dropout_mask: np.ndarray | None = None,
                  rng: np.random.Generator | None = None):
    """Probability of class 1 for a batch of (B, T, 3) sequences.

    ``lengths`` is only consulted in masked mode.  In train_mode, inverted
    dropout runs on the concatenated final states using ``dropout_mask`` or
    a mask drawn from ``rng``; the returned cache carries everything
    bigru_backward needs.
    """
    X = np.ascontiguousarray(X, dtype=cfg.dtype)
    B, T, _ = X.shape
    h_dim = cfg.hidden

    upd_f = upd_b = None
    if cfg.masked:
        if lengths is None:
            raise ValueError("masked mode needs sequence lengths")
        steps = np.arange(T)[None, :]
        upd_f = (steps < np.asarray(lengths)[:, None]).astype(X.dtype)
        upd_b = upd_f[:, ::-1]

    h_f, cache_f = _run_direction(X, params["fwd_Wx"], params["fwd_Wh"],
                                  params["fwd_b"], upd_f)
    Xr = X[:, ::-1]
    h_b, cache_b = _run_direction(Xr, params["bwd_Wx"], params["bwd_Wh"],
                                  params["bwd_b"], upd_b)

    concat = np.concatenate([h_f, h_b], axis=1)
    q = cfg.dropout
    if train_mode and q > 0.0:
        if dropout_mask is None:
            if rng is None:
                raise ValueError("train_mode dropout needs a mask or an rng")
            dropout_mask = (rng.random(concat.shape) >= q).astype(X.dtype)
        dropped = concat * dropout_mask / (1.0 - q)
    else:
        dropout_mask = None
        dropped = concat

    logit = dropped @ params["dense_w"] + params["dense_b"][0]
    p = _sigmoid(logit)
    cache = {
        "cache_f": cache_f, "cache_b": cache_b, "dropped": dropped,
        "dropout_mask": dropout_mask, "p": p, "params": params, "cfg": cfg,
    }
    return p, cache


def bigru_backward(cache: dict, y: np.ndarray) -> dict[str, np.ndarray]:
    """Exact mean-BCE gradients for every parameter in the batch."""
    params = cache["params"]
    cfg: TrainConfig = cache["cfg"]
    p = cache["p"]
    B = p.shape[0]
    y = np.asarray(y, dtype=p.dtype)

    dlogit = (p - y) / B                     # sigmoid + BCE identity
    grads: dict[str, np.ndarray] = {}
    grads["dense_w"] = cache["dropped"].T @ dlogit
    grads["dense_b"] = np.array([dlogit.sum()], dtype=p.dtype)
    ddropped = np.outer(dlogit, params["dense_w"])
    mask = cache["dropout_mask"]
    if mask is not None:
        ddropped = ddropped * mask / (1.0 - cfg.dropout)
    h_dim = cfg.hidden
    dWx, dWh, db = _direction_backward(ddropped[:, :h_dim], cache["cache_f"],
                                       params["fwd_Wh"])
    grads["fwd_Wx"], grads["fwd_Wh"], grads["fwd_b"] = dWx, dWh, db
    dWx, dWh, db = _direction_backward(ddropped[:, h_dim:], cache["cache_b"],
                                       params["bwd_Wh"])
    grads["bwd_Wx"], grads["bwd_Wh"], grads["bwd_b"] = dWx, dWh, db
    return grads


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        params[k] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)


# ---------------------------------------------------------------------------
# sequence scaling (optional, train-fitted)


@dataclass(frozen=True)
class SequenceScaler:
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Z-score content rows per channel; padding rows stay exactly zero."""
        out = np.array(X, dtype=np.float64, copy=True)
        T = X.shape[1]
        content = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
        out[content] = (out[content] - self.mean) / self.sd
        out[~content] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceScaler":
        return cls(mean=np.asarray(d["mean"]), sd=np.asarray(d["sd"]))


def fit_scaler(X: np.ndarray, lengths: np.ndarray) -> SequenceScaler:
    T = X.shape[1]
    content = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
    rows = X[content]
    sd = rows.std(axis=0)
    sd[sd == 0] = 1.0
    return SequenceScaler(mean=rows.mean(axis=0), sd=sd)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainedBiGRU:
    params: dict[str, np.ndarray]
    config: TrainConfig
    scaler: SequenceScaler | None
    history: list[dict]
    best_epoch: int

    def predict(self, seq: SequenceTensor) -> np.ndarray:
        X = seq.data
        lengths = seq.lengths
        if self.scaler is not None:
            X = self.scaler.transform(X, lengths)
        out = np.empty(X.shape[0], dtype=np.float64)
        for lo in range(0, X.shape[0], _PRED_CHUNK):
            hi = min(lo + _PRED_CHUNK, X.shape[0])
            p, _ = bigru_forward(X[lo:hi], lengths[lo:hi], self.params,
                                 self.config, train_mode=False)
            out[lo:hi] = p
        return out

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for rec in self.history:
            w.writerow([rec["epoch"], f"{rec['train_loss']:.8f}", f"{rec['val_loss']:.8f}"])
        return buf.getvalue()


def _stratified_val_split(y: np.ndarray, fraction: float,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    val: list[int] = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        k = max(1, int(idx.size * fraction + 0.5))
        val.extend(idx[:k].tolist())
    val_arr = np.asarray(sorted(val))
    fit_mask = np.ones(y.size, dtype=bool)
    fit_mask[val_arr] = False
    return np.flatnonzero(fit_mask), val_arr


def train_bigru(seq: SequenceTensor, labels, cfg: TrainConfig) -> TrainedBiGRU:
    """Train with seeded shuffled mini-batches and val-loss early stopping.

    A validation_fraction slice is carved from the training data (stratified)
    and its loss is monitored each epoch; training stops after
    ``early_stop_patience`` epochs without improvement and the best-scoring
    parameter snapshot is returned.  Fully deterministic for a fixed seed.
    """
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("training data holds a single class")
    X = np.asarray(seq.data, dtype=cfg.dtype)
    lengths = np.asarray(seq.lengths)

    scaler = None
    if cfg.standardize:
        scaler = fit_scaler(X, lengths)
        X = scaler.transform(X, lengths).astype(cfg.dtype)

    split_rng = substream(cfg.seed, "split", index=2)
    fit_idx, val_idx = _stratified_val_split(y, cfg.validation_fraction, split_rng)
    X_fit, y_fit, len_fit = X[fit_idx], y[fit_idx], lengths[fit_idx]
    X_val, y_val, len_val = X[val_idx], y[val_idx], lengths[val_idx]

    params = init_params(cfg, substream(cfg.seed, "init"))
    state = AdamState.for_params(params)
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")

    def eval_loss(Xe, ye, lene) -> float:
        total = 0.0
        for lo in range(0, Xe.shape[0], _PRED_CHUNK):
            hi = min(lo + _PRED_CHUNK, Xe.shape[0])
            p, _ = bigru_forward(Xe[lo:hi], lene[lo:hi], params, cfg, train_mode=False)
            total += bce_loss(p, ye[lo:hi]) * (hi - lo)
        return total / Xe.shape[0]

    best_val = np.inf
    best_params = {k: p.copy() for k, p in params.items()}
    best_epoch = 0
    history: list[dict] = []
    since_best = 0
    n = X_fit.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        train_total = 0.0
        for lo in range(0, n, cfg.batch_size):
            bi = order[lo:lo + cfg.batch_size]
            p, cache = bigru_forward(X_fit[bi], len_fit[bi], params, cfg,
                                     train_mode=True, rng=dropout_rng)
            train_total += bce_loss(p, y_fit[bi]) * bi.size
            grads = bigru_backward(cache, y_fit[bi])
            adam_step(params, grads, state, cfg)
        train_loss = train_total / n
        val_loss = eval_loss(X_val, y_val, len_val)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: p.copy() for k, p in params.items()}
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    return TrainedBiGRU(params=best_params, config=cfg, scaler=scaler,
                        history=history, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# checkpoints

_CHECKPOINT_VERSION = 1


def save_checkpoint(model: TrainedBiGRU, path: str | Path) -> None:
    meta = {
        "kind": "bigru",
        "version": _CHECKPOINT_VERSION,
        "config": {**model.config.__dict__},
        "scaler": model.scaler.to_dict() if model.scaler else None,
        "best_epoch": model.best_epoch,
        "history": model.history,
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    # a file handle keeps np.savez from appending .npz to extensionless paths
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path: str | Path) -> TrainedBiGRU:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta["version"] != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = {k[len("param_"):]: z[k] for k in z.files if k.startswith("param_")}
    cfg = TrainConfig(**meta["config"])
    scaler = SequenceScaler.from_dict(meta["scaler"]) if meta["scaler"] else None
    return TrainedBiGRU(params=params, config=cfg, scaler=scaler,
                        history=meta["history"], best_epoch=meta["best_epoch"])
