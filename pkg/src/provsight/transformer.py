"""Encoder-only Transformer over encoded event windows.

Input rows are projected to token vectors, a learned CLS token is
prepended, positions are encoded by sequence index, and a stack of
post-norm self-attention encoders runs with pad positions masked out of
the attention keys. Only the final CLS representation feeds the two
dense classification layers; softmax yields the class probabilities.

Everything runs on the in-repo autodiff core; no external framework.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import DimensionMismatch, NonFiniteLoss
from .nn import (
    Adam,
    Tensor,
    concat,
    dropout,
    finite_difference_check,
    glorot,
    log_softmax,
    masked_softmax,
    parameter,
)


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int
    token_dim: int = 60
    n_encoders: int = 4
    n_heads: int = 8
    ff_dim: int = 240
    head_dim: int | None = None  # None: ceil(token_dim / n_heads)
    dropout: float = 0.1
    max_seq: int = 201  # W + 1 (CLS)
    head_hidden: int = 60
    weight_reg: float = 1e-2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("input_dim", "token_dim", "n_encoders", "n_heads", "ff_dim",
                     "head_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_seq < 2:
            raise ValueError("max_seq must be >= 2 (CLS + at least one event)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.head_dim is not None and self.head_dim <= 0:
            raise ValueError("head_dim must be positive")

    @property
    def effective_head_dim(self) -> int:
        if self.head_dim is not None:
            return self.head_dim
        return math.ceil(self.token_dim / self.n_heads)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 80
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")


def sinusoidal_table(max_seq: int, dim: int, dtype) -> np.ndarray:
    """Fixed position table: interleaved sin/cos over sequence index."""
    pos = np.arange(max_seq, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


class TransformerModel:
    """Parameter container plus forward/loss; immutable architecture."""

    def __init__(self, cfg: TransformerConfig, init: bool = True):
        self.cfg = cfg
        self.np_dtype = np.dtype(cfg.dtype)
        self.pos_table = sinusoidal_table(cfg.max_seq, cfg.token_dim, self.np_dtype)
        self.params: dict[str, Tensor] = {}
        self.last_probs_: np.ndarray | None = None
        if init:
            self._init_params()

    # --- parameters ---

    def parameter_names(self) -> list[str]:
        names = ["embed.w", "embed.b", "cls"]
        for i in range(self.cfg.n_encoders):
            for part in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
                names.append(f"enc{i}.attn.{part}")
            names += [f"enc{i}.ln1.g", f"enc{i}.ln1.b",
                      f"enc{i}.ff.w1", f"enc{i}.ff.b1", f"enc{i}.ff.w2", f"enc{i}.ff.b2",
                      f"enc{i}.ln2.g", f"enc{i}.ln2.b"]
        names += ["head.w1", "head.b1", "head.w2", "head.b2"]
        return names

    def _init_params(self) -> None:
        cfg = self.cfg
        dt = self.np_dtype
        rng = np.random.default_rng(cfg.seed)
        tok = cfg.token_dim
        hd = cfg.effective_head_dim
        proj = cfg.n_heads * hd
        p: dict[str, Tensor] = {}
        p["embed.w"] = parameter(glorot(rng, cfg.input_dim, tok, dt))
        p["embed.b"] = parameter(np.zeros(tok, dtype=dt))
        p["cls"] = parameter((rng.normal(0.0, 0.02, size=tok)).astype(dt))
        for i in range(cfg.n_encoders):
            for part in ("wq", "wk", "wv"):
                p[f"enc{i}.attn.{part}"] = parameter(glorot(rng, tok, proj, dt))
                p[f"enc{i}.attn.b{part[1]}"] = parameter(np.zeros(proj, dtype=dt))
            p[f"enc{i}.attn.wo"] = parameter(glorot(rng, proj, tok, dt))
            p[f"enc{i}.attn.bo"] = parameter(np.zeros(tok, dtype=dt))
            p[f"enc{i}.ln1.g"] = parameter(np.ones(tok, dtype=dt))
            p[f"enc{i}.ln1.b"] = parameter(np.zeros(tok, dtype=dt))
            p[f"enc{i}.ff.w1"] = parameter(glorot(rng, tok, cfg.ff_dim, dt))
            p[f"enc{i}.ff.b1"] = parameter(np.zeros(cfg.ff_dim, dtype=dt))
            p[f"enc{i}.ff.w2"] = parameter(glorot(rng, cfg.ff_dim, tok, dt))
            p[f"enc{i}.ff.b2"] = parameter(np.zeros(tok, dtype=dt))
            p[f"enc{i}.ln2.g"] = parameter(np.ones(tok, dtype=dt))
            p[f"enc{i}.ln2.b"] = parameter(np.zeros(tok, dtype=dt))
        p["head.w1"] = parameter(glorot(rng, tok, cfg.head_hidden, dt))
        p["head.b1"] = parameter(np.zeros(cfg.head_hidden, dtype=dt))
        p["head.w2"] = parameter(glorot(rng, cfg.head_hidden, 2, dt))
        p["head.b2"] = parameter(np.zeros(2, dtype=dt))
        self.params = p

    def parameter_list(self) -> list[Tensor]:
        return [self.params[name] for name in self.parameter_names()]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def training_state_bytes(self) -> int:
        """Persisted training footprint: weights plus two Adam moment buffers."""
        return 3 * sum(p.data.size * p.data.itemsize for p in self.params.values())

    # --- forward pieces ---

    def _layer_norm(self, x: Tensor, g: Tensor, b: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + 1e-5) ** -0.5 * g + b

    def _attention(self, x: Tensor, i: int, key_valid: np.ndarray,
                   rng) -> tuple[Tensor, np.ndarray]:
        cfg = self.cfg
        p = self.params
        batch, seq, _ = x.shape
        hd = cfg.effective_head_dim
        heads = cfg.n_heads

        def split(name_w, name_b):
            y = x @ p[name_w] + p[name_b]
            return y.reshape(batch, seq, heads, hd).swapaxes(1, 2)  # (B,H,S,hd)

        # scaling q instead of the scores avoids two passes over (B,H,S,S)
        q = split(f"enc{i}.attn.wq", f"enc{i}.attn.bq") * (1.0 / math.sqrt(hd))
        k = split(f"enc{i}.attn.wk", f"enc{i}.attn.bk")
        v = split(f"enc{i}.attn.wv", f"enc{i}.attn.bv")
        scores = q @ k.swapaxes(-1, -2)
        att = masked_softmax(scores, key_valid[:, None, None, :])
        mixed = dropout(att, cfg.dropout, rng) @ v
        mixed = mixed.swapaxes(1, 2).reshape(batch, seq, heads * hd)
        out = mixed @ p[f"enc{i}.attn.wo"] + p[f"enc{i}.attn.bo"]
        return out, att.data

    def _encode(self, X: np.ndarray, pad_mask: np.ndarray,
                rng) -> tuple[Tensor, np.ndarray, list[np.ndarray]]:
        """Token stack through all encoders; returns (tokens, key_valid, attention)."""
        cfg = self.cfg
        p = self.params
        batch, w, d = X.shape
        if d != cfg.input_dim:
            raise DimensionMismatch(f"expected input_dim {cfg.input_dim}, got {d}")
        if w + 1 > cfg.max_seq:
            raise DimensionMismatch(f"window of {w} events exceeds max_seq {cfg.max_seq}")
        x = Tensor(np.ascontiguousarray(X, dtype=self.np_dtype))
        tokens = x @ p["embed.w"] + p["embed.b"]
        cls = p["cls"].reshape(1, 1, cfg.token_dim).broadcast_to((batch, 1, cfg.token_dim))
        tokens = concat([cls, tokens], axis=1)  # (B, S, tok), S = w+1
        # scale embeddings above the unit-amplitude position table
        tokens = tokens * float(np.sqrt(cfg.token_dim))
        tokens = tokens + Tensor(self.pos_table[: w + 1])
        tokens = dropout(tokens, cfg.dropout, rng)
        key_valid = np.concatenate(
            [np.ones((batch, 1), dtype=bool), ~np.asarray(pad_mask, dtype=bool)], axis=1)
        attention: list[np.ndarray] = []
        for i in range(cfg.n_encoders):
            attended, att = self._attention(tokens, i, key_valid, rng)
            attention.append(att)
            tokens = self._layer_norm(tokens + dropout(attended, cfg.dropout, rng),
                                      p[f"enc{i}.ln1.g"], p[f"enc{i}.ln1.b"])
            hidden = (tokens @ p[f"enc{i}.ff.w1"] + p[f"enc{i}.ff.b1"]).gelu()
            hidden = dropout(hidden, cfg.dropout, rng)
            ff = hidden @ p[f"enc{i}.ff.w2"] + p[f"enc{i}.ff.b2"]
            tokens = self._layer_norm(tokens + dropout(ff, cfg.dropout, rng),
                                      p[f"enc{i}.ln2.g"], p[f"enc{i}.ln2.b"])
        return tokens, key_valid, attention

    def _logits(self, X: np.ndarray, pad_mask: np.ndarray,
                rng) -> tuple[Tensor, list[np.ndarray]]:
        p = self.params
        tokens, _, attention = self._encode(X, pad_mask, rng)
        cls_repr = tokens[:, 0, :]
        hidden = (cls_repr @ p["head.w1"] + p["head.b1"]).tanh()
        hidden = dropout(hidden, self.cfg.dropout, rng)
        return hidden @ p["head.w2"] + p["head.b2"], attention

    def forward_batch(self, X: np.ndarray, pad_mask: np.ndarray,
                      rng: np.random.Generator | None = None
                      ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Class probabilities (batch, 2) and per-layer attention maps.

        rng None means inference (dropout off); attention maps are the
        pre-dropout row-stochastic matrices (B, heads, S, S).
        """
        logits, attention = self._logits(X, pad_mask, rng)
        log_probs = log_softmax(logits)
        return np.exp(log_probs.data.astype(np.float64)), attention

    def loss_tensor(self, X: np.ndarray, pad_mask: np.ndarray, y: np.ndarray,
                    rng: np.random.Generator | None = None) -> Tensor:
        """Mean cross-entropy plus L2 of the classification-head weights.

        Side effect: last_probs_ holds this batch's class probabilities,
        so training loops get accuracy without a second forward pass.
        """
        if len(y) == 0:
            raise ValueError("empty batch")
        logits, _ = self._logits(X, pad_mask, rng)
        log_probs = log_softmax(logits)
        self.last_probs_ = np.exp(log_probs.data.astype(np.float64))
        onehot = np.zeros((len(y), 2), dtype=self.np_dtype)
        onehot[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
        ce = -(log_probs * Tensor(onehot)).sum(axis=-1).mean()
        p = self.params
        reg = ((p["head.w1"] * p["head.w1"]).sum() + (p["head.w2"] * p["head.w2"]).sum())
        return ce + reg * self.cfg.weight_reg

    def loss_and_grads(self, X: np.ndarray, pad_mask: np.ndarray, y: np.ndarray,
                       rng: np.random.Generator | None = None
                       ) -> tuple[float, dict[str, np.ndarray]]:
        for p in self.params.values():
            p.grad = None
        loss = self.loss_tensor(X, pad_mask, y, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss is {value}")
        loss.backward()
        return value, {name: p.grad for name, p in self.params.items()}

    # --- persistence plumbing ---

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].data for name in self.parameter_names()}

    @classmethod
    def from_arrays(cls, cfg: TransformerConfig, arrays: dict[str, np.ndarray]) -> "TransformerModel":
        model = cls(cfg, init=False)
        model.params = {}
        for name in model.parameter_names():
            if name not in arrays:
                raise DimensionMismatch(f"missing parameter {name}")
            model.params[name] = parameter(np.ascontiguousarray(arrays[name], dtype=model.np_dtype))
        return model

    def clone_weights(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_weights(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data = arrays[name].copy()


def forward(model: TransformerModel, x: np.ndarray, pad_mask: np.ndarray
            ) -> tuple[float, list[np.ndarray]]:
    """Single-window inference: malicious probability plus attention maps."""
    probs, attention = model.forward_batch(x[None], pad_mask[None])
    return float(probs[0, 1]), [a[0] for a in attention]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None
    val_acc: float | None


def _eval_split(model: TransformerModel, X, pad, y, batch_size: int) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for lo in range(0, len(y), batch_size):
        hi = min(lo + batch_size, len(y))
        loss = model.loss_tensor(X[lo:hi], pad[lo:hi], y[lo:hi], rng=None)
        total_loss += loss.item() * (hi - lo)
        correct += int((model.last_probs_.argmax(axis=1) == y[lo:hi]).sum())
    return total_loss / len(y), correct / len(y)


def train_model(model: TransformerModel, train: tuple[np.ndarray, np.ndarray, np.ndarray],
                val: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
                cfg: TrainConfig) -> tuple[TransformerModel, list[EpochStats]]:
    """Adam training with seeded shuffling; keeps the best-validation weights."""
    X, pad, y = train
    y = np.asarray(y, dtype=int)
    shuffle_rng = np.random.default_rng(cfg.seed)
    # SFC64: dropout masks are the single biggest RNG consumer
    dropout_rng = np.random.Generator(np.random.SFC64(cfg.seed + 1))
    opt = Adam(model.parameter_list(), lr=cfg.learning_rate,
               beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history: list[EpochStats] = []
    best_acc = -1.0
    best_loss = np.inf
    best_weights = model.clone_weights()
    since_best = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(y))
        epoch_loss = 0.0
        correct = 0
        for lo in range(0, len(y), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            rng = dropout_rng if model.cfg.dropout > 0 else None
            value, _ = model.loss_and_grads(X[idx], pad[idx], y[idx], rng)
            opt.step()
            epoch_loss += value * len(idx)
            correct += int((model.last_probs_.argmax(axis=1) == y[idx]).sum())
        train_loss = epoch_loss / len(y)
        train_acc = correct / len(y)
        val_loss = val_acc = None
        if val is not None:
            val_loss, val_acc = _eval_split(model, val[0], val[1],
                                            np.asarray(val[2], dtype=int), cfg.batch_size)
            # accuracy decides; loss breaks the frequent small-set ties
            if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
                best_acc = val_acc
                best_loss = val_loss
                best_weights = model.clone_weights()
                since_best = 0
            else:
                since_best += 1
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, train_acc=train_acc,
                                  val_loss=val_loss, val_acc=val_acc))
        if (cfg.early_stop_patience is not None and val is not None
                and since_best > cfg.early_stop_patience):
            break
    if val is not None:
        model.load_weights(best_weights)
    return model, history


def gradient_check(cfg: TransformerConfig | None = None, seed: int = 0,
                   window: int = 6, batch: int = 2, step: float = 1e-5) -> float:
    """Analytic vs central finite-difference gradients on a miniature model."""
    if cfg is None:
        cfg = TransformerConfig(input_dim=12, token_dim=8, n_encoders=1, n_heads=2,
                                ff_dim=16, max_seq=window + 1, head_hidden=8,
                                dropout=0.0, seed=seed, dtype="float64")
    if np.dtype(cfg.dtype) != np.float64:
        raise ValueError("gradient_check requires the float64 configuration")
    model = TransformerModel(cfg)
    rng = np.random.default_rng(seed + 1000)
    X = rng.normal(size=(batch, window, cfg.input_dim))
    pad = np.zeros((batch, window), dtype=bool)
    pad[:, window - 1] = True  # exercise the masking path
    y = rng.integers(0, 2, size=batch)

    def loss_fn():
        return model.loss_tensor(X, pad, y, rng=None)

    return finite_difference_check(loss_fn, model.parameter_list(), step=step)


class TransformerClassifier:
    """Estimator facade: fit/predict/predict_proba over encoded windows.

    X is a (n, W, D) matrix with a matching (n, W) pad mask; y holds 0/1
    labels. Trained state lands in model_ and history_.
    """

    def __init__(self, token_dim: int = 60, n_encoders: int = 4, n_heads: int = 8,
                 ff_dim: int = 240, head_dim: int | None = None, dropout: float = 0.1,
                 head_hidden: int = 60, weight_reg: float = 1e-2,
                 learning_rate: float = 1e-5, batch_size: int = 64, epochs: int = 80,
                 seed: int = 0, early_stop_patience: int | None = None,
                 dtype: str = "float32"):
        self.token_dim = token_dim
        self.n_encoders = n_encoders
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.head_dim = head_dim
        self.dropout = dropout
        self.head_hidden = head_hidden
        self.weight_reg = weight_reg
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.dtype = dtype

    def get_params(self, deep: bool = True) -> dict:
        return {
            "token_dim": self.token_dim, "n_encoders": self.n_encoders,
            "n_heads": self.n_heads, "ff_dim": self.ff_dim, "head_dim": self.head_dim,
            "dropout": self.dropout, "head_hidden": self.head_hidden,
            "weight_reg": self.weight_reg, "learning_rate": self.learning_rate,
            "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed,
            "early_stop_patience": self.early_stop_patience, "dtype": self.dtype,
        }

    def set_params(self, **kwargs) -> "TransformerClassifier":
        valid = self.get_params()
        for key, value in kwargs.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key}")
            setattr(self, key, value)
        return self

    def _validate(self, X, pad_mask, y=None):
        X = np.asarray(X)
        if X.ndim != 3:
            raise DimensionMismatch(f"X must be (n, W, D), got {X.shape}")
        if pad_mask is None:
            pad_mask = np.zeros(X.shape[:2], dtype=bool)
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != X.shape[:2]:
            raise DimensionMismatch("pad_mask must match (n, W)")
        if y is not None:
            y = np.asarray(y, dtype=int)
            if y.shape != (X.shape[0],) or not np.isin(y, (0, 1)).all():
                raise ValueError("y must hold one 0/1 label per window")
        return X, pad_mask, y

    def fit(self, X, y, pad_mask=None, X_val=None, y_val=None, pad_mask_val=None
            ) -> "TransformerClassifier":
        X, pad_mask, y = self._validate(X, pad_mask, y)
        cfg = TransformerConfig(
            input_dim=X.shape[2], token_dim=self.token_dim, n_encoders=self.n_encoders,
            n_heads=self.n_heads, ff_dim=self.ff_dim, head_dim=self.head_dim,
            dropout=self.dropout, max_seq=X.shape[1] + 1, head_hidden=self.head_hidden,
            weight_reg=self.weight_reg, seed=self.seed, dtype=self.dtype,
        )
        tcfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.seed,
                           early_stop_patience=self.early_stop_patience)
        val = None
        if X_val is not None:
            X_val, pad_mask_val, y_val = self._validate(X_val, pad_mask_val, y_val)
            val = (X_val, pad_mask_val, y_val)
        self.model_, history = train_model(TransformerModel(cfg), (X, pad_mask, y), val, tcfg)
        self.history_ = history
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("classifier is not fitted")

    def predict_proba(self, X, pad_mask=None) -> np.ndarray:
        self._check_fitted()
        X, pad_mask, _ = self._validate(X, pad_mask)
        out = np.empty((X.shape[0], 2), dtype=np.float64)
        for lo in range(0, X.shape[0], self.batch_size):
            hi = min(lo + self.batch_size, X.shape[0])
            out[lo:hi], _ = self.model_.forward_batch(X[lo:hi], pad_mask[lo:hi])
        return out

    def predict(self, X, pad_mask=None) -> np.ndarray:
        return (self.predict_proba(X, pad_mask)[:, 1] >= 0.5).astype(int)

    def score(self, X, y, pad_mask=None) -> float:
        y = np.asarray(y, dtype=int)
        return float((self.predict(X, pad_mask) == y).mean())
