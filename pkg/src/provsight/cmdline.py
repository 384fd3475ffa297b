"""Command-line text embeddings for process start events.

The full command strings of a process and its parent are joined with a
separator token, mapped to a 384-dim vector by a pluggable text encoder,
then compressed to 16 dims by an autoencoder trained without labels.

Two encoders ship: a self-contained character 3-gram signed feature
hasher (default, deterministic across platforms), and a lookup table for
vectors precomputed offline by an external sentence model.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCorpusWarning,
    IoFailure,
    MalformedRecord,
    NotAProcessNode,
    TableMiss,
    TableMissWarning,
)
from .events import EventType
from .graphs import ProvenanceGraph
from .nn import Adam, Tensor, glorot, parameter

SEPARATOR = " <SEP> "
TEXT_DIM = 384
LATENT_DIM = 16


def compose_cmdline_input(node_id: int, g: ProvenanceGraph) -> str:
    """parent command string ⊕ separator ⊕ child command string."""
    node = g.nodes[node_id]
    if node.event.event_type is not EventType.PROCESS_START:
        raise NotAProcessNode(f"node {node_id} is a {node.event.event_type.value} event")
    own = node.event.attrs.cmdline
    parent_id = g.parent_of.get(node_id)
    parent_cmd = ""
    if parent_id is not None:
        parent_event = g.nodes[parent_id].event
        if parent_event.event_type is EventType.PROCESS_START:
            parent_cmd = parent_event.attrs.cmdline
    return parent_cmd + SEPARATOR + own


def _text_key(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()


class HashingEncoder:
    """Character 3-gram signed feature hashing into TEXT_DIM buckets.

    Pure and stable across runs and platforms: bucket and sign come from
    a keyed-less blake2b digest of each 3-gram. Output is L2-normalized;
    texts with no 3-grams map to the zero vector.
    """

    name = "builtin"

    def __init__(self, dim: int = TEXT_DIM):
        self.dim = dim
        self._gram_cache: dict[str, tuple[int, float]] = {}

    def _slot(self, gram: str) -> tuple[int, float]:
        hit = self._gram_cache.get(gram)
        if hit is None:
            h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
            hit = (h % self.dim, 1.0 if (h >> 32) & 1 else -1.0)
            self._gram_cache[gram] = hit
        return hit

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(text) - 2):
            bucket, sign = self._slot(text[i:i + 3])
            v[bucket] += sign
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
        return v


class TableEncoder:
    """Exact-match lookup of precomputed text vectors.

    File format: header `dim=384`, then one `key<TAB>floats...` line per
    text, where key is the blake2b-128 hex digest of the exact input.
    """

    name = "table"

    def __init__(self, table: dict[str, np.ndarray], dim: int = TEXT_DIM):
        self.dim = dim
        self.table = table

    @classmethod
    def load(cls, path: str | Path) -> "TableEncoder":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read embedding table {path}: {exc}") from None
        if not lines or not lines[0].startswith("dim="):
            raise MalformedRecord(f"{path}: missing dim= header")
        dim = int(lines[0].split("=", 1)[1])
        table: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            key, _, rest = line.partition("\t")
            vec = np.array([float(x) for x in rest.split("\t")])
            if vec.shape != (dim,):
                raise MalformedRecord(f"{path}:{lineno}: expected {dim} floats")
            table[key] = vec
        return cls(table, dim)

    @staticmethod
    def save(table: dict[str, np.ndarray], path: str | Path, dim: int = TEXT_DIM) -> None:
        lines = [f"dim={dim}"]
        for key in sorted(table):
            lines.append(key + "\t" + "\t".join(repr(float(x)) for x in table[key]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def encode(self, text: str) -> np.ndarray:
        key = _text_key(text)
        if key not in self.table:
            raise TableMiss(f"no precomputed vector for text key {key}")
        return self.table[key]


class FallbackEncoder:
    """Table lookup with hashing fallback; counts and warns on misses."""

    name = "table+builtin"

    def __init__(self, table: TableEncoder, builtin: HashingEncoder | None = None):
        self.table = table
        self.builtin = builtin or HashingEncoder(table.dim)
        self.misses = 0

    def encode(self, text: str) -> np.ndarray:
        try:
            return self.table.encode(text)
        except TableMiss:
            self.misses += 1
            if self.misses == 1:
                warnings.warn("embedding table misses; falling back to the built-in hashing encoder",
                              TableMissWarning, stacklevel=2)
            return self.builtin.encode(text)


def encode_text(encoder, text: str) -> np.ndarray:
    vec = np.asarray(encoder.encode(text), dtype=np.float64)
    if vec.shape != (TEXT_DIM,) and vec.shape != (encoder.dim,):
        raise MalformedRecord(f"encoder produced shape {vec.shape}")
    return vec


@dataclass(frozen=True)
class AutoencoderConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    hidden_dim: int = 64
    input_dim: int = TEXT_DIM
    latent_dim: int = LATENT_DIM


class CmdlineAutoencoder:
    """input→hidden→latent→hidden→input reconstruction network.

    tanh on the hidden layers, linear bottleneck and output. Follows the
    fit/transform estimator convention; trained attributes get a trailing
    underscore.
    """

    def __init__(self, epochs: int = 100, learning_rate: float = 1e-3, batch_size: int = 64,
                 seed: int = 0, hidden_dim: int = 64, input_dim: int = TEXT_DIM,
                 latent_dim: int = LATENT_DIM):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.hidden_dim = hidden_dim
        self.input_dim = input_dim
        self.latent_dim = latent_dim

    def get_params(self, deep: bool = True) -> dict:
        return {
            "epochs": self.epochs, "learning_rate": self.learning_rate,
            "batch_size": self.batch_size, "seed": self.seed,
            "hidden_dim": self.hidden_dim, "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
        }

    def set_params(self, **kwargs) -> "CmdlineAutoencoder":
        for key, value in kwargs.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key}")
            setattr(self, key, value)
        return self

    # parameter order is the checkpoint order; keep it stable
    _WEIGHT_NAMES = ("enc_w1", "enc_b1", "enc_w2", "enc_b2",
                     "dec_w1", "dec_b1", "dec_w2", "dec_b2")

    def _init_weights(self, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
        d, h, z = self.input_dim, self.hidden_dim, self.latent_dim
        return {
            "enc_w1": parameter(glorot(rng, d, h, dtype)),
            "enc_b1": parameter(np.zeros(h, dtype=dtype)),
            "enc_w2": parameter(glorot(rng, h, z, dtype)),
            "enc_b2": parameter(np.zeros(z, dtype=dtype)),
            "dec_w1": parameter(glorot(rng, z, h, dtype)),
            "dec_b1": parameter(np.zeros(h, dtype=dtype)),
            "dec_w2": parameter(glorot(rng, h, d, dtype)),
            "dec_b2": parameter(np.zeros(d, dtype=dtype)),
        }

    def _encode_t(self, x: Tensor) -> Tensor:
        w = self.weights_
        return (x @ w["enc_w1"] + w["enc_b1"]).tanh() @ w["enc_w2"] + w["enc_b2"]

    def _decode_t(self, z: Tensor) -> Tensor:
        w = self.weights_
        return (z @ w["dec_w1"] + w["dec_b1"]).tanh() @ w["dec_w2"] + w["dec_b2"]

    def fit(self, X: np.ndarray, y=None) -> "CmdlineAutoencoder":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected non-empty (n, {self.input_dim}) matrix, got {X.shape}")
        if np.allclose(X.var(axis=0), 0.0):
            warnings.warn("all training vectors are identical (zero variance corpus)",
                          DegenerateCorpusWarning, stacklevel=2)
        rng = np.random.default_rng(self.seed)
        self.weights_ = self._init_weights(rng)
        params = [self.weights_[k] for k in self._WEIGHT_NAMES]
        opt = Adam(params, lr=self.learning_rate)
        n = X.shape[0]
        history = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, self.batch_size):
                batch = Tensor(X[order[lo:lo + self.batch_size]])
                opt.zero_grad()
                recon = self._decode_t(self._encode_t(batch))
                diff = recon - batch
                loss = (diff * diff).mean()
                loss.backward()
                opt.step()
                epoch_loss += loss.item() * batch.shape[0]
            history.append(epoch_loss / n)
        self.history_ = history
        recon = self._decode_t(self._encode_t(Tensor(X)))
        self.final_mse_ = float(((recon.data - X) ** 2).mean())
        self.epochs_run_ = self.epochs
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        return self._encode_t(Tensor(X)).data

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return self._decode_t(Tensor(np.asarray(Z, dtype=np.float64))).data

    def fit_transform(self, X: np.ndarray, y=None) -> np.ndarray:
        return self.fit(X).transform(X)

    def _check_fitted(self) -> None:
        if not hasattr(self, "weights_"):
            raise RuntimeError("autoencoder is not fitted")

    def weight_arrays(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        return {k: self.weights_[k].data for k in self._WEIGHT_NAMES}

    def load_weight_arrays(self, arrays: dict[str, np.ndarray]) -> "CmdlineAutoencoder":
        self.weights_ = {k: parameter(np.asarray(arrays[k], dtype=np.float64)) for k in self._WEIGHT_NAMES}
        self.history_ = []
        self.final_mse_ = float("nan")
        return self


def train_autoencoder(corpus: np.ndarray, cfg: AutoencoderConfig = AutoencoderConfig()) -> CmdlineAutoencoder:
    ae = CmdlineAutoencoder(
        epochs=cfg.epochs, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        seed=cfg.seed, hidden_dim=cfg.hidden_dim, input_dim=cfg.input_dim,
        latent_dim=cfg.latent_dim,
    )
    return ae.fit(np.asarray(corpus, dtype=np.float64))


def compress(ae: CmdlineAutoencoder, v: np.ndarray) -> np.ndarray:
    """Encoder half only: one 384-dim vector to its 16-dim embedding."""
    return ae.transform(np.asarray(v, dtype=np.float64)[None, :])[0]


def _process_node_texts(g: ProvenanceGraph) -> dict[int, str]:
    return {
        node.node_id: compose_cmdline_input(node.node_id, g)
        for node in g.nodes
        if node.event.event_type is EventType.PROCESS_START
    }


def collect_cmdline_corpus(graphs, encoder) -> np.ndarray:
    """Deduplicated text-vector matrix over all process nodes (AE train set)."""
    seen: dict[str, np.ndarray] = {}
    for eg in graphs:
        g = eg.graph if hasattr(eg, "graph") else eg
        for text in _process_node_texts(g).values():
            if text not in seen:
                seen[text] = encode_text(encoder, text)
    if not seen:
        raise ValueError("no process start nodes in the corpus")
    return np.stack([seen[t] for t in sorted(seen)])


def embed_graphs(enriched, encoder, ae: CmdlineAutoencoder):
    """Fill cmd_embedding on every process node of every enriched graph."""
    cache: dict[str, tuple[float, ...]] = {}
    out = []
    for eg in enriched:
        texts = _process_node_texts(eg.graph)
        embeddings: dict[int, tuple[float, ...]] = {}
        for node_id, text in texts.items():
            vec = cache.get(text)
            if vec is None:
                vec = tuple(float(x) for x in compress(ae, encode_text(encoder, text)))
                cache[text] = vec
            embeddings[node_id] = vec
        out.append(eg.with_embeddings(embeddings))
    return out
