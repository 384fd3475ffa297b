"""Flatten enriched graphs to event sequences and fixed-size windows.

A window is W consecutive events of one graph's temporally ordered
sequence, padded at the tail when fewer remain. ANCHORED mode starts
windows at process creations and never overlaps; OVERSAMPLE mode starts
at every stride multiple, so minority-class graphs can contribute many
overlapping (but never identical) windows.

The codec turns windows into numeric matrices: one-hot categoricals over
train-fitted vocabularies (top-N plus OTHER), log1p + min-max scaled
numerics, 0/1 booleans, the 16-dim command embedding verbatim, and one
pad indicator column.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from .enrich import EMBED_DIM, NONE_CATEGORY, EnrichedGraph, SecurityFeatures
from .errors import (
    CodecVersionMismatch,
    DimensionMismatch,
    EmptyTrainSet,
    IoFailure,
    MalformedRecord,
    NotEnriched,
)
from .events import EventType, RawEvent
from .rules import PathCategory

DEFAULT_W = 200
DEFAULT_STRIDE = 20


@dataclass(frozen=True)
class SequenceItem:
    node_id: int
    timestamp: int
    features: SecurityFeatures
    summary: str  # human-readable event description, for explanations


@dataclass(frozen=True)
class EventSequence:
    graph_id: int
    items: tuple[SequenceItem, ...]  # sorted by (timestamp, node_id)
    label: str | None
    planted_suspicious: frozenset[int] = frozenset()  # indices into items


def summarize_event(event: RawEvent, sf: SecurityFeatures) -> str:
    et = event.event_type
    if et is EventType.PROCESS_START:
        flags = " dropped" if sf.dropped_binary else ""
        return f"process start {event.attrs.child.exe_path} cmdline={event.attrs.cmdline!r}{flags}"
    if et is EventType.FILE_ACCESS:
        mode = {"w": "write", "r": "read", "d": "delete"}[event.attrs.access_mode]
        flags = " sensitive" if sf.sensitive_file else ""
        return f"file {mode} {event.attrs.path} ({event.attrs.bytes} bytes){flags}"
    if et is EventType.REGISTRY_ACCESS:
        kinds = [k for k in ("persistence", "internet", "uninstall", "notify") if getattr(sf, k + "_key")]
        tag = f" [{','.join(kinds)}]" if kinds else ""
        return f"registry {event.attrs.key_path} type={event.attrs.value_type}{tag}"
    a = event.attrs
    where = "internal" if sf.dst_internal else "external"
    return f"socket {a.direction} {a.protocol} {a.src_ip}->{a.dst_ip}:{a.dst_port} ({a.bytes} bytes, {where})"


def graph_to_sequence(eg: EnrichedGraph) -> EventSequence:
    """Temporal flattening; ties broken by node id. Features pass through."""
    for node, sf in zip(eg.graph.nodes, eg.features):
        if sf.event_type is EventType.PROCESS_START and all(v == 0.0 for v in sf.cmd_embedding):
            raise NotEnriched(
                f"graph {eg.graph.graph_id} node {node.node_id} has no command embedding")
    order = sorted(range(len(eg.graph.nodes)),
                   key=lambda i: (eg.graph.nodes[i].event.timestamp, i))
    items = tuple(
        SequenceItem(
            node_id=i,
            timestamp=eg.graph.nodes[i].event.timestamp,
            features=eg.features[i],
            summary=summarize_event(eg.graph.nodes[i].event, eg.features[i]),
        )
        for i in order
    )
    planted = frozenset(
        pos for pos, item in enumerate(items)
        if eg.graph.nodes[item.node_id].event.event_id in eg.planted
    )
    return EventSequence(graph_id=eg.graph.graph_id, items=items,
                         label=eg.label, planted_suspicious=planted)


class WindowMode(str, Enum):
    ANCHORED = "anchored"
    OVERSAMPLE = "oversample"


@dataclass(frozen=True)
class WindowConfig:
    W: int = DEFAULT_W
    mode: WindowMode = WindowMode.ANCHORED
    stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.W < 1:
            raise ValueError("W must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass(frozen=True)
class Window:
    graph_id: int
    start_index: int
    features: tuple[SecurityFeatures | None, ...]  # None entries are padding
    summaries: tuple[str, ...]  # "" for padding
    pad_count: int
    label: str | None
    planted: frozenset[int] = frozenset()  # window-local indices

    def __post_init__(self):
        if self.pad_count != sum(1 for f in self.features if f is None):
            raise ValueError("pad_count does not match None entries")


def _cut_window(seq: EventSequence, start: int, w: int) -> Window:
    chunk = seq.items[start:start + w]
    pad = w - len(chunk)
    feats = tuple(item.features for item in chunk) + (None,) * pad
    summaries = tuple(item.summary for item in chunk) + ("",) * pad
    planted = frozenset(p - start for p in seq.planted_suspicious if start <= p < start + w)
    return Window(graph_id=seq.graph_id, start_index=start, features=feats,
                  summaries=summaries, pad_count=pad, label=seq.label, planted=planted)


def make_windows(seq: EventSequence, cfg: WindowConfig = WindowConfig()) -> list[Window]:
    n = len(seq.items)
    if n == 0:
        return []
    if cfg.mode is WindowMode.OVERSAMPLE:
        return [_cut_window(seq, start, cfg.W) for start in range(0, n, cfg.stride)]
    # ANCHORED: process-creation starts, skipping candidates that overlap
    candidates = [i for i, item in enumerate(seq.items)
                  if item.features.event_type is EventType.PROCESS_START]
    if not candidates:
        candidates = [0]
    starts: list[int] = []
    for c in candidates:
        if not starts or c >= starts[-1] + cfg.W:
            starts.append(c)
    return [_cut_window(seq, start, cfg.W) for start in starts]


# --- feature codec ---

# closed vocabularies: every legal value is known up front
_FIXED_VOCABS: dict[str, tuple[str, ...]] = {
    "event_type": tuple(e.value for e in EventType),
    "exe_path_cat": tuple(c.value for c in PathCategory),
    "file_path_cat": tuple(c.value for c in PathCategory),
    "access_mode": ("w", "r", "d"),
    "transport_protocol": ("tcp", "udp", "other"),
}

# open vocabularies fitted from training data: top-N by frequency + OTHER
_FITTED_DEFAULT_TOP_N: dict[str, int] = {
    "exe_name": 64,
    "exe_extension": 64,
    "file_extension": 64,
    "access_options": 32,
    "key_data_type": 16,
    "service_port": 32,
}

_NUMERIC_FIELDS = ("cmdline_length", "cmdline_flag_count", "access_amount",
                   "connection_size", "time_duration")
_BOOLEAN_FIELDS = ("dropped_binary", "sensitive_file", "internet_key", "persistence_key",
                   "uninstall_key", "notify_key", "src_internal", "dst_internal",
                   "direction_incoming")

CATEGORICAL_FIELDS = tuple(_FIXED_VOCABS) + tuple(_FITTED_DEFAULT_TOP_N)
OTHER = "OTHER"


def _field_value(sf: SecurityFeatures, name: str) -> str:
    value = getattr(sf, name)
    if name == "event_type":
        return value.value
    return str(value)


@dataclass(frozen=True)
class EncodedWindow:
    matrix: np.ndarray  # (W, D) float32
    pad_mask: np.ndarray  # (W,) bool, True at pad rows
    label: str | None
    graph_id: int
    start_index: int
    planted: frozenset[int] = frozenset()


class FeatureCodec:
    """Fitted window-to-matrix encoder (fit/transform convention)."""

    def __init__(self, vocab_top_n: dict[str, int] | None = None):
        self.vocab_top_n = dict(_FITTED_DEFAULT_TOP_N)
        if vocab_top_n:
            for key, value in vocab_top_n.items():
                if key not in self.vocab_top_n:
                    raise ValueError(f"{key} has no fitted vocabulary")
                self.vocab_top_n[key] = int(value)

    def get_params(self, deep: bool = True) -> dict:
        return {"vocab_top_n": dict(self.vocab_top_n)}

    # --- fitting ---

    def fit(self, train_windows: list[Window]) -> "FeatureCodec":
        rows = [sf for w in train_windows for sf in w.features if sf is not None]
        if not rows:
            raise EmptyTrainSet("codec needs at least one non-pad training row")
        self.vocabs_: dict[str, tuple[str, ...]] = {}
        for name, vocab in _FIXED_VOCABS.items():
            self.vocabs_[name] = tuple(vocab)
        for name, top_n in self.vocab_top_n.items():
            counts: dict[str, int] = {}
            for sf in rows:
                value = _field_value(sf, name)
                if value != NONE_CATEGORY:
                    counts[value] = counts.get(value, 0) + 1
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            self.vocabs_[name] = tuple(v for v, _ in ranked[:top_n]) + (OTHER,)
        self.numeric_stats_: dict[str, tuple[float, float]] = {}
        for name in _NUMERIC_FIELDS:
            values = np.log1p(np.array([getattr(sf, name) for sf in rows], dtype=np.float64))
            self.numeric_stats_[name] = (float(values.min()), float(values.max()))
        self._finalize()
        return self

    def _finalize(self) -> None:
        self._index: dict[str, dict[str, int]] = {
            name: {v: i for i, v in enumerate(vocab)} for name, vocab in self.vocabs_.items()
        }
        self._offsets: dict[str, int] = {}
        offset = 0
        for name in CATEGORICAL_FIELDS:
            self._offsets[name] = offset
            offset += len(self.vocabs_[name])
        self._numeric_offset = offset
        offset += len(_NUMERIC_FIELDS)
        self._boolean_offset = offset
        offset += len(_BOOLEAN_FIELDS)
        self._embed_offset = offset
        offset += EMBED_DIM
        self._pad_offset = offset
        self.D_ = offset + 1
        self.version_ = hashlib.sha256(self._canonical_body().encode("utf-8")).hexdigest()[:16]

    @property
    def dimension(self) -> int:
        self._check_fitted()
        return self.D_

    def _check_fitted(self) -> None:
        if not hasattr(self, "vocabs_"):
            raise RuntimeError("codec is not fitted")

    # --- encoding ---

    def encode_row(self, sf: SecurityFeatures | None, out: np.ndarray) -> None:
        """Fill one length-D row in place (row assumed zeroed)."""
        if sf is None:
            out[self._pad_offset] = 1.0
            return
        for name in CATEGORICAL_FIELDS:
            value = _field_value(sf, name)
            if value == NONE_CATEGORY:
                continue  # NONE encodes as an all-zero block
            idx = self._index[name].get(value)
            if idx is None:
                idx = len(self.vocabs_[name]) - 1  # OTHER slot of fitted vocabs
            out[self._offsets[name] + idx] = 1.0
        for j, name in enumerate(_NUMERIC_FIELDS):
            lo, hi = self.numeric_stats_[name]
            value = float(np.log1p(getattr(sf, name)))
            if hi > lo:
                value = (value - lo) / (hi - lo)
            else:
                value = 0.0
            out[self._numeric_offset + j] = min(1.0, max(0.0, value))
        for j, name in enumerate(_BOOLEAN_FIELDS):
            if getattr(sf, name):
                out[self._boolean_offset + j] = 1.0
        out[self._embed_offset:self._embed_offset + EMBED_DIM] = sf.cmd_embedding

    def encode_window(self, w: Window) -> EncodedWindow:
        self._check_fitted()
        matrix = np.zeros((len(w.features), self.D_), dtype=np.float32)
        pad_mask = np.zeros(len(w.features), dtype=bool)
        for i, sf in enumerate(w.features):
            self.encode_row(sf, matrix[i])
            pad_mask[i] = sf is None
        return EncodedWindow(matrix=matrix, pad_mask=pad_mask, label=w.label,
                             graph_id=w.graph_id, start_index=w.start_index,
                             planted=w.planted)

    def decode_category(self, name: str, block: np.ndarray) -> str:
        """Inverse of the one-hot block; exact for in-vocabulary values."""
        self._check_fitted()
        vocab = self.vocabs_[name]
        if block.shape != (len(vocab),):
            raise DimensionMismatch(f"{name}: expected block of {len(vocab)}")
        hot = np.flatnonzero(block == 1.0)
        if hot.size == 0:
            return NONE_CATEGORY
        return vocab[int(hot[0])]

    def category_block(self, name: str, row: np.ndarray) -> np.ndarray:
        self._check_fitted()
        lo = self._offsets[name]
        return row[lo:lo + len(self.vocabs_[name])]

    # --- plain-text persistence ---

    def _canonical_body(self) -> str:
        lines = []
        for name in CATEGORICAL_FIELDS:
            lines.append(f"vocab {name} {len(self.vocabs_[name])}")
            for value in self.vocabs_[name]:
                lines.append("v " + quote(value, safe=""))
        for name in _NUMERIC_FIELDS:
            lo, hi = self.numeric_stats_[name]
            lines.append(f"numeric {name} {lo!r} {hi!r}")
        for name in _BOOLEAN_FIELDS:
            lines.append(f"boolean {name}")
        lines.append(f"embed_dim {EMBED_DIM}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        body = self._canonical_body()
        text = f"#provsight-codec v1\nversion {self.version_}\nD {self.D_}\n{body}"
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write codec to {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "FeatureCodec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read codec from {path}: {exc}") from None
        lines = text.splitlines()
        if not lines or lines[0] != "#provsight-codec v1":
            raise MalformedRecord(f"{path}: not a codec file")
        codec = cls.__new__(cls)
        codec.vocab_top_n = dict(_FITTED_DEFAULT_TOP_N)
        codec.vocabs_ = {}
        codec.numeric_stats_ = {}
        declared_version = None
        declared_d = None
        i = 1
        current_vocab: list[str] | None = None
        current_name = None
        try:
            while i < len(lines):
                line = lines[i]
                i += 1
                if not line.strip():
                    continue
                parts = line.split(" ")
                if parts[0] == "version":
                    declared_version = parts[1]
                elif parts[0] == "D":
                    declared_d = int(parts[1])
                elif parts[0] == "vocab":
                    if current_name is not None:
                        codec.vocabs_[current_name] = tuple(current_vocab)
                    current_name = parts[1]
                    current_vocab = []
                elif parts[0] == "v":
                    current_vocab.append(unquote(parts[1]))
                elif parts[0] == "numeric":
                    if current_name is not None:
                        codec.vocabs_[current_name] = tuple(current_vocab)
                        current_name, current_vocab = None, None
                    codec.numeric_stats_[parts[1]] = (float(parts[2]), float(parts[3]))
                elif parts[0] in ("boolean", "embed_dim"):
                    continue
                else:
                    raise MalformedRecord(f"{path}: unknown codec line {line!r}")
            if current_name is not None:
                codec.vocabs_[current_name] = tuple(current_vocab)
        except (IndexError, ValueError) as exc:
            raise MalformedRecord(f"{path}: invalid codec file: {exc}") from None
        missing = set(CATEGORICAL_FIELDS) - set(codec.vocabs_)
        if missing or set(codec.numeric_stats_) != set(_NUMERIC_FIELDS):
            raise MalformedRecord(f"{path}: incomplete codec file")
        codec._finalize()
        if declared_version is not None and declared_version != codec.version_:
            raise CodecVersionMismatch(
                f"{path}: declared version {declared_version} != computed {codec.version_}")
        if declared_d is not None and declared_d != codec.D_:
            raise CodecVersionMismatch(f"{path}: declared D {declared_d} != computed {codec.D_}")
        return codec


# --- window dataset container ---

_WIN_MAGIC = b"PSWIN001"
_LABEL_TO_INT = {None: -1, "benign": 0, "malicious": 1}
_INT_TO_LABEL = {v: k for k, v in _LABEL_TO_INT.items()}


class WindowDataset:
    """Encoded windows as one contiguous batch plus per-window metadata."""

    def __init__(self, X: np.ndarray, pad_mask: np.ndarray, labels: np.ndarray,
                 codec_version: str, meta: list[dict]):
        if X.ndim != 3 or pad_mask.shape != X.shape[:2] or labels.shape != (X.shape[0],):
            raise DimensionMismatch(
                f"inconsistent dataset shapes {X.shape} {pad_mask.shape} {labels.shape}")
        self.X = np.ascontiguousarray(X, dtype=np.float32)
        self.pad_mask = np.ascontiguousarray(pad_mask, dtype=bool)
        self.labels = np.ascontiguousarray(labels, dtype=np.int8)
        self.codec_version = codec_version
        self.meta = meta

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def W(self) -> int:
        return self.X.shape[1]

    @property
    def D(self) -> int:
        return self.X.shape[2]

    @classmethod
    def from_windows(cls, codec: FeatureCodec, windows: list[Window]) -> "WindowDataset":
        if not windows:
            raise EmptyTrainSet("no windows to encode")
        encoded = [codec.encode_window(w) for w in windows]
        X = np.stack([e.matrix for e in encoded])
        pad = np.stack([e.pad_mask for e in encoded])
        labels = np.array([_LABEL_TO_INT[e.label] for e in encoded], dtype=np.int8)
        meta = [
            {
                "graph_id": w.graph_id,
                "start_index": w.start_index,
                "planted": sorted(w.planted),
                "summaries": list(w.summaries),
            }
            for w in windows
        ]
        return cls(X, pad, labels, codec.version_, meta)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        version = self.codec_version.encode("ascii")
        header = _WIN_MAGIC + struct.pack("<IIQH", self.W, self.D, len(self), len(version))
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(version)
                fh.write(self.X.tobytes())
                fh.write(self.pad_mask.astype(np.uint8).tobytes())
                fh.write(self.labels.tobytes())
            path.with_suffix(path.suffix + ".meta.json").write_text(
                json.dumps(self.meta, ensure_ascii=True, separators=(",", ":")) + "\n",
                encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write dataset to {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "WindowDataset":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read dataset from {path}: {exc}") from None
        if len(blob) < 8 + 18 or blob[:8] != _WIN_MAGIC:
            raise MalformedRecord(f"{path}: not a window dataset")
        w, d, count, vlen = struct.unpack_from("<IIQH", blob, 8)
        pos = 8 + 18
        version = blob[pos:pos + vlen].decode("ascii")
        pos += vlen
        x_bytes = count * w * d * 4
        expected = pos + x_bytes + count * w + count
        if len(blob) != expected:
            raise MalformedRecord(f"{path}: truncated dataset ({len(blob)} != {expected} bytes)")
        X = np.frombuffer(blob, dtype=np.float32, count=count * w * d, offset=pos).reshape(count, w, d)
        pos += x_bytes
        pad = np.frombuffer(blob, dtype=np.uint8, count=count * w, offset=pos).reshape(count, w).astype(bool)
        pos += count * w
        labels = np.frombuffer(blob, dtype=np.int8, count=count, offset=pos)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else []
        return cls(X.copy(), pad, labels.copy(), version, meta)

    def label_strings(self) -> list[str | None]:
        return [_INT_TO_LABEL[int(v)] for v in self.labels]
