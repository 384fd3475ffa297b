"""Turn raw node attributes into structured security features.

Local fields (paths, ports, command lines) map directly. Global fields
(dropped binaries, persistence linkage) need a context accumulated by
replaying the whole log in timestamp order; the context is causal, so
a feature computed for a node never depends on later events.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from .errors import IoFailure, MalformedRecord
from .events import EventLog, EventType, ProcessRef, RawEvent
from .graphs import GraphNode, ProvenanceGraph, graph_from_json, graph_to_json
from .rules import (
    EXECUTABLE_EXTENSIONS,
    PathCategory,
    RuleSet,
    categorize_path,
    classify_registry_key,
    is_internal_ip,
    is_sensitive_file,
    normalize_path,
    service_port_category,
)

NONE_CATEGORY = "NONE"
EMBED_DIM = 16
ZERO_EMBEDDING = (0.0,) * EMBED_DIM

# how far back a write still counts as "recently dropped"
DEFAULT_DROP_WINDOW_MS = 10 * 60 * 1000


@dataclass(frozen=True)
class SecurityFeatures:
    """One row of the behavior feature schema.

    Fields outside the node's event_type keep their neutral defaults
    (False / 0 / NONE / zero vector).
    """

    event_type: EventType
    # process start
    exe_name: str = NONE_CATEGORY
    exe_path_cat: str = NONE_CATEGORY
    exe_extension: str = NONE_CATEGORY
    dropped_binary: bool = False
    cmdline_length: float = 0.0
    cmdline_flag_count: float = 0.0
    cmd_embedding: tuple[float, ...] = ZERO_EMBEDDING
    # file access
    file_path_cat: str = NONE_CATEGORY
    file_extension: str = NONE_CATEGORY
    access_mode: str = NONE_CATEGORY
    access_options: str = NONE_CATEGORY
    sensitive_file: bool = False
    access_amount: float = 0.0
    # registry access
    internet_key: bool = False
    persistence_key: bool = False
    uninstall_key: bool = False
    notify_key: bool = False
    key_data_type: str = NONE_CATEGORY
    # network connection
    src_internal: bool = False
    dst_internal: bool = False
    service_port: str = NONE_CATEGORY
    connection_size: float = 0.0
    transport_protocol: str = NONE_CATEGORY
    direction_incoming: bool = False
    # all types
    time_duration: float = 0.0

    def __post_init__(self):
        if len(self.cmd_embedding) != EMBED_DIM:
            raise ValueError(f"cmd_embedding must have {EMBED_DIM} components")


class GlobalContext:
    """Causal whole-log state used by cross-event features."""

    def __init__(self):
        self.process_tree: dict[tuple[int, int], ProcessRef] = {}
        self.written_executables: dict[str, int] = {}  # normalized path -> first write ts
        self.persisted_binaries: set[str] = set()  # targets of autostart artifacts
        self.started_executables: set[str] = set()


def _autostart_target(path: str, options: str) -> str | None:
    """Target of an autostart artifact write, when recoverable.

    Link files carry their destination as a `target=<path>` suffix in the
    access options; a binary dropped directly into the autostart folder is
    its own target.
    """
    marker = "target="
    pos = options.find(marker)
    if pos >= 0:
        target = options[pos + len(marker):].strip()
        if target:
            return normalize_path(target)
    ext = _extension(path)
    if ext in EXECUTABLE_EXTENSIONS:
        return normalize_path(path)
    return None


def _extension(path: str) -> str:
    name = normalize_path(path).rsplit("\\", 1)[-1]
    if "." not in name:
        return ""
    return "." + name.rsplit(".", 1)[-1]


def update_global_context(ctx: GlobalContext, event: RawEvent,
                          rules: RuleSet | None = None) -> GlobalContext:
    """Fold one event into the context. Idempotent on replays."""
    if event.event_type is EventType.PROCESS_START:
        child = event.attrs.child
        ctx.process_tree.setdefault(child.key, event.actor)
        ctx.started_executables.add(normalize_path(child.exe_path))
    elif event.event_type is EventType.FILE_ACCESS:
        attrs = event.attrs
        if attrs.access_mode == "w":
            norm = normalize_path(attrs.path)
            if _extension(attrs.path) in EXECUTABLE_EXTENSIONS:
                ctx.written_executables.setdefault(norm, event.timestamp)
            if rules is not None and categorize_path(rules, attrs.path) is PathCategory.AUTOSTART:
                target = _autostart_target(attrs.path, attrs.options)
                if target is not None:
                    ctx.persisted_binaries.add(target)
    return ctx


def is_dropped_binary(ctx: GlobalContext, exe_path: str, at: int,
                      window_ms: int = DEFAULT_DROP_WINDOW_MS) -> bool:
    """Was this executable first written within window_ms before `at`?"""
    ts = ctx.written_executables.get(normalize_path(exe_path))
    return ts is not None and at - window_ms <= ts <= at


def _count_flags(cmdline: str) -> int:
    return sum(1 for tok in cmdline.split() if tok.startswith(("-", "/")))


def _features_for_start(event: RawEvent, ctx: GlobalContext, rules: RuleSet,
                        drop_window_ms: int, at: int) -> SecurityFeatures:
    child = event.attrs.child
    return SecurityFeatures(
        event_type=EventType.PROCESS_START,
        exe_name=child.exe_name,
        exe_path_cat=categorize_path(rules, child.exe_path).value,
        exe_extension=_extension(child.exe_path) or NONE_CATEGORY,
        dropped_binary=is_dropped_binary(ctx, child.exe_path, at, drop_window_ms),
        cmdline_length=float(len(event.attrs.cmdline)),
        cmdline_flag_count=float(_count_flags(event.attrs.cmdline)),
        time_duration=float(event.duration_ms),
    )


def compute_features(event: RawEvent, ctx: GlobalContext, rules: RuleSet,
                     drop_window_ms: int = DEFAULT_DROP_WINDOW_MS) -> SecurityFeatures:
    """Features of one event against the context as of just before it."""
    if event.event_type is EventType.PROCESS_START:
        return _features_for_start(event, ctx, rules, drop_window_ms, event.timestamp)
    if event.event_type is EventType.FILE_ACCESS:
        attrs = event.attrs
        return SecurityFeatures(
            event_type=EventType.FILE_ACCESS,
            file_path_cat=categorize_path(rules, attrs.path).value,
            file_extension=_extension(attrs.path) or NONE_CATEGORY,
            access_mode=attrs.access_mode,
            access_options=attrs.options if attrs.options else NONE_CATEGORY,
            sensitive_file=is_sensitive_file(rules, attrs.path),
            access_amount=float(attrs.bytes),
            time_duration=float(event.duration_ms),
        )
    if event.event_type is EventType.REGISTRY_ACCESS:
        attrs = event.attrs
        classes = classify_registry_key(rules, attrs.key_path)
        return SecurityFeatures(
            event_type=EventType.REGISTRY_ACCESS,
            internet_key=classes["internet"],
            persistence_key=classes["persistence"],
            uninstall_key=classes["uninstall"],
            notify_key=classes["notify"],
            key_data_type=attrs.value_type if attrs.value_type else NONE_CATEGORY,
            time_duration=float(event.duration_ms),
        )
    attrs = event.attrs
    return SecurityFeatures(
        event_type=EventType.NETWORK_CONNECTION,
        src_internal=is_internal_ip(rules, attrs.src_ip),
        dst_internal=is_internal_ip(rules, attrs.dst_ip),
        service_port=service_port_category(rules, attrs.dst_port),
        connection_size=float(attrs.bytes),
        transport_protocol=attrs.protocol,
        direction_incoming=attrs.direction == "in",
        time_duration=float(event.duration_ms),
    )


def enrich_log(log: EventLog, rules: RuleSet,
               drop_window_ms: int = DEFAULT_DROP_WINDOW_MS) -> tuple[dict[int, SecurityFeatures], GlobalContext]:
    """One causal replay of the whole log.

    Returns per-event features keyed by event_id plus the final context.
    Each event is scored against the context state before the event is
    folded in, so results match any truncated-prefix replay.
    """
    ctx = GlobalContext()
    out: dict[int, SecurityFeatures] = {}
    for event in log.events:
        out[event.event_id] = compute_features(event, ctx, rules, drop_window_ms)
        update_global_context(ctx, event, rules)
    return out, ctx


def enrich_graph(g: ProvenanceGraph, log: EventLog, rules: RuleSet,
                 drop_window_ms: int = DEFAULT_DROP_WINDOW_MS) -> list[tuple[int, SecurityFeatures]]:
    """One SecurityFeatures per node of g, in node order.

    The full log is replayed (not only g's events) so cross-graph writes
    are visible to dropped-binary and persistence features. Synthetic
    anchor nodes are scored at their process's true start time.
    """
    per_event, ctx = enrich_log(log, rules, drop_window_ms)
    out: list[tuple[int, SecurityFeatures]] = []
    for node in g.nodes:
        if not node.synthetic:
            out.append((node.node_id, per_event[node.event.event_id]))
            continue
        # anchor: the real start may live in another graph of the same log
        child = node.event.attrs.child
        real_start = _find_start_event(log, child)
        if real_start is not None and real_start.event_id in per_event:
            feats = per_event[real_start.event_id]
        else:
            feats = _features_for_start(node.event, ctx, rules, drop_window_ms,
                                        at=child.start_time)
        out.append((node.node_id, replace(feats, time_duration=0.0)))
    return out


def _find_start_event(log: EventLog, child: ProcessRef) -> RawEvent | None:
    for event in log.events:
        if event.event_type is EventType.PROCESS_START and event.attrs.child.key == child.key:
            return event
    return None


def enrich_graphs(graphs: Iterable[ProvenanceGraph], log: EventLog, rules: RuleSet,
                  drop_window_ms: int = DEFAULT_DROP_WINDOW_MS) -> list[EnrichedGraph]:
    """Batch form of enrich_graph: one log replay shared by all graphs."""
    per_event, ctx = enrich_log(log, rules, drop_window_ms)
    start_by_child: dict[tuple[int, int], RawEvent] = {}
    for event in log.events:
        if event.event_type is EventType.PROCESS_START:
            start_by_child.setdefault(event.attrs.child.key, event)
    out = []
    for g in graphs:
        feats = []
        for node in g.nodes:
            if not node.synthetic:
                feats.append(per_event[node.event.event_id])
                continue
            child = node.event.attrs.child
            real_start = start_by_child.get(child.key)
            if real_start is not None:
                sf = per_event[real_start.event_id]
            else:
                sf = _features_for_start(node.event, ctx, rules, drop_window_ms,
                                         at=child.start_time)
            feats.append(replace(sf, time_duration=0.0))
        out.append(EnrichedGraph(graph=g, features=tuple(feats)))
    return out


# --- enriched-graph container and file format ---

@dataclass(frozen=True)
class EnrichedGraph:
    graph: ProvenanceGraph
    features: tuple[SecurityFeatures, ...]  # aligned with graph.nodes
    label: str | None = None  # "benign" | "malicious" | None
    planted: frozenset[int] = frozenset()  # event_ids of planted suspicious events

    def __post_init__(self):
        if len(self.features) != len(self.graph.nodes):
            raise ValueError("features must align one-to-one with graph nodes")

    def with_embeddings(self, embeddings: dict[int, tuple[float, ...]]) -> "EnrichedGraph":
        """Copy with cmd_embedding filled for the given node ids."""
        feats = list(self.features)
        for node_id, vec in embeddings.items():
            feats[node_id] = replace(feats[node_id], cmd_embedding=tuple(float(v) for v in vec))
        return replace(self, features=tuple(feats))


_FEATURE_FIELDS = [f.name for f in fields(SecurityFeatures)]


def features_to_dict(sf: SecurityFeatures) -> dict:
    doc = {}
    for name in _FEATURE_FIELDS:
        value = getattr(sf, name)
        if name == "event_type":
            doc[name] = value.value
        elif name == "cmd_embedding":
            doc[name] = list(value)
        else:
            doc[name] = value
    return doc


def features_from_dict(doc: dict) -> SecurityFeatures:
    kwargs = dict(doc)
    try:
        kwargs["event_type"] = EventType(kwargs["event_type"])
        kwargs["cmd_embedding"] = tuple(float(v) for v in kwargs["cmd_embedding"])
        return SecurityFeatures(**kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"invalid features record: {exc}") from None


def enriched_to_json(eg: EnrichedGraph) -> str:
    doc = json.loads(graph_to_json(eg.graph))
    doc["label"] = eg.label
    doc["planted"] = sorted(eg.planted)
    for node_doc, sf in zip(doc["nodes"], eg.features):
        node_doc["features"] = features_to_dict(sf)
    return json.dumps(doc, ensure_ascii=True, separators=(",", ":"))


def enriched_from_json(text: str) -> EnrichedGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid enriched graph document: {exc}") from None
    graph = graph_from_json(text)
    feats = tuple(features_from_dict(n["features"]) for n in doc["nodes"])
    return EnrichedGraph(
        graph=graph,
        features=feats,
        label=doc.get("label"),
        planted=frozenset(doc.get("planted", ())),
    )


def save_enriched(graphs: Iterable[EnrichedGraph], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for eg in graphs:
            path = out / f"enriched_{eg.graph.graph_id:05d}.json"
            path.write_text(enriched_to_json(eg) + "\n", encoding="utf-8")
            paths.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write enriched graphs to {out_dir}: {exc}") from None
    return paths


def load_enriched(in_dir: str | Path) -> list[EnrichedGraph]:
    try:
        paths = sorted(Path(in_dir).glob("enriched_*.json"))
        out = [enriched_from_json(p.read_text(encoding="utf-8")) for p in paths]
    except OSError as exc:
        raise IoFailure(f"cannot read enriched graphs from {in_dir}: {exc}") from None
    return out
