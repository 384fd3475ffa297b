"""Partition an event log into per-application provenance graphs.

Every behavior event becomes one node. Edges run from a process node to
the events that process initiated, so the graph is a tree rooted at the
head process (the youngest ancestor whose own parent is a bootstrapping
OS process). A graph is closed once its configured maximum duration
elapses; later events for the same head open a continuation graph.

Continuation graphs (and graphs whose head was never observed starting)
root at a *synthetic* process-anchor node so the tree property holds;
anchors are flagged and excluded from event accounting.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import BrokenLineageWarning, IoFailure, MalformedRecord
from .events import (
    DEFAULT_OS_PROCESS_NAMES,
    EventLog,
    EventType,
    ProcessRef,
    ProcessStartAttrs,
    RawEvent,
    parse_event_line,
    serialize_event,
)

ALL_EVENT_TYPES = frozenset(EventType)

_UNKNOWN_PARENT = ProcessRef(pid=0, start_time=0, exe_path="<unknown>")


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    event: RawEvent
    synthetic: bool = False  # process anchor, not backed by a log record


@dataclass(frozen=True)
class ProvenanceGraph:
    graph_id: int
    head: int  # node_id of the root, always 0
    head_process: ProcessRef
    nodes: tuple[GraphNode, ...]
    parent_of: dict[int, int]  # child node_id -> parent node_id, head absent
    window_of_time: tuple[int, int]

    def __len__(self) -> int:
        return len(self.nodes)

    def real_events(self) -> list[RawEvent]:
        """Log-backed events only; synthetic anchors excluded."""
        return [n.event for n in self.nodes if not n.synthetic]

    def children_of(self, node_id: int) -> list[int]:
        return [c for c, p in self.parent_of.items() if p == node_id]


@dataclass(frozen=True)
class BuildConfig:
    max_duration_ms: int = 30 * 60 * 1000
    os_process_names: frozenset[str] | None = None  # None: take from the log
    event_type_filter: frozenset[EventType] = ALL_EVENT_TYPES

    def __post_init__(self):
        if self.max_duration_ms <= 0:
            raise ValueError("max_duration_ms must be positive")
        if not self.event_type_filter <= ALL_EVENT_TYPES:
            raise ValueError("event_type_filter must be a subset of the supported event types")


class _ProcessIndex:
    """Parent links and start events for every process seen in a log."""

    def __init__(self, log: EventLog, os_names: frozenset[str]):
        self.os_names = os_names
        self.parent: dict[tuple[int, int], ProcessRef | None] = {}
        self.start_event: dict[tuple[int, int], RawEvent] = {}
        for event in log.events:
            self.parent.setdefault(event.actor.key, event.parent)
            if event.event_type is EventType.PROCESS_START:
                child = event.attrs.child
                self.parent.setdefault(child.key, event.actor)
                self.start_event.setdefault(child.key, event)

    def is_os(self, ref: ProcessRef) -> bool:
        return ref.exe_name in self.os_names

    def walk_to_head(self, subject: ProcessRef) -> list[ProcessRef]:
        """Ancestor path [subject, ..., head]; warns on broken lineage."""
        path = [subject]
        visited = {subject.key}
        current = subject
        while True:
            if current.key not in self.parent:
                # referenced but never defined: orphan head
                warnings.warn(
                    f"process {current.exe_name} (pid={current.pid}) has no recorded "
                    "lineage; treating it as an orphan graph head",
                    BrokenLineageWarning,
                    stacklevel=3,
                )
                return path
            parent = self.parent[current.key]
            if parent is None or self.is_os(parent):
                return path
            if parent.key in visited:
                warnings.warn(
                    f"cyclic parent records at {parent.exe_name} (pid={parent.pid}); "
                    "treating the current process as an orphan graph head",
                    BrokenLineageWarning,
                    stacklevel=3,
                )
                return path
            visited.add(parent.key)
            path.append(parent)
            current = parent


def _subject_of(event: RawEvent) -> ProcessRef:
    """The process a node belongs to: the started child for process starts."""
    if event.event_type is EventType.PROCESS_START:
        return event.attrs.child
    return event.actor


def find_graph_head(event: RawEvent, log: EventLog,
                    os_process_names: Iterable[str] | None = None) -> ProcessRef:
    """Youngest ancestor of the event's process whose parent is an OS process."""
    names = frozenset(n.lower() for n in os_process_names) if os_process_names else log.os_process_names
    index = _ProcessIndex(log, names)
    return index.walk_to_head(_subject_of(event))[-1]


class _GraphBuilder:
    def __init__(self, graph_id: int, head: ProcessRef, window_start: int, index: _ProcessIndex):
        self.graph_id = graph_id
        self.head = head
        self.window_start = window_start
        self.window_end = window_start
        self.index = index
        self.nodes: list[GraphNode] = []
        self.parent_of: dict[int, int] = {}
        self.process_node: dict[tuple[int, int], int] = {}
        self._anchor_seq = 0

    def _new_node(self, event: RawEvent, parent_node: int | None, synthetic: bool) -> int:
        node_id = len(self.nodes)
        self.nodes.append(GraphNode(node_id=node_id, event=event, synthetic=synthetic))
        if parent_node is not None:
            self.parent_of[node_id] = parent_node
        return node_id

    def _anchor_event(self, ref: ProcessRef) -> RawEvent:
        """Stand-in PROCESS_START for a process whose real start lies outside this graph."""
        self._anchor_seq += 1
        start = self.index.start_event.get(ref.key)
        cmdline = start.attrs.cmdline if start is not None else ref.exe_path
        actor = self.index.parent.get(ref.key) or _UNKNOWN_PARENT
        return RawEvent(
            event_id=-self._anchor_seq,
            timestamp=self.window_start,
            event_type=EventType.PROCESS_START,
            actor=actor,
            parent=None,
            attrs=ProcessStartAttrs(child=ref, cmdline=cmdline),
            duration_ms=0,
        )

    def _ensure_process_node(self, ref: ProcessRef) -> int:
        if ref.key in self.process_node:
            return self.process_node[ref.key]
        # materialize missing ancestors top-down so parents always exist first
        path = self.index.walk_to_head(ref)  # [ref, ..., head]
        parent_node: int | None = None
        for ancestor in reversed(path):
            node = self.process_node.get(ancestor.key)
            if node is None:
                node = self._new_node(self._anchor_event(ancestor), parent_node, synthetic=True)
                self.process_node[ancestor.key] = node
            parent_node = node
        return self.process_node[ref.key]

    def add_event(self, event: RawEvent) -> None:
        self.window_end = max(self.window_end, event.timestamp)
        if event.event_type is EventType.PROCESS_START:
            child = event.attrs.child
            if not self.nodes and child.key == self.head.key:
                node = self._new_node(event, None, synthetic=False)  # real head node
            else:
                node = self._new_node(event, self._ensure_process_node(event.actor), synthetic=False)
            self.process_node.setdefault(child.key, node)
        else:
            self._new_node(event, self._ensure_process_node(event.actor), synthetic=False)

    def finish(self) -> ProvenanceGraph:
        return ProvenanceGraph(
            graph_id=self.graph_id,
            head=0,
            head_process=self.head,
            nodes=tuple(self.nodes),
            parent_of=dict(self.parent_of),
            window_of_time=(self.window_start, self.window_end),
        )


def build_graphs(log: EventLog, cfg: BuildConfig = BuildConfig()) -> list[ProvenanceGraph]:
    """Partition filtered non-OS events of a log into disjoint provenance graphs.

    Deterministic: events are consumed in (timestamp, event_id) order and
    graphs are seeded from the earliest event not yet covered.
    """
    os_names = cfg.os_process_names
    if os_names is None:
        os_names = log.os_process_names
    else:
        os_names = frozenset(n.lower() for n in os_names)
    index = _ProcessIndex(log, os_names)

    builders: list[_GraphBuilder] = []
    open_graph: dict[tuple[int, int], _GraphBuilder] = {}
    head_cache: dict[tuple[int, int], ProcessRef] = {}

    for event in log.events:
        if event.event_type not in cfg.event_type_filter:
            continue
        subject = _subject_of(event)
        if index.is_os(subject):
            continue  # initiated from the operating system
        head = head_cache.get(subject.key)
        if head is None:
            head = index.walk_to_head(subject)[-1]
            head_cache[subject.key] = head
        builder = open_graph.get(head.key)
        if builder is not None and event.timestamp - builder.window_start >= cfg.max_duration_ms:
            builder = None  # timer expired: start a new graph with the same head
        if builder is None:
            builder = _GraphBuilder(len(builders), head, event.timestamp, index)
            builders.append(builder)
            open_graph[head.key] = builder
        builder.add_event(event)

    graphs = [b.finish() for b in builders]
    graphs.sort(key=lambda g: (g.head_process.start_time, g.graph_id))
    return graphs


def graph_stats(graph: ProvenanceGraph) -> dict[str, int]:
    """Node count and longest root-to-leaf path (in nodes)."""
    depth = {graph.head: 1}
    for node in graph.nodes:  # parents precede children by construction
        if node.node_id == graph.head:
            continue
        depth[node.node_id] = depth[graph.parent_of[node.node_id]] + 1
    return {"num_events": len(graph.nodes), "depth": max(depth.values())}


# --- on-disk format: one JSON document per graph ---

def graph_to_json(graph: ProvenanceGraph) -> str:
    doc = {
        "graph_id": graph.graph_id,
        "head": graph.head,
        "head_process": {
            "pid": graph.head_process.pid,
            "start_time": graph.head_process.start_time,
            "exe_path": graph.head_process.exe_path,
        },
        "window_of_time": list(graph.window_of_time),
        "nodes": [
            {
                "node_id": n.node_id,
                "synthetic": n.synthetic,
                "event": json.loads(serialize_event(n.event)),
            }
            for n in graph.nodes
        ],
        "edges": sorted([p, c] for c, p in graph.parent_of.items()),
    }
    return json.dumps(doc, ensure_ascii=True, separators=(",", ":"))


def graph_from_json(text: str) -> ProvenanceGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid graph document: {exc}") from None
    head_ref = ProcessRef(**doc["head_process"])
    nodes = tuple(
        GraphNode(
            node_id=n["node_id"],
            event=parse_event_line(json.dumps(n["event"])),
            synthetic=n["synthetic"],
        )
        for n in doc["nodes"]
    )
    parent_of = {child: parent for parent, child in doc["edges"]}
    return ProvenanceGraph(
        graph_id=doc["graph_id"],
        head=doc["head"],
        head_process=head_ref,
        nodes=nodes,
        parent_of=parent_of,
        window_of_time=tuple(doc["window_of_time"]),
    )


def save_graphs(graphs: Iterable[ProvenanceGraph], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for graph in graphs:
            path = out / f"graph_{graph.graph_id:05d}.json"
            path.write_text(graph_to_json(graph) + "\n", encoding="utf-8")
            paths.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write graphs to {out_dir}: {exc}") from None
    return paths


def load_graphs(in_dir: str | Path) -> list[ProvenanceGraph]:
    try:
        paths = sorted(Path(in_dir).glob("graph_*.json"))
        graphs = [graph_from_json(p.read_text(encoding="utf-8")) for p in paths]
    except OSError as exc:
        raise IoFailure(f"cannot read graphs from {in_dir}: {exc}") from None
    return graphs
