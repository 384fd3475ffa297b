"""Behavior-event data model and JSON-Lines log ingestion.

One event per line. The canonical schema (one example per event type) is
documented in ``docs/event-schema.md``; ``serialize_event`` emits exactly
that canonical form, so parse -> serialize round-trips are byte-stable.
"""
from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Union

from .errors import (
    DuplicateEventId,
    IoFailure,
    MalformedRecord,
    SchemaViolation,
    UnknownEventType,
)

DEFAULT_OS_PROCESS_NAMES = frozenset({"winlogon.exe", "wininit.exe", "logonui.exe"})

ACCESS_MODES = ("w", "r", "d")
PROTOCOLS = ("tcp", "udp", "other")
DIRECTIONS = ("in", "out")

LOG_MAGIC = "#provsight-log v1"


class EventType(str, Enum):
    PROCESS_START = "PROCESS_START"
    FILE_ACCESS = "FILE_ACCESS"
    REGISTRY_ACCESS = "REGISTRY_ACCESS"
    NETWORK_CONNECTION = "NETWORK_CONNECTION"


@dataclass(frozen=True)
class ProcessRef:
    """Stable process identity: pid alone recycles within long logs."""

    pid: int
    start_time: int  # ms since epoch
    exe_path: str

    @property
    def key(self) -> tuple[int, int]:
        return (self.pid, self.start_time)

    @property
    def exe_name(self) -> str:
        return self.exe_path.replace("/", "\\").rsplit("\\", 1)[-1].lower()


@dataclass(frozen=True)
class ProcessStartAttrs:
    child: ProcessRef
    cmdline: str


@dataclass(frozen=True)
class FileAccessAttrs:
    path: str
    access_mode: str  # w | r | d
    options: str
    bytes: int


@dataclass(frozen=True)
class RegistryAccessAttrs:
    key_path: str
    value_type: str


@dataclass(frozen=True)
class NetworkConnectionAttrs:
    src_ip: str
    dst_ip: str
    dst_port: int
    protocol: str  # tcp | udp | other
    direction: str  # in | out
    bytes: int


EventAttrs = Union[ProcessStartAttrs, FileAccessAttrs, RegistryAccessAttrs, NetworkConnectionAttrs]


@dataclass(frozen=True)
class RawEvent:
    event_id: int
    timestamp: int  # ms since epoch
    event_type: EventType
    actor: ProcessRef
    parent: ProcessRef | None
    attrs: EventAttrs
    duration_ms: float

    @property
    def sort_key(self) -> tuple[int, int]:
        return (self.timestamp, self.event_id)


@dataclass(frozen=True)
class EventLog:
    """Events sorted ascending by (timestamp, event_id); ids unique."""

    events: tuple[RawEvent, ...]
    os_process_names: frozenset[str]

    def __len__(self) -> int:
        return len(self.events)

    def is_os_process(self, ref: ProcessRef) -> bool:
        return ref.exe_name in self.os_process_names


# --- parsing helpers ---

def _require(record: dict, field: str, kinds, where: str):
    if field not in record:
        raise SchemaViolation(f"missing field '{where}{field}'")
    value = record[field]
    if kinds is int and isinstance(value, bool):  # bool is an int subclass
        raise SchemaViolation(f"field '{where}{field}' must be an integer")
    if not isinstance(value, kinds):
        raise SchemaViolation(f"field '{where}{field}' has wrong type {type(value).__name__}")
    return value


def _parse_process_ref(record, where: str) -> ProcessRef:
    if not isinstance(record, dict):
        raise SchemaViolation(f"field '{where}' must be an object")
    pid = _require(record, "pid", int, where + ".")
    start_time = _require(record, "start_time", int, where + ".")
    exe_path = _require(record, "exe_path", str, where + ".")
    if not exe_path:
        raise SchemaViolation(f"field '{where}.exe_path' must be non-empty")
    return ProcessRef(pid=pid, start_time=start_time, exe_path=exe_path)


def _parse_ip(value: str, where: str) -> str:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        raise SchemaViolation(f"field '{where}' is not a valid IP address: {value!r}") from None
    return value


def _check_attr_keys(attrs: dict, allowed: tuple[str, ...]):
    extra = set(attrs) - set(allowed)
    if extra:
        raise SchemaViolation(f"unexpected attrs fields: {sorted(extra)}")


def _parse_attrs(event_type: EventType, attrs: dict, actor: ProcessRef) -> EventAttrs:
    if not isinstance(attrs, dict):
        raise SchemaViolation("field 'attrs' must be an object")
    if event_type is EventType.PROCESS_START:
        _check_attr_keys(attrs, ("child", "cmdline"))
        child = _parse_process_ref(_require(attrs, "child", dict, "attrs."), "attrs.child")
        cmdline = _require(attrs, "cmdline", str, "attrs.")
        if child.key == actor.key:
            raise SchemaViolation("attrs.child must differ from actor")
        return ProcessStartAttrs(child=child, cmdline=cmdline)
    if event_type is EventType.FILE_ACCESS:
        _check_attr_keys(attrs, ("path", "access_mode", "options", "bytes"))
        mode = _require(attrs, "access_mode", str, "attrs.")
        if mode not in ACCESS_MODES:
            raise SchemaViolation(f"attrs.access_mode must be one of {ACCESS_MODES}, got {mode!r}")
        nbytes = _require(attrs, "bytes", int, "attrs.")
        if nbytes < 0:
            raise SchemaViolation("attrs.bytes must be non-negative")
        return FileAccessAttrs(
            path=_require(attrs, "path", str, "attrs."),
            access_mode=mode,
            options=_require(attrs, "options", str, "attrs."),
            bytes=nbytes,
        )
    if event_type is EventType.REGISTRY_ACCESS:
        _check_attr_keys(attrs, ("key_path", "value_type"))
        return RegistryAccessAttrs(
            key_path=_require(attrs, "key_path", str, "attrs."),
            value_type=_require(attrs, "value_type", str, "attrs."),
        )
    # NETWORK_CONNECTION
    _check_attr_keys(attrs, ("src_ip", "dst_ip", "dst_port", "protocol", "direction", "bytes"))
    port = _require(attrs, "dst_port", int, "attrs.")
    if not 0 <= port <= 65535:
        raise SchemaViolation(f"attrs.dst_port out of range: {port}")
    protocol = _require(attrs, "protocol", str, "attrs.")
    if protocol not in PROTOCOLS:
        raise SchemaViolation(f"attrs.protocol must be one of {PROTOCOLS}, got {protocol!r}")
    direction = _require(attrs, "direction", str, "attrs.")
    if direction not in DIRECTIONS:
        raise SchemaViolation(f"attrs.direction must be one of {DIRECTIONS}, got {direction!r}")
    nbytes = _require(attrs, "bytes", int, "attrs.")
    if nbytes < 0:
        raise SchemaViolation("attrs.bytes must be non-negative")
    return NetworkConnectionAttrs(
        src_ip=_parse_ip(_require(attrs, "src_ip", str, "attrs."), "attrs.src_ip"),
        dst_ip=_parse_ip(_require(attrs, "dst_ip", str, "attrs."), "attrs.dst_ip"),
        dst_port=port,
        protocol=protocol,
        direction=direction,
        bytes=nbytes,
    )


def parse_event_line(line: str) -> RawEvent:
    """Parse and fully validate one JSON-Lines event record."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise MalformedRecord("record must be a JSON object")

    type_name = _require(record, "event_type", str, "")
    try:
        event_type = EventType(type_name)
    except ValueError:
        raise UnknownEventType(f"unsupported event type {type_name!r}") from None

    event_id = _require(record, "event_id", int, "")
    timestamp = _require(record, "timestamp", int, "")
    actor = _parse_process_ref(_require(record, "actor", dict, ""), "actor")
    if "parent" not in record:
        raise SchemaViolation("missing field 'parent' (use null for no parent)")
    parent = None if record["parent"] is None else _parse_process_ref(record["parent"], "parent")
    duration = _require(record, "duration_ms", (int, float), "")
    if isinstance(duration, bool) or duration < 0:
        raise SchemaViolation("duration_ms must be a non-negative number")
    attrs = _parse_attrs(event_type, _require(record, "attrs", dict, ""), actor)
    return RawEvent(
        event_id=event_id,
        timestamp=timestamp,
        event_type=event_type,
        actor=actor,
        parent=parent,
        attrs=attrs,
        duration_ms=duration,
    )


# --- serialization (canonical form) ---

def _ref_dict(ref: ProcessRef) -> dict:
    return {"pid": ref.pid, "start_time": ref.start_time, "exe_path": ref.exe_path}


def _attrs_dict(event: RawEvent) -> dict:
    a = event.attrs
    if isinstance(a, ProcessStartAttrs):
        return {"child": _ref_dict(a.child), "cmdline": a.cmdline}
    if isinstance(a, FileAccessAttrs):
        return {"path": a.path, "access_mode": a.access_mode, "options": a.options, "bytes": a.bytes}
    if isinstance(a, RegistryAccessAttrs):
        return {"key_path": a.key_path, "value_type": a.value_type}
    return {
        "src_ip": a.src_ip,
        "dst_ip": a.dst_ip,
        "dst_port": a.dst_port,
        "protocol": a.protocol,
        "direction": a.direction,
        "bytes": a.bytes,
    }


def serialize_event(event: RawEvent) -> str:
    """Canonical single-line JSON for one event (no trailing newline)."""
    record = {
        "event_id": event.event_id,
        "timestamp": event.timestamp,
        "event_type": event.event_type.value,
        "actor": _ref_dict(event.actor),
        "parent": None if event.parent is None else _ref_dict(event.parent),
        "attrs": _attrs_dict(event),
        "duration_ms": event.duration_ms,
    }
    return json.dumps(record, ensure_ascii=True, separators=(",", ":"))


# --- log loading ---

def _sorted_log(events: Iterable[RawEvent], os_process_names: Iterable[str]) -> EventLog:
    ordered = sorted(events, key=lambda e: e.sort_key)
    seen: set[int] = set()
    for event in ordered:
        if event.event_id in seen:
            raise DuplicateEventId(f"event_id {event.event_id} appears more than once")
        seen.add(event.event_id)
    return EventLog(
        events=tuple(ordered),
        os_process_names=frozenset(n.lower() for n in os_process_names),
    )


def load_log(path: str | Path, os_process_names: Iterable[str] = DEFAULT_OS_PROCESS_NAMES) -> EventLog:
    """Load a JSON-Lines event file; result is sorted by (timestamp, event_id)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            events.append(parse_event_line(line))
        except (MalformedRecord, SchemaViolation, UnknownEventType) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return _sorted_log(events, os_process_names)


def make_log(events: Iterable[RawEvent], os_process_names: Iterable[str] = DEFAULT_OS_PROCESS_NAMES) -> EventLog:
    """Build a validated EventLog from in-memory events."""
    return _sorted_log(events, os_process_names)


def write_log_file(log: EventLog, path: str | Path) -> None:
    """Write a validated log container: magic line, header, canonical events."""
    header = json.dumps(
        {"os_process_names": sorted(log.os_process_names), "count": len(log.events)},
        separators=(",", ":"),
    )
    lines = [LOG_MAGIC, "#" + header]
    lines.extend(serialize_event(e) for e in log.events)
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def read_log_file(path: str | Path) -> EventLog:
    """Read a container produced by write_log_file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0] != LOG_MAGIC:
        raise MalformedRecord(f"{path}: not a provsight log container")
    try:
        header = json.loads(lines[1][1:])
    except (IndexError, json.JSONDecodeError):
        raise MalformedRecord(f"{path}: bad container header") from None
    events = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            events.append(parse_event_line(line))
        except (MalformedRecord, SchemaViolation, UnknownEventType) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return _sorted_log(events, header["os_process_names"])
