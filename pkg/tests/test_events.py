"""Event parsing, schema validation, and log round-trips."""
import json

import pytest

from provsight.errors import (
    DuplicateEventId,
    IoFailure,
    MalformedRecord,
    SchemaViolation,
    UnknownEventType,
)
from provsight.events import (
    DEFAULT_OS_PROCESS_NAMES,
    EventType,
    load_log,
    make_log,
    parse_event_line,
    read_log_file,
    serialize_event,
    write_log_file,
)

ACTOR = {"pid": 10, "start_time": 1000, "exe_path": "C:\\Program Files\\App\\app.exe"}
PARENT = {"pid": 4, "start_time": 900, "exe_path": "C:\\Windows\\System32\\winlogon.exe"}


def record(event_type="FILE_ACCESS", **overrides):
    base = {
        "event_id": 1,
        "timestamp": 1500,
        "event_type": event_type,
        "actor": dict(ACTOR),
        "parent": dict(PARENT),
        "duration_ms": 2.5,
    }
    attrs = {
        "PROCESS_START": {"child": {"pid": 11, "start_time": 1500,
                                    "exe_path": "C:\\Temp\\tool.exe"},
                          "cmdline": "tool.exe /S"},
        "FILE_ACCESS": {"path": "C:\\Users\\u\\doc.txt", "access_mode": "r",
                        "options": "SEQUENTIAL_SCAN", "bytes": 123},
        "REGISTRY_ACCESS": {"key_path": "HKCU\\Software\\V\\K", "value_type": "REG_SZ"},
        "NETWORK_CONNECTION": {"src_ip": "10.0.0.5", "dst_ip": "93.10.2.1",
                               "dst_port": 443, "protocol": "tcp",
                               "direction": "out", "bytes": 900},
    }[event_type]
    base["attrs"] = attrs
    base.update(overrides)
    return base


def line(event_type="FILE_ACCESS", **overrides) -> str:
    return json.dumps(record(event_type, **overrides))


@pytest.mark.parametrize("event_type", [t.value for t in EventType])
def test_parse_each_event_type(event_type):
    event = parse_event_line(line(event_type))
    assert event.event_type == EventType(event_type)
    assert event.actor.pid == 10
    assert event.parent.pid == 4


def test_serialize_parse_identity():
    for event_type in EventType:
        event = parse_event_line(line(event_type.value))
        again = parse_event_line(serialize_event(event))
        assert again == event


def test_serialized_form_is_stable():
    event = parse_event_line(line())
    once = serialize_event(event)
    assert serialize_event(parse_event_line(once)) == once


def test_parent_null_allowed():
    event = parse_event_line(line(parent=None))
    assert event.parent is None


def test_invalid_json_rejected():
    with pytest.raises(MalformedRecord):
        parse_event_line("{not json")
    with pytest.raises(MalformedRecord):
        parse_event_line('"just a string"')


def test_unknown_event_type_rejected():
    with pytest.raises(UnknownEventType):
        parse_event_line(line().replace("FILE_ACCESS", "THREAD_CREATE"))


def test_missing_fields_rejected():
    for field in ("event_id", "timestamp", "actor", "parent", "attrs", "duration_ms"):
        bad = record()
        del bad[field]
        with pytest.raises(SchemaViolation):
            parse_event_line(json.dumps(bad))


def test_wrong_types_rejected():
    with pytest.raises(SchemaViolation):
        parse_event_line(line(event_id="7"))
    with pytest.raises(SchemaViolation):
        parse_event_line(line(timestamp=True))  # bool is not an int here
    with pytest.raises(SchemaViolation):
        parse_event_line(line(duration_ms=-1))


def test_bad_attrs_rejected():
    bad = record()
    bad["attrs"]["access_mode"] = "x"
    with pytest.raises(SchemaViolation):
        parse_event_line(json.dumps(bad))
    bad = record("NETWORK_CONNECTION")
    bad["attrs"]["dst_ip"] = "not-an-ip"
    with pytest.raises(SchemaViolation):
        parse_event_line(json.dumps(bad))
    bad = record("NETWORK_CONNECTION")
    bad["attrs"]["dst_port"] = 70000
    with pytest.raises(SchemaViolation):
        parse_event_line(json.dumps(bad))
    bad = record()
    bad["attrs"]["surprise"] = 1
    with pytest.raises(SchemaViolation):
        parse_event_line(json.dumps(bad))


def test_load_log_sorts_and_skips_comments(tmp_path):
    lines = [
        "# a comment",
        line(event_id=2, timestamp=2000),
        "",
        line(event_id=1, timestamp=1500),
        line(event_id=3, timestamp=1500),
    ]
    path = tmp_path / "events.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log = load_log(path)
    assert [e.event_id for e in log.events] == [1, 3, 2]  # (timestamp, event_id)


def test_load_log_reports_line_numbers(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text(line() + "\n{bad\n", encoding="utf-8")
    with pytest.raises(MalformedRecord, match=":2:"):
        load_log(path)


def test_duplicate_event_id_rejected(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text(line(event_id=5) + "\n" + line(event_id=5, timestamp=1600) + "\n",
                    encoding="utf-8")
    with pytest.raises(DuplicateEventId):
        load_log(path)


def test_missing_file_is_io_failure():
    with pytest.raises(IoFailure):
        load_log("/nonexistent/events.jsonl")


def test_os_process_filtering():
    event = parse_event_line(line())
    log = make_log([event])
    assert log.is_os_process(event.parent)  # winlogon.exe
    assert not log.is_os_process(event.actor)
    custom = make_log([event], os_process_names=["APP.EXE"])
    assert custom.is_os_process(event.actor)  # case-insensitive


def test_log_container_roundtrip_bit_exact(tmp_path):
    events = [parse_event_line(line(t.value, event_id=i, timestamp=1500 + i))
              for i, t in enumerate(EventType)]
    log = make_log(events)
    p1 = tmp_path / "a.log"
    p2 = tmp_path / "b.log"
    write_log_file(log, p1)
    loaded = read_log_file(p1)
    assert loaded == log
    assert loaded.os_process_names == frozenset(DEFAULT_OS_PROCESS_NAMES)
    write_log_file(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_rejects_garbage(tmp_path):
    path = tmp_path / "x.log"
    path.write_text("#wrong-magic\n", encoding="utf-8")
    with pytest.raises(MalformedRecord):
        read_log_file(path)
