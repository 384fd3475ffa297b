"""Security feature extraction and the causal global context."""
import json

import pytest

from provsight.enrich import (
    EMBED_DIM,
    GlobalContext,
    SecurityFeatures,
    compute_features,
    enrich_graphs,
    enriched_from_json,
    enriched_to_json,
    is_dropped_binary,
    load_enriched,
    save_enriched,
    update_global_context,
)
from provsight.events import EventType, make_log, parse_event_line
from provsight.graphs import build_graphs
from provsight.rules import default_rules
from provsight.synth import SynthConfig, apply_ground_truth, generate_synthetic_corpus

RULES = default_rules()
OS = "C:\\Windows\\System32\\winlogon.exe"


def make_event(event_type, ts=1000, eid=1, actor=None, parent=None, **attrs):
    doc = {
        "event_id": eid, "timestamp": ts, "event_type": event_type,
        "actor": actor or {"pid": 2, "start_time": 100, "exe_path": "C:\\P\\app.exe"},
        "parent": parent, "attrs": attrs, "duration_ms": 1.5,
    }
    return parse_event_line(json.dumps(doc))


def start_event(ts=1000, eid=1, exe="C:\\Users\\u\\AppData\\Local\\Temp\\tool.exe",
                cmdline="tool.exe /S --quiet"):
    return make_event("PROCESS_START", ts=ts, eid=eid,
                      child={"pid": 9, "start_time": ts, "exe_path": exe},
                      cmdline=cmdline)


def write_event(path, ts=500, eid=2, mode="w", options="", nbytes=100):
    return make_event("FILE_ACCESS", ts=ts, eid=eid, path=path,
                      access_mode=mode, options=options, bytes=nbytes)


def test_start_features_local_fields():
    sf = compute_features(start_event(), GlobalContext(), RULES)
    assert sf.event_type is EventType.PROCESS_START
    assert sf.exe_name == "tool.exe"
    assert sf.exe_path_cat == "TEMP"
    assert sf.exe_extension == ".exe"
    assert sf.cmdline_length == float(len("tool.exe /S --quiet"))
    assert sf.cmdline_flag_count == 2.0
    assert sf.time_duration == 1.5
    # neutral defaults outside the event type
    assert sf.file_path_cat == "NONE" and sf.connection_size == 0.0


def test_file_features():
    sf = compute_features(
        write_event("C:\\Users\\u\\AppData\\Roaming\\Mozilla\\Firefox\\cookies.sqlite",
                    mode="r", options="RANDOM_ACCESS", nbytes=4096),
        GlobalContext(), RULES)
    assert sf.event_type is EventType.FILE_ACCESS
    assert sf.sensitive_file
    assert sf.access_mode == "r"
    assert sf.access_options == "RANDOM_ACCESS"
    assert sf.access_amount == 4096.0
    assert sf.file_extension == ".sqlite"


def test_registry_features():
    sf = compute_features(
        make_event("REGISTRY_ACCESS",
                   key_path="HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\Agent",
                   value_type="REG_SZ"),
        GlobalContext(), RULES)
    assert sf.persistence_key and not sf.internet_key
    assert sf.key_data_type == "REG_SZ"
    notify = compute_features(
        make_event("REGISTRY_ACCESS",
                   key_path="HKLM\\Software\\Microsoft\\Windows NT\\CurrentVersion\\Winlogon\\Notify\\x",
                   value_type="REG_BINARY"),
        GlobalContext(), RULES)
    assert notify.notify_key


def test_network_features():
    sf = compute_features(
        make_event("NETWORK_CONNECTION", src_ip="192.168.1.4", dst_ip="8.8.4.4",
                   dst_port=443, protocol="tcp", direction="in", bytes=2000),
        GlobalContext(), RULES)
    assert sf.src_internal and not sf.dst_internal
    assert sf.service_port == "443"
    assert sf.direction_incoming
    assert sf.connection_size == 2000.0


def test_dropped_binary_requires_recent_write():
    ctx = GlobalContext()
    exe = "C:\\Users\\u\\Downloads\\setup.exe"
    update_global_context(ctx, write_event(exe, ts=500), RULES)
    assert is_dropped_binary(ctx, exe, at=600)
    assert is_dropped_binary(ctx, exe.upper(), at=600)  # path normalization
    assert not is_dropped_binary(ctx, exe, at=400)  # write is in the future
    assert not is_dropped_binary(ctx, exe, at=500 + 10 * 60 * 1000 + 1)  # too old
    assert not is_dropped_binary(ctx, "C:\\other.exe", at=600)


def test_dropped_binary_on_start_features():
    ctx = GlobalContext()
    exe = "C:\\Users\\u\\AppData\\Local\\Temp\\tool.exe"
    update_global_context(ctx, write_event(exe, ts=900), RULES)
    sf = compute_features(start_event(ts=1000, exe=exe), ctx, RULES)
    assert sf.dropped_binary


def test_context_records_autostart_targets():
    ctx = GlobalContext()
    lnk = ("C:\\Users\\u\\AppData\\Roaming\\Microsoft\\Windows\\Start Menu\\"
           "Programs\\Startup\\x.lnk")
    update_global_context(ctx, write_event(lnk, options="target=C:\\P\\agent.exe"), RULES)
    assert "c:\\p\\agent.exe" in ctx.persisted_binaries
    # a binary dropped into the folder is its own target
    exe_in_startup = lnk.replace("x.lnk", "agent2.exe")
    update_global_context(ctx, write_event(exe_in_startup, eid=3), RULES)
    assert exe_in_startup.lower() in ctx.persisted_binaries


def test_context_ignores_reads_and_non_executables():
    ctx = GlobalContext()
    update_global_context(ctx, write_event("C:\\a\\b.exe", mode="r"), RULES)
    update_global_context(ctx, write_event("C:\\a\\c.txt", eid=3), RULES)
    assert not ctx.written_executables


def test_embedding_length_validated():
    with pytest.raises(ValueError):
        SecurityFeatures(event_type=EventType.FILE_ACCESS, cmd_embedding=(0.0,) * 3)
    assert len(SecurityFeatures(event_type=EventType.FILE_ACCESS).cmd_embedding) == EMBED_DIM


def corpus_graphs(seed=21, n=5, noise=(30, 80)):
    log, truth = generate_synthetic_corpus(
        SynthConfig(seed=seed, n_benign_graphs=n, n_malicious_graphs=n,
                    noise_events_range=noise))
    graphs = build_graphs(log)
    return log, truth, graphs


def test_enrich_graphs_aligned_and_labeled():
    log, truth, graphs = corpus_graphs()
    enriched = apply_ground_truth(enrich_graphs(graphs, log, RULES), truth)
    assert len(enriched) == len(graphs)
    labels = [eg.label for eg in enriched]
    assert labels.count("benign") == labels.count("malicious") == 5
    for eg in enriched:
        assert len(eg.features) == len(eg.graph.nodes)
        for node, sf in zip(eg.graph.nodes, eg.features):
            if not node.synthetic:
                assert sf.event_type == node.event.event_type
        if eg.label == "malicious":
            assert eg.planted


def test_enrichment_is_causal_prefix_replay():
    """Features never depend on events after the node's timestamp."""
    log, _, graphs = corpus_graphs(seed=22, n=3)
    full = enrich_graphs(graphs, log, RULES)
    cut = sorted(e.timestamp for e in log.events)[len(log.events) // 2]
    truncated_log = make_log([e for e in log.events if e.timestamp <= cut],
                             log.os_process_names)
    truncated = enrich_graphs(build_graphs(truncated_log), truncated_log, RULES)

    full_by_eid = {}
    for eg in full:
        for node, sf in zip(eg.graph.nodes, eg.features):
            if not node.synthetic:
                full_by_eid[node.event.event_id] = sf
    compared = 0
    for eg in truncated:
        for node, sf in zip(eg.graph.nodes, eg.features):
            if not node.synthetic:
                assert sf == full_by_eid[node.event.event_id]
                compared += 1
    assert compared > 100


def test_enriched_json_roundtrip(tmp_path):
    log, truth, graphs = corpus_graphs(seed=23, n=2, noise=(20, 40))
    enriched = apply_ground_truth(enrich_graphs(graphs, log, RULES), truth)
    text = enriched_to_json(enriched[0])
    again = enriched_from_json(text)
    assert again == enriched[0]
    assert enriched_to_json(again) == text

    save_enriched(enriched, tmp_path / "enr")
    assert load_enriched(tmp_path / "enr") == list(enriched)
