"""Log partitioning into provenance trees."""
import json
import warnings

import numpy as np
import pytest

from provsight.errors import BrokenLineageWarning
from provsight.events import EventType, ProcessRef, make_log, parse_event_line
from provsight.graphs import (
    BuildConfig,
    build_graphs,
    find_graph_head,
    graph_from_json,
    graph_stats,
    graph_to_json,
    load_graphs,
    save_graphs,
)
from provsight.synth import SynthConfig, generate_synthetic_corpus

OS = "C:\\Windows\\System32\\winlogon.exe"


def ref(pid, start, exe):
    return {"pid": pid, "start_time": start, "exe_path": exe}


def start_line(eid, ts, actor, parent, child, cmdline="x"):
    return json.dumps({
        "event_id": eid, "timestamp": ts, "event_type": "PROCESS_START",
        "actor": actor, "parent": parent,
        "attrs": {"child": child, "cmdline": cmdline}, "duration_ms": 0,
    })


def file_line(eid, ts, actor, parent, path="C:\\t.txt"):
    return json.dumps({
        "event_id": eid, "timestamp": ts, "event_type": "FILE_ACCESS",
        "actor": actor, "parent": parent,
        "attrs": {"path": path, "access_mode": "r", "options": "", "bytes": 1},
        "duration_ms": 0,
    })


def small_log():
    """winlogon starts app (pid 2); app starts helper (pid 3); both act."""
    os_ref = ref(1, 0, OS)
    app = ref(2, 100, "C:\\P\\app.exe")
    helper = ref(3, 200, "C:\\P\\helper.exe")
    lines = [
        start_line(1, 100, os_ref, None, app),
        file_line(2, 150, app, os_ref),
        start_line(3, 200, app, os_ref, helper),
        file_line(4, 250, helper, app),
    ]
    return make_log([parse_event_line(l) for l in lines])


def test_single_graph_tree_shape():
    graphs = build_graphs(small_log())
    assert len(graphs) == 1
    g = graphs[0]
    assert g.head_process.pid == 2
    # head start + app's file + helper start + helper's file
    assert len(g.real_events()) == 4
    assert g.head == 0
    for node in g.nodes:
        if node.node_id != g.head:
            assert node.node_id in g.parent_of  # exactly one parent edge
    # helper's file access hangs off the helper start node
    by_eid = {n.event.event_id: n.node_id for n in g.nodes if not n.synthetic}
    assert g.parent_of[by_eid[4]] == by_eid[3]
    assert g.parent_of[by_eid[2]] == by_eid[1] == g.head


def test_find_graph_head_walks_lineage():
    log = small_log()
    last = log.events[-1]
    head = find_graph_head(last, log)
    assert head.pid == 2


def test_two_apps_two_graphs():
    os_ref = ref(1, 0, OS)
    a = ref(2, 100, "C:\\P\\a.exe")
    b = ref(5, 110, "C:\\P\\b.exe")
    lines = [
        start_line(1, 100, os_ref, None, a),
        start_line(2, 110, os_ref, None, b),
        file_line(3, 150, a, os_ref),
        file_line(4, 160, b, os_ref),
    ]
    graphs = build_graphs(make_log([parse_event_line(l) for l in lines]))
    assert len(graphs) == 2
    assert {g.head_process.pid for g in graphs} == {2, 5}


def test_max_duration_splits_into_continuation():
    os_ref = ref(1, 0, OS)
    app = ref(2, 100, "C:\\P\\app.exe")
    lines = [
        start_line(1, 100, os_ref, None, app),
        file_line(2, 200, app, os_ref),
        file_line(3, 5000, app, os_ref),  # past the 1s budget
    ]
    log = make_log([parse_event_line(l) for l in lines])
    graphs = build_graphs(log, BuildConfig(max_duration_ms=1000))
    assert len(graphs) == 2
    first, second = graphs
    assert len(first.real_events()) == 2
    assert len(second.real_events()) == 1
    # the continuation roots at a synthetic anchor for the same head
    assert second.nodes[second.head].synthetic
    assert second.head_process.key == first.head_process.key
    lo, hi = second.window_of_time
    assert lo <= second.real_events()[0].timestamp <= hi


def test_explicit_null_parent_is_a_head():
    ghost = ref(9, 50, "C:\\P\\ghost.exe")
    log = make_log([parse_event_line(file_line(1, 100, ghost, None))])
    graphs = build_graphs(log)
    assert len(graphs) == 1
    assert graphs[0].head_process.pid == 9
    assert graphs[0].nodes[graphs[0].head].synthetic  # start never observed


def test_undefined_ancestor_warns_and_becomes_orphan_head():
    actor = ref(2, 100, "C:\\P\\a.exe")
    ghost_parent = ref(7, 40, "C:\\P\\ghost.exe")  # referenced, never defined
    log = make_log([parse_event_line(file_line(1, 100, actor, ghost_parent))])
    with pytest.warns(BrokenLineageWarning):
        graphs = build_graphs(log)
    assert len(graphs) == 1
    assert graphs[0].head_process.pid == 7


def test_cyclic_parent_records_handled():
    a = ref(2, 100, "C:\\P\\a.exe")
    b = ref(3, 100, "C:\\P\\b.exe")
    lines = [
        start_line(1, 100, ref(3, 100, "C:\\P\\b.exe"), None, a),
        start_line(2, 101, ref(2, 100, "C:\\P\\a.exe"), None, b),
        file_line(3, 150, a, b),
    ]
    log = make_log([parse_event_line(l) for l in lines])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BrokenLineageWarning)
        graphs = build_graphs(log)
    # no hang, every graph still a tree
    for g in graphs:
        assert set(g.parent_of) == {n.node_id for n in g.nodes} - {g.head}


def test_os_initiated_events_excluded():
    os_ref = ref(1, 0, OS)
    app = ref(2, 100, "C:\\P\\app.exe")
    lines = [
        start_line(1, 100, os_ref, None, app),
        file_line(2, 120, os_ref, None),  # OS actor: not part of any app graph
        file_line(3, 150, app, os_ref),
    ]
    graphs = build_graphs(make_log([parse_event_line(l) for l in lines]))
    assert len(graphs) == 1
    assert {e.event_id for e in graphs[0].real_events()} == {1, 3}


def test_partition_covers_filtered_events_exactly():
    log, _ = generate_synthetic_corpus(SynthConfig(seed=11, n_benign_graphs=6,
                                                   n_malicious_graphs=6,
                                                   noise_events_range=(30, 90)))
    graphs = build_graphs(log)
    kept = [e for e in log.events if not log.is_os_process(_subject(e))]
    union = [e for g in graphs for e in g.real_events()]
    assert sorted(e.event_id for e in union) == sorted(e.event_id for e in kept)


def _subject(event):
    if event.event_type is EventType.PROCESS_START:
        return event.attrs.child
    return event.actor


def test_node_timestamps_inside_window():
    log, _ = generate_synthetic_corpus(SynthConfig(seed=12, n_benign_graphs=4,
                                                   n_malicious_graphs=4,
                                                   noise_events_range=(30, 60)))
    for g in build_graphs(log):
        lo, hi = g.window_of_time
        for e in g.real_events():
            assert lo <= e.timestamp <= hi
        assert hi - lo <= BuildConfig().max_duration_ms


def test_graph_stats_depth():
    g = build_graphs(small_log())[0]
    stats = graph_stats(g)
    assert stats["num_events"] == len(g)
    assert stats["depth"] == 3  # head start -> helper start -> helper file


def test_json_roundtrip_and_dir_io(tmp_path):
    graphs = build_graphs(small_log())
    text = graph_to_json(graphs[0])
    again = graph_from_json(text)
    assert again == graphs[0]
    assert graph_to_json(again) == text

    paths = save_graphs(graphs, tmp_path / "graphs")
    assert all(p.exists() for p in paths)
    loaded = load_graphs(tmp_path / "graphs")
    assert loaded == graphs


def test_build_is_deterministic():
    log, _ = generate_synthetic_corpus(SynthConfig(seed=13, n_benign_graphs=5,
                                                   n_malicious_graphs=5,
                                                   noise_events_range=(30, 60)))
    one = [graph_to_json(g) for g in build_graphs(log)]
    two = [graph_to_json(g) for g in build_graphs(log)]
    assert one == two
