"""Sequence flattening, window extraction, and the feature codec."""
import numpy as np
import pytest

from provsight.enrich import EMBED_DIM, NONE_CATEGORY, SecurityFeatures
from provsight.errors import (
    CodecVersionMismatch,
    DimensionMismatch,
    EmptyTrainSet,
    MalformedRecord,
    NotEnriched,
)
from provsight.events import EventType
from provsight.windows import (
    CATEGORICAL_FIELDS,
    OTHER,
    EventSequence,
    FeatureCodec,
    SequenceItem,
    Window,
    WindowConfig,
    WindowDataset,
    WindowMode,
    graph_to_sequence,
    make_windows,
)

EMB = tuple([0.5] + [0.0] * (EMBED_DIM - 1))


def proc_row(exe="tool.exe", cmdline_length=12.0, embedding=EMB):
    return SecurityFeatures(
        event_type=EventType.PROCESS_START, exe_name=exe, exe_path_cat="TEMP",
        exe_extension=".exe", cmdline_length=cmdline_length, cmdline_flag_count=1.0,
        cmd_embedding=embedding, time_duration=1.0)


def file_row(ext=".txt", amount=100.0, options="SEQUENTIAL_SCAN"):
    return SecurityFeatures(
        event_type=EventType.FILE_ACCESS, file_path_cat="USER", file_extension=ext,
        access_mode="r", access_options=options, access_amount=amount, time_duration=2.0)


def reg_row():
    return SecurityFeatures(
        event_type=EventType.REGISTRY_ACCESS, persistence_key=True,
        key_data_type="REG_SZ", time_duration=0.5)


def net_row(port="443"):
    return SecurityFeatures(
        event_type=EventType.NETWORK_CONNECTION, src_internal=True,
        service_port=port, connection_size=900.0, transport_protocol="tcp",
        time_duration=3.0)


def make_seq(features, label="benign", planted=(), graph_id=0):
    items = tuple(
        SequenceItem(node_id=i, timestamp=1000 + i, features=sf, summary=f"row {i}")
        for i, sf in enumerate(features)
    )
    return EventSequence(graph_id=graph_id, items=items, label=label,
                         planted_suspicious=frozenset(planted))


# ---------------------------------------------------------------- windows

def test_oversample_start_positions_and_padding():
    seq = make_seq([file_row() for _ in range(7)])
    wins = make_windows(seq, WindowConfig(W=4, mode=WindowMode.OVERSAMPLE, stride=3))
    assert [w.start_index for w in wins] == [0, 3, 6]
    assert [w.pad_count for w in wins] == [0, 0, 3]
    # the padded tail keeps None features and empty summaries
    assert wins[-1].features[1:] == (None, None, None)
    assert wins[-1].summaries[1:] == ("", "", "")


def test_anchored_windows_start_at_process_creations():
    feats = [file_row(), proc_row(), file_row(), file_row(), proc_row(), file_row()]
    seq = make_seq(feats)
    wins = make_windows(seq, WindowConfig(W=3, mode=WindowMode.ANCHORED))
    # creations sit at 1 and 4; the second is past 1+W so both anchor
    assert [w.start_index for w in wins] == [1, 4]


def test_anchored_skips_overlapping_creations():
    feats = [proc_row(), proc_row(), file_row(), proc_row(), file_row(), file_row()]
    seq = make_seq(feats)
    wins = make_windows(seq, WindowConfig(W=3, mode=WindowMode.ANCHORED))
    # creation at 1 overlaps the window anchored at 0; creation at 3 does not
    assert [w.start_index for w in wins] == [0, 3]


def test_anchored_falls_back_to_position_zero():
    seq = make_seq([file_row(), file_row()])
    wins = make_windows(seq, WindowConfig(W=4, mode=WindowMode.ANCHORED))
    assert [w.start_index for w in wins] == [0]
    assert wins[0].pad_count == 2


def test_empty_sequence_yields_no_windows():
    assert make_windows(make_seq([])) == []


def test_planted_indices_rebased_per_window():
    feats = [file_row() for _ in range(6)]
    seq = make_seq(feats, planted={1, 4})
    wins = make_windows(seq, WindowConfig(W=3, mode=WindowMode.OVERSAMPLE, stride=3))
    assert wins[0].planted == {1}
    assert wins[1].planted == {1}  # global index 4 is local 1 in the second window


def test_window_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(W=0)
    with pytest.raises(ValueError):
        WindowConfig(stride=0)


def test_window_pad_count_must_match():
    with pytest.raises(ValueError):
        Window(graph_id=0, start_index=0, features=(None, file_row()),
               summaries=("", "x"), pad_count=0, label=None)


def test_graph_to_sequence_requires_embeddings():
    # a process row with an all-zero embedding means the graph skipped the
    # embedding stage
    bad = proc_row(embedding=tuple([0.0] * EMBED_DIM))

    class FakeGraph:
        graph_id = 7

    class FakeNode:
        def __init__(self, i):
            self.node_id = i

    class FakeEG:
        def __init__(self):
            self.graph = FakeGraph()
            self.graph.nodes = [FakeNode(0)]
            self.features = (bad,)
            self.label = None
            self.planted = frozenset()

    with pytest.raises(NotEnriched):
        graph_to_sequence(FakeEG())


# ---------------------------------------------------------------- codec

@pytest.fixture(scope="module")
def train_windows():
    feats = [proc_row(), file_row(), reg_row(), net_row(),
             proc_row(exe="other.exe", cmdline_length=40.0),
             file_row(ext=".docx", amount=5000.0, options="DELETE_ON_CLOSE"),
             net_row(port="80")]
    seq = make_seq(feats, label="benign")
    return make_windows(seq, WindowConfig(W=4, mode=WindowMode.OVERSAMPLE, stride=4))


@pytest.fixture(scope="module")
def codec(train_windows):
    return FeatureCodec().fit(train_windows)


def test_codec_dimension_matches_block_sum(codec):
    expected = sum(len(codec.vocabs_[name]) for name in CATEGORICAL_FIELDS)
    expected += 5 + 9 + EMBED_DIM + 1  # numerics, booleans, embedding, pad bit
    assert codec.dimension == expected


def test_codec_fitted_vocab_appends_other(codec):
    assert codec.vocabs_["exe_name"][-1] == OTHER
    assert set(codec.vocabs_["exe_name"][:-1]) == {"tool.exe", "other.exe"}
    # closed vocabularies carry no OTHER slot
    assert OTHER not in codec.vocabs_["event_type"]


def test_codec_none_category_not_in_vocab(codec):
    for name in ("exe_name", "file_extension", "service_port"):
        assert NONE_CATEGORY not in codec.vocabs_[name]


def test_codec_one_hot_round_trip(codec):
    row = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(proc_row(), row)
    assert codec.decode_category("exe_name", codec.category_block("exe_name", row)) == "tool.exe"
    assert codec.decode_category("event_type", codec.category_block("event_type", row)) == "PROCESS_START"
    # fields outside the event type stay NONE, which encodes as all zeros
    assert codec.decode_category("access_mode", codec.category_block("access_mode", row)) == NONE_CATEGORY


def test_codec_unknown_value_maps_to_other(codec):
    row = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(proc_row(exe="never-seen.exe"), row)
    assert codec.decode_category("exe_name", codec.category_block("exe_name", row)) == OTHER


def test_codec_numeric_min_max_normalization(codec):
    # cmdline_length spans 0 (non-process rows) to 40 in the training rows;
    # numerics are log1p min-max scaled so the extremes hit exactly 0 and 1
    lo_row = np.zeros(codec.dimension, dtype=np.float32)
    mid_row = np.zeros(codec.dimension, dtype=np.float32)
    hi_row = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(file_row(), lo_row)
    codec.encode_row(proc_row(cmdline_length=12.0), mid_row)
    codec.encode_row(proc_row(cmdline_length=40.0), hi_row)
    j = codec._numeric_offset  # cmdline_length is the first numeric field
    assert lo_row[j] == 0.0
    expected_mid = np.log1p(12.0) / np.log1p(40.0)
    assert mid_row[j] == pytest.approx(expected_mid, rel=1e-6)
    assert hi_row[j] == 1.0
    # values beyond the fitted range clamp into [0, 1]
    big = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(proc_row(cmdline_length=10000.0), big)
    assert big[j] == 1.0


def test_codec_pad_row_sets_only_pad_bit(codec):
    row = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(None, row)
    assert row[codec._pad_offset] == 1.0
    assert np.count_nonzero(row) == 1


def test_codec_embedding_block_passthrough(codec):
    row = np.zeros(codec.dimension, dtype=np.float32)
    codec.encode_row(proc_row(), row)
    lo = codec._embed_offset
    np.testing.assert_allclose(row[lo:lo + EMBED_DIM], EMB, rtol=1e-6)


def test_encode_window_shapes_and_mask(codec, train_windows):
    ew = codec.encode_window(train_windows[-1])
    assert ew.matrix.shape == (4, codec.dimension)
    assert ew.matrix.dtype == np.float32
    np.testing.assert_array_equal(ew.pad_mask, [False, False, False, True])


def test_codec_requires_fit_before_use(train_windows):
    with pytest.raises(RuntimeError):
        FeatureCodec().encode_window(train_windows[0])
    with pytest.raises(EmptyTrainSet):
        FeatureCodec().fit([])


def test_codec_rejects_unknown_vocab_key():
    with pytest.raises(ValueError):
        FeatureCodec(vocab_top_n={"event_type": 3})


def test_codec_version_tracks_vocabulary(codec, train_windows):
    shrunk = FeatureCodec(vocab_top_n={"exe_name": 1}).fit(train_windows)
    assert shrunk.version_ != codec.version_
    refit = FeatureCodec().fit(train_windows)
    assert refit.version_ == codec.version_


def test_codec_save_load_round_trip(codec, train_windows, tmp_path):
    path = tmp_path / "codec.txt"
    codec.save(path)
    loaded = FeatureCodec.load(path)
    assert loaded.version_ == codec.version_
    assert loaded.D_ == codec.D_
    assert loaded.vocabs_ == codec.vocabs_
    assert loaded.numeric_stats_ == codec.numeric_stats_
    a = codec.encode_window(train_windows[0]).matrix
    b = loaded.encode_window(train_windows[0]).matrix
    assert a.tobytes() == b.tobytes()


def test_codec_load_rejects_bad_files(tmp_path, codec):
    not_codec = tmp_path / "x.txt"
    not_codec.write_text("hello\n")
    with pytest.raises(MalformedRecord):
        FeatureCodec.load(not_codec)

    truncated = tmp_path / "y.txt"
    truncated.write_text("#provsight-codec v1\nvocab exe_name\nv a\n")
    with pytest.raises(MalformedRecord):
        FeatureCodec.load(truncated)

    tampered = tmp_path / "z.txt"
    codec.save(tampered)
    text = tampered.read_text().replace(f"version {codec.version_}",
                                        "version 0000000000000000")
    tampered.write_text(text)
    with pytest.raises(CodecVersionMismatch):
        FeatureCodec.load(tampered)


def test_decode_category_rejects_wrong_block(codec):
    wrong = len(codec.vocabs_["exe_name"]) + 1
    with pytest.raises(DimensionMismatch):
        codec.decode_category("exe_name", np.zeros(wrong))


# ---------------------------------------------------------------- dataset

def _toy_dataset(codec):
    feats = [proc_row(), file_row(), net_row()]
    benign = make_windows(make_seq(feats, label="benign", graph_id=1),
                          WindowConfig(W=4, mode=WindowMode.OVERSAMPLE, stride=4))
    malicious = make_windows(make_seq(feats, label="malicious", planted={0, 2}, graph_id=2),
                             WindowConfig(W=4, mode=WindowMode.OVERSAMPLE, stride=4))
    unlabeled = make_windows(make_seq(feats, label=None, graph_id=3),
                             WindowConfig(W=4, mode=WindowMode.OVERSAMPLE, stride=4))
    return WindowDataset.from_windows(codec, benign + malicious + unlabeled)


def test_dataset_shapes_and_label_codes(codec):
    ds = _toy_dataset(codec)
    assert (len(ds), ds.W, ds.D) == (3, 4, codec.dimension)
    np.testing.assert_array_equal(ds.labels, [0, 1, -1])
    assert ds.label_strings() == ["benign", "malicious", None]
    assert ds.meta[1]["planted"] == [0, 2]
    assert ds.meta[1]["graph_id"] == 2


def test_dataset_save_load_bit_exact(codec, tmp_path):
    ds = _toy_dataset(codec)
    path = tmp_path / "win.bin"
    ds.save(path)
    loaded = WindowDataset.load(path)
    assert loaded.X.tobytes() == ds.X.tobytes()
    assert loaded.pad_mask.tobytes() == ds.pad_mask.tobytes()
    assert loaded.labels.tobytes() == ds.labels.tobytes()
    assert loaded.codec_version == ds.codec_version
    assert loaded.meta == ds.meta
    # a second save of the loaded copy reproduces the file byte for byte
    again = tmp_path / "win2.bin"
    loaded.save(again)
    assert again.read_bytes() == path.read_bytes()


def test_dataset_load_rejects_corrupt_files(codec, tmp_path):
    ds = _toy_dataset(codec)
    path = tmp_path / "win.bin"
    ds.save(path)
    blob = path.read_bytes()

    bad_magic = tmp_path / "a.bin"
    bad_magic.write_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(MalformedRecord):
        WindowDataset.load(bad_magic)

    short = tmp_path / "b.bin"
    short.write_bytes(blob[:-5])
    with pytest.raises(MalformedRecord):
        WindowDataset.load(short)


def test_dataset_shape_validation(codec):
    ds = _toy_dataset(codec)
    with pytest.raises(DimensionMismatch):
        WindowDataset(ds.X, ds.pad_mask[:, :2], ds.labels, ds.codec_version, ds.meta)
    with pytest.raises(EmptyTrainSet):
        WindowDataset.from_windows(codec, [])
