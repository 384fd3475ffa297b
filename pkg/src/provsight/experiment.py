"""End-to-end experiment orchestration.

A run reads one TOML config, executes the full pipeline (corpus ->
graphs -> enrich -> embed -> windows -> train -> eval) and leaves its
artifacts under ``<out_dir>/<name>/``: metrics.json, roc.tsv,
history.tsv, model.ckpt, codec.txt plus the autoencoder checkpoint and,
for synthetic corpora, the ground truth.

Splits are stratified by graph, never by window, so no session leaks
across train/val/test. Training windows use overlapping starts capped
near the anchor (shift augmentation plus class balancing); validation
and test windows are anchored only. A per-event logistic regression is
fit on the same encoded rows as a context-free reference point.
"""
from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
from sklearn.linear_model import LogisticRegression

from .checkpoint import save_autoencoder, save_model
from .cmdline import (
    AutoencoderConfig,
    HashingEncoder,
    collect_cmdline_corpus,
    embed_graphs,
    train_autoencoder,
)
from .enrich import enrich_graphs
from .errors import DegenerateLabels, ProvsightError, StageError
from .events import load_log, read_log_file
from .explain import MEAN_HEADS, attention_scores
from .graphs import BuildConfig, build_graphs
from .metrics import MetricsReport, auc, evaluate, roc, roc_to_tsv
from .rules import default_rules
from .synth import BENIGN, MALICIOUS, GroundTruth, SynthConfig, apply_ground_truth, generate_synthetic_corpus
from .transformer import (
    EpochStats,
    TrainConfig,
    TransformerConfig,
    TransformerModel,
    train_model,
)
from .windows import (
    FeatureCodec,
    Window,
    WindowConfig,
    WindowDataset,
    WindowMode,
    graph_to_sequence,
    make_windows,
)

_LABEL_INT = {BENIGN: 0, MALICIOUS: 1}


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    out_dir: str = "runs"
    synth: SynthConfig | None = None
    log_path: str | None = None
    ground_truth_path: str | None = None
    max_duration_ms: int = 30 * 60 * 1000
    w: int = 200
    train_stride: int = 50
    train_max_start: int = 150
    ae_epochs: int = 200
    ae_seed: int = 0
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_seed: int = 0
    fpr_limits: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    explain_source: int | str = MEAN_HEADS
    explain_top_k: int = 10
    explain_min_planted: int = 3

    def __post_init__(self):
        if (self.synth is None) == (self.log_path is None):
            raise ValueError("exactly one of [synth] and [input].log must be configured")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or any(r <= 0 for r in self.split_ratios):
            raise ValueError("split ratios must be positive and sum to 1")
        if self.w < 1 or self.train_stride < 1 or self.train_max_start < 0:
            raise ValueError("window, stride and max start must be positive")


_SECTION_KEYS = {
    "run": {"name", "out_dir"},
    "synth": {"seed", "n_benign", "n_malicious", "noise_lo", "noise_hi",
              "benign_mix", "malicious_mix"},
    "input": {"log", "ground_truth"},
    "graphs": {"max_duration_ms"},
    "windows": {"w", "train_stride", "train_max_start"},
    "autoencoder": {"epochs", "seed"},
    "model": {"token_dim", "n_encoders", "n_heads", "ff_dim", "head_dim",
              "dropout", "head_hidden", "weight_reg", "seed"},
    "train": {"learning_rate", "batch_size", "epochs", "seed", "early_stop_patience"},
    "split": {"train", "val", "test", "seed"},
    "eval": {"fpr_limits", "explain_source", "explain_top_k", "explain_min_planted"},
}


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run config; unknown keys are errors."""
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"config {path} is not valid TOML: {exc}") from None

    for section, body in doc.items():
        if section not in _SECTION_KEYS:
            raise ValueError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ValueError(f"top-level key '{section}' must be a section")
        unknown = set(body) - _SECTION_KEYS[section]
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")

    kwargs: dict = {}
    run = doc.get("run", {})
    kwargs.update(run)
    if "synth" in doc:
        s = doc["synth"]
        if "seed" not in s:
            raise ValueError("[synth] requires a seed")
        synth_kwargs: dict = {"seed": s["seed"]}
        if "n_benign" in s:
            synth_kwargs["n_benign_graphs"] = s["n_benign"]
        if "n_malicious" in s:
            synth_kwargs["n_malicious_graphs"] = s["n_malicious"]
        if "noise_lo" in s or "noise_hi" in s:
            synth_kwargs["noise_events_range"] = (s.get("noise_lo", 50), s.get("noise_hi", 400))
        if "benign_mix" in s:
            synth_kwargs["benign_template_mix"] = dict(s["benign_mix"])
        if "malicious_mix" in s:
            synth_kwargs["malicious_template_mix"] = dict(s["malicious_mix"])
        kwargs["synth"] = SynthConfig(**synth_kwargs)
    if "input" in doc:
        kwargs["log_path"] = doc["input"].get("log")
        kwargs["ground_truth_path"] = doc["input"].get("ground_truth")
    if "graphs" in doc:
        kwargs.update(doc["graphs"])
    if "windows" in doc:
        kwargs.update(doc["windows"])
    if "autoencoder" in doc:
        a = doc["autoencoder"]
        kwargs["ae_epochs"] = a.get("epochs", 200)
        kwargs["ae_seed"] = a.get("seed", 0)
    if "model" in doc:
        kwargs["model"] = dict(doc["model"])
    if "train" in doc:
        kwargs["train"] = TrainConfig(**doc["train"])
    if "split" in doc:
        sp = doc["split"]
        kwargs["split_ratios"] = (sp.get("train", 0.6), sp.get("val", 0.2), sp.get("test", 0.2))
        kwargs["split_seed"] = sp.get("seed", 0)
    if "eval" in doc:
        ev = doc["eval"]
        if "fpr_limits" in ev:
            kwargs["fpr_limits"] = tuple(ev["fpr_limits"])
        for key in ("explain_source", "explain_top_k", "explain_min_planted"):
            if key in ev:
                kwargs[key] = ev[key]
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad config value: {exc}") from None


@dataclass
class ExperimentResult:
    run_dir: Path
    metrics: MetricsReport
    baseline_auc: float
    explain_hit_rate: float | None
    n_detected_malicious: int
    history: list[EpochStats]
    codec_version: str
    window_counts: dict[str, dict[str, int]]
    timings: dict[str, float]


@contextmanager
def _stage(name: str, timings: dict[str, float]):
    t0 = time.monotonic()
    try:
        yield
    except StageError:
        raise
    except (ProvsightError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc
    timings[name] = round(time.monotonic() - t0, 3)


def split_graphs(labels: list[str], ratios: tuple[float, float, float],
                 seed: int) -> tuple[list[int], list[int], list[int]]:
    """Stratified graph-level split; returns index lists (train, val, test)."""
    rng = np.random.default_rng(seed)
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for cls in sorted(set(labels)):
        ids = [i for i, lab in enumerate(labels) if lab == cls]
        order = rng.permutation(len(ids))
        n = len(ids)
        n_train = int(round(ratios[0] * n))
        n_val = int(round(ratios[1] * n))
        n_val = min(n_val, n - n_train)
        for pos, slot in enumerate(order):
            i = ids[int(slot)]
            if pos < n_train:
                train.append(i)
            elif pos < n_train + n_val:
                val.append(i)
            else:
                test.append(i)
    return sorted(train), sorted(val), sorted(test)


def _anchored_windows(sequences, ids, w: int) -> list[Window]:
    cfg = WindowConfig(W=w, mode=WindowMode.ANCHORED)
    out: list[Window] = []
    for i in ids:
        out.extend(make_windows(sequences[i], cfg))
    return out


def _train_windows(sequences, ids, w: int, stride: int, max_start: int) -> list[Window]:
    # overlapping starts near the anchor: shift augmentation for both classes
    cfg = WindowConfig(W=w, mode=WindowMode.OVERSAMPLE, stride=stride)
    out: list[Window] = []
    for i in ids:
        out.extend(win for win in make_windows(sequences[i], cfg)
                   if win.start_index <= max_start)
    return out


def _dataset_xy(ds: WindowDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if (ds.labels < 0).any():
        raise DegenerateLabels("dataset contains unlabeled windows")
    return ds.X, ds.pad_mask, ds.labels.astype(int)


def _predict_probs(model: TransformerModel, ds: WindowDataset,
                   batch_size: int = 64) -> np.ndarray:
    chunks = []
    for lo in range(0, len(ds), batch_size):
        probs, _ = model.forward_batch(ds.X[lo:lo + batch_size],
                                       ds.pad_mask[lo:lo + batch_size])
        chunks.append(probs[:, 1])
    return np.concatenate(chunks) if chunks else np.zeros(0)


def _baseline_auc(train_ds: WindowDataset, test_ds: WindowDataset) -> float:
    """Window AUC of a per-event logistic model (mean event probability)."""
    rows = train_ds.X[~train_ds.pad_mask].astype(np.float64)
    row_labels = np.repeat(train_ds.labels.astype(int), (~train_ds.pad_mask).sum(axis=1))
    clf = LogisticRegression(max_iter=1000)
    clf.fit(rows, row_labels)
    scores = np.zeros(len(test_ds))
    for i in range(len(test_ds)):
        real = ~test_ds.pad_mask[i]
        scores[i] = float(clf.predict_proba(test_ds.X[i][real].astype(np.float64))[:, 1].mean())
    curve = roc(scores.tolist(), test_ds.labels.astype(int).tolist())
    return auc(curve)


def _explain_hit_rate(model: TransformerModel, ds: WindowDataset, probs: np.ndarray,
                      source, top_k: int, min_planted: int) -> tuple[float | None, int]:
    """Among detected malicious windows, fraction whose attention top-k
    contains at least min_planted planted events."""
    hits = 0
    detected = 0
    for i in range(len(ds)):
        if ds.labels[i] != 1 or probs[i] < 0.5:
            continue
        planted = set(ds.meta[i]["planted"])
        if not planted:
            continue
        detected += 1
        report = attention_scores(model, ds.X[i], ds.pad_mask[i], source=source)
        top = set(report.ranked[:top_k])
        if len(top & planted) >= min_planted:
            hits += 1
    if detected == 0:
        return None, 0
    return hits / detected, detected


def run_experiment(cfg: RunConfig | str | Path) -> ExperimentResult:
    if not isinstance(cfg, RunConfig):
        cfg = load_run_config(cfg)
    timings: dict[str, float] = {}
    run_dir = Path(cfg.out_dir) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)

    with _stage("corpus", timings):
        if cfg.synth is not None:
            log, truth = generate_synthetic_corpus(cfg.synth)
            truth.save(run_dir / "ground_truth.json")
        else:
            text = Path(cfg.log_path).read_text(encoding="utf-8")
            log = read_log_file(cfg.log_path) if text.startswith("#provsight-log") \
                else load_log(cfg.log_path)
            truth = GroundTruth.load(cfg.ground_truth_path) if cfg.ground_truth_path else None

    with _stage("graphs", timings):
        graphs = build_graphs(log, BuildConfig(max_duration_ms=cfg.max_duration_ms))

    with _stage("enrich", timings):
        rules = default_rules()
        enriched = enrich_graphs(graphs, log, rules)
        if truth is not None:
            enriched = apply_ground_truth(enriched, truth)
        labeled = [eg for eg in enriched if eg.label in _LABEL_INT]
        if not labeled:
            raise DegenerateLabels("no labeled graphs; training needs ground truth")

    with _stage("split", timings):
        labels = [eg.label for eg in labeled]
        if len(set(labels)) < 2:
            raise DegenerateLabels("both classes required for a supervised split")
        train_ids, val_ids, test_ids = split_graphs(labels, cfg.split_ratios, cfg.split_seed)

    with _stage("embed", timings):
        encoder = HashingEncoder()
        train_graphs = [labeled[i] for i in train_ids]
        ae_corpus = collect_cmdline_corpus(train_graphs, encoder)
        ae = train_autoencoder(ae_corpus, AutoencoderConfig(epochs=cfg.ae_epochs,
                                                            seed=cfg.ae_seed))
        embedded = embed_graphs(labeled, encoder, ae)
        save_autoencoder(ae, run_dir / "autoencoder.ckpt")

    with _stage("windows", timings):
        sequences = {i: graph_to_sequence(eg) for i, eg in enumerate(embedded)}
        train_w = _train_windows(sequences, train_ids, cfg.w, cfg.train_stride,
                                 cfg.train_max_start)
        val_w = _anchored_windows(sequences, val_ids, cfg.w)
        test_w = _anchored_windows(sequences, test_ids, cfg.w)
        codec = FeatureCodec().fit(train_w)
        codec.save(run_dir / "codec.txt")
        train_ds = WindowDataset.from_windows(codec, train_w)
        val_ds = WindowDataset.from_windows(codec, val_w)
        test_ds = WindowDataset.from_windows(codec, test_w)

    window_counts = {
        split: {
            "benign": int((ds.labels == 0).sum()),
            "malicious": int((ds.labels == 1).sum()),
        }
        for split, ds in (("train", train_ds), ("val", val_ds), ("test", test_ds))
    }

    with _stage("train", timings):
        model_cfg = TransformerConfig(input_dim=train_ds.D, max_seq=cfg.w + 1,
                                      **cfg.model)
        model = TransformerModel(model_cfg)
        model, history = train_model(model, _dataset_xy(train_ds), _dataset_xy(val_ds),
                                     cfg.train)
        save_model(model, run_dir / "model.ckpt", codec_version=codec.version_)

    with _stage("eval", timings):
        probs = _predict_probs(model, test_ds, cfg.train.batch_size)
        labels_int = test_ds.labels.astype(int)
        report = evaluate(probs.tolist(), labels_int.tolist(), fpr_limits=cfg.fpr_limits)
        curve = roc(probs.tolist(), labels_int.tolist())
        (run_dir / "roc.tsv").write_text(roc_to_tsv(curve), encoding="utf-8")
        history_lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
        for st in history:
            history_lines.append(
                f"{st.epoch}\t{st.train_loss:.6f}\t{st.train_acc:.6f}"
                f"\t{'' if st.val_loss is None else f'{st.val_loss:.6f}'}"
                f"\t{'' if st.val_acc is None else f'{st.val_acc:.6f}'}")
        (run_dir / "history.tsv").write_text("\n".join(history_lines) + "\n",
                                             encoding="utf-8")

    with _stage("baseline", timings):
        baseline = _baseline_auc(train_ds, test_ds)

    with _stage("explain", timings):
        hit_rate, n_detected = _explain_hit_rate(
            model, test_ds, probs, cfg.explain_source, cfg.explain_top_k,
            cfg.explain_min_planted)

    doc = {
        "auc": report.auc,
        "tpr_at_fpr": {f"{limit:g}": report.tpr_at_fpr[limit]
                       for limit in cfg.fpr_limits},
        "accuracy": report.accuracy,
        "counts": {"tp": report.tp, "fp": report.fp, "tn": report.tn,
                   "fn": report.fn, "n": report.n},
        "baseline_auc": baseline,
        "explain_hit_rate": hit_rate,
        "n_detected_malicious": n_detected,
        "window_counts": window_counts,
        "codec_version": codec.version_,
        "input_dim": train_ds.D,
        "timings": timings,
    }
    (run_dir / "metrics.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    return ExperimentResult(
        run_dir=run_dir,
        metrics=report,
        baseline_auc=baseline,
        explain_hit_rate=hit_rate,
        n_detected_malicious=n_detected,
        history=history,
        codec_version=codec.version_,
        window_counts=window_counts,
        timings=timings,
    )
