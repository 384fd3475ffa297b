"""Command-line entry point.

One subcommand per pipeline stage plus `synth` (corpus generation) and
`run` (whole pipeline from a TOML config). Exit codes: 0 on success, 2
for validation problems (bad arguments, malformed or mismatched inputs),
3 when a pipeline stage fails mid-run.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .checkpoint import load_autoencoder, load_model, save_autoencoder, save_model
from .cmdline import (
    AutoencoderConfig,
    FallbackEncoder,
    HashingEncoder,
    TableEncoder,
    collect_cmdline_corpus,
    embed_graphs,
    train_autoencoder,
)
from .enrich import enrich_graphs, load_enriched, save_enriched
from .errors import ConfigMismatch, ProvsightError, StageError
from .events import (
    DEFAULT_OS_PROCESS_NAMES,
    LOG_MAGIC,
    load_log,
    read_log_file,
    serialize_event,
    write_log_file,
)
from .experiment import run_experiment
from .explain import MEAN_HEADS, attention_scores, report_to_json, report_to_text, top_k_events
from .graphs import BuildConfig, build_graphs, load_graphs, save_graphs
from .metrics import evaluate, roc, roc_to_tsv
from .rules import default_rules, load_rules
from .synth import GroundTruth, SynthConfig, apply_ground_truth, generate_synthetic_corpus
from .transformer import TrainConfig, TransformerConfig, TransformerModel, train_model
from .windows import (
    FeatureCodec,
    WindowConfig,
    WindowDataset,
    WindowMode,
    graph_to_sequence,
    make_windows,
)


@contextmanager
def _as_stage(name: str):
    # failures past input validation surface as stage errors (exit 3)
    try:
        yield
    except StageError:
        raise
    except (ProvsightError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc


def _read_any_log(path: str):
    """Accept both raw JSON-Lines and the ingested container format."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    return read_log_file(path) if first == LOG_MAGIC else load_log(path)


# --- subcommand handlers ---

def _cmd_ingest(args) -> int:
    names = [n.strip() for n in args.os_procs.split(",") if n.strip()]
    if not names:
        raise ValueError("--os-procs must name at least one process")
    log = load_log(args.infile, names)
    with _as_stage("ingest"):
        write_log_file(log, args.out)
    kept = sum(1 for e in log.events if not log.is_os_process(e.actor))
    print(f"ingested {len(log)} events ({kept} non-OS) -> {args.out}")
    return 0


def _cmd_build_graphs(args) -> int:
    log = _read_any_log(args.infile)
    with _as_stage("graphs"):
        graphs = build_graphs(log, BuildConfig(max_duration_ms=args.max_duration_ms))
        paths = save_graphs(graphs, args.out)
    print(f"built {len(paths)} graphs -> {args.out}")
    return 0


def _cmd_enrich(args) -> int:
    graphs = load_graphs(args.graphs)
    log = _read_any_log(args.log)
    rules = load_rules(args.rules) if args.rules else default_rules()
    truth = GroundTruth.load(args.truth) if args.truth else None
    with _as_stage("enrich"):
        enriched = enrich_graphs(graphs, log, rules)
        if truth is not None:
            enriched = apply_ground_truth(enriched, truth)
        save_enriched(enriched, args.out)
    labeled = sum(1 for eg in enriched if eg.label is not None)
    print(f"enriched {len(enriched)} graphs ({labeled} labeled) -> {args.out}")
    return 0


def _cmd_embed_cmdlines(args) -> int:
    if args.encoder == "builtin":
        encoder = HashingEncoder()
    elif args.encoder.startswith("table:"):
        encoder = FallbackEncoder(TableEncoder.load(args.encoder[len("table:"):]))
    else:
        raise ValueError(f"unknown encoder '{args.encoder}' (use builtin or table:PATH)")
    enriched = load_enriched(args.enriched)
    with _as_stage("embed"):
        if Path(args.ae).exists():
            ae = load_autoencoder(args.ae)
            trained = False
        else:
            corpus = collect_cmdline_corpus(enriched, encoder)
            ae = train_autoencoder(corpus, AutoencoderConfig(epochs=args.ae_epochs,
                                                             seed=args.ae_seed))
            save_autoencoder(ae, args.ae)
            trained = True
        embedded = embed_graphs(enriched, encoder, ae)
        save_enriched(embedded, args.out)
    verb = "trained" if trained else "loaded"
    print(f"embedded {len(embedded)} graphs ({verb} autoencoder {args.ae}) -> {args.out}")
    return 0


def _cmd_windows(args) -> int:
    enriched = load_enriched(args.enriched)
    mode = WindowMode(args.mode)
    cfg = WindowConfig(W=args.w, mode=mode, stride=args.stride)
    with _as_stage("windows"):
        windows = []
        for eg in enriched:
            for win in make_windows(graph_to_sequence(eg), cfg):
                if args.max_start is None or win.start_index <= args.max_start:
                    windows.append(win)
        if Path(args.codec).exists():
            codec = FeatureCodec.load(args.codec)
        else:
            codec = FeatureCodec().fit(windows)
            codec.save(args.codec)
        ds = WindowDataset.from_windows(codec, windows)
        ds.save(args.out)
    print(f"encoded {len(ds)} windows (W={ds.W}, D={ds.D}, codec {codec.version_}) -> {args.out}")
    return 0


_MODEL_KEYS = {"token_dim", "n_encoders", "n_heads", "ff_dim", "head_dim",
               "dropout", "head_hidden", "weight_reg", "seed"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "epochs", "seed", "early_stop_patience"}


def _load_model_toml(path: str | None) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"config {path} is not valid TOML: {exc}") from None
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS)):
        unknown = set(doc.get(section, {})) - allowed
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    extra = set(doc) - {"model", "train"}
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    return dict(doc.get("model", {})), dict(doc.get("train", {}))


def _cmd_train(args) -> int:
    train_ds = WindowDataset.load(args.train)
    val_ds = WindowDataset.load(args.val) if args.val else None
    if val_ds is not None and val_ds.codec_version != train_ds.codec_version:
        raise ConfigMismatch(
            f"validation windows use codec {val_ds.codec_version}, "
            f"train uses {train_ds.codec_version}")
    model_kwargs, train_kwargs = _load_model_toml(args.config)
    # --seed is the default; an explicit seed in the config wins
    model_kwargs.setdefault("seed", args.seed)
    train_kwargs.setdefault("seed", args.seed)

    def xy(ds):
        return ds.X, ds.pad_mask, ds.labels.astype(int)

    with _as_stage("train"):
        cfg = TransformerConfig(input_dim=train_ds.D, max_seq=train_ds.W + 1,
                                **model_kwargs)
        model = TransformerModel(cfg)
        model, history = train_model(model, xy(train_ds),
                                     None if val_ds is None else xy(val_ds),
                                     TrainConfig(**train_kwargs))
        save_model(model, args.out, codec_version=train_ds.codec_version)
    last = history[-1]
    va = "" if last.val_acc is None else f", val acc {last.val_acc:.3f}"
    print(f"trained {len(history)} epochs (train acc {last.train_acc:.3f}{va}) -> {args.out}")
    return 0


def _predict(model: TransformerModel, ds: WindowDataset, batch_size: int = 64) -> np.ndarray:
    parts = []
    for lo in range(0, len(ds), batch_size):
        probs, _ = model.forward_batch(ds.X[lo:lo + batch_size], ds.pad_mask[lo:lo + batch_size])
        parts.append(probs[:, 1])
    return np.concatenate(parts) if parts else np.zeros(0)


def _cmd_eval(args) -> int:
    ds = WindowDataset.load(args.test)
    model, _ = load_model(args.model, expected_codec_version=ds.codec_version,
                          expected_input_dim=ds.D)
    limits = tuple(float(v) for v in args.fpr_limits.split(","))
    with _as_stage("eval"):
        probs = _predict(model, ds)
        report = evaluate(probs.tolist(), ds.labels.astype(int).tolist(), fpr_limits=limits)
        if args.roc:
            curve = roc(probs.tolist(), ds.labels.astype(int).tolist())
            Path(args.roc).write_text(roc_to_tsv(curve), encoding="utf-8")
        doc = {
            "auc": report.auc,
            "tpr_at_fpr": {f"{limit:g}": report.tpr_at_fpr[limit] for limit in limits},
            "accuracy": report.accuracy,
            "counts": {"tp": report.tp, "fp": report.fp, "tn": report.tn,
                       "fn": report.fn, "n": report.n},
        }
        if args.out:
            Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"auc {report.auc:.4f}  accuracy {report.accuracy:.4f}  n {report.n}")
    for limit in limits:
        print(f"tpr@fpr<={limit:g}: {report.tpr_at_fpr[limit]:.4f}")
    return 0


def _cmd_explain(args) -> int:
    path, _, index_text = args.window.rpartition(":")
    if not path:
        raise ValueError("--window takes the form dataset.win:INDEX")
    try:
        index = int(index_text)
    except ValueError:
        raise ValueError(f"window index '{index_text}' is not an integer") from None
    ds = WindowDataset.load(path)
    if not 0 <= index < len(ds):
        raise ValueError(f"window index {index} outside 0..{len(ds) - 1}")
    model, _ = load_model(args.model, expected_codec_version=ds.codec_version,
                          expected_input_dim=ds.D)
    source = MEAN_HEADS if args.source == "mean" else int(args.source)
    meta = ds.meta[index] if index < len(ds.meta) else {}
    with _as_stage("explain"):
        report = attention_scores(model, ds.X[index], ds.pad_mask[index], source=source,
                                  graph_id=meta.get("graph_id", -1),
                                  start_index=meta.get("start_index", 0))
        n_real = int((~ds.pad_mask[index]).sum())
        summaries = meta.get("summaries") or [f"event {i}" for i in range(n_real)]
        events = top_k_events(report, summaries, k=args.k)
        if args.json:
            Path(args.json).write_text(report_to_json(report, events) + "\n",
                                       encoding="utf-8")
    print(report_to_text(report, events))
    return 0


def _cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed, n_benign_graphs=args.benign,
                      n_malicious_graphs=args.malicious,
                      noise_events_range=(args.noise_lo, args.noise_hi))
    with _as_stage("synth"):
        log, truth = generate_synthetic_corpus(cfg)
        lines = [serialize_event(e) for e in log.events]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        if args.truth:
            truth.save(args.truth)
    print(f"generated {len(log)} events over {args.benign + args.malicious} sessions -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    res = run_experiment(args.config)
    print(f"run artifacts in {res.run_dir}")
    print(f"auc {res.metrics.auc:.4f}  baseline {res.baseline_auc:.4f}")
    for limit, tpr in res.metrics.tpr_at_fpr.items():
        print(f"tpr@fpr<={limit:g}: {tpr:.4f}")
    if res.explain_hit_rate is not None:
        print(f"explain hit rate {res.explain_hit_rate:.3f} "
              f"over {res.n_detected_malicious} detected")
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provsight",
        description="Provenance-graph window classification for endpoint logs.")
    parser.add_argument("--version", action="version", version=f"provsight {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a JSON-Lines event file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--os-procs", default=",".join(sorted(DEFAULT_OS_PROCESS_NAMES)))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("build-graphs", help="partition a log into provenance graphs")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--max-duration-ms", type=int, default=30 * 60 * 1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_graphs)

    p = sub.add_parser("enrich", help="attach security features to graph nodes")
    p.add_argument("--graphs", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--rules", default=None)
    p.add_argument("--truth", default=None, help="ground-truth labels to attach")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_enrich)

    p = sub.add_parser("embed-cmdlines", help="fill command-line embeddings")
    p.add_argument("--enriched", required=True)
    p.add_argument("--encoder", default="builtin", help="builtin or table:PATH")
    p.add_argument("--ae", required=True,
                   help="autoencoder checkpoint; trained and written if missing")
    p.add_argument("--ae-epochs", type=int, default=200)
    p.add_argument("--ae-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed_cmdlines)

    p = sub.add_parser("windows", help="cut and encode fixed-size event windows")
    p.add_argument("--enriched", required=True)
    p.add_argument("--mode", choices=[m.value for m in WindowMode], default="anchored")
    p.add_argument("--w", type=int, default=200)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--max-start", type=int, default=None)
    p.add_argument("--codec", required=True,
                   help="codec file; fitted and written if missing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_windows)

    p = sub.add_parser("train", help="train the window classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--config", default=None, help="TOML with [model] and [train]")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a window dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fpr-limits", default="0.1,0.01,0.001")
    p.add_argument("--roc", default=None, help="write ROC points as TSV")
    p.add_argument("--out", default=None, help="write metrics as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="rank a window's events by CLS attention")
    p.add_argument("--model", required=True)
    p.add_argument("--window", required=True, help="dataset.win:INDEX")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--source", default="mean", help="mean or a head index")
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--benign", type=int, default=300)
    p.add_argument("--malicious", type=int, default=300)
    p.add_argument("--noise-lo", type=int, default=50)
    p.add_argument("--noise-hi", type=int, default=400)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None, help="write planted ground truth as JSON")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="execute the whole pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"provsight: {exc}", file=sys.stderr)
        return 3
    except (ProvsightError, ValueError, OSError) as exc:
        print(f"provsight: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
