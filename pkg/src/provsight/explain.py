"""Rank a window's events by the attention the classifier paid to them.

The classifier reads only the CLS token, so the CLS-query row of the
last encoder layer's attention says which events shaped the decision.
Scores come from one chosen head or the mean over heads; pad positions
are excluded and the CLS self-score is reported separately.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import HeadOutOfRange
from .transformer import TransformerModel

MEAN_HEADS = "MEAN_HEADS"


@dataclass(frozen=True)
class AttentionReport:
    graph_id: int
    start_index: int
    score_source: str  # "head:<i>" or MEAN_HEADS
    cls_self_score: float
    event_scores: dict[int, float]  # window-local event index -> score
    ranked: tuple[int, ...]  # event indices, descending score, ties by index


@dataclass(frozen=True)
class RankedEvent:
    rank: int
    index: int
    score: float
    summary: str


def attention_scores(model: TransformerModel, x: np.ndarray, pad_mask: np.ndarray,
                     source: int | str = MEAN_HEADS, graph_id: int = -1,
                     start_index: int = 0) -> AttentionReport:
    """CLS-query attention over the window's real events.

    Raw softmax values are kept: after excluding the CLS self-score and
    pad columns the event scores need not sum to 1.
    """
    _, attention = model.forward_batch(x[None], np.asarray(pad_mask, dtype=bool)[None])
    last = attention[-1][0]  # (heads, S, S)
    if source == MEAN_HEADS:
        row = last[:, 0, :].mean(axis=0)
        source_name = MEAN_HEADS
    else:
        head = int(source)
        if not 0 <= head < model.cfg.n_heads:
            raise HeadOutOfRange(f"head {head} outside 0..{model.cfg.n_heads - 1}")
        row = last[head, 0, :]
        source_name = f"head:{head}"
    scores = {
        i: float(row[i + 1])
        for i in range(x.shape[0])
        if not pad_mask[i]
    }
    ranked = tuple(sorted(scores, key=lambda i: (-scores[i], i)))
    return AttentionReport(
        graph_id=graph_id,
        start_index=start_index,
        score_source=source_name,
        cls_self_score=float(row[0]),
        event_scores=scores,
        ranked=ranked,
    )


def top_k_events(report: AttentionReport, summaries: list[str] | tuple[str, ...],
                 k: int = 10) -> list[RankedEvent]:
    """First k ranked events with their human-readable summaries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for rank, index in enumerate(report.ranked[:k], start=1):
        summary = summaries[index] if index < len(summaries) else ""
        out.append(RankedEvent(rank=rank, index=index,
                               score=report.event_scores[index], summary=summary))
    return out


def report_to_json(report: AttentionReport, events: list[RankedEvent]) -> str:
    doc = {
        "window": {"graph_id": report.graph_id, "start_index": report.start_index},
        "source": report.score_source,
        "cls_self_score": report.cls_self_score,
        "ranked": [
            {"rank": e.rank, "index": e.index, "score": e.score, "summary": e.summary}
            for e in events
        ],
    }
    return json.dumps(doc, ensure_ascii=True, separators=(",", ":"))


def report_to_text(report: AttentionReport, events: list[RankedEvent]) -> str:
    lines = [
        f"window graph={report.graph_id} start={report.start_index} "
        f"source={report.score_source} cls_self={report.cls_self_score:.4f}",
        f"{'rank':>4}  {'index':>5}  {'score':>8}  summary",
    ]
    for e in events:
        lines.append(f"{e.rank:>4}  {e.index:>5}  {e.score:>8.5f}  {e.summary}")
    return "\n".join(lines)
