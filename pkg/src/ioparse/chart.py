"""Span indexing and the two passes that fill a parse chart.

A chart stores, for every one of the T(T+1)/2 contiguous spans of a
sentence, a bottom-up "inside" vector and score and a top-down "outside"
vector and score. The inside value of a span is a softmax-weighted average
over the length-1 ways of splitting the span into two adjacent sub-spans;
the outside value of a span is a weighted average over its possible
contexts, each made of a sibling's inside value and a parent's outside
value. The root of the outside chart is a learned bias vector.

Spans are keyed by (start, length). Cells may carry a leading batch axis:
every tensor in a cell is shaped (..., D) with a shared leading shape, so
one chart can evaluate a whole batch of same-length sentences.

Within one pass, all spans of a given length depend only on other lengths,
so each length level can be filled by a thread pool without changing any
result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import numeric as nm
from .compose import (
    INSIDE,
    OUTSIDE,
    CellValue,
    ModelParams,
    ParamViews,
    compatibility,
    compose_cells,
    leaf_transform,
    normalize_weights,
)

Span = tuple[int, int]  # (start, length)

NORM_FLOOR = 1e-12


def spans_by_length(T: int):
    """All spans of a T-token sentence, shortest first."""
    for length in range(1, T + 1):
        for start in range(T - length + 1):
            yield (start, length)


def span_pairs(span: Span) -> list[tuple[Span, Span]]:
    """The length-1 ways of splitting `span` into two adjacent spans.

    A span of length L has exactly L-1 such pairs.
    """
    start, length = span
    if length < 2:
        raise ValueError(f"span {span} has no sub-span pairs")
    return [
        ((start, cut), (start + cut, length - cut))
        for cut in range(1, length)
    ]


def outside_contexts(span: Span, T: int) -> list[tuple[Span, Span, str]]:
    """All (parent, sibling, side) triples surrounding `span`.

    The sibling abuts the span on the given side and the parent covers
    both exactly. A span starting at s and ending at e has s left-side
    contexts and T-e right-side ones.
    """
    start, length = span
    end = start + length
    if length == T:
        raise ValueError("the whole-sentence span has no outside context")
    contexts = []
    for sib_start in range(start):
        parent = (sib_start, end - sib_start)
        contexts.append((parent, (sib_start, start - sib_start), "left"))
    for sib_end in range(end + 1, T + 1):
        parent = (start, sib_end - start)
        contexts.append((parent, (end, sib_end - end), "right"))
    return contexts


def unit_normalize(x: nm.Tensor) -> nm.Tensor:
    """Scale the last axis to unit L2 norm, preserving direction."""
    sq = (x * x).sum(axis=-1, keepdims=True)
    if float(np.min(sq.data)) < NORM_FLOOR * NORM_FLOOR:
        raise ValueError("cannot normalize a vector with near-zero norm")
    return x / nm.sqrt(sq)


class Chart:
    """Filled per-span values for one (batch of) sentence(s)."""

    def __init__(self, T: int, dim: int, batch_shape: tuple[int, ...] = ()):
        self.T = T
        self.dim = dim
        self.batch_shape = batch_shape
        self.inside_cell: dict[Span, CellValue] = {}
        self.inside_score: dict[Span, nm.Tensor] = {}
        self.inside_weights: dict[Span, np.ndarray] = {}
        self.inside_raw_scores: dict[Span, np.ndarray] = {}
        self.outside_cell: dict[Span, CellValue] = {}
        self.outside_score: dict[Span, nm.Tensor] = {}
        self.outside_weights: dict[Span, np.ndarray] = {}
        self.inside_pair_ops = 0
        self.outside_pair_ops = 0

    def spans(self):
        return spans_by_length(self.T)

    def cell_count(self) -> int:
        return self.T * (self.T + 1) // 2

    def pair_weights(self, batch_index: int | None = None, raw: bool = False):
        """Per-span split weights as plain arrays, for the decoder."""
        table = self.inside_raw_scores if raw else self.inside_weights
        if batch_index is None:
            return dict(table)
        return {span: w[batch_index] for span, w in table.items()}

    def span_representation(self, span: Span, batch_index: int | None = None):
        """Concatenated [inside; outside] vector for one span."""
        a = self.inside_cell[span].h.data
        b = self.outside_cell[span].h.data
        rep = np.concatenate([a, b], axis=-1)
        if batch_index is None:
            return rep
        return rep[batch_index]


def _level_map(fill, spans, pool):
    if pool is None:
        for s in spans:
            fill(s)
    else:
        # materialize to surface worker exceptions
        list(pool.map(fill, spans))


def _maybe_pool(threads: int):
    if threads and threads > 1:
        return ThreadPoolExecutor(max_workers=threads)
    return None


def inside_pass(
    leaf_vectors: np.ndarray,
    params: ModelParams,
    views: ParamViews | None = None,
    threads: int = 1,
) -> Chart:
    """Fill the bottom-up half of the chart.

    `leaf_vectors` holds the embedded tokens, shaped (T, D_in) or
    (T, B, D_in) for a batch of B same-length sentences.
    """
    leaf_vectors = np.asarray(leaf_vectors)
    T = leaf_vectors.shape[0]
    if T < 1:
        raise ValueError("a sentence needs at least one token")
    if views is None:
        views = params.views()
    chart = Chart(T, params.dim, batch_shape=leaf_vectors.shape[1:-1])
    s_alpha = params.side(INSIDE)["S"]

    for k in range(T):
        cell, score = leaf_transform(nm.constant(leaf_vectors[k]), params, views)
        cell = CellValue(unit_normalize(cell.h), cell.c)
        chart.inside_cell[(k, 1)] = cell
        chart.inside_score[(k, 1)] = score

    def fill(span: Span):
        pairs = span_pairs(span)
        scores = []
        comps = []
        for i, j in pairs:
            ci = chart.inside_cell[i]
            cj = chart.inside_cell[j]
            scores.append(
                compatibility(
                    ci.h, cj.h, s_alpha, chart.inside_score[i], chart.inside_score[j]
                )
            )
            comps.append(compose_cells(ci, cj, params, INSIDE, views))
        raw = nm.stack(scores, axis=-1)
        weights = normalize_weights(raw)
        w = nm.expand_dims(weights, -1)
        h = (w * nm.stack([c.h for c in comps], axis=-2)).sum(axis=-2)
        cell = CellValue(unit_normalize(h))
        if params.compose == "treelstm":
            cell.c = (w * nm.stack([c.c for c in comps], axis=-2)).sum(axis=-2)
        chart.inside_cell[span] = cell
        chart.inside_score[span] = (weights * raw).sum(axis=-1)
        chart.inside_weights[span] = np.array(weights.data)
        chart.inside_raw_scores[span] = np.array(raw.data)

    pool = _maybe_pool(threads)
    try:
        for length in range(2, T + 1):
            level = [(s, length) for s in range(T - length + 1)]
            _level_map(fill, level, pool)
            chart.inside_pair_ops += sum(length - 1 for _ in level)
    finally:
        if pool is not None:
            pool.shutdown()
    return chart


def outside_pass(
    chart: Chart,
    params: ModelParams,
    views: ParamViews | None = None,
    threads: int = 1,
) -> Chart:
    """Fill the top-down half of the chart (requires the inside half)."""
    T = chart.T
    if (0, T) not in chart.inside_cell:
        raise ValueError("outside pass requires a completed inside pass")
    if views is None:
        views = params.views()
    s_beta = params.side(OUTSIDE)["S"]
    batch = chart.batch_shape

    root_h = unit_normalize(params.tensors["root_bias"])
    if batch:
        root_h = nm.broadcast_to(root_h, batch + (params.dim,))
    root_c = None
    if params.compose == "treelstm":
        root_c = nm.constant(np.zeros(batch + (params.dim,)))
    chart.outside_cell[(0, T)] = CellValue(root_h, root_c)
    chart.outside_score[(0, T)] = nm.constant(np.zeros(batch))

    def fill(span: Span):
        contexts = outside_contexts(span, T)
        scores = []
        comps = []
        for parent, sibling, _side in contexts:
            sib = chart.inside_cell[sibling]
            par = chart.outside_cell[parent]
            scores.append(
                compatibility(
                    sib.h,
                    par.h,
                    s_beta,
                    chart.inside_score[sibling],
                    chart.outside_score[parent],
                )
            )
            # argument order is (sibling inside, parent outside) on both sides
            comps.append(compose_cells(sib, par, params, OUTSIDE, views))
        raw = nm.stack(scores, axis=-1)
        weights = normalize_weights(raw)
        w = nm.expand_dims(weights, -1)
        h = (w * nm.stack([c.h for c in comps], axis=-2)).sum(axis=-2)
        cell = CellValue(unit_normalize(h))
        if params.compose == "treelstm":
            cell.c = (w * nm.stack([c.c for c in comps], axis=-2)).sum(axis=-2)
        chart.outside_cell[span] = cell
        chart.outside_score[span] = (weights * raw).sum(axis=-1)
        chart.outside_weights[span] = np.array(weights.data)

    pool = _maybe_pool(threads)
    try:
        for length in range(T - 1, 0, -1):
            level = [(s, length) for s in range(T - length + 1)]
            _level_map(fill, level, pool)
            chart.outside_pair_ops += sum(
                len(outside_contexts(s, T)) for s in level
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return chart


def fill_chart(
    leaf_vectors: np.ndarray,
    params: ModelParams,
    threads: int = 1,
) -> Chart:
    """Run both passes over one (batch of) sentence(s)."""
    views = params.views()
    chart = inside_pass(leaf_vectors, params, views, threads=threads)
    outside_pass(chart, params, views, threads=threads)
    return chart


def check_chart(chart: Chart, tol: float = 1e-6) -> None:
    """Assert the structural invariants of a filled chart."""
    T = chart.T
    assert len(chart.inside_cell) == chart.cell_count()
    assert len(chart.outside_cell) == chart.cell_count()
    for span in chart.spans():
        for table in (chart.inside_cell, chart.outside_cell):
            norm = np.linalg.norm(table[span].h.data, axis=-1)
            assert np.all(np.abs(norm - 1.0) < tol), (span, norm)
    for table in (chart.inside_weights, chart.outside_weights):
        for span, w in table.items():
            total = w.sum(axis=-1)
            assert np.all(np.abs(total - 1.0) < tol), (span, total)
