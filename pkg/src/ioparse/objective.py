"""Reconstruction objectives tying leaf context vectors to their tokens.

Each token's outside vector is trained to point at that token's own leaf
inside vector rather than at leaf vectors of sampled negative tokens. Both
losses see the same candidate dot products; the margin loss hinges each
true/negative pair, the cross-entropy loss softmaxes the true token against
the negative pool.

Negative candidates are produced by running the leaf transform (and the
same unit normalization the chart applies) on the negative tokens'
embeddings, so positives and negatives live in the same space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .chart import Chart, unit_normalize
from .compose import ModelParams, ParamViews, leaf_transform


@dataclass
class LossReport:
    """Scalar loss plus the rank of each true token among its candidates.

    ranks has shape (..., T) matching the chart's batch layout; entries lie
    in [1, N+1]. A rank counts the negatives with a strictly larger dot
    product, so the true token wins ties.
    """

    loss: nm.Tensor
    ranks: np.ndarray

    def value(self) -> float:
        return self.loss.item()


def negative_cells(
    neg_vectors: np.ndarray, params: ModelParams, views: ParamViews | None = None
) -> nm.Tensor:
    """Leaf-transform and normalize the (N, D_in) negative embeddings."""
    cell, _ = leaf_transform(nm.constant(np.asarray(neg_vectors)), params, views)
    return unit_normalize(cell.h)


def _candidate_dots(chart: Chart, leaf_targets, negatives: nm.Tensor):
    T = chart.T
    if leaf_targets is None:
        leaf_targets = [chart.inside_cell[(k, 1)].h for k in range(T)]
    if len(leaf_targets) != T:
        raise ValueError(
            f"expected {T} leaf targets, got {len(leaf_targets)}"
        )
    if negatives.ndim != 2:
        raise ValueError("negatives must be a (N, D) matrix of cell vectors")
    pos, negs = [], []
    for k in range(T):
        b = chart.outside_cell[(k, 1)].h
        pos.append(nm.dot(b, leaf_targets[k]))
        negs.append(nm.matmul(b, negatives))
    return pos, negs


def _ranks(pos, negs) -> np.ndarray:
    per_token = [
        1 + np.sum(ng.data > p.data[..., None], axis=-1) for p, ng in zip(pos, negs)
    ]
    return np.stack(per_token, axis=-1)


def _reduce(per_token_terms) -> nm.Tensor:
    """Sum over tokens, then average over any batch axes."""
    total = per_token_terms[0]
    for t in per_token_terms[1:]:
        total = total + t
    if total.ndim == 0:
        return total
    n = float(total.size)
    return total.sum() * (1.0 / n)


def margin_loss(
    chart: Chart,
    negatives: nm.Tensor,
    leaf_targets=None,
    margin: float = 1.0,
) -> LossReport:
    """Hinge on every (true, negative) pair of context dot products.

    A pair contributes max(0, margin - b.a_true + b.a_neg); with the
    default margin of 1 a pair goes silent only once the true token beats
    the negative by a full unit of dot product.
    """
    pos, negs = _candidate_dots(chart, leaf_targets, negatives)
    terms = []
    for p, ng in zip(pos, negs):
        hinge = nm.relu(nm.expand_dims(margin - p, -1) + ng)
        terms.append(hinge.sum(axis=-1))
    return LossReport(_reduce(terms), _ranks(pos, negs))


def softmax_loss(
    chart: Chart,
    negatives: nm.Tensor,
    leaf_targets=None,
) -> LossReport:
    """Cross-entropy of the true token against the negative pool.

    The denominator is exp(true) plus the sum over negatives (duplicates
    kept), evaluated in log space with a detached max shift.
    """
    pos, negs = _candidate_dots(chart, leaf_targets, negatives)
    terms = []
    for p, ng in zip(pos, negs):
        logits = nm.concat([nm.expand_dims(p, -1), ng], axis=-1)
        shift = nm.constant(nm.max_last(logits))
        lse = nm.log(nm.exp(logits - shift).sum(axis=-1, keepdims=True)) + shift
        terms.append((lse.sum(axis=-1) - p))
    return LossReport(_reduce(terms), _ranks(pos, negs))


LOSSES = {"margin": margin_loss, "softmax": softmax_loss}


def compute_loss(
    kind: str,
    chart: Chart,
    negatives: nm.Tensor,
    margin: float = 1.0,
) -> LossReport:
    if kind == "margin":
        return margin_loss(chart, negatives, margin=margin)
    if kind == "softmax":
        return softmax_loss(chart, negatives)
    raise ValueError(f"unknown loss {kind!r}")
