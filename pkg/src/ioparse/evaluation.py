"""Measurement: bracketing F1, segment recall, baselines, phrase P@K.

Bracketing scores compare the internal-node span sets of predicted and
gold trees after the preprocessing chosen by an EvalSettings value:
optional punctuation stripping, optional length cutoff (applied after
stripping), optional right-binarization of the gold tree, and optional
inclusion of the trivial whole-sentence span. Single-token spans never
count as constituents. The three bundled presets mirror the standard
evaluation regimes for the full treebank and its length-10/length-40
subsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .parser import DEFAULT_PUNCT, Tree

PRESETS = {
    "wsj": dict(
        use_test_split_only=True,
        keep_punctuation=True,
        max_length=None,
        binarize_gold=True,
        count_trivial_spans=True,
    ),
    "wsj10": dict(
        use_test_split_only=False,
        keep_punctuation=False,
        max_length=10,
        binarize_gold=False,
        count_trivial_spans=False,
    ),
    "wsj40": dict(
        use_test_split_only=True,
        keep_punctuation=False,
        max_length=40,
        binarize_gold=False,
        count_trivial_spans=False,
    ),
}


@dataclass(frozen=True)
class EvalSettings:
    use_test_split_only: bool = True
    keep_punctuation: bool = True
    max_length: int | None = None
    binarize_gold: bool = True
    count_trivial_spans: bool = True

    @classmethod
    def preset(cls, name: str) -> "EvalSettings":
        try:
            return cls(**PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown preset {name!r}") from None


@dataclass
class F1Score:
    precision: float
    recall: float
    f1: float
    matched: int = 0
    predicted: int = 0
    gold: int = 0


@dataclass
class CorpusReport:
    precision: float
    recall: float
    f1: float
    sentences: int
    skipped: int
    depth: float

    @property
    def as_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "sentences": self.sentences,
            "skipped": self.skipped,
            "depth": self.depth,
        }


def span_set(tree: Tree, count_trivial: bool = True) -> set[tuple[int, int]]:
    """Internal-node spans of length > 1, optionally without the full span."""
    start, end = tree.span()
    spans = {s for s in tree.internal_spans() if s[1] - s[0] > 1}
    if not count_trivial:
        spans.discard((start, end))
    return spans


def _f1(matched: int, predicted: int, gold: int) -> F1Score:
    if predicted == 0 and gold == 0:
        return F1Score(1.0, 1.0, 1.0, matched, predicted, gold)
    p = matched / predicted if predicted else 0.0
    r = matched / gold if gold else 0.0
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return F1Score(p, r, f, matched, predicted, gold)


def preprocess_pair(pred: Tree, gold: Tree, settings: EvalSettings):
    """Apply the settings to one (pred, gold) pair.

    Returns (pred, gold) or None when the sentence drops out of the
    evaluation (all punctuation, or over the length bound).
    """
    if pred.size() != gold.size():
        raise ValueError(
            f"token count mismatch: predicted {pred.size()} vs gold {gold.size()}"
        )
    if not settings.keep_punctuation:
        stripped_pred = strip_punct(pred)
        stripped_gold = strip_punct(gold)
        if stripped_pred is None or stripped_gold is None:
            return None
        pred, gold = stripped_pred, stripped_gold
    if settings.max_length is not None and gold.size() > settings.max_length:
        return None
    if settings.binarize_gold:
        gold = binarize(gold)
    return pred, gold


def bracketing_f1(pred: Tree, gold: Tree, settings: EvalSettings | None = None) -> F1Score:
    if settings is None:
        settings = EvalSettings()
    pair = preprocess_pair(pred, gold, settings)
    if pair is None:
        return _f1(0, 0, 0)
    pred, gold = pair
    ps = span_set(pred, settings.count_trivial_spans)
    gs = span_set(gold, settings.count_trivial_spans)
    return _f1(len(ps & gs), len(ps), len(gs))


def corpus_f1(
    pred_trees,
    gold_trees,
    settings: EvalSettings | None = None,
    average: str = "micro",
) -> CorpusReport:
    """Corpus bracketing score.

    micro pools span counts before taking the ratio; macro averages
    per-sentence F1 values.
    """
    if settings is None:
        settings = EvalSettings()
    if len(pred_trees) != len(gold_trees):
        raise ValueError(
            f"corpus size mismatch: {len(pred_trees)} vs {len(gold_trees)}"
        )
    matched = predicted = gold_count = 0
    per_sentence = []
    depths = []
    kept = 0
    skipped = 0
    for pred, gold in zip(pred_trees, gold_trees):
        pair = preprocess_pair(pred, gold, settings)
        if pair is None:
            skipped += 1
            continue
        p, g = pair
        kept += 1
        ps = span_set(p, settings.count_trivial_spans)
        gs = span_set(g, settings.count_trivial_spans)
        matched += len(ps & gs)
        predicted += len(ps)
        gold_count += len(gs)
        per_sentence.append(_f1(len(ps & gs), len(ps), len(gs)).f1)
        depths.append(tree_depth(p))
    depth = float(np.mean(depths)) if depths else 0.0
    if average == "macro":
        f = float(np.mean(per_sentence)) if per_sentence else 0.0
        return CorpusReport(f, f, f, kept, skipped, depth)
    score = _f1(matched, predicted, gold_count)
    return CorpusReport(score.precision, score.recall, score.f1, kept, skipped, depth)


def aggregate_f1(per_seed_f1s) -> dict:
    """Mean/median/max across per-seed corpus scores."""
    arr = np.asarray(list(per_seed_f1s), dtype=float)
    if arr.size == 0:
        raise ValueError("no scores to aggregate")
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "max": float(arr.max()),
    }


# -- segment recall -----------------------------------------------------------


def label_recall(pred: Tree, gold: Tree) -> dict[str, tuple[int, int]]:
    """Per-label (hits, total) over gold internal spans of length > 1."""
    if pred.size() != gold.size():
        raise ValueError("token count mismatch")
    pred_spans = span_set(pred, count_trivial=True)
    counts: dict[str, list[int]] = {}
    stack = [gold]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            continue
        stack.extend(node.children)
        start, end = node.span()
        if end - start <= 1:
            continue
        label = node.label or "?"
        hit, total = counts.setdefault(label, [0, 0])
        counts[label][1] = total + 1
        if (start, end) in pred_spans:
            counts[label][0] = hit + 1
    return {k: (v[0], v[1]) for k, v in counts.items()}


def corpus_label_recall(pred_trees, gold_trees) -> dict[str, tuple[int, int]]:
    totals: dict[str, list[int]] = {}
    for pred, gold in zip(pred_trees, gold_trees):
        for label, (hit, total) in label_recall(pred, gold).items():
            agg = totals.setdefault(label, [0, 0])
            agg[0] += hit
            agg[1] += total
    return {k: (v[0], v[1]) for k, v in totals.items()}


# -- tree shape ----------------------------------------------------------------


def tree_depth(tree: Tree) -> int:
    """Height as the edge count of the longest root-to-leaf path."""
    if tree.is_leaf():
        return 0
    return 1 + max(tree_depth(c) for c in tree.children)


def corpus_depth(trees) -> float:
    return float(np.mean([tree_depth(t) for t in trees]))


# -- deterministic baselines ----------------------------------------------------


def baseline_tree(kind: str, T: int, tokens=None, rng=None) -> Tree:
    """LB / RB combs, midpoint-balanced, or uniform-random binary trees."""
    if T < 1:
        raise ValueError("need at least one token")
    if tokens is None:
        tokens = [f"w{i}" for i in range(T)]
    leaves = [Tree.leaf(i, tokens[i]) for i in range(T)]
    if kind == "lb":
        tree = leaves[0]
        for leaf in leaves[1:]:
            tree = Tree.node([tree, leaf])
        return tree
    if kind == "rb":
        tree = leaves[-1]
        for leaf in reversed(leaves[:-1]):
            tree = Tree.node([leaf, tree])
        return tree
    if kind == "balanced":

        def build(lo, hi):
            if hi - lo == 1:
                return leaves[lo]
            mid = lo + (hi - lo) // 2
            return Tree.node([build(lo, mid), build(mid, hi)])

        return build(0, T)
    if kind == "random":
        if rng is None:
            raise ValueError("random baseline needs an rng")
        catalan = _catalan_table(T)

        def build(lo, hi):
            n = hi - lo
            if n == 1:
                return leaves[lo]
            # split s chosen with probability Cat(s-1)*Cat(n-s-1)/Cat(n-1),
            # which makes every binary tree equally likely
            weights = np.array(
                [catalan[s - 1] * catalan[n - s - 1] for s in range(1, n)]
            )
            probs = weights / weights.sum()
            s = 1 + int(rng.choice(len(probs), p=probs))
            return Tree.node([build(lo, lo + s), build(lo + s, hi)])

        return build(0, T)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _catalan_table(T: int) -> list[int]:
    cat = [1] * max(T, 1)
    for n in range(1, T):
        cat[n] = sum(cat[i] * cat[n - 1 - i] for i in range(n))
    return cat


# -- gold-tree preprocessing -----------------------------------------------------


def binarize(tree: Tree, direction: str = "right") -> Tree:
    """Collapse n-ary nodes to nested binary ones with the same leaf order.

    Introduced nodes carry no label. Right binarization nests toward the
    right: (A b c d) -> (A b (c d)).
    """
    if direction not in ("right", "left"):
        raise ValueError(f"unknown binarization direction {direction!r}")
    if tree.is_leaf():
        return tree
    children = [binarize(c, direction) for c in tree.children]
    if len(children) == 1:
        return Tree.node(children, label=tree.label)

    def fold(nodes):
        if len(nodes) == 2:
            return nodes
        if direction == "right":
            return [nodes[0], Tree.node(fold(nodes[1:]))]
        return [Tree.node(fold(nodes[:-1])), nodes[-1]]

    return Tree.node(fold(children), label=tree.label)


def strip_punct(tree: Tree, punct=DEFAULT_PUNCT) -> Tree | None:
    """Remove punctuation leaves, collapse unaries, re-base indices.

    Returns None when nothing but punctuation remains.
    """
    pruned = _prune(tree, punct)
    if pruned is None:
        return None
    return reindex(pruned)


def _prune(tree: Tree, punct) -> Tree | None:
    if tree.is_leaf():
        return None if tree.token in punct else tree
    kept = [c for c in (_prune(c, punct) for c in tree.children) if c is not None]
    if not kept:
        return None
    if len(kept) == 1 and len(tree.children) > 1:
        # collapse a unary chain created by the removal; pre-existing
        # unary nodes stay as they were
        return kept[0]
    return Tree.node(kept, label=tree.label)


def reindex(tree: Tree) -> Tree:
    """Renumber leaves 0..T-1 in left-to-right order."""
    counter = [0]

    def walk(node):
        if node.is_leaf():
            leaf = Tree.leaf(counter[0], node.token)
            counter[0] += 1
            return leaf
        return Tree.node([walk(c) for c in node.children], label=node.label)

    return walk(tree)


# -- phrase similarity ------------------------------------------------------------


def phrase_precision_at_k(reps: np.ndarray, labels, k: int) -> float:
    """Mean fraction of the k cosine-nearest spans sharing the query label.

    Self-matches are excluded; similarity ties resolve to the lower span
    index.
    """
    reps = np.asarray(reps, dtype=float)
    labels = list(labels)
    n = len(labels)
    if reps.shape[0] != n:
        raise ValueError("one representation per labeled span required")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n - 1:
        raise ValueError(f"k={k} exceeds population-1={n - 1}")
    norms = np.linalg.norm(reps, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    unit = reps / norms
    sims = unit @ unit.T
    hits = 0.0
    for q in range(n):
        row = sims[q].copy()
        row[q] = -np.inf
        # stable sort on (-sim, index) => ties favor the lower index
        order = np.lexsort((np.arange(n), -row))[:k]
        hits += sum(labels[j] == labels[q] for j in order) / k
    return hits / n


def labeled_spans(tree: Tree, min_length: int = 2):
    """(start, length, label) for labeled internal nodes of length >= min_length."""
    out = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            continue
        stack.extend(node.children)
        start, end = node.span()
        if end - start >= min_length and node.label:
            out.append((start, end - start, node.label))
    return sorted(out)
