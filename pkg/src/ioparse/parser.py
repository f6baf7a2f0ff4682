"""Tree extraction from a filled chart, plus bracketed-tree text I/O.

The decoder is a max-sum dynamic program over the chart's per-split
weights: each leaf starts at zero, each longer span takes the best
split score x_i + x_j + e(i, j), and backtracking over the recorded best
splits yields the tree. Ties always resolve to the lowest split point, and
the exhaustive enumerator used to cross-check the decoder applies the same
rule, so the two agree exactly.
"""

from __future__ import annotations

import math

import numpy as np

from . import numeric as nm
from .chart import fill_chart

DEFAULT_PUNCT = frozenset(
    [".", ",", ";", ":", "!", "?", "''", "``", '"', "'", "--", "...",
     "-LRB-", "-RRB-", "(", ")"]
)

_CATALAN_GUARD = 12


class Tree:
    """A constituency tree over token indices.

    Leaves carry (index, token); internal nodes carry children (exactly two
    for predictions, two or more for gold trees) and an optional label.
    """

    __slots__ = ("children", "label", "index", "token")

    def __init__(self, children=(), label=None, index=None, token=None):
        self.children = tuple(children)
        self.label = label
        self.index = index
        self.token = token

    @classmethod
    def leaf(cls, index: int, token: str) -> "Tree":
        return cls(index=index, token=token)

    @classmethod
    def node(cls, children, label=None) -> "Tree":
        children = tuple(children)
        if not children:
            raise ValueError("an internal node needs children")
        return cls(children=children, label=label)

    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["Tree"]:
        if self.is_leaf():
            return [self]
        out = []
        stack = [self]
        while stack:
            n = stack.pop()
            if n.is_leaf():
                out.append(n)
            else:
                stack.extend(reversed(n.children))
        return out

    def tokens(self) -> list[str]:
        return [leaf.token for leaf in self.leaves()]

    def span(self) -> tuple[int, int]:
        """Covered token range as (start, end), end exclusive."""
        leaves = self.leaves()
        return leaves[0].index, leaves[-1].index + 1

    def internal_spans(self) -> set[tuple[int, int]]:
        out = set()
        stack = [self]
        while stack:
            n = stack.pop()
            if not n.is_leaf():
                out.add(n.span())
                stack.extend(n.children)
        return out

    def size(self) -> int:
        return len(self.leaves())

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        if self.is_leaf() != other.is_leaf():
            return False
        if self.is_leaf():
            return self.index == other.index and self.token == other.token
        return self.label == other.label and self.children == other.children

    def __hash__(self):
        if self.is_leaf():
            return hash(("leaf", self.index, self.token))
        return hash(("node", self.label, self.children))

    def __repr__(self):
        return f"Tree({render_tree(self)!r})"


# -- decoding ---------------------------------------------------------------


def cky(weights, T: int, tokens=None, log_space: bool = False) -> Tree:
    """Best binary tree under summed per-split weights.

    `weights` maps every span (start, length >= 2) to its per-split weight
    sequence (lowest split first). `log_space` scores with log(weight)
    instead of the weight itself.
    """
    if T < 1:
        raise ValueError("need at least one token")
    tokens = _default_tokens(tokens, T)
    best: dict[tuple[int, int], float] = {}
    split: dict[tuple[int, int], int] = {}
    for i in range(T):
        best[(i, 1)] = 0.0
    for length in range(2, T + 1):
        for start in range(T - length + 1):
            w = _span_weights(weights, (start, length))
            top = -math.inf
            arg = -1
            for cut in range(1, length):
                e = float(w[cut - 1])
                if log_space:
                    e = math.log(e)
                cand = (best[(start, cut)] + best[(start + cut, length - cut)]) + e
                if cand > top:
                    top = cand
                    arg = cut
            best[(start, length)] = top
            split[(start, length)] = arg

    def backtrack(start, length):
        if length == 1:
            return Tree.leaf(start, tokens[start])
        cut = split[(start, length)]
        return Tree.node(
            [backtrack(start, cut), backtrack(start + cut, length - cut)]
        )

    tree = backtrack(0, T)
    return tree


def tree_score(tree: Tree, weights, log_space: bool = False) -> float:
    """Summed split weight of a binary tree, composed exactly as cky sums it."""
    if tree.is_leaf():
        return 0.0
    left, right = tree.children
    start, end = tree.span()
    cut = left.span()[1] - start
    w = _span_weights(weights, (start, end - start))
    e = float(w[cut - 1])
    if log_space:
        e = math.log(e)
    return (tree_score(left, weights, log_space) + tree_score(right, weights, log_space)) + e


def brute_force_best_tree(weights, T: int, tokens=None, log_space: bool = False) -> Tree:
    """Exact argmax by enumerating every binary tree.

    Enumeration is ordered by (split, left order, right order), and only a
    strictly better score replaces the incumbent, which realizes the same
    lowest-split tie-break as the decoder.
    """
    if T > _CATALAN_GUARD:
        raise ValueError(f"brute force capped at {_CATALAN_GUARD} tokens")
    tokens = _default_tokens(tokens, T)

    def enumerate_span(start, length):
        if length == 1:
            yield Tree.leaf(start, tokens[start])
            return
        for cut in range(1, length):
            for left in enumerate_span(start, cut):
                for right in enumerate_span(start + cut, length - cut):
                    yield Tree.node([left, right])

    best_tree = None
    best_score = -math.inf
    for tree in enumerate_span(0, T):
        score = tree_score(tree, weights, log_space)
        if score > best_score:
            best_score = score
            best_tree = tree
    return best_tree


def enumerate_binary_trees(T: int, tokens=None):
    """All binary trees over T tokens (guarded against Catalan blowup)."""
    if T > _CATALAN_GUARD:
        raise ValueError(f"enumeration capped at {_CATALAN_GUARD} tokens")
    tokens = _default_tokens(tokens, T)

    def rec(start, length):
        if length == 1:
            yield Tree.leaf(start, tokens[start])
            return
        for cut in range(1, length):
            for left in rec(start, cut):
                for right in rec(start + cut, length - cut):
                    yield Tree.node([left, right])

    yield from rec(0, T)


def _span_weights(weights, span):
    try:
        w = weights[span]
    except KeyError:
        raise KeyError(f"no split weights recorded for span {span}") from None
    if len(w) != span[1] - 1:
        raise ValueError(
            f"span {span} needs {span[1] - 1} split weights, got {len(w)}"
        )
    return w


def _default_tokens(tokens, T):
    if tokens is None:
        return [f"w{i}" for i in range(T)]
    if len(tokens) != T:
        raise ValueError(f"expected {T} tokens, got {len(tokens)}")
    return list(tokens)


# -- trailing punctuation heuristic ------------------------------------------


def attach_trailing_punct(tree: Tree, punct=DEFAULT_PUNCT) -> Tree:
    """Re-attach trailing punctuation tokens as right children of the root.

    Applied once per trailing punctuation token, rightmost first, so
    "a b . !" becomes (((a b) .) !). Everything that is not a trailing
    punctuation leaf keeps its structure.
    """
    if tree.is_leaf():
        return tree
    leaves = tree.leaves()
    last = leaves[-1]
    if last.token not in punct:
        return tree
    rest = _remove_leaf(tree, last.index)
    if rest is None:
        return tree
    rest = attach_trailing_punct(rest, punct)
    return Tree.node([rest, Tree.leaf(last.index, last.token)])


def _remove_leaf(tree: Tree, index: int) -> Tree | None:
    if tree.is_leaf():
        return None if tree.index == index else tree
    kept = [c for c in (_remove_leaf(c, index) for c in tree.children) if c is not None]
    if not kept:
        return None
    if len(kept) == 1:
        return kept[0]
    return Tree.node(kept, label=tree.label)


# -- bracketed text I/O -------------------------------------------------------


def render_tree(tree: Tree, scores=None) -> str:
    """One-line bracketing; labels appear when a node carries one.

    `scores` may map spans to floats to annotate internal nodes.
    """
    if tree.is_leaf():
        return tree.token
    parts = []
    if tree.label:
        parts.append(tree.label)
    if scores is not None:
        start, end = tree.span()
        val = scores.get((start, end - start))
        if val is not None:
            parts.append(f"={val:.4f}")
    parts.extend(render_tree(c, scores) for c in tree.children)
    return "(" + " ".join(parts) + ")"


def parse_sexpr(text: str, labeled: bool = False) -> Tree:
    """Read one bracketed tree.

    With labeled=True the first atom inside every group is its label
    (treebank convention); otherwise every atom is a token. Token indices
    are assigned left to right.
    """
    tokens = _lex(text)
    pos = 0
    counter = [0]

    def parse_group():
        nonlocal pos
        if tokens[pos] != "(":
            raise ValueError(f"expected '(' at item {pos} of {text!r}")
        pos += 1
        label = None
        if labeled:
            if pos < len(tokens) and tokens[pos] not in ("(", ")"):
                label = tokens[pos]
                pos += 1
        children = []
        while pos < len(tokens) and tokens[pos] != ")":
            if tokens[pos] == "(":
                children.append(parse_group())
            else:
                children.append(Tree.leaf(counter[0], tokens[pos]))
                counter[0] += 1
                pos += 1
        if pos >= len(tokens):
            raise ValueError(f"unbalanced parentheses in {text!r}")
        pos += 1  # consume ')'
        if not children:
            raise ValueError(f"empty constituent in {text!r}")
        if len(children) == 1 and label is None:
            return children[0]
        if len(children) == 1:
            return Tree.node(children, label=label)
        return Tree.node(children, label=label)

    if not tokens:
        raise ValueError("empty tree text")
    if tokens[0] != "(":
        if len(tokens) == 1:
            return Tree.leaf(0, tokens[0])
        raise ValueError(f"tree text must start with '(': {text!r}")
    tree = parse_group()
    if pos != len(tokens):
        raise ValueError(f"trailing content after tree in {text!r}")
    return tree


def _lex(text: str) -> list[str]:
    out = []
    atom = []
    for ch in text:
        if ch in "()":
            if atom:
                out.append("".join(atom))
                atom = []
            out.append(ch)
        elif ch.isspace():
            if atom:
                out.append("".join(atom))
                atom = []
        else:
            atom.append(ch)
    if atom:
        out.append("".join(atom))
    return out


def read_treebank(path: str, labeled: bool = True) -> list[Tree]:
    trees = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trees.append(parse_sexpr(line, labeled=labeled))
    return trees


def write_trees(trees, fh) -> None:
    for tree in trees:
        fh.write(render_tree(tree) + "\n")


# -- chart-driven parsing ------------------------------------------------------


def parse_sentence(
    tokens: list[str],
    params,
    table,
    pp: bool = False,
    threads: int = 1,
    raw_scores: bool = False,
    log_space: bool = False,
    return_scores: bool = False,
):
    """Embed, fill the chart, and decode one sentence."""
    with nm.no_grad():
        leaves = np.stack([table.vector(t) for t in tokens])
        chart = fill_chart(leaves, params, threads=threads)
    weights = chart.pair_weights(raw=raw_scores)
    tree = cky(weights, len(tokens), tokens=tokens, log_space=log_space)
    if pp:
        tree = attach_trailing_punct(tree)
    if return_scores:
        return tree, weights
    return tree
