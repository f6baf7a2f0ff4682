"""Deterministic template-grammar corpus with known bracketings.

A small phrase grammar over a 200-token vocabulary generates sentences of
at most ten tokens together with their labeled binary derivation trees.
Word classes have strong co-occurrence structure (animate subjects with
transitive verbs, class-matched adjectives), which is what makes the
bracketing recoverable by an unsupervised learner at desk scale. The same
module can emit a class-clustered embedding file so the inputs carry the
lexical regularities a pretrained table would.

Everything is driven by one seed; the same seed always yields the same
corpus, treebank, and embeddings.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .parser import Tree


def _words(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{i:02d}" for i in range(count)]


WORD_CLASSES = {
    "det": _words("d", 6),
    "prep": _words("p", 8),
    "adv": _words("r", 12),
    "adj_anim": _words("ja", 20),
    "adj_obj": _words("jo", 20),
    "verb_trans": _words("vt", 25),
    "verb_intrans": _words("vi", 20),
    "noun_anim": _words("na", 45),
    "noun_obj": _words("no", 44),
}

PUNCT_TOKEN = "."


def vocabulary(punct: bool = False) -> list[str]:
    out = []
    for words in WORD_CLASSES.values():
        out.extend(words)
    if punct:
        out.append(PUNCT_TOKEN)
    return out


@dataclass
class SynthSample:
    tokens: list[str]
    tree: Tree  # labeled, binary, over the tokens


class SynthGrammar:
    """Seeded sentence/tree generator over the template grammar."""

    def __init__(self, seed: int = 13, punct: bool = False):
        self.seed = seed
        self.punct = punct
        self.rng = np.random.default_rng(seed)

    def _pick(self, cls: str) -> str:
        words = WORD_CLASSES[cls]
        return words[int(self.rng.integers(len(words)))]

    def _np(self, kind: str, allow_adj: bool = True):
        det = self._pick("det")
        noun_cls = "noun_anim" if kind == "anim" else "noun_obj"
        adj_cls = "adj_anim" if kind == "anim" else "adj_obj"
        if allow_adj and self.rng.random() < 0.35:
            adj = self._pick(adj_cls)
            noun = self._pick(noun_cls)
            tokens = [det, adj, noun]
            build = lambda i: Tree.node(
                [
                    Tree.leaf(i, det),
                    Tree.node(
                        [Tree.leaf(i + 1, adj), Tree.leaf(i + 2, noun)], label="NBAR"
                    ),
                ],
                label="NP",
            )
        else:
            noun = self._pick(noun_cls)
            tokens = [det, noun]
            build = lambda i: Tree.node(
                [Tree.leaf(i, det), Tree.leaf(i + 1, noun)], label="NP"
            )
        return tokens, build

    def _any_kind(self) -> str:
        return "anim" if self.rng.random() < 0.5 else "obj"

    def sample(self) -> SynthSample:
        roll = self.rng.random()
        if roll < 0.20:
            parts = self._intrans()
        elif roll < 0.55:
            parts = self._trans()
        elif roll < 0.70:
            parts = self._trans_pp()
        elif roll < 0.85:
            parts = self._intrans_pp()
        else:
            parts = self._adv()
        tokens, tree = parts
        if self.punct:
            tokens = tokens + [PUNCT_TOKEN]
            tree = Tree.node(
                [tree, Tree.leaf(len(tokens) - 1, PUNCT_TOKEN)], label="TOP"
            )
        return SynthSample(tokens, tree)

    def _intrans(self):
        subj_tokens, subj = self._np(self._any_kind())
        verb = self._pick("verb_intrans")
        tokens = subj_tokens + [verb]
        tree = Tree.node([subj(0), Tree.leaf(len(subj_tokens), verb)], label="S")
        return tokens, tree

    def _trans(self):
        subj_tokens, subj = self._np("anim")
        verb = self._pick("verb_trans")
        obj_tokens, obj = self._np(self._any_kind())
        tokens = subj_tokens + [verb] + obj_tokens
        i = len(subj_tokens)
        vp = Tree.node([Tree.leaf(i, verb), obj(i + 1)], label="VP")
        return tokens, Tree.node([subj(0), vp], label="S")

    def _trans_pp(self):
        subj_tokens, subj = self._np("anim", allow_adj=False)
        verb = self._pick("verb_trans")
        obj_tokens, obj = self._np("obj", allow_adj=False)
        prep = self._pick("prep")
        pobj_tokens, pobj = self._np(self._any_kind())
        tokens = subj_tokens + [verb] + obj_tokens + [prep] + pobj_tokens
        i = len(subj_tokens)
        core = Tree.node([Tree.leaf(i, verb), obj(i + 1)], label="VP")
        j = i + 1 + len(obj_tokens)
        pp = Tree.node([Tree.leaf(j, prep), pobj(j + 1)], label="PP")
        vp = Tree.node([core, pp], label="VP")
        return tokens, Tree.node([subj(0), vp], label="S")

    def _intrans_pp(self):
        subj_tokens, subj = self._np(self._any_kind())
        verb = self._pick("verb_intrans")
        prep = self._pick("prep")
        pobj_tokens, pobj = self._np(self._any_kind())
        tokens = subj_tokens + [verb, prep] + pobj_tokens
        i = len(subj_tokens)
        pp = Tree.node([Tree.leaf(i + 1, prep), pobj(i + 2)], label="PP")
        vp = Tree.node([Tree.leaf(i, verb), pp], label="VP")
        return tokens, Tree.node([subj(0), vp], label="S")

    def _adv(self):
        subj_tokens, subj = self._np(self._any_kind())
        adv = self._pick("adv")
        verb = self._pick("verb_intrans")
        tokens = subj_tokens + [adv, verb]
        i = len(subj_tokens)
        vp = Tree.node([Tree.leaf(i, adv), Tree.leaf(i + 1, verb)], label="VP")
        return tokens, Tree.node([subj(0), vp], label="S")

    def generate(self, n: int) -> list[SynthSample]:
        return [self.sample() for _ in range(n)]


def class_embeddings(dim: int = 32, seed: int = 13, punct: bool = False):
    """Class-clustered vectors: subclass centroid plus per-word noise."""
    rng = np.random.default_rng(seed ^ 0xE4B)
    vectors: dict[str, np.ndarray] = {}
    for cls, words in WORD_CLASSES.items():
        centroid = rng.uniform(-0.6, 0.6, dim)
        for w in words:
            vectors[w] = centroid + rng.uniform(-0.2, 0.2, dim)
    if punct:
        vectors[PUNCT_TOKEN] = rng.uniform(-0.6, 0.6, dim)
    return vectors


def write_dataset(
    directory: str,
    n: int = 2000,
    seed: int = 13,
    dim: int = 32,
    punct: bool = False,
    prefix: str = "synth",
):
    """Write corpus/treebank/embedding files; returns their three paths."""
    os.makedirs(directory, exist_ok=True)
    grammar = SynthGrammar(seed=seed, punct=punct)
    samples = grammar.generate(n)
    corpus_path = os.path.join(directory, f"{prefix}_corpus.txt")
    treebank_path = os.path.join(directory, f"{prefix}_treebank.txt")
    embed_path = os.path.join(directory, f"{prefix}_embeddings.txt")
    from .parser import render_tree

    with open(corpus_path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(" ".join(s.tokens) + "\n")
    with open(treebank_path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(render_tree(s.tree) + "\n")
    with open(embed_path, "w", encoding="utf-8") as fh:
        for token, vec in class_embeddings(dim, seed, punct).items():
            fh.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
    return corpus_path, treebank_path, embed_path
