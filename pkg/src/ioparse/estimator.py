"""Scikit-learn style front end for the chart parser.

The estimator wraps corpus ingestion, training, and decoding behind the
familiar fit/predict/transform surface so the parser drops into existing
pipelines: `fit` learns from raw sentences, `predict` returns bracketed
trees, `transform` produces a fixed-width sentence embedding (the root
cell's concatenated inside/outside vector), and `score` computes bracketing
F1 against gold trees.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import numeric as nm
from .chart import fill_chart
from .data import EmbeddingTable
from .evaluation import EvalSettings, corpus_f1
from .parser import Tree, parse_sentence, parse_sexpr, render_tree
from .trainer import Checkpoint, TrainConfig, fit as _fit


def check_sentences(X) -> list[list[str]]:
    """Coerce input sentences to non-empty token lists."""
    if isinstance(X, str):
        raise ValueError("pass a sequence of sentences, not a single string")
    sentences = []
    for i, item in enumerate(X):
        tokens = item.split() if isinstance(item, str) else list(item)
        if not tokens:
            raise ValueError(f"sentence {i} is empty")
        if not all(isinstance(t, str) and t for t in tokens):
            raise ValueError(f"sentence {i} contains non-string or empty tokens")
        sentences.append(tokens)
    if not sentences:
        raise ValueError("X contains no sentences")
    return sentences


class InsideOutsideParser(BaseEstimator):
    """Unsupervised constituency parser with learned span representations.

    Parameters mirror the training configuration: `dim` is the cell width,
    `compose` picks the span composition function ("mlp" or "treelstm"),
    `kernel` enriches the MLP input, `share` ties the top-down composer to
    the bottom-up one, and `loss` selects the reconstruction objective
    ("margin" or "softmax"). `embeddings` may name a text embedding file;
    otherwise tokens get deterministic seeded fallback vectors of width
    `embed_dim` (default `dim`).

    After `fit`, `params_` holds the learned tensors and `checkpoint_` the
    full serializable state.
    """

    def __init__(
        self,
        dim: int = 32,
        compose: str = "mlp",
        kernel: bool = False,
        share: bool = True,
        loss: str = "margin",
        margin: float = 1.0,
        lr: float = 1e-3,
        batch_size: int = 16,
        steps: int = 2000,
        negatives: int = 100,
        neg_exponent: float = 1.0,
        clip_norm: float = 5.0,
        seed: int = 0,
        embeddings: str | None = None,
        embed_dim: int | None = None,
        attach_punct: bool = False,
        threads: int = 1,
        precision: str = "double",
        val_every: int = 250,
    ):
        self.dim = dim
        self.compose = compose
        self.kernel = kernel
        self.share = share
        self.loss = loss
        self.margin = margin
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.negatives = negatives
        self.neg_exponent = neg_exponent
        self.clip_norm = clip_norm
        self.seed = seed
        self.embeddings = embeddings
        self.embed_dim = embed_dim
        self.attach_punct = attach_punct
        self.threads = threads
        self.precision = precision
        self.val_every = val_every

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            embed_dim=self.embed_dim,
            compose=self.compose,
            kernel=self.kernel,
            share=self.share,
            loss=self.loss,
            margin=self.margin,
            lr=self.lr,
            batch_size=self.batch_size,
            steps=self.steps,
            negatives=self.negatives,
            neg_exponent=self.neg_exponent,
            clip_norm=self.clip_norm,
            seed=self.seed,
            precision=self.precision,
            val_every=self.val_every,
        )

    def fit(self, X, y=None, log_stream=None):
        """Learn parameters from raw sentences.

        y may hold gold bracketings (s-expression strings or Tree values);
        when present they act as a validation set and the best-F1
        checkpoint is retained.
        """
        sentences = check_sentences(X)
        config = self._config()
        table = None
        if self.embeddings is not None:
            table = EmbeddingTable.from_file(
                self.embeddings, config.resolved_embed_dim(), self.seed
            )
        validation = None
        if y is not None:
            golds = [
                t if isinstance(t, Tree) else parse_sexpr(t, labeled=True) for t in y
            ]
            if len(golds) != len(sentences):
                raise ValueError("y must align with X")
            validation = list(zip(sentences, golds))
        self.checkpoint_ = _fit(
            config, sentences, table, validation, log_stream=log_stream
        )
        self.params_ = self.checkpoint_.build_params()
        self.table_ = self.checkpoint_.embedding_table(self.embeddings)
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this parser is not fitted; call fit first")

    def load(self, checkpoint_path: str, embeddings: str | None = None):
        """Adopt a previously trained checkpoint instead of fitting."""
        self.checkpoint_ = Checkpoint.load(checkpoint_path)
        self.params_ = self.checkpoint_.build_params()
        self.table_ = self.checkpoint_.embedding_table(
            embeddings if embeddings is not None else self.embeddings
        )
        return self

    def predict_trees(self, X) -> list[Tree]:
        self._require_fitted()
        sentences = check_sentences(X)
        return [
            parse_sentence(
                tokens,
                self.params_,
                self.table_,
                pp=self.attach_punct,
                threads=self.threads,
            )
            for tokens in sentences
        ]

    def predict(self, X) -> list[str]:
        """Bracketed tree strings, one per input sentence."""
        return [render_tree(t) for t in self.predict_trees(X)]

    def transform(self, X) -> np.ndarray:
        """Per-sentence feature vectors: the root cell's [inside; outside]."""
        self._require_fitted()
        sentences = check_sentences(X)
        reps = []
        with nm.no_grad():
            for tokens in sentences:
                leaves = np.stack([self.table_.vector(t) for t in tokens])
                chart = fill_chart(leaves, self.params_, threads=self.threads)
                reps.append(chart.span_representation((0, len(tokens))))
        return np.stack(reps)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def span_embeddings(self, sentence) -> dict[tuple[int, int], np.ndarray]:
        """[inside; outside] vectors for every span of one sentence."""
        self._require_fitted()
        tokens = check_sentences([sentence])[0]
        with nm.no_grad():
            leaves = np.stack([self.table_.vector(t) for t in tokens])
            chart = fill_chart(leaves, self.params_, threads=self.threads)
        return {span: chart.span_representation(span) for span in chart.spans()}

    def score(self, X, y) -> float:
        """Micro-averaged bracketing F1 against gold trees."""
        preds = self.predict_trees(X)
        golds = [t if isinstance(t, Tree) else parse_sexpr(t, labeled=True) for t in y]
        return corpus_f1(preds, golds, EvalSettings.preset("wsj")).f1
