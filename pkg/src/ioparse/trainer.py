"""Optimization loop: adaptive-moment updates, clipping, checkpoints.

Checkpoint byte layout (all integers little-endian):

    bytes 0..7    magic b"IOPCHKP1"
    uint32        format version (1)
    uint32        length of the canonical config JSON
    ...           config JSON, UTF-8, sorted keys
    32 bytes      SHA-256 digest of the config JSON
    uint64        training step count
    float64       best validation F1 (NaN when never validated)
    uint32        tensor count
    per tensor:
        uint16    name length, then the UTF-8 name
        uint8     dtype code (0 = float64, 1 = float32)
        uint8     rank
        uint64*   extents
        ...       raw element bytes, little-endian, C order

Model tensors are stored in their creation order, followed by the two
optimizer moment sets under "adam_m." / "adam_v." name prefixes. Loading a
checkpoint and saving it again reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numeric as nm
from .chart import fill_chart
from .compose import ModelParams
from .data import EmbeddingTable, NegativeSampler, Vocab, batch_by_length, build_vocab
from .objective import compute_loss, negative_cells

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"IOPCHKP1"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Knobs for one training run.

    The defaults are desk-scale (small hidden size, batch 16, a few
    thousand steps); the large-scale regime (dim 400/800 with batch
    128/64) remains selectable through the same fields.
    """

    dim: int = 32
    embed_dim: int | None = None  # falls back to dim
    compose: str = "mlp"
    kernel: bool = False
    share: bool = True
    loss: str = "margin"
    margin: float = 1.0
    mlp_hidden: int | None = None
    mlp_activation: str = "tanh"
    output_combine: str = "add"
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 2000
    negatives: int = 100
    neg_exponent: float = 1.0
    clip_norm: float = 5.0
    seed: int = 0
    val_every: int = 250
    precision: str = "double"
    validation_path: str | None = None

    def validate(self) -> None:
        positive = {
            "dim": self.dim,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "negatives": self.negatives,
            "clip_norm": self.clip_norm,
            "val_every": self.val_every,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.loss not in ("margin", "softmax"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.compose not in ("mlp", "treelstm"):
            raise ConfigError(f"unknown composer {self.compose!r}")
        if self.kernel and self.compose != "mlp":
            raise ConfigError("--kernel requires the mlp composer")
        if self.precision not in ("double", "single"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    def resolved_embed_dim(self) -> int:
        return self.dim if self.embed_dim is None else self.embed_dim


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float):
    """Scale the whole gradient set so its global L2 norm is <= max_norm.

    Returns (clipped gradients, pre-clip norm). Direction is preserved;
    elements never grow.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        s = float(np.sum(g * g))
        if not math.isfinite(s):
            raise nm.NonFiniteError("non-finite gradients")
        total += s
    norm = math.sqrt(total)
    if norm <= max_norm:
        return {k: np.array(g) for k, g in grads.items()}, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


class AdamState:
    """First/second moment accumulators for every model tensor."""

    def __init__(self, params: ModelParams):
        self.m = {k: np.zeros_like(t.data) for k, t in params.named().items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.named().items()}
        self.t = 0

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for name, tensor in params.named().items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class TrainState:
    config: TrainConfig
    params: ModelParams
    adam: AdamState
    vocab: Vocab
    table: EmbeddingTable
    sampler: NegativeSampler
    step: int = 0
    best_f1: float = float("nan")
    best_tensors: dict | None = None


@dataclass
class StepMetrics:
    step: int
    loss: float
    grad_norm: float
    median_rank: float


def init_state(
    config: TrainConfig,
    corpus: list[list[str]],
    table: EmbeddingTable | None = None,
) -> TrainState:
    config.validate()
    nm.set_dtype("float64" if config.precision == "double" else "float32")
    vocab = build_vocab(corpus)
    if table is None:
        table = EmbeddingTable.fallback_only(config.resolved_embed_dim(), config.seed)
    elif table.dim != config.resolved_embed_dim():
        raise ConfigError(
            f"embedding table dim {table.dim} but config expects "
            f"{config.resolved_embed_dim()}"
        )
    params = ModelParams(
        dim=config.dim,
        input_dim=table.dim,
        compose=config.compose,
        kernel=config.kernel,
        share=config.share,
        hidden=config.mlp_hidden,
        mlp_activation=config.mlp_activation,
        output_combine=config.output_combine,
        seed=config.seed,
    )
    sampler = NegativeSampler(
        vocab, seed=config.seed, exponent=config.neg_exponent
    )
    return TrainState(config, params, AdamState(params), vocab, table, sampler)


def batch_loss(
    state: TrainState, sentences: list[list[str]], neg_tokens: list[str]
):
    """Forward both chart passes and the objective for one uniform batch."""
    T = len(sentences[0])
    for s in sentences:
        if len(s) != T:
            raise ValueError("batch sentences must share one length")
    table = state.table
    if len(sentences) == 1:
        leaves = np.stack([table.vector(tok) for tok in sentences[0]])
    else:
        # (T, B, D_in): batch axis leads inside each cell
        leaves = np.stack(
            [
                np.stack([table.vector(sent[k]) for sent in sentences])
                for k in range(T)
            ]
        )
    views = state.params.views()
    chart = fill_chart(leaves, state.params)
    negs = negative_cells(
        np.stack([table.vector(tok) for tok in neg_tokens]), state.params, views
    )
    return compute_loss(
        state.config.loss, chart, negs, margin=state.config.margin
    )


def train_step(
    state: TrainState, sentences: list[list[str]], neg_tokens: list[str]
) -> StepMetrics:
    report = batch_loss(state, sentences, neg_tokens)
    loss_value = report.value()
    if not math.isfinite(loss_value):
        raise nm.NonFiniteError(f"loss diverged at step {state.step}")
    nm.zero_grads(state.params.parameters())
    report.loss.backward()
    grads, norm = clip_gradients(state.params.gradients(), state.config.clip_norm)
    state.adam.update(state.params, grads, state.config.lr)
    state.step += 1
    return StepMetrics(
        step=state.step,
        loss=loss_value,
        grad_norm=norm,
        median_rank=float(np.median(report.ranks)),
    )


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.array(t.data) for k, t in params.named().items()}


def _restore(params: ModelParams, tensors: dict[str, np.ndarray]) -> None:
    for k, t in params.named().items():
        t.data = np.array(tensors[k])


def fit(
    config: TrainConfig,
    corpus: list[list[str]],
    table: EmbeddingTable | None = None,
    validation: list[tuple[list[str], "object"]] | None = None,
    log_stream=None,
    step_callback=None,
) -> "Checkpoint":
    """Run the training loop and return the retained checkpoint.

    `validation` pairs tokenized sentences with gold trees; when given, the
    checkpoint with the best validation F1 is retained, otherwise the final
    one. The log gets one tab-separated line per step:
    step, loss, gradient norm, and validation F1 on steps that validate.
    """
    state = init_state(config, corpus, table)
    batches = batch_by_length(corpus, config.batch_size)
    if not batches:
        raise ValueError("empty corpus")
    order_rng = np.random.default_rng(config.seed ^ 0x5EED)

    if step_callback is not None:
        step_callback(0, state, None)

    done = 0
    while done < config.steps:
        epoch_order = order_rng.permutation(len(batches))
        for bi in epoch_order:
            if done >= config.steps:
                break
            batch = [corpus[i] for i in batches[bi]]
            negs = [state.vocab.token(i) for i in state.sampler.sample(config.negatives)]
            metrics = train_step(state, batch, negs)
            done = state.step
            val_part = ""
            if validation is not None and done % config.val_every == 0:
                f1 = _validation_f1(state, validation)
                val_part = f"\t{f1:.6f}"
                if math.isnan(state.best_f1) or f1 > state.best_f1:
                    state.best_f1 = f1
                    state.best_tensors = _snapshot(state.params)
            if log_stream is not None:
                log_stream.write(
                    f"{metrics.step}\t{metrics.loss:.6f}\t{metrics.grad_norm:.6f}"
                    f"{val_part}\n"
                )
            if step_callback is not None:
                step_callback(done, state, metrics)

    if validation is not None and state.best_tensors is not None:
        _restore(state.params, state.best_tensors)
    return Checkpoint.from_state(state)


def _validation_f1(state: TrainState, validation) -> float:
    # local imports keep trainer importable without the parsing stack
    from .evaluation import EvalSettings, corpus_f1
    from .parser import parse_sentence

    settings = EvalSettings.preset("wsj")
    preds, golds = [], []
    with nm.no_grad():
        for tokens, gold in validation:
            preds.append(parse_sentence(tokens, state.params, state.table))
            golds.append(gold)
    return corpus_f1(preds, golds, settings).f1


class Checkpoint:
    """A serializable snapshot of parameters and optimizer state."""

    def __init__(self, config: dict, tensors: dict[str, np.ndarray], step: int, best_f1: float):
        self.config = config
        self.tensors = tensors
        self.step = step
        self.best_f1 = best_f1

    @classmethod
    def from_state(cls, state: TrainState) -> "Checkpoint":
        tensors = _snapshot(state.params)
        for k, arr in state.adam.m.items():
            tensors[f"adam_m.{k}"] = np.array(arr)
        for k, arr in state.adam.v.items():
            tensors[f"adam_v.{k}"] = np.array(arr)
        cfg = asdict(state.config)
        cfg["input_dim"] = state.table.dim
        cfg["embeddings_path"] = state.table.path
        cfg["param_names"] = list(state.params.named().keys())
        return cls(cfg, tensors, state.step, state.best_f1)

    def train_config(self) -> TrainConfig:
        fields = {f: self.config[f] for f in TrainConfig.__dataclass_fields__}
        return TrainConfig(**fields)

    def build_params(self) -> ModelParams:
        cfg = self.train_config()
        params = ModelParams(
            dim=cfg.dim,
            input_dim=self.config["input_dim"],
            compose=cfg.compose,
            kernel=cfg.kernel,
            share=cfg.share,
            hidden=cfg.mlp_hidden,
            mlp_activation=cfg.mlp_activation,
            output_combine=cfg.output_combine,
            seed=cfg.seed,
        )
        for name, tensor in params.named().items():
            tensor.data = np.array(self.tensors[name])
        return params

    def embedding_table(self, path: str | None = None) -> EmbeddingTable:
        """Rebuild the embedding table this checkpoint was trained with."""
        cfg = self.train_config()
        use_path = path if path is not None else self.config.get("embeddings_path")
        dim = self.config["input_dim"]
        if use_path:
            return EmbeddingTable.from_file(use_path, dim, cfg.seed)
        return EmbeddingTable.fallback_only(dim, cfg.seed)

    # -- binary round trip --------------------------------------------------

    def save(self, path: str) -> None:
        cfg_json = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()
        out = bytearray()
        out += CHECKPOINT_MAGIC
        out += struct.pack("<I", CHECKPOINT_VERSION)
        out += struct.pack("<I", len(cfg_json))
        out += cfg_json
        out += hashlib.sha256(cfg_json).digest()
        out += struct.pack("<Q", self.step)
        out += struct.pack("<d", self.best_f1)
        out += struct.pack("<I", len(self.tensors))
        for name, arr in self.tensors.items():
            nb = name.encode()
            out += struct.pack("<H", len(nb))
            out += nb
            code = 0 if arr.dtype == np.float64 else 1
            out += struct.pack("<B", code)
            out += struct.pack("<B", arr.ndim)
            for extent in arr.shape:
                out += struct.pack("<Q", extent)
            dtype = "<f8" if code == 0 else "<f4"
            out += np.ascontiguousarray(arr, dtype=dtype).tobytes()
        with open(path, "wb") as fh:
            fh.write(bytes(out))

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as fh:
            blob = fh.read()
        off = 0

        def take(n):
            nonlocal off
            piece = blob[off : off + n]
            if len(piece) != n:
                raise ValueError(f"truncated checkpoint file {path}")
            off += n
            return piece

        if take(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", take(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", take(4))
        cfg_json = take(cfg_len)
        digest = take(32)
        if hashlib.sha256(cfg_json).digest() != digest:
            raise ValueError(f"config digest mismatch in {path}")
        config = json.loads(cfg_json.decode())
        (step,) = struct.unpack("<Q", take(8))
        (best_f1,) = struct.unpack("<d", take(8))
        (count,) = struct.unpack("<I", take(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(2))
            name = take(name_len).decode()
            (code,) = struct.unpack("<B", take(1))
            (rank,) = struct.unpack("<B", take(1))
            shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
            dtype = np.dtype("<f8" if code == 0 else "<f4")
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(take(n * dtype.itemsize), dtype=dtype).reshape(shape)
            tensors[name] = np.array(arr)
        return cls(config, tensors, step, best_f1)
