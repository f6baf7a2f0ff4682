"""Leaf transform, span composition functions, and compatibility scoring.

Two span composers are provided. The MLP composer is a two-layer network
over the concatenated child vectors, optionally fed a richer "kernel" input
[h_i; h_j; h_i*h_j; h_i-h_j]. The TreeLSTM composer runs five fused gates
over the children and threads a cell state through the chart. Both share
one gate bias vector with the leaf transform: the same D-dimensional bias
is tiled across every gate block, which is what makes a single "b" well
typed in the leaf transform, the MLP first layer, and the TreeLSTM gates
alike.

A model carries two composer sides: one used when building span vectors
bottom-up, one when building context vectors top-down. With sharing enabled
the second side aliases the first tensor-for-tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import Tensor

INSIDE = "inside"
OUTSIDE = "outside"


@dataclass
class CellValue:
    """Hidden vector for a chart cell, plus a cell state for TreeLSTM."""

    h: Tensor
    c: Tensor | None = None


class ComposeSide:
    """Weights of one composer (inside or outside direction)."""

    def __init__(self, kind: str, tensors: dict[str, Tensor]):
        self.kind = kind
        self.tensors = tensors

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]


class ModelParams:
    """Every learned tensor of the model, keyed by name for checkpointing."""

    def __init__(
        self,
        dim: int,
        input_dim: int,
        compose: str = "mlp",
        kernel: bool = False,
        share: bool = True,
        hidden: int | None = None,
        mlp_activation: str = "tanh",
        output_combine: str = "add",
        seed: int = 0,
    ):
        if compose not in ("mlp", "treelstm"):
            raise ValueError(f"unknown composer {compose!r}")
        if kernel and compose != "mlp":
            raise ValueError("the kernel input is only defined for the mlp composer")
        if mlp_activation not in ("tanh", "none"):
            raise ValueError(f"unknown mlp activation {mlp_activation!r}")
        if output_combine not in ("add", "mul"):
            raise ValueError(f"unknown output combine mode {output_combine!r}")
        self.dim = dim
        self.input_dim = input_dim
        self.compose = compose
        self.kernel = kernel
        self.share = share
        self.hidden = dim if hidden is None else hidden
        self.mlp_activation = mlp_activation
        self.output_combine = output_combine
        self.seed = seed

        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(dim)

        def matrix(*shape):
            return nm.parameter(rng.uniform(-bound, bound, shape))

        self.tensors: dict[str, Tensor] = {}
        self._add("leaf_U", matrix(3 * dim, input_dim))
        self._add("bias", nm.parameter(np.zeros(dim)))

        def make_side(prefix: str) -> ComposeSide:
            ts: dict[str, Tensor] = {}
            if compose == "mlp":
                in_width = 4 * dim if kernel else 2 * dim
                ts["W0"] = self._add(f"{prefix}_W0", matrix(self.hidden, in_width))
                if self.hidden != dim:
                    ts["b0"] = self._add(f"{prefix}_b0", nm.parameter(np.zeros(self.hidden)))
                ts["W1"] = self._add(f"{prefix}_W1", matrix(dim, self.hidden))
                ts["b1"] = self._add(f"{prefix}_b1", nm.parameter(np.zeros(dim)))
            else:
                ts["U"] = self._add(f"{prefix}_U", matrix(5 * dim, 2 * dim))
            ts["S"] = self._add(f"{prefix}_S", matrix(dim, dim))
            return ComposeSide(compose, ts)

        self.alpha = make_side("inside")
        self.beta = self.alpha if share else make_side("outside")
        self._add("root_bias", nm.parameter(rng.uniform(-0.01, 0.01, dim)))

    def _add(self, name: str, t: Tensor) -> Tensor:
        self.tensors[name] = t
        return t

    def side(self, direction: str) -> ComposeSide:
        return self.alpha if direction == INSIDE else self.beta

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def named(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.tensors.items()}

    def views(self) -> "ParamViews":
        return ParamViews(self)

    def config_dict(self) -> dict:
        return {
            "dim": self.dim,
            "input_dim": self.input_dim,
            "compose": self.compose,
            "kernel": self.kernel,
            "share": self.share,
            "hidden": self.hidden,
            "mlp_activation": self.mlp_activation,
            "output_combine": self.output_combine,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelParams":
        return cls(
            dim=cfg["dim"],
            input_dim=cfg["input_dim"],
            compose=cfg["compose"],
            kernel=cfg["kernel"],
            share=cfg["share"],
            hidden=cfg["hidden"],
            mlp_activation=cfg["mlp_activation"],
            output_combine=cfg["output_combine"],
            seed=cfg["seed"],
        )


class ParamViews:
    """Derived graph nodes built once per forward pass.

    The tiled bias vectors are graph nodes (gradients flow back into the
    shared bias through them), so rebuilding them for every one of the
    O(T^3) compositions would bloat the graph for no reason. Build one set
    per pass and reuse the nodes.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        d = params.dim
        b = params.tensors["bias"]
        self.leaf_bias = nm.concat([b, b, b])
        if params.compose == "treelstm":
            gate_bias = nm.concat([b, b, b, b, b])
            offset = np.zeros(5 * d)
            offset[d : 3 * d] = 1.0
            # forget-gate rows get +1 on the inside direction, +0 outside
            self.gate_bias = {
                INSIDE: gate_bias + nm.constant(offset),
                OUTSIDE: gate_bias,
            }
        else:
            self.mlp_bias = {}
            for direction in (INSIDE, OUTSIDE):
                side = params.side(direction)
                self.mlp_bias[direction] = side.tensors.get("b0", b)


def _split_gates(pre: Tensor, dim: int, blocks: int) -> list[Tensor]:
    return [nm.slice_last(pre, i * dim, (i + 1) * dim) for i in range(blocks)]


def _combine(o: Tensor, core: Tensor, mode: str) -> Tensor:
    return o + nm.tanh(core) if mode == "add" else o * nm.tanh(core)


def leaf_transform(v: Tensor, params: ModelParams, views: ParamViews | None = None):
    """Initial cell for a single-token span.

    Returns (CellValue, score) where the score is identically zero.
    Three gate blocks are computed from the input embedding; the first and
    second gate the third's candidate, exactly like a childless TreeLSTM
    step. The cell state is kept only when the model composes with a
    TreeLSTM.
    """
    if v.shape[-1] != params.input_dim:
        raise ValueError(
            f"leaf transform expects input dim {params.input_dim}, got {v.shape[-1]}"
        )
    if views is None:
        views = params.views()
    d = params.dim
    pre = nm.matmul(v, params.tensors["leaf_U"]) + views.leaf_bias
    x_raw, o_raw, u_raw = _split_gates(pre, d, 3)
    x = nm.sigmoid(x_raw)
    o = nm.sigmoid(o_raw)
    u = nm.tanh(u_raw)
    core = x * u
    h = _combine(o, core, params.output_combine)
    c = core if params.compose == "treelstm" else None
    score = nm.constant(np.zeros(v.shape[:-1]))
    return CellValue(h, c), score


def compose_cells(
    left: CellValue,
    right: CellValue,
    params: ModelParams,
    direction: str,
    views: ParamViews | None = None,
) -> CellValue:
    if views is None:
        views = params.views()
    if params.compose == "mlp":
        return compose_mlp(left.h, right.h, params, direction, views)
    return compose_treelstm(left.h, left.c, right.h, right.c, params, direction, views)


def compose_mlp(
    h_i: Tensor,
    h_j: Tensor,
    params: ModelParams,
    direction: str = INSIDE,
    views: ParamViews | None = None,
) -> CellValue:
    """Two affine layers over the (optionally kernelized) pair input."""
    if h_i.shape[-1] != params.dim or h_j.shape[-1] != params.dim:
        raise ValueError("composer inputs must have the model hidden dimension")
    if views is None:
        views = params.views()
    side = params.side(direction)
    inp = mlp_input(h_i, h_j, params.kernel)
    z = nm.matmul(inp, side["W0"]) + views.mlp_bias[direction]
    if params.mlp_activation == "tanh":
        z = nm.tanh(z)
    h = nm.matmul(z, side["W1"]) + side["b1"]
    return CellValue(h, None)


def mlp_input(h_i: Tensor, h_j: Tensor, kernel: bool) -> Tensor:
    if kernel:
        return nm.concat([h_i, h_j, h_i * h_j, h_i - h_j])
    return nm.concat([h_i, h_j])


def compose_treelstm(
    h_i: Tensor,
    c_i: Tensor,
    h_j: Tensor,
    c_j: Tensor,
    params: ModelParams,
    direction: str = INSIDE,
    views: ParamViews | None = None,
) -> CellValue:
    """Binary TreeLSTM step over two child cells.

    Gate order in the fused block is [x, f_i, f_j, o, u]; the two forget
    rows carry a +1 pre-activation offset on the inside direction only.
    """
    d = params.dim
    for t in (h_i, c_i, h_j, c_j):
        if t.shape[-1] != d:
            raise ValueError("composer inputs must have the model hidden dimension")
    if views is None:
        views = params.views()
    side = params.side(direction)
    pre = nm.matmul(nm.concat([h_i, h_j]), side["U"]) + views.gate_bias[direction]
    x_raw, fi_raw, fj_raw, o_raw, u_raw = _split_gates(pre, d, 5)
    x = nm.sigmoid(x_raw)
    f_i = nm.sigmoid(fi_raw)
    f_j = nm.sigmoid(fj_raw)
    o = nm.sigmoid(o_raw)
    u = nm.tanh(u_raw)
    c = c_i * f_i + c_j * f_j + x * u
    h = _combine(o, c, params.output_combine)
    return CellValue(h, c)


def compatibility(u: Tensor, v: Tensor, s: Tensor, score_u, score_v) -> Tensor:
    """Merge score for two adjacent cells: a bilinear form over their
    vectors plus each cell's own accumulated score."""
    return nm.bilinear(u, s, v) + score_u + score_v


def normalize_weights(scores: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    Accumulated span scores grow with tree depth and would overflow a naive
    exp; shifting by the (detached) max leaves the result algebraically
    identical.
    """
    if scores.shape[-1] == 0:
        raise ValueError("cannot normalize an empty score set")
    shifted = scores - nm.constant(nm.max_last(scores))
    e = nm.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
