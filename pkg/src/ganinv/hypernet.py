"""Per-layer hypernetworks predicting residual convolution weights.

Each conv layer j of the generator gets its own hypernetwork: a small
feature transformer (two stride-2 3x3 convs with ReLU, run down to 1x1
spatial, flattened to f) followed by a factorized linear mapper

    E = reshape(f A_j, [c_out, D]),  delta_j = reshape(E B_j, kernel shape)

with A_j in R^{F x (c_out D)} and B_j in R^{D x (c_in k^2)}. Two small
matrices instead of one F x (c_out c_in k^2) matrix keep parameter
counts manageable; mapper_param_count() reports both sizes.

B_j starts at zero (A_j random), so residuals are exactly zero at
initialization and refinement starts from the Phase-I reconstruction.
Zeroing both matrices would freeze training: the gradient of each
factor is proportional to the other.
"""

from __future__ import annotations

import numpy as np

from ganinv import ops
from ganinv.config import HyperConfig, ToyDims
from ganinv.generator import HashMismatch, LayerSpec, consts_for, layer_table
from ganinv.graph import Graph, ShapeMismatch, Tensor, evaluate
from ganinv.prng import Rng

FT_WIDTH = 64  # feature-transformer hidden channels


def appearance_channels(dims: ToyDims, hyper: HyperConfig) -> int:
    return dims.app_channels * (2 if hyper.fusion == "fused" else 1)


def init_hypernetworks(dims: ToyDims, hyper: HyperConfig, rng: Rng) -> dict[str, np.ndarray]:
    cin = appearance_channels(dims, hyper)
    p = {}
    for spec in layer_table(dims):
        j = spec.index
        p[f"hyper.{j}.ft.conv1.weight"] = rng.normal((FT_WIDTH, cin, 3, 3)) / np.sqrt(cin * 9)
        p[f"hyper.{j}.ft.conv1.bias"] = np.zeros(FT_WIDTH)
        p[f"hyper.{j}.ft.conv2.weight"] = rng.normal((hyper.F, FT_WIDTH, 3, 3)) / np.sqrt(FT_WIDTH * 9)
        p[f"hyper.{j}.ft.conv2.bias"] = np.zeros(hyper.F)
        p[f"hyper.{j}.A"] = rng.normal((hyper.F, spec.out_channels * hyper.D)) / np.sqrt(hyper.F)
        p[f"hyper.{j}.B"] = np.zeros((hyper.D, spec.in_channels * spec.kernel**2))
    return p


def build_hyper_layer(
    g: Graph, P: dict[str, Tensor], h_slice: Tensor, spec: LayerSpec, hyper: HyperConfig
) -> Tensor:
    """h slice [B, C_h, s, s] -> residual kernel [B, O, C, k, k]."""
    j = spec.index
    batch = h_slice.shape[0]
    x = ops.conv2d(h_slice, P[f"hyper.{j}.ft.conv1.weight"], stride=2, pad=1)
    x = ops.leaky_relu(ops.conv_bias(x, P[f"hyper.{j}.ft.conv1.bias"]), 0.0)
    x = ops.conv2d(x, P[f"hyper.{j}.ft.conv2.weight"], stride=2, pad=1)
    x = ops.leaky_relu(ops.conv_bias(x, P[f"hyper.{j}.ft.conv2.bias"]), 0.0)
    if x.shape[2] != 1 or x.shape[3] != 1:
        raise ShapeMismatch("hypernet", f"feature transformer left spatial {x.shape[2:]}, need 1x1")
    f = ops.reshape(x, (batch, x.shape[1]))
    fa = ops.matmul(f, P[f"hyper.{j}.A"])  # [B, O*D]
    e = ops.reshape(fa, (batch * spec.out_channels, P[f"hyper.{j}.A"].shape[1] // spec.out_channels))
    eb = ops.matmul(e, P[f"hyper.{j}.B"])  # [B*O, C*k*k]
    return ops.reshape(eb, (batch, spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))


def build_residuals(
    g: Graph, P: dict[str, Tensor], h: Tensor, dims: ToyDims, hyper: HyperConfig
) -> list[Tensor]:
    """Appearance code [B, L, C_h, s, s] -> one residual per conv layer."""
    table = layer_table(dims)
    if h.shape[1] != dims.num_layers:
        raise ShapeMismatch("hypernet", f"appearance layers {h.shape[1]} != generator L {dims.num_layers}")
    out = []
    for spec in table:
        i = spec.style_index - 1
        h_slice = ops.reshape(
            ops.slice_axis(h, 1, i, i + 1), (h.shape[0],) + tuple(h.shape[2:])
        )
        out.append(build_hyper_layer(g, P, h_slice, spec, hyper))
    return out


def predict_residuals(
    params: dict[str, np.ndarray], h: np.ndarray, dims: ToyDims, hyper: HyperConfig
) -> list[np.ndarray]:
    """Single appearance code [L, C_h, s, s] -> list of [O,C,k,k] offsets."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 4:
        raise ShapeMismatch("hypernet", f"appearance code must be [L,C,s,s], got {h.shape}")
    g = Graph()
    P = consts_for(g, params, "hyper.")
    ht = g.leaf((1,) + h.shape, "h")
    deltas = build_residuals(g, P, ht, dims, hyper)
    vals = evaluate(deltas, {ht: h[None]})
    return [v[0] for v in vals]


def refine_generator(
    gen_params: dict[str, np.ndarray],
    residuals: list[np.ndarray],
    dims: ToyDims,
    expect_hash: str | None = None,
) -> dict[str, np.ndarray]:
    """theta + delta on conv kernels only; everything else untouched."""
    from ganinv.generator import generator_hash

    if expect_hash is not None and generator_hash(gen_params) != expect_hash:
        raise HashMismatch("residuals were predicted against a different generator")
    table = layer_table(dims)
    if len(residuals) != len(table):
        raise ShapeMismatch("refine", f"{len(residuals)} residuals for {len(table)} layers")
    out = dict(gen_params)
    for spec, delta in zip(table, residuals):
        key = f"gen.conv{spec.index}.weight"
        if gen_params[key].shape != np.shape(delta):
            raise ShapeMismatch(
                "refine", f"layer {spec.index}: residual {np.shape(delta)} vs kernel {gen_params[key].shape}"
            )
        out[key] = gen_params[key] + np.asarray(delta, dtype=np.float64)
    return out


def mapper_param_count(spec: LayerSpec, feat_width: int, hidden_dim: int) -> tuple[int, int]:
    """(factorized, naive) parameter counts of layer j's linear mapper."""
    kk = spec.kernel**2
    factorized = feat_width * spec.out_channels * hidden_dim + hidden_dim * spec.in_channels * kk
    naive = feat_width * spec.out_channels * spec.in_channels * kk
    return factorized, naive
