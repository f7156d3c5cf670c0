"""Content encoder (image -> w) and appearance encoder (image -> h).

Both are plain strided-conv pyramids. The content encoder ends in a
global mean pool and a zero-initialized linear head, so an untrained
model emits the all-zero latent. The appearance encoder shares one
trunk and fans out into one independent 1x1 head per style layer; its
output stacks those heads along a leading layer axis. Fusing the codes
of the input image and the initial reconstruction is channel
concatenation with the input image's features first.
"""

from __future__ import annotations

import numpy as np

from ganinv import ops
from ganinv.config import ToyDims
from ganinv.generator import LRELU_SLOPE, consts_for
from ganinv.graph import Graph, ShapeMismatch, Tensor, evaluate
from ganinv.prng import Rng


def _enc_widths(blocks: int) -> list[int]:
    base = [16, 24, 40, 64]
    return [base[min(i, len(base) - 1)] for i in range(blocks)]


def init_content_encoder(dims: ToyDims, rng: Rng) -> dict[str, np.ndarray]:
    widths = _enc_widths(dims.blocks)
    p = {}
    prev = 3
    for i, width in enumerate(widths, start=1):
        p[f"e1.conv{i}.weight"] = rng.normal((width, prev, 3, 3)) / np.sqrt(prev * 9)
        p[f"e1.conv{i}.bias"] = np.zeros(width)
        prev = width
    # zero init: early outputs sit at the latent origin
    p["e1.head.weight"] = np.zeros((prev, dims.latent_dim))
    p["e1.head.bias"] = np.zeros(dims.latent_dim)
    return p


def build_content_encoder(g: Graph, P: dict[str, Tensor], img: Tensor) -> Tensor:
    x = img
    n_convs = len([k for k in P if k.startswith("e1.conv") and k.endswith(".weight")])
    for i in range(1, n_convs + 1):
        x = ops.conv2d(x, P[f"e1.conv{i}.weight"], stride=2 if i < n_convs else 1, pad=1)
        x = ops.leaky_relu(ops.conv_bias(x, P[f"e1.conv{i}.bias"]), LRELU_SLOPE)
    pooled = ops.mean(x, axes=(2, 3))
    return ops.linear(pooled, P["e1.head.weight"], P["e1.head.bias"])


def init_appearance_encoder(dims: ToyDims, rng: Rng) -> dict[str, np.ndarray]:
    widths = _enc_widths(dims.blocks)
    p = {}
    prev = 3
    for i, width in enumerate(widths, start=1):
        p[f"e2.trunk.conv{i}.weight"] = rng.normal((width, prev, 3, 3)) / np.sqrt(prev * 9)
        p[f"e2.trunk.conv{i}.bias"] = np.zeros(width)
        prev = width
    for layer in range(1, dims.num_layers + 1):
        p[f"e2.head{layer}.weight"] = rng.normal((dims.app_channels, prev)) / np.sqrt(prev)
        p[f"e2.head{layer}.bias"] = np.zeros(dims.app_channels)
    return p


def build_appearance_encoder(g: Graph, P: dict[str, Tensor], img: Tensor, dims: ToyDims) -> Tensor:
    """[B,3,R,R] -> appearance half [B, L, C_a, s, s]."""
    x = img
    n_convs = len([k for k in P if k.startswith("e2.trunk.conv") and k.endswith(".weight")])
    for i in range(1, n_convs + 1):
        x = ops.conv2d(x, P[f"e2.trunk.conv{i}.weight"], stride=2 if i < n_convs else 1, pad=1)
        x = ops.leaky_relu(ops.conv_bias(x, P[f"e2.trunk.conv{i}.bias"]), LRELU_SLOPE)
    b, c, s, _ = x.shape
    if s != dims.app_spatial:
        raise ShapeMismatch("e2", f"trunk spatial {s} != configured app_spatial {dims.app_spatial}")
    flat = ops.reshape(x, (b, c, s * s))
    heads = []
    for layer in range(1, dims.num_layers + 1):
        h = ops.matmul(P[f"e2.head{layer}.weight"], flat)  # [B, C_a, s*s]
        h = ops.add(h, ops.reshape(P[f"e2.head{layer}.bias"], (1, dims.app_channels, 1)))
        heads.append(ops.reshape(h, (b, 1, dims.app_channels, s, s)))
    return ops.concat(heads, axis=1)


def fuse(h_x: Tensor, h_xw: Tensor) -> Tensor:
    """Appearance code: channel concat, input-image features first."""
    if h_x.shape != h_xw.shape:
        raise ShapeMismatch("fuse", f"halves differ: {h_x.shape} vs {h_xw.shape}")
    return ops.concat([h_x, h_xw], axis=-3)


def fuse_arrays(h_x: np.ndarray, h_xw: np.ndarray) -> np.ndarray:
    if h_x.shape != h_xw.shape:
        raise ShapeMismatch("fuse", f"halves differ: {h_x.shape} vs {h_xw.shape}")
    return np.concatenate([h_x, h_xw], axis=-3)


def encode_content(params: dict[str, np.ndarray], image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 3
    if squeeze:
        image = image[None]
    g = Graph()
    P = consts_for(g, params, "e1.")
    xt = g.leaf(image.shape, "x")
    w = build_content_encoder(g, P, xt)
    out = evaluate(w, {xt: image})
    return out[0] if squeeze else out


def encode_appearance(params: dict[str, np.ndarray], image: np.ndarray, dims: ToyDims) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 3
    if squeeze:
        image = image[None]
    g = Graph()
    P = consts_for(g, params, "e2.")
    xt = g.leaf(image.shape, "x")
    h = build_appearance_encoder(g, P, xt, dims)
    out = evaluate(h, {xt: image})
    return out[0] if squeeze else out
