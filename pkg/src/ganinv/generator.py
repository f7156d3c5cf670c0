"""Toy style-based generator and discriminator.

The generator mirrors the skip-connection style architecture: a learned
constant input, per-block 3x3 style-modulated convolutions with weight
demodulation, 1x1 torgb projections summed across resolutions through
nearest-neighbour upsampling, and a 2-layer mapping network z -> w.
One main conv plus one torgb per block, so `blocks` resolutions give
N = 2*blocks conv layers; style slot i(j) = j. No noise injection, no
equalized-learning-rate tricks; biases exist but are never refined.

Two mathematically equivalent modulation routes are provided. The
per-sample-kernel route materializes kernels [B,O,C,kh,kw] and supports
residual weight offsets; it is the route behind every public
generate() call, so a zero residual is bitwise indistinguishable from
no residual. The input-modulated route scales activations instead of
kernels and is cheaper when no residuals are in play (Phase I
training); equivalence of the two is property-tested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ganinv import ops
from ganinv.archive import content_hash
from ganinv.config import ToyDims
from ganinv.graph import Graph, ShapeMismatch, Tensor, evaluate
from ganinv.prng import Rng

DEMOD_EPS = 1e-8
LRELU_SLOPE = 0.2


class HashMismatch(Exception):
    pass


@dataclass(frozen=True)
class LayerSpec:
    index: int  # j, 1-based
    role: str  # "main" | "torgb"
    resolution: int
    in_channels: int
    out_channels: int
    kernel: int
    style_index: int  # i(j); equals index in the toy table


@dataclass(frozen=True)
class ContentCode:
    """Latent w plus the hash of the generator it was produced against."""

    w: np.ndarray
    generator_hash: str | None = None


def block_widths(dims: ToyDims) -> list[int]:
    """Feature channels per block: the base up to 8 px, halving after."""
    return [min(dims.channel_base, max(dims.channel_base * 8 // (4 * 2**b), 8)) for b in range(dims.blocks)]


def layer_table(dims: ToyDims) -> tuple[LayerSpec, ...]:
    widths = block_widths(dims)
    specs = []
    for b in range(dims.blocks):
        res = 4 * 2**b
        j = 2 * b + 1
        cin = widths[b - 1] if b > 0 else widths[0]
        specs.append(LayerSpec(j, "main", res, cin, widths[b], 3, j))
        specs.append(LayerSpec(j + 1, "torgb", res, widths[b], 3, 1, j + 1))
    return tuple(specs)


def layer_table_array(dims: ToyDims) -> np.ndarray:
    """LayerSpec table as a numeric tensor for serialization."""
    rows = []
    for s in layer_table(dims):
        rows.append(
            [s.index, 0 if s.role == "main" else 1, s.resolution, s.in_channels, s.out_channels, s.kernel, s.style_index]
        )
    return np.array(rows, dtype=np.float64)


def check_layer_table(dims: ToyDims, arr: np.ndarray) -> None:
    expected = layer_table_array(dims)
    if arr.shape != expected.shape or not np.array_equal(arr, expected):
        raise HashMismatch("serialized layer table does not match configured dimensions")


def init_generator(dims: ToyDims, rng: Rng) -> dict[str, np.ndarray]:
    p = {}
    c = block_widths(dims)[0]
    p["gen.const"] = rng.normal((c, 4, 4))
    zw = dims.z_dim
    p["gen.map.fc1.weight"] = rng.normal((zw, zw)) / np.sqrt(zw)
    p["gen.map.fc1.bias"] = np.zeros(zw)
    p["gen.map.fc2.weight"] = rng.normal((zw, dims.latent_dim)) / np.sqrt(zw)
    p["gen.map.fc2.bias"] = np.zeros(dims.latent_dim)
    for s in layer_table(dims):
        fan_in = s.in_channels * s.kernel**2
        p[f"gen.conv{s.index}.weight"] = rng.normal(
            (s.out_channels, s.in_channels, s.kernel, s.kernel)
        ) / np.sqrt(fan_in)
        p[f"gen.conv{s.index}.bias"] = np.zeros(s.out_channels)
        p[f"gen.affine{s.index}.weight"] = rng.normal((dims.latent_dim, s.in_channels)) / np.sqrt(
            dims.latent_dim
        )
        p[f"gen.affine{s.index}.bias"] = np.ones(s.in_channels)
    return p


def generator_hash(params: dict[str, np.ndarray]) -> str:
    return content_hash({k: v for k, v in params.items() if k.startswith("gen.")})


def build_mapping(g: Graph, P: dict[str, Tensor], z: Tensor) -> Tensor:
    h = ops.leaky_relu(ops.linear(z, P["gen.map.fc1.weight"], P["gen.map.fc1.bias"]), LRELU_SLOPE)
    return ops.linear(h, P["gen.map.fc2.weight"], P["gen.map.fc2.bias"])


def _style(g, P, w, spec) -> Tensor:
    return ops.linear(w, P[f"gen.affine{spec.index}.weight"], P[f"gen.affine{spec.index}.bias"])


def _ps_modulated(g, P, x, w, spec, delta) -> Tensor:
    """Per-sample-kernel modulated conv; delta is [B,O,C,kh,kw] or None."""
    batch = x.shape[0]
    weight = P[f"gen.conv{spec.index}.weight"]
    k = ops.reshape(weight, (1,) + weight.shape)
    if delta is not None:
        k = ops.add(k, delta)
    else:
        k = ops.broadcast_to(k, (batch,) + weight.shape)
    s = _style(g, P, w, spec)
    k = ops.mul(k, ops.reshape(s, (batch, 1, spec.in_channels, 1, 1)))
    if spec.role == "main":
        norm2 = ops.reduce_sum(ops.square(k), axes=(2, 3, 4), keepdims=True)
        k = ops.div(k, ops.sqrt(norm2 + g.const(DEMOD_EPS)))
    return ops.conv2d(x, k, stride=1, pad=spec.kernel // 2)


def _input_modulated(g, P, x, w, spec) -> Tensor:
    """Activation-scaled route, shared kernel; no residual support."""
    batch = x.shape[0]
    weight = P[f"gen.conv{spec.index}.weight"]
    s = _style(g, P, w, spec)
    xm = ops.mul(x, ops.reshape(s, (batch, spec.in_channels, 1, 1)))
    y = ops.conv2d(xm, weight, stride=1, pad=spec.kernel // 2)
    if spec.role == "main":
        per_in = ops.transpose(ops.reduce_sum(ops.square(weight), axes=(2, 3)), (1, 0))  # [C,O]
        denom = ops.sqrt(ops.matmul(ops.square(s), per_in) + g.const(DEMOD_EPS))  # [B,O]
        y = ops.div(y, ops.reshape(denom, (batch, spec.out_channels, 1, 1)))
    return y


def build_generator(
    g: Graph,
    P: dict[str, Tensor],
    w: Tensor,
    dims: ToyDims,
    residuals: list[Tensor] | None = None,
    input_modulated: bool = False,
) -> Tensor:
    """Image [B,3,R,R] from content codes w [B,d_w].

    residuals, when given, must hold one [B,O,C,kh,kw] offset per conv
    layer in table order. input_modulated selects the cheaper
    shared-kernel route and excludes residuals.
    """
    if input_modulated and residuals is not None:
        raise ShapeMismatch("generator", "input-modulated route cannot take residuals")
    table = layer_table(dims)
    if residuals is not None and len(residuals) != len(table):
        raise ShapeMismatch("generator", f"got {len(residuals)} residuals for {len(table)} layers")
    batch = w.shape[0]
    const = P["gen.const"]
    x = ops.broadcast_to(ops.reshape(const, (1,) + const.shape), (batch,) + const.shape)
    rgb = None
    for b in range(dims.blocks):
        main, torgb = table[2 * b], table[2 * b + 1]
        if b > 0:
            x = ops.upsample2x(x)
        for spec in (main, torgb):
            delta = residuals[spec.index - 1] if residuals is not None else None
            if input_modulated:
                y = _input_modulated(g, P, x, w, spec)
            else:
                y = _ps_modulated(g, P, x, w, spec, delta)
            y = ops.conv_bias(y, P[f"gen.conv{spec.index}.bias"])
            if spec.role == "main":
                x = ops.leaky_relu(y, LRELU_SLOPE)
            else:
                rgb = y if rgb is None else ops.add(ops.upsample2x(rgb), y)
    return rgb


def leaves_for(g: Graph, params: dict[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
    return {k: g.leaf(v.shape, k) for k, v in params.items() if k.startswith(prefix)}


def consts_for(g: Graph, params: dict[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
    return {k: g.const(v) for k, v in params.items() if k.startswith(prefix)}


def bindings_for(leaves: dict[str, Tensor], params: dict[str, np.ndarray]) -> dict[Tensor, np.ndarray]:
    return {t: params[k] for k, t in leaves.items()}


def generate(
    params: dict[str, np.ndarray],
    w,
    dims: ToyDims,
    residuals: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Deterministic single forward pass; accepts ContentCode or array.

    Always runs the per-sample-kernel route with an explicit (possibly
    zero) residual term, so generate(params, w) is bitwise equal to
    generate(params, w, zero_residuals).
    """
    if isinstance(w, ContentCode):
        if w.generator_hash is not None and w.generator_hash != generator_hash(params):
            raise HashMismatch(
                f"content code was produced against generator {w.generator_hash}, "
                f"got {generator_hash(params)}"
            )
        w = w.w
    w = np.asarray(w, dtype=np.float64)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[None]
    batch = w.shape[0]
    g = Graph()
    P = consts_for(g, params, "gen.")
    wt = g.leaf(w.shape, "w")
    res_t = None
    if residuals is not None:
        res_t = []
        for spec, r in zip(layer_table(dims), residuals):
            r = np.asarray(r, dtype=np.float64)
            if r.ndim == 4:
                r = np.broadcast_to(r[None], (batch,) + r.shape)
            res_t.append(g.const(r))
    else:
        res_t = [
            g.const(
                np.zeros((batch, s.out_channels, s.in_channels, s.kernel, s.kernel))
            )
            for s in layer_table(dims)
        ]
    img = build_generator(g, P, wt, dims, residuals=res_t)
    out = evaluate(img, {wt: w})
    return out[0] if squeeze else out


def map_latents(params: dict[str, np.ndarray], z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None]
    g = Graph()
    P = consts_for(g, params, "gen.map.")
    zt = g.leaf(z.shape, "z")
    w = build_mapping(g, P, zt)
    out = evaluate(w, {zt: z})
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# discriminator


def _disc_widths(blocks: int) -> list[int]:
    base = [16, 24, 32]
    return [base[min(i, len(base) - 1)] for i in range(blocks)]


def init_discriminator(dims: ToyDims, rng: Rng) -> dict[str, np.ndarray]:
    widths = _disc_widths(dims.blocks)
    p = {}
    prev = 3
    for i, width in enumerate(widths, start=1):
        p[f"disc.conv{i}.weight"] = rng.normal((width, prev, 3, 3)) / np.sqrt(prev * 9)
        p[f"disc.conv{i}.bias"] = np.zeros(width)
        prev = width
    p["disc.head.weight"] = rng.normal((prev, 1)) / np.sqrt(prev)
    p["disc.head.bias"] = np.zeros(1)
    return p


def build_discriminator(g: Graph, P: dict[str, Tensor], img: Tensor) -> Tensor:
    """Strided conv stack to a per-sample logit [B]."""
    x = img
    n_convs = len([k for k in P if k.endswith(".weight") and ".conv" in k])
    for i in range(1, n_convs + 1):
        x = ops.conv2d(x, P[f"disc.conv{i}.weight"], stride=2 if i < n_convs else 1, pad=1)
        x = ops.leaky_relu(ops.conv_bias(x, P[f"disc.conv{i}.bias"]), LRELU_SLOPE)
    pooled = ops.mean(x, axes=(2, 3))
    logit = ops.linear(pooled, P["disc.head.weight"], P["disc.head.bias"])
    return ops.reshape(logit, (img.shape[0],))


def discriminate(params: dict[str, np.ndarray], image: np.ndarray) -> float:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    g = Graph()
    P = consts_for(g, params, "disc.")
    xt = g.leaf(image.shape, "x")
    logit = build_discriminator(g, P, xt)
    out = evaluate(logit, {xt: image})
    return float(out[0]) if out.shape == (1,) else out
