"""Reconstruction, adversarial, and gradient-penalty losses.

The perceptual and identity terms run through one frozen random conv
stack (seed-pinned, 3 stages plus a pooled deep vector) standing in for
pretrained feature extractors at this scale. Its parameters never
receive gradients; the seed rides along in checkpoints so results
reproduce.

Loss stack:
    rec  = lp * mean((x - y)^2) + lc * sum_s mean((F_s(x) - F_s(y))^2)
           + li * (1 - cos(deep(x), deep(y)))
    advg = mean softplus(-logit_fake)              (non-saturating)
    enc  = rec + la * advg
    d    = mean softplus(-logit_real) + mean softplus(logit_fake) + r1
    r1   = (gamma/2) * mean_b |grad_x D(x)|^2      (real batch only)

The r1 term differentiates the discriminator output with respect to its
input inside the graph, so optimizing d differentiates that gradient a
second time.
"""

from __future__ import annotations

import numpy as np

from ganinv import ops
from ganinv.config import LossWeights, ToyDims
from ganinv.generator import LRELU_SLOPE, consts_for
from ganinv.graph import Graph, ShapeMismatch, Tensor, backward, evaluate
from ganinv.prng import Rng

PROXY_STAGES = ((8, 1), (16, 2), (32, 2))  # (channels, stride)


class DegenerateEmbedding(Exception):
    pass


def init_proxy(seed: int, rng: Rng | None = None) -> dict[str, np.ndarray]:
    """Frozen random feature net; biases keep embeddings off zero."""
    rng = rng or Rng(seed)
    p = {}
    prev = 3
    for i, (width, _) in enumerate(PROXY_STAGES, start=1):
        p[f"proxy.conv{i}.weight"] = rng.normal((width, prev, 3, 3)) / np.sqrt(prev * 9)
        p[f"proxy.conv{i}.bias"] = 0.1 * rng.normal((width,))
        prev = width
    return p


def build_proxy_stages(g: Graph, P: dict[str, Tensor], img: Tensor) -> tuple[list[Tensor], Tensor]:
    """Per-stage feature maps plus the pooled deep vector [B, C]."""
    feats = []
    x = img
    for i, (_, stride) in enumerate(PROXY_STAGES, start=1):
        x = ops.conv2d(x, P[f"proxy.conv{i}.weight"], stride=stride, pad=1)
        x = ops.leaky_relu(ops.conv_bias(x, P[f"proxy.conv{i}.bias"]), LRELU_SLOPE)
        feats.append(x)
    return feats, ops.mean(x, axes=(2, 3))


def build_rec_loss(
    g: Graph,
    proxy: dict[str, Tensor],
    x: Tensor,
    y: Tensor,
    weights: LossWeights,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Weighted reconstruction loss and its unweighted components."""
    if x.shape != y.shape:
        raise ShapeMismatch("rec_loss", f"shapes differ: {x.shape} vs {y.shape}")
    pixel = ops.mean(ops.square(x - y))
    fx, dx = build_proxy_stages(g, proxy, x)
    fy, dy = build_proxy_stages(g, proxy, y)
    perc = None
    for a, b in zip(fx, fy):
        term = ops.mean(ops.square(a - b))
        perc = term if perc is None else perc + term
    ident = ops.mean(g.const(1.0) - ops.cosine(dx, dy, axis=1))
    total = (
        ops.scale(pixel, weights.lambda_pixel)
        + ops.scale(perc, weights.lambda_perc)
        + ops.scale(ident, weights.lambda_id)
    )
    return total, {"l2": pixel, "perc": perc, "id": ident}


def build_adv_loss_g(fake_logits: Tensor) -> Tensor:
    """-E[log sigmoid(logit)] via softplus(-logit), batch mean."""
    return ops.mean(ops.softplus(-fake_logits))


def build_r1_penalty(x_real: Tensor, real_logits: Tensor, gamma: float) -> Tensor:
    """(gamma/2) E[|grad_x D(x)|^2] as further-differentiable nodes."""
    batch = x_real.shape[0]
    total = ops.reduce_sum(real_logits)
    (gx,) = backward(total, [x_real])
    return ops.scale(ops.reduce_sum(ops.square(gx)), gamma / (2.0 * batch))


def build_d_loss(real_logits: Tensor, fake_logits: Tensor, r1: Tensor | None) -> Tensor:
    loss = ops.mean(ops.softplus(-real_logits)) + ops.mean(ops.softplus(fake_logits))
    if r1 is not None:
        loss = loss + r1
    return loss


def build_enc_loss(rec: Tensor, adv: Tensor | None, lambda_adv: float) -> Tensor:
    """rec + lambda_adv * adv; bitwise-equal to rec when the weight is 0."""
    if adv is None or lambda_adv == 0.0:
        return rec
    return rec + ops.scale(adv, lambda_adv)


# ---------------------------------------------------------------------------
# array-level entry points (metrics, tests)


def _proxy_eval(params: dict[str, np.ndarray], image: np.ndarray):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    g = Graph()
    P = consts_for(g, params, "proxy.")
    xt = g.leaf(image.shape, "x")
    feats, deep = build_proxy_stages(g, P, xt)
    vals = evaluate(feats + [deep], {xt: image})
    return vals[:-1], vals[-1]


def perceptual_distance(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    """Summed per-stage mean squared proxy-feature distance."""
    if np.shape(x) != np.shape(y):
        raise ShapeMismatch("perceptual", f"shapes differ: {np.shape(x)} vs {np.shape(y)}")
    fx, _ = _proxy_eval(params, x)
    fy, _ = _proxy_eval(params, y)
    return float(sum(np.mean((a - b) ** 2) for a, b in zip(fx, fy)))


def id_similarity(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    """Cosine of pooled deep features, in [-1, 1]; exact 1.0 for x == y."""
    if np.shape(x) != np.shape(y):
        raise ShapeMismatch("id_similarity", f"shapes differ: {np.shape(x)} vs {np.shape(y)}")
    _, da = _proxy_eval(params, x)
    _, db = _proxy_eval(params, y)
    a, b = da[0], db[0]
    na2, nb2 = float(a @ a), float(b @ b)
    if na2 == 0.0 or nb2 == 0.0:
        raise DegenerateEmbedding("zero-norm proxy embedding")
    dot = float(a @ b)
    return float(np.sign(dot) * np.sqrt(dot * dot / (na2 * nb2)))
