"""User-facing inversion pipeline and diagnostics.

InversionPipeline bundles the frozen generator with the trained
encoders and hypernetworks, prebuilds two graphs (analysis: image ->
content code, initial reconstruction, appearance code, residuals;
generation: content code + residuals -> image) and exposes invert,
edit, dual interpolation, residual statistics, difference maps, PCA
directions, and the benchmark harness.

Exactness contracts: the stored images of an InversionResult regenerate
bitwise from (w, residuals); edit with magnitude 0 and interpolation
endpoints reproduce the stored reconstruction bitwise, because exactly
one generation graph serves every rendering path.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ganinv.config import Config
from ganinv.encoders import build_appearance_encoder, build_content_encoder, fuse
from ganinv.generator import (
    ContentCode,
    HashMismatch,
    build_generator,
    consts_for,
    generator_hash,
    layer_table,
    map_latents,
)
from ganinv.graph import Graph, ShapeMismatch, backward, evaluate
from ganinv.hypernet import build_residuals
from ganinv.losses import build_rec_loss, init_proxy
from ganinv.metrics import MetricsRow, metrics
from ganinv.optim import AdamState, adam_step
from ganinv.prng import Rng


@dataclass(frozen=True)
class InversionResult:
    """Everything editing and interpolation need for one image."""

    w: ContentCode
    residuals: tuple[np.ndarray, ...]
    x_hat_w: np.ndarray
    x_hat: np.ndarray
    seconds: dict[str, float]
    generator_hash: str


@dataclass(frozen=True)
class Direction:
    d: np.ndarray  # unit vector in latent space
    label: str
    source: str  # "pca" | "file"

    def __post_init__(self):
        n = float(np.linalg.norm(self.d))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"direction {self.label!r} has norm {n}, want 1")


class InversionPipeline:
    def __init__(self, cfg: Config, gen_params, e1_params, e2_params, hyper_params, proxy_params=None):
        self.cfg = cfg
        self.dims = cfg.toy
        self.gen = dict(gen_params)
        self.hash = generator_hash(self.gen)
        self.proxy = proxy_params if proxy_params is not None else init_proxy(cfg.loss.proxy_seed)
        self._e1 = dict(e1_params)
        self._e2 = dict(e2_params)
        self._hyper = dict(hyper_params)
        self._build_analysis()
        self._build_generation()

    def _build_analysis(self):
        dims = self.dims
        g = Graph()
        e1 = consts_for(g, self._e1, "e1.")
        e2 = consts_for(g, self._e2, "e2.")
        hyper = consts_for(g, self._hyper, "hyper.")
        gen = consts_for(g, self.gen, "gen.")
        self._ax = g.leaf((1, 3, dims.resolution, dims.resolution), "x")
        self._a_w = build_content_encoder(g, e1, self._ax)
        zeros = [
            g.const(np.zeros((1, s.out_channels, s.in_channels, s.kernel, s.kernel)))
            for s in layer_table(dims)
        ]
        self._a_xw = build_generator(g, gen, self._a_w, dims, residuals=zeros)
        if self.cfg.hyper.fusion == "fused":
            h = fuse(
                build_appearance_encoder(g, e2, self._ax, dims),
                build_appearance_encoder(g, e2, self._a_xw, dims),
            )
        else:
            h = build_appearance_encoder(g, e2, self._ax, dims)
        self._a_deltas = build_residuals(g, hyper, h, dims, self.cfg.hyper)
        self._a_graph = g

    def _build_generation(self):
        dims = self.dims
        g = Graph()
        gen = consts_for(g, self.gen, "gen.")
        self._g_w = g.leaf((1, dims.latent_dim), "w")
        self._g_deltas = [
            g.leaf((1, s.out_channels, s.in_channels, s.kernel, s.kernel), f"delta{s.index}")
            for s in layer_table(dims)
        ]
        self._g_img = build_generator(g, gen, self._g_w, dims, residuals=self._g_deltas)
        self._g_graph = g

    # -- core ---------------------------------------------------------------

    def render(self, w: np.ndarray, residuals=None) -> np.ndarray:
        """G(w, theta + delta) through the shared generation graph."""
        table = layer_table(self.dims)
        if residuals is None:
            residuals = [
                np.zeros((s.out_channels, s.in_channels, s.kernel, s.kernel)) for s in table
            ]
        bindings = {self._g_w: np.asarray(w, dtype=np.float64).reshape(1, -1)}
        for leaf, val in zip(self._g_deltas, residuals):
            val = np.asarray(val, dtype=np.float64)
            bindings[leaf] = val[None] if val.ndim == 4 else val
        return evaluate(self._g_img, bindings)[0]

    def mean_latent(self, n: int = 1024, seed: int = 7) -> np.ndarray:
        rng = Rng(seed)
        z = rng.normal((n, self.dims.z_dim))
        return map_latents(self.gen, z).mean(axis=0)

    def invert(self, x: np.ndarray) -> InversionResult:
        """Single forward pass: no per-image optimization anywhere."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (3, self.dims.resolution, self.dims.resolution):
            raise ShapeMismatch("invert", f"image shape {x.shape}")
        cache: dict = {}
        bindings = {self._ax: x[None]}
        seconds = {}
        t0 = time.perf_counter()
        w = evaluate(self._a_w, bindings, cache=cache)[0]
        seconds["encode"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        x_hat_w = evaluate(self._a_xw, bindings, cache=cache)[0]
        seconds["initial_reconstruction"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        deltas = [d[0] for d in evaluate(self._a_deltas, bindings, cache=cache)]
        seconds["predict_residuals"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        x_hat = self.render(w, deltas)
        seconds["refined_reconstruction"] = time.perf_counter() - t0
        return InversionResult(
            w=ContentCode(w=w, generator_hash=self.hash),
            residuals=tuple(deltas),
            x_hat_w=x_hat_w,
            x_hat=x_hat,
            seconds=seconds,
            generator_hash=self.hash,
        )

    def _check_result(self, result: InversionResult):
        if result.generator_hash != self.hash:
            raise HashMismatch("inversion result belongs to a different generator")

    def edit(self, result: InversionResult, direction: Direction, gamma: float) -> np.ndarray:
        """Render w + gamma*d through the refined generator."""
        self._check_result(result)
        w_edit = result.w.w + gamma * direction.d
        return self.render(w_edit, result.residuals)

    def interpolate(self, a: InversionResult, b: InversionResult, t: float, mode: str = "dual") -> np.ndarray:
        """Blend two inversions; dual mode lerps residual weights too."""
        self._check_result(a)
        self._check_result(b)
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t must be in [0, 1], got {t}")
        if mode not in ("dual", "latent-only"):
            raise ValueError(f"unknown interpolation mode {mode!r}")
        w_t = (1.0 - t) * a.w.w + t * b.w.w
        if mode == "latent-only":
            return self.render(w_t, None)
        deltas = [(1.0 - t) * da + t * db for da, db in zip(a.residuals, b.residuals)]
        return self.render(w_t, deltas)


# ---------------------------------------------------------------------------
# diagnostics


def residual_stats(residuals, dims) -> list[dict]:
    """Mean absolute weight change per layer, tagged by role."""
    table = layer_table(dims)
    if len(residuals) != len(table):
        raise ShapeMismatch("residual_stats", f"{len(residuals)} residuals for {len(table)} layers")
    rows = []
    for spec, delta in zip(table, residuals):
        rows.append(
            {
                "layer": spec.index,
                "role": spec.role,
                "resolution": spec.resolution,
                "mean_abs": float(np.mean(np.abs(delta))),
            }
        )
    return rows


def aggregate_residual_stats(per_image_rows: list[list[dict]]) -> list[dict]:
    """Average mean_abs across images, row-aligned by layer."""
    if not per_image_rows:
        return []
    out = []
    for i, row in enumerate(per_image_rows[0]):
        vals = [rows[i]["mean_abs"] for rows in per_image_rows]
        merged = dict(row)
        merged["mean_abs"] = float(np.mean(vals))
        out.append(merged)
    return out


def difference_map(x_hat, x_hat_w) -> np.ndarray:
    """Per-pixel channel mean of |x_hat - x_hat_w| -> [H, W]."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_hat_w = np.asarray(x_hat_w, dtype=np.float64)
    if x_hat.shape != x_hat_w.shape:
        raise ShapeMismatch("difference_map", f"shapes differ: {x_hat.shape} vs {x_hat_w.shape}")
    return np.abs(x_hat - x_hat_w).mean(axis=0)


def mean_difference_map(pairs) -> np.ndarray:
    """Average the per-image maps before grayscale conversion."""
    maps = [difference_map(a, b) for a, b in pairs]
    if not maps:
        raise ValueError("no image pairs")
    return np.mean(maps, axis=0)


def pca_directions(samples: np.ndarray, k: int) -> tuple[list[Direction], np.ndarray]:
    """Top-k unit eigenvectors of the sample covariance, eigenvalues desc.

    Deterministic tie-break: each vector's first nonzero component is
    made positive.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape
    if k > d:
        raise ValueError(f"k={k} exceeds latent dimension {d}")
    centered = samples - samples.mean(axis=0)
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    dirs = []
    for rank, idx in enumerate(order):
        v = eigvecs[:, idx]
        nz = np.nonzero(v)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        dirs.append(Direction(d=v / np.linalg.norm(v), label=f"pca{rank}", source="pca"))
    return dirs, eigvals[order]


def find_directions(gen_params, k: int, n_samples: int, seed: int, dims) -> tuple[list[Direction], np.ndarray]:
    """PCA over mapped latent samples of the frozen generator."""
    rng = Rng(seed)
    z = rng.normal((n_samples, dims.z_dim))
    w = map_latents(gen_params, z)
    return pca_directions(w, k)


# ---------------------------------------------------------------------------
# benchmark harness

BENCH_STRATEGIES = ("phase1-only", "full", "latent-optimization", "per-image-finetune")


class _LatentOptimizer:
    """Gradient descent on w for one image (heavy-inference baseline)."""

    def __init__(self, cfg, gen_params, proxy_params, init_w):
        dims = cfg.toy
        g = Graph()
        gen = consts_for(g, gen_params, "gen.")
        proxy = consts_for(g, proxy_params, "proxy.")
        self.w_leaf = g.leaf((1, dims.latent_dim), "w")
        self.x_leaf = g.leaf((1, 3, dims.resolution, dims.resolution), "x")
        img = build_generator(g, gen, self.w_leaf, dims, input_modulated=True)
        loss, _ = build_rec_loss(g, proxy, self.x_leaf, img, cfg.loss)
        (gw,) = backward(loss, [self.w_leaf])
        self.targets = [loss, gw, img]
        self.steps = cfg.bench.latent_steps
        self.lr = cfg.bench.latent_lr
        self.init_w = init_w

    def run(self, x):
        w = {"w": self.init_w.copy().reshape(1, -1)}
        opt = AdamState.for_params(w, self.lr)
        img = None
        for _ in range(self.steps):
            loss_v, gw_v, img = evaluate(self.targets, {self.w_leaf: w["w"], self.x_leaf: x[None]})
            w = adam_step(opt, w, {"w": gw_v})
        return evaluate(self.targets[2], {self.w_leaf: w["w"], self.x_leaf: x[None]})[0]


class _FinetuneOptimizer:
    """Gradient descent on the conv kernels with w fixed (per image)."""

    def __init__(self, cfg, gen_params, proxy_params):
        dims = cfg.toy
        self.kernel_names = sorted(
            k for k in gen_params if k.startswith("gen.conv") and k.endswith(".weight")
        )
        g = Graph()
        trainable = {k: gen_params[k] for k in self.kernel_names}
        frozen = {k: v for k, v in gen_params.items() if k not in trainable}
        leaves = {k: g.leaf(v.shape, k) for k, v in sorted(trainable.items())}
        P = dict(leaves)
        P.update(consts_for(g, frozen, "gen."))
        proxy = consts_for(g, proxy_params, "proxy.")
        self.w_leaf = g.leaf((1, dims.latent_dim), "w")
        self.x_leaf = g.leaf((1, 3, dims.resolution, dims.resolution), "x")
        img = build_generator(g, P, self.w_leaf, dims, input_modulated=True)
        loss, _ = build_rec_loss(g, proxy, self.x_leaf, img, cfg.loss)
        grads = backward(loss, [leaves[k] for k in self.kernel_names])
        self.leaves = leaves
        self.targets = [loss, img] + grads
        self.base = {k: gen_params[k] for k in self.kernel_names}
        self.steps = cfg.bench.finetune_steps
        self.lr = cfg.bench.finetune_lr

    def run(self, x, w):
        params = {k: v.copy() for k, v in self.base.items()}
        opt = AdamState.for_params(params, self.lr)
        img = None
        for _ in range(self.steps):
            bindings = {self.leaves[k]: params[k] for k in self.kernel_names}
            bindings[self.w_leaf] = w.reshape(1, -1)
            bindings[self.x_leaf] = x[None]
            vals = evaluate(self.targets, bindings)
            img = vals[1]
            params = adam_step(opt, params, dict(zip(self.kernel_names, vals[2:])))
        bindings = {self.leaves[k]: params[k] for k in self.kernel_names}
        bindings[self.w_leaf] = w.reshape(1, -1)
        bindings[self.x_leaf] = x[None]
        return evaluate(self.targets[1], bindings)


def bench(pipeline: InversionPipeline, test_images, strategies) -> list[dict]:
    """Mean metrics plus wall-clock seconds per image, per strategy."""
    unknown = set(strategies) - set(BENCH_STRATEGIES)
    if unknown:
        raise ValueError(f"unknown bench strategies: {sorted(unknown)}")
    cfg = pipeline.cfg
    rows = []
    test_images = list(test_images)
    for strategy in strategies:
        per_image = []
        if not test_images:
            continue
        lat = fin = None
        for x in test_images:
            t0 = time.perf_counter()
            if strategy == "phase1-only":
                result = pipeline.invert(x)
                out = result.x_hat_w
            elif strategy == "full":
                result = pipeline.invert(x)
                out = result.x_hat
            elif strategy == "latent-optimization":
                if lat is None:
                    mean_w = pipeline.mean_latent()
                    lat = _LatentOptimizer(cfg, pipeline.gen, pipeline.proxy, mean_w)
                out = lat.run(x)
            else:  # per-image-finetune
                if fin is None:
                    fin = _FinetuneOptimizer(cfg, pipeline.gen, pipeline.proxy)
                w = pipeline.invert(x).w.w
                out = fin.run(x, w)[0]
            seconds = time.perf_counter() - t0
            per_image.append(metrics(x, out, pipeline.proxy, seconds))
        rows.append(_mean_row(strategy, per_image))
    return rows


def _mean_row(strategy, rows: list[MetricsRow]) -> dict:
    finite_psnr = [r.psnr for r in rows if math.isfinite(r.psnr)]
    return {
        "strategy": strategy,
        "l2": float(np.mean([r.l2 for r in rows])),
        "lpips_proxy": float(np.mean([r.lpips_proxy for r in rows])),
        "id_proxy": float(np.mean([r.id_proxy for r in rows])),
        "psnr": float(np.mean(finite_psnr)) if finite_psnr else float("inf"),
        "ms_ssim": float(np.mean([r.ms_ssim for r in rows])),
        "seconds": float(np.mean([r.seconds for r in rows])),
    }


