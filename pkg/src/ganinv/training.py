"""Training loops: GAN pretraining, Phase I, and staged Phase II.

Every loop builds its computation graphs once and re-binds leaves per
iteration, which keeps the Python overhead per step at dictionary
lookups. Determinism contract: single-threaded runs with the same
config and seed produce bitwise-identical checkpoints, and resuming
from a checkpoint matches an uninterrupted run exactly — parameters,
Adam moments, iteration counter and PRNG state all ride along.

Phase boundaries are strict. Phase I touches only the content encoder
against the frozen generator (reconstruction loss only). Phase II
freezes the content encoder, trains the appearance encoder and the
hypernetworks with reconstruction loss for `warmup_iters` at the warm
batch size, then adds the adversarial term and alternates one
discriminator step (with the R1 penalty on real batches, every step)
per encoder step at the adversarial batch size. The discriminator
starts from the pretraining checkpoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ganinv import ops
from ganinv.archive import archive_read, archive_write, decode_text, encode_text
from ganinv.config import Config, dump_config
from ganinv.dataset import sample_dataset
from ganinv.encoders import (
    build_appearance_encoder,
    build_content_encoder,
    fuse,
    init_appearance_encoder,
    init_content_encoder,
)
from ganinv.generator import (
    HashMismatch,
    build_discriminator,
    build_generator,
    build_mapping,
    check_layer_table,
    generator_hash,
    init_discriminator,
    init_generator,
    layer_table,
    layer_table_array,
)
from ganinv.graph import Graph, backward, evaluate
from ganinv.hypernet import build_residuals, init_hypernetworks
from ganinv.losses import (
    build_adv_loss_g,
    build_d_loss,
    build_enc_loss,
    build_r1_penalty,
    build_rec_loss,
    init_proxy,
)
from ganinv.optim import AdamState, adam_step
from ganinv.prng import Rng


class TrainingDiverged(Exception):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class CheckpointError(Exception):
    pass


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    kind: str  # pretrain | phase1 | phase2
    params: dict[str, np.ndarray]
    opt: dict[str, AdamState] = field(default_factory=dict)
    iteration: int = 0
    prng_state: tuple = ()
    config_text: str = ""
    generator_hash: str | None = None
    layerspec: np.ndarray | None = None


def _prng_to_tensor(state) -> np.ndarray:
    out = []
    for word in state:
        out.append(float(word & 0xFFFFFFFF))
        out.append(float(word >> 32))
    return np.array(out, dtype=np.float64)


def _prng_from_tensor(arr) -> tuple:
    vals = [int(v) for v in np.asarray(arr).ravel()]
    return tuple(vals[2 * i] | (vals[2 * i + 1] << 32) for i in range(len(vals) // 2))


def save_checkpoint(path, ck: Checkpoint) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name in sorted(ck.params):
        tensors[f"param/{name}"] = ck.params[name]
    for opt_name in sorted(ck.opt):
        state = ck.opt[opt_name]
        tensors[f"opt/{opt_name}/step"] = np.array([float(state.step)])
        tensors[f"opt/{opt_name}/lr"] = np.array([state.lr])
        for name in sorted(state.m):
            tensors[f"opt/{opt_name}/m/{name}"] = state.m[name]
            tensors[f"opt/{opt_name}/v/{name}"] = state.v[name]
    tensors["meta/kind"] = encode_text(ck.kind)
    tensors["meta/iteration"] = np.array([float(ck.iteration)])
    if ck.prng_state:
        tensors["meta/prng"] = _prng_to_tensor(ck.prng_state)
    tensors["meta/config"] = encode_text(ck.config_text)
    if ck.generator_hash is not None:
        tensors["meta/genhash"] = encode_text(ck.generator_hash)
    if ck.layerspec is not None:
        tensors["meta/layerspec"] = ck.layerspec
    archive_write(path, tensors)


def load_checkpoint(path) -> Checkpoint:
    tensors = archive_read(path)
    params = {}
    opt: dict[str, AdamState] = {}
    for key, value in tensors.items():
        if key.startswith("param/"):
            params[key[len("param/") :]] = np.asarray(value, dtype=np.float64)
        elif key.startswith("opt/"):
            _, opt_name, rest = key.split("/", 2)
            state = opt.setdefault(opt_name, AdamState(lr=0.0))
            if rest == "step":
                state.step = int(value[0])
            elif rest == "lr":
                state.lr = float(value[0])
            elif rest.startswith("m/"):
                state.m[rest[2:]] = np.asarray(value, dtype=np.float64)
            elif rest.startswith("v/"):
                state.v[rest[2:]] = np.asarray(value, dtype=np.float64)
    ck = Checkpoint(
        kind=decode_text(tensors["meta/kind"]),
        params=params,
        opt=opt,
        iteration=int(tensors["meta/iteration"][0]),
        prng_state=_prng_from_tensor(tensors["meta/prng"]) if "meta/prng" in tensors else (),
        config_text=decode_text(tensors["meta/config"]),
        generator_hash=decode_text(tensors["meta/genhash"]) if "meta/genhash" in tensors else None,
        layerspec=tensors.get("meta/layerspec"),
    )
    return ck


def load_frozen_generator(path, cfg: Config) -> dict[str, np.ndarray]:
    """Load gen.* params and verify content hash plus layer table."""
    ck = load_checkpoint(path)
    gen = {k: v for k, v in ck.params.items() if k.startswith("gen.")}
    if ck.generator_hash is None:
        raise CheckpointError(f"{path} carries no generator hash")
    if generator_hash(gen) != ck.generator_hash:
        raise HashMismatch(f"generator content hash mismatch in {path}")
    if ck.layerspec is not None:
        check_layer_table(cfg.toy, ck.layerspec)
    return gen


# ---------------------------------------------------------------------------
# shared loop plumbing


class CsvLog:
    COLUMNS = ("iteration", "l2", "perc", "id", "adv", "d_loss", "r1")

    def __init__(self, path, append: bool = False):
        self.path = path
        mode = "a" if append and os.path.exists(path) else "w"
        self._f = open(path, mode)
        if mode == "w":
            self._f.write(",".join(self.COLUMNS) + "\n")

    def row(self, iteration, l2, perc, ident, adv=0.0, d_loss=0.0, r1=0.0):
        self._f.write(
            f"{iteration},{l2:.10g},{perc:.10g},{ident:.10g},{adv:.10g},{d_loss:.10g},{r1:.10g}\n"
        )

    def close(self):
        self._f.flush()
        self._f.close()


def _draw_batch(rng: Rng, data: np.ndarray, batch: int) -> np.ndarray:
    idx = [rng.below(data.shape[0]) for _ in range(batch)]
    return data[idx]


def _leaves_sorted(g: Graph, params: dict[str, np.ndarray]) -> dict[str, object]:
    return {name: g.leaf(params[name].shape, name) for name in sorted(params)}


def _consts_sorted(g: Graph, params: dict[str, np.ndarray]) -> dict[str, object]:
    return {name: g.const(params[name]) for name in sorted(params)}


def _bind(leaves, params):
    return {t: params[name] for name, t in leaves.items()}


def build_training_data(cfg: Config, gen_params: dict[str, np.ndarray] | None):
    """(train, heldout) image stacks per the dataset spec.

    self-inversion draws one z stream seeded by data.seed; the first
    train_size latents make the training set, the next heldout_size the
    held-out set.
    """
    n, m = cfg.data.train_size, cfg.data.heldout_size
    r = cfg.toy.resolution
    if cfg.data.kind == "procedural":
        images = sample_dataset(cfg.data.seed, n + m, r)
        return images[:n], images[n:]
    if gen_params is None:
        raise CheckpointError("self-inversion data needs a frozen generator")
    from ganinv.generator import generate, map_latents

    rng = Rng(cfg.data.seed)
    z = rng.normal((n + m, cfg.toy.z_dim))
    w = map_latents(gen_params, z)
    chunks = [generate(gen_params, w[i : i + 32], cfg.toy) for i in range(0, n + m, 32)]
    images = np.concatenate(chunks, axis=0)
    return images[:n], images[n:]


def _zero_residual_consts(g: Graph, dims, batch: int):
    return [
        g.const(np.zeros((batch, s.out_channels, s.in_channels, s.kernel, s.kernel)))
        for s in layer_table(dims)
    ]


# ---------------------------------------------------------------------------
# GAN pretraining


def pretrain_gan(cfg: Config, out_path, log_path=None, resume: Checkpoint | None = None) -> Checkpoint:
    """Adversarial pretraining on procedural images; freezes the result.

    Returns the final checkpoint (generator + discriminator + hash).
    0 iterations returns the seeded initialization unchanged.
    """
    dims = cfg.toy
    batch = cfg.pretrain.batch
    data = sample_dataset(cfg.data.seed, cfg.pretrain.dataset_size, dims.resolution)

    if resume is not None:
        params = dict(resume.params)
        opt_g = resume.opt["gen"]
        opt_d = resume.opt["disc"]
        rng = Rng.from_state(resume.prng_state)
        start = resume.iteration
    else:
        init_rng = Rng(cfg.train.seed)
        params = init_generator(dims, init_rng)
        params.update(init_discriminator(dims, init_rng))
        opt_g = AdamState.for_params({k: v for k, v in params.items() if k.startswith("gen.")}, cfg.train.lr)
        opt_d = AdamState.for_params({k: v for k, v in params.items() if k.startswith("disc.")}, cfg.train.lr)
        rng = Rng(cfg.train.seed ^ 0x5EED)
        start = 0

    # generator-step graph
    gg = Graph()
    gen_leaves = _leaves_sorted(gg, {k: v for k, v in params.items() if k.startswith("gen.")})
    disc_in_g = _leaves_sorted(gg, {k: v for k, v in params.items() if k.startswith("disc.")})
    z_leaf = gg.leaf((batch, dims.z_dim), "z")
    w_sym = build_mapping(gg, gen_leaves, z_leaf)
    fake_sym = build_generator(gg, gen_leaves, w_sym, dims, input_modulated=True)
    g_loss = build_adv_loss_g(build_discriminator(gg, disc_in_g, fake_sym))
    g_grads = backward(g_loss, list(gen_leaves.values()))
    g_targets = [g_loss, fake_sym] + g_grads

    # discriminator-step graph
    dg = Graph()
    disc_leaves = _leaves_sorted(dg, {k: v for k, v in params.items() if k.startswith("disc.")})
    x_real = dg.leaf((batch, 3, dims.resolution, dims.resolution), "real")
    x_fake = dg.leaf((batch, 3, dims.resolution, dims.resolution), "fake")
    real_logits = build_discriminator(dg, disc_leaves, x_real)
    fake_logits = build_discriminator(dg, disc_leaves, x_fake)
    r1 = build_r1_penalty(x_real, real_logits, cfg.loss.r1_gamma)
    d_loss = build_d_loss(real_logits, fake_logits, r1)
    d_grads = backward(d_loss, list(disc_leaves.values()))
    d_targets = [d_loss, r1] + d_grads

    log = CsvLog(log_path, append=resume is not None) if log_path else None
    gen_names = sorted(k for k in params if k.startswith("gen."))
    disc_names = sorted(k for k in params if k.startswith("disc."))
    for it in range(start, cfg.pretrain.iters):
        z = rng.normal((batch, dims.z_dim))
        vals = evaluate(g_targets, {**_bind(gen_leaves, params), **_bind(disc_in_g, params), z_leaf: z})
        g_loss_v, fake_v, g_grad_v = vals[0], vals[1], vals[2:]
        if not np.isfinite(g_loss_v):
            raise TrainingDiverged(it, "generator loss")
        new_gen = adam_step(opt_g, {n: params[n] for n in gen_names}, dict(zip(gen_names, g_grad_v)))
        params.update(new_gen)

        real = _draw_batch(rng, data, batch)
        vals = evaluate(d_targets, {**_bind(disc_leaves, params), x_real: real, x_fake: fake_v})
        d_loss_v, r1_v, d_grad_v = vals[0], vals[1], vals[2:]
        if not np.isfinite(d_loss_v):
            raise TrainingDiverged(it, "discriminator loss")
        new_disc = adam_step(opt_d, {n: params[n] for n in disc_names}, dict(zip(disc_names, d_grad_v)))
        params.update(new_disc)

        if log:
            log.row(it, 0.0, 0.0, 0.0, float(g_loss_v), float(d_loss_v), float(r1_v))
        if cfg.train.log_every and (it + 1) % cfg.train.log_every == 0:
            print(f"pretrain it {it + 1}/{cfg.pretrain.iters} g={g_loss_v:.4f} d={d_loss_v:.4f}")
    if log:
        log.close()

    gen_final = {k: v for k, v in params.items() if k.startswith("gen.")}
    ck = Checkpoint(
        kind="pretrain",
        params=params,
        opt={"gen": opt_g, "disc": opt_d},
        iteration=cfg.pretrain.iters,
        prng_state=rng.state(),
        config_text=dump_config(cfg),
        generator_hash=generator_hash(gen_final),
        layerspec=layer_table_array(dims),
    )
    save_checkpoint(out_path, ck)
    return ck


# ---------------------------------------------------------------------------
# Phase I


def train_phase1(
    cfg: Config,
    gen_params: dict[str, np.ndarray],
    out_path,
    log_path=None,
    resume: Checkpoint | None = None,
    checkpoint_dir=None,
) -> Checkpoint:
    """Content-encoder training against the frozen generator."""
    dims = cfg.toy
    gen_hash = generator_hash(gen_params)
    if resume is not None:
        if resume.generator_hash != gen_hash:
            raise HashMismatch("resume checkpoint was trained against a different generator")
        e1 = {k: v for k, v in resume.params.items() if k.startswith("e1.")}
        opt = resume.opt["enc"]
        rng = Rng.from_state(resume.prng_state)
        start = resume.iteration
    else:
        e1 = init_content_encoder(dims, Rng(cfg.train.seed ^ 0xE1))
        opt = AdamState.for_params(e1, cfg.train.lr)
        rng = Rng(cfg.train.seed ^ 0xBA7C4)
        start = 0

    proxy = init_proxy(cfg.loss.proxy_seed)
    train_x, _ = build_training_data(cfg, gen_params)
    batch = cfg.train.batch_warm

    g = Graph()
    e1_leaves = _leaves_sorted(g, e1)
    gen_consts = _consts_sorted(g, gen_params)
    proxy_consts = _consts_sorted(g, proxy)
    x_leaf = g.leaf((batch, 3, dims.resolution, dims.resolution), "x")
    w_sym = build_content_encoder(g, e1_leaves, x_leaf)
    recon = build_generator(g, gen_consts, w_sym, dims, input_modulated=True)
    rec, parts = build_rec_loss(g, proxy_consts, x_leaf, recon, cfg.loss)
    grads = backward(rec, list(e1_leaves.values()))
    targets = [rec, parts["l2"], parts["perc"], parts["id"]] + grads

    names = sorted(e1)
    log = CsvLog(log_path, append=resume is not None) if log_path else None

    def checkpoint(iteration) -> Checkpoint:
        return Checkpoint(
            kind="phase1",
            params=dict(e1),
            opt={"enc": opt},
            iteration=iteration,
            prng_state=rng.state(),
            config_text=dump_config(cfg),
            generator_hash=gen_hash,
            layerspec=layer_table_array(dims),
        )

    for it in range(start, cfg.train.total_iters):
        x = _draw_batch(rng, train_x, batch)
        vals = evaluate(targets, {**_bind(e1_leaves, e1), x_leaf: x})
        loss_v, l2_v, perc_v, id_v = (float(v) for v in vals[:4])
        if not np.isfinite(loss_v):
            raise TrainingDiverged(it, "reconstruction loss")
        e1 = adam_step(opt, e1, dict(zip(names, vals[4:])))
        if log:
            log.row(it, l2_v, perc_v, id_v)
        if cfg.train.log_every and (it + 1) % cfg.train.log_every == 0:
            print(f"phase1 it {it + 1}/{cfg.train.total_iters} rec={loss_v:.5f} l2={l2_v:.5f}")
        if checkpoint_dir and cfg.train.checkpoint_every and (it + 1) % cfg.train.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"phase1_{it + 1:06d}.hta"), checkpoint(it + 1))
    if log:
        log.close()
    final = checkpoint(cfg.train.total_iters)
    save_checkpoint(out_path, final)
    return final


# ---------------------------------------------------------------------------
# Phase II


def precompute_initial_codes(cfg: Config, gen_params, e1_params, images):
    """Content codes and initial reconstructions for a frozen Phase I.

    The content encoder and the generator are both frozen during Phase
    II, so w and the initial reconstruction are fixed per image; they go
    into the training graph as inputs. The reconstructions come from
    the same per-sample-kernel route (explicit zero residual) as the
    refined pass, keeping the zero-initialization identity bitwise.
    """
    from ganinv.encoders import encode_content
    from ganinv.generator import generate

    dims = cfg.toy
    w = np.concatenate(
        [encode_content(e1_params, images[i : i + 32]) for i in range(0, len(images), 32)]
    )
    xw = np.concatenate(
        [generate(gen_params, w[i : i + 32], dims) for i in range(0, len(images), 32)]
    )
    return w, xw


def _build_phase2_graph(cfg: Config, gen_params, proxy, p2_template, d_template, batch, adversarial):
    """Static encoder-step graph over (x, w, x_hat_w) input leaves."""
    dims = cfg.toy
    g = Graph()
    p2_leaves = _leaves_sorted(g, p2_template)
    d_leaves = _leaves_sorted(g, d_template) if adversarial else {}
    gen_consts = _consts_sorted(g, gen_params)
    proxy_consts = _consts_sorted(g, proxy)
    x_leaf = g.leaf((batch, 3, dims.resolution, dims.resolution), "x")
    w_leaf = g.leaf((batch, dims.latent_dim), "w")
    xw_leaf = g.leaf((batch, 3, dims.resolution, dims.resolution), "xw")

    if cfg.hyper.fusion == "fused":
        both = ops.concat([x_leaf, xw_leaf], axis=0)
        h_both = build_appearance_encoder(g, p2_leaves, both, dims)
        h_x = ops.slice_axis(h_both, 0, 0, batch)
        h_xw = ops.slice_axis(h_both, 0, batch, 2 * batch)
        h_sym = fuse(h_x, h_xw)
    else:
        h_sym = build_appearance_encoder(g, p2_leaves, x_leaf, dims)
    deltas = build_residuals(g, p2_leaves, h_sym, dims, cfg.hyper)
    xhat_sym = build_generator(g, gen_consts, w_leaf, dims, residuals=deltas)
    rec, parts = build_rec_loss(g, proxy_consts, x_leaf, xhat_sym, cfg.loss)
    adv_sym = None
    if adversarial:
        adv_sym = build_adv_loss_g(build_discriminator(g, d_leaves, xhat_sym))
    enc = build_enc_loss(rec, adv_sym, cfg.loss.lambda_adv if adversarial else 0.0)
    grads = backward(enc, list(p2_leaves.values()))
    targets = [enc, parts["l2"], parts["perc"], parts["id"],
               adv_sym if adv_sym is not None else g.const(0.0), xhat_sym] + grads
    return g, p2_leaves, d_leaves, (x_leaf, w_leaf, xw_leaf), targets


def _build_d_graph(cfg: Config, d_template, batch):
    dims = cfg.toy
    g = Graph()
    d_leaves = _leaves_sorted(g, d_template)
    x_real = g.leaf((batch, 3, dims.resolution, dims.resolution), "real")
    x_fake = g.leaf((batch, 3, dims.resolution, dims.resolution), "fake")
    real_logits = build_discriminator(g, d_leaves, x_real)
    fake_logits = build_discriminator(g, d_leaves, x_fake)
    r1 = build_r1_penalty(x_real, real_logits, cfg.loss.r1_gamma)
    d_loss = build_d_loss(real_logits, fake_logits, r1)
    grads = backward(d_loss, list(d_leaves.values()))
    return g, d_leaves, x_real, x_fake, [d_loss, r1] + grads


def train_phase2(
    cfg: Config,
    gen_params: dict[str, np.ndarray],
    e1_params: dict[str, np.ndarray],
    disc_params: dict[str, np.ndarray],
    out_path,
    log_path=None,
    resume: Checkpoint | None = None,
    checkpoint_dir=None,
) -> Checkpoint:
    """Appearance-encoder + hypernetwork training; staged schedule."""
    dims = cfg.toy
    gen_hash = generator_hash(gen_params)
    if resume is not None:
        if resume.generator_hash != gen_hash:
            raise HashMismatch("resume checkpoint was trained against a different generator")
        p2 = {k: v for k, v in resume.params.items() if k.startswith(("e2.", "hyper."))}
        disc = {k: v for k, v in resume.params.items() if k.startswith("disc.")}
        opt_enc = resume.opt["enc"]
        opt_d = resume.opt["disc"]
        rng = Rng.from_state(resume.prng_state)
        start = resume.iteration
    else:
        init_rng = Rng(cfg.train.seed ^ 0xE2)
        p2 = init_appearance_encoder(dims, init_rng)
        p2.update(init_hypernetworks(dims, cfg.hyper, init_rng))
        disc = dict(disc_params)
        opt_enc = AdamState.for_params(p2, cfg.train.lr)
        opt_d = AdamState.for_params(disc, cfg.train.lr)
        rng = Rng(cfg.train.seed ^ 0xBA7C42)
        start = 0

    proxy = init_proxy(cfg.loss.proxy_seed)
    train_x, _ = build_training_data(cfg, gen_params)
    train_w, train_xw = precompute_initial_codes(cfg, gen_params, e1_params, train_x)

    warm = None  # built lazily: (graph pieces) per stage
    adv = None
    d_graph = None
    p2_names = sorted(p2)
    d_names = sorted(disc)
    log = CsvLog(log_path, append=resume is not None) if log_path else None

    def checkpoint(iteration) -> Checkpoint:
        return Checkpoint(
            kind="phase2",
            params={**p2, **disc},
            opt={"enc": opt_enc, "disc": opt_d},
            iteration=iteration,
            prng_state=rng.state(),
            config_text=dump_config(cfg),
            generator_hash=gen_hash,
            layerspec=layer_table_array(dims),
        )

    for it in range(start, cfg.train.total_iters):
        warm_stage = it < cfg.train.warmup_iters
        batch = cfg.train.batch_warm if warm_stage else cfg.train.batch_adv
        if warm_stage:
            if warm is None:
                warm = _build_phase2_graph(cfg, gen_params, proxy, p2, disc, batch, adversarial=False)
            graph, p2_leaves, d_leaves, inputs, targets = warm
        else:
            if adv is None:
                adv = _build_phase2_graph(cfg, gen_params, proxy, p2, disc, batch, adversarial=True)
                d_graph = _build_d_graph(cfg, disc, batch)
            graph, p2_leaves, d_leaves, inputs, targets = adv

        idx = [rng.below(train_x.shape[0]) for _ in range(batch)]
        x_leaf, w_leaf, xw_leaf = inputs
        bindings = {
            **_bind(p2_leaves, p2),
            x_leaf: train_x[idx],
            w_leaf: train_w[idx],
            xw_leaf: train_xw[idx],
        }
        if d_leaves:
            bindings.update(_bind(d_leaves, disc))
        vals = evaluate(targets, bindings)
        enc_v, l2_v, perc_v, id_v, adv_v = (float(v) for v in vals[:5])
        xhat_v = vals[5]
        if not np.isfinite(enc_v):
            raise TrainingDiverged(it, "encoder loss")
        p2 = adam_step(opt_enc, p2, dict(zip(p2_names, vals[6:])))

        d_loss_v = r1_v = 0.0
        if not warm_stage:
            dg, d_step_leaves, x_real, x_fake, d_targets = d_graph
            real = _draw_batch(rng, train_x, batch)
            dvals = evaluate(d_targets, {**_bind(d_step_leaves, disc), x_real: real, x_fake: xhat_v})
            d_loss_v, r1_v = float(dvals[0]), float(dvals[1])
            if not np.isfinite(d_loss_v):
                raise TrainingDiverged(it, "discriminator loss")
            disc = adam_step(opt_d, disc, dict(zip(d_names, dvals[2:])))

        if log:
            log.row(it, l2_v, perc_v, id_v, adv_v, d_loss_v, r1_v)
        if cfg.train.log_every and (it + 1) % cfg.train.log_every == 0:
            print(
                f"phase2 it {it + 1}/{cfg.train.total_iters} enc={enc_v:.5f} l2={l2_v:.5f}"
                + ("" if warm_stage else f" d={d_loss_v:.4f}")
            )
        if checkpoint_dir and cfg.train.checkpoint_every and (it + 1) % cfg.train.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"phase2_{it + 1:06d}.hta"), checkpoint(it + 1))
    if log:
        log.close()
    final = checkpoint(cfg.train.total_iters)
    save_checkpoint(out_path, final)
    return final
