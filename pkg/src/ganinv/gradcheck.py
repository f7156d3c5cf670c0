"""Finite-difference verification of autodiff gradients.

The oracle is central differences with step 1e-5 in float64 on seeded
standard-normal inputs: the objective is the inner product of an op's
output with a fixed random probe, each input element is perturbed in
both directions, and the autodiff gradient is compared elementwise with
relative error |a - b| / max(|a|, |b|, 1e-8).

Some ops need their inputs conditioned away from non-smooth points
(kinks at 0, sqrt/div domains); conditioners are applied identically on
the autodiff and finite-difference sides, so they change only where the
gradient is probed, never what is compared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ganinv import ops
from ganinv.graph import Graph, backward, evaluate
from ganinv.prng import Rng

FD_STEP = 1e-5
TOL = 1e-5


@dataclass
class GradCheckReport:
    op_kind: str
    shapes: tuple
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOL


def _away_from_zero(x, margin=1e-3):
    return np.where(np.abs(x) < margin, x + 2 * margin, x)


def _positive(x):
    return np.abs(x) + 0.5


@dataclass(frozen=True)
class OpCase:
    """How to exercise one op kind: graph builder plus input handling."""

    build: object  # (graph, leaves) -> output Tensor
    default_shapes: tuple
    conditioners: tuple = ()  # per-input array map or None


def _case_registry() -> dict[str, OpCase]:
    c = {}
    c["matmul"] = OpCase(lambda g, ls: ops.matmul(*ls), ((3, 4), (4, 2)))
    c["matmul-batched"] = OpCase(lambda g, ls: ops.matmul(*ls), ((2, 3, 4), (2, 4, 2)))
    c["matmul-broadcast"] = OpCase(lambda g, ls: ops.matmul(*ls), ((2, 3, 4), (4, 2)))
    c["conv2d"] = OpCase(
        lambda g, ls: ops.conv2d(ls[0], ls[1], stride=1, pad=1), ((2, 3, 5, 5), (4, 3, 3, 3))
    )
    c["conv2d-strided"] = OpCase(
        lambda g, ls: ops.conv2d(ls[0], ls[1], stride=2, pad=1), ((2, 3, 6, 6), (4, 3, 3, 3))
    )
    c["psconv2d"] = OpCase(
        lambda g, ls: ops.conv2d(ls[0], ls[1], stride=1, pad=1), ((2, 3, 5, 5), (2, 4, 3, 3, 3))
    )
    c["conv2d-dx"] = OpCase(
        lambda g, ls: ops.conv2d_dx(ls[0], ls[1], 2, 1, 6, 6), ((2, 4, 3, 3), (4, 3, 3, 3))
    )
    c["conv2d-dk"] = OpCase(
        lambda g, ls: ops.conv2d_dk(ls[0], ls[1], 2, 1, 3, 3, per_sample=False),
        ((2, 3, 6, 6), (2, 4, 3, 3)),
    )
    c["psconv2d-dx"] = OpCase(
        lambda g, ls: ops.conv2d_dx(ls[0], ls[1], 2, 1, 6, 6), ((2, 4, 3, 3), (2, 4, 3, 3, 3))
    )
    c["psconv2d-dk"] = OpCase(
        lambda g, ls: ops.conv2d_dk(ls[0], ls[1], 2, 1, 3, 3, per_sample=True),
        ((2, 3, 6, 6), (2, 4, 3, 3)),
    )
    c["modulated-conv2d"] = OpCase(
        lambda g, ls: ops.modulated_conv2d(ls[0], ls[1], ls[2], demodulate=True),
        ((2, 3, 5, 5), (4, 3, 3, 3), (3,)),
    )
    c["modulated-conv2d-nodemod"] = OpCase(
        lambda g, ls: ops.modulated_conv2d(ls[0], ls[1], ls[2], demodulate=False),
        ((2, 3, 5, 5), (4, 3, 3, 3), (3,)),
    )
    c["leaky-relu"] = OpCase(
        lambda g, ls: ops.leaky_relu(ls[0], 0.2), ((8,),), (_away_from_zero,)
    )
    c["relu"] = OpCase(lambda g, ls: ops.leaky_relu(ls[0], 0.0), ((8,),), (_away_from_zero,))
    c["upsample-nearest-2x"] = OpCase(lambda g, ls: ops.upsample2x(ls[0]), ((2, 3, 4, 4),))
    c["concat"] = OpCase(lambda g, ls: ops.concat(ls, axis=1), ((2, 3), (2, 2), (2, 4)))
    c["reduce-mean"] = OpCase(lambda g, ls: ops.mean(ls[0], axes=(1,)), ((3, 5),))
    c["reduce-sum"] = OpCase(lambda g, ls: ops.reduce_sum(ls[0], axes=(0, 2)), ((3, 4, 2),))
    c["square"] = OpCase(lambda g, ls: ops.square(ls[0]), ((4, 3),))
    c["sqrt"] = OpCase(lambda g, ls: ops.sqrt(ls[0]), ((6,),), (_positive,))
    c["softplus"] = OpCase(lambda g, ls: ops.softplus(ls[0]), ((6,),))
    c["sigmoid"] = OpCase(lambda g, ls: ops.sigmoid(ls[0]), ((6,),))
    c["reshape"] = OpCase(lambda g, ls: ops.reshape(ls[0], (3, 2, 2)), ((2, 6),))
    c["transpose"] = OpCase(lambda g, ls: ops.transpose(ls[0], (1, 2, 0)), ((2, 3, 4),))
    c["slice"] = OpCase(lambda g, ls: ops.slice_axis(ls[0], 1, 1, 3), ((2, 5),))
    c["pad"] = OpCase(lambda g, ls: ops.pad_axis(ls[0], 0, 2, 1), ((3, 2),))
    c["broadcast-add"] = OpCase(lambda g, ls: ops.add(*ls), ((2, 3, 4), (3, 1)))
    c["broadcast-mul"] = OpCase(lambda g, ls: ops.mul(*ls), ((2, 3, 4), (4,)))
    c["broadcast-to"] = OpCase(lambda g, ls: ops.broadcast_to(ls[0], (4, 3, 2)), ((3, 1),))
    c["div"] = OpCase(lambda g, ls: ops.div(*ls), ((3, 4), (4,)), (None, _positive))
    c["cosine"] = OpCase(lambda g, ls: ops.cosine(*ls), ((3, 5), (3, 5)))
    return c


OP_CASES = _case_registry()


def check_builder(
    build, shapes, seed, conditioners=(), wrt=None, h=FD_STEP, max_elements=None, min_grad=0.0
):
    """Finite-difference check of a graph builder's gradients.

    build(graph, leaves) must return one output Tensor. Returns the max
    relative error over all checked input elements. `wrt` selects which
    input indices to differentiate (default: all); `max_elements` caps
    the checked coordinates per input with a deterministic stride (used
    by the composite suite, where inputs are whole parameter sets).

    `min_grad` skips coordinates whose analytic and finite-difference
    values both sit below it. Differences of a deep float64 objective
    deviate from the real-arithmetic derivative by a few 1e-8 absolute
    (the float-realized function has a slightly different slope), so a
    fixed 1e-5 step cannot certify near-cancelling gradient components
    of a multi-term loss to 1e-5 relative. Cases that enable this are
    paired with single-term cases checked unconditionally, where the
    same coordinates carry full-strength gradients.
    """
    rng = Rng(seed)
    arrays = []
    for i, shape in enumerate(shapes):
        a = rng.normal(shape)
        cond = conditioners[i] if i < len(conditioners) else None
        arrays.append(cond(a) if cond else a)
    g = Graph()
    leaves = [g.leaf(a.shape, f"in{i}") for i, a in enumerate(arrays)]
    out = build(g, leaves)
    probe = g.const(rng.normal(out.shape))
    f = ops.reduce_sum(ops.mul(out, probe))
    wrt = list(range(len(leaves))) if wrt is None else list(wrt)
    grads = backward(f, [leaves[i] for i in wrt])
    bindings = dict(zip(leaves, arrays))
    analytic = evaluate(grads, bindings)

    # Central differences are only valid where the objective is smooth:
    # a probe whose +/-h points straddle an activation kink or a sign()
    # jump measures the wrong slope. Track the branch pattern of every
    # kinked op between the two evaluations and skip coordinates whose
    # pattern flips (the analytic gradient is still checked everywhere
    # the oracle itself is trustworthy).
    kink_inputs = _kink_inputs(g, f)

    def objective(vals):
        res = evaluate([f] + kink_inputs, dict(zip(leaves, vals)))
        return float(res[0]), [v >= 0 for v in res[1:]]

    max_err = 0.0
    for slot, gi in zip(wrt, analytic):
        base = arrays[slot]
        if max_elements is None or base.size <= max_elements:
            indices = range(base.size)
        else:
            stride = base.size // max_elements
            indices = range(seed % stride, base.size, stride)
        bumped = [a.copy() for a in arrays]
        for idx in indices:
            saved = bumped[slot].flat[idx]
            bumped[slot].flat[idx] = saved + h
            up, masks_up = objective(bumped)
            bumped[slot].flat[idx] = saved - h
            dn, masks_dn = objective(bumped)
            bumped[slot].flat[idx] = saved
            if any(not np.array_equal(mu, md) for mu, md in zip(masks_up, masks_dn)):
                continue
            fd = (up - dn) / (2 * h)
            a = float(gi.flat[idx])
            if max(abs(a), abs(fd)) < min_grad:
                continue
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            max_err = max(max_err, err)
    return max_err


_KINK_KINDS = {"leaky_relu": 0, "heaviside": 0, "sign": 0, "lrelu_bwd": 1}


def _kink_inputs(graph, f):
    """Tensors whose sign pattern decides non-smooth branches under f."""
    anc = set()
    stack = [f.nid]
    while stack:
        nid = stack.pop()
        if nid in anc:
            continue
        anc.add(nid)
        stack.extend(graph.nodes[nid].inputs)
    seen = set()
    for nid in sorted(anc):
        node = graph.nodes[nid]
        slot = _KINK_KINDS.get(node.kind)
        if slot is not None:
            seen.add(node.inputs[slot])
    from ganinv.graph import Tensor

    return [Tensor(graph, nid) for nid in sorted(seen)]


def grad_check(op_kind: str, input_shapes=None, seed: int = 0) -> GradCheckReport:
    """Check one registered op kind against the finite-difference oracle."""
    case = OP_CASES.get(op_kind)
    if case is None:
        raise KeyError(f"unknown op kind for grad_check: {op_kind!r}")
    shapes = tuple(tuple(s) for s in (input_shapes or case.default_shapes))
    err = check_builder(case.build, shapes, seed, case.conditioners)
    return GradCheckReport(op_kind, shapes, seed, err)


def run_primitive_suite(seeds=(0, 1, 2, 3, 4)) -> list[GradCheckReport]:
    """Every registered op case over several seeds."""
    reports = []
    for kind in sorted(OP_CASES):
        for seed in seeds:
            reports.append(grad_check(kind, None, seed))
    return reports


# ---------------------------------------------------------------------------
# composite suite: whole submodels and losses at reduced dimensions


def _reduced_setup():
    from ganinv.config import Config, HyperConfig, ToyDims

    dims = ToyDims(resolution=8, blocks=2, channel_base=8, latent_dim=8, z_dim=8, app_channels=4, app_spatial=4)
    hyper = HyperConfig(D=4, F=8)
    cfg = Config(toy=dims, hyper=hyper)
    return cfg


def _param_case(init, build_from, extra_shapes, seed):
    """Check a model builder: leaves are [extra inputs..., params...]."""
    params = init()
    names = sorted(params)
    shapes = list(extra_shapes) + [params[n].shape for n in names]

    def build(g, leaves):
        P = dict(zip(names, leaves[len(extra_shapes) :]))
        return build_from(g, P, leaves[: len(extra_shapes)])

    return check_builder(build, shapes, seed, max_elements=24)


def composite_cases() -> dict[str, object]:
    """Name -> callable(seed) -> max rel error, on reduced dimensions."""
    from dataclasses import replace

    from ganinv import encoders, generator, hypernet, losses

    cfg = _reduced_setup()
    dims, hyper = cfg.toy, cfg.hyper
    r = dims.resolution
    img = (2, 3, r, r)
    table = generator.layer_table(dims)

    def content_encoder(seed):
        return _param_case(
            lambda: encoders.init_content_encoder(dims, Rng(9)),
            lambda g, P, ins: encoders.build_content_encoder(g, P, ins[0]),
            [img],
            seed,
        )

    def appearance_encoder(seed):
        return _param_case(
            lambda: encoders.init_appearance_encoder(dims, Rng(9)),
            lambda g, P, ins: encoders.build_appearance_encoder(g, P, ins[0], dims),
            [img],
            seed,
        )

    def hyper_layer(seed):
        spec = table[0]
        return _param_case(
            lambda: hypernet.init_hypernetworks(dims, hyper, Rng(9)),
            lambda g, P, ins: hypernet.build_hyper_layer(g, P, ins[0], spec, hyper),
            [(2, 2 * dims.app_channels, dims.app_spatial, dims.app_spatial)],
            seed,
        )

    def generator_ps(seed):
        def build(g, P, ins):
            deltas = [
                g.const(Rng(seed ^ (7 + s.index)).normal((2, s.out_channels, s.in_channels, s.kernel, s.kernel)) * 0.1)
                for s in table
            ]
            return generator.build_generator(g, P, ins[0], dims, residuals=deltas)

        return _param_case(lambda: generator.init_generator(dims, Rng(9)), build, [(2, dims.latent_dim)], seed)

    def generator_input_mod(seed):
        return _param_case(
            lambda: generator.init_generator(dims, Rng(9)),
            lambda g, P, ins: generator.build_generator(g, P, ins[0], dims, input_modulated=True),
            [(2, dims.latent_dim)],
            seed,
        )

    def discriminator(seed):
        return _param_case(
            lambda: generator.init_discriminator(dims, Rng(9)),
            lambda g, P, ins: generator.build_discriminator(g, P, ins[0]),
            [img],
            seed,
        )

    def rec_loss_term(weights):
        proxy = losses.init_proxy(5)
        names = sorted(proxy)

        def case(seed):
            def build(g, leaves):
                P = dict(zip(names, leaves[2:]))
                total, _ = losses.build_rec_loss(g, P, leaves[0], leaves[1], weights)
                return total

            shapes = [img, img] + [proxy[n].shape for n in names]
            multi = sum(1 for v in (weights.lambda_pixel, weights.lambda_perc, weights.lambda_id) if v) > 1
            return check_builder(build, shapes, seed, max_elements=24, min_grad=1e-2 if multi else 0.0)

        return case

    def r1_penalty(seed):
        # pure double backprop: d/dtheta of (gamma/2)|grad_x D(x)|^2,
        # differentiating through the emitted image-gradient nodes
        dp = generator.init_discriminator(dims, Rng(9))
        names = sorted(dp)

        def build(g, leaves):
            P = dict(zip(names, leaves[1:]))
            logits = generator.build_discriminator(g, P, leaves[0])
            return losses.build_r1_penalty(leaves[0], logits, gamma=10.0)

        shapes = [img] + [dp[n].shape for n in names]
        return check_builder(build, shapes, seed, wrt=range(1, 1 + len(names)), max_elements=24)

    def d_loss_case(with_r1):
        dp = generator.init_discriminator(dims, Rng(9))
        names = sorted(dp)

        def case(seed):
            def build(g, leaves):
                P = dict(zip(names, leaves[2:]))
                real, fake = leaves[0], leaves[1]
                real_logits = generator.build_discriminator(g, P, real)
                fake_logits = generator.build_discriminator(g, P, fake)
                r1 = losses.build_r1_penalty(real, real_logits, gamma=10.0) if with_r1 else None
                return losses.build_d_loss(real_logits, fake_logits, r1)

            shapes = [img, img] + [dp[n].shape for n in names]
            return check_builder(
                build, shapes, seed, wrt=range(2, 2 + len(names)), max_elements=24,
                min_grad=1e-2 if with_r1 else 0.0,
            )

        return case

    def adv_loss(seed):
        return check_builder(lambda g, ls: ops.softplus(ops.scale(ls[0], -1.0)), [(6,)], seed)

    return {
        "composite:content-encoder": content_encoder,
        "composite:appearance-encoder": appearance_encoder,
        "composite:hyper-layer": hyper_layer,
        "composite:generator-per-sample": generator_ps,
        "composite:generator-input-mod": generator_input_mod,
        "composite:discriminator": discriminator,
        "composite:rec-loss": rec_loss_term(cfg.loss),
        "composite:rec-loss-pixel": rec_loss_term(replace(cfg.loss, lambda_perc=0.0, lambda_id=0.0)),
        "composite:rec-loss-perc": rec_loss_term(replace(cfg.loss, lambda_pixel=0.0, lambda_id=0.0)),
        "composite:rec-loss-id": rec_loss_term(replace(cfg.loss, lambda_pixel=0.0, lambda_perc=0.0)),
        "composite:r1-penalty": r1_penalty,
        "composite:d-loss": d_loss_case(False),
        "composite:d-loss-r1": d_loss_case(True),
        "composite:adv-loss": adv_loss,
    }


def run_composite_suite(seeds=(0, 1, 2, 3, 4)) -> list[GradCheckReport]:
    reports = []
    for name, fn in sorted(composite_cases().items()):
        for seed in seeds:
            reports.append(GradCheckReport(name, (), seed, fn(seed)))
    return reports
