"""Command-line entry point.

Commands: pretrain, train-phase1, train-phase2, invert, edit,
interpolate, bench, stats, diffmap, directions, gradcheck, dump-config.
Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness
flows from the config seed (overridable with --seed), so identical
argv + config + seed reproduce identical artifacts.

Config resolution order: built-in defaults, then the config echo
embedded in the newest-stage checkpoint passed to the command, then
--config, then repeated --set key=value, then --seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from ganinv import gradcheck
from ganinv.archive import archive_read, archive_write, decode_text, encode_text
from ganinv.config import Config, ConfigError, apply_pair, dump_config, load_config, parse_config
from ganinv.generator import generator_hash
from ganinv.metrics import metrics
from ganinv.pipeline import (
    BENCH_STRATEGIES,
    Direction,
    InversionPipeline,
    InversionResult,
    aggregate_residual_stats,
    bench,
    difference_map,
    find_directions,
    mean_difference_map,
    residual_stats,
)
from ganinv.ppm import read_ppm, write_pgm, write_ppm
from ganinv.training import (
    build_training_data,
    load_checkpoint,
    load_frozen_generator,
    pretrain_gan,
    train_phase1,
    train_phase2,
)

COMMANDS = (
    "pretrain",
    "train-phase1",
    "train-phase2",
    "invert",
    "edit",
    "interpolate",
    "bench",
    "stats",
    "diffmap",
    "directions",
    "gradcheck",
    "dump-config",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int, help="override train.seed")


def _resolve_config(args, checkpoint_path=None) -> Config:
    cfg = Config()
    if checkpoint_path:
        echo = load_checkpoint(checkpoint_path).config_text
        if echo:
            cfg = parse_config(echo, cfg)
    if args.config:
        cfg = load_config(args.config, cfg)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set needs key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        cfg = apply_pair(cfg, key, raw)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg.validate()


def _load_pipeline(args) -> tuple[Config, InversionPipeline]:
    cfg = _resolve_config(args, checkpoint_path=args.phase2)
    gen = load_frozen_generator(args.generator, cfg)
    ck1 = load_checkpoint(args.phase1)
    ck2 = load_checkpoint(args.phase2)
    for ck, path in ((ck1, args.phase1), (ck2, args.phase2)):
        if ck.generator_hash != generator_hash(gen):
            raise ValueError(f"{path} was trained against a different generator")
    e1 = {k: v for k, v in ck1.params.items() if k.startswith("e1.")}
    e2 = {k: v for k, v in ck2.params.items() if k.startswith("e2.")}
    hyper = {k: v for k, v in ck2.params.items() if k.startswith("hyper.")}
    return cfg, InversionPipeline(cfg, gen, e1, e2, hyper)


def _model_flags(p):
    p.add_argument("--generator", required=True, help="pretrain checkpoint (frozen generator)")
    p.add_argument("--phase1", required=True, help="phase-1 checkpoint (content encoder)")
    p.add_argument("--phase2", required=True, help="phase-2 checkpoint (appearance encoder + hypernetworks)")


def save_result(path, result: InversionResult) -> None:
    tensors = {
        "w": result.w.w,
        "x_hat": result.x_hat,
        "x_hat_w": result.x_hat_w,
        "meta/genhash": encode_text(result.generator_hash),
    }
    for i, delta in enumerate(result.residuals, start=1):
        tensors[f"delta/{i}"] = delta
    archive_write(path, tensors)


def load_result(path) -> InversionResult:
    from ganinv.generator import ContentCode

    tensors = archive_read(path)
    gen_hash = decode_text(tensors["meta/genhash"])
    deltas = []
    i = 1
    while f"delta/{i}" in tensors:
        deltas.append(tensors[f"delta/{i}"])
        i += 1
    return InversionResult(
        w=ContentCode(w=tensors["w"], generator_hash=gen_hash),
        residuals=tuple(deltas),
        x_hat_w=tensors["x_hat_w"],
        x_hat=tensors["x_hat"],
        seconds={},
        generator_hash=gen_hash,
    )


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def _build_parser() -> _Parser:
    root = _Parser(prog="ganinv", description=__doc__, add_help=True)
    sub = root.add_subparsers(dest="command")

    p = sub.add_parser("pretrain", help="adversarially pretrain and freeze the toy generator")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--resume")

    p = sub.add_parser("train-phase1", help="train the content encoder against the frozen generator")
    _add_config_flags(p)
    p.add_argument("--generator", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--resume")
    p.add_argument("--checkpoint-dir")

    p = sub.add_parser("train-phase2", help="train appearance encoder + hypernetworks")
    _add_config_flags(p)
    p.add_argument("--generator", required=True)
    p.add_argument("--phase1", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--resume")
    p.add_argument("--checkpoint-dir")

    p = sub.add_parser("invert", help="invert one image (single forward pass)")
    _add_config_flags(p)
    _model_flags(p)
    p.add_argument("--image", required=True, help="input PPM (P6)")
    p.add_argument("--out", required=True, help="output result archive (.hta)")
    p.add_argument("--ppm-prefix", help="also write <prefix>_xhat.ppm and <prefix>_xhatw.ppm")

    p = sub.add_parser("edit", help="apply a latent direction to an inversion result")
    _add_config_flags(p)
    _model_flags(p)
    p.add_argument("--result", required=True)
    p.add_argument("--directions", required=True, help="direction archive from `directions`")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", required=True, help="output PPM")

    p = sub.add_parser("interpolate", help="blend two inversion results")
    _add_config_flags(p)
    _model_flags(p)
    p.add_argument("--result-a", required=True)
    p.add_argument("--result-b", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--mode", choices=("dual", "latent-only"), default="dual")
    p.add_argument("--out", required=True, help="output PPM")

    p = sub.add_parser("bench", help="benchmark inversion strategies on held-out images")
    _add_config_flags(p)
    _model_flags(p)
    p.add_argument("--strategies", default="phase1-only,full")
    p.add_argument("--limit", type=int, help="cap the held-out set size")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("stats", help="residual-weight statistics of inversion results")
    _add_config_flags(p)
    p.add_argument("results", nargs="+", help="inversion result archives")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("diffmap", help="difference map |x_hat - x_hat_w| of inversion results")
    _add_config_flags(p)
    p.add_argument("results", nargs="+", help="inversion result archives (maps are averaged)")
    p.add_argument("--out-pgm", required=True)
    p.add_argument("--out-archive")

    p = sub.add_parser("directions", help="PCA directions over sampled latents")
    _add_config_flags(p)
    p.add_argument("--generator", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--out", required=True, help="output archive")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    _add_config_flags(p)
    return root


def run(argv) -> int:
    parser = _build_parser()
    try:
        if not argv or argv[0] in ("-h", "--help"):
            parser.print_help()
            return 0
        if argv[0] not in COMMANDS:
            print(f"unknown command {argv[0]!r}; commands: {', '.join(COMMANDS)}", file=sys.stderr)
            return 1
        args = parser.parse_args(argv)
        return _dispatch(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures are reported, not raised
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "dump-config":
        print(dump_config(_resolve_config(args)), end="")
        return 0

    if cmd == "gradcheck":
        seeds = tuple(range(args.seeds))
        reports = gradcheck.run_primitive_suite(seeds) + gradcheck.run_composite_suite(seeds)
        worst = 0.0
        ok = True
        for r in reports:
            status = "ok" if r.passed else "FAIL"
            print(f"{status}  {r.op_kind:28s} seed {r.seed}  max rel err {r.max_rel_error:.3e}")
            worst = max(worst, r.max_rel_error)
            ok = ok and r.passed
        print(f"{'all passed' if ok else 'FAILURES'}; worst {worst:.3e} (tolerance {gradcheck.TOL})")
        return 0 if ok else 2

    if cmd == "pretrain":
        cfg = _resolve_config(args)
        resume = load_checkpoint(args.resume) if args.resume else None
        pretrain_gan(cfg, args.out, log_path=args.log, resume=resume)
        print(f"wrote {args.out}")
        return 0

    if cmd == "train-phase1":
        cfg = _resolve_config(args)
        gen = load_frozen_generator(args.generator, cfg)
        resume = load_checkpoint(args.resume) if args.resume else None
        train_phase1(cfg, gen, args.out, log_path=args.log, resume=resume, checkpoint_dir=args.checkpoint_dir)
        print(f"wrote {args.out}")
        return 0

    if cmd == "train-phase2":
        cfg = _resolve_config(args)
        gen = load_frozen_generator(args.generator, cfg)
        pre = load_checkpoint(args.generator)
        ck1 = load_checkpoint(args.phase1)
        if ck1.generator_hash != generator_hash(gen):
            raise ValueError("phase-1 checkpoint was trained against a different generator")
        e1 = {k: v for k, v in ck1.params.items() if k.startswith("e1.")}
        disc = {k: v for k, v in pre.params.items() if k.startswith("disc.")}
        resume = load_checkpoint(args.resume) if args.resume else None
        train_phase2(
            cfg, gen, e1, disc, args.out, log_path=args.log, resume=resume, checkpoint_dir=args.checkpoint_dir
        )
        print(f"wrote {args.out}")
        return 0

    if cmd == "invert":
        cfg, pipe = _load_pipeline(args)
        x = read_ppm(args.image)
        result = pipe.invert(x)
        save_result(args.out, result)
        if args.ppm_prefix:
            write_ppm(f"{args.ppm_prefix}_xhat.ppm", result.x_hat)
            write_ppm(f"{args.ppm_prefix}_xhatw.ppm", result.x_hat_w)
        row = metrics(x, result.x_hat, pipe.proxy, sum(result.seconds.values()))
        print("l2,psnr,ms_ssim,lpips_proxy,id_proxy,seconds")
        print(",".join(row.csv_fields()))
        return 0

    if cmd == "edit":
        cfg, pipe = _load_pipeline(args)
        result = load_result(args.result)
        dirs = archive_read(args.directions)
        vectors = dirs["directions"]
        if not 0 <= args.index < vectors.shape[0]:
            raise UsageError(f"--index {args.index} out of range for {vectors.shape[0]} directions")
        direction = Direction(d=vectors[args.index], label=f"pca{args.index}", source="file")
        gamma = cfg.edit_gamma if args.gamma is None else args.gamma
        write_ppm(args.out, pipe.edit(result, direction, gamma))
        print(f"wrote {args.out}")
        return 0

    if cmd == "interpolate":
        cfg, pipe = _load_pipeline(args)
        a, b = load_result(args.result_a), load_result(args.result_b)
        write_ppm(args.out, pipe.interpolate(a, b, args.t, args.mode))
        print(f"wrote {args.out}")
        return 0

    if cmd == "bench":
        cfg, pipe = _load_pipeline(args)
        strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
        unknown = set(strategies) - set(BENCH_STRATEGIES)
        if unknown:
            raise UsageError(f"unknown strategies {sorted(unknown)}; choose from {BENCH_STRATEGIES}")
        _, heldout = build_training_data(cfg, pipe.gen)
        if args.limit:
            heldout = heldout[: args.limit]
        rows = bench(pipe, heldout, strategies)
        header = ("strategy", "l2", "lpips_proxy", "id_proxy", "psnr", "ms_ssim", "seconds")
        _write_csv(args.out, header, [[r[k] for k in header] for r in rows])
        for r in rows:
            print(f"{r['strategy']:22s} l2={r['l2']:.6f} seconds={r['seconds']:.4f}")
        return 0

    if cmd == "stats":
        cfg = _resolve_config(args)
        per_image = []
        for path in args.results:
            result = load_result(path)
            per_image.append(residual_stats(result.residuals, cfg.toy))
        rows = aggregate_residual_stats(per_image)
        _write_csv(
            args.out,
            ("layer", "role", "resolution", "mean_abs"),
            [[r["layer"], r["role"], r["resolution"], f"{r['mean_abs']:.10g}"] for r in rows],
        )
        for r in rows:
            print(f"layer {r['layer']} ({r['role']:5s} @ {r['resolution']:2d}px) mean|delta| = {r['mean_abs']:.3e}")
        return 0

    if cmd == "diffmap":
        _resolve_config(args)
        pairs = []
        for path in args.results:
            result = load_result(path)
            pairs.append((result.x_hat, result.x_hat_w))
        heat = mean_difference_map(pairs)
        write_pgm(args.out_pgm, heat)
        if args.out_archive:
            archive_write(args.out_archive, {"difference_map": heat})
        print(f"wrote {args.out_pgm} (mean {heat.mean():.5f}, max {heat.max():.5f})")
        return 0

    if cmd == "directions":
        cfg = _resolve_config(args)
        gen = load_frozen_generator(args.generator, cfg)
        dirs, eigvals = find_directions(gen, args.k, args.samples, cfg.train.seed, cfg.toy)
        archive_write(
            args.out,
            {
                "directions": np.stack([d.d for d in dirs]),
                "eigenvalues": eigvals,
                "meta/genhash": encode_text(generator_hash(gen)),
            },
        )
        print(f"wrote {args.out} ({args.k} directions, leading eigenvalue {eigvals[0]:.4f})")
        return 0

    raise UsageError(f"unhandled command {cmd!r}")


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()
