"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 a threshold check
failed (``oracle-check``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import checks
from .config import RunConfig
from .errors import AmbientError, ConfigError
from .evaluation import denoiser_mse_grid, memorization_attack, sliced_wasserstein2
from .files import (load_checkpoint, load_dataset, save_checkpoint, save_dataset,
                    write_report)
from .oracle import sample_prior
from .sampler import DETERMINISTIC, STOCHASTIC, generate
from .schedule import with_nature_time
from .trainer import STREAM_DATA, STREAM_EVAL, NoisyDataset, make_dataset, stream, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="run-config file (key = value)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; may repeat")
    p.add_argument("--seed", type=int, help="override every seed key")


def _sampling_flags(p):
    p.add_argument("--steps", type=int, help="reverse steps")
    p.add_argument("--sampler", choices=("sde", "ddim"), help="stochastic or DDIM steps")
    p.add_argument("--stop-time", type=float, help="stop the chain at this time")
    p.add_argument("--n", type=int, help="number of samples")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ambientdiff", description="Diffusion training from noisy data.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("make-dataset", help="write a noisy dataset drawn from the mixture")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--clean", action="store_true",
                   help="store clean draws (baseline training only)")

    p = sub.add_parser("train", help="run phase 1 and optional phase 2 training")
    _common(p)
    p.add_argument("--data", help="dataset file; defaults to data.path or a fresh draw")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--metrics", help="append JSON-lines metrics here")

    p = sub.add_parser("sample", help="generate samples into a dataset file")
    _common(p)
    _sampling_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--early-stop", action="store_true",
                   help="stop at the nature level and jump to the denoised estimate")

    p = sub.add_parser("eval-denoiser", help="denoiser MSE against the oracle")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--csv", help="write the CSV table here instead of stdout")

    p = sub.add_parser("eval-dist", help="sliced W2 between samples and a reference")
    _common(p)
    p.add_argument("--samples", required=True, help="dataset file of generated samples")
    p.add_argument("--reference", help="dataset file; defaults to fresh mixture draws")
    p.add_argument("--n", type=int, help="fresh reference draws")

    p = sub.add_parser("attack", help="memorisation attack by posterior sampling")
    _common(p)
    _sampling_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", required=True, help="dataset file with the points to attack")
    p.add_argument("--sigma-attack", type=float)
    p.add_argument("--n-per-point", type=int)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--csv", help="write the histogram CSV here")

    p = sub.add_parser("oracle-check", help="closed-form identity suite")
    _common(p)

    p = sub.add_parser("config-echo", help="print the resolved configuration")
    _common(p)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().with_env()
    changes = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        changes[k.strip()] = v.strip()
    if args.seed is not None:
        changes.update({k: str(args.seed) for k in ("data.seed", "train.seed",
                                                    "sampler.seed", "eval.seed")})
    for flag, key in (("steps", "sampler.n_steps"), ("stop_time", "sampler.t_stop")):
        if getattr(args, flag, None) is not None:
            changes[key] = str(getattr(args, flag))
    if getattr(args, "sampler", None):
        changes["sampler.kind"] = STOCHASTIC if args.sampler == "sde" else DETERMINISTIC
    return cfg.override(changes)


def _mixture(cfg):
    gm = cfg.mixture()
    if gm is None:
        raise ConfigError("this command needs a mixture (mixture.preset)")
    return gm


def cmd_make_dataset(args, cfg):
    gm, sch = _mixture(cfg), cfg.schedule()
    n = args.n if args.n is not None else cfg["data.n"]
    seed = cfg["data.seed"]
    if args.clean:
        ds = NoisyDataset(sample_prior(gm, n, stream(seed, STREAM_DATA)),
                          with_nature_time(sch, 0.0), seed)
    else:
        ds = make_dataset(gm, sch, n, seed)
    save_dataset(args.out, ds)
    print(json.dumps({"path": args.out, "count": ds.count, "dim": ds.dim, "seed": seed}))


def _dataset(args, cfg):
    path = args.data or cfg["data.path"]
    if path:
        return load_dataset(path)
    return make_dataset(_mixture(cfg), cfg.schedule(), cfg["data.n"], cfg["data.seed"])


def cmd_train(args, cfg):
    ds = _dataset(args, cfg)
    tcfg = cfg.train_config()
    resume = load_checkpoint(args.resume) if args.resume else None
    mixture = cfg.mixture()
    metrics = open(args.metrics, "a", encoding="utf-8") if args.metrics else None
    try:
        ckpt = train(tcfg, ds, resume=resume, mixture=mixture, metrics=metrics,
                     on_checkpoint=lambda c: save_checkpoint(args.out, c),
                     net_kwargs=cfg.net_kwargs())
    finally:
        if metrics is not None:
            metrics.close()
    save_checkpoint(args.out, ckpt)
    print(json.dumps({"checkpoint": args.out, "step": ckpt.step,
                      "final_loss": ckpt.history[-1] if ckpt.history else None}))


def cmd_sample(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    sch = ckpt.schedule
    scfg = cfg.sampler_config()
    if args.early_stop:
        scfg = replace(scfg, t_stop=sch.t_n, final_jump=True)
    n = args.n if args.n is not None else cfg["sampler.n"]
    x = generate(ckpt.net, sch, scfg, n, ckpt.net.dim, stream(scfg.seed, STREAM_EVAL))
    save_dataset(args.out, NoisyDataset(x.reshape(n, ckpt.net.dim), sch, scfg.seed))
    print(json.dumps({"path": args.out, "count": n, "t_stop": scfg.t_stop}))


def cmd_eval_denoiser(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    rep = denoiser_mse_grid(ckpt.net, _mixture(cfg), ckpt.schedule, cfg["eval.sigmas"],
                            cfg["eval.n_points"], stream(cfg["eval.seed"], STREAM_EVAL),
                            model_id=args.checkpoint)
    write_report(rep, args.json, args.csv)
    if args.csv is None:
        sys.stdout.write(rep.to_csv())


def cmd_eval_dist(args, cfg):
    samples = load_dataset(args.samples).samples
    if args.reference:
        ref = load_dataset(args.reference).samples
    else:
        n = args.n if args.n is not None else samples.shape[0]
        ref = sample_prior(_mixture(cfg), n, stream(cfg["eval.seed"], STREAM_EVAL, 1))
    value = sliced_wasserstein2(samples, ref, cfg["eval.n_projections"],
                                stream(cfg["eval.seed"], STREAM_EVAL, 2))
    print(json.dumps({"sliced_w2": value, "n_samples": int(samples.shape[0]),
                      "n_reference": int(ref.shape[0]),
                      "n_projections": cfg["eval.n_projections"]}))


def cmd_attack(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    points = load_dataset(args.points).samples
    sigma = args.sigma_attack if args.sigma_attack is not None else cfg["eval.sigma_attack"]
    k = args.n_per_point if args.n_per_point is not None else cfg["eval.n_per_point"]
    rep = memorization_attack(ckpt.net, points, ckpt.schedule, sigma, k, cfg.sampler_config(),
                              stream(cfg["eval.seed"], STREAM_EVAL, 3),
                              model_id=args.checkpoint)
    write_report(rep, args.json, args.csv)
    print(json.dumps(rep.to_dict()["fractions"] | {"sigma_attack": sigma,
                                                   "n_samples": rep.n_samples}))


def cmd_oracle_check(args, cfg):
    results = checks.oracle_suite(rng_seed=cfg["eval.seed"])
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_config_echo(args, cfg):
    sys.stdout.write(cfg.echo())


COMMANDS = {
    "make-dataset": cmd_make_dataset, "train": cmd_train, "sample": cmd_sample,
    "eval-denoiser": cmd_eval_denoiser, "eval-dist": cmd_eval_dist, "attack": cmd_attack,
    "oracle-check": cmd_oracle_check, "config-echo": cmd_config_echo,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_usage().strip())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        cfg = _config(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        code = COMMANDS[args.command](args, cfg)
    except (AmbientError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
