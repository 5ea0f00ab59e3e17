"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 numeric error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import ArrayDataset, ImageDataset, ingest, normalize, synthetic_images
from .errors import ConfigError, GanError
from .gradcheck import PRESETS, run_suite
from .latent import LatentSpec, compare_truncation, emit_grid, validate_bound
from .models import build_discriminator, build_generator
from .training import make_checkpoint, restore_checkpoint, train, truncate_loss_log

log = logging.getLogger("megagan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dataset(cfg: RunConfig):
    if cfg.synthetic_images is not None:
        pix = synthetic_images(cfg.synthetic_images, cfg.resolution, seed=cfg.train.seed)
        return ArrayDataset(normalize(pix).transpose(0, 3, 1, 2))
    manifest = ingest(cfg.dataset_path, cfg.resolution)
    for path, why in manifest.skipped:
        log.warning("skipped %s: %s", path, why)
    return ImageDataset(manifest)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    dataset = _dataset(cfg)
    log_path = cfg.loss_log_path
    if args.resume:
        G, D, state = restore_checkpoint(load_checkpoint(args.resume), cfg.train)
        if G.spec.target_resolution != cfg.resolution:
            raise ConfigError(
                f"checkpoint resolution {G.spec.target_resolution} does not match model.resolution {cfg.resolution}"
            )
        truncate_loss_log(log_path, state.step)
        log.info("resuming from step %d", state.step)
    else:
        G = build_generator(cfg.resolution, cfg.latent_dim, cfg.width_multiplier, cfg.precision, seed=cfg.train.seed)
        D = build_discriminator(cfg.resolution, cfg.width_multiplier, cfg.precision, seed=cfg.train.seed + 1)
        state = None
        log_path.unlink(missing_ok=True)
    log.info("G: %d params, D: %d params, batch size %d", G.num_params, D.num_params, cfg.train.batch_size)
    snapshot = cfg.snapshot()

    def checkpoint(st):
        ck = make_checkpoint(G, D, st, snapshot)
        save_checkpoint(ckpt_dir / f"ckpt_{st.step:06d}.ganf", ck)
        save_checkpoint(ckpt_dir / "latest.ganf", ck)

    t0 = time.time()
    state = train(G, D, dataset, cfg.train, state=state, log_path=log_path, checkpoint_fn=checkpoint)
    last = state.loss_history[-1] if state.loss_history else None
    print(f"trained to step {state.step} in {time.time() - t0:.1f}s; guard {state.guard}")
    if last:
        print(f"final d_loss={last[1]:.4f} g_loss={last[2]:.4f}; loss log {log_path}")
    return 0


def _load_generator(path):
    G, _, _ = restore_checkpoint(load_checkpoint(path))
    return G


def cmd_sample(args) -> int:
    c = validate_bound(args.truncation)
    G = _load_generator(args.checkpoint)
    spec = LatentSpec(dim=G.spec.latent_dim, bound=c, seed=args.seed)
    grid = emit_grid(G, spec, args.rows, args.cols, args.out)
    print(f"wrote {args.rows}x{args.cols} grid ({grid.shape[1]}x{grid.shape[0]} px) at bound {c:g} to {args.out}")
    return 0


def cmd_compare_truncation(args) -> int:
    c1, c2 = validate_bound(args.c1), validate_bound(args.c2)
    if c1 <= c2:
        raise ConfigError(f"--c1 must be greater than --c2 (got {c1} <= {c2})")
    G = _load_generator(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = compare_truncation(G, c1, c2, args.n, seed=args.seed, out_dir=out)
    for s in report.stats:
        print(f"bound {s.bound:g}: pixel_variance={s.pixel_variance:.6f} mean_pairwise_distance={s.mean_pairwise_distance:.4f}")
    print(f"grids and stats.csv written to {out}")
    return 0


def cmd_grad_check(args) -> int:
    results = run_suite(args.preset)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  max_rel_err={r.max_error:.3e}  tol={r.tolerance:.0e}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return 2
    return 0


def cmd_dataset_scan(args) -> int:
    manifest = ingest(args.dir, args.resolution)
    for e in manifest.entries:
        print(f"{e.path}\t{e.width}x{e.height}\t{'upscaled' if e.upscaled else 'native'}")
    for path, why in manifest.skipped:
        print(f"skipped {path}: {why}")
    print(f"{len(manifest)} images, {manifest.undersized_fraction:.1%} smaller than {args.resolution}px")
    if args.manifest_out:
        manifest.to_csv(args.manifest_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="megagan", description="Resolution-scalable DCGAN training and sampling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train G and D from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", metavar="CKPT")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="write a grid of samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--truncation", type=float, default=1.0)
    s.add_argument("--rows", type=int, default=4)
    s.add_argument("--cols", type=int, default=4)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("compare-truncation", help="sample grids under two latent bounds and compare them")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--c1", type=float, default=1.0)
    c.add_argument("--c2", type=float, default=0.5)
    c.add_argument("--n", type=int, default=64)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_compare_truncation)

    g = sub.add_parser("grad-check", help="finite-difference check of every layer's backward pass")
    g.add_argument("--preset", default="default", choices=PRESETS)
    g.set_defaults(func=cmd_grad_check)

    d = sub.add_parser("dataset-scan", help="list a dataset directory and its undersized fraction")
    d.add_argument("--dir", required=True)
    d.add_argument("--resolution", type=int, required=True)
    d.add_argument("--manifest-out")
    d.set_defaults(func=cmd_dataset_scan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GanError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
