"""Command-line entry point: ``freqmamba {train,sample,eval,filter,serialize}``.

Exit codes: 0 on success, 1 when a command fails at run time, 2 for usage
errors (unknown flags, missing arguments).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import curves
from .autodiff import CheckpointError, TrainingError, load_checkpoint
from .diffusion import DataTransform, make_schedule, sample, save_model, train, write_loss_csv
from .geometry import normalize_unit_cube
from .io import (SHAPE_KINDS, ConfigError, RunConfig, XyzFormatError, read_xyz, stack_clouds,
                 synth_dataset, write_ply, write_xyz)
from .metrics import EXACT_EMD_MAX, evaluate
from .spectral import build_graph, frequency_order, split_counts

log = logging.getLogger("freqmamba")

ORDER_CHOICES = ("z", "z-trans", "hilbert", "hilbert-trans")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqmamba", description="Point-cloud diffusion toolkit.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a synthetic shape dataset")
    t.add_argument("--config", required=True, help="key = value run configuration")
    t.add_argument("--shape", choices=SHAPE_KINDS, help="override the configured shape")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.add_argument("--out", default="model.pcdk", help="checkpoint path")
    t.add_argument("--loss-csv", help="loss curve path (default: checkpoint path with .csv)")

    s = sub.add_parser("sample", help="draw clouds from a trained checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--ply", action="store_true", help="also write binary PLY files")

    e = sub.add_parser("eval", help="score generated clouds against reference clouds")
    e.add_argument("--gen-dir", required=True)
    e.add_argument("--ref-dir", required=True)
    e.add_argument("--exact-emd-max", type=int, default=EXACT_EMD_MAX)
    e.add_argument("--csv", help="write the CSV report here instead of stdout")

    f = sub.add_parser("filter", help="high-pass frequency scores and top-point selection")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--k", type=int, default=32)
    f.add_argument("--top", type=int, help="number of highest-scoring points to keep")
    f.add_argument("--m", type=int, help="latent budget; with --zeta gives the frequency share")
    f.add_argument("--zeta", type=float, default=0.875)
    f.add_argument("--out", help="output XYZ (default stdout)")

    z = sub.add_parser("serialize", help="order points along a space-filling curve (rows: index code x y z)")
    z.add_argument("--in", dest="inp", required=True)
    z.add_argument("--order", choices=ORDER_CHOICES, default="z")
    z.add_argument("--bits", type=int, default=6)
    z.add_argument("--out", help="output XYZ (default stdout)")
    return p


def _emit(table: np.ndarray, out) -> None:
    if out:
        np.savetxt(out, table, fmt="%.17g")
    else:
        np.savetxt(sys.stdout, table, fmt="%.17g")


def _xyz_dir(path) -> np.ndarray:
    files = sorted(Path(path).glob("*.xyz"))
    if not files:
        raise FileNotFoundError(f"no .xyz files in {path}")
    return stack_clouds([read_xyz(f) for f in files])


def load_model(path):
    """Read a checkpoint written by ``train``: (params, RunConfig, DataTransform)."""
    from .autodiff import Tensor
    tensors, text = load_checkpoint(path)
    if not text:
        raise CheckpointError(f"{path}: checkpoint carries no run configuration")
    cfg = RunConfig.from_text(text)
    transform = DataTransform.from_tensors(tensors)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in tensors.items() if not k.startswith("data.")}
    return params, cfg, transform


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    over = {k: v for k, v in (("shape", args.shape), ("epochs", args.epochs)) if v is not None}
    cfg = cfg.with_overrides(**over) if over else cfg
    data = synth_dataset(cfg.shape, cfg.dataset_size, cfg.N, seed=cfg.seed, as_array=True)
    out = Path(args.out)
    res = train(data, cfg.model_config(), make_schedule(cfg.T), epochs=cfg.epochs, batch=cfg.batch,
                seed=cfg.seed, lr=cfg.lr, lr_decay=cfg.lr_decay, decay_every=cfg.decay_every,
                weight_decay=cfg.weight_decay, checkpoint_every=cfg.checkpoint_every,
                checkpoint_path=out, config_text=cfg.to_text())
    save_model(out, res.params, res.transform, cfg.to_text())
    write_loss_csv(args.loss_csv or out.with_suffix(".csv"), res.losses)
    print(f"trained {cfg.epochs} epochs: loss {res.losses[0]:.6g} -> {res.losses[-1]:.6g}; wrote {out}")
    return 0


def cmd_sample(args) -> int:
    if args.count < 1:
        raise ValueError("--count must be >= 1")
    params, cfg, transform = load_model(args.model)
    clouds = sample(params, cfg.model_config(), make_schedule(cfg.T), count=args.count,
                    seed=args.seed, transform=transform)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(clouds):
        write_xyz(c, out / f"sample_{i:04d}.xyz")
        if args.ply:
            write_ply(c, out / f"sample_{i:04d}.ply")
    print(f"wrote {len(clouds)} clouds to {out}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate(_xyz_dir(args.gen_dir), _xyz_dir(args.ref_dir), exact_emd_max=args.exact_emd_max)
    sys.stdout.write(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    else:
        sys.stdout.write("\n" + report.to_csv())
    return 0


def cmd_filter(args) -> int:
    coords = read_xyz(args.inp).coords
    if args.top is None and args.m is None:
        raise ValueError("give --top, or --m with --zeta")
    top = args.top if args.top is not None else split_counts(args.m, args.zeta)[0]
    if not 0 <= top <= len(coords):
        raise ValueError(f"--top must lie in [0, {len(coords)}], got {top}")
    k = min(args.k, len(coords) - 1)
    if k < 1:
        raise ValueError("filtering needs at least two points")
    score = frequency_order(coords, build_graph(coords, k))
    keep = score.order[:top]
    _emit(np.column_stack([coords[keep], score.scores[keep]]), args.out)
    return 0


def cmd_serialize(args) -> int:
    coords = read_xyz(args.inp).coords
    unit, _, _ = normalize_unit_cube(coords)
    order = curves.serialize_points(unit, args.order, args.bits)
    perm = order.permutation
    rows = [f"{i} {int(order.codes[i])} {c[0]:.17g} {c[1]:.17g} {c[2]:.17g}\n"
            for i, c in zip(perm, coords[perm])]
    text = "".join(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "filter": cmd_filter, "serialize": cmd_serialize}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ValueError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except (ValueError, OSError, ConfigError, XyzFormatError, CheckpointError, TrainingError,
            RuntimeError) as exc:
        print(f"freqmamba {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
