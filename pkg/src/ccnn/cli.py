"""Command-line entry point: train, eval, verify, bench, resolution-test.

Exit codes: 0 success, 1 failed verification, 2 usage or missing data,
3 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench as B
from . import config as C
from . import data as D
from . import kernelgen as KG
from . import model as M
from . import train as TR
from . import verify as V
from .errors import TrainingDiverged, UsageError


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="flat key = value file")
    p.add_argument("--preset", metavar="NAME",
                   help=f"one of {sorted(C.PRESETS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--omega0", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--blocks", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--dim", type=int, choices=(1, 2))
    p.add_argument("--task")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--kernel-points", dest="kernel_points", type=int)
    p.add_argument("--kg-hidden", dest="kg_hidden", type=int)
    p.add_argument("--kg-mode", dest="kg_mode", choices=("gabor", "sine"))


def _run_config(args) -> C.RunConfig:
    flag_names = ["task", "data_dir", "out_dir", "precision", "blocks",
                  "channels", "dim", "kg_hidden", "kg_mode", "omega0",
                  "kernel_points", "lr", "weight_decay", "batch_size",
                  "epochs", "warmup_epochs", "dropout", "seed"]
    flags = {k: getattr(args, k, None) for k in flag_names}
    file_values = C.parse_config_file(args.config) if args.config else None
    return C.merge_config(file_values, args.preset, flags)


def _dtype(cfg: C.RunConfig):
    return np.float64 if cfg.precision == 64 else np.float32


def _load_task(cfg: C.RunConfig):
    try:
        return D.build_task(cfg.task, cfg.data_dir, seed=cfg.seed,
                            perm_seed=cfg.perm_seed)
    except FileNotFoundError as exc:
        raise SystemExit(f"error: {exc}") from None


def _model_config(cfg: C.RunConfig, train_ds, n_classes) -> M.CCNNConfig:
    return M.CCNNConfig(
        n_blocks=cfg.blocks, channels=cfg.channels, d=cfg.dim,
        n_classes=n_classes, in_channels=train_ds.inputs.shape[1],
        input_size=train_ds.inputs.shape[2:], dropout=cfg.dropout,
        kg_hidden=cfg.kg_hidden, omega0=cfg.omega0, seed=cfg.seed,
        kernel_points=cfg.kernel_points or None, kg_mode=cfg.kg_mode)


def _dump_kernels(net: M.CCNN, out_dir):
    for i, block in enumerate(net.blocks):
        grid = KG.make_grid(net.config.d, net.kernel_extents,
                            causal=(net.config.d == 1))
        KG.dump_kernel_csv(block.gen, grid,
                           os.path.join(out_dir, f"block{i}_kernel.csv"))


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_ds, val_ds, test_ds = _load_task(cfg)
    n_classes = max(d.n_classes for d in (train_ds, val_ds, test_ds))
    net = M.build(_model_config(cfg, train_ds, n_classes), dtype=_dtype(cfg))
    total, breakdown = net.param_count()
    print(f"model: {cfg.blocks} blocks x {cfg.channels} channels, "
          f"{total} parameters {breakdown}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    C.echo_config(cfg, os.path.join(cfg.out_dir, "config.txt"))
    tc = TR.TrainConfig(lr_max=cfg.lr, weight_decay=cfg.weight_decay,
                        warmup_epochs=cfg.warmup_epochs, epochs=cfg.epochs,
                        batch_size=cfg.batch_size, dropout=cfg.dropout,
                        omega0=cfg.omega0, seed=cfg.seed)
    try:
        TR.train_loop(net, train_ds, val_ds, tc, out_dir=cfg.out_dir,
                      log=print)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    test_loss, test_acc = TR.evaluate(net, test_ds, cfg.batch_size,
                                      dtype=_dtype(cfg))
    print(f"test: loss {test_loss:.4f} acc {test_acc:.4f}")
    save_path = os.path.join(cfg.out_dir, "last.npz")
    M.save_checkpoint(net, save_path)
    if args.dump_kernels:
        _dump_kernels(net, cfg.out_dir)
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    net = M.load_checkpoint(args.checkpoint)
    train_ds, val_ds, test_ds = _load_task(cfg)
    ds = {"train": train_ds, "val": val_ds, "test": test_ds}[args.split]
    loss, acc = TR.evaluate(net, ds, cfg.batch_size, dtype=net.dtype)
    print(f"{args.split}: loss {loss:.4f} acc {acc:.4f}")
    return 0


def cmd_verify(args) -> int:
    names = list(V.SUITES) if args.suite == "all" else [args.suite]
    checks = V.run_suites(names)
    lines = [c.line() for c in checks]
    for line in lines:
        print(line)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "verify.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if all(c.passed for c in checks) else 1


def cmd_resolution_test(args) -> int:
    cfg = _run_config(args)
    net = M.load_checkpoint(args.checkpoint)
    _, _, test_ds = _load_task(cfg)
    d = net.config.d
    base_loss, base_acc = TR.evaluate(net, test_ds, cfg.batch_size,
                                      dtype=net.dtype)
    print(f"train-resolution accuracy: {base_acc:.4f}")
    if args.factor == 1:
        print(f"test-resolution accuracy:  {base_acc:.4f} (factor 1)")
        return 0
    down = D.downsample(test_ds, args.factor)
    scale = float(args.factor) ** d

    def eval_scaled(kernel_scale):
        hits = total = 0
        from .tensor import no_grad
        with no_grad():
            for x, y in D.iterate_batches(down, cfg.batch_size,
                                          dtype=net.dtype):
                logits = net.forward(x, kernel_scale=kernel_scale)
                hits += (logits.data.argmax(axis=1) == y).sum()
                total += len(y)
        return hits / total

    acc_with = eval_scaled(scale)
    acc_without = eval_scaled(1.0)
    print(f"test-resolution accuracy:  {acc_with:.4f} "
          f"(factor {args.factor}, response scale {scale:g})")
    print(f"without the resolution factor: {acc_without:.4f} (ablation)")
    return 0


def cmd_bench(args) -> int:
    lengths = [int(s) for s in args.lengths.split(",")]
    dims = [int(s) for s in args.dims.split(",")]
    rows = B.run_bench(lengths, dims=dims, channels=args.channels,
                       reps=args.reps, compare_backends=args.compare_backends)
    print(",".join(B.BENCH_HEADER))
    for path_name, length, mean, std in rows:
        print(f"{path_name},{length},{mean:.3f},{std:.3f}")
    if args.out:
        B.write_bench_csv(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccnn",
        description="continuous convolutional networks: train and verify")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a task")
    _add_common(p)
    p.add_argument("--dump-kernels", action="store_true",
                   help="write per-block kernel CSVs next to the checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"),
                   default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run property suites (no data needed)")
    p.add_argument("suite", choices=sorted(V.SUITES) + ["all"])
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("resolution-test",
                       help="evaluate a checkpoint across resolutions")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--factor", type=int, default=2)
    p.set_defaults(fn=cmd_resolution_test)

    p = sub.add_parser("bench", help="time direct vs fft convolution paths")
    p.add_argument("--lengths", default="256,1024,4096",
                   help="comma-separated, ascending")
    p.add_argument("--dims", default="1")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--compare-backends", action="store_true",
                   help="also time the numpy fallback backend")
    p.add_argument("--out", help="write the CSV here as well")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
