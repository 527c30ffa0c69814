"""Command-line surface: dataset generation, training, evaluation, the
ablation and k-sweep experiments, the 1-D demo, and verification suites.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 verification
failure, 5 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VERIFY = 4
EXIT_DIVERGED = 5


class CliError(Exception):
    def __init__(self, message, code=EXIT_IO):
        super().__init__(message)
        self.code = code


def _parse_config_file(path: str) -> dict:
    """Line-oriented key=value config; '#' starts a comment."""
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}", EXIT_USAGE)
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{ln}: expected key=value", EXIT_USAGE)
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config_file(parser: argparse.ArgumentParser, args: list[str]) -> list[str]:
    """Pull --config out of args and turn file entries into defaults on
    the chosen subcommand's parser; explicit flags still override."""
    if "--config" not in args:
        return args
    i = args.index("--config")
    if i + 1 >= len(args):
        raise CliError("--config needs a path", EXIT_USAGE)
    cfg = _parse_config_file(args[i + 1])
    args = args[:i] + args[i + 2:]
    if not args or args[0] not in parser.subcommands:
        raise CliError("--config requires a subcommand", EXIT_USAGE)
    sub = parser.subcommands[args[0]]
    valid = {a.dest: a for a in sub._actions}
    for key, value in cfg.items():
        if key not in valid:
            raise CliError(f"unknown config key {key!r} for {args[0]}", EXIT_USAGE)
        action = valid[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            parsed = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            parsed = action.type(value)
        else:
            parsed = value
        sub.set_defaults(**{key: parsed})
    return args


def _prepare_out_dir(path: str, force: bool):
    if os.path.exists(path) and os.listdir(path):
        if not force:
            raise CliError(f"output dir {path} exists and is not empty; "
                           f"pass --force to overwrite", EXIT_IO)
    os.makedirs(path, exist_ok=True)


def _echo_config(out_dir: str, ns: argparse.Namespace, command: str):
    lines = [f"command={command}"]
    for key in sorted(vars(ns)):
        if key in ("func", "config"):
            continue
        lines.append(f"{key}={getattr(ns, key)}")
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}") from e


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(ns) -> int:
    from .data import write_dataset

    _prepare_out_dir(ns.out_dir, ns.force)
    _echo_config(ns.out_dir, ns, "gen-data")
    rows = write_dataset(ns.out_dir, ns.seed, ns.n, ns.size,
                         ns.layers if ns.layers > 0 else None)
    print(f"wrote {len(rows)} pairs to {ns.out_dir}")
    return EXIT_OK


def _load_disk_dataset(path: str, augment: bool):
    from .data import AugmentSpec, DiskDataset

    if not os.path.isdir(path):
        raise CliError(f"dataset directory not found: {path}", EXIT_IO)
    try:
        return DiskDataset(path, augment_spec=AugmentSpec() if augment else None)
    except (FileNotFoundError, ValueError) as e:
        raise CliError(f"cannot load dataset: {e}", EXIT_IO)


def cmd_train(ns) -> int:
    from .losses import LossConfig
    from .network import InitSpec, build_network, save_params
    from .trainer import TrainConfig, train

    ds = _load_disk_dataset(ns.data, ns.augment)
    _prepare_out_dir(ns.out, ns.force)
    _echo_config(ns.out, ns, "train")
    net = build_network(ns.variant, ns.k, InitSpec(ns.seed))
    loss_cfg = LossConfig(mode=ns.mode, reg_weight=ns.reg_weight)
    cfg = TrainConfig(optimizer=ns.optimizer, lr=ns.lr, batch_size=ns.batch_size,
                      epochs=ns.epochs, seed=ns.seed, mode=ns.mode,
                      freeze_encoder=ns.freeze_encoder, eval_every=ns.eval_every,
                      augment=ns.augment, loss=loss_cfg,
                      train_size=ns.train_size, val_size=ns.val_size)
    record = train(net, ds, cfg)
    save_params(net, os.path.join(ns.out, "net.smfn"))
    with open(os.path.join(ns.out, "record.json"), "w") as fh:
        fh.write(record.to_json() + "\n")
    with open(os.path.join(ns.out, "timing.txt"), "w") as fh:
        fh.write(f"wall_time_s={record.wall_time_s:.3f}\n")
    print(f"status={record.status} final_val_epe={record.final_val_epe:.6f} "
          f"gt_reads_during_training={record.gt_reads_during_training}")
    if record.status != "ok":
        print("training diverged; see record.json", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(ns) -> int:
    from .data import flo_write
    from .network import CheckpointError, load_params
    from .softmask import MASKED_VARIANTS, head_forward, write_mask_pgms
    from .trainer import evaluate
    from . import autodiff as ad
    from .autodiff import Tensor

    try:
        net = load_params(ns.checkpoint)
    except (OSError, CheckpointError) as e:
        raise CliError(f"cannot load checkpoint: {e}", EXIT_IO)
    ds = _load_disk_dataset(ns.data, augment=False)
    indices = {"val": ds.val_indices, "train": ds.train_indices,
               "all": list(range(len(ds)))}[ns.split]
    if ns.limit:
        indices = indices[:ns.limit]
    mean, per_sample = evaluate(net, ds, indices)
    for idx, epe in zip(indices, per_sample):
        print(f"sample {idx:5d}  epe {epe:.6f}")
    print(f"mean_epe {mean:.6f}  over {len(indices)} samples ({ns.split} split)")

    if ns.dump_flows:
        os.makedirs(ns.dump_flows, exist_ok=True)
        with ad.no_grad():
            for idx in indices:
                pair = ds.pair(idx)
                flow, _ = net.forward(Tensor(pair.img1[None]), Tensor(pair.img2[None]))
                flo_write(flow.data[0], os.path.join(ns.dump_flows, f"pred_{idx:05d}.flo"))
        print(f"wrote {len(indices)} predicted flows to {ns.dump_flows}")
    if ns.dump_masks:
        if net.variant not in MASKED_VARIANTS:
            print(f"no masks for this variant ({net.variant}); nothing dumped")
        else:
            os.makedirs(ns.dump_masks, exist_ok=True)
            with ad.no_grad():
                for idx in indices[: ns.limit or 8]:
                    pair = ds.pair(idx)
                    _, masks = net.forward(Tensor(pair.img1[None]), Tensor(pair.img2[None]))
                    write_mask_pgms(masks, ns.dump_masks, prefix=f"sample{idx:05d}_mask")
            print(f"wrote mask dumps to {ns.dump_masks}")
    return EXIT_OK


def _experiment_config(ns, k_value: int = 10):
    from .data import SceneSpec
    from .trainer import ExperimentConfig, layered_scene_spec

    return ExperimentConfig(
        k=k_value,
        seeds=tuple(range(ns.seeds)),
        data_seed=ns.data_seed, n_train=ns.n_train, n_val=ns.n_val,
        size=ns.size, epochs=ns.epochs, batch_size=ns.batch_size,
        lr=ns.lr, optimizer=ns.optimizer, augment=ns.augment,
        scene=layered_scene_spec() if ns.layered_scene else SceneSpec(),
    )


def _run_table(ns, rows, out_name):
    from .trainer import results_csv

    csv = results_csv(rows)
    _echo_config(ns.out, ns, out_name)
    with open(os.path.join(ns.out, f"{out_name}.csv"), "w") as fh:
        fh.write(csv)
    print(csv, end="")


def cmd_ablate(ns) -> int:
    from .trainer import DivergenceError, ablation_experiment

    _prepare_out_dir(ns.out, ns.force)
    cfg = _experiment_config(ns, k_value=ns.k)
    try:
        rows = ablation_experiment(cfg, progress=print)
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    _run_table(ns, rows, "ablation")
    return EXIT_OK


def cmd_sweep_k(ns) -> int:
    from .trainer import DivergenceError, k_sweep

    _prepare_out_dir(ns.out, ns.force)
    cfg = _experiment_config(ns)
    try:
        rows = k_sweep(ns.k, cfg, progress=print)
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    _run_table(ns, rows, "k_sweep")
    return EXIT_OK


def cmd_demo_1d(ns) -> int:
    from .trainer import demo_1d

    report = demo_1d(n=ns.n, noise=ns.noise, k=ns.k, steps=ns.steps, seed=ns.seed)
    print(report)
    if ns.out:
        _prepare_out_dir(ns.out, ns.force)
        _echo_config(ns.out, ns, "demo-1d")
        with open(os.path.join(ns.out, "demo_1d.csv"), "w") as fh:
            fh.write("metric,value\n")
            fh.write(f"mse_linear,{report.mse_linear:.8f}\n")
            fh.write(f"mse_softmask,{report.mse_softmask:.8f}\n")
            fh.write(f"mse_ratio,{report.mse_ratio:.8f}\n")
            fh.write(f"segment_purity,{report.segment_purity:.8f}\n")
    return EXIT_OK


def cmd_verify(ns) -> int:
    from .verify import run_suite

    t0 = time.perf_counter()
    try:
        results = run_suite(ns.suite)
    except KeyError as e:
        raise CliError(str(e), EXIT_USAGE)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"suite {ns.suite}: {'PASS' if ok else 'FAIL'} "
          f"({len(results)} checks, {time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smflow",
        description="Layered optical-flow estimation with a soft-mask output head.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}
    _add = sub.add_parser

    def add_parser(name, **kw):
        p = _add(name, **kw)
        parser.subcommands[name] = p
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("gen-data", help="render a synthetic dataset to disk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--layers", type=int, default=0,
                   help="layers per scene; 0 = random 1-4")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one network on a gen-data directory")
    p.add_argument("--variant", default="lofe",
                   choices=["linear", "lofe", "no-maxout", "normalize", "no-masks"])
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", default="supervised",
                   choices=["supervised", "unsupervised"])
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--reg-weight", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--train-size", type=int, default=None)
    p.add_argument("--val-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["val", "train", "all"])
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--dump-flows", default=None)
    p.add_argument("--dump-masks", default=None)
    p.set_defaults(func=cmd_eval)

    for name, helptext in (("ablate", "head-variant ablation"),
                           ("sweep-k", "EPE as a function of k")):
        p = sub.add_parser(name, help=helptext)
        if name == "ablate":
            p.add_argument("--k", type=int, default=10)
        else:
            p.add_argument("--k", type=_int_list, default=[1, 5, 10, 20, 40],
                           help="comma-separated k values")
        p.add_argument("--seeds", type=int, default=3)
        p.add_argument("--data-seed", type=int, default=100)
        p.add_argument("--n-train", type=int, default=2000)
        p.add_argument("--n-val", type=int, default=200)
        p.add_argument("--size", type=int, default=64)
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--lr", type=float, default=5e-3)
        p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
        p.add_argument("--augment", action="store_true")
        p.add_argument("--layered-scene", action="store_true", default=True,
                       help="use the layered-affine scene mix (default)")
        p.add_argument("--plain-scene", dest="layered_scene", action="store_false")
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true")
        p.set_defaults(func=cmd_ablate if name == "ablate" else cmd_sweep_k)

    p = sub.add_parser("demo-1d", help="piecewise-quadratic 1-D fit demo")
    p.add_argument("--n", type=int, default=240)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_demo_1d)

    p = sub.add_parser("verify", help="run a fixed-seed property suite")
    p.add_argument("--suite", default="all",
                   choices=["grad", "masks", "quadratic", "bending", "io", "all"])
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
