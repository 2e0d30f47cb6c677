"""Command-line entry point: ``enrnn <command> [flags]``.

Exit status is 0 on success, 1 on a usage or input error and 2 when a
numerical solver fails (or a gradient check does not pass).
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from . import __version__, tasks
from .analysis import jacobian_norms, spectrum_dump, spectrum_to_csv, sweep, sweep_to_csv, theorem_bound_report
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ContractError, DefectiveEigenvalueError, HypothesisError, SolverError
from .net import EnrnnParams
from .training import (
    TrainConfig,
    _streams,
    build_model,
    evaluate,
    gradcheck,
    make_datasets,
    train,
)

log = logging.getLogger("enrnn")

COMMANDS = ("train", "eval", "gradcheck", "heatmap", "spectrum", "sweep", "gen-data")
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_id():
    """Package version plus a digest of the installed source files."""
    h = hashlib.sha256()
    here = Path(__file__).parent
    for f in sorted(here.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _field_type(f):
    t = f.type
    if isinstance(t, str):
        t = eval(t, vars(typing))  # noqa: S307 - dataclass annotations only
    if typing.get_origin(t) is typing.Union:
        t = next(a for a in typing.get_args(t) if a is not type(None))
    return t


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        t = _field_type(f)
        if t is bool:
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=t, default=None, metavar=t.__name__.upper())


def make_parser():
    parser = _Parser(prog="enrnn", description="Eigenvalue normalized RNN experiments.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write metrics, checkpoint and manifest")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test set")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    _add_config_flags(p)

    p = sub.add_parser("heatmap", help="Jacobian norm grids for one mini-batch")
    p.add_argument("--checkpoint")
    p.add_argument("--per-example", action="store_true")
    p.add_argument("--bound-lags", type=int, default=0,
                   help="also audit the short-term bound for lags 1..N (ReLU, ||W_S|| < 1 only)")
    _add_config_flags(p)

    p = sub.add_parser("spectrum", help="eigenvalues of the effective short-term matrix")
    p.add_argument("--checkpoint")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="train over several (split, hidden) pairs")
    p.add_argument("--splits", required=True, help="comma-separated long-term sizes q")
    p.add_argument("--hiddens", help="comma-separated total sizes n (default: --hidden)")
    _add_config_flags(p)

    p = sub.add_parser("gen-data", help="dump the seeded train/test sets as ENR1 arrays")
    _add_config_flags(p)
    return parser


def resolve_config(args, base=None):
    """Config file (or ``base``) first, then explicit flags on top."""
    values = base.to_dict() if base is not None else TrainConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ContractError(f"{args.config}: config must be a JSON object")
        values.update(loaded)
    for name in TrainConfig.fields():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig.from_dict(values)


def _out_dir(config):
    out = Path(config.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, command, config, extra=None):
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "seed": config.seed,
        "build": build_id(),
    }
    if extra:
        manifest.update(extra)
    with open(out / "run.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load(args):
    res = load_checkpoint(args.checkpoint)
    return res, resolve_config(args, base=res.config)


def _model(args, config):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint).params
    init_rng, _, _ = _streams(config.seed)
    return build_model(config, init_rng)


def cmd_train(args):
    config = resolve_config(args)
    out = _out_dir(config)
    write_manifest(out, "train", config)
    ckpt = out / "ckpt"
    result = train(config, checkpoint_path=ckpt)
    result.metrics.to_csv(out / "metrics.csv")
    save_checkpoint(ckpt, result)
    print(f"trained {result.iteration} iterations; outputs in {out}")
    return 0


def cmd_eval(args):
    res, config = _load(args)
    out = _out_dir(config)
    _, data_rng, _ = _streams(config.seed)
    _, test = make_datasets(config, data_rng)
    loss = evaluate(res.params, test, config.task)
    report = {"eval_loss": loss, "baseline": tasks.baseline_value(config.task, config.seq_len)}
    write_manifest(out, "eval", config, {"checkpoint": str(args.checkpoint)})
    with open(out / "eval.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"eval_loss {loss!r}")
    return 0


def cmd_gradcheck(args):
    config = resolve_config(args)
    out = _out_dir(config)
    write_manifest(out, "gradcheck", config, {"h": args.h, "tol": args.tol})
    report = gradcheck(config, h=args.h)
    text = report.format()
    ok = report.passed(args.tol)
    text += f"\nmax relative error {report.max_error:.3e} ({'PASS' if ok else 'FAIL'} at tol {args.tol:g})\n"
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    return 0 if ok else 2


def _first_batch(config):
    _, data_rng, order_rng = _streams(config.seed)
    train_set, _ = make_datasets(config, data_rng)
    perm = order_rng.permutation(config.train_size)
    return train_set[perm[:config.batch_size]]


def cmd_heatmap(args):
    config = resolve_config(args, base=load_checkpoint(args.checkpoint).config if args.checkpoint else None)
    params = _model(args, config)
    if not isinstance(params, EnrnnParams):
        raise ContractError("heatmaps need an ENRNN model")
    out = _out_dir(config)
    write_manifest(out, "heatmap", config, {"checkpoint": args.checkpoint, "bound_lags": args.bound_lags})
    batch = _first_batch(config)
    short, long_ = jacobian_norms(params, batch.inputs, per_example=args.per_example)
    for grid in (short, long_):
        vals = grid.values if not args.per_example else grid.values.reshape(-1, grid.values.shape[-1])
        dataclasses.replace(grid, values=vals).to_csv(out / f"heatmap_{grid.which_state}.csv")
    if args.bound_lags:
        try:
            rep = theorem_bound_report(params, batch.inputs, range(1, args.bound_lags + 1))
        except HypothesisError as exc:
            print(f"bound audit skipped: {exc}")
        else:
            rep.to_csv(out / "bound.csv")
            print(f"bound audit {'passed' if rep.passed else 'FAILED'}")
    print(f"heatmaps written to {out}")
    return 0


def cmd_spectrum(args):
    config = resolve_config(args, base=load_checkpoint(args.checkpoint).config if args.checkpoint else None)
    params = _model(args, config)
    if not isinstance(params, EnrnnParams):
        raise ContractError("spectrum needs an ENRNN model")
    out = _out_dir(config)
    write_manifest(out, "spectrum", config, {"checkpoint": args.checkpoint})
    ev = spectrum_dump(params.W_S)
    spectrum_to_csv(ev, out / "spectrum.csv")
    print(f"{len(ev)} eigenvalues, max modulus {float(max(abs(ev), default=0.0))!r}")
    return 0


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sweep(args):
    base = resolve_config(args)
    out = _out_dir(base)
    splits = _int_list(args.splits)
    hiddens = _int_list(args.hiddens) if args.hiddens else [base.hidden]
    configs = [base.replace(split=q, hidden=n) for n in hiddens for q in splits]
    write_manifest(out, "sweep", base, {"splits": splits, "hiddens": hiddens})
    rows = sweep(configs, run_dir=out)
    sweep_to_csv(rows, out / "sweep.csv")
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(configs)} runs, {failed} failed; table in {out / 'sweep.csv'}")
    return 0


def cmd_gen_data(args):
    config = resolve_config(args)
    out = _out_dir(config)
    write_manifest(out, "gen-data", config)
    _, data_rng, _ = _streams(config.seed)
    train_set, test_set = make_datasets(config, data_rng)
    for name, ds in (("train", train_set), ("test", test_set)):
        tasks.dump_array(out / f"{name}_inputs.enr", ds.inputs)
        tasks.dump_array(out / f"{name}_targets.enr", np.asarray(ds.targets, dtype=np.float64))
    print(f"datasets written to {out}")
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "heatmap": cmd_heatmap,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
}


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (SolverError, DefectiveEigenvalueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (ContractError, CheckpointError, OSError, json.JSONDecodeError) as exc:
        print(f"enrnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
