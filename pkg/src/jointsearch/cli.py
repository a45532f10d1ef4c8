"""Command-line entry point: ``jointsearch <subcommand> ...``.

Every command writes its artifacts plus a ``<out>.manifest.json`` recording
the resolved configuration, input file hashes, tool version and duration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cost_model import PROFILES, Constraint, CostTable, build_synthetic_table
from .encoding import arch_dim, joint_dim
from .errors import FingerprintWarning, InfeasibleConstraintError, JointSearchError
from .evolution import EvolutionConfig, result_to_dict, search
from .experiment import TransferExperimentConfig, run_transfer_experiment, write_rows_csv
from .oracle import (
    OracleConfig,
    gen_fp_dataset,
    gen_mp_dataset,
    quant_accuracy,
    read_dataset,
    records_to_arrays,
    write_dataset,
)
from .predictor import (
    TRANSFER_TRAIN_DEFAULTS,
    TrainConfig,
    init_params,
    load,
    pairwise_accuracy,
    save,
    train,
    transfer_init,
)
from .quantizer import NONNEG, SYMMETRIC, CalibConfig, QuantScheme, kl_at, kl_calibrate, quantize
from .space import enumerate_space, joint_cardinality, load_space

log = logging.getLogger("jointsearch")


class CliError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out, command: str, config: dict, inputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).is_file()},
        "tool_version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require_out(args):
    if not args.out:
        raise CliError("--out is required")
    return args.out


def _space(args):
    return load_space(args.space or "default21")


def _space_file(args):
    return args.space if args.space and Path(args.space).is_file() else None


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args):
    out = _require_out(args)
    space = _space(args)
    oracle = OracleConfig(seed=args.oracle_seed if args.oracle_seed is not None else args.seed)
    if (args.fp is None) == (args.mp is None):
        raise CliError("pass exactly one of --fp N or --mp N_RANDOM N_GROUPED K")
    if args.fp is not None:
        records = gen_fp_dataset(oracle, space, args.fp, stream=args.stream)
        kind = "fp"
    else:
        n_random, n_grouped, k = args.mp
        records = gen_mp_dataset(oracle, space, n_random, n_grouped, k, stream=args.stream)
        kind = "mp"
    write_dataset(out, records, space, oracle, kind)
    log.info("wrote %d %s records to %s", len(records), kind, out)
    return {"oracle": oracle.to_dict(), "kind": kind, "fp": args.fp, "mp": args.mp,
            "stream": args.stream, "space": space.to_dict()}, [_space_file(args)]


def cmd_gen_cost_table(args):
    out = _require_out(args)
    space = _space(args)
    if args.profile not in PROFILES:
        raise CliError(f"unknown profile {args.profile!r}; choose from {sorted(PROFILES)}")
    table = build_synthetic_table(space, args.profile, seed=args.seed)
    table.save(out)
    log.info("wrote %d cost entries to %s", len(table), out)
    return {"profile": args.profile, "seed": args.seed, "space": space.to_dict()}, [_space_file(args)]


def cmd_train(args):
    out = _require_out(args)
    header, records = read_dataset(args.dataset)
    if args.space:
        space = _space(args)
        if header["space_fingerprint"] != space.fingerprint():
            raise CliError(f"dataset was built for space {header['space_fingerprint']}, "
                           f"not {space.fingerprint()}")
    else:
        space = None
    if len(records) < 4:
        raise CliError("dataset too small to hold out a validation split")
    X, t = records_to_arrays(records)
    n_hold = max(2, int(round(len(records) * args.holdout)))
    train_xy = (X[:-n_hold], t[:-n_hold])
    hold_xy = (X[-n_hold:], t[-n_hold:])
    fingerprint = header["space_fingerprint"]

    if args.transfer_from:
        if space is None:
            raise CliError("--transfer-from needs --space to locate the arch coordinates")
        with warnings.catch_warnings():
            warnings.simplefilter("error", FingerprintWarning)
            try:
                fp = load(args.transfer_from, expected_fingerprint=fingerprint)
            except FingerprintWarning as exc:
                raise CliError(f"--transfer-from checkpoint does not match the space: {exc}") from None
        if X.shape[1] != joint_dim(space) or fp.input_dim != arch_dim(space):
            raise CliError("--transfer-from needs an FP checkpoint and a mixed-precision dataset")
        init = transfer_init(fp, space)
        lr = args.lr if args.lr is not None else TRANSFER_TRAIN_DEFAULTS["learning_rate"]
        epochs = args.epochs if args.epochs is not None else TRANSFER_TRAIN_DEFAULTS["epochs"]
        variant = "mp-transfer"
    else:
        variant = "fp" if header.get("kind") == "fp" else "mp-scratch"
        lr = args.lr if args.lr is not None else 1e-3
        epochs = args.epochs if args.epochs is not None else 100
        init = init_params(X.shape[1], args.hidden, seed=args.seed, scale=args.init_scale,
                           variant=variant, space_fingerprint=fingerprint)
    cfg = TrainConfig(learning_rate=lr, batch_size=args.batch_size, epochs=epochs,
                      weight_init_scale=args.init_scale, seed=args.seed)
    res = train(init, train_xy, cfg)
    save(res.params, out)
    metrics = {
        "variant": variant,
        "final_mse": res.final_mse,
        "pairwise_accuracy": pairwise_accuracy(res.params, hold_xy),
        "n_train": int(len(train_xy[1])),
        "n_heldout": int(n_hold),
        "epochs": epochs,
        "learning_rate": lr,
    }
    metrics_path = args.metrics or f"{out}.metrics.json"
    _dump(metrics_path, metrics)
    log.info("trained %s predictor: mse=%.3g heldout pairwise=%.4f",
             variant, metrics["final_mse"], metrics["pairwise_accuracy"])
    config = {"train": cfg.__dict__, "holdout": args.holdout, "hidden": args.hidden,
              "transfer_from": args.transfer_from}
    return config, [args.dataset, args.transfer_from, _space_file(args)]


def _constraint_from(args) -> Constraint:
    try:
        return Constraint(args.max_latency_ms, args.max_energy_mj, args.max_bitops_g)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_search(args):
    out = _require_out(args)
    space = _space(args)
    if not args.cost_table or not Path(args.cost_table).is_file():
        raise CliError(f"cost table not found: {args.cost_table}")
    table = CostTable.load(args.cost_table, space)
    params = load(args.predictor)
    if params.space_fingerprint not in (None, space.fingerprint()):
        raise CliError(f"predictor was trained for space {params.space_fingerprint}")
    if params.input_dim != joint_dim(space):
        raise CliError("search needs a quantization-aware (joint-encoding) predictor")
    constraint = _constraint_from(args)
    cfg = EvolutionConfig(population_size=args.population, top_k=args.top_k,
                          mutation_prob=args.mutation_prob, iter_max=args.iter_max,
                          max_resample_attempts=args.max_attempts, seed=args.seed)
    try:
        result = search(space, constraint, table, params, cfg)
    except InfeasibleConstraintError as exc:
        raise CliError(f"infeasible constraint: {exc}") from None
    oracle_fn = None
    if args.eval_oracle:
        oracle = OracleConfig(seed=args.oracle_seed)
        oracle_fn = lambda a, q: quant_accuracy(oracle, space, a, q)  # noqa: E731
    doc = result_to_dict(result, space, table, constraint, cfg, oracle_fn)
    _dump(out, doc)
    best = doc["top_k"][0]
    log.info("best predicted %.4f at %.3f ms / %.3f mJ", best["predicted_acc"],
             best["latency_ms"], best["energy_mJ"])
    return {"evolution": cfg.to_dict(), "constraint": constraint.to_dict(),
            "eval_oracle": args.eval_oracle}, [args.predictor, args.cost_table, _space_file(args)]


def cmd_experiment_transfer(args):
    out_dir = Path(_require_out(args))
    out_dir.mkdir(parents=True, exist_ok=True)
    space = _space(args)
    oracle = OracleConfig(seed=args.oracle_seed)
    cfg = TransferExperimentConfig(budgets=tuple(args.budgets), seeds=tuple(args.seeds),
                                   fp_size=args.fp_size, fp_epochs=args.fp_epochs,
                                   test_size=args.test_size, hidden=args.hidden)
    result = run_transfer_experiment(space, oracle, cfg)
    write_rows_csv(out_dir / "transfer.csv", result.rows)
    _dump(out_dir / "summary.json", result.summary)
    for m in result.summary["means"]:
        log.info("budget %5d  scratch %.4f  transfer %.4f", m["budget"], m["scratch"], m["transfer"])
    config = dict(cfg.__dict__, budgets=list(cfg.budgets), seeds=list(cfg.seeds),
                  oracle=oracle.to_dict(), space=space.to_dict())
    return config, [_space_file(args)], out_dir / "experiment"


def _read_tensor(path) -> np.ndarray:
    meta = json.loads(Path(f"{path}.json").read_text())
    data = np.fromfile(path, dtype="<f4")
    shape = tuple(meta["shape"])
    if data.size != math.prod(shape):
        raise CliError(f"{path}: {data.size} values do not match shape {shape}")
    return data.reshape(shape)


def _write_tensor(path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)
    Path(f"{path}.json").write_text(json.dumps({"shape": list(arr.shape)}) + "\n")


def cmd_quantize(args):
    out = _require_out(args)
    x = _read_tensor(args.tensor).astype(float)
    mode = NONNEG if args.mode == "activations" else SYMMETRIC
    calib = CalibConfig(args.bins, args.grid)
    if args.calibrate == (args.clip is not None):
        raise CliError("pass exactly one of --clip V or --calibrate")
    v = kl_calibrate(x, args.bits, calib, mode) if args.calibrate else args.clip
    scheme = QuantScheme(args.bits, v, mode)
    q = quantize(x, scheme)
    _write_tensor(out, q)
    report = {
        "chosen_v": v,
        "kl": kl_at(x, args.bits, v, calib, mode),
        "max_abs_error": float(np.max(np.abs(q - x))),
        "step": scheme.step,
        "bits": args.bits,
        "mode": mode,
    }
    _dump(f"{out}.report.json", report)
    return {"bits": args.bits, "mode": mode, "clip": args.clip, "calibrate": args.calibrate,
            "bins": args.bins, "grid": args.grid}, [args.tensor]


def cmd_enumerate(args):
    space = _space(args)
    count = joint_cardinality(space)
    if args.count_only:
        print(count)
        return None
    out = _require_out(args)
    pairs = enumerate_space(space, args.limit)
    n = 0
    with open(out, "w") as f:
        for arch, pol in pairs:
            f.write(json.dumps({"arch": arch.to_dict(), "policy": pol.to_dict()},
                               separators=(",", ":")) + "\n")
            n += 1
    log.info("enumerated %d pairs", n)
    return {"limit": args.limit, "count": count}, [_space_file(args)]


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--space", default=None,
                        help="space JSON file or builtin name (default21, tiny); default default21")
    common.add_argument("--out", help="output path")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="jointsearch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate an FP or MP dataset")
    g.add_argument("--fp", type=int, metavar="N")
    g.add_argument("--mp", type=int, nargs=3, metavar=("N_RANDOM", "N_GROUPED", "K"))
    g.add_argument("--oracle-seed", type=int, default=None, help="defaults to --seed")
    g.add_argument("--stream", type=int, default=0, help="independent sampling stream")
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gen-cost-table", parents=[common], help="synthesize a latency/energy table")
    c.add_argument("--profile", default="synthetic-accel")
    c.set_defaults(func=cmd_gen_cost_table)

    t = sub.add_parser("train", parents=[common], help="train an accuracy predictor")
    t.add_argument("--dataset", required=True)
    t.add_argument("--transfer-from", help="FP checkpoint to widen and fine-tune")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--hidden", type=int, default=400)
    t.add_argument("--init-scale", type=float, default=1.0)
    t.add_argument("--holdout", type=float, default=0.1)
    t.add_argument("--metrics", help="metrics JSON path (default <out>.metrics.json)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("search", parents=[common], help="constrained evolutionary search")
    s.add_argument("--predictor", required=True)
    s.add_argument("--cost-table")
    s.add_argument("--max-latency-ms", type=float)
    s.add_argument("--max-energy-mj", type=float)
    s.add_argument("--max-bitops-g", type=float)
    s.add_argument("--population", type=int, default=100)
    s.add_argument("--top-k", type=int, default=25)
    s.add_argument("--mutation-prob", type=float, default=0.1)
    s.add_argument("--iter-max", type=int, default=500)
    s.add_argument("--max-attempts", type=int, default=1000)
    s.add_argument("--eval-oracle", action="store_true")
    s.add_argument("--oracle-seed", type=int, default=0)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("experiment-transfer", parents=[common],
                       help="scratch vs transferred predictor at several data budgets")
    e.add_argument("--budgets", type=int, nargs="+", default=[500, 1000, 2000])
    e.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    e.add_argument("--fp-size", type=int, default=20000)
    e.add_argument("--fp-epochs", type=int, default=30)
    e.add_argument("--test-size", type=int, default=2000)
    e.add_argument("--hidden", type=int, default=400)
    e.add_argument("--oracle-seed", type=int, default=0)
    e.set_defaults(func=cmd_experiment_transfer)

    q = sub.add_parser("quantize", parents=[common], help="quantize a float32 tensor file")
    q.add_argument("tensor")
    q.add_argument("--bits", type=int, required=True)
    q.add_argument("--clip", type=float)
    q.add_argument("--calibrate", action="store_true")
    q.add_argument("--mode", choices=["weights", "activations"], default="weights")
    q.add_argument("--bins", type=int, default=2048)
    q.add_argument("--grid", type=int, default=100)
    q.set_defaults(func=cmd_quantize)

    n = sub.add_parser("enumerate", parents=[common], help="list every (arch, policy) pair")
    n.add_argument("--limit", type=int, default=100_000)
    n.add_argument("--count-only", action="store_true")
    n.set_defaults(func=cmd_enumerate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    started = time.time()
    try:
        ret = args.func(args)
    except (CliError, JointSearchError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if ret is not None:
        config, inputs, *manifest_base = ret
        base = manifest_base[0] if manifest_base else args.out
        _write_manifest(base, args.command, dict(config, seed=args.seed), inputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
