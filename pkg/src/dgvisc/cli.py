"""Command-line interface: ``dgvisc {train,eval,compare,gradcheck}``.

Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
3 numerical instability.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dgvisc.cost import METRIC_COLUMNS, write_metric_rows
from dgvisc.datagen import test_case
from dgvisc.dg import write_snapshot_csv
from dgvisc.equations import InstabilityError
from dgvisc.evaluate import make_model, run_case
from dgvisc.network import CheckpointError, NeuralViscosity, load_params

logger = logging.getLogger("dgvisc")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_UNSTABLE = 0, 1, 2, 3
CASES = ("composite", "burgers_sine", "sod", "shu_osher")
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, args: dict, inputs: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in args.items() if k != "func"},
        "inputs": inputs,
        "outputs": outputs,
    }
    (out / f"{command}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_nn(path):
    try:
        config, params = load_params(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {path}") from None
    except CheckpointError as exc:
        raise UsageError(f"bad checkpoint {path}: {exc}") from None
    return NeuralViscosity(config, params)


def _cells(text: str) -> list[int]:
    try:
        cells = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not cells or min(cells) < 1:
        raise argparse.ArgumentTypeError("cell counts must be positive")
    return cells


def _plot_rows(result) -> tuple[list[str], np.ndarray]:
    mesh = result.mesh
    U = result.state.data
    x = mesh.x.ravel()
    mu = np.zeros_like(x) if result.mu is None else np.asarray(result.mu).ravel()
    names = ["u"] if U.shape[0] == 1 else ["rho", "rho_u", "E"][: U.shape[0]]
    cols = [x] + [U[i].ravel() for i in range(U.shape[0])] + [mu]
    table = np.stack(cols, axis=1)
    order = np.argsort(x, kind="stable")
    return ["x"] + names + ["mu"], table[order]


def _write_plot(path: Path, result) -> None:
    header, rows = _plot_rows(result)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _solve(case, model, cells, args):
    return run_case(
        case, model, cells, dt=args.dt, p=args.p, t_final=args.t_final, reference=args.reference, mass=args.mass
    )


def cmd_train(args) -> int:
    from dgvisc.trainer import ConfigError, load_config, train

    try:
        config = load_config(args.config, seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    result = train(config, out)
    print(f"initial validation loss {result.initial_validation['loss']:.6e}")
    for rec in result.history:
        print(f"epoch {rec.epoch}: train {rec.train_loss:.6e} validation {rec.val_loss:.6e}")
    print(f"wrote {out / 'losses.csv'} and {len(result.checkpoints)} checkpoint(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    case = test_case(args.case)
    if args.checkpoint:
        model, label = _load_nn(args.checkpoint), "nn"
    else:
        model, label = make_model(args.model), args.model
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = _solve(case, model, args.cells, args)
    except InstabilityError as exc:
        print(f"{label} on {args.case} with {args.cells} cells is unstable at step {exc.step}: {exc.reason}")
        return EXIT_UNSTABLE
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stem = f"{args.case}_{label}_{args.cells}"
    write_snapshot_csv(out / f"{stem}_solution.csv", result.mesh, result.state, result.mu)
    row = {"model": label, "cells": args.cells, **result.metrics}
    write_metric_rows(out / f"{stem}_metrics.csv", [row])
    inputs = {"checkpoint_sha256": _sha256(args.checkpoint)} if args.checkpoint else {}
    _write_manifest(out, "eval", vars(args), inputs, [f"{stem}_solution.csv", f"{stem}_metrics.csv"])
    print(",".join(METRIC_COLUMNS))
    print(",".join([label, str(args.cells)] + [f"{row[k]:.6e}" for k in METRIC_COLUMNS[2:]]))
    return EXIT_OK


def cmd_compare(args) -> int:
    case = test_case(args.case)
    models = [("none", make_model("none")), ("db", make_model("db")), ("mdh", make_model("mdh"))]
    if args.checkpoint:
        models.append(("nn", _load_nn(args.checkpoint)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, outputs, failed = [], [], []
    for label, model in models:
        for cells in args.cells:
            try:
                result = _solve(case, model, cells, args)
            except InstabilityError as exc:
                logger.warning("%s on %d cells unstable at step %s: %s", label, cells, exc.step, exc.reason)
                failed.append(f"{label}/{cells}")
                rows.append({"model": label, "cells": cells, **{k: float("nan") for k in METRIC_COLUMNS[2:]}})
                continue
            rows.append({"model": label, "cells": cells, **result.metrics})
            name = f"plot_{args.case}_{label}_{cells}.csv"
            _write_plot(out / name, result)
            outputs.append(name)
    table = f"{args.case}_table.csv"
    write_metric_rows(out / table, rows)
    inputs = {"checkpoint_sha256": _sha256(args.checkpoint)} if args.checkpoint else {}
    _write_manifest(out, "compare", vars(args), inputs, [table] + outputs)
    with (out / table).open() as fh:
        sys.stdout.write(fh.read())
    if failed:
        print(f"unstable runs: {', '.join(failed)}")
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from dgvisc.gradcheck import corrupted_backward, default_config, gradient_check
    from dgvisc.trainer import ConfigError, load_config

    if args.config:
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    else:
        config = default_config()
    with corrupted_backward() if args.corrupt_backward else contextlib.nullcontext():
        results = gradient_check(config, args.m, args.components, args.seed)
    worst = 0.0
    for r in results:
        print(f"m={r.m}: relative error {r.rel_error:.3e}")
        worst = max(worst, r.rel_error)
    ok = worst <= args.tol
    print("PASS" if ok else f"FAIL: {worst:.3e} exceeds {args.tol:.1e}")
    return EXIT_OK if ok else EXIT_CHECK


def _solver_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", choices=CASES, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dt", type=float, default=1e-5, help="time step for both solvers (default 1e-5)")
    p.add_argument("--t-final", type=float, default=None, help="end time (default: the case's own)")
    p.add_argument("--p", type=int, default=4, help="nodes per cell (default 4)")
    p.add_argument("--mass", choices=("exact", "lumped"), default="exact", help="DG mass matrix")
    p.add_argument(
        "--reference",
        choices=("auto", "fv", "exact"),
        default="auto",
        help="reference solution: analytic when available (auto), fine MUSCL, or analytic",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgvisc", description="DG solver with learned artificial viscosity")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the viscosity network")
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker processes per batch (default 1)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="solve one test case and score it")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained network checkpoint")
    src.add_argument("--model", choices=("none", "db", "mdh"))
    p.add_argument("--cells", type=int, required=True)
    _solver_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="table of all models over several meshes")
    p.add_argument("--checkpoint", help="trained network checkpoint (adds the NN rows)")
    p.add_argument("--cells", type=_cells, default=[32, 64, 128, 256], help="comma-separated cell counts")
    _solver_options(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradient")
    p.add_argument("--config", help="INI configuration (default: 8 cells, p = 3, advection)")
    p.add_argument("--m", type=_cells, default=[1, 2, 4, 8], help="sub-trajectory lengths to test")
    p.add_argument("--components", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstabilityError as exc:
        print(f"numerical instability at step {exc.step}: {exc.reason}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
