"""Command-line entry point: training runs, extrapolation, error statistics.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import sys

from . import analysis, system, trainer
from .network import NetworkHyperparams
from .trainer import TrainConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuralvmc",
        description="Variational Monte Carlo with a neural wavefunction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a wavefunction and record its learning curve")
    run.add_argument("--molecule", required=True, help="molecule config file")
    run.add_argument("--features", choices=("linear", "slater"), default="slater",
                     help="distance feature variant (default: slater)")
    run.add_argument("--batch", type=int, default=256, help="walkers per batch")
    run.add_argument("--iters", type=int, default=5000, help="max optimizer updates")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None,
                     help="output directory (default: runs/<molecule>_<features>_seed<seed>)")
    run.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    run.add_argument("--ndet", type=int, default=16, help="number of determinants")
    run.add_argument("--layers", type=int, default=4, help="number of stream layers")
    run.add_argument("--width-one", type=int, default=256, help="one-electron stream width")
    run.add_argument("--width-two", type=int, default=32, help="two-electron stream width")
    run.add_argument("--burn-in", type=int, default=500, help="equilibration sweeps")
    run.add_argument("--mcmc-steps", type=int, default=10, help="sweeps between updates")
    run.add_argument("--clip-width", type=float, default=5.0, help="energy clip width, MAD units")
    run.add_argument("--conv-threshold", type=float, default=1e-4,
                     help="window-mean convergence threshold, hartree")
    run.add_argument("--conv-window", type=int, default=1000, help="convergence window, iterations")
    run.set_defaults(func=cmd_run)

    extrap = sub.add_parser("extrapolate", help="two-point extrapolation over a CSV of pairs")
    extrap.add_argument("input", help=f"CSV with columns {','.join(analysis.EXTRAPOLATE_INPUT_COLUMNS)}")
    extrap.add_argument("output", help="CSV to write with appended result columns")
    extrap.set_defaults(func=cmd_extrapolate)

    stats = sub.add_parser("stats", help="error statistics of a reaction table")
    stats.add_argument("table", help="reaction table config file")
    stats.set_defaults(func=cmd_stats)

    return parser


def cmd_run(args) -> int:
    molecule_path = pathlib.Path(args.molecule)
    if not molecule_path.is_file():
        print(f"error: molecule config not found: {molecule_path}", file=sys.stderr)
        return 2
    mol = system.load_molecule(molecule_path)

    hp = NetworkHyperparams(
        n_layers=args.layers,
        width_one=args.width_one,
        width_two=args.width_two,
        n_det=args.ndet,
        feature_kind=args.features,
    )
    tc = TrainConfig(
        n_iterations=args.iters,
        batch_size=args.batch,
        learning_rate=args.lr,
        clip_width=args.clip_width,
        mcmc_steps_per_update=args.mcmc_steps,
        burn_in_steps=args.burn_in,
        seed=args.seed,
        convergence_threshold=args.conv_threshold,
        convergence_window=args.conv_window,
    )

    out_dir = pathlib.Path(
        args.out
        if args.out is not None
        else f"runs/{mol.name or molecule_path.stem}_{args.features}_seed{args.seed}"
    )
    out_dir.mkdir(parents=True, exist_ok=True)

    params, curve = trainer.train(mol, hp, tc, out_dir=str(out_dir))

    config_echo = {
        "seed": tc.seed,
        "molecule": system.serialize_molecule(mol),
        "hyperparams": dataclasses.asdict(hp),
        "train_config": dataclasses.asdict(tc),
    }
    trainer.write_curve_csv(curve, out_dir / "curve.csv", metadata=config_echo)

    summary = {"seed": tc.seed, "iterations_run": len(curve), "config": config_echo}
    if len(curve):
        window = min(len(curve), tc.convergence_window)
        energy, stderr = trainer.curve_energy(curve, window)
        summary.update(
            energy_ha=energy,
            stderr_ha=stderr,
            stats_window=window,
            converged_step=trainer.detect_convergence(
                curve, tc.convergence_threshold, tc.convergence_window
            ),
        )
        print(f"energy = {energy:.6f} +/- {stderr:.6f} Ha "
              f"(mean over final {window} iterations)")
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"outputs written to {out_dir}")
    return 0


def cmd_extrapolate(args) -> int:
    n_errors = analysis.extrapolate_csv(args.input, args.output)
    if n_errors:
        print(f"error: {n_errors} row(s) could not be extrapolated; see {args.output}",
              file=sys.stderr)
        return 2
    print(f"extrapolation written to {args.output}")
    return 0


def cmd_stats(args) -> int:
    table = analysis.load_reaction_table(args.table)
    stats = analysis.error_statistics(table)
    print(f"delta_max_abs_kjmol = {stats.delta_max_abs:.4f}")
    print(f"mean_abs_kjmol = {stats.mean_abs:.4f}")
    print(f"std_kjmol = {stats.std:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and signal runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
