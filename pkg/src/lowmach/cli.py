"""Command line front end.

Subcommands consume a TOML or JSON config document (one table per
subcommand), write canonical JSON artifacts into the output directory and
communicate failures through exit codes:

    0  success
    2  config validation error
    3  numerical abort (e.g. density floor breach)
    4  a requested check failed (e.g. a Jensen violation was found while
       the config asserts there must be none)

Every error prints a machine-readable JSON record to stderr.  All
randomness is derived from the single --seed value, and reports are
serialized with sorted keys and 17-significant-digit floats, so identical
seed + config reproduce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, SNAPSHOT_VERSION, __version__
from .jensen import EnvelopeBudgets, default_jensen_dictionary
from .jensen import envelope_upper_laminate, envelope_upper_planewave, jensen_report
from .ladder import LadderRunError, MachLadder, build_report, canonical_json, write_report
from .measures import AtomicMeasure, SpacetimeGrid, YoungMeasure
from .operator import RelaxedEulerOperator, ae_residual_negative_norm, kernel_plane_wave, physical_frequency
from .solver import (
    DensityFloorError,
    SimConfig,
    run,
    steady_vortex_velocity,
    weak_residual,
    write_energy_sidecar,
    write_snapshot,
)
from .ladder import relative_energy_monitor
from .states import AugmentedState, Params, lift_augmented

SUBCOMMANDS = (
    "simulate",
    "ladder",
    "jensen",
    "wavecone",
    "envelope",
    "relative-energy",
    "residual",
)


class ValidationError(ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class CheckFailed(RuntimeError):
    pass


def _error_record(kind, message, **extra):
    return json.dumps({"error": {"kind": kind, "message": str(message), **extra}})


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as err:
            raise ValidationError(f"invalid JSON: {err}") from err
    try:
        import tomllib  # py >= 3.11
    except ImportError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ValidationError(f"invalid TOML: {err}") from err


def _require(table: dict, key: str, typ, field: str):
    if key not in table:
        raise ValidationError(f"missing required key {field}.{key}", field=f"{field}.{key}")
    val = table[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, typ):
        raise ValidationError(
            f"{field}.{key} must be {getattr(typ, '__name__', typ)}, got {type(val).__name__}",
            field=f"{field}.{key}",
        )
    return val


def _params_from(table: dict, field: str) -> Params:
    try:
        return Params(
            d=2,
            gamma=float(table.get("gamma", 2.0)),
            eps=float(_require(table, "eps", (int, float), field)),
            rho_bar=float(table.get("rho_bar", 1.0)),
            T=float(_require(table, "T", (int, float), field)),
        )
    except ValueError as err:
        raise ValidationError(str(err), field=field) from err


# -- subcommand implementations ----------------------------------------------


def cmd_simulate(table, out: Path, seed: int, dry: bool):
    p = _params_from(table, "simulate")
    n = _require(table, "n", int, "simulate")
    times = table.get("snapshot_times") or list(np.linspace(0.0, p.T, 9))
    try:
        cfg = SimConfig(
            n=n,
            p=p,
            cfl=float(table.get("cfl", 0.4)),
            snapshot_times=[float(t) for t in times],
            init=table.get("init", "wellprepared_vortex"),
            init_params=table.get("init_params", {}),
        )
    except ValueError as err:
        raise ValidationError(str(err), field="simulate") from err
    plan = {"action": "simulate", "n": n, "eps": p.eps, "snapshots": len(times)}
    if dry:
        print(canonical_json(plan))
        return 0
    traj = run(cfg)
    for i, snap in enumerate(traj.snapshots):
        write_snapshot(out / f"snap_{i:04d}.bin", snap, p)
    write_energy_sidecar(out / "energy.json", traj)
    print(canonical_json({"snapshots_written": len(traj.snapshots), "final_time": traj.snapshots[-1].time if traj.snapshots else p.T}))
    return 0


def cmd_ladder(table, out: Path, seed: int, dry: bool):
    try:
        ladder = MachLadder(
            eps_list=tuple(_require(table, "eps_list", list, "ladder")),
            n=table.get("n", 64) if isinstance(table.get("n", 64), int) else tuple(table["n"]),
            T=float(_require(table, "T", (int, float), "ladder")),
            gamma=float(table.get("gamma", 2.0)),
            rho_bar=float(table.get("rho_bar", 1.0)),
            cfl=float(table.get("cfl", 0.4)),
            n_snapshots=int(table.get("n_snapshots", 33)),
            init=table.get("init", "wellprepared_vortex"),
            init_params=table.get("init_params", {"amplitude": 0.05}),
        )
    except (ValueError, TypeError) as err:
        raise ValidationError(str(err), field="ladder") from err
    plan = {
        "action": "ladder",
        "eps_list": list(ladder.eps_list),
        "n": list(ladder.n),
        "with_jensen": bool(table.get("with_jensen", True)),
    }
    if dry:
        print(canonical_json(plan))
        return 0
    report = build_report(
        ladder,
        coarsen=int(table.get("coarsen", 8)),
        coarsen_t=int(table.get("coarsen_t", 4)),
        jensen_budgets=EnvelopeBudgets(seed=seed),
        with_jensen=bool(table.get("with_jensen", True)),
    )
    write_report(report, out / "report.json", out / "per_eps.csv")
    summary = {
        "concentration_slope": report["concentration"]["slope"]
        if report["concentration"]
        else None,
        "lift_bound_passed": report["lift_bound"]["passed"],
        "jensen_violated_cells": report.get("jensen", {}).get("violated_cells"),
    }
    print(canonical_json(summary))
    if table.get("assert_not_violated", False) and report.get("jensen", {}).get(
        "violated_cells", 0
    ):
        raise CheckFailed("ladder-extracted measure reported Jensen violations")
    return 0


def _measure_from_table(table) -> YoungMeasure:
    if "measure_file" in table:
        return YoungMeasure.from_json(Path(table["measure_file"]).read_text())
    if "diatomic" in table:
        d = table["diatomic"]
        u1 = np.asarray(_require(d, "u1", list, "jensen.diatomic"), dtype=float)
        u2 = np.asarray(_require(d, "u2", list, "jensen.diatomic"), dtype=float)
        P1 = float(_require(d, "P1", (int, float), "jensen.diatomic"))
        P2 = float(_require(d, "P2", (int, float), "jensen.diatomic"))
        lam = float(d.get("lam", 0.5))
        if not 0.0 < lam < 1.0:
            raise ValidationError("lam must be in (0,1)", field="jensen.diatomic.lam")
        pts = np.array([[*u1, P1], [*u2, P2]])
        if np.abs(pts[0] - pts[1]).max() <= 1e-12:
            nu = AtomicMeasure.dirac(pts[0])
        else:
            nu = AtomicMeasure(np.array([lam, 1.0 - lam]), pts)
        return YoungMeasure.constant(SpacetimeGrid(1, 1, 2, T=1.0), nu)
    raise ValidationError(
        "jensen needs either measure_file or a [jensen.diatomic] table", field="jensen"
    )


def cmd_jensen(table, out: Path, seed: int, dry: bool):
    mu = _measure_from_table(table)
    plan = {"action": "jensen", "cells": int(mu.grid.n_cells), "max_atoms": mu.max_atoms()}
    if dry:
        print(canonical_json(plan))
        return 0
    report = jensen_report(
        mu,
        q=table.get("q"),
        budgets=EnvelopeBudgets(seed=seed),
    )
    doc = report.to_json_dict()
    (out / "jensen.json").write_text(canonical_json(doc))
    print(
        canonical_json(
            {
                "violated": report.count("violated"),
                "satisfied_certified": report.count("satisfied_certified"),
                "inconclusive": report.count("inconclusive"),
            }
        )
    )
    if table.get("assert_not_violated", False) and report.count("violated"):
        raise CheckFailed("measure violates the Jensen condition")
    return 0


def cmd_wavecone(table, out: Path, seed: int, dry: bool):
    u1 = np.asarray(_require(table, "u1", list, "wavecone"), dtype=float)
    u2 = np.asarray(_require(table, "u2", list, "wavecone"), dtype=float)
    P1 = float(_require(table, "P1", (int, float), "wavecone"))
    P2 = float(_require(table, "P2", (int, float), "wavecone"))
    if dry:
        print(canonical_json({"action": "wavecone"}))
        return 0
    op = RelaxedEulerOperator(2)
    z1 = lift_augmented(AugmentedState(u1, P1))
    z2 = lift_augmented(AugmentedState(u2, P2))
    det = op.diatomic_determinant(z1, z2)
    diff = z1.to_vector() - z2.to_vector()
    if np.linalg.norm(diff) == 0.0:
        membership = {"member": True, "best_direction": None, "min_singular_value": 0.0,
                      "tol": float(table.get("tol", 1e-8))}
    else:
        membership = op.wave_cone_membership(
            diff, tol=float(table.get("tol", 1e-8))
        ).to_json_dict()
    doc = {
        "det": det.det,
        "closed_form": det.closed_form,
        "membership": membership,
    }
    (out / "wavecone.json").write_text(canonical_json(doc))
    print(f"det = {det.det:.17g}")
    print(f"member = {membership['member']}")
    return 0


def cmd_envelope(table, out: Path, seed: int, dry: bool):
    state = np.asarray(_require(table, "state", list, "envelope"), dtype=float)
    if state.shape != (6,):
        raise ValidationError("envelope.state must have 6 entries", field="envelope.state")
    fname = table.get("function", "norm_sq")
    dictionary = {e.name: e for e in default_jensen_dictionary()}
    if fname not in dictionary:
        raise ValidationError(
            f"unknown test function {fname!r}; choices: {sorted(dictionary)}",
            field="envelope.function",
        )
    q = float(table.get("q", 1.0))
    plan = {"action": "envelope", "function": fname, "q": q}
    if dry:
        print(canonical_json(plan))
        return 0
    f = dictionary[fname]
    lam = envelope_upper_laminate(
        f,
        state,
        depth=int(table.get("depth", 1)),
        q=q,
        trials=int(table.get("trials", 2)),
        seed=seed,
    )
    pw = envelope_upper_planewave(
        f,
        state,
        modes=int(table.get("modes", 1)),
        q=q,
        quad_points=int(table.get("quad_points", 32)),
        trials=int(table.get("trials", 2)),
        seed=seed,
    )
    doc = {
        "function": fname,
        "f_at_state": float(f(state[None, :])[0]),
        "laminate": {"value": lam.value, "certificate": lam.certificate},
        "plane_wave": {"value": pw.value, "certificate": pw.certificate},
        "upper_bound": min(lam.value, pw.value),
        "q": q,
    }
    (out / "envelope.json").write_text(canonical_json(doc))
    print(canonical_json({"laminate": lam.value, "plane_wave": pw.value}))
    return 0


def cmd_relative_energy(table, out: Path, seed: int, dry: bool):
    p = _params_from(table, "relative_energy")
    n = _require(table, "n", int, "relative_energy")
    amplitude = float(table.get("amplitude", 0.05))
    n_snapshots = int(table.get("n_snapshots", 9))
    plan = {"action": "relative-energy", "n": n, "eps": p.eps}
    if dry:
        print(canonical_json(plan))
        return 0
    try:
        cfg = SimConfig(
            n=n,
            p=p,
            cfl=float(table.get("cfl", 0.4)),
            snapshot_times=list(np.linspace(0.0, p.T, n_snapshots)),
            init="wellprepared_vortex",
            init_params={"amplitude": amplitude},
        )
    except ValueError as err:
        raise ValidationError(str(err), field="relative_energy") from err
    traj = run(cfg)
    U = steady_vortex_velocity(n, amplitude)
    monitor = relative_energy_monitor(
        traj, U, p, kappa_eps=float(table.get("kappa_eps", 1.0))
    )
    (out / "relative_energy.json").write_text(canonical_json(monitor))
    print(canonical_json({"e_rel_final": monitor["e_rel"][-1], "passed": monitor["passed"]}))
    if table.get("assert_bound", False) and not monitor["passed"]:
        raise CheckFailed("relative-energy bound check failed")
    return 0


def cmd_residual(table, out: Path, seed: int, dry: bool):
    kind = table.get("kind", "weak")
    if kind == "weak":
        p = _params_from(table, "residual")
        n = _require(table, "n", int, "residual")
        n_snapshots = int(table.get("n_snapshots", 17))
        plan = {"action": "residual", "kind": "weak", "n": n}
        if dry:
            print(canonical_json(plan))
            return 0
        try:
            cfg = SimConfig(
                n=n,
                p=p,
                cfl=float(table.get("cfl", 0.4)),
                snapshot_times=list(np.linspace(0.0, p.T, n_snapshots)),
                init=table.get("init", "wellprepared_vortex"),
                init_params=table.get("init_params", {"amplitude": 0.05}),
            )
        except ValueError as err:
            raise ValidationError(str(err), field="residual") from err
        res = weak_residual(run(cfg), k_max=int(table.get("k_max", 2)))
        doc = {"kind": "weak", "max_residual": res["max_residual"], "rows": res["rows"]}
    elif kind == "operator":
        freq = [int(k) for k in _require(table, "freq", list, "residual")]
        if len(freq) != 3:
            raise ValidationError("residual.freq needs 3 integers", field="residual.freq")
        basis_index = int(table.get("basis_index", 0))
        n_t = int(table.get("n_t", 16))
        n_x = int(table.get("n_x", 16))
        perturb = float(table.get("perturb", 0.0))
        plan = {"action": "residual", "kind": "operator", "freq": freq}
        if dry:
            print(canonical_json(plan))
            return 0
        op = RelaxedEulerOperator(2)
        eta = physical_frequency(np.array(freq), 1.0)
        basis = op.kernel(eta)
        if not 0 <= basis_index < basis.shape[0]:
            raise ValidationError(
                f"basis_index out of range 0..{basis.shape[0]-1}", field="residual.basis_index"
            )
        amp = basis[basis_index]
        field = kernel_plane_wave(op, freq, amp, n_t=n_t, n_x=n_x, T=1.0)
        if perturb:
            rng = np.random.default_rng(seed)
            bad = rng.normal(size=6)
            t = np.arange(n_t) / n_t
            x = np.arange(n_x) / n_x
            phase = (
                freq[0] * t[:, None, None]
                + freq[1] * x[None, :, None]
                + freq[2] * x[None, None, :]
            )
            field = field + perturb * np.sin(2 * np.pi * phase)[..., None] * bad
        value = ae_residual_negative_norm(op, field, T=1.0, window=table.get("window", "none"))
        doc = {"kind": "operator", "freq": freq, "perturb": perturb, "residual": value}
    else:
        raise ValidationError(f"unknown residual kind {kind!r}", field="residual.kind")
    (out / "residual.json").write_text(canonical_json(doc))
    print(canonical_json({"residual": doc.get("max_residual", doc.get("residual"))}))
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "ladder": cmd_ladder,
    "jensen": cmd_jensen,
    "wavecone": cmd_wavecone,
    "envelope": cmd_envelope,
    "relative-energy": cmd_relative_energy,
    "residual": cmd_residual,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowmach",
        description="Low Mach number limit laboratory for isentropic Euler flows.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"lowmach {__version__} (report schema v{SCHEMA_VERSION}, snapshot format v{SNAPSHOT_VERSION})",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML or JSON config file")
        sp.add_argument("--output-dir", default=".", help="artifact directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dry-run", action="store_true", help="validate and print the plan")
        sp.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT threads")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=args.threads)
        except ImportError:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
    try:
        config = load_config(args.config)
        key = args.subcommand.replace("-", "_")
        table = config.get(key)
        if table is None:
            raise ValidationError(f"config has no [{key}] table", field=key)
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.subcommand](table, out, args.seed, args.dry_run)
    except ValidationError as err:
        print(_error_record("validation", err, field=err.field), file=sys.stderr)
        return 2
    except DensityFloorError as err:
        print(
            _error_record("numerical_abort", err, time=err.time, min_rho=err.min_rho),
            file=sys.stderr,
        )
        return 3
    except LadderRunError as err:
        print(_error_record("numerical_abort", err), file=sys.stderr)
        return 3
    except CheckFailed as err:
        print(_error_record("check_failed", err), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
