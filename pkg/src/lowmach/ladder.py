"""Mach-ladder orchestration: run the solver across decreasing eps, lift the
trajectories, and check every limit diagnostic that is measurable at desk
scale.

Two ladder shapes are supported.  A shared-n ladder isolates the eps
dependence (concentration rate, lift bounds, Jensen checks).  A joint
ladder refines the grid alongside eps; the first-order flux has numerical
viscosity ~ c h ~ h/sqrt(eps), so limit statements of the form
"residual -> 0" are only observable when h shrinks with eps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .jensen import EnvelopeBudgets, JensenReport, jensen_report
from .measures import (
    TestDictionary,
    YoungMeasure,
    empirical_from_field,
    ym_distance,
)
from .solver import (
    DensityFloorError,
    SimConfig,
    Trajectory,
    run,
    steady_vortex_velocity,
)
from .states import Params, scaled_pressure_deviation


class LadderRunError(RuntimeError):
    """Solver failure annotated with the ladder position."""


@dataclass
class MachLadder:
    """A decreasing eps sequence with a shared run template.

    ``n`` may be a single grid size (shared-n ladder) or one per eps (joint
    (eps, h) refinement).
    """

    eps_list: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    n: int | tuple = 64
    T: float = 0.5
    gamma: float = 2.0
    rho_bar: float = 1.0
    cfl: float = 0.4
    n_snapshots: int = 33
    init: str = "wellprepared_vortex"
    init_params: dict = dataclass_field(default_factory=lambda: {"amplitude": 0.05})

    def __post_init__(self):
        eps = list(self.eps_list)
        if len(eps) < 1 or any(e <= 0 for e in eps):
            raise ValueError("eps_list must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if isinstance(self.n, int):
            self.n = tuple([self.n] * len(eps))
        else:
            self.n = tuple(self.n)
            if len(self.n) != len(eps):
                raise ValueError("need one grid size per eps")
        self.eps_list = tuple(eps)

    def configs(self):
        times = list(np.linspace(0.0, self.T, self.n_snapshots))
        for eps, n in zip(self.eps_list, self.n):
            p = Params(d=2, gamma=self.gamma, eps=eps, rho_bar=self.rho_bar, T=self.T)
            yield SimConfig(
                n=n,
                p=p,
                cfl=self.cfl,
                snapshot_times=times,
                init=self.init,
                init_params=dict(self.init_params),
            )


@dataclass
class LadderEntry:
    eps: float
    config: SimConfig
    trajectory: Trajectory
    lifted: np.ndarray  # (n_snapshots, n, n, 3): (u, scaled pressure) per cell

    @property
    def n(self) -> int:
        return self.config.n


def run_ladder(ladder: MachLadder) -> list[LadderEntry]:
    """Full solver run per eps plus the pressure lift of every snapshot."""
    entries = []
    for cfg in ladder.configs():
        try:
            traj = run(cfg)
        except DensityFloorError as err:
            raise LadderRunError(f"eps={cfg.p.eps}: {err}") from err
        rho = np.array([s.rho for s in traj.snapshots])
        u = np.array([s.u for s in traj.snapshots])
        P = scaled_pressure_deviation(rho, cfg.p)
        lifted = np.concatenate([u, P[..., None]], axis=3)
        entries.append(LadderEntry(cfg.p.eps, cfg, traj, lifted))
    return entries


# -- concentration and lift bounds -------------------------------------------


def _spacetime_l2(traj: Trajectory, values: np.ndarray) -> float:
    """L^2((0,T) x T^2) norm of per-snapshot fields by time trapezoid."""
    times = traj.times()
    w = np.empty(len(times))
    w[1:-1] = 0.5 * (times[2:] - times[:-2])
    w[0] = 0.5 * (times[1] - times[0])
    w[-1] = 0.5 * (times[-1] - times[-2])
    sq = (values**2).mean(axis=(1, 2))
    return float(np.sqrt((sq * w).sum()))


def concentration_rate(entries: list[LadderEntry]) -> dict:
    """Fit of log ||rho - rho_bar||_{L^2} against log eps.

    Passes when the slope is >= 0.45 and the ratios ||.||/sqrt(eps) show no
    growth trend (single-constant surrogate: last <= 2x median).
    """
    if len(entries) < 3:
        raise ValueError("need at least 3 ladder points for a rate fit")
    eps = np.array([e.eps for e in entries])
    norms = np.array(
        [
            _spacetime_l2(e.trajectory, np.array([s.rho for s in e.trajectory.snapshots]) - e.config.p.rho_bar)
            for e in entries
        ]
    )
    coeffs, residuals, *_ = np.polyfit(np.log(eps), np.log(norms), 1, full=True)
    slope = float(coeffs[0])
    fit_residual = float(residuals[0]) if len(residuals) else 0.0
    ratios = norms / np.sqrt(eps)
    pass_bound = bool(ratios[-1] <= 2.0 * np.median(ratios))
    return {
        "eps": eps.tolist(),
        "norms": norms.tolist(),
        "slope": slope,
        "fit_residual": fit_residual,
        "C": float(ratios.max()),
        "ratios": ratios.tolist(),
        "pass_slope": bool(slope >= 0.45),
        "pass_bound": pass_bound,
        "passed": bool(slope >= 0.45 and pass_bound),
    }


def lift_uniform_bound(entries: list[LadderEntry]) -> dict:
    """Sup of the scaled pressure lift per eps; passes without growth trend
    (last value <= 2x ladder median)."""
    sups = np.array([np.abs(e.lifted[..., 2]).max() for e in entries])
    passed = bool(sups[-1] <= 2.0 * np.median(sups))
    return {
        "eps": [e.eps for e in entries],
        "lift_sup": sups.tolist(),
        "sup": float(sups.max()),
        "passed": passed,
    }


# -- limit measure extraction -------------------------------------------------


def extract_limit_measure(
    entries: list[LadderEntry],
    coarsen: int = 8,
    coarsen_t: int = 4,
    dictionary: TestDictionary | None = None,
) -> dict:
    """Empirical (u, P) measures per eps on a common coarse grid, with the
    Cauchy table of dictionary-window distances between consecutive rungs.

    ``coarsen`` is the spatial factor on the finest rung; coarser rungs get
    the factor that lands them on the same coarse grid.  The snapshot at
    t=0 is dropped so that the remaining n_snapshots-1 slices pool into
    time slabs of ``coarsen_t``.
    """
    target = entries[-1].n // coarsen
    if target < 1 or entries[-1].n % coarsen:
        raise ValueError("coarsen must divide the finest grid")
    measures = []
    for e in entries:
        if e.n % target:
            raise ValueError(f"grid {e.n} not reducible to {target} cells per axis")
        mu = empirical_from_field(
            e.lifted[1:], coarsen=e.n // target, T=e.config.p.T, coarsen_t=coarsen_t
        )
        measures.append(mu)
    if dictionary is None:
        radius = max(mu.support_radius() for mu in measures)
        dictionary = TestDictionary.monomials_with_cutoff(
            3, radius=max(1.0, radius), max_degree=4
        )
    cauchy = [
        {
            "eps_coarse": entries[i].eps,
            "eps_fine": entries[i + 1].eps,
            "distance": ym_distance(measures[i], measures[i + 1], dictionary),
        }
        for i in range(len(measures) - 1)
    ]
    return {"measures": measures, "limit": measures[-1], "cauchy": cauchy}


# -- augmented-solution residual ----------------------------------------------


def _axis_mode_integrals(k: int, bounds: np.ndarray) -> np.ndarray:
    """Exact integrals of e^{2 pi i k s} over the cells of one axis."""
    if k == 0:
        return np.diff(bounds).astype(complex)
    w = 2j * np.pi * k
    return (np.exp(w * bounds[1:]) - np.exp(w * bounds[:-1])) / w


def _time_bump(t, T):
    return np.cos(0.5 * np.pi * np.asarray(t, dtype=float) / T) ** 2


def augmented_solution_residual(
    mu: YoungMeasure, u0: np.ndarray, k_max: int = 4
) -> dict:
    """Weak residuals of the incompressible system for a (u, P) measure.

    Tests are trig modes (|k|_inf <= k_max) times a C^1 bump vanishing at
    t=T; cell moments are piecewise constant, so the spatial integrals of
    the test functions are taken exactly per cell and the time integral of
    the bump derivative telescopes.  The divergence residual is reported
    per time slab and maximized.  ``u0`` is the fine initial velocity
    field; it is block-averaged onto the measure grid for the boundary
    term.
    """
    if mu.m != 3:
        raise ValueError("expected a measure over (u, P) states")
    g = mu.grid
    T, nt, nx = g.T, g.n_t, g.n_x
    mean_u = mu.moment_field(lambda pts: pts[:, :2], 2)
    mean_uu = mu.moment_field(
        lambda pts: np.stack(
            [pts[:, 0] ** 2, pts[:, 0] * pts[:, 1], pts[:, 1] ** 2], axis=1
        ),
        3,
    )
    mean_P = mu.pair_field(lambda pts: pts[:, 2])

    tb = np.linspace(0.0, T, nt + 1)
    xb = np.linspace(0.0, 1.0, nx + 1)
    f = u0.shape[0] // nx
    if u0.shape[0] % nx:
        raise ValueError("initial field does not reduce to the measure grid")
    u0c = u0.reshape(nx, f, nx, f, 2).mean(axis=(1, 3))

    # per-slab integrals of the bump and its derivative (exact)
    dchi = _time_bump(tb[1:], T) - _time_bump(tb[:-1], T)
    nodes, gw = np.polynomial.legendre.leggauss(8)
    mid, half = 0.5 * (tb[1:] + tb[:-1]), 0.5 * np.diff(tb)
    chi = np.array(
        [(gw * _time_bump(m + h * nodes, T) * h).sum() for m, h in zip(mid, half)]
    )
    chi0 = float(_time_bump(0.0, T))

    momentum_rows = []
    divergence_rows = []
    for kx in range(0, k_max + 1):
        for ky in range(-k_max, k_max + 1):
            if kx == 0 and ky < 0:
                continue
            cell = np.outer(_axis_mode_integrals(kx, xb), _axis_mode_integrals(ky, xb))
            w = 2j * np.pi
            for trig in ("cos", "sin"):
                if trig == "sin" and kx == 0 and ky == 0:
                    continue
                part = np.real if trig == "cos" else np.imag
                ci = part(cell)
                gx, gy = part(w * kx * cell), part(w * ky * cell)
                for i in range(2):
                    term_dt = (dchi[:, None, None] * mean_u[..., i] * ci[None]).sum()
                    uu_i = mean_uu[..., [0, 1]] if i == 0 else mean_uu[..., [1, 2]]
                    term_grad = (
                        chi[:, None, None]
                        * (uu_i[..., 0] * gx[None] + uu_i[..., 1] * gy[None])
                    ).sum()
                    gdiv = gx if i == 0 else gy
                    term_P = (chi[:, None, None] * mean_P * gdiv[None]).sum()
                    boundary = chi0 * (u0c[..., i] * ci).sum()
                    momentum_rows.append(
                        {
                            "mode": (kx, ky),
                            "trig": trig,
                            "direction": i,
                            "residual": abs(float(term_dt + term_grad + term_P + boundary)),
                        }
                    )
                if kx == 0 and ky == 0:
                    continue
                per_slab = np.abs(
                    (mean_u[..., 0] * gx[None] + mean_u[..., 1] * gy[None]).sum(
                        axis=(1, 2)
                    )
                )
                divergence_rows.append(
                    {
                        "mode": (kx, ky),
                        "trig": trig,
                        "residual": float(per_slab.max()),
                    }
                )
    return {
        "momentum": momentum_rows,
        "divergence": divergence_rows,
        "max_momentum": max(r["residual"] for r in momentum_rows),
        "max_divergence": max(r["residual"] for r in divergence_rows),
    }


# -- relative energy -----------------------------------------------------------


def relative_energy_monitor(
    traj: Trajectory,
    U: np.ndarray,
    p: Params,
    kappa_eps: float = 1.0,
    tol: float = 1e-9,
) -> dict:
    """Relative energy E_rel(t) = (1/2) int rho |u - U|^2 against a steady
    reference velocity, with a Gronwall-type bound check.

    The admissible slack combines the measured scheme dissipation with an
    eps-sized model term: E_rel(t) <= (E_rel(0) + dissipated(t) +
    kappa_eps sqrt(eps) t) exp(2 t ||grad U||_inf), reported per snapshot.
    """
    U = np.asarray(U, dtype=float)
    n = U.shape[0]
    # spectral sup of |grad U| for the smooth steady reference
    k = np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    grad_sq = np.zeros((n, n))
    for i in range(2):
        uhat = np.fft.fft2(U[:, :, i])
        gx = np.real(np.fft.ifft2(2j * np.pi * kx * uhat))
        gy = np.real(np.fft.ifft2(2j * np.pi * ky * uhat))
        grad_sq += gx**2 + gy**2
    grad_sup = float(np.sqrt(grad_sq.max()))

    times = traj.times()
    h2 = 1.0 / traj.config.n**2
    e_rel = np.array(
        [
            0.5 * float((s.rho * ((s.u - U) ** 2).sum(axis=2)).sum()) * h2
            for s in traj.snapshots
        ]
    )
    E0_series = traj.energy_series
    dissipated = np.array(
        [float(E0_series[0] - np.interp(t, traj.energy_times, E0_series)) for t in times]
    )
    model_error = dissipated + kappa_eps * np.sqrt(p.eps) * times
    bound = (e_rel[0] + model_error) * np.exp(2.0 * grad_sup * times)
    ok = bool(np.all(e_rel <= bound + tol * max(1.0, e_rel.max())))
    return {
        "times": times.tolist(),
        "e_rel": e_rel.tolist(),
        "grad_sup": grad_sup,
        "dissipated": dissipated.tolist(),
        "model_error": model_error.tolist(),
        "bound": bound.tolist(),
        "passed": ok,
    }


# -- Taylor consistency ---------------------------------------------------------


def taylor_consistency(entries: list[LadderEntry]) -> dict:
    """L^1 gap between the exact pressure lift and its linearization.

    gap(t,x) = (rho^g - rb^g)/(eps rb) - g rb^(g-2) (rho - rb)/eps; for
    gamma = 2 this equals (rho - rb)^2/(eps rb) identically.  Passing means
    the spacetime-mean gap decays along the ladder.
    """
    rows = []
    for e in entries:
        p = e.config.p
        rho = np.array([s.rho for s in e.trajectory.snapshots])
        exact = scaled_pressure_deviation(rho, p)
        linear = p.gamma * p.rho_bar ** (p.gamma - 2.0) * (rho - p.rho_bar) / p.eps
        gap = np.abs(exact - linear)
        rows.append(
            {
                "eps": p.eps,
                "gap_l1": float(gap.mean()),
                "gap_max": float(gap.max()),
            }
        )
    gaps = [r["gap_l1"] for r in rows]
    decaying = all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
    return {"rows": rows, "decaying": bool(decaying)}


# -- Jensen necessity ------------------------------------------------------------


def jensen_necessary_check(
    mu: YoungMeasure,
    dictionary: TestDictionary | None = None,
    budgets: EnvelopeBudgets | None = None,
) -> JensenReport:
    """Thm-level necessity as an executable assertion: a measure extracted
    from a genuine low-Mach ladder must never come back ``violated``."""
    return jensen_report(mu, dictionary=dictionary, budgets=budgets)


# -- full report -----------------------------------------------------------------


def build_report(
    ladder: MachLadder,
    coarsen: int = 8,
    coarsen_t: int = 4,
    jensen_budgets: EnvelopeBudgets | None = None,
    with_jensen: bool = True,
) -> dict:
    """Run a ladder and assemble the per-eps diagnostic report."""
    entries = run_ladder(ladder)
    extraction = extract_limit_measure(entries, coarsen=coarsen, coarsen_t=coarsen_t)
    report = {
        "ladder": {
            "eps_list": list(ladder.eps_list),
            "n": list(ladder.n),
            "T": ladder.T,
            "gamma": ladder.gamma,
            "rho_bar": ladder.rho_bar,
            "init": ladder.init,
            "init_params": ladder.init_params,
        },
        "concentration": concentration_rate(entries) if len(entries) >= 3 else None,
        "lift_bound": lift_uniform_bound(entries),
        "cauchy": extraction["cauchy"],
        "taylor": taylor_consistency(entries),
        "energy_excess": [
            {
                "eps": e.eps,
                "excess": float(
                    (e.trajectory.energy_series - e.trajectory.energy_series[0]).max()
                ),
            }
            for e in entries
        ],
        "augmented_residual": [],
    }
    for e, mu in zip(entries, extraction["measures"]):
        res = augmented_solution_residual(mu, e.trajectory.snapshots[0].u)
        report["augmented_residual"].append(
            {
                "eps": e.eps,
                "max_momentum": res["max_momentum"],
                "max_divergence": res["max_divergence"],
            }
        )
    if with_jensen:
        jr = jensen_necessary_check(extraction["limit"], budgets=jensen_budgets)
        report["jensen"] = {
            "violated_cells": jr.count("violated"),
            "certified_cells": jr.count("satisfied_certified"),
            "inconclusive_cells": jr.count("inconclusive"),
            "violated_fraction": jr.violated_fraction,
        }
    report["_entries"] = entries
    report["_measures"] = extraction["measures"]
    return report


# -- canonical serialization ------------------------------------------------------


def _canonical(obj):
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in sorted(obj.items()) if not k.startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    return obj


def canonical_json(doc: dict) -> str:
    """Sorted keys, 17-significant-digit floats; private keys dropped."""
    return json.dumps(_canonical(doc), sort_keys=True, indent=1)


def write_report(report: dict, json_path, csv_path=None) -> None:
    with open(json_path, "w") as fh:
        fh.write(canonical_json(report))
    if csv_path is None:
        return
    rows = []
    conc = report.get("concentration") or {}
    norms = dict(zip(conc.get("eps", []), conc.get("norms", [])))
    lift = dict(zip(report["lift_bound"]["eps"], report["lift_bound"]["lift_sup"]))
    taylor = {r["eps"]: r["gap_l1"] for r in report["taylor"]["rows"]}
    excess = {r["eps"]: r["excess"] for r in report["energy_excess"]}
    resid = {r["eps"]: r for r in report["augmented_residual"]}
    for eps in report["ladder"]["eps_list"]:
        rows.append(
            {
                "eps": f"{eps:.17g}",
                "concentration_l2": f"{norms.get(eps, float('nan')):.17g}",
                "lift_sup": f"{lift.get(eps, float('nan')):.17g}",
                "taylor_gap_l1": f"{taylor.get(eps, float('nan')):.17g}",
                "energy_excess": f"{excess.get(eps, float('nan')):.17g}",
                "residual_momentum": f"{resid[eps]['max_momentum']:.17g}"
                if eps in resid
                else "nan",
                "residual_divergence": f"{resid[eps]['max_divergence']:.17g}"
                if eps in resid
                else "nan",
            }
        )
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
