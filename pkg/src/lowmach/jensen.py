"""Jensen-condition tests and quasiconvex envelope estimators.

Two kinds of statements are produced and they are never mixed:

* ``violated`` comes only from the exact di-atomic criterion (two lifted
  states are wave-cone connected iff their velocity or pressure parts
  coincide; the closed-form determinant decides it).
* ``satisfied_certified`` comes from upper-bound envelope estimates: a
  certified upper bound U_f of the truncated envelope below the measured
  pairing <f> proves the Jensen inequality for f.  Upper bounds can never
  certify a violation, hence the third state ``inconclusive``.

Both envelope estimators return certificates that re-evaluate to their
values by an independent quadrature path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .measures import TestDictionary, TestFunction, YoungMeasure, pair, pushforward
from .operator import RelaxedEulerOperator
from .states import lift_augmented, AugmentedState

VIOLATED = "violated"
CONNECTED = "wave_cone_connected"
CERTIFIED = "satisfied_certified"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class EnvelopeEstimate:
    """Certified upper bound for the truncated quasiconvex envelope."""

    value: float
    certificate: dict
    q_used: float
    bound_kind: str = "upper"


@dataclass(frozen=True)
class JensenCellStatus:
    status: str
    witness: dict | None = None

    def to_json_dict(self) -> dict:
        return {"status": self.status, "witness": self.witness}


@dataclass
class EnvelopeBudgets:
    """Search budgets for the envelope estimators."""

    depth: int = 1
    trials: int = 2
    n_dirs: int = 4
    line_nodes: int = 32
    modes: int = 1
    quad_points: int = 32
    descent_rounds: int = 2
    seed: int = 0


# -- profiles ----------------------------------------------------------------

PROFILE_KINDS = (("sin", 0.0), ("tanh_square", 0.3), ("tanh_square", 0.05))


def profile_values(kind: str, tau: float, s: np.ndarray) -> np.ndarray:
    """1-periodic mean-zero profiles with sup norm exactly 1."""
    if kind == "sin":
        return np.sin(2.0 * np.pi * s)
    if kind == "tanh_square":
        return np.tanh(np.sin(2.0 * np.pi * s) / tau) / math.tanh(1.0 / tau)
    raise ValueError(f"unknown profile kind {kind!r}")


# -- exact di-atomic test ----------------------------------------------------


@dataclass
class DiatomicReport:
    statuses: np.ndarray  # grid of status strings
    violated_fraction: float
    violated_measure: float

    def to_json_dict(self) -> dict:
        return {
            "statuses": self.statuses.tolist(),
            "violated_fraction": self.violated_fraction,
            "violated_measure": self.violated_measure,
        }


def _diatomic_status(u1, P1, u2, P2, tol: float) -> str:
    du = float(np.linalg.norm(np.asarray(u1) - np.asarray(u2)))
    dP = abs(float(P1) - float(P2))
    return VIOLATED if (du > tol and dP > tol) else CONNECTED


def diatomic_jensen_test(
    mu: YoungMeasure, tol: float = 1e-8, rho_tol: float = 1e-10
) -> DiatomicReport:
    """Exact per-cell Jensen test for measures with at most two lifted atoms.

    Cells are ``violated`` iff both the velocity parts and the pressure
    parts differ (equivalently the wave-cone determinant is nonzero);
    otherwise the two states are wave-cone connected.
    """
    if mu.m != 6:
        raise ValueError("expected a measure over lifted states (d=2, N=6)")
    statuses = np.empty(mu.grid.shape, dtype=object)
    violated = 0
    for idx in np.ndindex(mu.grid.shape):
        cell = mu.cells[idx]
        if cell.n_atoms > 2:
            raise ValueError(f"cell {idx} has {cell.n_atoms} atoms, expected <= 2")
        if np.abs(cell.points[:, 0] - 1.0).max() > rho_tol:
            raise ValueError(f"cell {idx} holds non-lifted states")
        if cell.n_atoms == 1:
            statuses[idx] = CONNECTED
            continue
        z1, z2 = cell.points
        u1, u2 = z1[1:3], z2[1:3]
        P1 = z1[5] - (u1 @ u1) / 2.0
        P2 = z2[5] - (u2 @ u2) / 2.0
        statuses[idx] = _diatomic_status(u1, P1, u2, P2, tol)
        violated += statuses[idx] == VIOLATED
    n = mu.grid.n_cells
    total_measure = mu.grid.T  # spacetime volume of (0,T) x T^2
    return DiatomicReport(
        statuses=statuses,
        violated_fraction=violated / n,
        violated_measure=violated / n * total_measure,
    )


# -- laminate estimator ------------------------------------------------------


def _kernel_directions(op: RelaxedEulerOperator, rng, count: int) -> list[np.ndarray]:
    dirs = []
    for _ in range(count):
        eta = rng.normal(size=op.d + 1)
        eta /= np.linalg.norm(eta)
        basis = op.kernel(eta)
        combo = rng.normal(size=basis.shape[0]) @ basis
        dirs.append(combo / np.linalg.norm(combo))
    return dirs


def _check_direction(op: RelaxedEulerOperator, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    report = op.wave_cone_membership(v, tol=1e-6)
    if not report.member:
        raise ValueError("split direction is not in the wave cone")
    return v


def _polish_1d(fun, t0, lo, hi):
    """Bounded scalar polish around a grid minimizer; never worse than t0."""
    res = minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return (float(res.x), float(res.fun)) if res.fun < fun(t0) else (t0, fun(t0))


def _greedy_laminate(f, z, q, depth, rng, op, n_dirs, line_nodes, directions):
    """Greedy symmetric laminate refinement; leaf excursions from the root
    stay within q by budget bookkeeping.  Returns (value, leaves)."""
    z = np.asarray(z, dtype=float)

    def build(y, budget, d):
        fy = float(f(y[None, :])[0])
        if d == 0 or budget <= 1e-12:
            return fy, [(1.0, y)]
        dirs = directions if directions is not None else _kernel_directions(op, rng, n_dirs)
        ts = budget * (np.arange(1, line_nodes + 1) / line_nodes)
        best = (fy, None, 0.0)
        for v in dirs:
            plus = y[None, :] + ts[:, None] * v[None, :]
            minus = y[None, :] - ts[:, None] * v[None, :]
            vals = 0.5 * (f(plus) + f(minus))
            i = int(np.argmin(vals))
            split_val = lambda t, _v=v: 0.5 * (
                float(f((y + t * _v)[None, :])[0]) + float(f((y - t * _v)[None, :])[0])
            )
            t_star, v_star = _polish_1d(split_val, float(ts[i]), 1e-12 * budget, budget)
            if v_star < best[0]:
                best = (v_star, v, t_star)
        if best[1] is None:
            return fy, [(1.0, y)]
        v, t = best[1], best[2]
        val_p, leaves_p = build(y + t * v, budget - t, d - 1)
        val_m, leaves_m = build(y - t * v, budget - t, d - 1)
        value = 0.5 * (val_p + val_m)
        if value >= fy:
            return fy, [(1.0, y)]
        leaves = [(0.5 * w, x) for w, x in leaves_p] + [
            (0.5 * w, x) for w, x in leaves_m
        ]
        return value, leaves

    return build(z, q, depth)


def envelope_upper_laminate(
    f: Callable,
    z: np.ndarray,
    depth: int = 1,
    q: float = 1.0,
    trials: int = 2,
    op: RelaxedEulerOperator | None = None,
    n_dirs: int = 4,
    line_nodes: int = 32,
    seed: int = 0,
    directions: Sequence[np.ndarray] | None = None,
) -> EnvelopeEstimate:
    """Upper bound of the truncated envelope by laminate search.

    Candidate trees of every depth up to ``depth`` are explored over
    ``trials`` random restarts, so the estimate is monotone in both depth
    and q by construction.  ``directions``, when given, replaces the random
    kernel directions (each is checked for wave-cone membership).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    op = op or RelaxedEulerOperator(2)
    z = np.asarray(z, dtype=float)
    if directions is not None:
        directions = [_check_direction(op, v) for v in directions]
    best_value = float(f(z[None, :])[0])
    best_leaves = [(1.0, z)]
    for trial in range(trials):
        for d in range(1, depth + 1):
            rng = np.random.default_rng(np.random.SeedSequence([seed, trial, d]))
            value, leaves = _greedy_laminate(
                f, z, q, d, rng, op, n_dirs, line_nodes, directions
            )
            if value < best_value:
                best_value, best_leaves = value, leaves
    certificate = {
        "kind": "laminate",
        "root": z.tolist(),
        "leaves": [{"weight": w, "state": np.asarray(x).tolist()} for w, x in best_leaves],
    }
    return EnvelopeEstimate(value=best_value, certificate=certificate, q_used=q)


# -- plane-wave estimator ----------------------------------------------------


def _random_mode(op, rng):
    """Random nonzero integer spacetime frequency and unit kernel vector."""
    while True:
        k = rng.integers(-3, 4, size=op.d + 1)
        if k.any():
            break
    basis = op.kernel(k.astype(float))
    combo = rng.normal(size=basis.shape[0]) @ basis
    return k, combo / np.linalg.norm(combo)


def _planewave_objective(f, z, amps, amp_vecs, prof_tables):
    """Tensor midpoint average of f(z + sum_j c_j a_j p_j(s_j))."""
    osc = 0.0
    grids = np.meshgrid(*prof_tables, indexing="ij")
    for c, a, g in zip(amps, amp_vecs, grids):
        osc = osc + c * g.reshape(-1)[:, None] * a[None, :]
    pts = z[None, :] + osc
    return float(np.mean(f(pts)))


def envelope_upper_planewave(
    f: Callable,
    z: np.ndarray,
    modes: int = 1,
    q: float = 1.0,
    quad_points: int = 32,
    trials: int = 2,
    op: RelaxedEulerOperator | None = None,
    descent_rounds: int = 2,
    seed: int = 0,
    modes_spec: Sequence[tuple] | None = None,
) -> EnvelopeEstimate:
    """Upper bound of the truncated envelope by kernel plane-wave search.

    Each trial draws up to ``modes`` kernel plane waves (integer spacetime
    frequencies on the unit torus) and coordinate-descends over their
    amplitudes; the sum of absolute amplitudes is capped at q, so the
    oscillation sup norm stays within the truncation.  ``modes_spec`` may
    pin the modes explicitly as (freq, amp_vector) pairs.
    """
    op = op or RelaxedEulerOperator(2)
    z = np.asarray(z, dtype=float)
    s = (np.arange(quad_points) + 0.5) / quad_points
    best_value = float(f(z[None, :])[0])
    best_cert_modes: list[dict] = []

    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        if modes_spec is not None:
            chosen = []
            for k, a in modes_spec:
                a = np.asarray(a, dtype=float)
                a = a / np.linalg.norm(a)
                resid = np.linalg.norm(op.symbol(np.asarray(k, dtype=float))(a))
                if resid > 1e-10:
                    raise ValueError("mode amplitude is not in the symbol kernel")
                chosen.append((np.asarray(k, dtype=int), a))
        else:
            chosen = [_random_mode(op, rng) for _ in range(modes)]
        profiles = [
            PROFILE_KINDS[rng.integers(0, len(PROFILE_KINDS))] for _ in chosen
        ]
        prof_tables = [profile_values(kind, tau, s) for kind, tau in profiles]
        amp_vecs = [a for _, a in chosen]
        amps = np.zeros(len(chosen))
        value = best_value if not chosen else _planewave_objective(
            f, z, amps, amp_vecs, prof_tables
        )
        for _ in range(descent_rounds):
            for j in range(len(chosen)):
                cap = q - sum(abs(amps[i]) for i in range(len(chosen)) if i != j)
                if cap <= 0:
                    continue
                grid = np.linspace(-cap, cap, 33)
                vals = []
                for c in grid:
                    amps[j] = c
                    vals.append(
                        _planewave_objective(f, z, amps, amp_vecs, prof_tables)
                    )
                i = int(np.argmin(vals))

                def coord_val(c, _j=j):
                    amps[_j] = c
                    return _planewave_objective(f, z, amps, amp_vecs, prof_tables)

                c_star, value = _polish_1d(coord_val, float(grid[i]), -cap, cap)
                amps[j] = c_star
        if value < best_value:
            best_value = value
            best_cert_modes = [
                {
                    "freq": np.asarray(k).tolist(),
                    "amp": a.tolist(),
                    "amplitude": float(c),
                    "profile": {"kind": kind, "tau": tau},
                }
                for (k, a), c, (kind, tau) in zip(chosen, amps, profiles)
            ]
    certificate = {
        "kind": "plane_wave",
        "base": z.tolist(),
        "modes": best_cert_modes,
        "quad_points": quad_points,
    }
    return EnvelopeEstimate(value=best_value, certificate=certificate, q_used=q)


def evaluate_certificate(cert: dict, f: Callable) -> float:
    """Independent re-evaluation of an estimate certificate.

    Plain scalar loops, sharing no code with the estimators' vectorized
    objective evaluation.
    """
    if cert["kind"] == "laminate":
        total = 0.0
        for leaf in cert["leaves"]:
            total += leaf["weight"] * float(f(np.array([leaf["state"]]))[0])
        return total
    if cert["kind"] == "plane_wave":
        base = np.array(cert["base"])
        modes = cert["modes"]
        n = cert["quad_points"]
        if not modes:
            return float(f(base[None, :])[0])
        total = 0.0
        count = 0
        import itertools

        for combo in itertools.product(range(n), repeat=len(modes)):
            y = base.copy()
            for mode, i in zip(modes, combo):
                sval = (i + 0.5) / n
                p = profile_values(
                    mode["profile"]["kind"], mode["profile"]["tau"], np.array([sval])
                )[0]
                y = y + mode["amplitude"] * p * np.array(mode["amp"])
            total += float(f(y[None, :])[0])
            count += 1
        return total / count
    raise ValueError(f"unknown certificate kind {cert['kind']!r}")


# -- segment convexity -------------------------------------------------------


def _lower_hull_value(s_nodes: np.ndarray, g_nodes: np.ndarray, s_star: float) -> float:
    """Value at s_star of the lower convex hull of the node set."""
    pts = sorted(zip(s_nodes, g_nodes))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (p[0] - x1) >= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    xs = np.array([h[0] for h in hull])
    ys = np.array([h[1] for h in hull])
    return float(np.interp(s_star, xs, ys))


def segment_convexity_jensen(
    f: Callable,
    z1: np.ndarray,
    z2: np.ndarray,
    lam: float,
    samples: int = 257,
    op: RelaxedEulerOperator | None = None,
    tol_scale: float = 1e-8,
) -> bool:
    """Classical Jensen sanity check along a wave-cone segment.

    Requires z1 - z2 wave-cone connected.  Computes the 1-D lower convex
    hull of s -> f((1-s) z1 + s z2) and checks
    lam f(z1) + (1-lam) f(z2) >= hull(at the barycenter) up to
    discretization tolerance.
    """
    op = op or RelaxedEulerOperator(2)
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    diff = z1 - z2
    if np.linalg.norm(diff) > 0:
        report = op.wave_cone_membership(diff, tol=1e-6)
        if not report.member:
            raise ValueError("states are not wave-cone connected")
    s_nodes = np.linspace(0.0, 1.0, samples)
    pts = (1.0 - s_nodes)[:, None] * z1[None, :] + s_nodes[:, None] * z2[None, :]
    g_nodes = np.asarray(f(pts), dtype=float)
    hull_at = _lower_hull_value(s_nodes, g_nodes, 1.0 - lam)
    lhs = lam * g_nodes[0] + (1.0 - lam) * g_nodes[-1]
    scale = max(1.0, np.abs(g_nodes).max())
    return bool(lhs >= hull_at - tol_scale * scale)


# -- per-cell Jensen report --------------------------------------------------


def default_jensen_dictionary(
    center: np.ndarray | None = None, p0: float = 0.0
) -> TestDictionary:
    """Dictionary over the lifted state space: coordinates, pairwise
    products, the squared norm, and the determinant-derived function
    (u, P) -> -|u - c|^2 (P - p0) read through the lift."""
    entries = []
    for j in range(6):
        entries.append(
            TestFunction(
                f"coord_{j}", (lambda pts, _j=j: np.atleast_2d(pts)[:, _j]), np.inf, np.inf
            )
        )
    for i in range(6):
        for j in range(i, 6):
            entries.append(
                TestFunction(
                    f"prod_{i}{j}",
                    (lambda pts, _i=i, _j=j: np.atleast_2d(pts)[:, _i] * np.atleast_2d(pts)[:, _j]),
                    np.inf,
                    np.inf,
                )
            )
    entries.append(
        TestFunction("norm_sq", lambda pts: (np.atleast_2d(pts) ** 2).sum(axis=1), np.inf, np.inf)
    )
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)

    def det_derived(pts, _c=c, _p0=p0):
        pts = np.atleast_2d(pts)
        u = pts[:, 1:3]
        P = pts[:, 5] - 0.5 * (u**2).sum(axis=1)
        return -((u - _c[None, :]) ** 2).sum(axis=1) * (P - _p0)

    entries.append(TestFunction("det_derived", det_derived, np.inf, np.inf))
    return TestDictionary(entries)


@dataclass
class JensenReport:
    cells: np.ndarray  # grid of JensenCellStatus
    violated_fraction: float

    def count(self, status: str) -> int:
        return sum(1 for c in self.cells.flat if c.status == status)

    def to_json_dict(self) -> dict:
        return {
            "violated_fraction": self.violated_fraction,
            "cells": [
                {"index": list(idx), **self.cells[idx].to_json_dict()}
                for idx in np.ndindex(self.cells.shape)
            ],
        }


def jensen_report(
    mu: YoungMeasure,
    dictionary: TestDictionary | None = None,
    q: float | None = None,
    budgets: EnvelopeBudgets | None = None,
    op: RelaxedEulerOperator | None = None,
    diatomic_tol: float = 1e-8,
) -> JensenReport:
    """Per-cell Jensen status for a measure over (u, P) states.

    Cells that are di-atomic get the exact determinant criterion; all other
    cells are checked against certified envelope upper bounds at the lifted
    barycenter.  The truncation q defaults to 8R with R the measured
    support radius of the lifted measure.
    """
    if mu.m != 3:
        raise ValueError("expected a measure over (u, P) states (m = 3)")
    if dictionary is None:
        dictionary = default_jensen_dictionary()
    if len(dictionary) == 0:
        raise ValueError("dictionary must not be empty")
    budgets = budgets or EnvelopeBudgets()
    op = op or RelaxedEulerOperator(2)

    def lift_block(pts):
        return np.array(
            [lift_augmented(AugmentedState(row[:2], row[2])).to_vector() for row in pts]
        )

    lifted = mu.map_cells(lambda nu: pushforward(nu, lift_block), 6)
    if q is None:
        q = 8.0 * lifted.support_radius()

    cells = np.empty(mu.grid.shape, dtype=object)
    violated = 0
    for idx in np.ndindex(mu.grid.shape):
        cell = lifted.cells[idx]
        if cell.n_atoms <= 2:
            if cell.n_atoms == 1:
                cells[idx] = JensenCellStatus(CERTIFIED, {"reason": "atomic"})
                continue
            z1, z2 = cell.points
            u1, u2 = z1[1:3], z2[1:3]
            P1 = z1[5] - (u1 @ u1) / 2.0
            P2 = z2[5] - (u2 @ u2) / 2.0
            status = _diatomic_status(u1, P1, u2, P2, diatomic_tol)
            if status == VIOLATED:
                det = op.diatomic_determinant(z1, z2).det
                cells[idx] = JensenCellStatus(
                    VIOLATED, {"reason": "diatomic_determinant", "det": det}
                )
                violated += 1
            else:
                cells[idx] = JensenCellStatus(
                    CERTIFIED, {"reason": "wave_cone_connected"}
                )
            continue
        barycenter = cell.barycenter()
        status = CERTIFIED
        witness = None
        for fdict in dictionary:
            measured = pair(cell, fdict)
            lam = envelope_upper_laminate(
                fdict,
                barycenter,
                depth=budgets.depth,
                q=q,
                trials=budgets.trials,
                op=op,
                n_dirs=budgets.n_dirs,
                line_nodes=budgets.line_nodes,
                seed=budgets.seed,
            )
            pw = envelope_upper_planewave(
                fdict,
                barycenter,
                modes=budgets.modes,
                q=q,
                quad_points=budgets.quad_points,
                trials=budgets.trials,
                op=op,
                descent_rounds=budgets.descent_rounds,
                seed=budgets.seed,
            )
            upper = min(lam.value, pw.value)
            if measured < upper - 1e-12 * max(1.0, abs(upper)):
                status = INCONCLUSIVE
                witness = {
                    "test_function": fdict.name,
                    "pairing": float(measured),
                    "upper_estimate": float(upper),
                    "gap": float(upper - measured),
                }
                break
        cells[idx] = JensenCellStatus(status, witness)
    return JensenReport(cells=cells, violated_fraction=violated / mu.grid.n_cells)
