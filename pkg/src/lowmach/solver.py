"""Explicit finite-volume solver for isentropic Euler on the periodic torus.

First-order Rusanov (local Lax-Friedrichs) flux, forward-Euler time
stepping, acoustic CFL dt = cfl * h / max(|u| + c).  States are held in
velocity form (rho, u) and converted to conservative variables (rho, rho u)
around each update, which keeps mass and momentum conservation exact on the
periodic domain while staying in the regime where both formulations agree
(density bounded away from zero; a floor breach aborts, never clips).

The stiff pressure rho^gamma / eps makes the sound speed scale like
1/sqrt(eps): runs at small eps are dominated by acoustics and cost
O(1/sqrt(eps)) steps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .states import Params

DENSITY_FLOOR = 1e-8
SNAPSHOT_MAGIC = b"LMSN"
SNAPSHOT_VERSION = 1


class DensityFloorError(RuntimeError):
    """Raised when the density drops below the positivity floor."""

    def __init__(self, time: float, min_rho: float):
        self.time = time
        self.min_rho = min_rho
        super().__init__(
            f"density floor breached at t={time:.6g}: min rho = {min_rho:.3e}"
        )


@dataclass(frozen=True)
class FieldState:
    """Periodic-grid fields: rho (n, n) positive, u (n, n, 2)."""

    rho: np.ndarray
    u: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"rho must be square, got {rho.shape}")
        if u.shape != rho.shape + (2,):
            raise ValueError(f"u shape {u.shape} does not match rho {rho.shape}")
        if not np.all(np.isfinite(rho)) or not np.all(np.isfinite(u)):
            raise ValueError("fields must be finite")
        if rho.min() <= 0:
            raise ValueError(f"density must be positive, min = {rho.min()}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.rho.shape[0]


@dataclass
class SimConfig:
    n: int
    p: Params
    cfl: float = 0.4
    snapshot_times: list = dataclass_field(default_factory=list)
    flux: str = "rusanov"
    init: str = "wellprepared_vortex"
    init_params: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"need n >= 16, got {self.n}")
        if not 0.0 < self.cfl <= 0.45:
            raise ValueError(f"cfl must be in (0, 0.45], got {self.cfl}")
        if self.flux != "rusanov":
            raise ValueError(f"unknown flux {self.flux!r}")


@dataclass
class Trajectory:
    snapshots: list
    config: SimConfig
    energy_times: np.ndarray = dataclass_field(default=None)
    energy_series: np.ndarray = dataclass_field(default=None)

    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])


def sound_speed(rho, p: Params):
    """c = sqrt(gamma rho^(gamma-1) / eps)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("sound speed undefined for nonpositive density")
    return np.sqrt(p.gamma * rho ** (p.gamma - 1.0) / p.eps)


def _pressure(rho, p: Params):
    return rho**p.gamma / p.eps


def _rusanov_divergence(rho, u, p: Params, h: float):
    """Flux divergence of the conservative variables (rho, rho u)."""
    c = np.sqrt(p.gamma * rho ** (p.gamma - 1.0) / p.eps)
    P = _pressure(rho, p)
    m = rho[:, :, None] * u
    W = np.concatenate([rho[:, :, None], m], axis=2)  # (n, n, 3)

    div = np.zeros_like(W)
    for axis in (0, 1):
        un = u[:, :, axis]
        # physical flux along this axis
        F = np.empty_like(W)
        F[:, :, 0] = m[:, :, axis]
        F[:, :, 1] = m[:, :, 0] * un
        F[:, :, 2] = m[:, :, 1] * un
        F[:, :, 1 + axis] += P
        # interface between cell i and i+1 along `axis`, stored at i
        WR = np.roll(W, -1, axis=axis)
        FR = np.roll(F, -1, axis=axis)
        s = np.maximum(np.abs(un) + c, np.roll(np.abs(un) + c, -1, axis=axis))
        Fhat = 0.5 * (F + FR) - 0.5 * s[:, :, None] * (WR - W)
        div += (Fhat - np.roll(Fhat, 1, axis=axis)) / h
    return div


def step(state: FieldState, p: Params, cfl: float, dt_max: float | None = None):
    """One conservative Rusanov update; returns (new_state, dt)."""
    n = state.n
    h = 1.0 / n
    c = sound_speed(state.rho, p)
    speed = np.linalg.norm(state.u, axis=2) + c
    dt = cfl * h / speed.max()
    if dt_max is not None:
        dt = min(dt, dt_max)

    div = _rusanov_divergence(state.rho, state.u, p, h)
    rho_new = state.rho - dt * div[:, :, 0]
    m_new = state.rho[:, :, None] * state.u - dt * div[:, :, 1:]
    if rho_new.min() < DENSITY_FLOOR:
        raise DensityFloorError(state.time + dt, float(rho_new.min()))
    u_new = m_new / rho_new[:, :, None]
    return FieldState(rho_new, u_new, state.time + dt), dt


def energy_total(state: FieldState, p: Params) -> float:
    """Cell-sum quadrature of (1/2) rho |u|^2 + rho^gamma / ((gamma-1) eps)."""
    h2 = 1.0 / state.n**2
    kinetic = 0.5 * state.rho * (state.u**2).sum(axis=2)
    internal = state.rho**p.gamma / ((p.gamma - 1.0) * p.eps)
    return float((kinetic + internal).sum() * h2)


def energy_relative_wellprepared(
    state: FieldState, p: Params, U: np.ndarray | None = None
) -> float:
    """Shifted energy relative to (rho_bar, U): the affine part of rho^gamma
    at rho_bar is subtracted so the value stays finite uniformly in eps."""
    h2 = 1.0 / state.n**2
    U = np.zeros_like(state.u) if U is None else np.asarray(U, dtype=float)
    kinetic = 0.5 * state.rho * ((state.u - U) ** 2).sum(axis=2)
    rb = p.rho_bar
    internal = (
        state.rho**p.gamma
        - p.gamma * rb ** (p.gamma - 1.0) * (state.rho - rb)
        - rb**p.gamma
    ) / ((p.gamma - 1.0) * p.eps)
    return float((kinetic + internal).sum() * h2)


def run(config: SimConfig) -> Trajectory:
    """Integrate to T, landing exactly on requested snapshot times."""
    state = init_recipes(config.init, config.n, config.p, **config.init_params)
    p = config.p
    targets = sorted(t for t in set(config.snapshot_times) if 0.0 <= t <= p.T)
    snapshots = []
    if targets and targets[0] == 0.0:
        snapshots.append(state)
        targets = targets[1:]
    energy_times = [0.0]
    energies = [energy_total(state, p)]

    t_end = p.T
    while state.time < t_end - 1e-14:
        next_stop = targets[0] if targets else t_end
        state, _ = step(state, p, config.cfl, dt_max=next_stop - state.time)
        energy_times.append(state.time)
        energies.append(energy_total(state, p))
        if targets and state.time >= targets[0] - 1e-14:
            snapshots.append(state)
            targets = targets[1:]
    return Trajectory(
        snapshots=snapshots,
        config=config,
        energy_times=np.array(energy_times),
        energy_series=np.array(energies),
    )


def admissibility_check(traj: Trajectory, tol: float = 1e-10):
    """Energy series must stay below the initial energy (up to tolerance).

    Returns (admissible, max_excess): the worst value of E(t) - E(0).
    """
    E0 = traj.energy_series[0]
    excess = float((traj.energy_series - E0).max())
    return excess <= tol * max(1.0, abs(E0)), excess


# -- initial data recipes ----------------------------------------------------


def cell_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def init_recipes(name: str, n: int, p: Params, **params) -> FieldState:
    """Named initial-data recipes on the unit torus.

    * ``wellprepared_vortex``: rho = rho_bar, u = perp-gradient of
      A sin(2 pi x) sin(2 pi y) (divergence-free; the stream function is a
      Laplacian eigenfunction, so the flow is a steady Euler solution).
    * ``shear``: rho = rho_bar, u = (a sin(2 pi y), 0).
    * ``illprepared_acoustic``: rho = rho_bar (1 + delta sin(2 pi x)), u = 0.
    """
    x = cell_centers(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    rho = np.full((n, n), p.rho_bar)
    u = np.zeros((n, n, 2))
    if name == "wellprepared_vortex":
        A = params.get("amplitude", 0.05)
        u[:, :, 0] = -2.0 * np.pi * A * np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
        u[:, :, 1] = 2.0 * np.pi * A * np.cos(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    elif name == "shear":
        a = params.get("amplitude", 0.1)
        u[:, :, 0] = a * np.sin(2 * np.pi * Y)
    elif name == "illprepared_acoustic":
        delta = params.get("delta", 0.05)
        rho = p.rho_bar * (1.0 + delta * np.sin(2 * np.pi * X))
    else:
        raise ValueError(f"unknown recipe {name!r}")
    return FieldState(rho, u, 0.0)


def steady_vortex_velocity(n: int, amplitude: float = 0.05) -> np.ndarray:
    """The analytic steady-vortex velocity sampled at cell centers."""
    x = cell_centers(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = np.empty((n, n, 2))
    u[:, :, 0] = -2.0 * np.pi * amplitude * np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    u[:, :, 1] = 2.0 * np.pi * amplitude * np.cos(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    return u


# -- weak residuals (Def of measure-valued solutions, atomic case) -----------


def _spatial_modes(k_max: int):
    """Integer modes (kx, ky) with |k|_inf <= k_max, one per +-k pair."""
    modes = []
    for kx in range(0, k_max + 1):
        for ky in range(-k_max, k_max + 1):
            if kx == 0 and ky < 0:
                continue
            modes.append((kx, ky))
    return modes


def _time_factor(kind: str, t: np.ndarray, T: float):
    """C^1 factors supported in [0, T) and their derivatives."""
    base = np.cos(0.5 * np.pi * t / T) ** 2
    dbase = -0.5 * np.pi / T * np.sin(np.pi * t / T)
    w = 2.0 * np.pi * t / T
    if kind == "bump":
        return base, dbase
    if kind == "bump_cos":
        return base * np.cos(w), dbase * np.cos(w) - base * np.sin(w) * 2.0 * np.pi / T
    if kind == "bump_sin":
        return base * np.sin(w), dbase * np.sin(w) + base * np.cos(w) * 2.0 * np.pi / T
    raise ValueError(kind)


def _piecewise_linear_weights(times: np.ndarray, factor, n_gauss: int = 8):
    """Weights W_j with sum_j W_j F_j ~= integral factor(t) F(t) dt for F
    piecewise linear between snapshot times (exact up to the Gauss error of
    the analytic factor)."""
    nodes, gw = np.polynomial.legendre.leggauss(n_gauss)
    W = np.zeros(len(times))
    for j in range(len(times) - 1):
        a, b = times[j], times[j + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        tq = mid + half * nodes
        fq = factor(tq) * half
        lam = (tq - a) / (b - a)
        W[j] += (gw * fq * (1.0 - lam)).sum()
        W[j + 1] += (gw * fq * lam).sum()
    return W


def weak_residual(
    traj: Trajectory,
    k_max: int = 4,
    time_factor_kinds: tuple = ("bump", "bump_cos", "bump_sin"),
) -> dict:
    """Weak residuals of both conservation laws against C^1 spacetime tests.

    Test functions are trigonometric modes in x (|k|_inf <= k_max) times
    C^1 time factors supported in [0, T); the initial-data boundary term is
    included.  Snapshot fields are interpolated linearly in time and the
    analytic time factors are integrated with per-interval Gauss rules, so
    exact solutions register at round-off level.
    """
    if len(traj.snapshots) < 16:
        raise ValueError("need at least 16 snapshots for the time quadrature")
    p = traj.config.p
    n = traj.config.n
    h2 = 1.0 / n**2
    times = traj.times()
    x = cell_centers(n)
    X, Y = np.meshgrid(x, x, indexing="ij")

    rho = np.array([s.rho for s in traj.snapshots])  # (nt, n, n)
    u = np.array([s.u for s in traj.snapshots])  # (nt, n, n, 2)
    m = rho[..., None] * u
    mom_flux = m[..., :, None] * u[..., None, :]  # rho u_i u_a -> (nt,n,n,i,a)
    press = rho**p.gamma / p.eps
    rho0, m0 = rho[0], m[0]

    rows = []
    for kx, ky in _spatial_modes(k_max):
        phase = 2.0 * np.pi * (kx * X + ky * Y)
        for trig in ("cos", "sin"):
            if trig == "sin" and kx == 0 and ky == 0:
                continue
            tau = np.cos(phase) if trig == "cos" else np.sin(phase)
            dtau_dx = (
                -2.0 * np.pi * kx * np.sin(phase)
                if trig == "cos"
                else 2.0 * np.pi * kx * np.cos(phase)
            )
            dtau_dy = (
                -2.0 * np.pi * ky * np.sin(phase)
                if trig == "cos"
                else 2.0 * np.pi * ky * np.cos(phase)
            )
            grad_tau = (dtau_dx, dtau_dy)

            # continuity: A(t) = int tau rho, B(t) = int grad tau . m
            A_cont = (rho * tau).sum(axis=(1, 2)) * h2
            B_cont = (m[..., 0] * dtau_dx + m[..., 1] * dtau_dy).sum(axis=(1, 2)) * h2
            C_cont = (rho0 * tau).sum() * h2
            # momentum, direction i: A = int tau m_i,
            # B = int sum_a d_a tau (rho u_i u_a) + (rho^g/eps) d_i tau
            A_mom = [(m[..., i] * tau).sum(axis=(1, 2)) * h2 for i in range(2)]
            B_mom = [
                (
                    mom_flux[..., i, 0] * dtau_dx
                    + mom_flux[..., i, 1] * dtau_dy
                    + press * grad_tau[i]
                ).sum(axis=(1, 2))
                * h2
                for i in range(2)
            ]
            C_mom = [(m0[..., i] * tau).sum() * h2 for i in range(2)]

            for kind in time_factor_kinds:
                chi = lambda tq, _k=kind: _time_factor(_k, tq, p.T)[0]
                dchi = lambda tq, _k=kind: _time_factor(_k, tq, p.T)[1]
                Wd = _piecewise_linear_weights(times, dchi)
                Wc = _piecewise_linear_weights(times, chi)
                chi0 = float(chi(np.array([0.0]))[0])
                res_cont = Wd @ A_cont + Wc @ B_cont + chi0 * C_cont
                rows.append(
                    {
                        "equation": "continuity",
                        "mode": (kx, ky),
                        "trig": trig,
                        "time_factor": kind,
                        "residual": abs(float(res_cont)),
                    }
                )
                for i in range(2):
                    res_mom = Wd @ A_mom[i] + Wc @ B_mom[i] + chi0 * C_mom[i]
                    rows.append(
                        {
                            "equation": "momentum",
                            "direction": i,
                            "mode": (kx, ky),
                            "trig": trig,
                            "time_factor": kind,
                            "residual": abs(float(res_mom)),
                        }
                    )
    return {"rows": rows, "max_residual": max(r["residual"] for r in rows)}


# -- snapshot files ----------------------------------------------------------


def write_snapshot(path, state: FieldState, p: Params) -> None:
    """Binary snapshot: header {magic, version, n, d, time, gamma, eps,
    rho_bar}, then row-major float64 rho followed by the u components."""
    header = SNAPSHOT_MAGIC + struct.pack(
        "<III", SNAPSHOT_VERSION, state.n, 2
    ) + struct.pack("<dddd", state.time, p.gamma, p.eps, p.rho_bar)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(state.rho.astype("<f8").tobytes())
        fh.write(state.u[:, :, 0].astype("<f8").tobytes())
        fh.write(state.u[:, :, 1].astype("<f8").tobytes())


def read_snapshot(path):
    """Read a snapshot file; returns (FieldState, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        version, n, d = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION or d != 2:
            raise ValueError(f"unsupported snapshot version {version} / d={d}")
        time, gamma, eps, rho_bar = struct.unpack("<dddd", fh.read(32))
        rho = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
        ux = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
        uy = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    u = np.stack([ux, uy], axis=2)
    header = {
        "version": version,
        "n": n,
        "d": d,
        "time": time,
        "gamma": gamma,
        "eps": eps,
        "rho_bar": rho_bar,
    }
    return FieldState(rho.copy(), u, time), header


def write_energy_sidecar(path, traj: Trajectory) -> None:
    doc = {
        "times": traj.energy_times.tolist(),
        "energy": traj.energy_series.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
