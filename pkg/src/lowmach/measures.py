"""Atomic Young measures on spacetime grids.

Everything here is finitely supported: pairings and pushforwards are exact
sums over atoms, which keeps the adjunction <g#nu, f> = <nu, f o g> an
identity rather than an approximation.  Weak-* convergence is surrogated by
a finite test dictionary paired against a finite family of spacetime
windows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

MERGE_TOL = 1e-12
WEIGHT_TOL = 1e-12


def _merge_atoms(weights: np.ndarray, points: np.ndarray):
    """Coalesce atoms whose points coincide within MERGE_TOL (weights add)."""
    if len(weights) <= 1:
        return weights, points
    order = np.lexsort(points.T[::-1])
    weights, points = weights[order], points[order]
    keep_w = [weights[0]]
    keep_p = [points[0]]
    for w, x in zip(weights[1:], points[1:]):
        if np.abs(x - keep_p[-1]).max() <= MERGE_TOL:
            keep_w[-1] += w
        else:
            keep_w.append(w)
            keep_p.append(x)
    return np.array(keep_w), np.array(keep_p)


@dataclass(frozen=True)
class AtomicMeasure:
    """Finitely supported probability measure: positive weights summing to
    one, points sharing a common dimension."""

    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if weights.ndim != 1 or points.shape[0] != weights.shape[0]:
            raise ValueError("weights and points must align")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()}, not 1")
        weights, points = _merge_atoms(weights, points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "points", points)

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @classmethod
    def dirac(cls, point) -> "AtomicMeasure":
        return cls(np.array([1.0]), np.atleast_2d(np.asarray(point, dtype=float)))

    def barycenter(self) -> np.ndarray:
        return self.weights @ self.points

    def support_radius(self) -> float:
        return float(np.linalg.norm(self.points, axis=1).max())


def pair(nu: AtomicMeasure, f: Callable) -> np.ndarray | float:
    """Exact pairing sum_i w_i f(x_i).

    ``f`` is called on the (n_atoms, m) point block; it may return one value
    per atom (scalar pairing) or one row per atom (vector pairing).
    """
    vals = np.asarray(f(nu.points), dtype=float)
    if vals.shape[0] != nu.n_atoms:
        raise ValueError(
            f"test function returned shape {vals.shape} for {nu.n_atoms} atoms"
        )
    out = np.tensordot(nu.weights, vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def pushforward(nu: AtomicMeasure, g: Callable) -> AtomicMeasure:
    """Move atoms through g, keeping weights; coincident images merge."""
    moved = np.atleast_2d(np.asarray(g(nu.points), dtype=float))
    if moved.shape[0] != nu.n_atoms:
        raise ValueError("map must produce one image point per atom")
    return AtomicMeasure(nu.weights.copy(), moved)


@dataclass(frozen=True)
class SpacetimeGrid:
    """Uniform cell layout: n_t time slabs over (0, T), n_x cells per
    spatial axis on the d-torus."""

    n_t: int
    n_x: int
    d: int = 2
    T: float = 1.0

    def __post_init__(self):
        if self.n_t < 1 or self.n_x < 1:
            raise ValueError("grid needs at least one cell per axis")

    @property
    def shape(self) -> tuple:
        return (self.n_t,) + (self.n_x,) * self.d

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return (self.T / self.n_t) * (1.0 / self.n_x) ** self.d

    def t_centers(self) -> np.ndarray:
        return (np.arange(self.n_t) + 0.5) * self.T / self.n_t

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) / self.n_x


class YoungMeasure:
    """A spacetime grid of atomic measures of common state dimension m."""

    def __init__(self, grid: SpacetimeGrid, cells, m: int):
        cells = np.asarray(cells, dtype=object)
        if cells.shape != grid.shape:
            raise ValueError(f"cells shape {cells.shape} != grid shape {grid.shape}")
        for nu in cells.flat:
            if not isinstance(nu, AtomicMeasure) or nu.m != m:
                raise ValueError("every cell needs an AtomicMeasure of dimension m")
        self.grid = grid
        self.cells = cells
        self.m = m

    @classmethod
    def constant(cls, grid: SpacetimeGrid, nu: AtomicMeasure) -> "YoungMeasure":
        cells = np.empty(grid.shape, dtype=object)
        cells[...] = nu
        return cls(grid, cells, nu.m)

    def map_cells(self, op: Callable, m_out: int) -> "YoungMeasure":
        out = np.empty(self.grid.shape, dtype=object)
        for idx in np.ndindex(self.grid.shape):
            out[idx] = op(self.cells[idx])
        return YoungMeasure(self.grid, out, m_out)

    def pair_field(self, f: Callable) -> np.ndarray:
        """Per-cell scalar pairing, returned on the grid shape."""
        out = np.empty(self.grid.shape)
        for idx in np.ndindex(self.grid.shape):
            out[idx] = pair(self.cells[idx], f)
        return out

    def moment_field(self, f: Callable, width: int) -> np.ndarray:
        """Per-cell vector pairing, returned on grid shape + (width,)."""
        out = np.empty(self.grid.shape + (width,))
        for idx in np.ndindex(self.grid.shape):
            out[idx] = pair(self.cells[idx], f)
        return out

    def support_radius(self) -> float:
        return max(nu.support_radius() for nu in self.cells.flat)

    def max_atoms(self) -> int:
        return max(nu.n_atoms for nu in self.cells.flat)

    def to_json_dict(self) -> dict:
        return {
            "grid": {
                "n_t": self.grid.n_t,
                "n_x": self.grid.n_x,
                "d": self.grid.d,
                "T": self.grid.T,
            },
            "m": self.m,
            "cells": [
                {
                    "index": list(idx),
                    "weights": self.cells[idx].weights.tolist(),
                    "points": self.cells[idx].points.tolist(),
                }
                for idx in np.ndindex(self.grid.shape)
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_dict(), **kwargs)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "YoungMeasure":
        grid = SpacetimeGrid(**doc["grid"])
        cells = np.empty(grid.shape, dtype=object)
        for entry in doc["cells"]:
            cells[tuple(entry["index"])] = AtomicMeasure(
                np.array(entry["weights"]), np.array(entry["points"])
            )
        return cls(grid, cells, doc["m"])

    @classmethod
    def from_json(cls, text: str) -> "YoungMeasure":
        return cls.from_json_dict(json.loads(text))


def project_u(mu: YoungMeasure) -> YoungMeasure:
    """Per-cell pushforward by the velocity projection (u, P) -> u."""
    return mu.map_cells(
        lambda nu: pushforward(nu, lambda pts: pts[:, :-1]), mu.m - 1
    )


def extend_with_pressure(nu: YoungMeasure, Pfield: np.ndarray) -> YoungMeasure:
    """Tensor each cell measure with the Dirac at the cell's pressure value."""
    Pfield = np.asarray(Pfield, dtype=float)
    if Pfield.shape != nu.grid.shape:
        raise ValueError(f"pressure field shape {Pfield.shape} != {nu.grid.shape}")
    out = np.empty(nu.grid.shape, dtype=object)
    for idx in np.ndindex(nu.grid.shape):
        cell = nu.cells[idx]
        pts = np.hstack([cell.points, np.full((cell.n_atoms, 1), Pfield[idx])])
        out[idx] = AtomicMeasure(cell.weights.copy(), pts)
    return YoungMeasure(nu.grid, out, nu.m + 1)


def pressure_from_velocity(second_moment: np.ndarray) -> np.ndarray:
    """Average-free spectral solution P of -Lap P = div div (second_moment)
    on the periodic unit square.

    ``second_moment`` has shape (n, n, d, d); the zero frequency of P is set
    to zero.
    """
    F = np.asarray(second_moment, dtype=float)
    if F.ndim != 4 or F.shape[0] != F.shape[1] or F.shape[2] != F.shape[3]:
        raise ValueError(f"expected (n, n, d, d) field, got shape {F.shape}")
    n, d = F.shape[0], F.shape[2]
    k = np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    K = np.stack([kx, ky])  # (d, n, n) integer frequencies
    Fhat = np.fft.fft2(F, axes=(0, 1))
    # div div F has transform -4 pi^2 (k . Fhat . k); -Lap has 4 pi^2 |k|^2
    kFk = np.zeros((n, n), dtype=complex)
    for a in range(d):
        for b in range(d):
            kFk += K[a] * K[b] * Fhat[:, :, a, b]
    k2 = kx**2 + ky**2
    Phat = np.zeros_like(kFk)
    mask = k2 > 0
    Phat[mask] = -kFk[mask] / k2[mask]
    return np.real(np.fft.ifft2(Phat))


# -- test dictionary ---------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Named continuous test function with a sup bound on a declared ball."""

    __test__ = False  # not a pytest class

    name: str
    func: Callable
    sup_bound: float
    radius: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.func(points)


def _smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """C^1 radial cutoff: 1 on [0, 1], 0 on [2, inf), smoothstep between."""
    s = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


@dataclass
class TestDictionary:
    """Finite surrogate for the continuous test class: a named list of
    evaluable functions with finite sup bounds."""

    __test__ = False  # not a pytest class

    entries: list[TestFunction] = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @classmethod
    def monomials_with_cutoff(cls, m: int, radius: float, max_degree: int = 4):
        """Monomials of total degree <= max_degree times a smooth radial
        cutoff supported in the 2*radius ball."""
        entries = []
        exponents = [
            alpha
            for alpha in product(range(max_degree + 1), repeat=m)
            if sum(alpha) <= max_degree
        ]

        def make(alpha):
            def f(points, _alpha=alpha, _R=radius):
                points = np.atleast_2d(points)
                vals = np.ones(points.shape[0])
                for j, a in enumerate(_alpha):
                    if a:
                        vals = vals * points[:, j] ** a
                r = np.linalg.norm(points, axis=1) / _R
                return vals * _smooth_cutoff(r)

            return f

        for alpha in exponents:
            name = "mono_" + "".join(str(a) for a in alpha)
            entries.append(
                TestFunction(
                    name, make(alpha), (2.0 * radius) ** sum(alpha), 2.0 * radius
                )
            )
        return cls(entries)

    @classmethod
    def coordinates(cls, m: int, radius: float = np.inf):
        entries = [
            TestFunction(
                f"coord_{j}",
                (lambda pts, _j=j: np.atleast_2d(pts)[:, _j]),
                radius if np.isfinite(radius) else np.inf,
                radius,
            )
            for j in range(m)
        ]
        return cls(entries)


# -- weak-* discrepancy ------------------------------------------------------


def _time_bump(t: np.ndarray, T: float) -> np.ndarray:
    """C^1 bump equal to 1 at t=0 and vanishing (with derivative) at t=T."""
    return np.cos(0.5 * np.pi * t / T) ** 2


def _axis_modes(s: np.ndarray, cutoff: int) -> np.ndarray:
    """Rows 1, cos(2 pi k s), sin(2 pi k s) for k = 1..cutoff."""
    rows = [np.ones_like(s)]
    for k in range(1, cutoff + 1):
        rows.append(np.cos(2 * np.pi * k * s))
        rows.append(np.sin(2 * np.pi * k * s))
    return np.array(rows)


def ym_distance(
    nu1: YoungMeasure,
    nu2: YoungMeasure,
    dictionary: TestDictionary,
    mode_cutoff: int = 4,
) -> float:
    """Dictionary-window discrepancy between two Young measures.

    Maximum over dictionary entries f and spacetime windows phi of
    |integral phi (<nu1,f> - <nu2,f>)|.  The window family is the constant
    window together with tensor trigonometric modes (per axis, up to the
    cutoff) damped by a C^1 time bump vanishing at t = T.
    """
    if nu1.grid != nu2.grid or nu1.m != nu2.m:
        raise ValueError("measures must share grid and state dimension")
    g = nu1.grid
    if g.d != 2:
        raise ValueError("window family implemented for d = 2")
    t, x = g.t_centers(), g.x_centers()
    Bt = _axis_modes(t / g.T, mode_cutoff) * _time_bump(t, g.T)
    Bx = _axis_modes(x, mode_cutoff)
    vol = g.cell_volume
    best = 0.0
    for f in dictionary:
        delta = nu1.pair_field(f) - nu2.pair_field(f)
        # constant window
        best = max(best, abs(delta.sum() * vol))
        # separable contraction over the windowed modes
        contracted = np.einsum("it,jx,ky,txy->ijk", Bt, Bx, Bx, delta) * vol
        best = max(best, float(np.abs(contracted).max()))
    return best


def empirical_from_field(
    field: np.ndarray, coarsen: int, T: float = 1.0, coarsen_t: int = 1
) -> YoungMeasure:
    """Empirical Young measure of a fine-grid field.

    ``field`` has shape (n_t, n, n, m); each coarse cell of ``coarsen``^2
    spatial samples (times ``coarsen_t`` snapshots) becomes a uniform atomic
    measure over the fine samples it contains.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 4 or field.shape[1] != field.shape[2]:
        raise ValueError(f"expected (n_t, n, n, m) field, got {field.shape}")
    n_t, n, _, m = field.shape
    if n % coarsen or n_t % coarsen_t:
        raise ValueError(
            f"coarsening ({coarsen_t}, {coarsen}) must divide grid ({n_t}, {n})"
        )
    grid = SpacetimeGrid(n_t // coarsen_t, n // coarsen, d=2, T=T)
    cells = np.empty(grid.shape, dtype=object)
    k = coarsen_t * coarsen * coarsen
    w = np.full(k, 1.0 / k)
    for it, ix, iy in np.ndindex(grid.shape):
        block = field[
            it * coarsen_t : (it + 1) * coarsen_t,
            ix * coarsen : (ix + 1) * coarsen,
            iy * coarsen : (iy + 1) * coarsen,
        ].reshape(k, m)
        cells[it, ix, iy] = AtomicMeasure(w, block)
    return YoungMeasure(grid, cells, m)
