"""Fluid state types, physical parameters, and the lifting maps.

The lifted state space has dimension N = 1 + d + (d(d+1)/2 - 1) + 1: a
density-like scalar, a momentum-like vector, a trace-free symmetric matrix
and a generalized-pressure scalar.  The component ordering of the flattened
state vector is frozen across the whole package:

    (rho, m_1 .. m_d, M upper triangle row-major with the last diagonal
     entry dropped, Q)

For d = 2 the matrix block is two numbers (a, b) standing for
[[a, b], [b, -a]], so symmetry and trace-freeness hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def matrix_component_pairs(d: int) -> list[tuple[int, int]]:
    """Index pairs (i, j), i <= j, of the stored trace-free components.

    Row-major upper triangle with (d-1, d-1) omitted; that entry is minus
    the sum of the remaining diagonal.
    """
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    pairs.remove((d - 1, d - 1))
    return pairs


def state_dim(d: int) -> int:
    """Dimension N of the lifted state space over R^d."""
    return 1 + d + (d * (d + 1)) // 2 - 1 + 1


@dataclass(frozen=True)
class Params:
    """Physical parameters: dimension, adiabatic exponent, squared Mach
    number, reference density, final time."""

    d: int = 2
    gamma: float = 2.0
    eps: float = 1.0
    rho_bar: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"spatial dimension must be >= 2, got {self.d}")
        if not self.gamma > 1:
            raise ValueError(f"adiabatic exponent must exceed 1, got {self.gamma}")
        if not self.eps > 0:
            raise ValueError(f"squared Mach number must be positive, got {self.eps}")
        if not self.rho_bar > 0:
            raise ValueError(f"reference density must be positive, got {self.rho_bar}")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")


@dataclass(frozen=True)
class CompressibleState:
    """A single compressible fluid state (rho, u) with rho > 0."""

    rho: float
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if not self.rho > 0:
            raise ValueError(f"density must be positive, got {self.rho}")


@dataclass(frozen=True)
class AugmentedState:
    """A velocity-pressure pair (u, P) of the incompressible system."""

    u: np.ndarray
    P: float

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u, [self.P]])


@dataclass(frozen=True)
class TraceFreeSym:
    """Symmetric trace-free d x d matrix stored by independent components.

    ``comps`` follows the frozen ordering of :func:`matrix_component_pairs`,
    so symmetry and zero trace are exact properties of the representation.
    """

    d: int
    comps: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.comps, dtype=float)
        expected = (self.d * (self.d + 1)) // 2 - 1
        if comps.shape != (expected,):
            raise ValueError(
                f"need {expected} components for d={self.d}, got shape {comps.shape}"
            )
        object.__setattr__(self, "comps", comps)

    @classmethod
    def zero(cls, d: int) -> "TraceFreeSym":
        return cls(d, np.zeros((d * (d + 1)) // 2 - 1))

    @classmethod
    def from_matrix(cls, mat: np.ndarray, tol: float = 1e-10) -> "TraceFreeSym":
        mat = np.asarray(mat, dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise ValueError(f"expected square matrix, got shape {mat.shape}")
        scale = max(1.0, np.abs(mat).max())
        if np.abs(mat - mat.T).max() > tol * scale:
            raise ValueError("matrix is not symmetric")
        if abs(np.trace(mat)) > tol * scale:
            raise ValueError("matrix is not trace-free")
        pairs = matrix_component_pairs(d)
        return cls(d, np.array([mat[i, j] for i, j in pairs]))

    def to_matrix(self) -> np.ndarray:
        mat = np.zeros((self.d, self.d))
        for k, (i, j) in enumerate(matrix_component_pairs(self.d)):
            mat[i, j] = self.comps[k]
            mat[j, i] = self.comps[k]
        mat[self.d - 1, self.d - 1] = -np.trace(mat[: self.d - 1, : self.d - 1])
        return mat


@dataclass(frozen=True)
class RelaxedState:
    """A point (rho, m, M, Q) of the lifted state space."""

    rho: float
    m: np.ndarray
    M: TraceFreeSym
    Q: float

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        if self.m.shape != (self.M.d,):
            raise ValueError(
                f"momentum dimension {self.m.shape} does not match d={self.M.d}"
            )

    @property
    def d(self) -> int:
        return self.M.d

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.rho], self.m, self.M.comps, [self.Q]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, d: int) -> "RelaxedState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (state_dim(d),):
            raise ValueError(f"expected length {state_dim(d)}, got {vec.shape}")
        return cls(
            rho=float(vec[0]),
            m=vec[1 : 1 + d].copy(),
            M=TraceFreeSym(d, vec[1 + d : -1].copy()),
            Q=float(vec[-1]),
        )

    @classmethod
    def zero(cls, d: int) -> "RelaxedState":
        return cls(0.0, np.zeros(d), TraceFreeSym.zero(d), 0.0)


def traceless_outer(v: np.ndarray) -> TraceFreeSym:
    """Trace-free outer square v (x) v - (|v|^2 / d) * Identity."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    if d < 2:
        raise ValueError(f"need dimension >= 2, got {d}")
    mat = np.outer(v, v) - (v @ v) / d * np.eye(d)
    pairs = matrix_component_pairs(d)
    return TraceFreeSym(d, np.array([mat[i, j] for i, j in pairs]))


def scaled_pressure_deviation(rho: float | np.ndarray, p: Params):
    """The pressure coordinate (rho^gamma - rho_bar^gamma) / (eps * rho_bar)."""
    return (np.power(rho, p.gamma) - p.rho_bar**p.gamma) / (p.eps * p.rho_bar)


def lift_augmented(s: AugmentedState) -> RelaxedState:
    """Lift an incompressible (u, P) state: (1, u, u (o) u, P + |u|^2/d)."""
    u = s.u
    d = u.shape[0]
    return RelaxedState(1.0, u.copy(), traceless_outer(u), s.P + (u @ u) / d)


def lift_compressible(s: CompressibleState, p: Params) -> RelaxedState:
    """Lift a compressible state with the full stiff pressure in the Q slot:
    (rho, rho u, rho u (o) u, rho^gamma/eps + rho |u|^2/d)."""
    if not s.rho > 0:
        raise ValueError(f"density must be positive, got {s.rho}")
    u = s.u
    d = u.shape[0]
    M = traceless_outer(u)
    return RelaxedState(
        s.rho,
        s.rho * u,
        TraceFreeSym(d, s.rho * M.comps),
        s.rho**p.gamma / p.eps + s.rho * (u @ u) / d,
    )


def lift_compressible_shifted(s: CompressibleState, p: Params) -> RelaxedState:
    """As :func:`lift_compressible` but with the reference pressure
    rho_bar^gamma/eps subtracted from the Q slot."""
    z = lift_compressible(s, p)
    return RelaxedState(z.rho, z.m, z.M, z.Q - p.rho_bar**p.gamma / p.eps)


def lift_primitives(s: CompressibleState, p: Params) -> tuple[float, np.ndarray, float]:
    """Primitive variables with the scaled pressure deviation appended:
    (rho, u, (rho^gamma - rho_bar^gamma)/(eps rho_bar))."""
    if not s.rho > 0:
        raise ValueError(f"density must be positive, got {s.rho}")
    return s.rho, s.u.copy(), float(scaled_pressure_deviation(s.rho, p))


def lift_pressure(s: CompressibleState, p: Params) -> AugmentedState:
    """The pressure lift (u, (rho^gamma - rho_bar^gamma)/(eps rho_bar))."""
    rho, u, q = lift_primitives(s, p)
    return AugmentedState(u, q)
