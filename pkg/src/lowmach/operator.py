"""The linear first-order operator behind the relaxed Euler system.

The system reads, for states (rho, m, M, Q) with M trace-free symmetric:

    d_t m + div M + grad Q = 0
    d_t rho + div m = 0

Its Fourier symbol at a spacetime frequency eta = (tau, xi) acts on a
flattened state z as (tau m + (M + Q I) xi, tau rho + xi . m); the symbol
rows are the d momentum equations followed by the continuity equation, the
columns follow the frozen component ordering of :mod:`lowmach.states`.

Because the operator is first order, the map eta -> symbol(eta) z is linear
in eta; its (d+1) x (d+1) matrix (columns = coefficient matrices applied to
z) drives both the wave-cone sweep and the closed-form determinant test for
d = 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .states import RelaxedState, matrix_component_pairs, state_dim

KERNEL_TOL = 1e-12
RANK_THRESHOLD = 1e-10
MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True)
class FrequencySymbol:
    """Symbol realization at one frequency: a (d+1) x N matrix."""

    eta: np.ndarray
    matrix: np.ndarray

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.matrix @ z


@dataclass(frozen=True)
class WaveConeReport:
    """Result of the wave-cone membership search."""

    member: bool
    best_direction: np.ndarray
    min_singular_value: float
    tol: float

    def to_json_dict(self) -> dict:
        return {
            "member": self.member,
            "best_direction": self.best_direction.tolist(),
            "min_singular_value": self.min_singular_value,
            "tol": self.tol,
        }


@dataclass(frozen=True)
class DiatomicDeterminant:
    """The 3x3 determinant deciding wave-cone connectedness of two lifted
    states, together with its closed-form factorization."""

    matrix: np.ndarray
    det: float
    closed_form: float

    def evaluate(self, eta: np.ndarray) -> np.ndarray:
        """The linear frequency polynomial eta -> symbol(eta) (z1 - z2)."""
        return self.matrix @ np.asarray(eta, dtype=float)


def _as_vector(z, d: int) -> np.ndarray:
    if isinstance(z, RelaxedState):
        return z.to_vector()
    z = np.asarray(z, dtype=float)
    if z.shape != (state_dim(d),):
        raise ValueError(f"expected state vector of length {state_dim(d)}")
    return z


class RelaxedEulerOperator:
    """Coefficient matrices, Fourier symbol and wave-cone computations."""

    def __init__(self, d: int = 2):
        if d < 2:
            raise ValueError(f"need d >= 2, got {d}")
        self.d = d
        self.N = state_dim(d)
        self.A = self._coefficient_matrices(d)

    @staticmethod
    def _coefficient_matrices(d: int) -> list[np.ndarray]:
        N = state_dim(d)
        pairs = matrix_component_pairs(d)
        col_M = {p: 1 + d + k for k, p in enumerate(pairs)}
        col_Q = N - 1
        mats = [np.zeros((d + 1, N)) for _ in range(d + 1)]
        for i in range(d):
            mats[0][i, 1 + i] = 1.0  # d_t m_i
        mats[0][d, 0] = 1.0  # d_t rho
        for l in range(1, d + 1):
            a = l - 1
            for i in range(d):
                ii, jj = min(i, a), max(i, a)
                if (ii, jj) == (d - 1, d - 1):
                    # last diagonal entry is minus the sum of the others
                    for j in range(d - 1):
                        mats[l][i, col_M[(j, j)]] -= 1.0
                else:
                    mats[l][i, col_M[(ii, jj)]] += 1.0
                if i == a:
                    mats[l][i, col_Q] += 1.0
            mats[l][d, 1 + a] = 1.0  # div m in the continuity row
        return mats

    # -- symbol and kernel ---------------------------------------------------

    def symbol(self, eta) -> FrequencySymbol:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.d + 1,):
            raise ValueError(f"frequency must have {self.d + 1} entries")
        mat = sum(e * A for e, A in zip(eta, self.A))
        return FrequencySymbol(eta, mat)

    def contraction_matrix(self, z) -> np.ndarray:
        """(d+1) x (d+1) matrix V(z) with symbol(eta) z = V(z) eta."""
        z = _as_vector(z, self.d)
        return np.column_stack([A @ z for A in self.A])

    def kernel(self, eta) -> np.ndarray:
        """Orthonormal basis of the symbol kernel, rows of shape (dim, N)."""
        eta = np.asarray(eta, dtype=float)
        if np.linalg.norm(eta) == 0.0:
            raise ValueError("kernel undefined at the zero frequency")
        mat = self.symbol(eta).matrix
        _, s, vh = np.linalg.svd(mat)
        rank = int((s > RANK_THRESHOLD * s[0]).sum())
        basis = vh[rank:]
        residual = np.abs(mat @ basis.T).max() if len(basis) else 0.0
        if residual > KERNEL_TOL * max(1.0, np.abs(mat).max()):
            raise RuntimeError(f"kernel basis residual {residual} too large")
        return basis

    def rank(self, eta) -> int:
        s = np.linalg.svd(self.symbol(eta).matrix, compute_uv=False)
        return int((s > RANK_THRESHOLD * s[0]).sum())

    def constant_rank_check(self, samples: int = 1000, seed: int = 12345):
        """Rank of the symbol across quasi-uniform unit-sphere frequencies.

        Returns (is_constant, rank).  Uses a Fibonacci sphere when the
        frequency space is 3-dimensional, seeded Gaussian directions
        otherwise.
        """
        dim = self.d + 1
        if dim == 3:
            i = np.arange(samples) + 0.5
            phi = np.pi * (1.0 + np.sqrt(5.0)) * i
            cos_t = 1.0 - 2.0 * i / samples
            sin_t = np.sqrt(1.0 - cos_t**2)
            pts = np.column_stack([cos_t, sin_t * np.cos(phi), sin_t * np.sin(phi)])
        else:
            rng = np.random.default_rng(seed)
            pts = rng.normal(size=(samples, dim))
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        ranks = {self.rank(eta) for eta in pts}
        return len(ranks) == 1, max(ranks)

    # -- wave cone -----------------------------------------------------------

    def _sphere(self, angles: np.ndarray) -> np.ndarray:
        """Angles (..., n) -> unit vectors (..., n+1)."""
        angles = np.asarray(angles, dtype=float)
        n = angles.shape[-1]
        out = np.ones(angles.shape[:-1] + (n + 1,))
        sin_prod = np.ones(angles.shape[:-1])
        for i in range(n):
            out[..., i] = sin_prod * np.cos(angles[..., i])
            sin_prod = sin_prod * np.sin(angles[..., i])
        out[..., n] = sin_prod
        return out

    def wave_cone_membership(
        self,
        z,
        tol: float = MEMBERSHIP_TOL,
        sweep: int = 64,
        refine_iters: int = 50,
        restarts: int = 3,
    ) -> WaveConeReport:
        """Minimize |symbol(eta) z| over the unit frequency sphere.

        Coarse sweep (``sweep`` points per angle coordinate) followed by
        Nelder-Mead refinement rounds of ``refine_iters`` steps each, with
        the initial simplex shrinking between rounds; membership iff the
        minimum is below tol * |z|.  The refinement minimizes the squared
        norm, which is smooth at true zeros.
        """
        zv = _as_vector(z, self.d)
        norm_z = np.linalg.norm(zv)
        if norm_z == 0.0:
            raise ValueError("wave-cone membership undefined for the zero state")
        V = self.contraction_matrix(zv)
        n_ang = self.d  # sphere S^d in the (d+1)-dimensional frequency space
        grids = [np.linspace(0.0, np.pi, sweep, endpoint=False) for _ in range(n_ang - 1)]
        grids.append(np.linspace(0.0, 2.0 * np.pi, sweep, endpoint=False))
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, n_ang)
        vals = ((self._sphere(mesh) @ V.T) ** 2).sum(axis=1)
        best = int(np.argmin(vals))
        x, v = mesh[best], vals[best]

        fun = lambda a: ((V @ self._sphere(a)) ** 2).sum()
        scale = 0.1
        for _ in range(restarts):
            simplex = np.vstack([x, x + scale * np.eye(n_ang)])
            res = minimize(
                fun,
                x,
                method="Nelder-Mead",
                options={
                    "maxiter": refine_iters,
                    "xatol": 1e-14,
                    "fatol": 1e-30,
                    "initial_simplex": simplex,
                },
            )
            if res.fun < v:
                x, v = res.x, res.fun
            scale *= 1e-3
        value = float(np.sqrt(v))
        direction = self._sphere(np.asarray(x))
        return WaveConeReport(
            member=bool(value <= tol * norm_z),
            best_direction=direction,
            min_singular_value=value,
            tol=tol,
        )

    def diatomic_determinant(self, z1, z2, rho_tol: float = 1e-12) -> DiatomicDeterminant:
        """Closed-form wave-cone test for two lifted incompressible states.

        Only for d = 2 and unit density slots.  The determinant of the
        frequency contraction of z1 - z2 factors as
        -|u1 - u2|^2 (P1 - P2); both evaluations are returned and must
        agree to 1e-10 relative.
        """
        if self.d != 2:
            raise ValueError("closed-form determinant requires d = 2")
        v1, v2 = _as_vector(z1, 2), _as_vector(z2, 2)
        if abs(v1[0] - v2[0]) > rho_tol:
            raise ValueError("density slots must be equal")
        if abs(v1[0] - 1.0) > rho_tol:
            raise ValueError("states must be lifted (unit density slot)")
        V = self.contraction_matrix(v1 - v2)
        det = float(np.linalg.det(V))
        u1, u2 = v1[1:3], v2[1:3]
        P1 = v1[5] - (u1 @ u1) / 2.0
        P2 = v2[5] - (u2 @ u2) / 2.0
        closed = float(-((u1 - u2) @ (u1 - u2)) * (P1 - P2))
        scale = max(1e-300, abs(det), abs(closed))
        if abs(det - closed) > 1e-10 * scale:
            raise RuntimeError(
                f"determinant {det} disagrees with closed form {closed}"
            )
        return DiatomicDeterminant(matrix=V, det=det, closed_form=closed)


# -- spacetime fields ------------------------------------------------------


def physical_frequency(k: Sequence[int], T: float) -> np.ndarray:
    """Integer spacetime frequency -> frequency of e^{2 pi i (k_t t/T + k.x)}
    as seen by the operator (time entry divided by the period T)."""
    k = np.asarray(k, dtype=float)
    out = k.copy()
    out[0] /= T
    return out


def kernel_plane_wave(
    op: RelaxedEulerOperator,
    k: Sequence[int],
    amp: np.ndarray,
    profile: Callable[[np.ndarray], np.ndarray] = lambda s: np.sin(2 * np.pi * s),
    n_t: int = 16,
    n_x: int = 16,
    T: float = 1.0,
) -> np.ndarray:
    """Sample z(t, x) = amp * profile(k_t t/T + k . x) on a periodic grid.

    ``amp`` must lie in the symbol kernel at the physical frequency and
    ``profile`` must be 1-periodic with zero mean, which makes the field
    operator-free and mean-zero analytically.  Node sampling, endpoint
    excluded on every axis.
    """
    k = np.asarray(k, dtype=int)
    if k.shape != (op.d + 1,) or not k.any():
        raise ValueError("need a nonzero integer spacetime frequency")
    amp = np.asarray(amp, dtype=float)
    eta = physical_frequency(k, T)
    residual = np.linalg.norm(op.symbol(eta)(amp))
    if residual > 1e-10 * max(1.0, np.linalg.norm(amp)) * np.linalg.norm(eta):
        raise ValueError(f"amplitude is not in the symbol kernel (residual {residual})")
    s = np.linspace(0.0, 1.0, 4096, endpoint=False)
    pvals = np.asarray(profile(s))
    if abs(pvals.mean()) > 1e-12 * max(1.0, np.abs(pvals).max()):
        raise ValueError("profile must have zero mean")

    t = np.arange(n_t) / n_t  # scaled time t/T
    x = np.arange(n_x) / n_x
    phase = (
        k[0] * t[:, None, None]
        + k[1] * x[None, :, None]
        + k[2] * x[None, None, :]
    )
    return profile(phase)[..., None] * amp


def ae_residual_negative_norm(
    op: RelaxedEulerOperator,
    field: np.ndarray,
    T: float = 1.0,
    window: str = "tukey",
    margin: float = 0.1,
) -> float:
    """Spectral negative-Sobolev norm of the operator applied to a field.

    ``field`` has shape (n_t, n_x, n_x, N), periodic in space.  Unless
    ``window='none'`` the time axis is multiplied by a C^1 raised-cosine
    window vanishing at t in {0, T} (the window is part of the residual
    definition; fields that are genuinely time-periodic should pass
    ``window='none'``).  Returns

        ( sum_{k != 0} |symbol(2 pi k~) zhat_k|^2 / |2 pi k~|^2 )^{1/2}

    over discrete spacetime frequencies, where k~ carries the time entry
    k_t / T.  The zero mode is skipped: constants are operator-free.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 4 or field.shape[-1] != op.N:
        raise ValueError(f"expected (n_t, n, n, {op.N}) field, got {field.shape}")
    n_t, nx, ny = field.shape[:3]
    if min(n_t, nx, ny) < 8:
        raise ValueError("grid too small: need at least 8 points per axis")
    if window == "tukey":
        s = np.arange(n_t) / n_t
        w = np.ones(n_t)
        lo = s < margin
        hi = s > 1.0 - margin
        w[lo] = 0.5 * (1.0 - np.cos(np.pi * s[lo] / margin))
        w[hi] = 0.5 * (1.0 - np.cos(np.pi * (1.0 - s[hi]) / margin))
        field = field * w[:, None, None, None]
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")

    zhat = np.fft.fftn(field, axes=(0, 1, 2)) / (n_t * nx * ny)
    kt = np.fft.fftfreq(n_t, d=1.0 / n_t) / T
    kx = np.fft.fftfreq(nx, d=1.0 / nx)
    ky = np.fft.fftfreq(ny, d=1.0 / ny)
    eta = 2.0 * np.pi * np.stack(np.meshgrid(kt, kx, ky, indexing="ij"), axis=-1)

    # symbol application, vectorized over all frequencies
    applied = np.zeros(zhat.shape[:3] + (op.d + 1,), dtype=complex)
    for l, A in enumerate(op.A):
        applied += eta[..., l, None] * (zhat @ A.T)
    eta2 = (eta**2).sum(axis=-1)
    num = (np.abs(applied) ** 2).sum(axis=-1)
    mask = eta2 > 0
    return float(np.sqrt((num[mask] / eta2[mask]).sum()))
