"""Rank-k modulation subspace: m_t = v + sum_i phi_t[i] * b_i."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, make_rng

INIT_MODES = ("basic", "ortho")


@dataclass
class Subspace:
    """``basis`` is k x q; row i is the basis vector b_i."""

    basis: np.ndarray
    init_mode: str = "basic"

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def q(self) -> int:
        return self.basis.shape[1]


@dataclass
class LatentCodes:
    """Per-video code ``v`` (length q) and per-frame coefficients ``phi`` (T x k)."""

    v: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, q: int, k: int, frames: int) -> "LatentCodes":
        return cls(np.zeros(q), np.zeros((frames, k)))

    @property
    def q(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return self.phi.shape[1]

    @property
    def frames(self) -> int:
        return self.phi.shape[0]

    def copy(self) -> "LatentCodes":
        return LatentCodes(self.v.copy(), self.phi.copy())


def compose_modulation(v, basis, phi) -> np.ndarray:
    """Modulation vectors ``v + phi @ basis``.

    ``phi`` may be a single coefficient vector (returns one m_t) or a T x k
    matrix (returns T rows).
    """
    v = np.asarray(v, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if basis.ndim != 2 or v.shape != (basis.shape[1],) or phi.shape[-1] != basis.shape[0]:
        raise ShapeError(
            f"cannot compose v{v.shape} + phi{phi.shape} @ basis{basis.shape}")
    return v + phi @ basis


def ortho_penalty(basis) -> tuple[float, np.ndarray]:
    """Frobenius distance of the k x k Gram matrix of the basis rows from I_k.

    Returns the (unsquared) norm and its gradient w.r.t. the basis; the
    gradient is defined as zero at the kink where the norm vanishes.
    """
    basis = np.asarray(basis, dtype=np.float64)
    diff = basis @ basis.T - np.eye(basis.shape[0])
    pen = float(np.linalg.norm(diff))
    if pen < 1e-12:
        return pen, np.zeros_like(basis)
    return pen, 2.0 * diff @ basis / pen


def gram_schmidt(rows: np.ndarray) -> np.ndarray:
    """Orthonormalise rows in order (modified Gram-Schmidt, one re-pass)."""
    out = np.array(rows, dtype=np.float64)
    for i in range(out.shape[0]):
        for _ in range(2):
            for j in range(i):
                out[i] -= (out[j] @ out[i]) * out[j]
        nrm = np.linalg.norm(out[i])
        if nrm < 1e-12:
            raise ValueError("rows are linearly dependent")
        out[i] /= nrm
    return out


def init_subspace(k: int, q: int, mode: str = "basic", seed: int = 0,
                  rng: np.random.Generator | None = None) -> Subspace:
    if not 1 <= k <= q:
        raise ValueError(f"rank k={k} must satisfy 1 <= k <= q={q}")
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}")
    rng = rng if rng is not None else make_rng(seed)
    gauss = rng.standard_normal((k, q))
    if mode == "basic":
        return Subspace(gauss / np.sqrt(q), mode)
    return Subspace(gram_schmidt(gauss), mode)


def modulation_grads(codes: LatentCodes, basis: np.ndarray, g_m: np.ndarray):
    """Chain gradients w.r.t. the per-frame modulations back to (v, phi, basis)."""
    return g_m.sum(axis=0), g_m @ basis.T, codes.phi.T @ g_m
