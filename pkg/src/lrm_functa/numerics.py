"""Dense numerics shared by every other module.

Matrices are plain 2-D float64 numpy arrays. The pieces that numpy does not
provide directly live here: a flat parameter store with named slices, Adam,
a central finite-difference checker and a power-iteration PCA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A value that must be finite is NaN or infinite."""


class DegenerateInputError(ValueError):
    """Input has no spread to analyse (identical rows, zero motion, ...)."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; every random draw in the package goes through one."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit conformability check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


class ParamStore:
    """One contiguous float64 buffer carved into named, reshaped slices.

    ``store[name]`` and ``store.grad(name)`` return views, so in-place writes
    land in the flat buffers that optimizers operate on.
    """

    def __init__(self, shapes: Mapping[str, tuple[int, ...]]):
        self.layout: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(int(s) for s in shape)
            size = int(np.prod(shape)) if shape else 1
            self.layout[name] = (offset, size, shape)
            offset += size
        self.data = np.zeros(offset)
        self.grads = np.zeros(offset)

    @property
    def size(self) -> int:
        return self.data.size

    def names(self) -> list[str]:
        return list(self.layout)

    def __contains__(self, name: str) -> bool:
        return name in self.layout

    def _view(self, buf: np.ndarray, name: str) -> np.ndarray:
        offset, size, shape = self.layout[name]
        return buf[offset:offset + size].reshape(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._view(self.data, name)

    def __setitem__(self, name: str, value) -> None:
        view = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != view.shape:
            raise ShapeError(f"slice {name!r} expects {view.shape}, got {value.shape}")
        view[...] = value

    def grad(self, name: str) -> np.ndarray:
        return self._view(self.grads, name)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def add_grads(self, grads: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
        for name, g in grads.items():
            self.grad(name)[...] += scale * g

    def copy(self) -> "ParamStore":
        other = ParamStore({n: s for n, (_, _, s) in self.layout.items()})
        other.data[:] = self.data
        other.grads[:] = self.grads
        return other

    def slice_of(self, index: int) -> str:
        """Name of the slice holding flat position ``index``."""
        for name, (offset, size, _) in self.layout.items():
            if offset <= index < offset + size:
                return name
        raise IndexError(index)

    def check_finite_grads(self) -> None:
        bad = ~np.isfinite(self.grads)
        if bad.any():
            raise NonFiniteError(
                f"non-finite gradient in slice {self.slice_of(int(np.argmax(bad)))!r}")


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update applied in place to ``params.data``."""
    params.check_finite_grads()
    if state.m is None:
        state.m = np.zeros_like(params.data)
        state.v = np.zeros_like(params.data)
    if state.m.shape != params.data.shape:
        raise ShapeError("Adam moments do not match the parameter layout")
    g = params.grads
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params: ParamStore, lr: float) -> None:
    params.check_finite_grads()
    params.data -= lr * params.grads


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5, indices: Iterable[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` around the flat vector ``x``.

    ``x`` is perturbed in place and restored, so ``f`` may close over a
    ParamStore whose ``data`` buffer is ``x``. When ``indices`` is given only
    those coordinates are estimated (the rest stay zero).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x)
    grad = np.zeros(x.size)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def orient_sign(vec: np.ndarray) -> np.ndarray:
    """Flip ``vec`` so that its largest-magnitude entry is positive."""
    return vec if vec[np.argmax(np.abs(vec))] >= 0 else -vec


def pca_first_component(rows, tol: float = 1e-12, max_iter: int = 10_000,
                        center: bool = True) -> np.ndarray:
    """Unit first principal axis of the mean-centred rows, by power iteration.

    The sign is fixed so the largest-magnitude entry is positive. With
    ``center=False`` the axis of the raw second-moment matrix is returned,
    which suits axial data such as unit motion directions.
    """
    x = as_matrix(rows, "rows")
    if x.shape[0] < 2:
        raise DegenerateInputError("PCA needs at least two rows")
    centred = x - x.mean(axis=0) if center else x
    if np.linalg.norm(centred) <= 1e-14 * max(1.0, np.abs(x).max()):
        raise DegenerateInputError("all rows are identical" if center else "all rows are zero")
    cov = centred.T @ centred
    # start from the row that moves most; never orthogonal to the top axis
    # unless the spectrum is degenerate
    vec = centred[np.argmax(np.einsum("ij,ij->i", centred, centred))].copy()
    vec += 1e-3 * np.linalg.norm(vec) / np.sqrt(vec.size)
    vec /= np.linalg.norm(vec)
    for _ in range(max_iter):
        nxt = cov @ vec
        nrm = np.linalg.norm(nxt)
        if nrm == 0.0:
            break
        nxt /= nrm
        done = np.max(np.abs(nxt - vec)) < tol
        vec = nxt
        if done:
            break
    return orient_sign(vec / np.linalg.norm(vec))
