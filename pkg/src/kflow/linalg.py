"""Dense matrix exponential and general real eigendecomposition.

expm is scaling-and-squaring around a truncated Taylor core evaluated in
Horner form. The same code path runs on plain numpy arrays and on graph
Tensors, which is what lets training losses differentiate through the
exponential without a separate Frechet-derivative routine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import ContractViolation, NumericalError, Tensor

TAYLOR_ORDER = 14
# ||A||_1 beyond this and exp(A) may not be representable in float64
EXPM_NORM_LIMIT = 700.0
EIG_RESIDUAL_TOL = 1e-8
MAX_EVOLVE_TIME = 1.0 + 1e-6


def _squaring_count(norm1: float) -> int:
    if norm1 <= 0.0:
        return 0
    return max(0, int(np.ceil(np.log2(norm1))) + 4)


def expm(a):
    """e^A for a square matrix; accepts an ndarray or a Tensor (differentiable)."""
    is_tensor = isinstance(a, Tensor)
    raw = a.data if is_tensor else np.asarray(a, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ContractViolation(f"expm expects a square matrix, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ContractViolation("expm: input has NaN/Inf entries")
    norm1 = float(np.abs(raw).sum(axis=0).max()) if raw.size else 0.0
    if norm1 > EXPM_NORM_LIMIT:
        raise NumericalError(f"expm: ||A||_1 = {norm1:.3g} exceeds overflow guard")
    s = _squaring_count(norm1)
    eye = np.eye(raw.shape[0])
    if is_tensor:
        return _expm_core(a, Tensor(eye), s)
    return _expm_core(raw, eye, s)


def _expm_core(a, eye, s: int):
    x = a * (1.0 / float(2**s))
    acc = eye
    for k in range(TAYLOR_ORDER, 0, -1):
        acc = eye + (x @ acc) * (1.0 / k)
    for _ in range(s):
        acc = acc @ acc
    return acc


@dataclass
class EigenPairs:
    """Eigenvalues and right eigenvectors (columns); complex pairs are conjugate."""

    values: np.ndarray
    vectors: np.ndarray
    sorted: bool = False


def eig(a: np.ndarray) -> EigenPairs:
    """All eigenpairs of a real square matrix, residual-checked."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"eig expects a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("eig: input has NaN/Inf entries")
    try:
        values, vectors = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from exc
    scale = np.linalg.norm(a)
    residual = np.linalg.norm(a @ vectors - vectors * values[None, :], axis=0)
    if scale > 0 and residual.max() > EIG_RESIDUAL_TOL * scale:
        raise NumericalError(
            f"eig residual {residual.max():.3g} exceeds {EIG_RESIDUAL_TOL:g} * ||A||"
        )
    return EigenPairs(values=values, vectors=vectors, sorted=False)


def sort_eigenpairs(pairs: EigenPairs) -> EigenPairs:
    """Descending real part; ties broken by descending imaginary part, then index."""
    n = len(pairs.values)
    order = np.lexsort((np.arange(n), -pairs.values.imag, -pairs.values.real))
    return EigenPairs(
        values=pairs.values[order], vectors=pairs.vectors[:, order], sorted=True
    )


def evolve(L: np.ndarray, z0: np.ndarray, t: float) -> np.ndarray:
    """z_t = e^{L t} z0, batched over rows of z0 with one shared exponential."""
    if not (0.0 <= t <= MAX_EVOLVE_TIME):
        raise ContractViolation(f"evolve time {t} outside [0, 1]")
    z0 = np.asarray(z0, dtype=np.float64)
    E = expm(np.asarray(L, dtype=np.float64) * t)
    if z0.ndim == 1:
        return E @ z0
    return z0 @ E.T
