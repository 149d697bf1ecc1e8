"""Quantitative evaluation: MMD, endpoint error, spectral tools, throughput."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .cfm import integrate
from .datasets import Distribution2D, sample, squared_distances
from .koopman import KoopmanModel
from .linalg import EigenPairs, eig, sort_eigenpairs
from .ndcore import ContractViolation, NumericalError
from .sampler import koopman_sample

CONDITION_LIMIT = 1e12


@dataclass
class MmdResult:
    value: float
    kernel_bandwidth: float
    n_a: int
    n_b: int
    estimator: str = "biased"
    degenerate: bool = False


def mmd(a: np.ndarray, b: np.ndarray, bandwidth: float | None = None) -> MmdResult:
    """Biased (V-statistic) squared MMD with an RBF kernel.

    k(x, y) = exp(-||x - y||^2 / (2 h^2)); ``bandwidth=None`` selects h as the
    median pairwise distance of the pooled sets. The biased estimator is
    nonnegative, which keeps threshold comparisons clean.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractViolation("mmd needs two (n>=2, d) sample sets")
    if bandwidth is None:
        pooled = np.concatenate([a, b], axis=0)
        d2 = squared_distances(pooled, pooled)
        off_diag = d2[~np.eye(d2.shape[0], dtype=bool)]
        bandwidth = float(np.sqrt(np.median(off_diag)))
    if bandwidth <= 0.0:
        # every pooled point identical: the sets are equal as distributions
        return MmdResult(0.0, 0.0, a.shape[0], b.shape[0], degenerate=True)
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    k_aa = np.exp(-gamma * squared_distances(a, a)).mean()
    k_bb = np.exp(-gamma * squared_distances(b, b)).mean()
    k_ab = np.exp(-gamma * squared_distances(a, b)).mean()
    value = float(k_aa + k_bb - 2.0 * k_ab)
    return MmdResult(max(value, 0.0), bandwidth, a.shape[0], b.shape[0])


def endpoint_error(
    koop: KoopmanModel, vf, prior: Distribution2D, n: int, seed: int
) -> float:
    """Mean distance between one-step endpoints and 100-step RK4 endpoints."""
    x0 = sample(prior, n, seed)
    koop_end = koopman_sample(koop, prior, n, [1.0], seed).endpoints
    cfm_end = integrate(vf, x0, 100, "rk4")[:, -1]
    return float(np.linalg.norm(koop_end - cfm_end, axis=1).mean())


@dataclass
class SpectralDecomposition:
    """Sorted eigenpairs of L and the coefficients of z0 in that eigenbasis."""

    pairs: EigenPairs
    alphas: np.ndarray
    z0: np.ndarray


def spectral_decompose(L: np.ndarray, z0: np.ndarray) -> SpectralDecomposition:
    """alpha = V^{-1} z0 with eigenpairs sorted by descending real part."""
    z0 = np.asarray(z0, dtype=np.float64)
    pairs = sort_eigenpairs(eig(L))
    cond = np.linalg.cond(pairs.vectors)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericalError(f"eigenvector matrix condition {cond:.3g} too large")
    alphas = np.linalg.solve(pairs.vectors, z0.astype(np.complex128))
    return SpectralDecomposition(pairs=pairs, alphas=alphas, z0=z0)


def reconstruct(decomp: SpectralDecomposition, t: float) -> np.ndarray:
    """Full modal sum: sum_i alpha_i e^{lambda_i t} v_i (complex)."""
    weights = decomp.alphas * np.exp(decomp.pairs.values * t)
    return decomp.pairs.vectors @ weights


def _conjugate_closed_count(values: np.ndarray, k: int) -> int:
    """Smallest k' >= k whose leading slice contains every conjugate partner."""
    p = len(values)
    while k < p:
        sel = values[:k]
        pos = np.sort_complex(sel[sel.imag > 0])
        neg = np.sort_complex(np.conj(sel[sel.imag < 0]))
        if pos.size == neg.size and np.array_equal(pos, neg):
            break
        k += 1
    return k


def progressive_reconstruction(
    decomp: SpectralDecomposition, k: int, t: float
) -> tuple[np.ndarray, int]:
    """Partial modal sum over the top-k modes (by real part) at time t.

    Conjugate pairs are kept together: if k splits one, modes are pulled in
    until the selection is conjugate-closed, and the returned count reflects
    that. The result is the real part; the imaginary residue of a closed sum
    is rounding noise.
    """
    p = decomp.alphas.size
    if not (1 <= k <= p):
        raise ContractViolation(f"k = {k} outside [1, {p}]")
    values = decomp.pairs.values
    k = _conjugate_closed_count(values, k)
    weights = decomp.alphas[:k] * np.exp(values[:k] * t)
    partial = decomp.pairs.vectors[:, :k] @ weights
    return partial.real, k


def save_spectrum_csv(decomp: SpectralDecomposition, path, top: int | None = None) -> None:
    """Columns index,re,im,alpha_re,alpha_im, sorted by descending re."""
    n = decomp.alphas.size if top is None else min(top, decomp.alphas.size)
    with open(path, "w") as fh:
        fh.write("index,re,im,alpha_re,alpha_im\n")
        for i in range(n):
            lam, al = decomp.pairs.values[i], decomp.alphas[i]
            fh.write(f"{i},{lam.real:.17g},{lam.imag:.17g},{al.real:.17g},{al.imag:.17g}\n")


@dataclass
class BenchRow:
    method: str
    steps: int
    wall_ns: int
    samples_per_sec: float
    mmd: float


def _median_wall_ns(fn, reps: int) -> tuple[int, np.ndarray]:
    out = fn()  # warm start, also keeps the result for the MMD column
    walls = []
    for _ in range(reps):
        tic = time.perf_counter_ns()
        out = fn()
        walls.append(time.perf_counter_ns() - tic)
    return int(np.median(walls)), out


def bench_sampling(
    koop: KoopmanModel,
    vf,
    prior: Distribution2D,
    n: int,
    step_grid: list[int],
    target: np.ndarray | None = None,
    reps: int = 3,
    seed: int = 0,
) -> list[BenchRow]:
    """Wall-clock and sample quality for one-step evolution vs ODE baselines.

    Timings are medians over ``reps`` warm-started repetitions. The MMD column
    compares each method's endpoints to ``target`` samples, falling back to
    the 100-step RK4 endpoints when no target is given.
    """
    x0 = sample(prior, n, seed)
    if target is None:
        target = integrate(vf, x0, 100, "rk4")[:, -1]

    rows: list[BenchRow] = []
    wall, run = _median_wall_ns(lambda: koopman_sample(koop, prior, n, [1.0], seed), reps)
    rows.append(
        BenchRow("koopman", 1, wall, n / (wall * 1e-9), mmd(run.endpoints, target).value)
    )
    for method in ("euler", "rk4"):
        for steps in step_grid:
            wall, states = _median_wall_ns(lambda m=method, s=steps: integrate(vf, x0, s, m), reps)
            rows.append(
                BenchRow(method, steps, wall, n / (wall * 1e-9), mmd(states[:, -1], target).value)
            )
    return rows


def save_bench_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("method,steps,wall_ns,samples_per_sec,mmd\n")
        for r in rows:
            fh.write(f"{r.method},{r.steps},{r.wall_ns},{r.samples_per_sec:.17g},{r.mmd:.17g}\n")


def save_bench_json(rows: list[BenchRow], path, n: int) -> None:
    payload = {
        "n": n,
        "rows": [
            {
                "method": r.method,
                "steps": r.steps,
                "wall_ns": r.wall_ns,
                "samples_per_sec": r.samples_per_sec,
                "mmd": r.mmd,
            }
            for r in rows
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
