"""Shared independent oracles: finite differences, brute-force OT, series expm."""

from __future__ import annotations

import itertools
import math

import numpy as np

from kflow.ndcore import Tensor


def central_fd_grad(loss_of_params, params: list[Tensor], coords, h: float = 1e-5):
    """Central finite differences of a scalar loss at selected coordinates.

    ``coords`` is a list of (param_index, flat_index). Returns one FD value
    per coordinate. The loss callable must read params by value each call.
    """
    out = []
    for pi, fi in coords:
        base = params[pi].data.ravel()
        orig = base[fi]
        base[fi] = orig + h
        up = loss_of_params(params)
        base[fi] = orig - h
        down = loss_of_params(params)
        base[fi] = orig
        out.append((up - down) / (2.0 * h))
    return np.array(out)


def directional_fd(f, x: np.ndarray, v: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """(f(x + h v) - f(x - h v)) / 2h for an array-valued f."""
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h)


def rel_err(approx: np.ndarray, exact: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    return np.abs(approx - exact) / np.maximum(np.abs(exact), floor)


def brute_force_ot(x0: np.ndarray, x1: np.ndarray) -> tuple[np.ndarray, float]:
    """Exhaustive minimum-cost permutation; only sane for b <= 8."""
    b = x0.shape[0]
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(b)):
        cost = float(((x0 - x1[list(perm)]) ** 2).sum())
        if cost < best_cost:
            best_cost, best_perm = cost, np.array(perm)
    return best_perm, best_cost


def series_expm(a: np.ndarray, terms: int = 150, scale_pow: int = 2) -> np.ndarray:
    """Oracle e^A: direct Taylor sum of e^{A/4} with 150 terms, squared twice.

    Different truncation, scaling, and accumulation order than the library
    routine.
    """
    a = np.asarray(a, dtype=np.float64) / (2.0**scale_pow)
    acc = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms + 1):
        term = term @ a / k
        acc = acc + term
    for _ in range(scale_pow):
        acc = acc @ acc
    return acc


def random_coords(rng: np.random.Generator, params: list[Tensor], n: int):
    """n distinct-ish (param_index, flat_index) pairs across a parameter list."""
    sizes = [p.data.size for p in params]
    total = sum(sizes)
    flat = rng.choice(total, size=min(n, total), replace=False)
    bounds = np.cumsum([0] + sizes)
    coords = []
    for f in flat:
        pi = int(np.searchsorted(bounds, f, side="right")) - 1
        coords.append((pi, int(f - bounds[pi])))
    return coords
