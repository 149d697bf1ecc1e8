"""2D priors/targets and exact minibatch optimal-transport coupling.

All targets are tuned to live inside the [-8, 8]^2 training domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ndcore import ContractViolation

DOMAIN_EXTENT = 8.0
MAX_OT_BATCH = 4096

# two-moons raw geometry: outer half-circle at the origin, inner at (1, 0.5)
_MOON_CENTERS = np.array([[0.0, 0.0], [1.0, 0.5]])
_MOON_SHIFT = np.array([0.5, 0.25])
_MOON_SCALE = 3.0
_ROLL_SCALE = 0.15


@dataclass(frozen=True)
class Distribution2D:
    """A named 2D distribution with its shape parameters.

    kind: "gauss" | "eight_gauss" | "two_moons" | "swiss_roll"
    """

    kind: str
    radius: float = 5.0  # eight_gauss ring radius
    mode_std: float = 0.4  # eight_gauss component std
    noise: float = 0.0  # jitter for two_moons / swiss_roll

    def __post_init__(self):
        if self.kind not in ("gauss", "eight_gauss", "two_moons", "swiss_roll"):
            raise ContractViolation(f"unknown distribution kind {self.kind!r}")


def gauss() -> Distribution2D:
    return Distribution2D("gauss")


def eight_gaussians(radius: float = 5.0, mode_std: float = 0.4) -> Distribution2D:
    return Distribution2D("eight_gauss", radius=radius, mode_std=mode_std)


def two_moons(noise: float = 0.05) -> Distribution2D:
    return Distribution2D("two_moons", noise=noise)


def swiss_roll(noise: float = 0.0) -> Distribution2D:
    return Distribution2D("swiss_roll", noise=noise)


_ALIASES = {
    "gauss": gauss,
    "g": gauss,
    "8g": eight_gaussians,
    "eight_gauss": eight_gaussians,
    "2m": two_moons,
    "two_moons": two_moons,
    "sr": swiss_roll,
    "swiss_roll": swiss_roll,
}


def distribution_from_name(name: str) -> Distribution2D:
    key = name.strip().lower()
    if key not in _ALIASES:
        raise ContractViolation(f"unknown distribution name {name!r}")
    return _ALIASES[key]()


def draw(dist: Distribution2D, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. samples from ``dist`` using an existing rng stream."""
    if dist.kind == "gauss":
        return rng.standard_normal((n, 2))
    if dist.kind == "eight_gauss":
        angles = 2.0 * np.pi * rng.integers(0, 8, size=n) / 8.0
        centers = dist.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return centers + dist.mode_std * rng.standard_normal((n, 2))
    if dist.kind == "two_moons":
        theta = rng.uniform(0.0, np.pi, size=n)
        which = rng.integers(0, 2, size=n)
        arc = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        sign = np.where(which == 0, 1.0, -1.0)[:, None]
        pts = _MOON_CENTERS[which] + sign * arc
        pts = pts + dist.noise * rng.standard_normal((n, 2))
        return _MOON_SCALE * (pts - _MOON_SHIFT)
    # swiss_roll: 3D ribbon, (x, z) projection
    u = rng.uniform(0.0, 1.0, size=n)
    t = 1.5 * np.pi * (1.0 + 2.0 * u)
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    pts = pts + dist.noise * rng.standard_normal((n, 2))
    return _ROLL_SCALE * pts


def sample(dist: Distribution2D, n: int, seed: int) -> np.ndarray:
    """Reproducible sampler: (n, 2) float64 array."""
    if n < 1:
        raise ContractViolation("n must be >= 1")
    return draw(dist, n, np.random.default_rng(seed))


@dataclass(frozen=True)
class CouplingPlan:
    """Bijective pairing of a source batch to a target batch.

    ``permutation[i]`` is the target index matched to source i; ``cost`` is
    the summed squared distance of the pairing.
    """

    permutation: np.ndarray
    cost: float


def squared_distances(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    d = x0[:, None, :] - x1[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def ot_pair(x0: np.ndarray, x1: np.ndarray) -> CouplingPlan:
    """Exact minimum of sum ||x0_i - x1_{pi(i)}||^2 over permutations pi."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape or x0.ndim != 2:
        raise ContractViolation(f"ot_pair: batch shapes differ, {x0.shape} vs {x1.shape}")
    if x0.shape[0] > MAX_OT_BATCH:
        raise ContractViolation(f"ot_pair: batch {x0.shape[0]} exceeds {MAX_OT_BATCH}")
    cost_matrix = squared_distances(x0, x1)
    rows, cols = linear_sum_assignment(cost_matrix)
    perm = np.empty(x0.shape[0], dtype=np.intp)
    perm[rows] = cols
    return CouplingPlan(permutation=perm, cost=float(cost_matrix[rows, cols].sum()))


def save_samples_csv(points: np.ndarray, path) -> None:
    """Write an (n, 2) sample set as ``x,y`` rows with 17 significant digits."""
    points = np.asarray(points)
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for px, py in points:
            fh.write(f"{px:.17g},{py:.17g}\n")


def load_samples_csv(path) -> np.ndarray:
    """Read a sample CSV; accepts ``x,y`` or the sampler's ``t,x,y,sample_id``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if header[:2] == ["x", "y"]:
        return np.array([[float(r[0]), float(r[1])] for r in rows])
    if header[:3] == ["t", "x", "y"]:
        ts = np.array([float(r[0]) for r in rows])
        keep = ts == ts.max()
        return np.array([[float(r[1]), float(r[2])] for r, k in zip(rows, keep) if k])
    raise ContractViolation(f"unrecognized sample CSV header: {header}")
