"""Conditional-path flow matching: training, ODE sampling, trajectory corpus.

The velocity field is a small SiLU MLP over (x1, x2, t). Training regresses
it onto per-sample conditional velocities u = x1 - x0 along the interpolant
x_t ~ N(t x1 + (1-t) x0, sigma^2 I); the OT variant first pairs the
minibatch by exact linear assignment so paths straighten.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .datasets import Distribution2D, draw, ot_pair
from .ndcore import ContractViolation, DualTensor, NumericalError, Tensor, concat, square, tsum
from .nn import MlpSpec, adam_step, init_adam, init_params, mlp_forward

N_TRAJ_STEPS = 100  # time grid resolution for rollouts

DEFAULT_FIELD_SPEC = MlpSpec(input_dim=3, hidden_dim=64, depth=4, output_dim=2)


@dataclass(frozen=True)
class ConditionalPath:
    """Interpolant family: kind "gauss" (independent coupling) or "ot"."""

    kind: str
    sigma: float

    def __post_init__(self):
        if self.kind not in ("gauss", "ot"):
            raise ContractViolation(f"unknown path kind {self.kind!r}")
        if self.sigma < 0:
            raise ContractViolation("sigma must be >= 0")


def gaussian_path(sigma: float = 0.1) -> ConditionalPath:
    return ConditionalPath("gauss", sigma)


def ot_path(sigma: float = 0.01) -> ConditionalPath:
    return ConditionalPath("ot", sigma)


def path_from_name(name: str, sigma: float | None = None) -> ConditionalPath:
    key = name.strip().lower()
    if key in ("gauss", "gaussian"):
        return gaussian_path() if sigma is None else gaussian_path(sigma)
    if key == "ot":
        return ot_path() if sigma is None else ot_path(sigma)
    raise ContractViolation(f"unknown path name {name!r}")


@dataclass
class VectorFieldModel:
    spec: MlpSpec
    params: list[Tensor]


def field_output(model: VectorFieldModel, xt):
    """Graph-mode evaluation on a combined (batch, 3) input (Tensor or DualTensor)."""
    return mlp_forward(model.spec, model.params, xt)


def velocity(model: VectorFieldModel, x: np.ndarray, t) -> np.ndarray:
    """Plain-array evaluation of v(x, t); t is a scalar or (batch,) vector."""
    x = np.asarray(x, dtype=np.float64)
    tcol = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],)).reshape(-1, 1)
    out = field_output(model, Tensor(np.concatenate([x, tcol], axis=1)))
    return out.data


def field_fn(model):
    """Adapter: a VectorFieldModel or any callable (x, t) -> (batch, 2) array."""
    if isinstance(model, VectorFieldModel):
        return lambda x, t: velocity(model, x, t)
    if callable(model):
        return lambda x, t: np.asarray(model(x, t), dtype=np.float64)
    raise ContractViolation(f"not a velocity field: {type(model).__name__}")


def path_sample(
    path: ConditionalPath,
    x0: np.ndarray,
    x1: np.ndarray,
    t: np.ndarray,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (x_t, u_t) along the conditional path.

    x_t ~ N(t x1 + (1-t) x0, sigma^2 I) and u_t = x1 - x0. For the OT path
    the batches are expected to be ot_pair-aligned already.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x0.shape != x1.shape or t.shape != (x0.shape[0],):
        raise ContractViolation("path_sample: batch shapes disagree")
    if t.min() < 0.0 or t.max() > 1.0:
        raise ContractViolation("path_sample: t outside [0, 1]")
    xt = t[:, None] * x1 + (1.0 - t)[:, None] * x0
    if path.sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        xt = xt + path.sigma * rng.standard_normal(x0.shape)
    return xt, x1 - x0


def cfm_loss(model: VectorFieldModel, xt: np.ndarray, t: np.ndarray, ut: np.ndarray) -> Tensor:
    """Mean over the batch of ||v(x_t, t) - u_t||^2 (sum over the 2 coords)."""
    xt = np.asarray(xt, dtype=np.float64)
    batch = xt.shape[0]
    inp = Tensor(np.concatenate([xt, np.asarray(t, dtype=np.float64).reshape(-1, 1)], axis=1))
    diff = field_output(model, inp) - Tensor(np.asarray(ut, dtype=np.float64))
    return tsum(square(diff)) * (1.0 / batch)


def train_cfm(
    prior: Distribution2D,
    target: Distribution2D,
    path: ConditionalPath,
    steps: int,
    batch: int,
    seed: int,
    lr: float = 1e-3,
    spec: MlpSpec = DEFAULT_FIELD_SPEC,
) -> tuple[VectorFieldModel, list[float]]:
    """Train the velocity field; returns the model and the per-step loss curve."""
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed=int(rng.integers(2**32)))
    for p in params:
        p.requires_grad = True
    state = init_adam(params, lr=lr)
    model = VectorFieldModel(spec=spec, params=params)
    losses: list[float] = []
    for step in range(steps):
        x0 = draw(prior, batch, rng)
        x1 = draw(target, batch, rng)
        if path.kind == "ot":
            x1 = x1[ot_pair(x0, x1).permutation]
        t = rng.uniform(0.0, 1.0, size=batch)
        xt, ut = path_sample(path, x0, x1, t, rng)
        for p in model.params:
            p.grad = None
        loss = cfm_loss(model, xt, t, ut)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"train_cfm diverged at step {step}: loss={value}")
        loss.backward()
        model.params, state = adam_step(state, model.params, [p.grad for p in model.params])
        losses.append(value)
    return model, losses


def integrate(model, x0: np.ndarray, n_steps: int, method: str = "rk4") -> np.ndarray:
    """Fixed-step integration of dx/dt = v(x, t) from t=0 to t=1.

    ``model`` may be a VectorFieldModel or a plain (x, t) -> velocity callable.
    Returns the full path, shape (batch, n_steps + 1, 2).
    """
    if n_steps < 1:
        raise ContractViolation("n_steps must be >= 1")
    if method not in ("euler", "rk4"):
        raise ContractViolation(f"unknown method {method!r}")
    f = field_fn(model)
    x = np.asarray(x0, dtype=np.float64).copy()
    h = 1.0 / n_steps
    states = np.empty((x.shape[0], n_steps + 1, 2))
    states[:, 0] = x
    for k in range(n_steps):
        t = k * h
        if method == "euler":
            x = x + h * f(x, t)
        else:
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"integrate: NaN state at step {k + 1}")
        states[:, k + 1] = x
    return states


@dataclass
class TrajectorySet:
    """Rollout corpus: states (n, 101, 2), times (101,), velocities (n, 101, 2),
    terminals (n, 2)."""

    states: np.ndarray
    times: np.ndarray
    velocities: np.ndarray
    terminals: np.ndarray
    seed: int = 0
    model_checksum: int = 0

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]


def generate_trajectories(model, prior: Distribution2D, n_traj: int, seed: int) -> TrajectorySet:
    """100-step RK4 rollouts with per-step field evaluations recorded."""
    if n_traj < 1:
        raise ContractViolation("n_traj must be >= 1")
    f = field_fn(model)
    rng = np.random.default_rng(seed)
    x = draw(prior, n_traj, rng)
    n = N_TRAJ_STEPS
    h = 1.0 / n
    times = np.linspace(0.0, 1.0, n + 1)
    states = np.empty((n_traj, n + 1, 2))
    velocities = np.empty((n_traj, n + 1, 2))
    states[:, 0] = x
    for k in range(n):
        t = times[k]
        k1 = f(x, t)
        velocities[:, k] = k1
        k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"generate_trajectories: NaN state at step {k + 1}")
        states[:, k + 1] = x
    velocities[:, n] = f(x, times[n])
    checksum = params_checksum(model.params) if isinstance(model, VectorFieldModel) else 0
    return TrajectorySet(
        states=states,
        times=times,
        velocities=velocities,
        terminals=states[:, n].copy(),
        seed=seed,
        model_checksum=checksum,
    )


def params_checksum(params: list[Tensor]) -> int:
    crc = 0
    for p in params:
        crc = zlib.crc32(np.ascontiguousarray(p.data, dtype="<f8").tobytes(), crc)
    return crc


TRAJ_FORMAT = "kflow-trajectories-v1"


def save_trajectories(ts: TrajectorySet, path: str) -> None:
    """Persist as a JSON manifest at ``path`` plus a float64 LE blob at ``path``.bin."""
    blob_path = path + ".bin"
    parts = [ts.states, ts.times, ts.velocities, ts.terminals]
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)
    manifest = {
        "format": TRAJ_FORMAT,
        "n_traj": int(ts.n_traj),
        "n_steps": N_TRAJ_STEPS,
        "seed": int(ts.seed),
        "model_checksum": int(ts.model_checksum),
        "order": ["states", "times", "velocities", "terminals"],
        "dtype": "<f8",
        "blob": os.path.basename(blob_path),
        "blob_crc32": zlib.crc32(blob),
    }
    with open(blob_path, "wb") as fh:
        fh.write(blob)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectories(path: str) -> TrajectorySet:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != TRAJ_FORMAT:
        raise ContractViolation(f"unknown trajectory format in {path}")
    blob_path = os.path.join(os.path.dirname(path) or ".", manifest["blob"])
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    if zlib.crc32(blob) != manifest["blob_crc32"]:
        raise ContractViolation(f"trajectory blob checksum mismatch for {path}")
    n, steps = manifest["n_traj"], manifest["n_steps"]
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    sizes = [n * (steps + 1) * 2, steps + 1, n * (steps + 1) * 2, n * 2]
    offsets = np.cumsum([0] + sizes)
    if flat.size != offsets[-1]:
        raise ContractViolation("trajectory blob size does not match manifest")
    return TrajectorySet(
        states=flat[offsets[0]:offsets[1]].reshape(n, steps + 1, 2),
        times=flat[offsets[1]:offsets[2]].copy(),
        velocities=flat[offsets[2]:offsets[3]].reshape(n, steps + 1, 2),
        terminals=flat[offsets[3]:offsets[4]].reshape(n, 2),
        seed=manifest["seed"],
        model_checksum=manifest["model_checksum"],
    )


__all__ = [
    "ConditionalPath",
    "VectorFieldModel",
    "TrajectorySet",
    "gaussian_path",
    "ot_path",
    "path_from_name",
    "path_sample",
    "cfm_loss",
    "train_cfm",
    "integrate",
    "generate_trajectories",
    "velocity",
    "field_fn",
    "field_output",
    "save_trajectories",
    "load_trajectories",
    "params_checksum",
    "DEFAULT_FIELD_SPEC",
]
