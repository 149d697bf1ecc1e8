"""Decoder-free Koopman embedding in which the flow-matching dynamics are linear.

The observable vector is z = [x1, x2, t, 1, g(x, t)]: the raw state is kept
as the leading coordinates (so decoding is a projection, never learned), time
is adjoined to make the dynamics autonomous, and a constant coordinate gives
the dense generator matrix access to the affine dt/dt = 1 row. The learned
block g is a SiLU MLP over (x1, x2, t).

Training fits a dense generator L and the encoder jointly so that
L z(x, t) matches the time-augmented directional derivative of z along
(v(x, t), 1), with an optional long-horizon term that pushes e^{L(1-t)} z_t
onto z at t=1, scheduled from short horizons to long ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cfm import N_TRAJ_STEPS, TrajectorySet, VectorFieldModel, field_fn
from .linalg import expm
from .ndcore import (
    ContractViolation,
    DualTensor,
    NumericalError,
    Tensor,
    concat,
    dual_concat,
    mean,
    slice_cols,
    square,
    transpose,
)
from .nn import MlpSpec, adam_step, init_adam, init_params, mlp_forward

N_PRESERVED = 4  # x1, x2, t, constant-1
STATE_DIM = 2


@dataclass
class KoopmanModel:
    """Encoder plus dense generator over [x1, x2, t, 1, g_1..g_p]."""

    encoder_spec: MlpSpec | None
    encoder_params: list[Tensor]
    L: Tensor

    def __post_init__(self):
        if self.encoder_spec is not None and self.encoder_spec.input_dim != 3:
            raise ContractViolation("encoder input must be (x1, x2, t)")
        p = self.p_total
        if self.L.shape != (p, p):
            raise ContractViolation(f"L shape {self.L.shape} != ({p}, {p})")

    @property
    def p_learned(self) -> int:
        return self.encoder_spec.output_dim if self.encoder_spec is not None else 0

    @property
    def p_total(self) -> int:
        return N_PRESERVED + self.p_learned


def default_encoder_spec(p_learned: int = 28, hidden: int = 128, depth: int = 4) -> MlpSpec:
    return MlpSpec(input_dim=3, hidden_dim=hidden, depth=depth, output_dim=p_learned)


def init_koopman(
    p_learned: int = 28,
    seed: int = 0,
    encoder_spec: MlpSpec | None = None,
    operator_init_std: float = 1e-3,
) -> KoopmanModel:
    """Fresh model: Kaiming encoder, L ~ N(0, operator_init_std^2)."""
    rng = np.random.default_rng(seed)
    if p_learned > 0:
        spec = encoder_spec if encoder_spec is not None else default_encoder_spec(p_learned)
        if spec.output_dim != p_learned:
            raise ContractViolation("encoder_spec.output_dim must equal p_learned")
        params = init_params(spec, seed=int(rng.integers(2**32)))
    else:
        spec, params = None, []
    p = N_PRESERVED + p_learned
    L = Tensor(rng.normal(0.0, operator_init_std, size=(p, p)))
    return KoopmanModel(encoder_spec=spec, encoder_params=params, L=L)


def _time_column(t, batch: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,)).reshape(-1, 1)


def encode(model: KoopmanModel, x: np.ndarray, t) -> Tensor:
    """z = [x1, x2, t, 1, g(x, t)]; coordinates 0..3 are preserved exactly."""
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    xt = Tensor(np.concatenate([x, _time_column(t, b)], axis=1))
    ones = Tensor(np.ones((b, 1)))
    blocks = [xt, ones]
    if model.p_learned > 0:
        blocks.append(mlp_forward(model.encoder_spec, model.encoder_params, xt))
    return concat(blocks)


def encode_with_rate(model: KoopmanModel, x: np.ndarray, t, v: np.ndarray) -> tuple[Tensor, Tensor]:
    """(z, dz) where dz is the derivative of z along the augmented direction (v, 1).

    The rate is forward-mode; both outputs stay differentiable with respect
    to the encoder parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ContractViolation(f"direction shape {v.shape} != state shape {x.shape}")
    b = x.shape[0]
    primal = np.concatenate([x, _time_column(t, b)], axis=1)
    tangent = np.concatenate([v, np.ones((b, 1))], axis=1)
    xt = DualTensor(Tensor(primal), Tensor(tangent))
    blocks: list = [xt, Tensor(np.ones((b, 1)))]
    if model.p_learned > 0:
        blocks.append(mlp_forward(model.encoder_spec, model.encoder_params, xt))
    z = dual_concat(blocks)
    return z.primal, z.tangent


def generator_loss(model: KoopmanModel, x_t: np.ndarray, t, v: np.ndarray) -> Tensor:
    """Mean over all entries of (L z - dz)^2, dz the rate of z along (v, 1)."""
    z, dz = encode_with_rate(model, x_t, t, v)
    residual = z @ transpose(model.L) - dz
    return mean(square(residual))


def prediction_loss(model: KoopmanModel, x_t: np.ndarray, t, v: np.ndarray) -> Tensor:
    """Mean over all entries of ((L z)[0:2] - v)^2: generator state rows vs field."""
    z = encode(model, x_t, t)
    pred = slice_cols(z @ transpose(model.L), 0, STATE_DIM)
    return mean(square(pred - Tensor(np.asarray(v, dtype=np.float64))))


def target_consistency_loss(model: KoopmanModel, x_t: np.ndarray, t_i, x_1: np.ndarray) -> Tensor:
    """Mean over all entries of (e^{L (1 - t_i)} z(x_t, t_i) - z(x_1, 1))^2.

    The whole batch must share t_i so one matrix exponential serves all rows.
    """
    t_arr = np.atleast_1d(np.asarray(t_i, dtype=np.float64))
    if not np.all(t_arr == t_arr[0]):
        raise ContractViolation("target_consistency_loss: batch must share a single t_i")
    ti = float(t_arr[0])
    if not (0.0 <= ti <= 1.0):
        raise ContractViolation(f"t_i = {ti} outside [0, 1]")
    z_t = encode(model, x_t, ti)
    z_1 = encode(model, x_1, 1.0)
    E = expm(model.L * (1.0 - ti))
    return mean(square(z_t @ transpose(E) - z_1))


@dataclass(frozen=True)
class LossWeights:
    generator: float = 1.0
    consistency: float = 1.0
    prediction: float = 0.0

    @classmethod
    def from_names(cls, names, **weights) -> "LossWeights":
        wanted = {n.strip().lower() for n in names}
        unknown = wanted - {"generator", "consistency", "prediction"}
        if unknown:
            raise ContractViolation(f"unknown loss name(s): {sorted(unknown)}")
        return cls(
            generator=weights.get("generator", 1.0) if "generator" in wanted else 0.0,
            consistency=weights.get("consistency", 1.0) if "consistency" in wanted else 0.0,
            prediction=weights.get("prediction", 1.0) if "prediction" in wanted else 0.0,
        )


@dataclass(frozen=True)
class CurriculumSchedule:
    """Start-time schedule for the consistency horizon."""

    t_start: float = 1.0
    t_end: float = 0.0
    epochs: int = 1
    mode: str = "reverse"  # "reverse" | "forward" | "random"

    def __post_init__(self):
        if self.mode not in ("reverse", "forward", "random"):
            raise ContractViolation(f"unknown schedule mode {self.mode!r}")

    def t_at(self, frac: float, rng: np.random.Generator) -> float:
        lo, hi = min(self.t_start, self.t_end), max(self.t_start, self.t_end)
        if self.mode == "reverse":
            return self.t_start + (self.t_end - self.t_start) * frac
        if self.mode == "forward":
            return self.t_end + (self.t_start - self.t_end) * frac
        return float(rng.uniform(lo, hi))


class UniformPairs:
    """(x, t, v) batches with x uniform over the square domain and t on the grid."""

    has_terminals = False

    def __init__(
        self,
        vf,
        seed: int = 0,
        extent: float = 8.0,
        time_steps: int = N_TRAJ_STEPS,
        val_size: int = 2048,
    ):
        self._field = field_fn(vf)
        self._extent = extent
        self._time_steps = time_steps
        self._rng = np.random.default_rng(seed)
        self._val = self._draw(val_size)

    def _draw(self, n: int):
        x = self._rng.uniform(-self._extent, self._extent, size=(n, 2))
        t = self._rng.integers(0, self._time_steps + 1, size=n) / self._time_steps
        return x, t, self._field(x, t)

    def train_batch(self, n: int):
        return self._draw(n)

    def validation(self):
        return self._val


class TrajectoryData:
    """Batches drawn from a rollout corpus; provides terminal states.

    Trajectories are split 80/20 into train/validation up front.
    """

    has_terminals = True

    def __init__(
        self,
        ts: TrajectorySet,
        seed: int = 0,
        val_fraction: float = 0.2,
        val_size: int = 2048,
    ):
        self._ts = ts
        self._rng = np.random.default_rng(seed)
        idx = self._rng.permutation(ts.n_traj)
        n_val = max(1, int(round(val_fraction * ts.n_traj))) if ts.n_traj > 1 else 0
        self._val_idx = idx[:n_val]
        self._train_idx = idx[n_val:] if n_val < ts.n_traj else idx
        self._val = self._points(self._val_idx, min(val_size, max(1, self._val_idx.size) * 8))

    def _points(self, traj_idx: np.ndarray, n: int):
        if traj_idx.size == 0:
            traj_idx = self._train_idx
        i = self._rng.choice(traj_idx, size=n)
        k = self._rng.integers(0, self._ts.times.size, size=n)
        return self._ts.states[i, k], self._ts.times[k], self._ts.velocities[i, k]

    def train_batch(self, n: int):
        return self._points(self._train_idx, n)

    def validation(self):
        return self._val

    def consistency_batch(self, n: int, t_i: float):
        """Shared-time batch: (x at the grid time nearest t_i, that time, terminal)."""
        k = int(round(float(t_i) * (self._ts.times.size - 1)))
        k = min(max(k, 0), self._ts.times.size - 1)
        i = self._rng.choice(self._train_idx, size=n)
        return self._ts.states[i, k], float(self._ts.times[k]), self._ts.terminals[i]


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    generator: list[float] = field(default_factory=list)
    consistency: list[float] = field(default_factory=list)
    prediction: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    emitted_t: list[float] = field(default_factory=list)
    val_steps: list[int] = field(default_factory=list)
    val_generator: list[float] = field(default_factory=list)


def _val_generator_loss(model: KoopmanModel, source) -> float:
    x, t, v = source.validation()
    return generator_loss(model, x, t, v).item()


def train_koopman(
    vf,
    source,
    losses: LossWeights = LossWeights(),
    schedule: CurriculumSchedule = CurriculumSchedule(),
    seed: int = 0,
    steps: int = 4000,
    batch: int = 256,
    p_learned: int = 28,
    encoder_spec: MlpSpec | None = None,
    encoder_lr: float = 1e-3,
    operator_lr: float = 1e-4,
    operator_init_std: float = 1e-3,
    val_every: int | None = None,
) -> tuple[KoopmanModel, TrainLog]:
    """Joint training of encoder and generator against a frozen velocity field.

    ``source`` is a UniformPairs or TrajectoryData instance; the consistency
    term requires terminal states and therefore a trajectory source.
    """
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    if losses.consistency > 0.0 and not getattr(source, "has_terminals", False):
        raise ContractViolation(
            "consistency loss needs terminal states; use a trajectory source"
        )
    vf_params = getattr(vf, "params", [])
    frozen_flags = [p.requires_grad for p in vf_params]
    for p in vf_params:
        p.requires_grad = False

    rng = np.random.default_rng(seed)
    model = init_koopman(
        p_learned=p_learned,
        seed=int(rng.integers(2**32)),
        encoder_spec=encoder_spec,
        operator_init_std=operator_init_std,
    )
    for p in model.encoder_params:
        p.requires_grad = True
    model.L.requires_grad = True

    enc_state = init_adam(model.encoder_params, lr=encoder_lr) if model.encoder_params else None
    op_state = init_adam([model.L], lr=operator_lr)
    if val_every is None:
        val_every = max(1, steps // 20)

    log = TrainLog()
    log.val_steps.append(0)
    log.val_generator.append(_val_generator_loss(model, source))

    try:
        for step in range(steps):
            frac = step / (steps - 1) if steps > 1 else 0.0
            x, t, v = source.train_batch(batch)
            for p in model.encoder_params:
                p.grad = None
            model.L.grad = None

            parts = {}
            total = None
            if losses.generator > 0.0:
                parts["generator"] = generator_loss(model, x, t, v)
                total = parts["generator"] * losses.generator
            if losses.prediction > 0.0:
                parts["prediction"] = prediction_loss(model, x, t, v)
                term = parts["prediction"] * losses.prediction
                total = term if total is None else total + term
            if losses.consistency > 0.0:
                t_i = schedule.t_at(frac, rng)
                xc, tc, x1c = source.consistency_batch(batch, t_i)
                log.emitted_t.append(tc)
                parts["consistency"] = target_consistency_loss(model, xc, tc, x1c)
                term = parts["consistency"] * losses.consistency
                total = term if total is None else total + term
            if total is None:
                raise ContractViolation("all loss weights are zero")

            values = {k: p.item() for k, p in parts.items()}
            if not all(np.isfinite(list(values.values()))):
                raise NumericalError(f"train_koopman diverged at step {step}: {values}")

            total.backward()
            if enc_state is not None:
                model.encoder_params, enc_state = adam_step(
                    enc_state, model.encoder_params, [p.grad for p in model.encoder_params]
                )
            [model.L], op_state = adam_step(op_state, [model.L], [model.L.grad])

            log.steps.append(step)
            for name in ("generator", "consistency", "prediction"):
                getattr(log, name).append(values.get(name, 0.0))
            log.total.append(total.item())

            if (step + 1) % val_every == 0 or step == steps - 1:
                log.val_steps.append(step + 1)
                log.val_generator.append(_val_generator_loss(model, source))
    finally:
        for p, flag in zip(vf_params, frozen_flags):
            p.requires_grad = flag

    return model, log


__all__ = [
    "KoopmanModel",
    "LossWeights",
    "CurriculumSchedule",
    "UniformPairs",
    "TrajectoryData",
    "TrainLog",
    "N_PRESERVED",
    "init_koopman",
    "default_encoder_spec",
    "encode",
    "encode_with_rate",
    "generator_loss",
    "prediction_loss",
    "target_consistency_loss",
    "train_koopman",
]
