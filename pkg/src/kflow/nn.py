"""MLPs, initialization, and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ndcore import ContractViolation, DualTensor, NumericalError, Tensor, silu


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a SiLU MLP: ``depth`` hidden layers plus a linear output map."""

    input_dim: int
    hidden_dim: int
    depth: int
    output_dim: int
    activation: str = "silu"

    def __post_init__(self):
        if self.depth < 1:
            raise ContractViolation("depth must be >= 1")
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ContractViolation("all dims must be >= 1")
        if self.activation != "silu":
            raise ContractViolation(f"unknown activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.depth + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


def init_params(spec: MlpSpec, seed: int) -> list[Tensor]:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params: list[Tensor] = []
    for fan_in, fan_out in spec.layer_dims():
        bound = np.sqrt(6.0 / fan_in)
        params.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        params.append(Tensor(np.zeros(fan_out)))
    return params


def check_params(spec: MlpSpec, params: list[Tensor]) -> None:
    dims = spec.layer_dims()
    if len(params) != 2 * len(dims):
        raise ContractViolation(f"expected {2 * len(dims)} parameter tensors, got {len(params)}")
    for i, (fan_in, fan_out) in enumerate(dims):
        if params[2 * i].shape != (fan_in, fan_out) or params[2 * i + 1].shape != (fan_out,):
            raise ContractViolation(f"layer {i} parameter shapes do not match spec")


def mlp_forward(spec: MlpSpec, params: list[Tensor], x):
    """Forward pass; ``x`` may be a Tensor or a DualTensor (tangent rides along)."""
    width = x.primal.shape[1] if isinstance(x, DualTensor) else x.shape[1]
    if width != spec.input_dim:
        raise ContractViolation(f"input width {width} != spec.input_dim {spec.input_dim}")
    check_params(spec, params)
    h = x
    n_layers = spec.depth + 1
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = silu(h)
    return h


@dataclass
class AdamState:
    """Optimizer state; ``m``/``v`` mirror the parameter shapes."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractViolation("betas must lie in [0, 1)")
        if self.lr <= 0.0:
            raise ContractViolation("lr must be positive")


def init_adam(params: list[Tensor], lr: float, **kwargs) -> AdamState:
    return AdamState(
        lr=lr,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
        **kwargs,
    )


def adam_step(
    state: AdamState, params: list[Tensor], grads: list
) -> tuple[list[Tensor], AdamState]:
    """One bias-corrected Adam update. Pure: returns fresh params and state."""
    garrs = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
    for i, g in enumerate(garrs):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {i}")
        if g.shape != params[i].data.shape:
            raise ContractViolation(f"gradient {i} shape {g.shape} != param {params[i].data.shape}")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, garrs, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        q = Tensor(p.data - update, requires_grad=p.requires_grad)
        new_params.append(q)
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, step=t, m=new_m, v=new_v)
