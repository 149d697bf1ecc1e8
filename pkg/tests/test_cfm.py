import numpy as np
import pytest

from helpers import central_fd_grad, random_coords, rel_err
from kflow.cfm import (
    TrajectorySet,
    cfm_loss,
    gaussian_path,
    generate_trajectories,
    integrate,
    load_trajectories,
    ot_path,
    path_from_name,
    path_sample,
    save_trajectories,
    train_cfm,
    VectorFieldModel,
)
from kflow.datasets import eight_gaussians, gauss, ot_pair, sample
from kflow.ndcore import ContractViolation, NumericalError, Tensor
from kflow.nn import MlpSpec, init_params


def _constant_model(output: np.ndarray, hidden: int = 4) -> VectorFieldModel:
    """Zero-weight network whose output bias is ``output``."""
    spec = MlpSpec(input_dim=3, hidden_dim=hidden, depth=1, output_dim=2)
    params = init_params(spec, seed=0)
    for p in params:
        p.data[...] = 0.0
    params[-1].data[...] = output
    return VectorFieldModel(spec=spec, params=params)


def test_path_sample_endpoints_sigma0():
    path = gaussian_path(sigma=0.0)
    x0 = np.array([[1.0, 2.0], [-3.0, 0.5]])
    x1 = np.array([[0.0, 0.0], [4.0, 4.0]])
    xt, _ = path_sample(path, x0, x1, np.zeros(2))
    assert np.array_equal(xt, x0)
    xt, _ = path_sample(path, x0, x1, np.ones(2))
    assert np.array_equal(xt, x1)


def test_path_sample_midpoint():
    path = gaussian_path(sigma=0.0)
    xt, ut = path_sample(path, np.array([[0.0, 0.0]]), np.array([[2.0, 4.0]]), np.array([0.5]))
    assert np.array_equal(xt, [[1.0, 2.0]])
    assert np.array_equal(ut, [[2.0, 4.0]])


def test_path_sample_noise_std():
    path = gaussian_path(sigma=0.1)
    rng = np.random.default_rng(4)
    n = 100_000
    x0 = rng.standard_normal((n, 2))
    x1 = rng.standard_normal((n, 2))
    t = rng.uniform(0, 1, n)
    xt, _ = path_sample(path, x0, x1, t, rng)
    resid = xt - (t[:, None] * x1 + (1 - t)[:, None] * x0)
    assert abs(resid.std() - 0.1) < 0.002


def test_path_sample_time_contract():
    path = gaussian_path()
    with pytest.raises(ContractViolation):
        path_sample(path, np.zeros((1, 2)), np.zeros((1, 2)), np.array([1.5]))


def test_path_names_and_defaults():
    assert path_from_name("gauss").sigma == 0.1
    assert path_from_name("ot").sigma == 0.01
    assert path_from_name("ot", sigma=0.5).sigma == 0.5
    with pytest.raises(ContractViolation):
        path_from_name("linear")


def test_ot_path_straight_segments():
    # sigma=0 + OT pairing: x_t collinear with (x0, x1) to 1e-12
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((64, 2))
    x1 = rng.standard_normal((64, 2)) * 3.0
    x1 = x1[ot_pair(x0, x1).permutation]
    t = rng.uniform(0, 1, 64)
    xt, _ = path_sample(ot_path(sigma=0.0), x0, x1, t)
    seg = x1 - x0
    offset = xt - x0
    cross = offset[:, 0] * seg[:, 1] - offset[:, 1] * seg[:, 0]
    assert np.abs(cross).max() <= 1e-12


def test_cfm_loss_perfect_regressor_is_zero():
    u = np.array([1.5, -0.5])
    model = _constant_model(u)
    rng = np.random.default_rng(1)
    xt = rng.standard_normal((16, 2))
    t = rng.uniform(0, 1, 16)
    ut = np.tile(u, (16, 1))
    assert cfm_loss(model, xt, t, ut).item() == 0.0


def test_cfm_loss_zero_network_constant_target():
    model = _constant_model(np.zeros(2))
    xt = np.zeros((8, 2))
    ut = np.tile([2.0, 4.0], (8, 1))
    assert cfm_loss(model, xt, np.full(8, 0.3), ut).item() == pytest.approx(20.0)


def test_cfm_loss_nonnegative():
    rng = np.random.default_rng(2)
    spec = MlpSpec(input_dim=3, hidden_dim=8, depth=2, output_dim=2)
    model = VectorFieldModel(spec=spec, params=init_params(spec, seed=3))
    for _ in range(10):
        xt = rng.standard_normal((8, 2)) * 4
        t = rng.uniform(0, 1, 8)
        ut = rng.standard_normal((8, 2))
        assert cfm_loss(model, xt, t, ut).item() >= 0.0


def test_cfm_loss_grad_matches_fd():
    rng = np.random.default_rng(7)
    spec = MlpSpec(input_dim=3, hidden_dim=6, depth=2, output_dim=2)
    params = init_params(spec, seed=8)
    model = VectorFieldModel(spec=spec, params=params)
    xt = rng.standard_normal((8, 2))
    t = rng.uniform(0, 1, 8)
    ut = rng.standard_normal((8, 2))

    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = cfm_loss(model, xt, t, ut)
    loss.backward()
    flat = np.concatenate([p.grad.ravel() for p in params])

    coords = random_coords(rng, params, 64)
    fd = central_fd_grad(lambda ps: cfm_loss(model, xt, t, ut).item(), params, coords)
    sizes = np.cumsum([0] + [p.data.size for p in params])
    got = np.array([flat[sizes[pi] + fi] for pi, fi in coords])
    assert rel_err(got, fd, floor=1e-6).max() <= 1e-4


def test_train_smoke_single_step():
    model, losses = train_cfm(gauss(), eight_gaussians(), ot_path(), steps=1, batch=32, seed=0)
    assert len(losses) == 1 and np.isfinite(losses[0])
    assert all(np.all(np.isfinite(p.data)) for p in model.params)


def test_train_divergence_aborts_with_step_index():
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalError, match="step"):
        train_cfm(gauss(), eight_gaussians(), ot_path(), steps=60, batch=16, seed=0, lr=1e200)


def test_train_loss_moving_average_decreases(vf_small):
    _, losses = vf_small
    losses = np.array(losses)
    blocks = [losses[i:i + 500].mean() for i in range(0, 1500, 500)]
    assert all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))
    assert blocks[-1] < blocks[0]


def test_integrate_zero_field_is_constant():
    x0 = np.array([[1.0, -2.0], [0.5, 0.5]])
    states = integrate(lambda x, t: np.zeros_like(x), x0, 10, "euler")
    assert np.array_equal(states[:, -1], x0)
    assert np.array_equal(states[:, 3], x0)


def test_integrate_constant_field_displacement():
    model = _constant_model(np.array([1.0, 0.0]))
    x0 = np.array([[0.0, 0.0], [2.0, 3.0]])
    for method in ("euler", "rk4"):
        states = integrate(model, x0, 50, method)
        assert np.abs(states[:, -1] - (x0 + [1.0, 0.0])).max() <= 1e-12


def test_integrate_rk4_linear_decay():
    x0 = np.array([[1.0, -3.0], [0.25, 2.0]])
    states = integrate(lambda x, t: -x, x0, 100, "rk4")
    assert np.abs(states[:, -1] - x0 * np.exp(-1.0)).max() <= 1e-8


def test_integrate_contracts():
    with pytest.raises(ContractViolation):
        integrate(lambda x, t: -x, np.zeros((1, 2)), 0, "rk4")
    with pytest.raises(ContractViolation):
        integrate(lambda x, t: -x, np.zeros((1, 2)), 10, "midpoint")


def test_integrate_nan_abort():
    def blowup(x, t):
        return x * np.inf

    with pytest.raises(NumericalError, match="step"):
        integrate(blowup, np.ones((1, 2)), 5, "euler")


def test_euler_first_order_convergence(vf_small):
    vf, _ = vf_small
    x0 = sample(gauss(), 64, seed=5)
    reference = integrate(vf, x0, 400, "rk4")[:, -1]
    errs = []
    for n in (20, 40, 80):
        end = integrate(vf, x0, n, "euler")[:, -1]
        errs.append(np.linalg.norm(end - reference, axis=1).mean())
    for e1, e2 in zip(errs, errs[1:]):
        ratio = e2 / e1
        assert 0.4 <= ratio <= 0.6, f"halving ratio {ratio}"


def test_generate_trajectories_shapes_and_contracts():
    model = _constant_model(np.array([0.5, -0.5]))
    ts = generate_trajectories(model, gauss(), 1, seed=3)
    assert ts.states.shape == (1, 101, 2)
    assert ts.times.shape == (101,)
    assert ts.velocities.shape == (1, 101, 2)
    assert ts.terminals.shape == (1, 2)
    assert np.array_equal(ts.times, np.linspace(0, 1, 101))
    assert np.array_equal(ts.terminals, ts.states[:, -1])


def test_generate_trajectories_velocities_exact(vf_small):
    vf, _ = vf_small
    ts = generate_trajectories(vf, gauss(), 5, seed=4)
    from kflow.cfm import velocity

    for k in (0, 17, 100):
        expected = velocity(vf, ts.states[:, k], ts.times[k])
        assert np.array_equal(ts.velocities[:, k], expected)


def test_trajectories_match_integrate_endpoints(vf_small):
    vf, _ = vf_small
    ts = generate_trajectories(vf, gauss(), 16, seed=6)
    x0 = sample(gauss(), 16, seed=6)
    states = integrate(vf, x0, 100, "rk4")
    assert np.array_equal(ts.terminals, states[:, -1])


def test_trajectory_save_load_roundtrip(tmp_path):
    model = _constant_model(np.array([0.1, 0.2]))
    ts = generate_trajectories(model, gauss(), 7, seed=9)
    path = str(tmp_path / "corpus.traj")
    save_trajectories(ts, path)
    back = load_trajectories(path)
    assert np.array_equal(back.states, ts.states)
    assert np.array_equal(back.times, ts.times)
    assert np.array_equal(back.velocities, ts.velocities)
    assert np.array_equal(back.terminals, ts.terminals)
    assert back.seed == ts.seed
    assert back.model_checksum == ts.model_checksum


def test_trajectory_blob_corruption_detected(tmp_path):
    model = _constant_model(np.array([0.1, 0.2]))
    ts = generate_trajectories(model, gauss(), 2, seed=9)
    path = str(tmp_path / "corpus.traj")
    save_trajectories(ts, path)
    blob = tmp_path / "corpus.traj.bin"
    raw = bytearray(blob.read_bytes())
    raw[100] ^= 0xFF
    blob.write_bytes(raw)
    with pytest.raises(ContractViolation, match="checksum"):
        load_trajectories(path)
