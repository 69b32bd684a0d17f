import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgvisc import autodiff as ad
from dgvisc.dg import build_mesh
from dgvisc.equations import advection, euler
from dgvisc.network import (
    CheckpointError,
    NetConfig,
    NeuralViscosity,
    encode_input,
    forward,
    init_params,
    jump_scale,
    load_params,
    parameter_count,
    save_params,
)

SOFTPLUS_M3 = np.log1p(np.exp(-3.0))


def random_params(config, seed, head_scale=0.3):
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    params["head.weight"] = rng.normal(0.0, head_scale, params["head.weight"].shape)
    params["stem.bias"] = rng.normal(0.0, 0.1, params["stem.bias"].shape)
    return params


def piecewise(mesh, values):
    return np.repeat(np.asarray(values, float)[:, None], mesh.p, axis=1)[None]


def test_parameter_count_near_two_thousand():
    n = parameter_count(NetConfig())
    assert 1500 <= n <= 2500
    assert n == sum(v.size for v in init_params(NetConfig()).values())


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        NetConfig(kernel=4)
    with pytest.raises(ValueError):
        NetConfig(width=0)


def test_one_hot_position_channels():
    U = np.arange(12.0).reshape(1, 3, 4)
    enc = encode_input(U).data
    assert enc.shape == (5, 12)
    np.testing.assert_array_equal(enc[0], np.arange(12.0))
    assert enc[1:, 5].tolist() == [0, 1, 0, 0]
    np.testing.assert_array_equal(enc[1:, :4], np.eye(4))
    np.testing.assert_array_equal(enc[1:, 4:8], enc[1:, 8:])


def test_euler_has_seven_input_channels():
    config = NetConfig(n_vars=3)
    assert config.in_channels == 7
    enc = encode_input(np.ones((3, 5, 4))).data
    assert enc.shape == (7, 20)


def test_fresh_network_outputs_constant():
    config = NetConfig()
    params = init_params(config, 0)
    rng = np.random.default_rng(1)
    for scale in (1.0, 2.0):
        out = forward(params, encode_input(scale * rng.normal(size=(1, 8, 4))), config).data
        np.testing.assert_allclose(out, SOFTPLUS_M3, rtol=1e-15)
    assert SOFTPLUS_M3 == pytest.approx(0.04859, abs=5e-6)


@given(st.integers(0, 2**32 - 1))
def test_outputs_are_positive(seed):
    config = NetConfig()
    rng = np.random.default_rng(seed)
    out = forward(random_params(config, seed), encode_input(rng.normal(size=(1, 6, 4)) * 5), config).data
    assert np.all(out > 0)


def test_jump_scale_examples():
    mesh = build_mesh(0.0, 1.0, 32, 4)
    vals = np.zeros(32)
    vals[5], vals[6] = 0.5, 0.3
    s = jump_scale(mesh, piecewise(mesh, vals)).data
    assert s[5] == pytest.approx(0.03125, abs=1e-15)
    vals = np.zeros(32)
    vals[5], vals[6] = 0.01, 0.008
    s = jump_scale(mesh, piecewise(mesh, vals)).data
    assert s[5] == pytest.approx(0.01, abs=1e-15)


def test_jump_scale_takes_max_over_variables():
    mesh = build_mesh(0.0, 1.0, 4, 4)
    U = np.ones((3, 4, 4))
    U[0, 1] = 1.001
    U[2, 1] = 1.004
    s = jump_scale(mesh, U).data
    np.testing.assert_allclose(s, [0.004, 0.004, 0.004, 0.0], atol=1e-15)


def test_continuous_solution_gets_zero_viscosity():
    mesh = build_mesh(0.0, 1.0, 16, 4)
    U = np.sin(2 * np.pi * mesh.x)[None]
    model = NeuralViscosity(NetConfig(), random_params(NetConfig(), 3))
    np.testing.assert_allclose(model(mesh, advection(), U).data, 0.0, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_viscosity_nonnegative_and_zero_on_jump_free_cells(seed):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(0.0, 1.0, 12, 4)
    vals = np.cumsum(rng.random(12) < 0.3).astype(float)
    mu = NeuralViscosity(NetConfig(), random_params(NetConfig(), seed))(mesh, advection(), piecewise(mesh, vals)).data
    assert np.all(mu >= 0)
    left = vals - np.roll(vals, 1)
    right = np.roll(vals, -1) - vals
    quiet = (left == 0) & (right == 0)
    assert not np.any(mu[quiet])


@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_translation_equivariance(seed, shift):
    config = NetConfig()
    rng = np.random.default_rng(seed)
    params = random_params(config, seed)
    U = rng.normal(size=(1, 8, 4))
    a = forward(params, encode_input(U), config).data
    b = forward(params, encode_input(np.roll(U, shift, axis=1)), config).data
    np.testing.assert_allclose(np.roll(a, shift * 4), b, atol=1e-12)


def test_wrong_state_shape_rejected():
    model = NeuralViscosity(NetConfig(), init_params(NetConfig()))
    mesh = build_mesh(0.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        model(mesh, euler(), np.ones((3, 4, 4)))


def test_resolution_independence():
    model = NeuralViscosity(NetConfig(), random_params(NetConfig(), 0))
    for n in (32, 256):
        mesh = build_mesh(0.0, 1.0, n, 4)
        U = np.where(mesh.x < 0.5, 1.0, 0.0)[None]
        mu = model(mesh, advection(), U).data
        assert mu.shape == (n, 4) and np.all(np.isfinite(mu))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    config = NetConfig()
    params = random_params(config, 4)
    path = tmp_path / "net.bin"
    save_params(params, path, config)
    assert path.read_bytes()[:7] == b"VISCNN1"
    loaded_config, loaded = load_params(path)
    assert loaded_config == NetConfig(head_bias=loaded_config.head_bias)
    for k, v in params.items():
        assert loaded[k].tobytes() == v.tobytes()
    save_params(loaded, tmp_path / "again.bin", config)
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_wrong_config(tmp_path):
    path = tmp_path / "net.bin"
    save_params(init_params(NetConfig()), path, NetConfig())
    with pytest.raises(CheckpointError, match="p=4"):
        load_params(path, NetConfig(p=3))


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "net.bin"
    save_params(init_params(NetConfig()), path, NetConfig())
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_params(path)
    path.write_bytes(b"NOTANET" + raw[7:])
    with pytest.raises(CheckpointError):
        load_params(path)


def test_parameter_gradient_matches_finite_differences():
    config = NetConfig(width=4)
    params = random_params(config, 7)
    mesh = build_mesh(0.0, 1.0, 6, 4)
    rng = np.random.default_rng(2)
    U = rng.normal(size=(1, 6, 4))
    weight = rng.uniform(0.5, 1.5, (6, 4))

    def value(ps):
        return float(np.sum(NeuralViscosity(config, ps)(mesh, advection(), U).data * weight))

    tape = ad.Tape()
    model = NeuralViscosity(config, params).on_tape(tape)
    grads = tape.backward(ad.sum(ad.mul(model(mesh, advection(), U), ad.constant(weight))))
    h = 1e-6
    for name in ("stem.weight", "block0.conv2.bias", "head.weight", "head.bias"):
        fd = np.zeros_like(params[name])
        for idx in np.ndindex(fd.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd[idx] = (value(plus) - value(minus)) / (2 * h)
        assert np.linalg.norm(grads[name] - fd) <= 1e-6 * np.linalg.norm(fd)
