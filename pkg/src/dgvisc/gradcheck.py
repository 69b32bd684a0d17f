"""Finite-difference check of the tape gradient of the training loss."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.cost import CostWeights
from dgvisc.network import init_params
from dgvisc.trainer import TrainConfig, make_references, sub_trajectory_loss

__all__ = ["GradCheckResult", "default_config", "check_gradient", "gradient_check", "corrupted_backward"]

FD_STEP = 1e-6


@dataclass
class GradCheckResult:
    m: int
    rel_error: float
    components: list[tuple[str, tuple[int, ...]]]
    tape: np.ndarray
    fd: np.ndarray


def default_config(**overrides) -> TrainConfig:
    """Scalar advection on 8 cells with p = 3."""
    base = dict(
        equation="advection",
        n_x=8,
        p=3,
        n_ref=64,
        N=8,
        m=1,
        stride=8,
        K=1,
        weights=CostWeights(osc=1e-5, acc=1.0, visc=2e3),
    )
    base.update(overrides)
    return TrainConfig(**base)


def random_params(config: TrainConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Initial parameters with a nonzero head so every layer receives gradient."""
    params = init_params(config.network, rng)
    params["head.weight"] = rng.normal(0.0, 0.3, params["head.weight"].shape)
    params["head.bias"] = params["head.bias"] + 1.0
    return params


def _loss(config, params, refs) -> float:
    return sub_trajectory_loss(config, params, refs, 0, 0, grad=False).value


def check_gradient(config: TrainConfig, n_components: int = 20, seed: int = 0, h: float = FD_STEP) -> GradCheckResult:
    """Compare tape and central-difference gradients on random components.

    The error is ||g_tape - g_fd|| / ||g_fd|| over the sampled components.
    """
    rng = np.random.default_rng(seed)
    params = random_params(config, rng)
    refs = make_references(config, rng, 1)

    res = sub_trajectory_loss(config, params, refs, 0, 0, grad=True)
    if res.unstable:
        raise RuntimeError("gradient check configuration is unstable")

    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    flat = rng.choice(int(sizes.sum()), size=min(n_components, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    comps = []
    tape_vals = []
    fd_vals = []
    for f in np.sort(flat):
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        name = names[i]
        idx = np.unravel_index(int(f - offsets[i]), params[name].shape)
        comps.append((name, tuple(int(j) for j in idx)))
        tape_vals.append(res.grads[name][idx])

        plus = {k: v.copy() for k, v in params.items()}
        minus = {k: v.copy() for k, v in params.items()}
        plus[name][idx] += h
        minus[name][idx] -= h
        fd_vals.append((_loss(config, plus, refs) - _loss(config, minus, refs)) / (2.0 * h))

    tape_arr = np.array(tape_vals)
    fd_arr = np.array(fd_vals)
    denom = np.linalg.norm(fd_arr)
    err = np.linalg.norm(tape_arr - fd_arr) / denom if denom > 0 else np.linalg.norm(tape_arr)
    return GradCheckResult(config.m, float(err), comps, tape_arr, fd_arr)


def gradient_check(
    config: TrainConfig | None = None, ms=(1, 2, 4, 8), n_components: int = 20, seed: int = 0
) -> list[GradCheckResult]:
    config = default_config() if config is None else config
    out = []
    for m in ms:
        cfg = replace(config, m=m, N=max(config.N, m), K=1)
        out.append(check_gradient(cfg, n_components, seed))
    return out


@contextlib.contextmanager
def corrupted_backward():
    """Negative control: softplus with a backward rule off by 1%."""
    original = ad.softplus

    def bad_softplus(x):
        x = ad._t(x)
        out = original(ad.constant(x.data)).data
        sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
        return ad._record(out, (x,), lambda g: (1.01 * g * sig,))

    ad.softplus = bad_softplus
    try:
        yield
    finally:
        ad.softplus = original
