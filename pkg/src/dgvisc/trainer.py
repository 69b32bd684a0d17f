"""Training loop for the neural viscosity.

Each episode samples fresh initial conditions, computes fine reference
trajectories with the MUSCL scheme, then performs ``batches_per_epoch``
Adam updates. Every update differentiates the cost of ``batch_size``
sub-trajectories of ``m`` macro-steps, each started from a point of a
reference trajectory. One macro-step is ``stride`` RK4 steps; references are
stored and costs evaluated only at macro-steps.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.cost import CostWeights, step_cost
from dgvisc.datagen import project_ic_to_fv, training_ic
from dgvisc.dg import DGMesh, DGState, build_mesh, rk4_step
from dgvisc.equations import EquationSpec, InstabilityError, advection, burgers, euler
from dgvisc.fv import FVMesh, fine_projection_matrix, reference_rollout
from dgvisc.network import NetConfig, NeuralViscosity, init_params, save_params

__all__ = [
    "ConfigError",
    "TrainConfig",
    "Adam",
    "ReferenceSet",
    "SubTrajectoryLoss",
    "EpochRecord",
    "TrainResult",
    "load_config",
    "make_references",
    "sub_trajectory_start",
    "sub_trajectory_loss",
    "batch_gradient",
    "validation_loss",
    "run_episode",
    "train",
]

logger = logging.getLogger(__name__)

EQUATIONS = {"advection": advection, "burgers": burgers, "euler": euler}


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    equation: str = "advection"
    n_x: int = 32
    p: int = 4
    n_ref: int = 2048
    dt: float = 1e-5
    N: int = 4096
    m: int = 512
    stride: int = 8
    K: int = 8
    batches_per_epoch: int = 20
    batch_size: int = 16
    validation_size: int = 16
    episodes: int = 1
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    penalty: float = 1e3
    workers: int = 1
    weights: CostWeights = field(default_factory=CostWeights)
    net: NetConfig | None = None

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}")
        positive = ("n_x", "p", "n_ref", "N", "m", "stride", "K", "batches_per_epoch", "batch_size", "workers")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.p < 2:
            raise ConfigError("p must be at least 2")
        if self.m > self.N:
            raise ConfigError(f"m={self.m} exceeds N={self.N}")
        if self.n_ref % self.n_x:
            raise ConfigError(f"n_ref={self.n_ref} is not a multiple of n_x={self.n_x}")
        if self.dt <= 0 or self.lr <= 0:
            raise ConfigError("dt and lr must be positive")
        if self.validation_size < 0 or self.episodes < 0:
            raise ConfigError("validation_size and episodes must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        net = self.network
        if net.n_vars != self.eq.n_vars or net.p != self.p:
            raise ConfigError("network size does not match the equation or p")

    @property
    def eq(self) -> EquationSpec:
        return EQUATIONS[self.equation]()

    @property
    def network(self) -> NetConfig:
        if self.net is not None:
            return self.net
        return NetConfig(n_vars=self.eq.n_vars, p=self.p)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["net"] = dataclasses.asdict(self.network)
        return out


_SECTIONS = {
    "problem": ("equation", "n_x", "p", "n_ref", "dt"),
    "training": (
        "N",
        "m",
        "stride",
        "K",
        "batches_per_epoch",
        "batch_size",
        "validation_size",
        "episodes",
        "seed",
        "penalty",
        "workers",
    ),
    "optimizer": ("lr", "beta1", "beta2", "eps"),
}


def load_config(path, **overrides) -> TrainConfig:
    """Read an INI file with sections [problem], [training], [optimizer], [cost], [network].

    Unknown keys are rejected. Keyword ``overrides`` win over the file.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None

    defaults = TrainConfig()
    kw: dict = {}
    cost: dict = {}
    net: dict = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section in _SECTIONS:
            allowed = _SECTIONS[section]
            for key, raw in items.items():
                if key not in allowed:
                    raise ConfigError(f"unknown key [{section}] {key}")
                kw[key] = _convert(raw, type(getattr(defaults, key)), key)
        elif section == "cost":
            for key, raw in items.items():
                if key not in ("osc", "acc", "visc"):
                    raise ConfigError(f"unknown key [cost] {key}")
                cost[key] = _convert(raw, float, key)
        elif section == "network":
            for key, raw in items.items():
                if key not in ("width", "kernel", "depth", "head_bias"):
                    raise ConfigError(f"unknown key [network] {key}")
                net[key] = _convert(raw, float if key == "head_bias" else int, key)
        else:
            raise ConfigError(f"unknown section [{section}]")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        if cost:
            kw["weights"] = CostWeights(**cost)
        eq = EQUATIONS[kw.get("equation", defaults.equation)]()
        if net:
            kw["net"] = NetConfig(n_vars=eq.n_vars, p=kw.get("p", defaults.p), **net)
        return TrainConfig(**kw)
    except KeyError as exc:
        raise ConfigError(f"unknown equation {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _convert(raw: str, kind: type, key: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


class Adam:
    """Plain Adam on a dict of arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = {}
        for name, value in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(value))
            v = self.v.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


@dataclass
class ReferenceSet:
    """Reference trajectories at macro-steps, shape (K, N + 1, s, n_ref)."""

    states: np.ndarray
    descriptors: list

    @property
    def K(self) -> int:
        return self.states.shape[0]

    @property
    def N(self) -> int:
        return self.states.shape[1] - 1


def training_mesh(config: TrainConfig) -> DGMesh:
    return build_mesh(0.0, 1.0, config.n_x, config.p, "periodic")


def make_references(config: TrainConfig, rng: np.random.Generator, count: int | None = None) -> ReferenceSet:
    """Sample ``count`` (default K) initial conditions and roll the fine scheme N macro-steps."""
    count = config.K if count is None else count
    eq = config.eq
    mesh = FVMesh(0.0, 1.0, config.n_ref, "periodic")
    out = np.empty((count, config.N + 1, eq.n_vars, config.n_ref))
    descriptors = []
    for k in range(count):
        f, desc = training_ic(eq, rng)
        descriptors.append(desc)
        traj = reference_rollout(eq, mesh, project_ic_to_fv(f, mesh), config.dt, config.N, config.stride)
        out[k] = np.stack([st.U for st in traj])
    return ReferenceSet(out, descriptors)


def _fit_matrix(mesh: DGMesh, ratio: int) -> np.ndarray:
    key = ("fit", ratio)
    if key not in mesh._ops:
        P = fine_projection_matrix(mesh.p, ratio, mesh.basis_at)
        mesh._ops[key] = np.linalg.pinv(P)
    return mesh._ops[key]


def sub_trajectory_start(refs: ReferenceSet | np.ndarray, k: int, n: int, mesh: DGMesh, m: int = 0) -> DGState:
    """DG state fitted by per-cell least squares to the reference averages at macro-step n."""
    states = refs.states if isinstance(refs, ReferenceSet) else np.asarray(refs)
    K, count = states.shape[:2]
    if not (0 <= k < K) or not (0 <= n <= count - 1 - m):
        raise IndexError(f"sub-trajectory ({k}, {n}) with m={m} is outside {K} x {count - 1} macro-steps")
    fine = states[k, n]
    s, n_ref = fine.shape
    if n_ref % mesh.n_x:
        raise ValueError(f"n_ref={n_ref} is not a multiple of n_x={mesh.n_x}")
    ratio = n_ref // mesh.n_x
    U = fine.reshape(s, mesh.n_x, ratio) @ _fit_matrix(mesh, ratio)
    return DGState(ad.constant(U), 0.0)


class _Memo:
    """Reuses the viscosity computed for the cost when the next step starts from the same state."""

    def __init__(self, model):
        self.model = model
        self.key = None
        self.value = None

    def __call__(self, mesh, eq, U):
        if U is not self.key:
            self.key, self.value = U, self.model(mesh, eq, U)
        return self.value


@dataclass
class SubTrajectoryLoss:
    value: float
    terms: dict[str, float]
    unstable: bool
    grads: dict[str, np.ndarray] | None = None


def _rollout_cost(config, mesh, model, refs, k, n):
    eq = config.eq
    weights = config.weights
    state = sub_trajectory_start(refs, k, n, mesh, config.m)
    memo = _Memo(model)
    parts = []
    terms = {"osc": 0.0, "acc": 0.0, "visc": 0.0}
    for j in range(1, config.m + 1):
        for _ in range(config.stride):
            state = rk4_step(mesh, eq, state, memo, config.dt)
        mu = memo(mesh, eq, state.U)
        c, t = step_cost(weights, mesh, state.U, refs.states[k, n + j], mu)
        parts.append(c)
        for name, value in t.items():
            terms[name] += getattr(weights, name) * value
    return ad.lincomb([1.0] * len(parts), parts), terms


def sub_trajectory_loss(
    config: TrainConfig, params: dict, refs: ReferenceSet, k: int, n: int, grad: bool = True
) -> SubTrajectoryLoss:
    """Weighted cost of one m-macro-step sub-trajectory, with its gradient if ``grad``.

    A blow-up yields ``config.penalty`` and a zero gradient.
    """
    mesh = training_mesh(config)
    net = config.network
    tape = ad.Tape() if grad else None
    model = NeuralViscosity(net, params)
    if grad:
        model = model.on_tape(tape)
    try:
        if grad:
            loss, terms = _rollout_cost(config, mesh, model, refs, k, n)
        else:
            with ad.no_record():
                loss, terms = _rollout_cost(config, mesh, model, refs, k, n)
    except InstabilityError as exc:
        logger.info("sub-trajectory (%d, %d) unstable at step %s: %s", k, n, exc.step, exc.reason)
        if tape is not None:
            tape.release()
        zero = {name: np.zeros(shape) for name, shape in net.shapes().items()} if grad else None
        return SubTrajectoryLoss(config.penalty, {}, True, zero)
    value = float(loss.data)
    grads = tape.backward(loss) if grad else None
    return SubTrajectoryLoss(value, terms, False, grads)


# Worker processes inherit these through fork.
_WORKER_STATE: dict = {}


def _worker_task(job):
    config, params, k, n = job
    return sub_trajectory_loss(config, params, _WORKER_STATE["refs"], k, n)


def batch_gradient(
    config: TrainConfig, params: dict, refs: ReferenceSet, batch: list[tuple[int, int]], pool=None
) -> tuple[float, dict[str, np.ndarray], int]:
    """J and its gradient summed over ``batch``; returns (J, grads, unstable count)."""
    if pool is None:
        results = [sub_trajectory_loss(config, params, refs, k, n) for k, n in batch]
    else:
        results = pool.map(_worker_task, [(config, params, k, n) for k, n in batch])
    total = 0.0
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    for r in results:
        total += r.value
        for name in grads:
            grads[name] += r.grads[name]
    return total, grads, sum(r.unstable for r in results)


def draw_batch(config: TrainConfig, rng: np.random.Generator, K: int | None = None) -> list[tuple[int, int]]:
    """Uniform draws with replacement from {0..K-1} x {0..N-m}."""
    K = config.K if K is None else K
    ks = rng.integers(0, K, config.batch_size)
    ns = rng.integers(0, config.N - config.m + 1, config.batch_size)
    return [(int(k), int(n)) for k, n in zip(ks, ns)]


@dataclass
class ValidationSet:
    refs: ReferenceSet
    index: list[tuple[int, int]]


def make_validation_set(config: TrainConfig, rng: np.random.Generator) -> ValidationSet:
    """Held-out sub-trajectories drawn from their own initial conditions."""
    count = min(config.K, max(config.validation_size, 1))
    refs = make_references(config, rng, count)
    ks = rng.integers(0, count, config.validation_size)
    ns = rng.integers(0, config.N - config.m + 1, config.validation_size)
    return ValidationSet(refs, [(int(k), int(n)) for k, n in zip(ks, ns)])


def validation_loss(config: TrainConfig, params: dict, vset: ValidationSet) -> dict[str, float]:
    """Mean cost over the frozen set, with the weighted contribution of each term."""
    out = {"loss": 0.0, "osc": 0.0, "acc": 0.0, "visc": 0.0, "unstable": 0}
    if not vset.index:
        return out
    for k, n in vset.index:
        r = sub_trajectory_loss(config, params, vset.refs, k, n, grad=False)
        out["loss"] += r.value
        out["unstable"] += int(r.unstable)
        for name, value in r.terms.items():
            out[name] += value
    size = len(vset.index)
    for name in ("loss", "osc", "acc", "visc"):
        out[name] /= size
    return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_osc: float
    val_acc: float
    val_visc: float
    unstable: int


LOSS_COLUMNS = ["epoch", "train_loss", "val_loss", "val_osc", "val_acc", "val_visc", "unstable"]


def run_episode(
    config: TrainConfig,
    params: dict,
    optimizer: Adam,
    rng: np.random.Generator,
) -> tuple[dict, float, int, ReferenceSet]:
    """Fresh references, then ``batches_per_epoch`` Adam updates.

    Returns the new parameters, the mean per-sub-trajectory training loss,
    the number of unstable sub-trajectories and the references used.
    """
    refs = make_references(config, rng)
    pool = None
    if config.workers > 1:
        # forked after the references exist so the workers inherit them
        _WORKER_STATE["refs"] = refs
        pool = multiprocessing.get_context("fork").Pool(config.workers)
    losses = []
    unstable = 0
    try:
        for b in range(config.batches_per_epoch):
            batch = draw_batch(config, rng)
            J, grads, bad = batch_gradient(config, params, refs, batch, pool)
            unstable += bad
            params = optimizer.step(params, grads)
            losses.append(J / len(batch))
            logger.debug("batch %d: J=%.6e unstable=%d", b, J, bad)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
            _WORKER_STATE.clear()
    return params, float(np.mean(losses)), unstable, refs


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    initial_validation: dict[str, float]
    history: list[EpochRecord]
    checkpoints: list[Path]


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def train(config: TrainConfig, out_dir=None) -> TrainResult:
    """Run ``config.episodes`` episodes; writes checkpoints, a loss CSV and a manifest if ``out_dir``."""
    root = np.random.SeedSequence(config.seed)
    init_seq, val_seq, episode_seq = root.spawn(3)
    net = config.network
    params = init_params(net, np.random.default_rng(init_seq))
    vset = make_validation_set(config, np.random.default_rng(val_seq))
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.eps)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    initial = validation_loss(config, params, vset)
    logger.info("initial validation loss %.6e", initial["loss"])
    history: list[EpochRecord] = []
    checkpoints: list[Path] = []

    for e, seq in enumerate(episode_seq.spawn(config.episodes), start=1):
        params, train_loss, bad, _ = run_episode(config, params, optimizer, np.random.default_rng(seq))
        val = validation_loss(config, params, vset)
        rec = EpochRecord(e, train_loss, val["loss"], val["osc"], val["acc"], val["visc"], bad)
        history.append(rec)
        logger.info("epoch %d: train %.6e validation %.6e unstable %d", e, train_loss, val["loss"], bad)
        if out is not None:
            path = out / f"checkpoint_{e:04d}.bin"
            save_params(params, path, net)
            checkpoints.append(path)
            _write_losses(out / "losses.csv", history)

    result = TrainResult(params, initial, history, checkpoints)
    if out is not None:
        if not history:
            _write_losses(out / "losses.csv", history)
        _write_manifest(out / "manifest.json", config, result, vset)
    return result


def _write_losses(path: Path, history: list[EpochRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for rec in history:
            row = dataclasses.asdict(rec)
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOSS_COLUMNS[1:-1]] + [row["unstable"]])


def _write_manifest(path: Path, config: TrainConfig, result: TrainResult, vset: ValidationSet) -> None:
    manifest = {
        "command": "train",
        "config": config.to_dict(),
        "config_sha256": config_hash(config),
        "seed": config.seed,
        "initial_validation": result.initial_validation,
        "history": [dataclasses.asdict(r) for r in result.history],
        "validation_index": vset.index,
        "outputs": {
            "losses": "losses.csv",
            "checkpoints": [p.name for p in result.checkpoints],
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
