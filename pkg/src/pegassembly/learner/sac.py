"""Soft actor-critic residual policy on the hand-rolled network core.

The residual policy observes the attention crop, the plan-relative pose, the
contact wrench, and a short stacked history, and outputs a desired wrench that
rides on top of the planned compliance command. Everything here is seeded and
single-threaded, so a fixed seed reproduces a learning curve bit for bit.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ..controller import ControlCommand
from ..geometry import Pose, Wrench, pose_delta
from .nets import Adam, Params, TwoBranchMLP, flat_grad_norm

LOG_2PI = math.log(2.0 * math.pi)
OBS_CLAMP = 1.5


class NonFiniteParams(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Reward and residual combination


@dataclass(frozen=True)
class RewardSpec:
    """Multi-objective reward: guidance and force penalties plus a success bonus."""

    W: np.ndarray
    F_max: np.ndarray
    lambda1: float = 1.0
    lambda2: float = 0.8
    lambda3: float = 1.0
    R_succ: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))
        object.__setattr__(self, "F_max", np.asarray(self.F_max, dtype=float))
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("reward weights must be non-negative")


def reward(X: Pose, goal: Pose, F: Wrench, success: bool, spec: RewardSpec) -> float:
    """Normalized distance and force penalties; positive bonus only on success."""
    guid = float(np.linalg.norm(pose_delta(X, goal) / spec.W))
    forc = float(np.linalg.norm(F.as_array() / spec.F_max))
    return -spec.lambda1 * guid - spec.lambda2 * forc + spec.lambda3 * (spec.R_succ if success else 0.0)


@dataclass(frozen=True)
class Action:
    """Desired wrench, already squashed into the +/-F_max box."""

    F_d: np.ndarray

    def as_wrench(self) -> Wrench:
        return Wrench.from_array(self.F_d)


def combine(base: ControlCommand, residual: Action, F_max: Wrench | None = None) -> ControlCommand:
    """Residual wrench rides on the planned pose/stiffness command."""
    f_d = residual.as_wrench()
    if F_max is not None:
        f_d = f_d.clamped(F_max)
    return ControlCommand(X_d=base.X_d, F_d=f_d, K=base.K)


# ---------------------------------------------------------------------------
# Observations and replay


@dataclass(frozen=True)
class Observation:
    """Inputs of the residual policy, normalized and clamped to +/-1.5.

    attention: flattened crop pixels in [0, 1] (empty for the force-only
    variant); r_p and wrench normalized by the exploration space and the
    force limit; history: the last k (r_p, wrench) frames stacked.
    """

    attention: np.ndarray
    r_p: np.ndarray
    wrench: np.ndarray
    history: np.ndarray

    def vector(self) -> np.ndarray:
        v = np.concatenate([self.attention.ravel(), self.r_p, self.wrench, self.history.ravel()])
        return np.clip(v, -OBS_CLAMP, OBS_CLAMP)


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


class ReplayBuffer:
    """Flat ring buffer with chunked growth up to capacity."""

    CHUNK = 4096

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self._alloc = 0
        self._size = 0
        self._next = 0
        self.obs = np.empty((0, obs_dim), dtype=np.float32)
        self.act = np.empty((0, action_dim), dtype=np.float32)
        self.rew = np.empty((0,), dtype=np.float32)
        self.nxt = np.empty((0, obs_dim), dtype=np.float32)
        self.done = np.empty((0,), dtype=np.float32)

    def __len__(self) -> int:
        return self._size

    def _grow(self):
        new_alloc = min(self.capacity, max(self.CHUNK, self._alloc * 2))
        for name in ("obs", "act", "rew", "nxt", "done"):
            arr = getattr(self, name)
            shape = (new_alloc,) + arr.shape[1:]
            grown = np.empty(shape, dtype=np.float32)
            grown[: self._size] = arr[: self._size]
            setattr(self, name, grown)
        self._alloc = new_alloc

    def push(self, tr: Transition) -> None:
        if self._next >= self._alloc and self._alloc < self.capacity:
            self._grow()
        i = self._next % self._alloc
        self.obs[i] = tr.obs
        self.act[i] = tr.action
        self.rew[i] = tr.reward
        self.nxt[i] = tr.next_obs
        self.done[i] = 1.0 if tr.done else 0.0
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self._size, size=batch)
        return (
            self.obs[idx].astype(np.float64),
            self.act[idx].astype(np.float64),
            self.rew[idx].astype(np.float64),
            self.nxt[idx].astype(np.float64),
            self.done[idx].astype(np.float64),
        )


# ---------------------------------------------------------------------------
# Agent parameters


@dataclass(frozen=True)
class ResidualSacConfig:
    action_dim: int = 4
    img_dim: int = 256
    img_hidden: tuple[int, ...] = (32, 32)
    vec_dim: int = 32
    trunk_hidden: tuple[int, ...] = (128, 128)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    replay_capacity: int = 100_000
    init_alpha: float = 0.2
    target_entropy: float | None = None
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    history_len: int = 3
    dtype: str = "float32"   # training precision; gradient checks use float64

    @property
    def obs_dim(self) -> int:
        return self.img_dim + self.vec_dim

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def resolved_target_entropy(self) -> float:
        return -float(self.action_dim) if self.target_entropy is None else self.target_entropy


def _actor_arch(cfg: ResidualSacConfig) -> TwoBranchMLP:
    return TwoBranchMLP(cfg.img_dim, cfg.img_hidden, cfg.vec_dim, cfg.trunk_hidden, (cfg.action_dim, cfg.action_dim))


def _critic_arch(cfg: ResidualSacConfig) -> TwoBranchMLP:
    return TwoBranchMLP(cfg.img_dim, cfg.img_hidden, cfg.vec_dim + cfg.action_dim, cfg.trunk_hidden, (1,))


@dataclass
class PolicyParams:
    """Actor, twin critics with Polyak targets, temperature, and optimizer state."""

    cfg: ResidualSacConfig
    action_scale: np.ndarray
    actor: Params
    q1: Params
    q2: Params
    q1_targ: Params
    q2_targ: Params
    log_alpha: np.ndarray
    opt_actor: dict = field(default_factory=dict)
    opt_q1: dict = field(default_factory=dict)
    opt_q2: dict = field(default_factory=dict)
    opt_alpha: dict = field(default_factory=dict)
    updates: int = 0

    def is_finite(self) -> bool:
        for p in (self.actor, self.q1, self.q2, self.q1_targ, self.q2_targ):
            for v in p.values():
                if not np.all(np.isfinite(v)):
                    return False
        return bool(np.all(np.isfinite(self.log_alpha)))


def init_policy(cfg: ResidualSacConfig, action_scale, seed: int) -> PolicyParams:
    """Fresh parameters. Both actor heads start at zero so the residual is a
    strict no-op in deterministic mode until training moves it."""
    rng = np.random.default_rng(seed)
    actor_arch = _actor_arch(cfg)
    critic_arch = _critic_arch(cfg)
    actor = actor_arch.init(rng, zero_heads=(0, 1), dtype=cfg.np_dtype)
    q1 = critic_arch.init(rng, dtype=cfg.np_dtype)
    q2 = critic_arch.init(rng, dtype=cfg.np_dtype)
    adam = Adam(lr=cfg.lr)
    params = PolicyParams(
        cfg=cfg,
        action_scale=np.asarray(action_scale, dtype=float),
        actor=actor,
        q1=q1,
        q2=q2,
        q1_targ={k: v.copy() for k, v in q1.items()},
        q2_targ={k: v.copy() for k, v in q2.items()},
        log_alpha=np.array([math.log(cfg.init_alpha)]),
    )
    params.opt_actor = adam.init_state(actor)
    params.opt_q1 = adam.init_state(q1)
    params.opt_q2 = adam.init_state(q2)
    params.opt_alpha = adam.init_state({"log_alpha": params.log_alpha})
    return params


def _split_obs(cfg: ResidualSacConfig, obs: np.ndarray):
    if cfg.img_dim > 0:
        return obs[:, : cfg.img_dim], obs[:, cfg.img_dim :]
    return None, obs


def _squash_log_std(cfg: ResidualSacConfig, raw: np.ndarray) -> np.ndarray:
    lo, hi = cfg.log_std_min, cfg.log_std_max
    return lo + 0.5 * (hi - lo) * (np.tanh(raw) + 1.0)


def _policy_heads(params: PolicyParams, obs: np.ndarray):
    arch = _actor_arch(params.cfg)
    img, vec = _split_obs(params.cfg, obs)
    (mu, raw), cache = arch.forward(params.actor, img, vec)
    return mu, raw, cache


def act(obs: Observation | np.ndarray, params: PolicyParams, mode: str = "stochastic", seed: int | None = None,
        rng: np.random.Generator | None = None) -> Action:
    """Sample (or take the mean of) the squashed-Gaussian residual policy."""
    if not params.is_finite():
        raise NonFiniteParams("policy parameters contain non-finite values")
    vec = obs.vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
    vec = vec.astype(params.cfg.np_dtype)
    mu, raw, _ = _policy_heads(params, vec[None, :])
    if mode == "deterministic":
        u = mu[0]
    else:
        if rng is None:
            rng = np.random.default_rng(seed)
        sigma = np.exp(_squash_log_std(params.cfg, raw[0]))
        u = mu[0] + sigma * rng.standard_normal(params.cfg.action_dim)
    return Action(F_d=np.tanh(u) * params.action_scale)


# ---------------------------------------------------------------------------
# SAC update


def _critic_forward(params: PolicyParams, net: Params, obs: np.ndarray, action_unit: np.ndarray):
    """action_unit is the tanh-squashed action in [-1, 1] (scale-free)."""
    arch = _critic_arch(params.cfg)
    img, vec = _split_obs(params.cfg, obs)
    (q,), cache = arch.forward(net, img, np.concatenate([vec, action_unit], axis=1))
    return q[:, 0], cache


def _sample_with_logp(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Reparameterized action sample plus log-probability and the backprop bits."""
    cfg = params.cfg
    mu, raw, cache = _policy_heads(params, obs)
    log_std = _squash_log_std(cfg, raw)
    sigma = np.exp(log_std)
    xi = rng.standard_normal(mu.shape, dtype=mu.dtype)
    u = mu + sigma * xi
    tanh_u = np.tanh(u)
    # log N(u; mu, sigma) minus the tanh-squash volume change, scale included.
    log_scale = np.log(params.action_scale).sum()
    softplus = np.logaddexp(0.0, -2.0 * u)
    squash_logdet = 2.0 * (math.log(2.0) - u - softplus)
    logp = (-0.5 * xi**2 - log_std - 0.5 * LOG_2PI - squash_logdet).sum(axis=1) - log_scale
    return {
        "mu": mu,
        "raw": raw,
        "cache": cache,
        "log_std": log_std,
        "sigma": sigma,
        "xi": xi,
        "u": u,
        "tanh_u": tanh_u,
        "action_unit": tanh_u,
        "logp": logp,
    }


def update(
    buffer: ReplayBuffer,
    params: PolicyParams,
    rng: np.random.Generator,
) -> tuple[PolicyParams, dict]:
    """One gradient update of the critics, actor, and entropy temperature.

    Mutates `params` in place and returns it with a diagnostics dict. Raises
    NonFinite on divergence (a learning-rate fault).
    """
    cfg = params.cfg
    if len(buffer) < cfg.batch_size:
        raise ValueError("buffer smaller than one batch")
    dt = cfg.np_dtype
    obs, act_taken, rew, nxt, done = buffer.sample(cfg.batch_size, rng)
    obs = obs.astype(dt)
    nxt = nxt.astype(dt)
    rew = rew.astype(dt)
    done = done.astype(dt)
    # Stored actions are wrench values; the critics consume unit actions.
    act_unit = np.clip(act_taken / params.action_scale, -0.999999, 0.999999).astype(dt)
    alpha = float(np.exp(params.log_alpha[0]))
    adam = Adam(lr=cfg.lr)
    B = cfg.batch_size

    # Bellman target from the target critics and fresh next actions.
    nxt_sample = _sample_with_logp(params, nxt, rng)
    q1_t, _ = _critic_forward(params, params.q1_targ, nxt, nxt_sample["action_unit"])
    q2_t, _ = _critic_forward(params, params.q2_targ, nxt, nxt_sample["action_unit"])
    q_next = np.minimum(q1_t, q2_t) - alpha * nxt_sample["logp"]
    y = rew + cfg.gamma * (1.0 - done) * q_next

    critic_arch = _critic_arch(params.cfg)
    q_means = []
    critic_loss = 0.0
    for net, opt in ((params.q1, params.opt_q1), (params.q2, params.opt_q2)):
        q, cache = _critic_forward(params, net, obs, act_unit)
        err = q - y
        critic_loss += 0.5 * float(np.mean(err**2))
        grads, _, _ = critic_arch.backward(net, cache, [(err / B)[:, None]])
        adam.step(net, grads, opt)
        q_means.append(float(q.mean()))

    # Actor: maximize E[min Q - alpha * logp] with reparameterized actions.
    sample = _sample_with_logp(params, obs, rng)
    a_unit = sample["action_unit"]
    qa1, cache1 = _critic_forward(params, params.q1, obs, a_unit)
    qa2, cache2 = _critic_forward(params, params.q2, obs, a_unit)
    pick1 = qa1 <= qa2
    dq = np.where(pick1, 1.0, 0.0).astype(dt)[:, None] / B
    _, _, dvec1 = critic_arch.backward(params.q1, cache1, [-dq], inputs_only=True)
    dq2 = np.where(pick1, 0.0, 1.0).astype(dt)[:, None] / B
    _, _, dvec2 = critic_arch.backward(params.q2, cache2, [-dq2], inputs_only=True)
    da_unit = dvec1[:, -cfg.action_dim :] + dvec2[:, -cfg.action_dim :]

    tanh_u = sample["tanh_u"]
    du_from_q = da_unit * (1.0 - tanh_u**2)
    du_from_logp = (alpha / B) * 2.0 * tanh_u
    du = du_from_q + du_from_logp
    dmu = du
    dlog_std = du * sample["sigma"] * sample["xi"] - (alpha / B)
    lo, hi = cfg.log_std_min, cfg.log_std_max
    draw = dlog_std * 0.5 * (hi - lo) * (1.0 - np.tanh(sample["raw"]) ** 2)
    actor_arch = _actor_arch(params.cfg)
    actor_grads, _, _ = actor_arch.backward(params.actor, sample["cache"], [dmu, draw])
    adam.step(params.actor, actor_grads, params.opt_actor)
    actor_loss = float(np.mean(alpha * sample["logp"] - np.minimum(qa1, qa2)))

    # Temperature: pull the policy entropy toward the target.
    h_target = cfg.resolved_target_entropy()
    dlog_alpha = -alpha * float(np.mean(sample["logp"] + h_target))
    adam.step({"log_alpha": params.log_alpha}, {"log_alpha": np.array([dlog_alpha])}, params.opt_alpha)

    # Polyak-average the target critics.
    for net, targ in ((params.q1, params.q1_targ), (params.q2, params.q2_targ)):
        for k in net:
            targ[k] *= 1.0 - cfg.tau
            targ[k] += cfg.tau * net[k]

    params.updates += 1
    if not params.is_finite():
        raise NonFiniteParams("update produced non-finite parameters")
    diag = {
        "critic_loss": critic_loss,
        "actor_loss": actor_loss,
        "alpha": float(np.exp(params.log_alpha[0])),
        "q_mean": float(np.mean(q_means)),
        "logp_mean": float(np.mean(sample["logp"])),
        "actor_grad_norm": flat_grad_norm(actor_grads),
        "target_y_mean": float(np.mean(y)),
    }
    return params, diag


# ---------------------------------------------------------------------------
# Checkpoint format: versioned binary of layer shapes + little-endian float64
# weights + the config hash of the run that produced it.

_MAGIC = b"PEGRLCK1"


def save_policy(path, params: PolicyParams, config_hash: str = "") -> None:
    payload = {
        "cfg": {
            "action_dim": params.cfg.action_dim,
            "img_dim": params.cfg.img_dim,
            "img_hidden": list(params.cfg.img_hidden),
            "vec_dim": params.cfg.vec_dim,
            "trunk_hidden": list(params.cfg.trunk_hidden),
            "lr": params.cfg.lr,
            "gamma": params.cfg.gamma,
            "tau": params.cfg.tau,
            "batch_size": params.cfg.batch_size,
            "replay_capacity": params.cfg.replay_capacity,
            "init_alpha": params.cfg.init_alpha,
            "target_entropy": params.cfg.target_entropy,
            "log_std_min": params.cfg.log_std_min,
            "log_std_max": params.cfg.log_std_max,
            "history_len": params.cfg.history_len,
            "dtype": params.cfg.dtype,
        },
        "config_hash": config_hash,
        "updates": params.updates,
    }
    arrays: list[tuple[str, np.ndarray]] = [("action_scale", params.action_scale), ("log_alpha", params.log_alpha)]
    for group in ("actor", "q1", "q2", "q1_targ", "q2_targ"):
        for k, v in sorted(getattr(params, group).items()):
            arrays.append((f"{group}/{k}", v))

    buf = io.BytesIO()
    buf.write(_MAGIC)
    meta = json.dumps(payload, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        name_b = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", a.ndim))
        for d in a.shape:
            buf.write(struct.pack("<I", d))
        buf.write(a.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_policy(path) -> tuple[PolicyParams, str]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MAGIC:
        raise ValueError("not a policy checkpoint")
    off = 8
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    payload = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (n_arrays,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", data, off)
            off += 4
            shape.append(d)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        arrays[name] = arr

    cfg_d = payload["cfg"]
    cfg = ResidualSacConfig(
        action_dim=cfg_d["action_dim"],
        img_dim=cfg_d["img_dim"],
        img_hidden=tuple(cfg_d["img_hidden"]),
        vec_dim=cfg_d["vec_dim"],
        trunk_hidden=tuple(cfg_d["trunk_hidden"]),
        lr=cfg_d["lr"],
        gamma=cfg_d["gamma"],
        tau=cfg_d["tau"],
        batch_size=cfg_d["batch_size"],
        replay_capacity=cfg_d["replay_capacity"],
        init_alpha=cfg_d["init_alpha"],
        target_entropy=cfg_d["target_entropy"],
        log_std_min=cfg_d["log_std_min"],
        log_std_max=cfg_d["log_std_max"],
        history_len=cfg_d["history_len"],
        dtype=cfg_d.get("dtype", "float64"),
    )
    groups: dict[str, Params] = {"actor": {}, "q1": {}, "q2": {}, "q1_targ": {}, "q2_targ": {}}
    for name, arr in arrays.items():
        if "/" in name:
            group, key = name.split("/", 1)
            groups[group][key] = arr.astype(cfg.np_dtype)
    params = PolicyParams(
        cfg=cfg,
        action_scale=arrays["action_scale"],
        actor=groups["actor"],
        q1=groups["q1"],
        q2=groups["q2"],
        q1_targ=groups["q1_targ"],
        q2_targ=groups["q2_targ"],
        log_alpha=arrays["log_alpha"],
        updates=payload.get("updates", 0),
    )
    adam = Adam(lr=cfg.lr)
    params.opt_actor = adam.init_state(params.actor)
    params.opt_q1 = adam.init_state(params.q1)
    params.opt_q2 = adam.init_state(params.q2)
    params.opt_alpha = adam.init_state({"log_alpha": params.log_alpha})
    return params, payload.get("config_hash", "")
