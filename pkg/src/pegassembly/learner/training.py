"""Classroom training of the residual policy with an adaptive error curriculum.

The classroom keeps the board at one known pose; each episode corrupts the
planned trajectory with an error drawn from the current curriculum range and
runs the contact-rich stage only. Success is graded against the true goal
(the classroom knows where it put the board), while the policy's observations
stay relative to the corrupted plan, exactly as they will be in deployment.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import ExperimentConfig
from ..controller import GainSet
from ..geometry import Pose, compose, pose_delta, wrap_angle
from ..planner import plan_coarse
from ..pipeline import ObservationBuilder, Scene, build_scene, run_policy_segment
from ..world import WorldState
from .sac import (
    Action,
    Observation,
    PolicyParams,
    ReplayBuffer,
    ResidualSacConfig,
    RewardSpec,
    Transition,
    act,
    combine,
    init_policy,
    reward,
    update,
)


@dataclass(frozen=True)
class CurriculumState:
    """Adaptive error range: steps by eps to keep success in the [alpha, beta] band."""

    E_r0: np.ndarray
    E_r: np.ndarray
    eps: float = 0.5e-3
    alpha: float = 0.5
    beta: float = 0.7
    window: int = 10
    s_r: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "E_r0", np.asarray(self.E_r0, dtype=float))
        object.__setattr__(self, "E_r", np.asarray(self.E_r, dtype=float))
        if np.any(self.E_r < 0):
            raise ValueError("error range must be non-negative")


def curriculum_update(state: CurriculumState, recent_successes: list[bool]) -> CurriculumState:
    """Raise the translational error range above the band, lower it below."""
    if len(recent_successes) < state.window:
        raise ValueError("success window not full")
    s_r = float(np.mean(recent_successes[-state.window :]))
    delta = 0.0
    if s_r > state.beta:
        delta = state.eps
    elif s_r < state.alpha:
        delta = -state.eps
    E_r = state.E_r.copy()
    E_r[:3] = np.maximum(E_r[:3] + delta, 0.0)
    return replace(state, E_r=E_r, s_r=s_r)


@dataclass
class ClassroomConfig:
    """Everything the classroom loop needs; built from an ExperimentConfig."""

    scene: Scene
    board_pose: Pose
    obs_mode: str = "crop"
    max_steps: int = 120
    updates_per_episode: int = 200
    start_episodes: int = 2
    sac: ResidualSacConfig = None
    curriculum: CurriculumState = None
    reward_cfg: tuple[float, float, float, float] = (1.0, 0.8, 1.0, 100.0)
    zero_base: bool = False   # pure-RL variant: base command held at the bottleneck

    @staticmethod
    def from_experiment(cfg: ExperimentConfig, scene: Scene | None = None, obs_mode: str = "crop") -> "ClassroomConfig":
        scene = scene if scene is not None else build_scene(cfg)
        lc = cfg.learner
        builder_img_dim = {"crop": lc.attn_px * lc.attn_px, "full": cfg.camera.eih_size**2, "none": 0}[obs_mode]
        sac = ResidualSacConfig(
            action_dim=4,
            img_dim=builder_img_dim,
            img_hidden=(lc.img_width, lc.img_width) if builder_img_dim else (),
            vec_dim=8 + 8 * lc.history_len,
            trunk_hidden=(lc.trunk_width, lc.trunk_width),
            lr=lc.lr,
            gamma=lc.gamma,
            tau=lc.tau,
            batch_size=lc.batch_size,
            replay_capacity=lc.replay_capacity,
            init_alpha=lc.init_alpha,
            history_len=lc.history_len,
        )
        cls = cfg.classroom
        board = Pose(x=cls.board_x, y=cls.board_y, z=cfg.workspace.z_con, rz=cls.board_yaw)
        cur = CurriculumState(
            E_r0=cfg.e_r0(),
            E_r=cfg.e_r0(),
            eps=cfg.curriculum.step_mm * 1e-3,
            alpha=cfg.curriculum.alpha,
            beta=cfg.curriculum.beta,
            window=cfg.curriculum.window,
        )
        r = cfg.reward
        return ClassroomConfig(
            scene=scene,
            board_pose=board,
            obs_mode=obs_mode,
            max_steps=cfg.skill.timeout_fine,
            updates_per_episode=lc.updates_per_episode,
            start_episodes=lc.start_episodes,
            sac=sac,
            curriculum=cur,
            reward_cfg=(r.lambda1, r.lambda2, r.lambda3, r.r_succ),
        )


class ClassroomEnv:
    """Fine-manipulation episodes against a fixed board with injected plan error."""

    def __init__(self, cfg: ClassroomConfig, seed: int):
        self.cfg = cfg
        self.scene = cfg.scene
        self.builder = ObservationBuilder(
            self.scene.rig,
            mode=cfg.obs_mode,
            attn_scale=self.scene.cfg.learner.attn_scale,
            attn_px=self.scene.cfg.learner.attn_px,
            history_len=cfg.sac.history_len,
        )
        self.rng = np.random.default_rng([seed, 0xC1A55])
        self.f_max_arr = self.scene.skill.F_max.as_array()
        self.true_goal = compose(cfg.board_pose, self.scene.oec.goal_in_board)
        self.plan = None
        self.state: WorldState = None
        self.v_adm = np.zeros(4)
        self.t = 0
        self.episode_seed = 0

    def reset(self, E_r: np.ndarray, episode_seed: int) -> Observation:
        cfg = self.cfg
        err = np.array(
            [
                self.rng.uniform(-E_r[0], E_r[0]),
                self.rng.uniform(-E_r[1], E_r[1]),
                0.0,
                self.rng.uniform(-E_r[3], E_r[3]),
            ]
        )
        est = Pose(
            x=cfg.board_pose.x + err[0],
            y=cfg.board_pose.y + err[1],
            z=cfg.board_pose.z,
            rz=wrap_angle(cfg.board_pose.rz + err[3]),
        )
        skill = self.scene.skill
        # The curriculum may clamp the injected range to zero; the plan still
        # needs a finite exploration space, so floor the assumed range.
        plan_E_r = np.maximum(E_r, np.array([5e-4, 5e-4, 5e-4, 0.01]))
        self.plan = plan_coarse(
            self.scene.oec,
            est,
            plan_E_r,
            skill.F_max,
            T_cf=self.scene.cfg.skill.t_cf,
            T_cr=self.scene.cfg.skill.t_cr,
            K_cf=self.scene.cfg.k_cf(),
        )
        self.state = WorldState(
            ee_pose=self.plan.bottleneck,
            ee_vel=np.zeros(4),
            board_pose=cfg.board_pose,
        )
        self.v_adm = np.zeros(4)
        self.t = 0
        self.episode_seed = episode_seed
        self.builder.reset(episode_seed)
        self.reward_spec = RewardSpec(
            W=self.plan.W,
            F_max=self.f_max_arr,
            lambda1=cfg.reward_cfg[0],
            lambda2=cfg.reward_cfg[1],
            lambda3=cfg.reward_cfg[2],
            R_succ=cfg.reward_cfg[3],
        )
        return self.builder.build(self.state, self.plan.goal, self.plan.W, self.f_max_arr)

    def _success(self) -> bool:
        skill = self.scene.skill
        delta = pose_delta(self.state.ee_pose, self.true_goal)
        return bool(np.all(np.abs(delta) <= skill.E_th)) and self.state.contact_wrench.fz >= skill.F_z_succ

    def step(self, action: Action):
        from ..controller import ControlCommand

        cfg = self.cfg
        x_d = self.plan.bottleneck if cfg.zero_base else self.plan.tau_cr.at(self.t * 0.2)
        base = ControlCommand(X_d=x_d, K=self.plan.K_cr)
        cmd = combine(base, action, self.scene.skill.F_max)
        gains = GainSet(K=self.plan.K_cr)
        self.state, self.v_adm, max_f = run_policy_segment(self.scene.world, self.state, cmd, gains, self.v_adm)
        self.t += 1
        success = self._success()
        r = reward(self.state.ee_pose, self.true_goal, self.state.contact_wrench, success, self.reward_spec)
        done = success or self.t >= cfg.max_steps
        obs = self.builder.build(self.state, self.plan.goal, self.plan.W, self.f_max_arr)
        return obs, r, done, success, max_f


def run_training(
    env_cfg: ClassroomConfig,
    episodes: int,
    seed: int,
    params: PolicyParams | None = None,
) -> tuple[PolicyParams, list[dict]]:
    """Curriculum residual training loop: rollout, replay updates, curriculum.

    Returns the trained parameters and one log row per episode with reward,
    success, current error range, and the latest losses. Deterministic per
    seed when run single-threaded.
    """
    cfg = env_cfg
    env = ClassroomEnv(cfg, seed)
    if params is None:
        params = init_policy(cfg.sac, env.f_max_arr, seed)
    buffer = ReplayBuffer(cfg.sac.replay_capacity, cfg.sac.obs_dim, cfg.sac.action_dim)
    rng_act = np.random.default_rng([seed, 1])
    rng_upd = np.random.default_rng([seed, 2])
    curriculum = cfg.curriculum
    recent: list[bool] = []
    log: list[dict] = []
    t_start = time.time()

    for ep in range(episodes):
        obs = env.reset(curriculum.E_r, episode_seed=seed * 100_000 + ep)
        ep_reward = 0.0
        success = False
        done = False
        while not done:
            a = act(obs, params, mode="stochastic", rng=rng_act)
            next_obs, r, done, success, _ = env.step(a)
            buffer.push(
                Transition(
                    obs=obs.vector().astype(np.float32),
                    action=a.F_d.astype(np.float32),
                    reward=r,
                    next_obs=next_obs.vector().astype(np.float32),
                    done=done,
                )
            )
            ep_reward += r
            obs = next_obs

        diag = {}
        if ep + 1 >= cfg.start_episodes and len(buffer) >= cfg.sac.batch_size:
            for _ in range(cfg.updates_per_episode):
                params, diag = update(buffer, params, rng_upd)

        recent.append(success)
        if len(recent) >= curriculum.window and (ep + 1) % curriculum.window == 0:
            curriculum = curriculum_update(curriculum, recent)
        windowed = float(np.mean(recent[-curriculum.window :])) if recent else 0.0

        log.append(
            {
                "episode": ep,
                "reward": ep_reward,
                "success": int(success),
                "steps": env.t,
                "er_mm": curriculum.E_r[0] * 1e3,
                "windowed_success": windowed,
                "critic_loss": diag.get("critic_loss", float("nan")),
                "actor_loss": diag.get("actor_loss", float("nan")),
                "alpha": diag.get("alpha", float("nan")),
                "wall_time_s": time.time() - t_start,
            }
        )
    return params, log


def write_learning_log(log: list[dict], path) -> None:
    """Comma-separated learning curve, one row per episode."""
    cols = ["episode", "reward", "success", "steps", "er_mm", "windowed_success",
            "critic_loss", "actor_loss", "alpha", "wall_time_s"]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(cols) + "\n")
        for row in log:
            f.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
