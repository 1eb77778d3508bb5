"""Skill-graph sequencing, demonstration retargeting, and coarse planning.

A single demonstration stores the pre-insertion (bottleneck) and goal poses
of the end-effector in the task-board frame; estimating the board pose then
retargets both to the world. The coarse plan is a fast min-jerk approach to
the bottleneck under high stiffness and a slow descent to the goal under a
soft stiffness sized so that the admissible contact force can push the robot
across the whole assumed-error-plus-insertion range.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import ControlCommand
from .geometry import Pose, Wrench, compose, inverse, pose_delta, wrap_angle
from .world import WorldState


class OutOfRange(ValueError):
    pass


class ZeroExplorationSpace(ValueError):
    pass


class Fault(RuntimeError):
    def __init__(self, stage: "Stage", reason: str):
        super().__init__(f"{stage.name}: {reason}")
        self.stage = stage
        self.reason = reason


class Stage(enum.IntEnum):
    GLOBAL_PERCEIVE = 0
    PLAN = 1
    COARSE_MOVE = 2
    FINE_MANIP = 3
    DONE = 4


@dataclass(frozen=True)
class OecModel:
    """Key EE poses expressed in the task-board frame, plus the world home pose."""

    bottleneck_in_board: Pose
    goal_in_board: Pose
    home: Pose

    def __post_init__(self):
        if self.bottleneck_in_board.z <= self.goal_in_board.z:
            raise ValueError("bottleneck must sit strictly above the goal along z")


@dataclass(frozen=True)
class SkillGraphSpec:
    """Stage tolerances and transition thresholds for the four-stage graph."""

    E_th: np.ndarray = field(default_factory=lambda: np.array([0.006, 0.006, 0.004, 0.2]))
    F_z_succ: float = 5.0
    F_max: Wrench = Wrench(fx=10.0, fy=10.0, fz=10.0, tz=0.1)
    timeout_steps: dict = field(
        default_factory=lambda: {
            Stage.GLOBAL_PERCEIVE: 10,
            Stage.PLAN: 5,
            Stage.COARSE_MOVE: 60,
            Stage.FINE_MANIP: 120,
        }
    )

    def __post_init__(self):
        E = np.asarray(self.E_th, dtype=float)
        object.__setattr__(self, "E_th", E)
        if np.any(E <= 0):
            raise ValueError("E_th must be strictly positive")
        if self.F_z_succ > abs(self.F_max.fz):
            raise ValueError("success force cannot exceed the safety limit")


@dataclass(frozen=True)
class Trajectory:
    """Min-jerk pose trajectory; holds the goal after its duration."""

    start: Pose
    goal: Pose
    duration: float

    def at(self, t: float) -> Pose:
        return min_jerk(self.start, self.goal, self.duration, min(max(t, 0.0), self.duration))


@dataclass(frozen=True)
class CoarsePolicy:
    tau_cf: Trajectory
    tau_cr: Trajectory
    K_cf: np.ndarray
    K_cr: np.ndarray
    W: np.ndarray
    E_r: np.ndarray

    @property
    def bottleneck(self) -> Pose:
        return self.tau_cf.goal

    @property
    def goal(self) -> Pose:
        return self.tau_cr.goal


def min_jerk(start: Pose, goal: Pose, T: float, t: float) -> Pose:
    """Quintic minimum-jerk interpolation with zero endpoint velocity/acceleration."""
    if T <= 0:
        raise OutOfRange("duration must be positive")
    if t < 0 or t > T:
        raise OutOfRange(f"t={t} outside [0, {T}]")
    tau = t / T
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
    drz = wrap_angle(goal.rz - start.rz)
    return Pose(
        x=start.x + s * (goal.x - start.x),
        y=start.y + s * (goal.y - start.y),
        z=start.z + s * (goal.z - start.z),
        rz=wrap_angle(start.rz + s * drz),
    )


def record_demo(states: list[WorldState], keyframes: dict[str, int]) -> OecModel:
    """Build the task-frame model from a demonstration with a known board pose."""
    board = states[keyframes.get("reference", 0)].board_pose
    inv_board = inverse(board)
    bottleneck = compose(inv_board, states[keyframes["bottleneck"]].ee_pose)
    goal = compose(inv_board, states[keyframes["goal"]].ee_pose)
    home = states[keyframes["home"]].ee_pose if "home" in keyframes else states[0].ee_pose
    return OecModel(bottleneck_in_board=bottleneck, goal_in_board=goal, home=home)


def plan_coarse(
    oec: OecModel,
    board_est: Pose,
    E_r: np.ndarray,
    F_max: Wrench,
    T_cf: float = 3.0,
    T_cr: float = 6.0,
    K_cf: np.ndarray | None = None,
) -> CoarsePolicy:
    """Retarget the demonstration to the estimated board pose and size stiffness.

    The exploration space W is the assumed error range plus the bottleneck-goal
    gap per axis; the contact-rich stiffness is F_max / W componentwise, so a
    safety-limit force can displace the compliant robot across exactly W.
    """
    E_r = np.asarray(E_r, dtype=float)
    K_cf = np.asarray(K_cf, dtype=float) if K_cf is not None else np.array([2000.0, 2000.0, 2000.0, 20.0])
    bottleneck = compose(board_est, oec.bottleneck_in_board)
    goal = compose(board_est, oec.goal_in_board)
    W = E_r + np.abs(pose_delta(bottleneck, goal))
    if np.any(W <= 0.0):
        raise ZeroExplorationSpace(f"exploration space has a zero component: {W}")
    f_max = F_max.as_array()
    K_cr = f_max / W
    return CoarsePolicy(
        tau_cf=Trajectory(start=oec.home, goal=bottleneck, duration=T_cf),
        tau_cr=Trajectory(start=bottleneck, goal=goal, duration=T_cr),
        K_cf=K_cf,
        K_cr=K_cr,
        W=W,
        E_r=E_r,
    )


def _within(delta: np.ndarray, tol: np.ndarray) -> bool:
    return bool(np.all(np.abs(delta) <= tol))


def skill_step(
    spec: SkillGraphSpec,
    stage: Stage,
    world_state: WorldState,
    ctx,
    t: int,
) -> tuple[Stage, ControlCommand, bool]:
    """One decision of the stage machine at the policy rate.

    `ctx` carries the perception system, the demonstration model, and the plan
    once stage PLAN has produced it (see pipeline.EpisodeContext). `t` counts
    policy steps spent in the current stage; each stage faults on its timeout.
    Returns (next_stage, command, residual_enabled).
    """
    if stage is Stage.DONE:
        raise Fault(stage, "episode already finished")
    if t >= spec.timeout_steps[stage]:
        raise Fault(stage, "timeout")

    if stage is Stage.GLOBAL_PERCEIVE:
        cmd = ControlCommand(X_d=ctx.oec.home, K=ctx.K_cf)
        estimate = ctx.try_estimate(world_state)
        if estimate is not None and ctx.workspace.contains(estimate):
            ctx.board_estimate = estimate
            return Stage.PLAN, cmd, False
        return Stage.GLOBAL_PERCEIVE, cmd, False

    if stage is Stage.PLAN:
        ctx.plan = plan_coarse(
            ctx.oec,
            ctx.board_estimate,
            ctx.E_r,
            spec.F_max,
            T_cf=ctx.T_cf,
            T_cr=ctx.T_cr,
            K_cf=ctx.K_cf,
        )
        cmd = ControlCommand(X_d=ctx.oec.home, K=ctx.K_cf)
        return Stage.COARSE_MOVE, cmd, False

    plan = ctx.plan
    if plan is None:
        raise Fault(stage, "no coarse plan available")

    if stage is Stage.COARSE_MOVE:
        cmd = ControlCommand(X_d=plan.tau_cf.at(t * ctx.policy_dt), K=plan.K_cf)
        if _within(pose_delta(world_state.ee_pose, plan.bottleneck), spec.E_th):
            return Stage.FINE_MANIP, cmd, False
        return Stage.COARSE_MOVE, cmd, False

    # FINE_MANIP: track the slow descent; the residual wrench is merged by the
    # caller, which is why the command goes out with residual_enabled=True.
    cmd = ControlCommand(X_d=plan.tau_cr.at(t * ctx.policy_dt), K=plan.K_cr)
    at_goal = _within(pose_delta(world_state.ee_pose, plan.goal), spec.E_th)
    if at_goal and world_state.contact_wrench.fz >= spec.F_z_succ:
        return Stage.DONE, cmd, True
    return Stage.FINE_MANIP, cmd, True
