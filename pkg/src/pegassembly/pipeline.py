"""Scene assembly and the shared episode machinery.

Bundles the world, cameras, demonstration model, and skill spec built from an
ExperimentConfig, and provides the perception calls and observation builder
that both the classroom trainer and the evaluation harness drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationModel
from .config import ExperimentConfig
from .controller import CONTROL_DT, POLICY_DT, TICKS_PER_POLICY_STEP, ControlCommand, GainSet, admittance_step
from .geometry import Pose, WorkspaceSpec, Wrench, compose, pose_delta
from .planner import OecModel, SkillGraphSpec, record_demo
from .vision import (
    CameraModel,
    DetClass,
    Detection,
    DetectorNoise,
    LowConfidence,
    MissingDetection,
    crop_attention,
    detect,
    estimate_board_pose,
    render,
)
from .world import TaskGeometry, World, WorldState


@dataclass
class PerceptionRig:
    """Cameras, detector noise, and the pixel->robot calibration in one place."""

    eth_cam: CameraModel
    eih_cam: CameraModel
    noise: DetectorNoise
    calib: CalibrationModel
    geom: TaskGeometry
    workspace: WorkspaceSpec

    def estimate_board(self, state: WorldState, seed: int) -> Pose:
        dets = detect(state, self.eth_cam, self.noise, seed=seed, geom=self.geom)
        return estimate_board_pose(dets, self.calib, self.workspace)

    def hole_detection(self, state: WorldState, seed: int) -> Detection | None:
        dets = detect(state, self.eih_cam, self.noise, seed=seed, geom=self.geom)
        holes = [d for d in dets if d.class_id is DetClass.HOLE]
        if not holes:
            return None
        return max(holes, key=lambda d: d.confidence)

    def nominal_hole_box(self, state: WorldState) -> Detection:
        """Prior box: the hole as it would project if it sat under the peg tip."""
        tip = self.geom.tip_pose(state.ee_pose)
        u, v = self.eih_cam.project(tip.x, tip.y, z=self.geom.board_top, ee_pose=state.ee_pose)
        _, _, cz = self.eih_cam.center(state.ee_pose)
        r_px = self.eih_cam.scale * self.geom.hole_radius / max(cz - self.geom.board_top, 1e-6)
        return Detection(DetClass.HOLE, u, v, 2 * r_px, 2 * r_px, confidence=0.0)


@dataclass
class Scene:
    world: World
    rig: PerceptionRig
    oec: OecModel
    skill: SkillGraphSpec
    workspace: WorkspaceSpec
    cfg: ExperimentConfig

    def true_board_targets(self, board: Pose) -> tuple[Pose, Pose]:
        """Ground-truth bottleneck and goal EE poses for a board placement."""
        return compose(board, self.oec.bottleneck_in_board), compose(board, self.oec.goal_in_board)


def build_oec(cfg: ExperimentConfig, geom: TaskGeometry) -> OecModel:
    """Synthesize the taught demonstration in the classroom and record it.

    The demonstration board sits at the classroom pose; the taught keyposes
    are the pre-insertion hover and the pressed-in goal. record_demo converts
    them to the board frame so any placement retargets them.
    """
    cls = cfg.classroom
    board = Pose(x=cls.board_x, y=cls.board_y, z=cfg.workspace.z_con, rz=cls.board_yaw)
    hx, hy = geom.hole_center_world(board)
    tip_len = -geom.tcp_offset.z
    home = cfg.home_pose()
    bottleneck_ee = Pose(x=hx, y=hy, z=geom.board_top + cls.approach_mm * 1e-3 + tip_len, rz=board.rz)
    goal_ee = Pose(
        x=hx,
        y=hy,
        z=geom.board_top - geom.hole_depth - cls.press_mm * 1e-3 + tip_len,
        rz=board.rz,
    )
    zero_v = np.zeros(4)
    states = [
        WorldState(ee_pose=home, ee_vel=zero_v, board_pose=board),
        WorldState(ee_pose=bottleneck_ee, ee_vel=zero_v, board_pose=board),
        WorldState(ee_pose=goal_ee, ee_vel=zero_v, board_pose=board),
    ]
    return record_demo(states, {"home": 0, "bottleneck": 1, "goal": 2})


def build_scene(cfg: ExperimentConfig, calib: CalibrationModel | None = None,
                noise: DetectorNoise | None = None) -> Scene:
    geom = cfg.task_geometry()
    ws = cfg.workspace_spec()
    eth = cfg.eth_camera()
    if calib is None:
        calib = CalibrationModel.exact_for_camera(eth)
    rig = PerceptionRig(
        eth_cam=eth,
        eih_cam=cfg.eih_camera(),
        noise=noise if noise is not None else cfg.detector_noise(),
        calib=calib,
        geom=geom,
        workspace=ws,
    )
    world = World(geom=geom, params=cfg.contact_params())
    return Scene(
        world=world,
        rig=rig,
        oec=build_oec(cfg, geom),
        skill=cfg.skill_spec(),
        workspace=ws,
        cfg=cfg,
    )


@dataclass
class EpisodeContext:
    """Mutable context the skill graph reads and writes across one episode."""

    rig: PerceptionRig
    oec: OecModel
    workspace: WorkspaceSpec
    E_r: np.ndarray
    K_cf: np.ndarray
    T_cf: float
    T_cr: float
    policy_dt: float = POLICY_DT
    plan: object = None
    board_estimate: Pose | None = None
    estimate_override: Pose | None = None   # taught pose (no-vision baselines)
    seed: int = 0
    _det_counter: int = 0

    def _next_seed(self) -> int:
        self._det_counter += 1
        return (self.seed * 1_000_003 + self._det_counter) % (2**31 - 1)

    def try_estimate(self, state: WorldState) -> Pose | None:
        if self.estimate_override is not None:
            return self.estimate_override
        try:
            return self.rig.estimate_board(state, self._next_seed())
        except (MissingDetection, LowConfidence):
            return None


class ObservationBuilder:
    """Builds the residual policy's observation each policy step.

    mode 'crop': attention crop around the detected hole box (inflated so the
    peg stays in frame across the exploration range); 'full': the entire wrist
    image; 'none': proprioception only (force-residual baseline).
    """

    def __init__(
        self,
        rig: PerceptionRig,
        mode: str = "crop",
        attn_scale: float = 4.0,
        attn_px: int = 16,
        history_len: int = 3,
        seed: int = 0,
    ):
        if mode not in ("crop", "full", "none"):
            raise ValueError(f"unknown observation mode {mode!r}")
        self.rig = rig
        self.mode = mode
        self.attn_scale = attn_scale
        self.attn_px = attn_px
        self.history_len = history_len
        self.seed = seed
        self._last_box: Detection | None = None
        self._history: list[np.ndarray] = []
        self._step = 0

    @property
    def img_dim(self) -> int:
        if self.mode == "crop":
            return self.attn_px * self.attn_px
        if self.mode == "full":
            w, h = self.rig.eih_cam.image_size
            return w * h
        return 0

    def vec_dim(self) -> int:
        return 8 + 8 * self.history_len

    def reset(self, seed: int) -> None:
        self.seed = seed
        self._last_box = None
        self._history = []
        self._step = 0

    def _attention(self, state: WorldState) -> np.ndarray:
        det_seed = (self.seed * 2_000_003 + self._step) % (2**31 - 1)
        img = render(state, self.rig.eih_cam, self.rig.geom, seed=self.seed)
        if self.mode == "full":
            return img
        det = self.rig.hole_detection(state, det_seed)
        if det is not None and det.confidence > 0.0:
            self._last_box = det
        box = self._last_box if self._last_box is not None else self.rig.nominal_hole_box(state)
        inflated = Detection(
            box.class_id,
            box.cx,
            box.cy,
            max(box.w * self.attn_scale, 2.0),
            max(box.h * self.attn_scale, 2.0),
            box.confidence,
        )
        return crop_attention(img, inflated, (self.attn_px, self.attn_px))

    def build(self, state: WorldState, goal: Pose, W: np.ndarray, f_max: np.ndarray):
        from .learner.sac import Observation

        r_p = pose_delta(state.ee_pose, goal) / W
        wrench = state.contact_wrench.as_array() / f_max
        frame = np.concatenate([r_p, wrench])
        if not self._history:
            self._history = [frame.copy() for _ in range(self.history_len)]
        attention = self._attention(state) if self.mode != "none" else np.empty(0)
        obs = Observation(
            attention=np.asarray(attention, dtype=float),
            r_p=r_p,
            wrench=wrench,
            history=np.array(self._history[-self.history_len :]),
        )
        self._history.append(frame)
        if len(self._history) > self.history_len + 1:
            self._history.pop(0)
        self._step += 1
        return obs


def run_policy_segment(
    world: World,
    state: WorldState,
    cmd: ControlCommand,
    gains: GainSet,
    v_adm: np.ndarray,
    ticks: int = TICKS_PER_POLICY_STEP,
):
    """Hold one 5 Hz command for a policy step of 120 Hz controller ticks."""
    max_force = 0.0
    for _ in range(ticks):
        v_adm = admittance_step(cmd, state.ee_pose, state.contact_wrench, v_adm, gains, CONTROL_DT)
        state = world.step(state, v_adm, CONTROL_DT)
        f = state.contact_wrench
        max_force = max(max_force, abs(f.fx), abs(f.fy), abs(f.fz))
    return state, v_adm, max_force
