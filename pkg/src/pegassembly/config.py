"""Experiment configuration: dataclass tree, flat key=value files, hashing.

Config files are UTF-8 text, one `dotted.key = value` per line, `#` comments.
Every field has a default, so an empty file is a valid config; the resolved
configuration is hashed (sha256, 12 hex chars) and stamped into all outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, WorkspaceSpec, Wrench
from .planner import SkillGraphSpec, Stage
from .vision import CameraKind, CameraModel, DetectorNoise
from .world import ContactParams, TaskGeometry

BASELINES = ("ours", "b1", "b2", "b3", "b4", "b5")
SCENARIOS = ("calibrate", "detect-eval", "train", "eval")


@dataclass
class WorkspaceCfg:
    x_min: float = 0.10
    x_max: float = 0.45
    y_min: float = 0.10
    y_max: float = 0.45
    rz_min: float = -math.pi / 2
    rz_max: float = math.pi / 2
    z_con: float = 0.0


@dataclass
class GeometryCfg:
    peg_radius: float = 0.005
    hole_radius: float = 0.0055   # 0.5 mm clearance; 0.0051 is the stretch fit
    hole_depth: float = 0.030
    board_top: float = 0.040
    hole_cx: float = 0.020
    hole_cy: float = 0.010
    half_x: float = 0.060
    half_y: float = 0.040
    tcp_len: float = 0.100


@dataclass
class ContactCfg:
    k_n: float = 1e5
    c_n: float = 250.0
    mu_peg: float = 0.2
    mu_static: float = 0.4
    mu_kinetic: float = 0.3
    board_mass: float = 0.5       # free parameter: not stated by any source
    slide_mobility: float = 0.002


@dataclass
class CameraCfg:
    eth_scale: float = 128 / 0.55
    eth_size: int = 128
    eth_height: float = 0.8
    eih_focal_px: float = 70.0
    eih_size: int = 64
    eih_offset_x: float = -0.025
    eih_offset_z: float = -0.010


@dataclass
class NoiseCfg:
    sigma_center: float = 0.5
    sigma_size: float = 0.25
    occlusion_conf_floor: float = 0.25
    dropout_prob: float = 0.0


@dataclass
class SkillCfg:
    eth_xy: float = 0.006
    eth_z: float = 0.006
    eth_yaw: float = 0.2
    f_z_succ: float = 5.0
    f_max_xy: float = 10.0
    f_max_z: float = 10.0
    f_max_tz: float = 0.1
    t_cf: float = 3.0
    t_cr: float = 6.0
    k_cf_xy: float = 2000.0
    k_cf_z: float = 2000.0
    k_cf_rz: float = 20.0
    timeout_perceive: int = 10
    timeout_plan: int = 5
    timeout_coarse: int = 60
    timeout_fine: int = 120


@dataclass
class CurriculumCfg:
    base_mm: float = 2.0
    step_mm: float = 0.5
    alpha: float = 0.5
    beta: float = 0.7
    window: int = 10
    yaw_rad: float = 0.05


@dataclass
class RewardCfg:
    lambda1: float = 1.0
    lambda2: float = 0.8
    lambda3: float = 1.0
    r_succ: float = 100.0


@dataclass
class LearnerCfg:
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    replay_capacity: int = 100_000
    img_width: int = 32
    trunk_width: int = 128
    init_alpha: float = 0.2
    history_len: int = 3
    updates_per_episode: int = 200
    attn_scale: float = 4.0
    attn_px: int = 16
    start_episodes: int = 2       # rollout-only episodes before updates begin


@dataclass
class ClassroomCfg:
    board_x: float = 0.275
    board_y: float = 0.275
    board_yaw: float = 0.2
    approach_mm: float = 8.0      # bottleneck tip height above the board top
    press_mm: float = 4.0         # demonstrated goal sits this far below the hole bottom


@dataclass
class CalibCfg:
    m: int = 24
    n: int = 16
    manual_per_camera: int = 10
    manual_sigma_px: float = 0.5
    offset_xy: float = 0.006
    offset_z: float = 0.010


@dataclass
class B2Cfg:
    teach_std: float = 0.003
    spiral_pitch: float = 0.0003
    spiral_feed: float = 0.002


@dataclass
class ExperimentConfig:
    scenario: str = "eval"
    baseline: str = "ours"
    seed: int = 0
    trials: int = 16
    episodes: int = 300
    out: str = "out"
    checkpoint: str = ""
    workspace: WorkspaceCfg = field(default_factory=WorkspaceCfg)
    geometry: GeometryCfg = field(default_factory=GeometryCfg)
    contact: ContactCfg = field(default_factory=ContactCfg)
    camera: CameraCfg = field(default_factory=CameraCfg)
    noise: NoiseCfg = field(default_factory=NoiseCfg)
    skill: SkillCfg = field(default_factory=SkillCfg)
    curriculum: CurriculumCfg = field(default_factory=CurriculumCfg)
    reward: RewardCfg = field(default_factory=RewardCfg)
    learner: LearnerCfg = field(default_factory=LearnerCfg)
    classroom: ClassroomCfg = field(default_factory=ClassroomCfg)
    calib: CalibCfg = field(default_factory=CalibCfg)
    b2: B2Cfg = field(default_factory=B2Cfg)

    # -- builders -----------------------------------------------------------

    def workspace_spec(self) -> WorkspaceSpec:
        w = self.workspace
        return WorkspaceSpec(
            x_range=(w.x_min, w.x_max),
            y_range=(w.y_min, w.y_max),
            rz_range=(w.rz_min, w.rz_max),
            z_con=w.z_con,
        )

    def task_geometry(self) -> TaskGeometry:
        g = self.geometry
        return TaskGeometry(
            peg_radius=g.peg_radius,
            hole_radius=g.hole_radius,
            hole_depth=g.hole_depth,
            hole_center_in_board=(g.hole_cx, g.hole_cy),
            board_half_extents=(g.half_x, g.half_y),
            board_top=g.board_top,
            tcp_offset=Pose(z=-g.tcp_len),
        )

    def contact_params(self) -> ContactParams:
        c = self.contact
        return ContactParams(
            k_n=c.k_n,
            c_n=c.c_n,
            mu_peg=c.mu_peg,
            mu_static=c.mu_static,
            mu_kinetic=c.mu_kinetic,
            board_mass=c.board_mass,
            slide_mobility=c.slide_mobility,
        )

    def eth_camera(self) -> CameraModel:
        c, w = self.camera, self.workspace
        center = Pose(x=(w.x_min + w.x_max) / 2, y=(w.y_min + w.y_max) / 2, z=c.eth_height)
        return CameraModel(
            kind=CameraKind.EYE_TO_HAND,
            mount_pose=center,
            scale=c.eth_scale,
            image_size=(c.eth_size, c.eth_size),
        )

    def eih_camera(self) -> CameraModel:
        c = self.camera
        return CameraModel(
            kind=CameraKind.EYE_IN_HAND,
            mount_pose=Pose(x=c.eih_offset_x, y=0.0, z=c.eih_offset_z),
            scale=c.eih_focal_px,
            image_size=(c.eih_size, c.eih_size),
        )

    def detector_noise(self, sigma_override: float | None = None) -> DetectorNoise:
        n = self.noise
        return DetectorNoise(
            sigma_center=n.sigma_center if sigma_override is None else sigma_override,
            sigma_size=n.sigma_size,
            occlusion_conf_floor=n.occlusion_conf_floor,
            dropout_prob=n.dropout_prob,
        )

    def f_max(self) -> Wrench:
        s = self.skill
        return Wrench(fx=s.f_max_xy, fy=s.f_max_xy, fz=s.f_max_z, tz=s.f_max_tz)

    def k_cf(self) -> np.ndarray:
        s = self.skill
        return np.array([s.k_cf_xy, s.k_cf_xy, s.k_cf_z, s.k_cf_rz])

    def skill_spec(self) -> SkillGraphSpec:
        s = self.skill
        return SkillGraphSpec(
            E_th=np.array([s.eth_xy, s.eth_xy, s.eth_z, s.eth_yaw]),
            F_z_succ=s.f_z_succ,
            F_max=self.f_max(),
            timeout_steps={
                Stage.GLOBAL_PERCEIVE: s.timeout_perceive,
                Stage.PLAN: s.timeout_plan,
                Stage.COARSE_MOVE: s.timeout_coarse,
                Stage.FINE_MANIP: s.timeout_fine,
            },
        )

    def e_r0(self) -> np.ndarray:
        c = self.curriculum
        base = c.base_mm * 1e-3
        return np.array([base, base, base, c.yaw_rad])

    def home_pose(self) -> Pose:
        return Pose(x=0.02, y=0.02, z=0.25)


# ---------------------------------------------------------------------------
# Flat key=value parsing


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


def _walk_fields(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _walk_fields(value, prefix=f"{key}.")
        else:
            yield key, obj, f.name, value


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    index = {key: (owner, name, value) for key, owner, name, value in _walk_fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in index:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        owner, name, current = index[key]
        setattr(owner, name, _coerce(raw, current))
        index[key] = (owner, name, getattr(owner, name))
    if cfg.scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {cfg.scenario!r}; expected one of {SCENARIOS}")
    if cfg.baseline not in BASELINES:
        raise ValueError(f"unknown baseline {cfg.baseline!r}; expected one of {BASELINES}")
    return cfg


def load_config(path: str | None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    if path is None:
        return base if base is not None else ExperimentConfig()
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base)


def config_lines(cfg: ExperimentConfig) -> list[str]:
    lines = []
    for key, _, _, value in _walk_fields(cfg):
        if key == "out":
            continue  # output location does not change what the run computes
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return sorted(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = "\n".join(config_lines(cfg)).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()[:12]
