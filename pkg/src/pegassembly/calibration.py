"""Embodied sample collection, hand-eye-task fits, and semi-automatic labeling.

The robot places the board at m workspace points and visits n end-effector
offsets around the pre-insertion pose per placement, recording both camera
views along with the exact robot-side positions. A small manually-annotated
subset (simulated here as oracle pixels plus annotation noise) fits the
robot<->pixel affine maps and the constant image Jacobian of the wrist
camera; those maps then label every remaining image automatically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import CONTROL_DT, ControlCommand, GainSet, admittance_step
from .geometry import Pose, WorkspaceSpec, pose_delta
from .planner import min_jerk
from .vision import CameraKind, CameraModel, DetClass, render
from .world import TaskGeometry, World, WorldState


class DegenerateDesign(ValueError):
    pass


class MissingCalibration(RuntimeError):
    pass


class CollisionAvoided(RuntimeError):
    pass


class LabelSource(enum.Enum):
    MANUAL = "manual"
    AUTO = "auto"


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    class_id: DetClass
    cx: float   # normalized [0, 1]
    cy: float
    w: float
    h: float
    source: LabelSource

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class EthRecord:
    image_id: str
    image: np.ndarray
    position: tuple[float, float]          # board placement P = [x^r, y^r]
    board_pose: Pose
    ee_pose: Pose
    truth_boxes: dict[DetClass, tuple[float, float, float, float]]  # px (cx, cy, w, h)


@dataclass(frozen=True)
class EihRecord:
    image_id: str
    image: np.ndarray
    delta: tuple[float, float, float]      # EE offset from the bottleneck pose
    board_pose: Pose
    ee_pose: Pose
    truth_box: tuple[float, float, float, float]
    truth_pixvec: tuple[float, float, float, float]  # hole left/right extremities


@dataclass
class SampleSet:
    eth_records: list[EthRecord]
    eih_records: list[EihRecord]
    m: int
    n: int
    seed: int
    collisions_avoided: int = 0
    eth_image_size: tuple[int, int] = (128, 128)
    eih_image_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if len(self.eth_records) != self.m * self.n or len(self.eih_records) != self.m * self.n:
            raise ValueError("record count must be m*n per camera")


@dataclass
class CalibrationModel:
    """Fitted robot->pixel map A, pixel->robot map Binv, and image Jacobian C."""

    A: np.ndarray                      # (2, 3)
    Binv: np.ndarray                   # (2, 3)
    C: np.ndarray                      # (4, 4)
    std_fwd: np.ndarray = field(default_factory=lambda: np.zeros(2))
    std_inv: np.ndarray = field(default_factory=lambda: np.zeros(2))
    std_jac: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def robot_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        u = self.A @ np.array([x, y, 1.0])
        return (float(u[0]), float(u[1]))

    def pixel_to_robot(self, u: float, v: float) -> tuple[float, float]:
        p = self.Binv @ np.array([u, v, 1.0])
        return (float(p[0]), float(p[1]))

    def eih_pixvec(self, delta) -> np.ndarray:
        d = np.array([delta[0], delta[1], delta[2], 1.0])
        return self.C @ d

    @staticmethod
    def exact_for_camera(cam: CameraModel, plane_z: float = 0.0) -> "CalibrationModel":
        """Analytic calibration for the overhead camera (oracle ground truth)."""
        if cam.kind is not CameraKind.EYE_TO_HAND:
            raise ValueError("exact calibration only defined for the overhead camera")
        ppx, ppy = cam.principal_point
        s = cam.scale
        cx, cy = cam.mount_pose.x, cam.mount_pose.y
        A = np.array([[s, 0.0, ppx - s * cx], [0.0, -s, ppy + s * cy]])
        Binv = np.array([[1 / s, 0.0, cx - ppx / s], [0.0, -1 / s, cy + ppy / s]])
        return CalibrationModel(A=A, Binv=Binv, C=np.zeros((4, 4)))


def _lstsq_rows(design: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column least squares via normal equations with an explicit rank check.

    Returns (coeffs with shape (k_out, k_in), dof-corrected residual std per row).
    """
    n, p = design.shape
    gram = design.T @ design
    if np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, float(np.abs(gram).max()))) < p:
        raise DegenerateDesign("design matrix is rank deficient")
    coef = np.linalg.solve(gram, design.T @ targets)  # (p, k_out)
    resid = targets - design @ coef
    dof = max(n - p, 1)
    std = np.sqrt((resid**2).sum(axis=0) / dof)
    return coef.T, std


def fit_eth(pairs: list[tuple[tuple[float, float], tuple[float, float]]]):
    """Fit robot->pixel (Eq.-10 style) and pixel->robot maps by least squares.

    pairs: [((x_r, y_r), (x_c, y_c)), ...]; needs >= 4 non-collinear points.
    Returns (A, Binv, std_fwd, std_inv) with per-axis residual stds.
    """
    if len(pairs) < 4:
        raise DegenerateDesign(f"need at least 4 pairs, got {len(pairs)}")
    robot = np.array([[p[0][0], p[0][1], 1.0] for p in pairs])
    pixel = np.array([[p[1][0], p[1][1], 1.0] for p in pairs])
    A, std_fwd = _lstsq_rows(robot, pixel[:, :2])
    Binv, std_inv = _lstsq_rows(pixel, robot[:, :2])
    return A, Binv, std_fwd, std_inv


def fit_image_jacobian(pairs: list[tuple[tuple[float, float, float], tuple[float, float, float, float]]]):
    """Fit the constant image Jacobian of the wrist camera.

    pairs: [((dx, dy, dz), (lx, ly, rx, ry)), ...] mapping an EE offset to the
    pixel coordinates of the tracked structure's two horizontal extremities.
    Returns (C, std) with C of shape (4, 4) acting on (dx, dy, dz, 1).
    """
    if len(pairs) < 4:
        raise DegenerateDesign(f"need at least 4 pairs, got {len(pairs)}")
    design = np.array([[p[0][0], p[0][1], p[0][2], 1.0] for p in pairs])
    targets = np.array([list(p[1]) for p in pairs])
    C, std = _lstsq_rows(design, targets)
    return C, std


# ---------------------------------------------------------------------------
# Embodied collection


@dataclass(frozen=True)
class CollectionRig:
    """Everything the scripted collection run needs besides (m, n, seed)."""

    world: World
    eth_cam: CameraModel
    eih_cam: CameraModel
    home: Pose
    approach_height: float = 0.008       # bottleneck tip height above the board top
    offset_xy: float = 0.006             # EE offset box half-width (m)
    offset_z: float = 0.010              # EE offset box z extent, upward only
    gains: GainSet = field(default_factory=lambda: GainSet(K=np.array([2000.0, 2000.0, 2000.0, 20.0])))


def default_rig(ws: WorkspaceSpec | None = None, geom: TaskGeometry | None = None) -> CollectionRig:
    geom = geom if geom is not None else TaskGeometry()
    eth = CameraModel(
        kind=CameraKind.EYE_TO_HAND,
        mount_pose=Pose(x=0.275, y=0.275, z=0.8),
        scale=128 / 0.55,
        image_size=(128, 128),
    )
    eih = CameraModel(
        kind=CameraKind.EYE_IN_HAND,
        mount_pose=Pose(x=-0.025, y=0.0, z=-0.010),
        scale=70.0,
        image_size=(64, 64),
    )
    return CollectionRig(world=World(geom=geom), eth_cam=eth, eih_cam=eih, home=Pose(x=0.02, y=0.02, z=0.25))


def _bottleneck_ee(geom: TaskGeometry, board: Pose, approach_height: float) -> Pose:
    hx, hy = geom.hole_center_world(board)
    return Pose(x=hx, y=hy, z=geom.board_top + approach_height - geom.tcp_offset.z, rz=board.rz)


def _track_to(world: World, state: WorldState, target: Pose, duration: float, gains: GainSet) -> WorldState:
    """Min-jerk move plus a short settle, through the compliance controller."""
    start = state.ee_pose
    v = np.zeros(4)
    ticks = int(round(duration / CONTROL_DT))
    for k in range(ticks):
        x_d = min_jerk(start, target, duration, min((k + 1) * CONTROL_DT, duration))
        cmd = ControlCommand(X_d=x_d, K=gains.K)
        v = admittance_step(cmd, state.ee_pose, state.contact_wrench, v, gains)
        state = world.step(state, v, CONTROL_DT)
    cmd = ControlCommand(X_d=target, K=gains.K)
    for _ in range(60):
        v = admittance_step(cmd, state.ee_pose, state.contact_wrench, v, gains)
        state = world.step(state, v, CONTROL_DT)
        if np.max(np.abs(pose_delta(state.ee_pose, target))[:3]) < 2e-4:
            break
    return state


def _hole_truth(cam: CameraModel, geom: TaskGeometry, state: WorldState):
    board = state.board_pose
    hx, hy = geom.hole_center_world(board)
    huv = cam.project(hx, hy, z=geom.board_top, ee_pose=state.ee_pose)
    _, _, cz = cam.center(state.ee_pose)
    r_px = cam.scale * geom.hole_radius / (cz - geom.board_top)
    box = (huv[0], huv[1], 2 * r_px, 2 * r_px)
    pixvec = (huv[0] - r_px, huv[1], huv[0] + r_px, huv[1])
    return box, pixvec


def collect_samples(
    ws: WorkspaceSpec,
    geom: TaskGeometry,
    m: int,
    n: int,
    seed: int,
    rig: CollectionRig | None = None,
) -> SampleSet:
    """Scripted pick-and-place collection of m*n image/pose records per camera.

    Board placements are uniform over the workspace (yaw held at zero so the
    manifest stays positional); EE offsets cover the uncertainty box with
    non-negative z. Offsets that would drive the tip into the board are pruned
    and resampled, with the count reported on the SampleSet.
    """
    if m * n < 8:
        raise ValueError("m*n must be at least 8")
    rig = rig if rig is not None else default_rig(ws, geom)
    world = rig.world
    rng = np.random.default_rng(seed)
    from .vision import _truth_boxes  # oracle boxes for the overhead view

    eth_records: list[EthRecord] = []
    eih_records: list[EihRecord] = []
    collisions = 0
    idx = 0

    for i in range(m):
        px = rng.uniform(*ws.x_range)
        py = rng.uniform(*ws.y_range)
        board = Pose(x=px, y=py, z=ws.z_con, rz=0.0)
        state = WorldState(ee_pose=rig.home, ee_vel=np.zeros(4), board_pose=board)
        bottleneck = _bottleneck_ee(geom, board, rig.approach_height)
        state = _track_to(world, state, bottleneck, 2.0, rig.gains)

        offsets: list[tuple[float, float, float]] = [(0.0, 0.0, 0.0)]
        while len(offsets) < n:
            cand = (
                rng.uniform(-rig.offset_xy, rig.offset_xy),
                rng.uniform(-rig.offset_xy, rig.offset_xy),
                rng.uniform(0.0, rig.offset_z),
            )
            tip_z = geom.board_top + rig.approach_height + cand[2]
            if cand[2] < 0 or tip_z < geom.board_top + 1e-3:
                collisions += 1
                continue
            offsets.append(cand)

        for off in offsets[:n]:
            target = Pose(
                x=bottleneck.x + off[0],
                y=bottleneck.y + off[1],
                z=bottleneck.z + off[2],
                rz=bottleneck.rz,
            )
            state = _track_to(world, state, target, 0.4, rig.gains)
            actual = pose_delta(state.ee_pose, bottleneck)
            delta = (float(actual[0]), float(actual[1]), float(actual[2]))

            eth_img = render(state, rig.eth_cam, geom, seed=seed + i)
            eih_img = render(state, rig.eih_cam, geom, seed=seed + i)
            truth_eth = {cls: (cx, cy, bw, bh) for cls, cx, cy, bw, bh in _truth_boxes(state, rig.eth_cam, geom)}
            truth_box, truth_pixvec = _hole_truth(rig.eih_cam, geom, state)

            eth_records.append(
                EthRecord(
                    image_id=f"eth_{idx:04d}",
                    image=eth_img.astype(np.float32),
                    position=(px, py),
                    board_pose=board,
                    ee_pose=state.ee_pose,
                    truth_boxes=truth_eth,
                )
            )
            eih_records.append(
                EihRecord(
                    image_id=f"eih_{idx:04d}",
                    image=eih_img.astype(np.float32),
                    delta=delta,
                    board_pose=board,
                    ee_pose=state.ee_pose,
                    truth_box=truth_box,
                    truth_pixvec=truth_pixvec,
                )
            )
            idx += 1

    return SampleSet(
        eth_records=eth_records,
        eih_records=eih_records,
        m=m,
        n=n,
        seed=seed,
        collisions_avoided=collisions,
        eth_image_size=rig.eth_cam.image_size,
        eih_image_size=rig.eih_cam.image_size,
    )


# ---------------------------------------------------------------------------
# Labeling


def _norm_box(box, image_size) -> tuple[float, float, float, float]:
    w, h = image_size
    cx, cy, bw, bh = box
    clip = lambda v: min(max(v, 0.0), 1.0)
    return (clip(cx / w), clip(cy / h), clip(bw / w), clip(bh / h))


def _denorm(label: LabelRecord, image_size) -> tuple[float, float, float, float]:
    w, h = image_size
    return (label.cx * w, label.cy * h, label.w * w, label.h * h)


def simulate_manual_labels(
    sample_set: SampleSet,
    per_camera: int,
    sigma_px: float,
    seed: int,
) -> list[LabelRecord]:
    """Oracle boxes plus annotation noise on a seeded random subset of images."""
    rng = np.random.default_rng(seed)
    labels: list[LabelRecord] = []
    total = len(sample_set.eth_records)
    if per_camera > total:
        raise ValueError("more manual labels requested than images collected")
    picks = np.sort(rng.permutation(total)[:per_camera])

    for i in picks:
        rec = sample_set.eth_records[i]
        for cls, box in rec.truth_boxes.items():
            noisy = (
                box[0] + rng.normal(0, sigma_px),
                box[1] + rng.normal(0, sigma_px),
                max(2.0, box[2] + rng.normal(0, sigma_px)),
                max(2.0, box[3] + rng.normal(0, sigma_px)),
            )
            labels.append(
                LabelRecord(rec.image_id, cls, *_norm_box(noisy, sample_set.eth_image_size), LabelSource.MANUAL)
            )
    for i in picks:
        rec = sample_set.eih_records[i]
        box = rec.truth_box
        noisy = (
            box[0] + rng.normal(0, sigma_px),
            box[1] + rng.normal(0, sigma_px),
            max(2.0, box[2] + rng.normal(0, sigma_px)),
            max(2.0, box[3] + rng.normal(0, sigma_px)),
        )
        labels.append(
            LabelRecord(rec.image_id, DetClass.HOLE, *_norm_box(noisy, sample_set.eih_image_size), LabelSource.MANUAL)
        )
    return labels


def eth_fit_pairs(sample_set: SampleSet, labels: list[LabelRecord]):
    """(robot position, labeled Board center px) pairs for fit_eth."""
    by_image = {rec.image_id: rec for rec in sample_set.eth_records}
    pairs = []
    for lab in labels:
        if lab.class_id is DetClass.BOARD and lab.image_id in by_image:
            rec = by_image[lab.image_id]
            cx, cy, _, _ = _denorm(lab, sample_set.eth_image_size)
            pairs.append((rec.position, (cx, cy)))
    return pairs


def eih_fit_pairs(sample_set: SampleSet, labels: list[LabelRecord]):
    """(EE offset, labeled hole extremity pixels) pairs for fit_image_jacobian."""
    by_image = {rec.image_id: rec for rec in sample_set.eih_records}
    pairs = []
    for lab in labels:
        if lab.class_id is DetClass.HOLE and lab.image_id in by_image:
            rec = by_image[lab.image_id]
            cx, cy, bw, _ = _denorm(lab, sample_set.eih_image_size)
            pairs.append((rec.delta, (cx - bw / 2, cy, cx + bw / 2, cy)))
    return pairs


def calibrate(sample_set: SampleSet, manual: list[LabelRecord]) -> CalibrationModel:
    """Fit all hand-eye-task maps from the manual subset."""
    eth_pairs = eth_fit_pairs(sample_set, manual)
    eih_pairs = eih_fit_pairs(sample_set, manual)
    if len(eth_pairs) < 4 or len(eih_pairs) < 4:
        raise MissingCalibration("need at least 4 manual labels per camera")
    A, Binv, std_fwd, std_inv = fit_eth(eth_pairs)
    C, std_jac = fit_image_jacobian(eih_pairs)
    return CalibrationModel(A=A, Binv=Binv, C=C, std_fwd=std_fwd, std_inv=std_inv, std_jac=std_jac)


def auto_label(
    sample_set: SampleSet,
    manual: list[LabelRecord],
    calib: CalibrationModel | None = None,
) -> list[LabelRecord]:
    """Predict boxes for every image not in the manual subset.

    Overhead centers come from the robot->pixel map applied to the recorded
    placement (and the known feature offsets); wrist-camera centers come from
    the image Jacobian applied to the recorded EE offset. Box sizes are the
    class-wise means of the manual sizes.
    """
    n_images = len(sample_set.eth_records) + len(sample_set.eih_records)
    if n_images == 0 or len(manual) == 0:
        raise MissingCalibration("no manual labels")
    manual_ids = {lab.image_id for lab in manual}
    coverage = len({lab.image_id for lab in manual}) / n_images
    has_eth = any(lab.image_id.startswith("eth") for lab in manual)
    has_eih = any(lab.image_id.startswith("eih") for lab in manual)
    if not (has_eth and has_eih):
        raise MissingCalibration("manual labels must cover both cameras")
    if coverage < 0.02:
        raise MissingCalibration(f"manual coverage {coverage:.1%} below 2%")
    if calib is None:
        calib = calibrate(sample_set, manual)

    mean_size: dict[DetClass, tuple[float, float]] = {}
    for cls in DetClass:
        sizes = [(lab.w, lab.h) for lab in manual if lab.class_id is cls]
        if sizes:
            arr = np.array(sizes)
            mean_size[cls] = (float(arr[:, 0].mean()), float(arr[:, 1].mean()))

    out: list[LabelRecord] = []
    geom = TaskGeometry()
    for rec in sample_set.eth_records:
        if rec.image_id in manual_ids:
            continue
        board = rec.board_pose
        points = {
            DetClass.BOARD: (board.x, board.y),
            DetClass.FEATURE1: geom.feature_world(board, 0),
            DetClass.FEATURE2: geom.feature_world(board, 1),
        }
        for cls, (x, y) in points.items():
            if cls not in mean_size:
                continue
            u, v = calib.robot_to_pixel(x, y)
            w_img, h_img = sample_set.eth_image_size
            mw, mh = mean_size[cls]
            out.append(
                LabelRecord(
                    rec.image_id,
                    cls,
                    min(max(u / w_img, 0.0), 1.0),
                    min(max(v / h_img, 0.0), 1.0),
                    mw,
                    mh,
                    LabelSource.AUTO,
                )
            )
    for rec in sample_set.eih_records:
        if rec.image_id in manual_ids:
            continue
        if DetClass.HOLE not in mean_size:
            continue
        vec = calib.eih_pixvec(rec.delta)
        cx, cy = (vec[0] + vec[2]) / 2, (vec[1] + vec[3]) / 2
        w_img, h_img = sample_set.eih_image_size
        mw, mh = mean_size[DetClass.HOLE]
        out.append(
            LabelRecord(
                rec.image_id,
                DetClass.HOLE,
                min(max(cx / w_img, 0.0), 1.0),
                min(max(cy / h_img, 0.0), 1.0),
                mw,
                mh,
                LabelSource.AUTO,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Quality report and file formats


@dataclass(frozen=True)
class ReportRow:
    camera: str
    source: LabelSource
    count: int
    center_std_px: float
    center_std_m: float
    size_std_px: float
    per_class_center_std_px: dict[DetClass, float]


def oracle_truth_map(sample_set: SampleSet) -> dict[tuple[str, DetClass], tuple[float, float, float, float]]:
    truth = {}
    for rec in sample_set.eth_records:
        for cls, box in rec.truth_boxes.items():
            truth[(rec.image_id, cls)] = box
    for rec in sample_set.eih_records:
        truth[(rec.image_id, DetClass.HOLE)] = rec.truth_box
    return truth


def label_quality_report(
    labels: list[LabelRecord],
    oracle_truth: dict[tuple[str, DetClass], tuple[float, float, float, float]],
    sample_set: SampleSet,
    meters_per_px: dict[str, float] | None = None,
) -> list[ReportRow]:
    """Residual std of labels against oracle truth per (camera, source).

    Both pixel and meter residuals are reported since the natural units of a
    box std are ambiguous otherwise.
    """
    scale = meters_per_px if meters_per_px is not None else {"eth": 0.55 / 128, "eih": 0.098 / 70}
    groups: dict[tuple[str, LabelSource], list[tuple[DetClass, float, float]]] = {}
    for lab in labels:
        cam = "eth" if lab.image_id.startswith("eth") else "eih"
        key = (lab.image_id, lab.class_id)
        if key not in oracle_truth:
            continue
        size = sample_set.eth_image_size if cam == "eth" else sample_set.eih_image_size
        cx, cy, bw, bh = _denorm(lab, size)
        tx, ty, tw, th = oracle_truth[key]
        center_err = math.hypot(cx - tx, cy - ty)
        size_err = math.hypot(bw - tw, bh - th)
        groups.setdefault((cam, lab.source), []).append((lab.class_id, center_err, size_err))

    rows = []
    for (cam, source), entries in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        centers = np.array([e[1] for e in entries])
        sizes = np.array([e[2] for e in entries])
        per_class = {}
        for cls in DetClass:
            sub = np.array([e[1] for e in entries if e[0] is cls])
            if len(sub):
                per_class[cls] = float(np.sqrt((sub**2).mean()))
        c_std = float(np.sqrt((centers**2).mean()))
        rows.append(
            ReportRow(
                camera=cam,
                source=source,
                count=len(entries),
                center_std_px=c_std,
                center_std_m=c_std * scale[cam],
                size_std_px=float(np.sqrt((sizes**2).mean())),
                per_class_center_std_px=per_class,
            )
        )
    return rows


def fit_residual_on_labels(sample_set: SampleSet, labels: list[LabelRecord], calib: CalibrationModel):
    """Std of (map-predicted center - label center) over a label set, per camera (px).

    Evaluated over the full label set (manual plus auto) this is the all-data
    analog of the fit residual: auto labels sit on the fitted maps, so growing
    the auto fraction shrinks it below the manual-subset fit std.
    """
    eth_err, eih_err = [], []
    eth_by_id = {r.image_id: r for r in sample_set.eth_records}
    eih_by_id = {r.image_id: r for r in sample_set.eih_records}
    for lab in labels:
        if lab.class_id is DetClass.BOARD and lab.image_id in eth_by_id:
            rec = eth_by_id[lab.image_id]
            cx, cy, _, _ = _denorm(lab, sample_set.eth_image_size)
            u, v = calib.robot_to_pixel(*rec.position)
            eth_err.extend([cx - u, cy - v])
        elif lab.class_id is DetClass.HOLE and lab.image_id in eih_by_id:
            rec = eih_by_id[lab.image_id]
            cx, cy, _, _ = _denorm(lab, sample_set.eih_image_size)
            vec = calib.eih_pixvec(rec.delta)
            eih_err.extend([cx - (vec[0] + vec[2]) / 2, cy - (vec[1] + vec[3]) / 2])
    eth_std = float(np.sqrt(np.mean(np.square(eth_err)))) if eth_err else float("nan")
    eih_std = float(np.sqrt(np.mean(np.square(eih_err)))) if eih_err else float("nan")
    return eth_std, eih_std


def write_label_files(labels: list[LabelRecord], out_dir) -> list[str]:
    """One text file per image: lines 'class_id cx cy w h', normalized, 6 dp."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    by_image: dict[str, list[LabelRecord]] = {}
    for lab in labels:
        by_image.setdefault(lab.image_id, []).append(lab)
    written = []
    for image_id in sorted(by_image):
        path = os.path.join(out_dir, f"{image_id}.txt")
        with open(path, "w", encoding="utf-8") as f:
            for lab in sorted(by_image[image_id], key=lambda l: int(l.class_id)):
                f.write(f"{int(lab.class_id)} {lab.cx:.6f} {lab.cy:.6f} {lab.w:.6f} {lab.h:.6f}\n")
        written.append(path)
    return written


def write_manifest(sample_set: SampleSet, out_path) -> None:
    """Comma-separated dataset index across both cameras."""
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("image_id,camera,x_r,y_r,dx_r,dy_r,dz_r,seed\n")
        for rec in sample_set.eth_records:
            f.write(
                f"{rec.image_id},eth,{rec.position[0]:.6f},{rec.position[1]:.6f},,,,{sample_set.seed}\n"
            )
        for rec in sample_set.eih_records:
            f.write(
                f"{rec.image_id},eih,,,{rec.delta[0]:.6f},{rec.delta[1]:.6f},{rec.delta[2]:.6f},{sample_set.seed}\n"
            )
