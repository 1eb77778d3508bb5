"""Procedural camera views and a geometric detection oracle.

Two cameras: a workspace-fixed overhead view with an affine pixel map, and an
end-effector-mounted view modeled as a scaled pinhole. The "detector" projects
ground-truth geometry into pixel boxes and corrupts them with configurable
noise, dropout, and occlusion handling, standing in for a trained model while
keeping every downstream consumer (pose assembly, attention crops) intact.

Images are single-channel float arrays in [0, 1], shape (h, w).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, WorkspaceSpec
from .world import TaskGeometry, WorldState

EE_BODY_RADIUS = 0.035   # projected silhouette of the arm around the EE axis
FEATURE_HALF = 0.006     # feature marker half-extent (m)

SHADE_BOARD = 0.82
SHADE_HOLE = 0.08
SHADE_FEATURE1 = 0.95
SHADE_FEATURE2 = 0.25
SHADE_PEG = 0.55
SHADE_EE_BODY = 0.30


class MissingDetection(RuntimeError):
    def __init__(self, det_class: "DetClass"):
        super().__init__(f"no detection for {det_class.name}")
        self.det_class = det_class


class LowConfidence(RuntimeError):
    def __init__(self, det_class: "DetClass", confidence: float):
        super().__init__(f"{det_class.name} confidence {confidence:.3f} below threshold")
        self.det_class = det_class
        self.confidence = confidence


class DegenerateBox(ValueError):
    pass


class CameraKind(enum.Enum):
    EYE_TO_HAND = "eye_to_hand"
    EYE_IN_HAND = "eye_in_hand"


class DetClass(enum.IntEnum):
    BOARD = 0
    FEATURE1 = 1
    FEATURE2 = 2
    HOLE = 3


@dataclass(frozen=True)
class CameraModel:
    """Camera intrinsics/mounting.

    EyeToHand: mount_pose is the world pose of the camera (x, y over the
    workspace center); `scale` is px/m of the affine overhead map.
    EyeInHand: mount_pose is the camera offset in the EE frame (the camera
    translates with the EE but stays axis-aligned); `scale` is the focal
    length in pixels of the downward pinhole.
    """

    kind: CameraKind
    mount_pose: Pose
    scale: float
    image_size: tuple[int, int] = (64, 64)
    principal_point: tuple[float, float] | None = None

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.principal_point is None:
            w, h = self.image_size
            object.__setattr__(self, "principal_point", (w / 2.0, h / 2.0))

    def center(self, ee_pose: Pose | None = None) -> tuple[float, float, float]:
        """World position of the camera."""
        if self.kind is CameraKind.EYE_TO_HAND:
            return (self.mount_pose.x, self.mount_pose.y, self.mount_pose.z)
        assert ee_pose is not None
        return (
            ee_pose.x + self.mount_pose.x,
            ee_pose.y + self.mount_pose.y,
            ee_pose.z + self.mount_pose.z,
        )

    def project(self, x: float, y: float, z: float = 0.0, ee_pose: Pose | None = None):
        """World point -> pixel (u, v); v grows downward in the image."""
        cx, cy, cz = self.center(ee_pose)
        px, py = self.principal_point
        if self.kind is CameraKind.EYE_TO_HAND:
            return (px + self.scale * (x - cx), py - self.scale * (y - cy))
        depth = cz - z
        if depth <= 1e-6:
            raise ValueError("point at or above the eye-in-hand camera")
        return (px + self.scale * (x - cx) / depth, py - self.scale * (y - cy) / depth)

    def pixel_to_world(self, u, v, z: float = 0.0, ee_pose: Pose | None = None):
        """Inverse of `project` on the plane of height z. Accepts arrays."""
        cx, cy, cz = self.center(ee_pose)
        px, py = self.principal_point
        if self.kind is CameraKind.EYE_TO_HAND:
            return (cx + (u - px) / self.scale, cy - (v - py) / self.scale)
        depth = cz - z
        return (cx + (u - px) * depth / self.scale, cy - (v - py) * depth / self.scale)


@dataclass(frozen=True)
class Detection:
    class_id: DetClass
    cx: float
    cy: float
    w: float
    h: float
    confidence: float


@dataclass(frozen=True)
class DetectorNoise:
    sigma_center: float = 0.5
    sigma_size: float = 0.25
    occlusion_conf_floor: float = 0.25
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.sigma_center < 0 or self.sigma_size < 0:
            raise ValueError("noise sigmas must be non-negative")


NO_NOISE = DetectorNoise(sigma_center=0.0, sigma_size=0.0, dropout_prob=0.0)


def _background(cam: CameraModel, seed: int) -> np.ndarray:
    """Smooth seeded texture: bilinearly upsampled coarse noise."""
    w, h = cam.image_size
    rng = np.random.default_rng(seed ^ 0x5EED)
    coarse = rng.uniform(0.40, 0.70, size=(9, 9))
    yi = np.linspace(0, 8, h)
    xi = np.linspace(0, 8, w)
    y0 = np.clip(yi.astype(int), 0, 7)
    x0 = np.clip(xi.astype(int), 0, 7)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx + c10 * fy * (1 - fx) + c11 * fy * fx)


def _board_frame(board_pose: Pose, wx: np.ndarray, wy: np.ndarray):
    c, s = math.cos(board_pose.rz), math.sin(board_pose.rz)
    dx, dy = wx - board_pose.x, wy - board_pose.y
    return (c * dx + s * dy, -s * dx + c * dy)


def render(state: WorldState, cam: CameraModel, geom: TaskGeometry | None = None, seed: int = 0) -> np.ndarray:
    """Rasterize the scene for one camera; deterministic per (state, seed)."""
    geom = geom if geom is not None else TaskGeometry()
    w, h = cam.image_size
    img = _background(cam, seed)

    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    uu, vv = np.meshgrid(u, v)
    ee = state.ee_pose
    board = state.board_pose
    tip = geom.tip_pose(ee)

    # Board-plane content: board slab, hole disk, feature markers.
    wx, wy = cam.pixel_to_world(uu, vv, z=geom.board_top, ee_pose=ee)
    bx, by = _board_frame(board, wx, wy)
    on_board = (np.abs(bx) <= geom.board_half_extents[0]) & (np.abs(by) <= geom.board_half_extents[1])
    img[on_board] = SHADE_BOARD

    hx, hy = geom.hole_center_world(board)
    hole = on_board & ((wx - hx) ** 2 + (wy - hy) ** 2 <= geom.hole_radius**2)
    img[hole] = SHADE_HOLE

    for idx, shade in ((0, SHADE_FEATURE1), (1, SHADE_FEATURE2)):
        fx, fy = geom.feature_world(board, idx)
        fb_x, fb_y = _board_frame(board, wx, wy)
        fpt = geom.feature_points[idx]
        mark = on_board & (np.abs(fb_x - fpt[0]) <= FEATURE_HALF) & (np.abs(fb_y - fpt[1]) <= FEATURE_HALF)
        img[mark] = shade

    # Peg disk projected at the tip height; occludes board content beneath it.
    px, py = cam.pixel_to_world(uu, vv, z=tip.z, ee_pose=ee)
    peg = (px - tip.x) ** 2 + (py - tip.y) ** 2 <= geom.peg_radius**2
    img[peg] = SHADE_PEG

    # In the overhead view the arm body hides whatever it hovers over.
    if cam.kind is CameraKind.EYE_TO_HAND:
        ax, ay = cam.pixel_to_world(uu, vv, z=geom.board_top, ee_pose=ee)
        body = (ax - ee.x) ** 2 + (ay - ee.y) ** 2 <= EE_BODY_RADIUS**2
        img[body] = SHADE_EE_BODY
        ppx, ppy = cam.pixel_to_world(uu, vv, z=tip.z, ee_pose=ee)
        peg2 = (ppx - tip.x) ** 2 + (ppy - tip.y) ** 2 <= geom.peg_radius**2
        img[peg2] = SHADE_PEG

    return np.clip(img, 0.0, 1.0)


def _coverage(center_uv, half_w, half_h, blocker_uv, blocker_r_px) -> float:
    """Fraction of a pixel box covered by a disk, on a 5x5 probe grid."""
    gx = np.linspace(center_uv[0] - half_w, center_uv[0] + half_w, 5)
    gy = np.linspace(center_uv[1] - half_h, center_uv[1] + half_h, 5)
    xx, yy = np.meshgrid(gx, gy)
    inside = (xx - blocker_uv[0]) ** 2 + (yy - blocker_uv[1]) ** 2 <= blocker_r_px**2
    return float(inside.mean())


def _truth_boxes(state: WorldState, cam: CameraModel, geom: TaskGeometry) -> list[tuple[DetClass, float, float, float, float]]:
    """Noise-free projected boxes (class, cx, cy, w, h) for this camera."""
    ee = state.ee_pose
    board = state.board_pose
    out = []
    if cam.kind is CameraKind.EYE_TO_HAND:
        cxy = cam.project(board.x, board.y, z=geom.board_top)
        c, s = abs(math.cos(board.rz)), abs(math.sin(board.rz))
        hx_e, hy_e = geom.board_half_extents
        bw = 2 * cam.scale * (c * hx_e + s * hy_e)
        bh = 2 * cam.scale * (s * hx_e + c * hy_e)
        out.append((DetClass.BOARD, cxy[0], cxy[1], bw, bh))
        for idx, cls in ((0, DetClass.FEATURE1), (1, DetClass.FEATURE2)):
            fx, fy = geom.feature_world(board, idx)
            fuv = cam.project(fx, fy, z=geom.board_top)
            fs = 2 * cam.scale * FEATURE_HALF * (abs(math.cos(board.rz)) + abs(math.sin(board.rz)))
            out.append((cls, fuv[0], fuv[1], fs, fs))
    else:
        hx, hy = geom.hole_center_world(board)
        huv = cam.project(hx, hy, z=geom.board_top, ee_pose=ee)
        _, _, cz = cam.center(ee)
        depth = cz - geom.board_top
        r_px = cam.scale * geom.hole_radius / depth
        out.append((DetClass.HOLE, huv[0], huv[1], 2 * r_px, 2 * r_px))
    return out


def detect(
    state: WorldState,
    cam: CameraModel,
    noise: DetectorNoise = DetectorNoise(),
    seed: int = 0,
    geom: TaskGeometry | None = None,
) -> list[Detection]:
    """Oracle detections with injected noise, dropout, and occlusion effects."""
    geom = geom if geom is not None else TaskGeometry()
    rng = np.random.default_rng(seed)
    w, h = cam.image_size
    ee = state.ee_pose
    tip = geom.tip_pose(ee)
    dets: list[Detection] = []

    for cls, cx, cy, bw, bh in _truth_boxes(state, cam, geom):
        cx += rng.normal(0.0, noise.sigma_center) if noise.sigma_center > 0 else 0.0
        cy += rng.normal(0.0, noise.sigma_center) if noise.sigma_center > 0 else 0.0
        bw = max(2.0, bw + (rng.normal(0.0, noise.sigma_size) if noise.sigma_size > 0 else 0.0))
        bh = max(2.0, bh + (rng.normal(0.0, noise.sigma_size) if noise.sigma_size > 0 else 0.0))

        # Out of view entirely -> no detection.
        if cx + bw / 2 < 0 or cx - bw / 2 > w or cy + bh / 2 < 0 or cy - bh / 2 > h:
            continue
        # Clamp the box to the image bounds.
        x0, x1 = max(0.0, cx - bw / 2), min(float(w), cx + bw / 2)
        y0, y1 = max(0.0, cy - bh / 2), min(float(h), cy + bh / 2)
        cx, cy, bw, bh = (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0
        if bw < 1.0 or bh < 1.0:
            continue

        conf = 0.99
        if cam.kind is CameraKind.EYE_TO_HAND:
            body_uv = cam.project(ee.x, ee.y, z=geom.board_top)
            body_r = cam.scale * EE_BODY_RADIUS
            cover = _coverage((cx, cy), bw / 2, bh / 2, body_uv, body_r)
        else:
            peg_uv = cam.project(tip.x, tip.y, z=tip.z, ee_pose=ee)
            _, _, camz = cam.center(ee)
            peg_r = cam.scale * geom.peg_radius / max(camz - tip.z, 1e-6)
            cover = _coverage((cx, cy), bw / 2, bh / 2, peg_uv, peg_r)
        if cover >= 0.95:
            conf = 0.0
        elif cover > 0.05:
            conf = min(conf, noise.occlusion_conf_floor)

        if conf <= 0.0:
            continue
        if noise.dropout_prob > 0 and rng.uniform() < noise.dropout_prob:
            continue
        dets.append(Detection(class_id=cls, cx=cx, cy=cy, w=bw, h=bh, confidence=conf))

    return dets


def estimate_board_pose(
    dets: list[Detection],
    calib,
    ws: WorkspaceSpec,
    confidence_threshold: float = 0.5,
) -> Pose:
    """Assemble the board pose from Board/Feature detections via the pixel->robot map.

    The yaw comes from atan2 of the feature-to-feature direction in the robot
    frame (the markers define the board's +x axis), which keeps the quadrant
    where a plain arctangent of the slope would not.
    """
    by_class = {}
    for d in dets:
        if d.class_id not in by_class or d.confidence > by_class[d.class_id].confidence:
            by_class[d.class_id] = d
    pts = []
    for cls in (DetClass.BOARD, DetClass.FEATURE1, DetClass.FEATURE2):
        if cls not in by_class:
            raise MissingDetection(cls)
        d = by_class[cls]
        if d.confidence < confidence_threshold:
            raise LowConfidence(cls, d.confidence)
        pts.append(calib.pixel_to_robot(d.cx, d.cy))
    (x0, y0), (x1, y1), (x2, y2) = pts
    rz = math.atan2(y2 - y1, x2 - x1)
    return Pose(x=x0, y=y0, z=ws.z_con, rx=ws.rx_con, ry=ws.ry_con, rz=rz)


def _area_resample_1d(n_src: int, lo: float, hi: float, n_out: int) -> list[tuple[int, int, np.ndarray]]:
    """Weights for area-averaging the source interval [lo, hi) into n_out bins."""
    edges = np.linspace(lo, hi, n_out + 1)
    spans = []
    for i in range(n_out):
        a, b = edges[i], edges[i + 1]
        i0, i1 = int(math.floor(a)), int(math.ceil(b))
        i0, i1 = max(0, i0), min(n_src, i1)
        idx = np.arange(i0, i1)
        wgt = np.minimum(idx + 1.0, b) - np.maximum(idx.astype(float), a)
        wgt = np.clip(wgt, 0.0, None)
        total = wgt.sum()
        if total <= 0:
            wgt = np.ones(max(len(idx), 1))
            idx = idx if len(idx) else np.array([min(max(i0, 0), n_src - 1)])
            total = wgt.sum()
        spans.append((i0, i1, wgt / total))
    return spans


def crop_attention(img: np.ndarray, det: Detection, out_size: tuple[int, int] = (16, 16)) -> np.ndarray:
    """Crop the detection box (clamped to bounds) and area-average to out_size."""
    if det.w < 2.0 or det.h < 2.0:
        raise DegenerateBox(f"box {det.w:.1f}x{det.h:.1f} px below the 2 px minimum")
    h_img, w_img = img.shape
    x0 = min(max(det.cx - det.w / 2, 0.0), w_img - 2.0)
    x1 = max(min(det.cx + det.w / 2, float(w_img)), x0 + 2.0)
    y0 = min(max(det.cy - det.h / 2, 0.0), h_img - 2.0)
    y1 = max(min(det.cy + det.h / 2, float(h_img)), y0 + 2.0)

    ow, oh = out_size
    col_spans = _area_resample_1d(w_img, x0, x1, ow)
    row_spans = _area_resample_1d(h_img, y0, y1, oh)
    out = np.empty((oh, ow))
    row_reduced = np.empty((oh, w_img))
    for r, (i0, i1, wgt) in enumerate(row_spans):
        row_reduced[r] = wgt @ img[i0:i1, :]
    for c, (i0, i1, wgt) in enumerate(col_spans):
        out[:, c] = row_reduced[:, i0:i1] @ wgt
    return out


def save_pgm(img: np.ndarray, path) -> None:
    """8-bit binary portable graymap dump (magic P5, maxval 255)."""
    h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return data.astype(float) / float(maxval)
