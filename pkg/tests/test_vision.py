import math

import numpy as np
import pytest

from pegassembly.calibration import CalibrationModel
from pegassembly.geometry import Pose, WorkspaceSpec
from pegassembly.vision import (
    CameraKind,
    CameraModel,
    DegenerateBox,
    DetClass,
    Detection,
    DetectorNoise,
    LowConfidence,
    MissingDetection,
    NO_NOISE,
    _background,
    crop_attention,
    detect,
    estimate_board_pose,
    load_pgm,
    render,
    save_pgm,
)
from pegassembly.world import TaskGeometry, WorldState

GEOM = TaskGeometry()
WS = WorkspaceSpec(x_range=(0.10, 0.45), y_range=(0.10, 0.45), rz_range=(-math.pi, math.pi))
ETH = CameraModel(kind=CameraKind.EYE_TO_HAND, mount_pose=Pose(x=0.275, y=0.275, z=0.8),
                  scale=128 / 0.55, image_size=(128, 128))
EIH = CameraModel(kind=CameraKind.EYE_IN_HAND, mount_pose=Pose(x=-0.025, y=0.0, z=-0.010),
                  scale=70.0, image_size=(64, 64))
HOME = Pose(x=0.02, y=0.02, z=0.25)
TIP_LEN = -GEOM.tcp_offset.z


def world_state(board=Pose(x=0.2, y=0.2), ee=HOME):
    return WorldState(ee_pose=ee, ee_vel=np.zeros(4), board_pose=board)


def exact_calib():
    return CalibrationModel.exact_for_camera(ETH)


def bottleneck_state(board):
    hx, hy = GEOM.hole_center_world(board)
    ee = Pose(x=hx, y=hy, z=GEOM.board_top + 0.008 + TIP_LEN, rz=board.rz)
    return WorldState(ee_pose=ee, ee_vel=np.zeros(4), board_pose=board)


def test_render_empty_scene_is_background():
    st = world_state(board=Pose(x=5.0, y=5.0), ee=Pose(x=5.2, y=5.2, z=0.25))
    img = render(st, ETH, GEOM, seed=9)
    assert np.array_equal(img, np.clip(_background(ETH, 9), 0.0, 1.0))


def test_render_hole_darker_than_board():
    board = Pose(x=0.275, y=0.275)
    img = render(world_state(board=board), ETH, GEOM)
    hx, hy = GEOM.hole_center_world(board)
    hu, hv = ETH.project(hx, hy, z=GEOM.board_top)
    bu, bv = ETH.project(board.x - 0.04, board.y - 0.02, z=GEOM.board_top)
    assert img[int(hv), int(hu)] < img[int(bv), int(bu)]


def test_render_deterministic():
    st = world_state()
    a = render(st, ETH, GEOM, seed=4)
    b = render(st, ETH, GEOM, seed=4)
    assert np.array_equal(a, b)


def test_detect_zero_noise_exact_projection():
    board = Pose(x=0.2, y=0.3, rz=0.4)
    st = world_state(board=board)
    dets = {d.class_id: d for d in detect(st, ETH, NO_NOISE, seed=1, geom=GEOM)}
    bu, bv = ETH.project(board.x, board.y, z=GEOM.board_top)
    assert dets[DetClass.BOARD].cx == pytest.approx(bu, abs=1e-9)
    assert dets[DetClass.BOARD].cy == pytest.approx(bv, abs=1e-9)
    f1 = GEOM.feature_world(board, 0)
    fu, fv = ETH.project(f1[0], f1[1], z=GEOM.board_top)
    assert dets[DetClass.FEATURE1].cx == pytest.approx(fu, abs=1e-9)


def test_detect_occlusion_confidence_floor():
    board = Pose(x=0.25, y=0.25)
    ee_over = Pose(x=board.x, y=board.y, z=0.2)
    noise = DetectorNoise(sigma_center=0.0, sigma_size=0.0, occlusion_conf_floor=0.25)
    dets = {d.class_id: d for d in detect(world_state(board, ee_over), ETH, noise, seed=0, geom=GEOM)}
    assert DetClass.BOARD in dets
    assert dets[DetClass.BOARD].confidence <= 0.25


def test_detect_noise_std_calibrated():
    noise = DetectorNoise(sigma_center=1.0, sigma_size=0.0)
    st = world_state()
    bu, bv = ETH.project(st.board_pose.x, st.board_pose.y, z=GEOM.board_top)
    errs = []
    for seed in range(10_000):
        dets = {d.class_id: d for d in detect(st, ETH, noise, seed=seed, geom=GEOM)}
        d = dets[DetClass.BOARD]
        errs.extend([d.cx - bu, d.cy - bv])
    assert abs(np.std(errs) - 1.0) < 0.05


def test_estimate_round_trip_exact():
    board = Pose(x=0.2, y=0.1, rz=0.3)
    dets = detect(world_state(board=board), ETH, NO_NOISE, seed=0, geom=GEOM)
    est = estimate_board_pose(dets, exact_calib(), WS)
    assert abs(est.x - 0.2) < 1e-9
    assert abs(est.y - 0.1) < 1e-9
    assert abs(est.rz - 0.3) < 1e-9
    assert est.z == WS.z_con and est.rx == WS.rx_con and est.ry == WS.ry_con


def test_estimate_quadrants_36_angles():
    calib = exact_calib()
    for k in range(36):
        rz = -math.pi + (k + 0.5) * (2 * math.pi / 36)
        board = Pose(x=0.25, y=0.3, rz=rz)
        dets = detect(world_state(board=board), ETH, NO_NOISE, seed=k, geom=GEOM)
        est = estimate_board_pose(dets, calib, WS)
        assert abs(math.sin(est.rz - rz)) < 1e-9 and math.cos(est.rz - rz) > 0


def test_estimate_feature_swap_flips_pi():
    board = Pose(x=0.25, y=0.3, rz=0.2)
    dets = detect(world_state(board=board), ETH, NO_NOISE, seed=0, geom=GEOM)
    swapped = []
    for d in dets:
        if d.class_id is DetClass.FEATURE1:
            swapped.append(Detection(DetClass.FEATURE2, d.cx, d.cy, d.w, d.h, d.confidence))
        elif d.class_id is DetClass.FEATURE2:
            swapped.append(Detection(DetClass.FEATURE1, d.cx, d.cy, d.w, d.h, d.confidence))
        else:
            swapped.append(d)
    est = estimate_board_pose(swapped, exact_calib(), WS)
    assert abs(math.cos(est.rz - board.rz) + 1.0) < 1e-9  # differs by pi


def test_estimate_missing_detection():
    board = Pose(x=0.25, y=0.3)
    dets = [d for d in detect(world_state(board=board), ETH, NO_NOISE, seed=0, geom=GEOM)
            if d.class_id is not DetClass.BOARD]
    with pytest.raises(MissingDetection) as e:
        estimate_board_pose(dets, exact_calib(), WS)
    assert e.value.det_class is DetClass.BOARD


def test_estimate_low_confidence():
    dets = [
        Detection(DetClass.BOARD, 60, 60, 30, 20, confidence=0.1),
        Detection(DetClass.FEATURE1, 50, 60, 4, 4, confidence=0.9),
        Detection(DetClass.FEATURE2, 70, 60, 4, 4, confidence=0.9),
    ]
    with pytest.raises(LowConfidence):
        estimate_board_pose(dets, exact_calib(), WS)


def test_pose_rmse_monotone_in_noise():
    calib = exact_calib()
    rmse = []
    for sigma in (0.0, 0.5, 1.0, 2.0):
        noise = DetectorNoise(sigma_center=sigma, sigma_size=0.0)
        errs = []
        for k in range(1000):
            board = Pose(x=0.15 + 0.002 * (k % 100), y=0.2 + 0.0017 * (k % 110), rz=0.01 * (k % 60) - 0.3)
            dets = detect(world_state(board=board), ETH, noise, seed=k, geom=GEOM)
            est = estimate_board_pose(dets, calib, WS)
            errs.append((est.x - board.x) ** 2 + (est.y - board.y) ** 2)
        rmse.append(math.sqrt(np.mean(errs)))
    assert all(rmse[i] <= rmse[i + 1] + 1e-12 for i in range(3)), rmse


def test_crop_full_image_is_resize():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (64, 64))
    det = Detection(DetClass.HOLE, 32.0, 32.0, 64.0, 64.0, 1.0)
    out = crop_attention(img, det, (16, 16))
    blocks = img.reshape(16, 4, 16, 4).mean(axis=(1, 3))
    assert np.allclose(out, blocks, atol=1e-12)


def test_crop_constant_preserved():
    img = np.full((64, 64), 0.42)
    out = crop_attention(img, Detection(DetClass.HOLE, 20.3, 41.7, 13.0, 9.0, 1.0), (16, 16))
    assert np.allclose(out, 0.42, atol=1e-12)


def test_crop_degenerate_box():
    img = np.zeros((64, 64))
    with pytest.raises(DegenerateBox):
        crop_attention(img, Detection(DetClass.HOLE, 10, 10, 1.0, 8.0, 1.0), (16, 16))


def test_crop_centers_hole_noise_free():
    # EE shifted sideways so the peg does not cover the hole in view.
    board = Pose(x=0.3, y=0.25, rz=0.1)
    st = bottleneck_state(board)
    st = WorldState(ee_pose=Pose(x=st.ee_pose.x + 0.015, y=st.ee_pose.y, z=st.ee_pose.z, rz=st.ee_pose.rz),
                    ee_vel=np.zeros(4), board_pose=board)
    img = render(st, EIH, GEOM)
    det = [d for d in detect(st, EIH, NO_NOISE, seed=0, geom=GEOM) if d.class_id is DetClass.HOLE][0]
    crop = crop_attention(img, det, (16, 16))
    dark = crop < 0.3
    assert dark.any()
    ys, xs = np.nonzero(dark)
    scale = det.w / 16.0  # source px per crop px
    cx_err_px = abs(xs.mean() + 0.5 - 8.0) * scale
    cy_err_px = abs(ys.mean() + 0.5 - 8.0) * scale
    assert cx_err_px < 1.0 and cy_err_px < 1.0


def test_attention_contains_hole_when_visible():
    rng = np.random.default_rng(5)
    noise = DetectorNoise(sigma_center=0.3, sigma_size=0.2)
    for k in range(50):
        board = Pose(x=0.2 + 0.002 * k, y=0.25, rz=0.05 * (k % 5))
        st = bottleneck_state(board)
        dets = [d for d in detect(st, EIH, noise, seed=k, geom=GEOM) if d.class_id is DetClass.HOLE]
        assert dets, "hole should be detected at the bottleneck"
        d = dets[0]
        hx, hy = GEOM.hole_center_world(board)
        hu, hv = EIH.project(hx, hy, z=GEOM.board_top, ee_pose=st.ee_pose)
        assert d.cx - d.w / 2 <= hu <= d.cx + d.w / 2
        assert d.cy - d.h / 2 <= hv <= d.cy + d.h / 2


def test_noise_free_reprojection_invariant():
    calib = exact_calib()
    for k in range(25):
        board = Pose(x=0.12 + 0.012 * k, y=0.4 - 0.01 * k, rz=-0.9 + 0.07 * k)
        dets = detect(world_state(board=board), ETH, NO_NOISE, seed=k, geom=GEOM)
        est = estimate_board_pose(dets, calib, WS)
        assert math.hypot(est.x - board.x, est.y - board.y) < 1e-9


def test_pgm_round_trip(tmp_path):
    img = render(world_state(), ETH, GEOM, seed=2)
    path = tmp_path / "view.pgm"
    save_pgm(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n128 128\n255\n")
    assert len(raw) == len(b"P5\n128 128\n255\n") + 128 * 128
    back = load_pgm(path)
    assert np.max(np.abs(back - img)) <= 1.0 / 255.0 + 1e-12
