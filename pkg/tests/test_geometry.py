import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pegassembly.geometry import (
    IDENTITY,
    Pose,
    WorkspaceSpec,
    compose,
    inverse,
    pose_delta,
    sample_uniform,
    wrap_angle,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
angles = st.floats(min_value=-4 * math.pi, max_value=4 * math.pi, allow_nan=False)


def poses():
    return st.builds(lambda x, y, z, rz: Pose(x=x, y=y, z=z, rz=wrap_angle(rz)), finite, finite, finite, angles)


def assert_pose_close(a: Pose, b: Pose, tol: float):
    assert np.max(np.abs(pose_delta(a, b))) <= tol, (a, b)


def test_identity_compose():
    p = Pose(x=0.3, y=-0.2, z=0.1, rz=0.7)
    assert_pose_close(compose(IDENTITY, p), p, 0.0)
    assert_pose_close(compose(p, IDENTITY), p, 0.0)


def test_compose_hand_case():
    # rotating frame a by pi/2 sends b's +x translation to +y
    a = Pose(x=1.0, y=0.0, z=0.0, rz=math.pi / 2)
    b = Pose(x=1.0, y=0.0, z=0.0, rz=0.0)
    c = compose(a, b)
    assert_pose_close(c, Pose(x=1.0, y=1.0, z=0.0, rz=math.pi / 2), 1e-12)


def test_compose_inverse_is_identity():
    p = Pose(x=0.12, y=-0.45, z=0.33, rz=2.5)
    assert_pose_close(compose(p, inverse(p)), IDENTITY, 1e-12)


def test_inverse_identity_and_translation():
    assert_pose_close(inverse(IDENTITY), IDENTITY, 0.0)
    assert_pose_close(inverse(Pose(x=1, y=2)), Pose(x=-1, y=-2), 0.0)


def test_rotation_round_trip():
    p = Pose(rz=math.pi / 2)
    assert_pose_close(compose(inverse(p), p), IDENTITY, 1e-12)


@given(poses(), poses(), poses())
@settings(max_examples=200, deadline=None)
def test_associativity(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.max(np.abs(pose_delta(left, right))) < 1e-10


@given(poses())
@settings(max_examples=200, deadline=None)
def test_double_inverse(p):
    assert np.max(np.abs(pose_delta(inverse(inverse(p)), p))) < 1e-10


@given(angles)
@settings(max_examples=300, deadline=None)
def test_wrap_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert abs(math.sin(w) - math.sin(a)) < 1e-12
    assert abs(math.cos(w) - math.cos(a)) < 1e-12


def test_workspace_validation():
    with pytest.raises(ValueError):
        WorkspaceSpec(x_range=(0.4, 0.1), y_range=(0.0, 0.1), rz_range=(0.0, 0.1))


def test_sample_point_workspace():
    ws = WorkspaceSpec(x_range=(0.2, 0.2), y_range=(0.3, 0.3), rz_range=(0.5, 0.5), z_con=0.01)
    p = sample_uniform(ws, rng_seed=7)
    assert (p.x, p.y, p.z, p.rz) == (0.2, 0.3, 0.01, 0.5)
    assert p.rx == 0.0 and p.ry == 0.0


def test_sample_deterministic():
    ws = WorkspaceSpec(x_range=(0.0, 0.35), y_range=(0.0, 0.35), rz_range=(-1.0, 1.0))
    assert sample_uniform(ws, 42) == sample_uniform(ws, 42)


def test_sample_mean_law_of_large_numbers():
    ws = WorkspaceSpec(x_range=(0.0, 0.35), y_range=(0.0, 0.35), rz_range=(-1.0, 1.0))
    xs = [sample_uniform(ws, seed).x for seed in range(10_000)]
    assert abs(np.mean(xs) - 0.175) < 0.01


def test_sample_never_leaves_bounds():
    ws = WorkspaceSpec(x_range=(0.1, 0.45), y_range=(0.1, 0.45), rz_range=(-2.0, 2.0), z_con=0.0)
    for seed in range(100_000):
        p = sample_uniform(ws, seed)
        assert ws.x_range[0] <= p.x <= ws.x_range[1]
        assert ws.y_range[0] <= p.y <= ws.y_range[1]
        assert ws.rz_range[0] <= p.rz <= ws.rz_range[1]
        assert p.z == ws.z_con
