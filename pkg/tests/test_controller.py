import numpy as np
import pytest

from pegassembly.controller import (
    CONTROL_DT,
    POLICY_DT,
    TICKS_PER_POLICY_STEP,
    ControlCommand,
    GainSet,
    NonFinite,
    admittance_step,
)
from pegassembly.geometry import Pose, Wrench, pose_delta

K_DEFAULT = np.array([2000.0, 2000.0, 2000.0, 20.0])


def simulate(cmd, gains, x0=Pose(), F=Wrench(), steps=2000):
    """Admittance plus pure kinematic integration (x += v dt), no world."""
    x = x0
    v = np.zeros(4)
    trace = [x]
    for _ in range(steps):
        v = admittance_step(cmd, x, F, v, gains, CONTROL_DT)
        vec = x.as_task_vector() + v * CONTROL_DT
        x = Pose.from_task_vector(vec)
        trace.append(x)
    return x, v, trace


def test_equilibrium_zero_output():
    gains = GainSet(K=K_DEFAULT)
    cmd = ControlCommand(X_d=Pose(x=0.1), K=K_DEFAULT)
    v = admittance_step(cmd, Pose(x=0.1), Wrench(), np.zeros(4), gains)
    assert np.all(v == 0.0)


def test_steady_state_offset_equals_force_over_stiffness():
    gains = GainSet(K=K_DEFAULT)
    cmd = ControlCommand(X_d=Pose(), K=K_DEFAULT)
    F = Wrench(fx=4.0, fy=-2.0, fz=6.0, tz=0.05)
    x, v, _ = simulate(cmd, gains, F=F, steps=3000)
    offset = pose_delta(x, cmd.X_d)
    expected = F.as_array() / gains.K
    assert np.all(np.abs(offset - expected) <= 0.01 * np.abs(expected) + 1e-12)
    assert np.max(np.abs(v)) < 1e-6


def test_step_response_no_overshoot_critically_damped():
    gains = GainSet(K=K_DEFAULT)  # B defaults to critical damping
    target = Pose(x=0.05)
    cmd = ControlCommand(X_d=target, K=K_DEFAULT)
    _, _, trace = simulate(cmd, gains, x0=Pose(), steps=3000)
    xs = np.array([p.x for p in trace])
    assert xs.max() <= 0.05 * 1.01
    assert abs(xs[-1] - 0.05) < 1e-6


def test_step_response_tracks_oversampled_oracle():
    # the same linear ODE integrated at 10x rate is the reference trajectory
    K, M = 2000.0, 1.0
    B = 2.0 * np.sqrt(K * M)
    h = CONTROL_DT / 10
    x_ref, v_ref = 0.0, 0.0
    ref = [x_ref]
    for _ in range(3000 * 10):
        v_ref = (v_ref + (h / M) * (K * (0.05 - x_ref))) / (1.0 + h * B / M)
        x_ref += v_ref * h
        ref.append(x_ref)
    gains = GainSet(K=K_DEFAULT)
    _, _, trace = simulate(ControlCommand(X_d=Pose(x=0.05), K=K_DEFAULT), gains, steps=3000)
    ours = np.array([p.x for p in trace])
    oracle = np.array(ref)[:: 10][: len(ours)]
    # transients differ only by the 120 Hz vs 1.2 kHz discretization gap
    assert np.max(np.abs(ours - oracle)) < 2e-3
    assert max(ours.max(), oracle.max()) <= 0.05 * 1.01


def test_lyapunov_nonincreasing_contact_free():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        K = rng.uniform(100.0, 5000.0, 4)
        K[3] = rng.uniform(1.0, 50.0)
        gains = GainSet(K=K)
        x = Pose.from_task_vector(rng.uniform(-0.05, 0.05, 4))
        v = rng.uniform(-0.2, 0.2, 4)
        cmd = ControlCommand(X_d=Pose(), K=K)

        def lyap(x, v):
            e = pose_delta(cmd.X_d, x)
            return 0.5 * float(v @ (gains.M * v)) + 0.5 * float(e @ (gains.K * e))

        prev = lyap(x, v)
        for _ in range(40):
            v = admittance_step(cmd, x, Wrench(), v, gains)
            x = Pose.from_task_vector(x.as_task_vector() + v * CONTROL_DT)
            cur = lyap(x, v)
            assert cur <= prev + 1e-9
            prev = cur


def test_stiffness_homogeneity_exact():
    K = K_DEFAULT
    e = np.array([0.01, -0.02, 0.005, 0.1])
    assert np.all((2.0 * K) * (e / 2.0) == K * e)


def test_rate_contract():
    assert TICKS_PER_POLICY_STEP == 24
    assert POLICY_DT == pytest.approx(TICKS_PER_POLICY_STEP * CONTROL_DT)


def test_gain_guard_rejects_underdamped():
    with pytest.raises(ValueError):
        GainSet(K=K_DEFAULT, B=np.array([10.0, 10.0, 10.0, 0.1]))
    # damping ratio exactly 0.7 is allowed
    B = 0.7 * 2.0 * np.sqrt(K_DEFAULT * np.array([1.0, 1.0, 1.0, 0.01]))
    GainSet(K=K_DEFAULT, B=B)


def test_nonfinite_force_raises():
    gains = GainSet(K=K_DEFAULT)
    cmd = ControlCommand(X_d=Pose(), K=K_DEFAULT)
    with pytest.raises(NonFinite):
        admittance_step(cmd, Pose(), Wrench(fx=np.inf), np.zeros(4), gains)
