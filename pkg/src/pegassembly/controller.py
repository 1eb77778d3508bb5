"""Discretized Cartesian parallel position/force compliance law.

One semi-implicit Euler step of M*dv + B*v = K*(X_d - X) + (F - F_d) per
controller tick (120 Hz nominal), returning the task-space velocity command.
The task and joint spaces coincide here (the velocity Jacobian is identity),
so the output feeds the world's velocity servo directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Wrench, pose_delta

CONTROL_DT = 1.0 / 120.0
POLICY_DT = 1.0 / 5.0
TICKS_PER_POLICY_STEP = 24  # 120 Hz controller under a 5 Hz command stream

DEFAULT_INERTIA = np.array([1.0, 1.0, 1.0, 0.01])


class NonFinite(RuntimeError):
    pass


@dataclass(frozen=True)
class GainSet:
    """Per-axis stiffness with derived inertia/damping.

    By default B is set for a damping ratio of 1 (critically damped); the
    constructor refuses anything below 0.7 as a stability guard.
    """

    K: np.ndarray
    M: np.ndarray = field(default_factory=lambda: DEFAULT_INERTIA.copy())
    B: np.ndarray | None = None

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        M = np.asarray(self.M, dtype=float)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", M)
        if K.shape != (4,) or M.shape != (4,):
            raise ValueError("K and M must be 4-vectors")
        if np.any(K <= 0) or np.any(M <= 0):
            raise ValueError("K and M must be strictly positive")
        if self.B is None:
            object.__setattr__(self, "B", 2.0 * np.sqrt(K * M))
        else:
            B = np.asarray(self.B, dtype=float)
            object.__setattr__(self, "B", B)
            if B.shape != (4,) or np.any(B <= 0):
                raise ValueError("B must be a positive 4-vector")
            zeta = B / (2.0 * np.sqrt(K * M))
            if np.any(zeta < 0.7 - 1e-12):
                raise ValueError(f"damping ratio {zeta.min():.3f} below the 0.7 stability guard")

    def damping_ratio(self) -> np.ndarray:
        return self.B / (2.0 * np.sqrt(self.K * self.M))


@dataclass(frozen=True)
class ControlCommand:
    """Desired pose, desired wrench, and stiffness for one controller segment."""

    X_d: Pose
    F_d: Wrench = Wrench()
    K: np.ndarray = field(default_factory=lambda: np.array([2000.0, 2000.0, 2000.0, 20.0]))

    def with_clamped_wrench(self, limit: Wrench) -> "ControlCommand":
        return ControlCommand(X_d=self.X_d, F_d=self.F_d.clamped(limit), K=self.K)


def admittance_step(
    cmd: ControlCommand,
    X: Pose,
    F: Wrench,
    v: np.ndarray,
    gains: GainSet,
    dt: float = CONTROL_DT,
) -> np.ndarray:
    """One compliance step; returns the new task-space velocity command.

    The caller owns v (the admittance velocity state) and should zero it at
    stage transitions.
    """
    e = pose_delta(cmd.X_d, X)
    f = F.as_array() - cmd.F_d.as_array()
    drive = gains.K * e + f
    v_new = (np.asarray(v, dtype=float) + (dt / gains.M) * drive) / (1.0 + dt * gains.B / gains.M)
    if not np.all(np.isfinite(v_new)):
        raise NonFinite("admittance velocity diverged")
    return v_new
