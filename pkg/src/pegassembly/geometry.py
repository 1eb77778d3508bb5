"""Rigid-pose algebra on the planar-plus-insertion task space.

Poses carry six fields for readability, but only x, y, z and rz are
dynamic: the peg stays vertical, so rx = ry = 0 everywhere. Composition
is SE(2) on (x, y, rz) with additive z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = a % TWO_PI
    if w > math.pi:
        w -= TWO_PI
    return w


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def as_task_vector(self) -> np.ndarray:
        """The 4 active DOFs (x, y, z, rz) as an array."""
        return np.array([self.x, self.y, self.z, self.rz])

    @staticmethod
    def from_task_vector(v) -> "Pose":
        return Pose(x=float(v[0]), y=float(v[1]), z=float(v[2]), rz=wrap_angle(float(v[3])))

    def is_finite(self) -> bool:
        return all(math.isfinite(f) for f in (self.x, self.y, self.z, self.rx, self.ry, self.rz))


IDENTITY = Pose()


def compose(a: Pose, b: Pose) -> Pose:
    """Group composition a * b: rotate b's translation by a.rz, add z."""
    c, s = math.cos(a.rz), math.sin(a.rz)
    return Pose(
        x=a.x + c * b.x - s * b.y,
        y=a.y + s * b.x + c * b.y,
        z=a.z + b.z,
        rz=wrap_angle(a.rz + b.rz),
    )


def inverse(p: Pose) -> Pose:
    """Group inverse: compose(p, inverse(p)) == identity."""
    c, s = math.cos(p.rz), math.sin(p.rz)
    return Pose(
        x=-(c * p.x + s * p.y),
        y=-(-s * p.x + c * p.y),
        z=-p.z,
        rz=wrap_angle(-p.rz),
    )


def pose_delta(a: Pose, b: Pose) -> np.ndarray:
    """World-frame task-space difference a - b, with the yaw gap wrapped."""
    return np.array([a.x - b.x, a.y - b.y, a.z - b.z, wrap_angle(a.rz - b.rz)])


@dataclass(frozen=True)
class Wrench:
    """Force (N) on x/y/z plus torque (N*m) about z."""

    fx: float = 0.0
    fy: float = 0.0
    fz: float = 0.0
    tz: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz, self.tz])

    @staticmethod
    def from_array(v) -> "Wrench":
        return Wrench(float(v[0]), float(v[1]), float(v[2]), float(v[3]))

    def is_finite(self) -> bool:
        return all(math.isfinite(f) for f in (self.fx, self.fy, self.fz, self.tz))

    def clamped(self, limit: "Wrench") -> "Wrench":
        """Componentwise clamp to +/-|limit| (safety limit)."""
        return Wrench(
            fx=min(max(self.fx, -abs(limit.fx)), abs(limit.fx)),
            fy=min(max(self.fy, -abs(limit.fy)), abs(limit.fy)),
            fz=min(max(self.fz, -abs(limit.fz)), abs(limit.fz)),
            tz=min(max(self.tz, -abs(limit.tz)), abs(limit.tz)),
        )


ZERO_WRENCH = Wrench()


@dataclass(frozen=True)
class WorkspaceSpec:
    """Unconstrained region for the board: x/y/rz ranges plus the constrained DOFs."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    rz_range: tuple[float, float]
    z_con: float = 0.0
    rx_con: float = 0.0
    ry_con: float = 0.0

    def __post_init__(self):
        for name, (lo, hi) in (("x_range", self.x_range), ("y_range", self.y_range), ("rz_range", self.rz_range)):
            if hi < lo:
                raise ValueError(f"{name} inverted: [{lo}, {hi}]")

    def contains(self, p: Pose, margin: float = 0.0) -> bool:
        return (
            self.x_range[0] - margin <= p.x <= self.x_range[1] + margin
            and self.y_range[0] - margin <= p.y <= self.y_range[1] + margin
            and self.rz_range[0] - 1e-9 <= p.rz <= self.rz_range[1] + 1e-9
        )

    def contains_xy(self, x: float, y: float) -> bool:
        return self.x_range[0] <= x <= self.x_range[1] and self.y_range[0] <= y <= self.y_range[1]


def sample_uniform(ws: WorkspaceSpec, rng_seed: int) -> Pose:
    """Uniform pose over the workspace ranges; z and roll/pitch pinned to the constraint."""
    rng = np.random.default_rng(rng_seed)
    x = rng.uniform(ws.x_range[0], ws.x_range[1]) if ws.x_range[1] > ws.x_range[0] else ws.x_range[0]
    y = rng.uniform(ws.y_range[0], ws.y_range[1]) if ws.y_range[1] > ws.y_range[0] else ws.y_range[0]
    rz = rng.uniform(ws.rz_range[0], ws.rz_range[1]) if ws.rz_range[1] > ws.rz_range[0] else ws.rz_range[0]
    return Pose(x=x, y=y, z=ws.z_con, rx=ws.rx_con, ry=ws.ry_con, rz=rz)
