"""Deterministic task-space physics for the peg, the movable board, and contact.

The end-effector is a velocity-tracked body: an inner servo pulls its
velocity toward the commanded value at every physics substep while contact
forces act on it directly. Contact between the peg tip and the board uses a
penalty model (normal stiffness k_n, damping c_n, Coulomb friction), and the
board itself slides quasi-statically on the table once the tangential load
from the peg beats static friction.

All of this is pure float arithmetic on value types, so identical inputs
give bit-identical trajectories.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import IDENTITY, Pose, WorkspaceSpec, Wrench, compose, sample_uniform

GRAVITY = 9.81

# Inner velocity-servo constants: stiff enough that the commanded velocity is
# tracked closely in free flight, soft enough that penalty contact at
# k_n = 1e5 N/m stays stable under the 120 Hz compliance loop.
SERVO_GAIN = (300.0, 300.0, 300.0, 3.0)
EE_INERTIA = (1.0, 1.0, 1.0, 0.01)

N_SUBSTEPS = 4

# Velocity deadband for smooth Coulomb friction (m/s). Keeps the contact
# wrench Lipschitz in velocity instead of flipping sign instantaneously.
FRICTION_EPS_V = 0.05


class NonFinite(RuntimeError):
    """State diverged; signals an unstable gain configuration."""


class ContactMode(enum.Enum):
    FREE = "free"
    SURFACE = "surface"
    WALL = "wall"
    BOTTOM = "bottom"


_MODE_RANK = {ContactMode.FREE: 0, ContactMode.SURFACE: 1, ContactMode.WALL: 2, ContactMode.BOTTOM: 3}


@dataclass(frozen=True)
class TaskGeometry:
    """Peg/hole/board dimensions plus the EE-to-peg-tip offset."""

    peg_radius: float = 0.005
    hole_radius: float = 0.0055
    hole_depth: float = 0.030
    hole_center_in_board: tuple[float, float] = (0.020, 0.010)
    board_half_extents: tuple[float, float] = (0.060, 0.040)
    board_top: float = 0.040
    feature_points: tuple[tuple[float, float], tuple[float, float]] = ((-0.040, 0.025), (0.040, 0.025))
    tcp_offset: Pose = field(default_factory=lambda: Pose(z=-0.100))

    def __post_init__(self):
        if self.hole_radius <= self.peg_radius:
            raise ValueError("hole must be larger than peg (positive clearance)")
        if self.hole_depth <= 0:
            raise ValueError("hole depth must be positive")
        if self.feature_points[0] == self.feature_points[1]:
            raise ValueError("feature points must be distinct")

    @property
    def clearance(self) -> float:
        return self.hole_radius - self.peg_radius

    def tip_pose(self, ee_pose: Pose) -> Pose:
        return compose(ee_pose, self.tcp_offset)

    def hole_center_world(self, board_pose: Pose) -> tuple[float, float]:
        h = compose(board_pose, Pose(x=self.hole_center_in_board[0], y=self.hole_center_in_board[1]))
        return (h.x, h.y)

    def feature_world(self, board_pose: Pose, index: int) -> tuple[float, float]:
        fx, fy = self.feature_points[index]
        f = compose(board_pose, Pose(x=fx, y=fy))
        return (f.x, f.y)

    def over_board(self, board_pose: Pose, x: float, y: float, margin: float = 0.0) -> bool:
        """Is the world point (x, y) over the board footprint?"""
        c, s = math.cos(board_pose.rz), math.sin(board_pose.rz)
        dx, dy = x - board_pose.x, y - board_pose.y
        bx = c * dx + s * dy
        by = -s * dx + c * dy
        return abs(bx) <= self.board_half_extents[0] + margin and abs(by) <= self.board_half_extents[1] + margin


@dataclass(frozen=True)
class ContactParams:
    k_n: float = 1e5            # N/m normal stiffness
    c_n: float = 250.0          # N*s/m normal damping
    mu_peg: float = 0.2         # peg-board friction
    mu_static: float = 0.4      # board-table static friction
    mu_kinetic: float = 0.3     # board-table kinetic friction
    board_mass: float = 0.5     # kg
    slide_mobility: float = 0.002  # (m/s)/N of excess tangential load
    # Rim support fades over this lateral band at the hole edge (finite edge
    # break on the peg, not a chamfer: there is no centering force from it).
    edge_band: float = 1e-3
    # Wall contact ramps in smoothly over this depth range below the surface;
    # rim support in the edge band hands over to the wall across the same ramp.
    wall_onset_depth: float = 5e-4
    wall_onset_ramp: float = 2e-3

    def __post_init__(self):
        for name in ("k_n", "c_n", "mu_peg", "mu_static", "mu_kinetic", "board_mass", "slide_mobility"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_static < self.mu_kinetic:
            raise ValueError("mu_static must be >= mu_kinetic")


@dataclass(frozen=True)
class WorldState:
    ee_pose: Pose
    ee_vel: np.ndarray                      # (4,) m/s and rad/s
    board_pose: Pose
    contact_wrench: Wrench = Wrench()
    contact_mode: ContactMode = ContactMode.FREE
    t: float = 0.0
    # Diagnostics for the board friction budget at the last substep.
    board_load_tangential: float = 0.0
    board_load_normal: float = 0.0

    def is_finite(self) -> bool:
        return (
            self.ee_pose.is_finite()
            and bool(np.all(np.isfinite(self.ee_vel)))
            and self.board_pose.is_finite()
            and self.contact_wrench.is_finite()
        )


def _smoothstep(u: float) -> float:
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * (3.0 - 2.0 * u)


def _support_fraction(rho: float, clearance: float, band: float) -> float:
    """Rim support: 0 with the peg fully over the hole, 1 past the edge band."""
    return _smoothstep((rho - clearance) / band)


def _surface_weight(rho: float, depth: float, params: ContactParams, clearance: float) -> float:
    """Fraction of the full penalty support carried by the surface under the tip.

    Solid board (beyond two edge bands from the hole) always carries full
    support; inside the edge band, support fades with depth as the peg slides
    off the rim and the hole wall takes over.
    """
    frac = _support_fraction(rho, clearance, params.edge_band)
    solid = _smoothstep((rho - clearance - params.edge_band) / params.edge_band)
    rim = max(frac - solid, 0.0)
    gate = _smoothstep((depth - params.wall_onset_depth) / params.wall_onset_ramp)
    return solid + rim * (1.0 - gate)


def _wall_gate(rho: float, depth: float, params: ContactParams, clearance: float) -> float:
    """Wall contact engages with depth and releases once the peg stands on
    solid board past the edge band (no wall to touch from out there)."""
    depth_gate = _smoothstep((depth - params.wall_onset_depth) / params.wall_onset_ramp)
    solid = _smoothstep((rho - clearance - params.edge_band) / params.edge_band)
    return depth_gate * (1.0 - solid)


def classify_contact(
    ee_pose: Pose,
    board_pose: Pose,
    geom: TaskGeometry,
    params: ContactParams = ContactParams(),
) -> tuple[ContactMode, Wrench]:
    """Static (elastic-only) contact wrench on the EE for the given poses.

    Velocity-dependent damping and friction are added by `World.step`; this
    classification covers the penalty springs alone.
    """
    tip = geom.tip_pose(ee_pose)
    z_top = geom.board_top
    z_bot = z_top - geom.hole_depth
    hx, hy = geom.hole_center_world(board_pose)
    rho = math.hypot(tip.x - hx, tip.y - hy)
    clearance = geom.clearance
    over_board = geom.over_board(board_pose, tip.x, tip.y, margin=geom.peg_radius)

    fx = fy = fz = 0.0
    mode = ContactMode.FREE

    # Table acts as a hard floor everywhere off the board.
    if tip.z <= 0.0 and not over_board:
        fz += params.k_n * (0.0 - tip.z)
        mode = ContactMode.SURFACE

    if over_board and tip.z <= z_top:
        depth = z_top - tip.z
        weight = _surface_weight(rho, depth, params, clearance)
        if weight > 0.0 and depth > 0.0:
            fz += params.k_n * depth * weight
            mode = ContactMode.SURFACE
        wall_pen = rho - clearance
        gate = _wall_gate(rho, depth, params, clearance)
        if wall_pen > 0.0 and gate > 0.0 and tip.z >= z_bot - geom.peg_radius:
            f_lat = params.k_n * wall_pen * gate
            ux, uy = (hx - tip.x) / rho, (hy - tip.y) / rho
            fx += f_lat * ux
            fy += f_lat * uy
            mode = ContactMode.WALL
        if tip.z <= z_bot:
            fz += params.k_n * (z_bot - tip.z)
            mode = ContactMode.BOTTOM

    if mode is ContactMode.FREE:
        return mode, Wrench()
    return mode, Wrench(fx=fx, fy=fy, fz=fz, tz=0.0)


def _full_contact(
    ee_pose: Pose,
    ee_vel: np.ndarray,
    board_pose: Pose,
    geom: TaskGeometry,
    params: ContactParams,
) -> tuple[ContactMode, Wrench, float, float]:
    """Elastic wrench plus damping and friction; also the board load split.

    Returns (mode, wrench_on_ee, tangential_load_on_board, normal_load_on_board).
    """
    tip = geom.tip_pose(ee_pose)
    z_top = geom.board_top
    z_bot = z_top - geom.hole_depth
    hx, hy = geom.hole_center_world(board_pose)
    rho = math.hypot(tip.x - hx, tip.y - hy)
    clearance = geom.clearance
    over_board = geom.over_board(board_pose, tip.x, tip.y, margin=geom.peg_radius)
    vx, vy, vz = float(ee_vel[0]), float(ee_vel[1]), float(ee_vel[2])

    fx = fy = fz = 0.0
    board_fx = board_fy = 0.0   # tangential load transmitted into the board
    board_down = 0.0            # downward press load on the board
    mode = ContactMode.FREE

    def sat(v: float) -> float:
        return max(-1.0, min(1.0, v / FRICTION_EPS_V))

    if tip.z <= 0.0 and not over_board:
        n = max(0.0, params.k_n * (0.0 - tip.z) - params.c_n * vz)
        fz += n
        fx += -params.mu_peg * n * sat(vx)
        fy += -params.mu_peg * n * sat(vy)
        mode = ContactMode.SURFACE

    if over_board and tip.z <= z_top:
        depth = z_top - tip.z
        weight = _surface_weight(rho, depth, params, clearance)
        if weight > 0.0 and depth > 0.0:
            n = max(0.0, (params.k_n * depth - params.c_n * vz)) * weight
            fz += n
            ffx = -params.mu_peg * n * sat(vx)
            ffy = -params.mu_peg * n * sat(vy)
            fx += ffx
            fy += ffy
            board_down += n
            board_fx += -ffx
            board_fy += -ffy
            mode = ContactMode.SURFACE

        wall_pen = rho - clearance
        gate = _wall_gate(rho, depth, params, clearance)
        if wall_pen > 0.0 and gate > 0.0 and tip.z >= z_bot - geom.peg_radius:
            ux, uy = (hx - tip.x) / rho, (hy - tip.y) / rho
            v_rad_out = -(vx * ux + vy * uy)
            n = max(0.0, params.k_n * wall_pen + params.c_n * v_rad_out) * gate
            fx += n * ux
            fy += n * uy
            fz += -params.mu_peg * n * sat(vz)
            board_fx += -n * ux
            board_fy += -n * uy
            mode = ContactMode.WALL

        if tip.z <= z_bot:
            n = max(0.0, params.k_n * (z_bot - tip.z) - params.c_n * vz)
            fz += n
            ffx = -params.mu_peg * n * sat(vx)
            ffy = -params.mu_peg * n * sat(vy)
            fx += ffx
            fy += ffy
            board_down += n
            board_fx += -ffx
            board_fy += -ffy
            mode = ContactMode.BOTTOM

    tangential = math.hypot(board_fx, board_fy)
    if mode is ContactMode.FREE:
        return mode, Wrench(), 0.0, 0.0
    return mode, Wrench(fx=fx, fy=fy, fz=fz, tz=0.0), tangential, board_down


@dataclass(frozen=True)
class World:
    """Owns the task constants; `step` advances a WorldState."""

    geom: TaskGeometry = TaskGeometry()
    params: ContactParams = ContactParams()

    def step(self, state: WorldState, commanded_vel, dt: float) -> WorldState:
        """Advance by dt with the commanded task-space velocity held constant.

        Four semi-implicit substeps: the servo term is implicit in velocity,
        contact forces explicit at the substep state. The reported wrench is
        the substep average (what a force sensor integrates over the tick)
        and the mode is the deepest contact seen during the tick.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        cmd = np.asarray(commanded_vel, dtype=float)
        if not np.all(np.isfinite(cmd)):
            raise NonFinite("commanded velocity is not finite")

        h = dt / N_SUBSTEPS
        ee = state.ee_pose
        vel = state.ee_vel.astype(float).copy()
        board = state.board_pose
        wrench_sum = np.zeros(4)
        tick_mode = ContactMode.FREE
        tangential = normal = 0.0

        for _ in range(N_SUBSTEPS):
            mode, wrench, tangential, normal = _full_contact(ee, vel, board, self.geom, self.params)
            f = wrench.as_array()
            wrench_sum += f
            if _MODE_RANK[mode] > _MODE_RANK[tick_mode]:
                tick_mode = mode
            for i in range(4):
                d, m = SERVO_GAIN[i], EE_INERTIA[i]
                vel[i] = (vel[i] + (h / m) * (d * cmd[i] + f[i])) / (1.0 + h * d / m)
            ee = Pose(
                x=ee.x + h * vel[0],
                y=ee.y + h * vel[1],
                z=ee.z + h * vel[2],
                rz=ee.rz + h * vel[3],
            )

            # Quasi-static board slide once tangential load beats static friction.
            hold = self.params.mu_static * (self.params.board_mass * GRAVITY + normal)
            if tangential > hold:
                excess = tangential - self.params.mu_kinetic * (self.params.board_mass * GRAVITY + normal)
                # direction of the net tangential load on the board
                bfx = -(wrench.fx)
                bfy = -(wrench.fy)
                mag = math.hypot(bfx, bfy)
                if mag > 0.0:
                    speed = self.params.slide_mobility * excess
                    board = replace(
                        board,
                        x=board.x + h * speed * bfx / mag,
                        y=board.y + h * speed * bfy / mag,
                    )

        out = WorldState(
            ee_pose=ee,
            ee_vel=vel,
            board_pose=board,
            contact_wrench=Wrench.from_array(wrench_sum / N_SUBSTEPS),
            contact_mode=tick_mode,
            t=state.t + dt,
            board_load_tangential=tangential,
            board_load_normal=normal,
        )
        if not out.is_finite():
            raise NonFinite("world state diverged")
        return out


def place_board(
    ws: WorkspaceSpec,
    seed: int,
    home: Pose = Pose(x=0.02, y=0.02, z=0.25),
    board_pose: Pose | None = None,
) -> WorldState:
    """Fresh episode state: board sampled in the workspace, EE parked at home."""
    board = board_pose if board_pose is not None else sample_uniform(ws, seed)
    return WorldState(
        ee_pose=home,
        ee_vel=np.zeros(4),
        board_pose=board,
        contact_wrench=Wrench(),
        contact_mode=ContactMode.FREE,
        t=0.0,
    )
