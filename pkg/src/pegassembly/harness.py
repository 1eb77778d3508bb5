"""Experiment runner: the four pipeline stages plus baseline comparisons.

Baselines are simplified functional analogs of the systems they stand for
(documented in the report header), not reimplementations: open-loop pose
following (b1), a taught-pose spiral search (b2), pure RL without a base
trajectory (b3), a force-only residual (b4), and a raw-image residual (b5).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    auto_label,
    calibrate,
    collect_samples,
    default_rig,
    CollectionRig,
    fit_residual_on_labels,
    label_quality_report,
    oracle_truth_map,
    simulate_manual_labels,
    write_label_files,
    write_manifest,
)
from .config import ExperimentConfig, config_hash
from .controller import ControlCommand, GainSet
from .geometry import Pose, compose, pose_delta
from .learner.sac import Action, PolicyParams, act, combine, load_policy, save_policy
from .learner.training import ClassroomConfig, run_training, write_learning_log
from .pipeline import EpisodeContext, ObservationBuilder, Scene, build_scene, run_policy_segment
from .planner import Fault, Stage, skill_step
from .vision import DetectorNoise, detect, estimate_board_pose
from .world import WorldState, place_board


class ConfigError(ValueError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


BASELINE_NOTES = {
    "ours": "full pipeline: detection, coarse plan, attention-guided residual",
    "b1": "one-shot pose estimate, stiff open-loop descent, no residual",
    "b2": "taught nominal pose plus outward spiral search gated on contact",
    "b3": "residual policy with the base trajectory held at the bottleneck",
    "b4": "residual policy observing proprioception and wrench only",
    "b5": "residual policy observing the raw wrist image",
}

OBS_MODE = {"ours": "crop", "b3": "crop", "b4": "none", "b5": "full"}


@dataclass
class EpisodeRecord:
    seed: int
    board_pose: list
    stage_trace: list
    steps: int
    success: bool
    max_contact_force: float
    board_displacement: float
    wall_time: float
    fault: str = ""
    true_insertion: bool = False

    def to_json(self, cfg_hash: str) -> str:
        d = dict(self.__dict__)
        d["config_hash"] = cfg_hash
        return json.dumps(d, sort_keys=True)


class SpiralSearch:
    """Archimedean outward spiral around a taught goal, advancing on contact.

    The z command trails the current height by a fixed press offset, which
    gives a roughly constant downward force on the surface and keeps the peg
    descending once it drops into the hole.
    """

    def __init__(self, goal: Pose, pitch: float, feed: float, max_radius: float, K: np.ndarray,
                 press_offset: float = 0.004, policy_dt: float = 0.2):
        self.goal = goal
        self.pitch = pitch
        self.feed = feed
        self.max_radius = max_radius
        self.K = K
        self.press_offset = press_offset
        self.policy_dt = policy_dt
        self.phi = 0.0

    def radius(self) -> float:
        return min(self.pitch * self.phi / (2 * math.pi), self.max_radius)

    def command(self, state: WorldState) -> ControlCommand:
        # Advance the spiral only while pressing on something.
        if state.contact_wrench.fz > 1.0:
            r = max(self.radius(), self.pitch / (2 * math.pi))
            self.phi += self.feed * self.policy_dt / r
        r = self.radius()
        x_d = Pose(
            x=self.goal.x + r * math.cos(self.phi),
            y=self.goal.y + r * math.sin(self.phi),
            z=max(state.ee_pose.z - self.press_offset, self.goal.z),
            rz=self.goal.rz,
        )
        return ControlCommand(X_d=x_d, K=self.K)


def run_baseline_policy(baseline: str, scene: Scene, ctx: EpisodeContext, params: PolicyParams | None,
                        rng: np.random.Generator):
    """Per-step fine-manipulation command provider for one episode.

    Returns (fine_command_fn(state, t, base_cmd) -> ControlCommand,
    uses_residual flag). The skill graph supplies base_cmd; analogs may
    replace it outright.
    """
    if baseline not in BASELINE_NOTES:
        raise ConfigError(f"unknown baseline {baseline!r}")
    skill = scene.skill

    if baseline == "b1":
        def stiff_descent(state, t, base_cmd):
            return ControlCommand(X_d=base_cmd.X_d, K=ctx.K_cf)
        return stiff_descent, False

    if baseline == "b2":
        spiral_holder = {}

        def spiral_cmd(state, t, base_cmd):
            if "s" not in spiral_holder:
                plan = ctx.plan
                spiral_holder["s"] = SpiralSearch(
                    goal=plan.goal,
                    pitch=scene.cfg.b2.spiral_pitch,
                    feed=scene.cfg.b2.spiral_feed,
                    max_radius=float(plan.W[0]),
                    K=ctx.K_cf,
                )
            return spiral_holder["s"].command(state)
        return spiral_cmd, False

    if baseline == "b3":
        def hold_bottleneck(state, t, base_cmd):
            return ControlCommand(X_d=ctx.plan.bottleneck, K=ctx.plan.K_cr)
        return hold_bottleneck, True

    def planned(state, t, base_cmd):
        return base_cmd
    return planned, baseline in ("ours", "b4", "b5")


def run_episode(
    scene: Scene,
    baseline: str,
    params: PolicyParams | None,
    episode_seed: int,
    noise: DetectorNoise | None = None,
) -> EpisodeRecord:
    """One full skill-graph episode in the semi-structured workspace."""
    t_wall = time.time()
    cfg = scene.cfg
    rig = scene.rig if noise is None else type(scene.rig)(
        eth_cam=scene.rig.eth_cam,
        eih_cam=scene.rig.eih_cam,
        noise=noise,
        calib=scene.rig.calib,
        geom=scene.rig.geom,
        workspace=scene.rig.workspace,
    )
    state = place_board(scene.workspace, seed=episode_seed, home=cfg.home_pose())
    board0 = state.board_pose
    rng = np.random.default_rng([episode_seed, 0xE9])

    ctx = EpisodeContext(
        rig=rig,
        oec=scene.oec,
        workspace=scene.workspace,
        E_r=cfg.e_r0(),
        K_cf=cfg.k_cf(),
        T_cf=cfg.skill.t_cf,
        T_cr=cfg.skill.t_cr,
        seed=episode_seed,
    )
    if baseline == "b2":
        # Direct teaching instead of detection: the taught pose is the true
        # board pose blurred by a teaching error (the board moved since).
        teach_err = rng.normal(0.0, cfg.b2.teach_std, size=2)
        ctx.estimate_override = Pose(
            x=board0.x + teach_err[0], y=board0.y + teach_err[1], z=board0.z, rz=board0.rz
        )

    builder = ObservationBuilder(
        rig,
        mode=OBS_MODE.get(baseline, "none"),
        attn_scale=cfg.learner.attn_scale,
        attn_px=cfg.learner.attn_px,
        history_len=cfg.learner.history_len,
    )
    builder.reset(episode_seed)
    f_max_arr = scene.skill.F_max.as_array()

    fine_cmd_fn, uses_residual = run_baseline_policy(baseline, scene, ctx, params, rng)
    if uses_residual and params is None:
        raise MissingCheckpoint(f"baseline {baseline!r} needs a trained policy checkpoint")

    stage = Stage.GLOBAL_PERCEIVE
    stage_trace = [stage.name]
    t_stage = 0
    fine_steps = 0
    max_force = 0.0
    v_adm = np.zeros(4)
    fault = ""
    success = False

    while True:
        try:
            next_stage, cmd, residual_on = skill_step(scene.skill, stage, state, ctx, t_stage)
        except Fault as f:
            fault = f"{f.stage.name}:{f.reason}"
            break
        if stage is Stage.FINE_MANIP:
            cmd = fine_cmd_fn(state, t_stage, cmd)
            if residual_on and uses_residual:
                obs = builder.build(state, ctx.plan.goal, ctx.plan.W, f_max_arr)
                action = act(obs, params, mode="deterministic")
                cmd = combine(cmd, action, scene.skill.F_max)
            fine_steps += 1
        if next_stage is Stage.DONE:
            success = True
            stage_trace.append(Stage.DONE.name)
            break
        gains = GainSet(K=cmd.K)
        state, v_adm, seg_force = run_policy_segment(scene.world, state, cmd, gains, v_adm)
        max_force = max(max_force, seg_force)
        if next_stage is not stage:
            stage = next_stage
            stage_trace.append(stage.name)
            t_stage = 0
            v_adm = np.zeros(4)  # fresh admittance state at stage transitions
        else:
            t_stage += 1

    # Ground-truth insertion flag for diagnostics (not the success signal).
    geom = scene.world.geom
    tip = geom.tip_pose(state.ee_pose)
    hx, hy = geom.hole_center_world(state.board_pose)
    true_insertion = (
        math.hypot(tip.x - hx, tip.y - hy) < geom.clearance + 1e-4
        and tip.z < geom.board_top - 0.8 * geom.hole_depth
    )
    steps = fine_steps if success else scene.skill.timeout_steps[Stage.FINE_MANIP]
    return EpisodeRecord(
        seed=episode_seed,
        board_pose=[board0.x, board0.y, board0.z, board0.rz],
        stage_trace=stage_trace,
        steps=steps,
        success=success,
        max_contact_force=max_force,
        board_displacement=float(
            math.hypot(state.board_pose.x - board0.x, state.board_pose.y - board0.y)
        ),
        wall_time=time.time() - t_wall,
        fault=fault,
        true_insertion=true_insertion,
    )


# ---------------------------------------------------------------------------
# Scenarios


def _summary_row(cfg_hash: str, scenario: str, baseline: str, metric: str, value) -> dict:
    return {
        "config_hash": cfg_hash,
        "scenario": scenario,
        "baseline": baseline,
        "metric": metric,
        "value": value,
    }


def run_scenario(cfg: ExperimentConfig):
    """Execute the configured scenario; returns (summary_rows, episode_records)."""
    if cfg.trials < 0:
        raise ConfigError("trials must be non-negative")
    h = config_hash(cfg)
    if cfg.scenario == "calibrate":
        return _scenario_calibrate(cfg, h)
    if cfg.scenario == "detect-eval":
        return _scenario_detect_eval(cfg, h)
    if cfg.scenario == "train":
        return _scenario_train(cfg, h)
    if cfg.scenario == "eval":
        return _scenario_eval(cfg, h)
    raise ConfigError(f"unknown scenario {cfg.scenario!r}")


def _scenario_calibrate(cfg: ExperimentConfig, h: str):
    ws = cfg.workspace_spec()
    geom = cfg.task_geometry()
    rig = default_rig(ws, geom)
    rig = CollectionRig(
        world=rig.world,
        eth_cam=cfg.eth_camera(),
        eih_cam=cfg.eih_camera(),
        home=cfg.home_pose(),
        offset_xy=cfg.calib.offset_xy,
        offset_z=cfg.calib.offset_z,
    )
    sample_set = collect_samples(ws, geom, cfg.calib.m, cfg.calib.n, cfg.seed, rig=rig)
    manual = simulate_manual_labels(sample_set, cfg.calib.manual_per_camera, cfg.calib.manual_sigma_px, cfg.seed)
    calib = calibrate(sample_set, manual)
    auto = auto_label(sample_set, manual, calib)
    labels = manual + auto
    report = label_quality_report(labels, oracle_truth_map(sample_set), sample_set)
    eth_all, eih_all = fit_residual_on_labels(sample_set, labels, calib)

    os.makedirs(cfg.out, exist_ok=True)
    write_label_files(labels, os.path.join(cfg.out, "labels"))
    write_manifest(sample_set, os.path.join(cfg.out, "manifest.csv"))

    n_images = len(sample_set.eth_records)
    manual_fraction = cfg.calib.manual_per_camera / n_images
    rows = [
        _summary_row(h, "calibrate", "-", "images_per_camera", n_images),
        _summary_row(h, "calibrate", "-", "manual_per_camera", cfg.calib.manual_per_camera),
        _summary_row(h, "calibrate", "-", "manual_fraction", round(manual_fraction, 6)),
        _summary_row(h, "calibrate", "-", "collisions_avoided", sample_set.collisions_avoided),
        _summary_row(h, "calibrate", "-", "eth_fit_std_px", _rms(calib.std_fwd)),
        _summary_row(h, "calibrate", "-", "eth_inv_fit_std_m", _rms(calib.std_inv)),
        _summary_row(h, "calibrate", "-", "jac_fit_std_px", _rms(calib.std_jac)),
        _summary_row(h, "calibrate", "-", "all_label_fit_std_eth_px", round(eth_all, 6)),
        _summary_row(h, "calibrate", "-", "all_label_fit_std_eih_px", round(eih_all, 6)),
    ]
    for row in report:
        prefix = f"{row.camera}_{row.source.value}"
        rows.append(_summary_row(h, "calibrate", "-", f"{prefix}_center_std_px", round(row.center_std_px, 6)))
        rows.append(_summary_row(h, "calibrate", "-", f"{prefix}_center_std_m", round(row.center_std_m, 8)))
    return rows, []


def _rms(v) -> float:
    return round(float(np.sqrt(np.mean(np.square(np.asarray(v))))), 6)


def _scenario_detect_eval(cfg: ExperimentConfig, h: str):
    from .calibration import CalibrationModel

    scene = build_scene(cfg)
    sigmas = [0.0, 0.5, 1.0, 2.0]
    trials = max(cfg.trials, 1)
    rows = []
    for sigma in sigmas:
        noise = cfg.detector_noise(sigma_override=sigma)
        errs = []
        for k in range(trials):
            state = place_board(scene.workspace, seed=cfg.seed * 10_000 + k, home=cfg.home_pose())
            dets = detect(state, scene.rig.eth_cam, noise, seed=cfg.seed * 77_000 + k, geom=scene.world.geom)
            try:
                est = estimate_board_pose(dets, scene.rig.calib, scene.workspace)
            except Exception:
                continue
            d = pose_delta(est, state.board_pose)
            errs.append(math.hypot(d[0], d[1]))
        rmse = float(np.sqrt(np.mean(np.square(errs)))) if errs else float("nan")
        rows.append(_summary_row(h, "detect-eval", "-", f"pose_rmse_m_sigma_{sigma:g}", round(rmse, 8)))
        rows.append(_summary_row(h, "detect-eval", "-", f"detected_frac_sigma_{sigma:g}", round(len(errs) / trials, 6)))
    return rows, []


def _scenario_train(cfg: ExperimentConfig, h: str):
    if cfg.baseline not in ("ours", "b3", "b4", "b5"):
        raise ConfigError(f"baseline {cfg.baseline!r} is not trainable")
    scene = build_scene(cfg)
    ccfg = ClassroomConfig.from_experiment(cfg, scene, obs_mode=OBS_MODE[cfg.baseline])
    if cfg.baseline == "b3":
        ccfg.zero_base = True
    t0 = time.time()
    params, log = run_training(ccfg, episodes=cfg.episodes, seed=cfg.seed)
    wall = time.time() - t0
    os.makedirs(cfg.out, exist_ok=True)
    ckpt = cfg.checkpoint or os.path.join(cfg.out, f"policy_{cfg.baseline}_seed{cfg.seed}.ckpt")
    save_policy(ckpt, params, h)
    write_learning_log(log, os.path.join(cfg.out, f"learning_curve_{cfg.baseline}_seed{cfg.seed}.csv"))

    final = log[-1] if log else {}
    # Wall time stays out of the summary so reruns stay byte-identical;
    # it lives in the learning-curve log.
    del wall
    rows = [
        _summary_row(h, "train", cfg.baseline, "episodes", len(log)),
        _summary_row(h, "train", cfg.baseline, "final_windowed_success", round(final.get("windowed_success", 0.0), 6)),
        _summary_row(h, "train", cfg.baseline, "final_er_mm", round(final.get("er_mm", 0.0), 6)),
        _summary_row(h, "train", cfg.baseline, "checkpoint", ckpt),
    ]
    return rows, []


def _scenario_eval(cfg: ExperimentConfig, h: str):
    scene = build_scene(cfg)
    params = None
    if cfg.baseline in ("ours", "b3", "b4", "b5"):
        if not cfg.checkpoint or not os.path.exists(cfg.checkpoint):
            raise MissingCheckpoint(f"eval of {cfg.baseline!r} requires --checkpoint")
        params, _ = load_policy(cfg.checkpoint)
    records = []
    for k in range(cfg.trials):
        records.append(run_episode(scene, cfg.baseline, params, episode_seed=cfg.seed * 1_000 + k))
    rows = summarize_eval(records, cfg.baseline, h)
    return rows, records


def summarize_eval(records: list[EpisodeRecord], baseline: str, h: str):
    n = len(records)
    if n == 0:
        return [_summary_row(h, "eval", baseline, "degenerate_empty", 1)]
    succ = [r for r in records if r.success]
    steps_all = np.array([r.steps for r in records], dtype=float)
    rows = [
        _summary_row(h, "eval", baseline, "trials", n),
        _summary_row(h, "eval", baseline, "success_rate", round(len(succ) / n, 6)),
        _summary_row(h, "eval", baseline, "mean_steps", round(float(steps_all.mean()), 6)),
        _summary_row(h, "eval", baseline, "std_steps", round(float(steps_all.std()), 6)),
        _summary_row(h, "eval", baseline, "mean_board_displacement_m",
                     round(float(np.mean([r.board_displacement for r in records])), 8)),
        _summary_row(h, "eval", baseline, "max_contact_force_n",
                     round(float(np.max([r.max_contact_force for r in records])), 6)),
    ]
    if succ:
        s = np.array([r.steps for r in succ], dtype=float)
        rows.append(_summary_row(h, "eval", baseline, "mean_steps_success_only", round(float(s.mean()), 6)))
        rows.append(_summary_row(h, "eval", baseline, "std_steps_success_only", round(float(s.std()), 6)))
    return rows


# ---------------------------------------------------------------------------
# Reports


SUMMARY_HEADER = "config_hash,scenario,baseline,metric,value"


def emit_report(summary_rows: list[dict], records: list[EpisodeRecord], out_dir: str, cfg: ExperimentConfig) -> dict:
    """Write summary.csv and episodes.jsonl; deterministic content and order."""
    os.makedirs(out_dir, exist_ok=True)
    h = config_hash(cfg)
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(SUMMARY_HEADER + "\n")
        f.write(f"# baseline_notes: {BASELINE_NOTES.get(cfg.baseline, '-')}\n")
        for row in summary_rows:
            f.write(f"{row['config_hash']},{row['scenario']},{row['baseline']},{row['metric']},{_fmt_value(row['value'])}\n")
    episodes_path = os.path.join(out_dir, "episodes.jsonl")
    with open(episodes_path, "w", encoding="utf-8", newline="\n") as f:
        for rec in sorted(records, key=lambda r: r.seed):
            f.write(rec.to_json(h) + "\n")
    return {"summary": summary_path, "episodes": episodes_path}


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
