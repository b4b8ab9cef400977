"""End-to-end scenario execution: drives the scene pipeline, driver
monitoring, the virtual bus, and the decision engine tick by tick, writing
per-frame CSVs, the bus log, and a summary.

Outputs in the run directory:
    lane.csv       per-frame lane pipeline record
    driver.csv     per-frame driver state record
    snapshot.csv   per-frame decoded vehicle signals
    decisions.csv  alert/command stream (t, type, kind, severity, payload)
    ground_truth.csv  renderer/script truth per frame
    events.csv     error onsets and first alerts, for latency measurement
    bus.log        candump-format network log
    run.log        human-readable event lines
    summary.json / summary.txt  run metrics
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..bus import FaultCode, VirtualBus
from ..decision import (
    DecisionInput,
    DecisionState,
    LogEvent,
    driver_error_latency,
    evaluate,
)
from ..driver import DriverMonitor, classify_gaze, eye_aspect_ratio, hands_on_wheel
from ..geometry import undistort, warp, warp_nearest
from ..headpose import (
    PoseDivergence,
    estimate_head_pose,
    face_model_subset_56,
    landmark_subset_56,
    load_face_model,
)
from ..lanes import (
    CLASS_LANE_MARKING,
    TrackerState,
    candidate_masks,
    free_space,
    merge_candidates,
    track_lanes,
)
from ..segnet import WeightStore, build_default_net, forward
from .driver_synth import synth_driver_frame
from .road import RoadRenderer
from .scenario import Scenario, ground_truth_onsets, load_builtin, load_scenario


@dataclass(frozen=True)
class RunReport:
    out_dir: Path
    metrics: dict
    invariant_failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.invariant_failures


def default_weights_path():
    return resources.files("drivewatch").joinpath("data/segnet_weights.nsw")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


class _Csv:
    def __init__(self, path, header):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(header)

    def row(self, values):
        self._writer.writerow([_fmt(v) for v in values])

    def close(self):
        self._fh.close()


def run_scenario(scenario_or_path, mode: str = "manual", out_dir=None,
                 seed: int | None = None) -> RunReport:
    """Execute one scenario and return its report.

    ``scenario_or_path`` may be a Scenario, a path to a scenario file, or a
    builtin scenario name.
    """
    if isinstance(scenario_or_path, Scenario):
        scenario = scenario_or_path
    else:
        text = str(scenario_or_path)
        if text.endswith(".json"):
            scenario = load_scenario(text)
        else:
            scenario = load_builtin(text)
    if seed is not None:
        scenario = dataclass_replace_seed(scenario, seed)

    out = Path(out_dir) if out_dir is not None else Path(f"runs/{scenario.name}")
    out.mkdir(parents=True, exist_ok=True)

    net = weights = None
    if scenario.segmentation_source == "network":
        net = build_default_net(3)
        if scenario.weights_path in (None, "builtin"):
            with resources.as_file(default_weights_path()) as p:
                weights = WeightStore.load(p)
        else:
            weights = WeightStore.load(scenario.weights_path)

    face_model56 = face_model_subset_56(load_face_model())
    monitor = DriverMonitor(scenario.driver_config)
    tracker = TrackerState()
    decision_state = DecisionState()
    bus = VirtualBus(log_path=str(out / "bus.log"))
    injected_faults = set()

    lane_csv = _Csv(out / "lane.csv", [
        "frame_index", "a_left", "b_left", "c_left", "a_right", "b_right",
        "c_right", "radius_m", "offset_m", "width_m", "confidence",
        "accepted_flag", "reject_reason"])
    driver_csv = _Csv(out / "driver.csv", [
        "frame_index", "t", "yaw_deg", "pitch_deg", "roll_deg",
        "reproj_rmse_px", "gaze", "ear_left", "ear_right", "closed",
        "drowsy", "distracted", "hands_on_wheel"])
    snapshot_csv = _Csv(out / "snapshot.csv", [
        "frame_index", "t", "vehicle_speed", "engine_rpm", "engine_status",
        "throttle_pct", "battery_v", "fuel_level", "wheel_fl", "wheel_fr",
        "wheel_rl", "wheel_rr", "oil_pressure", "brake_oil_level",
        "airbag_status", "shock_sensor"])
    decisions_csv = _Csv(out / "decisions.csv",
                         ["t", "type", "kind", "severity", "payload"])
    truth_csv = _Csv(out / "ground_truth.csv", [
        "frame_index", "t", "gt_a_left", "gt_b_left", "gt_c_left",
        "gt_a_right", "gt_b_right", "gt_c_right", "gt_offset_m",
        "gt_yaw_deg", "gt_pitch_deg", "gt_roll_deg", "speed_kmh"])
    events_csv = _Csv(out / "events.csv", ["t", "kind", "source"])
    run_log = open(out / "run.log", "w")

    events: list[LogEvent] = []
    for t_onset, kind in ground_truth_onsets(scenario):
        events.append(LogEvent(t_onset, kind, "onset"))
        events_csv.row([t_onset, kind, "onset"])

    alerted_kinds: set[str] = set()
    frame_ms: list[float] = []
    lane_err_sq: list[float] = []
    pose_err_sq: list[float] = []
    offset_errors: list[float] = []
    radius_values: list[float] = []
    invariant_failures: list[str] = []
    warp_size = scenario.warp_size
    renderer = RoadRenderer(scenario)

    try:
        for index in range(scenario.n_frames):
            t = scenario.frame_time(index)
            started = time.perf_counter()

            # -- scene pipeline --------------------------------------------
            frame, truth = renderer.render(t)
            undistorted = undistort(frame, scenario.camera)
            warped = warp(undistorted, scenario.homography, warp_size)
            cmask, gmask = candidate_masks(warped, scenario.lane_config)
            if net is not None:
                seg_persp = forward(net, weights, undistorted)
            else:
                seg_persp = truth.classmap
            seg_bird = warp_nearest(seg_persp, scenario.homography, warp_size)
            smask = seg_bird == CLASS_LANE_MARKING
            merged = merge_candidates(cmask, gmask, smask,
                                      scenario.lane_config.merge_rule)
            lane_est, tracker = track_lanes(tracker, merged, scenario.scale,
                                            scenario.lane_config)
            fs = free_space(seg_bird, vehicle_row=warp_size[1] - 1)

            # -- driver pipeline -------------------------------------------
            landmarks, keypoints, gt_pose = synth_driver_frame(
                scenario, t, index)
            pts56, conf56 = landmark_subset_56(landmarks)
            try:
                pose = estimate_head_pose(pts56, face_model56,
                                          scenario.driver_camera, conf56)
            except PoseDivergence:
                pose = None
            gaze = classify_gaze(pose) if pose is not None else "road"
            ear_l = eye_aspect_ratio(landmarks.eye_points("left"))
            ear_r = eye_aspect_ratio(landmarks.eye_points("right"))
            hands = hands_on_wheel(keypoints, scenario.wheel_ellipse)
            speed = scenario.speed_at(t)
            driver_state = monitor.update(t, ear_l, ear_r, gaze, pose,
                                          hands, speed)

            # -- bus --------------------------------------------------------
            for fault in scenario.fault_injections:
                key = (fault.ecu, fault.code)
                if fault.t <= t and key not in injected_faults:
                    injected_faults.add(key)
                    for ecu in bus.ecus:
                        if ecu.kind == fault.ecu:
                            ecu.faults.append(FaultCode(fault.code, True,
                                                        fault.ecu))
            bus.step(scenario.world_at(t), t)
            snapshot = bus.snapshot(t)

            # -- decision engine ---------------------------------------------
            tick = DecisionInput(
                t=t, snapshot=snapshot, lane=lane_est, driver=driver_state,
                freespace=fs, obstacles=scenario.obstacles_at(t),
                traffic_speed_kmh=scenario.traffic_speed_kmh)
            alerts, commands, decision_state = evaluate(
                tick, mode, scenario.rules, decision_state)
            for alert in alerts:
                payload = json.dumps(alert.payload, sort_keys=True)
                decisions_csv.row([alert.t, "alert", alert.kind,
                                   alert.severity, payload])
                run_log.write(f"[{alert.t:9.3f}] {alert.severity.upper():8s} "
                              f"{alert.kind} {payload}\n")
                if alert.kind not in alerted_kinds:
                    alerted_kinds.add(alert.kind)
                    events.append(LogEvent(alert.t, alert.kind, "alert"))
                    events_csv.row([alert.t, alert.kind, "alert"])
            for command in commands:
                bus.inject(command.kind, command.magnitude or 0.0, t)
                decisions_csv.row([t, "command", command.kind, "",
                                   json.dumps({"magnitude": command.magnitude})])
                run_log.write(f"[{t:9.3f}] COMMAND  {command.kind} "
                              f"magnitude={command.magnitude}\n")

            # -- records ------------------------------------------------------
            accepted = (tracker.consecutive_rejects == 0 and lane_est.locked)
            left = lane_est.left
            right = lane_est.right
            lane_csv.row([
                index,
                left.a if left else "", left.b if left else "",
                left.c if left else "",
                right.a if right else "", right.b if right else "",
                right.c if right else "",
                lane_est.curvature_radius_m, lane_est.lateral_offset_m,
                lane_est.lane_width_m, lane_est.confidence,
                accepted, tracker.last_reject_reason if not accepted else ""])
            driver_csv.row([
                index, t,
                pose.yaw if pose else "", pose.pitch if pose else "",
                pose.roll if pose else "",
                pose.reprojection_rmse if pose else "",
                gaze, ear_l, ear_r, driver_state.eye.closed,
                driver_state.drowsy, driver_state.distracted,
                driver_state.hands_on_wheel])
            snapshot_csv.row([
                index, t, snapshot.vehicle_speed, snapshot.engine_rpm,
                snapshot.engine_status, snapshot.throttle_pct,
                snapshot.battery_v, snapshot.fuel_level,
                *(snapshot.wheel_speed or ("", "", "", "")),
                snapshot.oil_pressure, snapshot.brake_oil_level,
                snapshot.airbag_status, snapshot.shock_sensor])
            truth_csv.row([
                index, t, truth.left.a, truth.left.b, truth.left.c,
                truth.right.a, truth.right.b, truth.right.c, truth.offset_m,
                gt_pose.yaw, gt_pose.pitch, gt_pose.roll, speed])

            # -- metrics ------------------------------------------------------
            frame_ms.append((time.perf_counter() - started) * 1000.0)
            if accepted:
                for got, want in ((left, truth.left), (right, truth.right)):
                    lane_err_sq.append((got.a - want.a) ** 2
                                       + (got.b - want.b) ** 2
                                       + (got.c - want.c) ** 2)
                offset_errors.append(lane_est.lateral_offset_m - truth.offset_m)
                radius_values.append(lane_est.curvature_radius_m)
                if lane_est.lane_width_m <= 0:
                    invariant_failures.append(
                        f"frame {index}: accepted estimate with non-positive "
                        f"lane width")
            if pose is not None:
                pose_err_sq.append((pose.yaw - gt_pose.yaw) ** 2
                                   + (pose.pitch - gt_pose.pitch) ** 2
                                   + (pose.roll - gt_pose.roll) ** 2)
            if mode == "manual" and commands:
                invariant_failures.append(
                    f"frame {index}: commands emitted in manual mode")
    finally:
        for sink in (lane_csv, driver_csv, snapshot_csv, decisions_csv,
                     truth_csv, events_csv):
            sink.close()
        run_log.close()
        bus.close()

    latencies = {}
    for kind in ("drowsiness", "distraction", "hands_off"):
        if any(e.kind == kind and e.source == "onset" for e in events):
            value = driver_error_latency(events, kind)
            latencies[kind] = value if math.isfinite(value) else None

    metrics = {
        "scenario": scenario.name,
        "mode": mode,
        "seed": scenario.seed,
        "frames": scenario.n_frames,
        "frame_rate_hz": scenario.frame_rate_hz,
        "lane_coefficient_rmse": (float(np.sqrt(np.mean(lane_err_sq)))
                                  if lane_err_sq else None),
        "lane_offset_rmse_m": (float(np.sqrt(np.mean(np.square(offset_errors))))
                               if offset_errors else None),
        "lane_radius_last_m": radius_values[-1] if radius_values else None,
        "pose_angle_rmse_deg": (float(np.sqrt(np.mean(pose_err_sq) / 3.0))
                                if pose_err_sq else None),
        "alert_latency_s": latencies,
        "alert_kinds": sorted(alerted_kinds),
        "commands_emitted": mode == "semi_automated" and bool(alerted_kinds),
        "frame_ms_mean": float(np.mean(frame_ms)) if frame_ms else None,
        "frame_ms_p95": (float(np.percentile(frame_ms, 95))
                         if frame_ms else None),
        "bus_frames": bus.frames_seen,
        "invariant_failures": invariant_failures,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    _write_summary_text(out / "summary.txt", metrics)
    return RunReport(out, metrics, tuple(invariant_failures))


def dataclass_replace_seed(scenario: Scenario, seed: int) -> Scenario:
    from dataclasses import replace
    return replace(scenario, seed=seed)


def _write_summary_text(path, metrics: dict) -> None:
    lines = [
        f"scenario: {metrics['scenario']} (mode={metrics['mode']}, "
        f"seed={metrics['seed']})",
        f"frames: {metrics['frames']} @ {metrics['frame_rate_hz']} Hz",
    ]

    def num(key, fmt="{:.6g}"):
        value = metrics.get(key)
        return fmt.format(value) if value is not None else "n/a"

    lines.append(f"lane coefficient rmse: {num('lane_coefficient_rmse')}")
    lines.append(f"lane offset rmse: {num('lane_offset_rmse_m')} m")
    lines.append(f"lane radius (last accepted): {num('lane_radius_last_m')} m")
    lines.append(f"pose angle rmse: {num('pose_angle_rmse_deg')} deg")
    for kind, value in sorted(metrics["alert_latency_s"].items()):
        text = f"{value:.3f} s" if value is not None else "never alerted"
        lines.append(f"{kind} alert latency: {text}")
    lines.append(f"alerts seen: {', '.join(metrics['alert_kinds']) or 'none'}")
    lines.append(f"frame time: mean {num('frame_ms_mean')} ms, "
                 f"p95 {num('frame_ms_p95')} ms")
    lines.append(f"bus frames: {metrics['bus_frames']}")
    if metrics["invariant_failures"]:
        lines.append("INVARIANT FAILURES:")
        lines.extend(f"  {f}" for f in metrics["invariant_failures"])
    else:
        lines.append("invariant monitors: all clear")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
