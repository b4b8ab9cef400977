"""Run-directory reporting: re-reads the per-frame CSVs and renders summary
figures (PNG) next to the delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

SEVERITY_COLORS = {"info": "#4a90d9", "warn": "#e8a33d", "critical": "#d0342c"}


def _read_csv(path) -> list[dict]:
    with open(path, "r", newline="") as fh:
        return list(csv.DictReader(fh))


def _column(rows, key) -> list[float]:
    return [float(r[key]) for r in rows if r[key] != ""]


def _column_where(rows, key, tkey="t"):
    pairs = [(float(r[tkey]), float(r[key])) for r in rows if r[key] != ""]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def generate_report(run_dir, out_dir=None) -> dict:
    """Emit figures for a finished run; returns {figure name: path}."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)

    lane = _read_csv(run_dir / "lane.csv")
    driver = _read_csv(run_dir / "driver.csv")
    snapshot = _read_csv(run_dir / "snapshot.csv")
    decisions = _read_csv(run_dir / "decisions.csv")
    truth = _read_csv(run_dir / "ground_truth.csv")
    figures = {}

    # -- lane tracking ------------------------------------------------------
    fig, (ax_off, ax_coeff) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    frames = _column(truth, "frame_index")
    ax_off.plot(frames, _column(truth, "gt_offset_m"), label="ground truth",
                color="black", lw=1.0)
    got_f, got_off = _column_where(lane, "offset_m", tkey="frame_index")
    ax_off.plot(got_f, got_off, label="pipeline", color="#2a7f3f", lw=1.0,
                ls="--")
    ax_off.set_ylabel("lateral offset [m]")
    ax_off.legend(loc="best", fontsize=8)

    for side, color in (("left", "#b8860b"), ("right", "#555555")):
        fr, got_c = _column_where(lane, f"c_{side}", tkey="frame_index")
        ax_coeff.plot(fr, got_c, color=color, lw=1.0, label=f"c {side}")
        ax_coeff.plot(frames, _column(truth, f"gt_c_{side}"), color=color,
                      lw=0.8, ls=":")
    ax_coeff.set_xlabel("frame")
    ax_coeff.set_ylabel("intercept [px]")
    ax_coeff.legend(loc="best", fontsize=8)
    fig.suptitle("Lane tracking vs ground truth")
    figures["lane_tracking"] = out / "lane_tracking.png"
    fig.savefig(figures["lane_tracking"], dpi=120, bbox_inches="tight")
    plt.close(fig)

    # -- driver state ---------------------------------------------------------
    fig, (ax_ear, ax_pose) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    ts = _column(driver, "t")
    ear = [(float(r["ear_left"]) + float(r["ear_right"])) / 2 for r in driver]
    ax_ear.plot(ts, ear, color="#2a4d7f", lw=1.0, label="mean EAR")
    ax_ear.axhline(0.2, color="#d0342c", lw=0.8, ls="--", label="threshold")
    for key, color in (("drowsy", "#d0342c"), ("distracted", "#e8a33d")):
        spans = [float(r["t"]) for r in driver if r[key] == "1"]
        if spans:
            ax_ear.fill_between(ts, 0, max(ear) * 1.05,
                                where=[r[key] == "1" for r in driver],
                                color=color, alpha=0.15, label=key)
    ax_ear.set_ylabel("eye aspect ratio")
    ax_ear.legend(loc="best", fontsize=8)

    for key, color in (("yaw_deg", "#2a7f3f"), ("pitch_deg", "#7f2a6e")):
        tt, vv = _column_where(driver, key)
        ax_pose.plot(tt, vv, color=color, lw=1.0, label=key.replace("_deg", ""))
        ax_pose.plot(_column(truth, "t"), _column(truth, f"gt_{key}"),
                     color=color, lw=0.8, ls=":")
    ax_pose.set_xlabel("simulated time [s]")
    ax_pose.set_ylabel("angle [deg]")
    ax_pose.legend(loc="best", fontsize=8)
    fig.suptitle("Driver state (dotted: scripted truth)")
    figures["driver_state"] = out / "driver_state.png"
    fig.savefig(figures["driver_state"], dpi=120, bbox_inches="tight")
    plt.close(fig)

    # -- alert timeline -------------------------------------------------------
    fig, ax = plt.subplots(figsize=(9, 3.5))
    alerts = [r for r in decisions if r["type"] == "alert"]
    commands = [r for r in decisions if r["type"] == "command"]
    kinds = sorted({r["kind"] for r in alerts} | {r["kind"] for r in commands})
    lanes_y = {k: i for i, k in enumerate(kinds)}
    for r in alerts:
        ax.scatter(float(r["t"]), lanes_y[r["kind"]], marker="|", s=120,
                   color=SEVERITY_COLORS.get(r["severity"], "gray"))
    for r in commands:
        ax.scatter(float(r["t"]), lanes_y[r["kind"]], marker="v", s=40,
                   color="black")
    ax.set_yticks(list(lanes_y.values()))
    ax.set_yticklabels(list(lanes_y.keys()), fontsize=8)
    ax.set_xlabel("simulated time [s]")
    ax.set_title("Alerts (| by severity) and commands (v)")
    if snapshot:
        ax.set_xlim(0, float(snapshot[-1]["t"]) + 0.1)
    figures["alerts_timeline"] = out / "alerts_timeline.png"
    fig.savefig(figures["alerts_timeline"], dpi=120, bbox_inches="tight")
    plt.close(fig)

    # -- speed profile ----------------------------------------------------------
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.plot(_column(snapshot, "t"), _column(snapshot, "vehicle_speed"),
            color="#2a4d7f", lw=1.2, label="vehicle speed")
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        with open(summary_path) as fh:
            json.load(fh)  # presence check; limit comes from scenario rules
    ax.set_xlabel("simulated time [s]")
    ax.set_ylabel("km/h")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Speed profile (decoded from the bus)")
    figures["speed_profile"] = out / "speed_profile.png"
    fig.savefig(figures["speed_profile"], dpi=120, bbox_inches="tight")
    plt.close(fig)

    return {name: str(path) for name, path in figures.items()}
