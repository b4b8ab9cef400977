"""Command-line front end.

Subcommands:
    run          execute a scenario end to end and write a run directory
    render-road  render one road frame (PPM) plus its label map (PGM)
    pose-synth   emit synthetic driver landmarks/keypoints as CSV
    bus-sim      run only the virtual bus and write a candump log
    report       summarize a finished run directory and render figures
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bus import VirtualBus, FaultCode, make_query
from .image import write_pgm, write_ppm
from .sim import (
    BUILTIN_SCENARIOS,
    ScenarioError,
    generate_report,
    load_builtin,
    load_scenario,
    render_road_frame,
    run_scenario,
    synth_driver_frame,
    write_driver_frames_csv,
)
from .sim.driver_synth import DriverFrameRecord


def _load(spec: str):
    if spec.endswith(".json"):
        return load_scenario(spec)
    return load_builtin(spec)


def _add_scenario_arg(parser):
    parser.add_argument(
        "--scenario", required=True,
        help="path to a scenario .json or a builtin name "
             f"({', '.join(BUILTIN_SCENARIOS)})")


def cmd_run(args) -> int:
    mode = "semi_automated" if args.mode == "semi" else "manual"
    report = run_scenario(_load(args.scenario), mode=mode, out_dir=args.out,
                          seed=args.seed)
    summary = Path(report.out_dir) / "summary.txt"
    sys.stdout.write(summary.read_text())
    if not report.ok:
        sys.stderr.write("invariant monitors tripped; see summary\n")
        return 1
    return 0


def cmd_render_road(args) -> int:
    scenario = _load(args.scenario)
    image, truth = render_road_frame(scenario, args.t)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, image)
    labels = out.with_name(out.stem + "_labels.pgm")
    write_pgm(labels, truth.classmap)
    print(f"wrote {out} and {labels}")
    print(f"left fit:  a={truth.left.a:.6e} b={truth.left.b:.6e} "
          f"c={truth.left.c:.3f}")
    print(f"right fit: a={truth.right.a:.6e} b={truth.right.b:.6e} "
          f"c={truth.right.c:.3f}")
    return 0


def cmd_pose_synth(args) -> int:
    scenario = _load(args.scenario)
    frame_index = int(round(args.t * scenario.frame_rate_hz))
    landmarks, keypoints, truth = synth_driver_frame(scenario, args.t,
                                                     frame_index)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_driver_frames_csv(out, [DriverFrameRecord(frame_index, landmarks,
                                                    keypoints)])
    print(f"wrote {out}")
    print(f"true pose: yaw={truth.yaw:.2f} pitch={truth.pitch:.2f} "
          f"roll={truth.roll:.2f}")
    return 0


def cmd_bus_sim(args) -> int:
    scenario = _load(args.scenario)
    duration = args.duration_s if args.duration_s else scenario.duration_s
    bus = VirtualBus(log_path=args.log_out)
    injected = set()
    step = 1.0 / scenario.frame_rate_hz
    n = int(round(duration / step))
    poll_pids = (0x0D, 0x0C)
    next_poll = 0.0
    for i in range(n):
        t = round(i * step, 9)
        for fault in scenario.fault_injections:
            key = (fault.ecu, fault.code)
            if fault.t <= t and key not in injected:
                injected.add(key)
                for ecu in bus.ecus:
                    if ecu.kind == fault.ecu:
                        ecu.faults.append(FaultCode(fault.code, True,
                                                    fault.ecu))
        world = scenario.world_at(t)
        bus.step(world, t)
        if t >= next_poll:
            for pid in poll_pids:
                bus.request(make_query(pid, timestamp=t), world, t)
            if injected:
                bus.request(make_query(0, mode=0x03, timestamp=t), world, t)
            next_poll += 1.0
    bus.close()
    print(f"wrote {args.log_out} ({bus.frames_seen} frames, "
          f"{duration:.2f} s simulated)")
    return 0


def cmd_report(args) -> int:
    figures = generate_report(args.run_dir)
    summary = Path(args.run_dir) / "summary.txt"
    if summary.exists():
        sys.stdout.write(summary.read_text())
    for name, path in sorted(figures.items()):
        print(f"figure: {name} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivewatch",
        description="Desk-scale vehicle safety sandbox: scenario simulation "
                    "over scene perception, driver monitoring, a virtual "
                    "diagnostics bus, and a rule-based safety engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario end to end")
    _add_scenario_arg(p)
    p.add_argument("--mode", choices=("manual", "semi"), default="manual")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render-road", help="render one road frame")
    _add_scenario_arg(p)
    p.add_argument("--t", type=float, required=True, help="frame time [s]")
    p.add_argument("--out", required=True, help="output PPM path")
    p.set_defaults(func=cmd_render_road)

    p = sub.add_parser("pose-synth", help="synthesize driver landmarks")
    _add_scenario_arg(p)
    p.add_argument("--t", type=float, required=True, help="frame time [s]")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_pose_synth)

    p = sub.add_parser("bus-sim", help="run only the virtual bus")
    _add_scenario_arg(p)
    p.add_argument("--log-out", required=True, help="candump log path")
    p.add_argument("--duration-s", type=float, default=None,
                   help="override the scenario duration")
    p.set_defaults(func=cmd_bus_sim)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        sys.stderr.write(f"scenario error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
