"""Deterministic scenario simulation: synthetic road and driver generators,
the end-to-end runner, and report/figure emission."""

from .scenario import (  # noqa: F401
    BUILTIN_SCENARIOS,
    Scenario,
    ScenarioError,
    builtin_scenario_path,
    ground_truth_onsets,
    load_builtin,
    load_scenario,
    parse_scenario,
)
from .road import RoadTruth, compose_birdseye, lane_centerlines, render_road_frame  # noqa: F401
from .driver_synth import (  # noqa: F401
    DriverFrameRecord,
    read_driver_frames_csv,
    synth_driver_frame,
    write_driver_frames_csv,
)
from .runner import RunReport, default_weights_path, run_scenario  # noqa: F401
from .report import generate_report  # noqa: F401
