"""drivewatch: a desk-scale, fully testable vehicle safety sandbox.

Subsystems: camera geometry, lane/scene perception, a convolutional
segmentation forward engine, driver-state monitoring, a virtual in-vehicle
diagnostics bus, a rule-based safety decision engine, and a deterministic
scenario simulator tying them together.
"""

__version__ = "0.1.0"
