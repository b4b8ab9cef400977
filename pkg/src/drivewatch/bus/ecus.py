"""Eight simulated ECUs broadcasting the vehicle signal inventory, the
virtual bus tying them together, command injection, and signal snapshots.

The shipped signal map (data/signal_map.csv) assigns every signal a frame
id, byte offset, length, scale/offset codec, and broadcast period. Signals
whose parameter has a standard OBD-II PID reuse that PID's formula, so the
periodic broadcast and the diagnostic answer agree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Optional

from .frames import BusError, BusLog, BusLogRecord, CanFrame
from .obd import (
    MODE_CURRENT_DATA,
    MODE_READ_DTCS,
    OBD_BROADCAST_ID,
    OBD_EMS_REQUEST_ID,
    OBD_RESPONSE_BASE,
    PID_TABLE,
    FaultCode,
    make_dtc_response,
    parse_response,
)

ECU_KINDS = ("CCN", "DCN", "FN", "ICN", "RN", "ABS", "ACU", "EMS")

# Signals a snapshot cannot be formed without.
MANDATORY_SIGNALS = ("vehicle_speed", "engine_rpm")

# Command id range 0x600-0x6FF; the whitelist is total: nothing else
# may be injected onto the bus.
COMMAND_TABLE: dict[str, tuple[int, float]] = {
    # name -> (frame id, payload scale)
    "horn": (0x600, 1.0),
    "lamp_set": (0x601, 1.0),
    "cruise_set": (0x602, 1.0),
    "brake_request": (0x603, 10.0),
    "lock": (0x604, 1.0),
    "unlock": (0x605, 1.0),
    "decelerate": (0x606, 10.0),
    "accelerate": (0x607, 10.0),
    "takeover": (0x60F, 1.0),
}


class CommandError(BusError):
    pass


class IncompleteSnapshot(BusError):
    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"mandatory signals never seen: {', '.join(missing)}")


@dataclass(frozen=True)
class SignalDef:
    name: str
    ecu: str
    frame_id: int
    byte_offset: int
    length: int
    scale: float
    offset: float
    unit: str
    period_ms: int
    kind: str  # float | int | bool | bits

    def encode_into(self, buf: bytearray, value) -> None:
        raw = int(round((float(value) - self.offset) / self.scale))
        raw = max(0, min(raw, 256 ** self.length - 1))
        buf[self.byte_offset:self.byte_offset + self.length] = \
            raw.to_bytes(self.length, "big")

    def decode(self, data: bytes):
        raw = int.from_bytes(
            data[self.byte_offset:self.byte_offset + self.length], "big")
        value = raw * self.scale + self.offset
        if self.kind == "bool":
            return bool(raw)
        if self.kind in ("int", "bits"):
            return int(round(value))
        return value


def load_signal_map(path=None) -> list[SignalDef]:
    if path is None:
        ref = resources.files("drivewatch").joinpath("data/signal_map.csv")
        with ref.open("r") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with open(path, "r") as fh:
            rows = list(csv.DictReader(fh))
    defs = []
    for row in rows:
        if row["ecu"] not in ECU_KINDS:
            raise BusError(f"signal {row['signal']} owned by unknown "
                           f"ecu {row['ecu']}")
        defs.append(SignalDef(
            name=row["signal"],
            ecu=row["ecu"],
            frame_id=int(row["frame_id"], 16),
            byte_offset=int(row["byte_offset"]),
            length=int(row["length"]),
            scale=float(row["scale"]),
            offset=float(row["offset"]),
            unit=row["unit"],
            period_ms=int(row["period_ms"]),
            kind=row["kind"],
        ))
    seen = {}
    for d in defs:
        if d.name in seen:
            raise BusError(f"signal {d.name} mapped twice")
        seen[d.name] = d
    return defs


@dataclass
class EcuNode:
    """One control unit: owns its signals, broadcasts them on schedule."""

    kind: str
    signals: list[SignalDef]
    faults: list[FaultCode] = field(default_factory=list)
    _last_emit: dict[int, float] = field(default_factory=dict)

    def step(self, world: dict, t: float) -> list[CanFrame]:
        """Frames whose broadcast period elapsed, in frame-id order."""
        by_frame: dict[int, list[SignalDef]] = {}
        for sig in self.signals:
            by_frame.setdefault(sig.frame_id, []).append(sig)
        out = []
        for frame_id in sorted(by_frame):
            group = by_frame[frame_id]
            period = group[0].period_ms / 1000.0
            last = self._last_emit.get(frame_id)
            if last is not None and t - last < period - 1e-9:
                continue
            size = max(s.byte_offset + s.length for s in group)
            buf = bytearray(size)
            missing = False
            for sig in group:
                value = world.get(sig.name)
                if value is None:
                    missing = True
                    break
                sig.encode_into(buf, value)
            if missing:
                continue
            self._last_emit[frame_id] = t
            out.append(CanFrame(frame_id, bytes(buf), t))
        return out

    def answer(self, query: CanFrame, world: dict, t: float,
               response_id: int) -> list[CanFrame]:
        """OBD replies; only the EMS serves parameter queries."""
        if query.id not in (OBD_BROADCAST_ID, OBD_EMS_REQUEST_ID):
            return []
        if len(query.data) < 2:
            return []
        mode = query.data[1]
        if mode == MODE_READ_DTCS:
            if not self.faults:
                return []
            active = [f.code for f in self.faults if f.active][:3]
            return [make_dtc_response(active, response_id, t)] if active else []
        if self.kind != "EMS" or mode != MODE_CURRENT_DATA:
            return []
        if len(query.data) < 3:
            return []
        pid = query.data[2]
        spec = PID_TABLE.get(pid)
        if spec is None or spec.name not in world:
            return []
        payload = spec.encode(world[spec.name])
        body = bytes([0x41, pid]) + payload
        return [CanFrame(response_id, bytes([len(body)]) + body, t)]


def build_ecus(signal_map: Optional[list[SignalDef]] = None) -> list[EcuNode]:
    defs = signal_map if signal_map is not None else load_signal_map()
    nodes = []
    for kind in ECU_KINDS:
        nodes.append(EcuNode(kind, [d for d in defs if d.ecu == kind]))
    return nodes


def inject_command(kind: str, magnitude: float = 1.0,
                   timestamp: float = 0.0) -> CanFrame:
    """Encode a whitelisted safety-system command onto the command id range."""
    entry = COMMAND_TABLE.get(kind)
    if entry is None:
        raise CommandError(f"command {kind!r} not in the whitelist")
    frame_id, scale = entry
    raw = max(0, min(int(round(magnitude * scale)), 255))
    return CanFrame(frame_id, bytes([raw]), timestamp)


def decode_command(frame: CanFrame) -> tuple[str, float]:
    for name, (frame_id, scale) in COMMAND_TABLE.items():
        if frame.id == frame_id:
            return name, frame.data[0] / scale
    raise CommandError(f"frame id 0x{frame.id:03X} is not a command id")


# ---------------------------------------------------------------------------
# snapshots

@dataclass(frozen=True)
class SignalSnapshot:
    """Latest decoded value of every vehicle signal at one instant.

    Optional signals that were never broadcast stay None.
    """

    t: float
    vehicle_speed: float
    engine_rpm: float
    engine_status: Optional[int] = None
    throttle_pct: Optional[float] = None
    accel_pedal_deg: Optional[float] = None
    battery_v: Optional[float] = None
    mileage: Optional[int] = None
    gear_ratio: Optional[float] = None
    engine_config: Optional[int] = None
    wheel_speed: Optional[tuple[float, float, float, float]] = None
    airbag_status: Optional[int] = None
    shock_sensor: Optional[bool] = None
    switch_states: Optional[int] = None
    lamp_states: Optional[int] = None
    door_states: Optional[int] = None
    mirror_states: Optional[int] = None
    handbrake: Optional[bool] = None
    brake_pedal: Optional[bool] = None
    seatbelt: Optional[bool] = None
    fuel_level: Optional[float] = None
    temp_out: Optional[float] = None
    temp_in: Optional[float] = None
    brake_oil_level: Optional[int] = None
    oil_pressure: Optional[int] = None
    cruise_on: Optional[bool] = None
    cruise_target: Optional[float] = None
    central_lock: Optional[int] = None
    key_position: Optional[int] = None


_WHEELS = ("wheel_speed_fl", "wheel_speed_fr", "wheel_speed_rl",
           "wheel_speed_rr")
_SNAPSHOT_FIELDS = {f.name for f in fields(SignalSnapshot)}


@dataclass
class SnapshotBuilder:
    """Latest-value-wins accumulator over decoded bus frames."""

    signal_map: list[SignalDef] = field(default_factory=load_signal_map)
    values: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self._by_frame: dict[int, list[SignalDef]] = {}
        for sig in self.signal_map:
            self._by_frame.setdefault(sig.frame_id, []).append(sig)

    def consume(self, frame: CanFrame) -> None:
        for sig in self._by_frame.get(frame.id, []):
            if frame.dlc >= sig.byte_offset + sig.length:
                self.values[sig.name] = sig.decode(frame.data)

    def snapshot(self, t: float) -> SignalSnapshot:
        missing = [s for s in MANDATORY_SIGNALS if s not in self.values]
        if missing:
            raise IncompleteSnapshot(missing)
        kwargs = {k: v for k, v in self.values.items()
                  if k in _SNAPSHOT_FIELDS}
        if all(w in self.values for w in _WHEELS):
            kwargs["wheel_speed"] = tuple(self.values[w] for w in _WHEELS)
        return SignalSnapshot(t=t, **kwargs)


class VirtualBus:
    """Single serialization point: ECU broadcasts, diagnostics traffic, and
    injected commands all pass through here in timestamp order and land in
    one log."""

    def __init__(self, ecus: Optional[list[EcuNode]] = None,
                 log_path=None,
                 signal_map: Optional[list[SignalDef]] = None):
        self.signal_map = signal_map if signal_map is not None \
            else load_signal_map()
        self.ecus = ecus if ecus is not None else build_ecus(self.signal_map)
        self.builder = SnapshotBuilder(self.signal_map)
        self.log = BusLog(log_path) if log_path else None
        self.frames_seen = 0

    def _record(self, frame: CanFrame, direction: str) -> None:
        self.frames_seen += 1
        if self.log is not None:
            self.log.append(BusLogRecord(frame.timestamp, direction, frame))

    def step(self, world: dict, t: float) -> list[CanFrame]:
        out = []
        for ecu in self.ecus:
            for frame in ecu.step(world, t):
                self.builder.consume(frame)
                self._record(frame, "rx")
                out.append(frame)
        return out

    def request(self, query: CanFrame, world: dict, t: float) -> list[CanFrame]:
        self._record(query, "tx")
        responses = []
        for index, ecu in enumerate(self.ecus):
            for frame in ecu.answer(query, world, t,
                                    OBD_RESPONSE_BASE + index):
                self._record(frame, "rx")
                responses.append(frame)
        return responses

    def inject(self, kind: str, magnitude: float, t: float) -> CanFrame:
        frame = inject_command(kind, magnitude, t)
        self._record(frame, "tx")
        return frame

    def snapshot(self, t: float) -> SignalSnapshot:
        return self.builder.snapshot(t)

    def close(self) -> None:
        if self.log is not None:
            self.log.close()


def snapshot_from_log(path, t: Optional[float] = None,
                      signal_map: Optional[list[SignalDef]] = None
                      ) -> SignalSnapshot:
    """Rebuild the latest snapshot from a recorded log (rx frames only)."""
    from .frames import log_replay

    builder = SnapshotBuilder(signal_map if signal_map is not None
                              else load_signal_map())
    last_t = 0.0
    for record in log_replay(path):
        if t is not None and record.timestamp > t:
            break
        if record.direction == "rx":
            builder.consume(record.frame)
            last_t = record.timestamp
    return builder.snapshot(t if t is not None else last_t)
