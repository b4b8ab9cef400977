"""CAN frame codec (candump text format) and append-only bus logging.

Canonical wire line: ``(<timestamp %.6f>) vcan0 <ID, 3 hex digits>#<data hex>``.
Log files reuse the same line format; transmitted frames carry the interface
token ``vcan0tx`` so direction survives a round trip through the file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class BusError(ValueError):
    pass


@dataclass(frozen=True)
class CanFrame:
    id: int
    data: bytes
    timestamp: float = 0.0

    def __post_init__(self):
        if not 0 <= self.id < 2048:
            raise BusError(f"frame id 0x{self.id:X} outside 11-bit range")
        if len(self.data) > 8:
            raise BusError(f"dlc {len(self.data)} exceeds 8")
        object.__setattr__(self, "data", bytes(self.data))

    @property
    def dlc(self) -> int:
        return len(self.data)


_LINE = re.compile(
    r"^\((?P<ts>\d+\.\d{6})\)\s+(?P<iface>\w+)\s+"
    r"(?P<id>[0-9A-F]{3})#(?P<data>[0-9A-F]*)$")


def encode_frame(frame: CanFrame, interface: str = "vcan0") -> str:
    return (f"({frame.timestamp:.6f}) {interface} "
            f"{frame.id:03X}#{frame.data.hex().upper()}")


def decode_frame(line: str) -> CanFrame:
    m = _LINE.match(line.strip())
    if not m:
        raise BusError(f"malformed candump line: {line!r}")
    data_hex = m.group("data")
    if len(data_hex) % 2:
        raise BusError(f"odd-length data hex in {line!r}")
    data = bytes.fromhex(data_hex)
    if len(data) > 8:
        raise BusError(f"dlc {len(data)} exceeds 8 in {line!r}")
    frame_id = int(m.group("id"), 16)
    if frame_id >= 2048:
        raise BusError(f"frame id 0x{frame_id:X} outside 11-bit range")
    return CanFrame(frame_id, data, float(m.group("ts")))


def _decode_direction(line: str) -> str:
    m = _LINE.match(line.strip())
    if not m:
        raise BusError(f"malformed candump line: {line!r}")
    return "tx" if m.group("iface").endswith("tx") else "rx"


@dataclass(frozen=True)
class BusLogRecord:
    timestamp: float
    direction: str  # "rx" | "tx"
    frame: CanFrame


@dataclass
class BusLog:
    """Append-only, timestamp-ordered candump-format log."""

    path: str
    _last_ts: float = float("-inf")
    _handle: object = field(default=None, repr=False)

    def append(self, record: BusLogRecord) -> None:
        if record.timestamp < self._last_ts:
            raise BusError(
                f"log timestamps must be non-decreasing "
                f"({record.timestamp} after {self._last_ts})")
        self._last_ts = record.timestamp
        if self._handle is None:
            self._handle = open(self.path, "a")
        iface = "vcan0tx" if record.direction == "tx" else "vcan0"
        self._handle.write(encode_frame(record.frame, iface) + "\n")

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def log_replay(path) -> list[BusLogRecord]:
    """Re-read a log; timestamps and ordering are reproduced exactly.

    A corrupt line aborts with its (1-based) line number.
    """
    records = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = decode_frame(line)
                direction = _decode_direction(line)
            except BusError as exc:
                raise BusError(f"{path}:{lineno}: {exc}") from exc
            records.append(BusLogRecord(frame.timestamp, direction, frame))
    return records
