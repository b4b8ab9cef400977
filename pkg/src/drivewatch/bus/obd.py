"""OBD-II mode 0x01 parameter decoding, diagnostic trouble codes, and the
query/response frames the engine ECU answers on the diagnostic ids."""

from __future__ import annotations

from dataclasses import dataclass

from .frames import BusError, CanFrame

OBD_BROADCAST_ID = 0x7DF
OBD_EMS_REQUEST_ID = 0x7E0
OBD_RESPONSE_BASE = 0x7E8

MODE_CURRENT_DATA = 0x01
MODE_READ_DTCS = 0x03


class ObdError(BusError):
    pass


@dataclass(frozen=True)
class PidSpec:
    pid: int
    name: str
    n_bytes: int
    scale: float
    offset: float
    unit: str

    def decode(self, payload: bytes) -> float:
        if len(payload) < self.n_bytes:
            raise ObdError(
                f"pid 0x{self.pid:02X} needs {self.n_bytes} bytes, "
                f"got {len(payload)}")
        raw = int.from_bytes(payload[: self.n_bytes], "big")
        return raw * self.scale + self.offset

    def encode(self, value: float) -> bytes:
        raw = int(round((value - self.offset) / self.scale))
        raw = max(0, min(raw, 256 ** self.n_bytes - 1))
        return raw.to_bytes(self.n_bytes, "big")


# Standard mode-0x01 parameter formulas.
PID_TABLE: dict[int, PidSpec] = {
    spec.pid: spec for spec in (
        PidSpec(0x05, "coolant_temp", 1, 1.0, -40.0, "degC"),
        PidSpec(0x0C, "engine_rpm", 2, 0.25, 0.0, "rpm"),
        PidSpec(0x0D, "vehicle_speed", 1, 1.0, 0.0, "km/h"),
        PidSpec(0x11, "throttle_pct", 1, 100.0 / 255.0, 0.0, "%"),
        PidSpec(0x2F, "fuel_level", 1, 100.0 / 255.0, 0.0, "%"),
    )
}


def obd_decode(mode: int, pid: int, payload: bytes) -> float:
    """Physical value for a mode-0x01 parameter."""
    if mode != MODE_CURRENT_DATA:
        raise ObdError(f"unsupported mode 0x{mode:02X}")
    spec = PID_TABLE.get(pid)
    if spec is None:
        raise ObdError(f"unsupported pid 0x{pid:02X}")
    return spec.decode(payload)


def make_query(pid: int, mode: int = MODE_CURRENT_DATA,
               timestamp: float = 0.0) -> CanFrame:
    if mode == MODE_READ_DTCS:
        return CanFrame(OBD_BROADCAST_ID, bytes([0x01, mode]), timestamp)
    return CanFrame(OBD_BROADCAST_ID, bytes([0x02, mode, pid]), timestamp)


def parse_response(frame: CanFrame) -> tuple[int, int, bytes]:
    """Split a response frame into (mode, pid, payload)."""
    data = frame.data
    if len(data) < 2:
        raise ObdError("response frame too short")
    length = data[0]
    if length + 1 > len(data):
        raise ObdError("response length byte exceeds frame data")
    body = data[1:1 + length]
    mode = body[0] - 0x40
    if mode == MODE_READ_DTCS:
        return mode, 0, body[1:]
    if len(body) < 2:
        raise ObdError("parameter response missing pid")
    return mode, body[1], body[2:]


# ---------------------------------------------------------------------------
# diagnostic trouble codes

_DTC_SYSTEMS = "PCBU"


@dataclass(frozen=True)
class FaultCode:
    code: str  # letter + 4 hex digits, e.g. "P0301"
    active: bool
    ecu: str

    def __post_init__(self):
        if (len(self.code) != 5 or self.code[0] not in _DTC_SYSTEMS
                or any(c not in "0123456789ABCDEF" for c in self.code[1:])):
            raise ObdError(f"malformed fault code {self.code!r}")


def encode_dtc(code: str) -> bytes:
    """Two-byte encoding: system in the top bits of A, digits packed below."""
    FaultCode(code, True, "")  # validate shape
    system = _DTC_SYSTEMS.index(code[0])
    d = [int(c, 16) for c in code[1:]]
    if d[0] > 3:
        raise ObdError(f"first digit of {code!r} must be 0-3")
    a = (system << 6) | (d[0] << 4) | d[1]
    b = (d[2] << 4) | d[3]
    return bytes([a, b])


def decode_dtc(pair: bytes) -> str:
    if len(pair) != 2:
        raise ObdError("DTC pair must be two bytes")
    a, b = pair
    return (f"{_DTC_SYSTEMS[(a >> 6) & 0x3]}"
            f"{(a >> 4) & 0x3:X}{a & 0xF:X}{(b >> 4) & 0xF:X}{b & 0xF:X}")


def make_dtc_response(codes: list[str], response_id: int,
                      timestamp: float = 0.0) -> CanFrame:
    """Single-frame DTC report (at most 3 codes fit in 8 bytes)."""
    if len(codes) > 3:
        raise ObdError("at most 3 codes per response frame")
    body = bytes([0x43]) + b"".join(encode_dtc(c) for c in codes)
    return CanFrame(response_id, bytes([len(body)]) + body, timestamp)


def parse_dtc_response(frame: CanFrame) -> list[str]:
    mode, _, payload = parse_response(frame)
    if mode != MODE_READ_DTCS:
        raise ObdError(f"not a DTC response (mode 0x{mode:02X})")
    if len(payload) % 2:
        raise ObdError("DTC payload must hold whole byte pairs")
    return [decode_dtc(payload[i:i + 2]) for i in range(0, len(payload), 2)]
