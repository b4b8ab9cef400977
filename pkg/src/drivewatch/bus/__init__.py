"""Virtual in-vehicle diagnostics network: frame codec, OBD decoding, the
eight simulated ECUs, command injection, and bus logging."""

from .frames import (  # noqa: F401
    BusError,
    BusLog,
    BusLogRecord,
    CanFrame,
    decode_frame,
    encode_frame,
    log_replay,
)
from .obd import (  # noqa: F401
    MODE_CURRENT_DATA,
    MODE_READ_DTCS,
    OBD_BROADCAST_ID,
    OBD_RESPONSE_BASE,
    PID_TABLE,
    FaultCode,
    ObdError,
    decode_dtc,
    encode_dtc,
    make_dtc_response,
    make_query,
    obd_decode,
    parse_dtc_response,
    parse_response,
)
from .ecus import (  # noqa: F401
    COMMAND_TABLE,
    ECU_KINDS,
    MANDATORY_SIGNALS,
    CommandError,
    EcuNode,
    IncompleteSnapshot,
    SignalDef,
    SignalSnapshot,
    SnapshotBuilder,
    VirtualBus,
    build_ecus,
    decode_command,
    inject_command,
    load_signal_map,
    snapshot_from_log,
)
