"""Device command log parsing and SCSI/NVMe command codecs.

Log line format, one record per non-comment line:

    <epoch_ns> <SCSI|NVME> [<IO|ADMIN>] <raw_hex>

The queue column is required for NVME lines and must be absent for SCSI
lines. ``#`` starts a comment; blank lines are skipped. ``raw_hex`` is
lowercase hex with no separators: 32 chars for SCSI (a 16-byte buffer,
zero padded past the opcode-determined CDB length) and 128 chars for NVMe
(a full 64-byte submission queue entry).

Because command payloads are not captured, UNMAP and DSM carry their
range summary in the fixed command buffer itself (the same byte slots
WRITE uses). This is an emulated-log convention, not wire truth.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

from .model import (
    NVME_RAW_LEN,
    SCSI_RAW_LEN,
    CommandClass,
    DeviceCommand,
    Protocol,
    Queue,
    XrayError,
)


class DevLogParseError(XrayError):
    """A malformed device log line; carries the source name and line number."""

    def __init__(self, reason: str, line_no: int, source: str = "<dev>") -> None:
        self.reason = reason
        self.line_no = line_no
        self.source = source
        super().__init__(f"{source}:{line_no}: {reason}")


@dataclass(frozen=True)
class DevLogRecord:
    """One raw log line: timestamp, protocol, queue (NVMe only), buffer."""

    ts: int
    protocol: Protocol
    queue: Queue | None
    raw: bytes


@dataclass(frozen=True)
class OpcodeInfo:
    name: str
    cmd_class: CommandClass
    cdb_len: int = 0
    fields: tuple[str, ...] = ()


SCSI_OPCODES: dict[int, OpcodeInfo] = {
    0x00: OpcodeInfo("TEST_UNIT_READY", CommandClass.ADMIN, 6),
    0x28: OpcodeInfo("READ_10", CommandClass.DATA_TRANSFER, 10, ("lba", "block_count")),
    0x2A: OpcodeInfo("WRITE_10", CommandClass.DATA_TRANSFER, 10, ("lba", "block_count")),
    0x2F: OpcodeInfo("VERIFY_10", CommandClass.ADMIN, 10),
    0x35: OpcodeInfo("SYNCHRONIZE_CACHE", CommandClass.ADMIN, 10),
    0x42: OpcodeInfo("UNMAP", CommandClass.ADMIN, 10, ("lba", "block_count")),
    0x88: OpcodeInfo("READ_16", CommandClass.DATA_TRANSFER, 16, ("lba", "block_count")),
    0x8A: OpcodeInfo("WRITE_16", CommandClass.DATA_TRANSFER, 16, ("lba", "block_count")),
}

NVME_IO_OPCODES: dict[int, OpcodeInfo] = {
    0x00: OpcodeInfo("FLUSH", CommandClass.DATA_TRANSFER, fields=("nsid",)),
    0x01: OpcodeInfo("WRITE", CommandClass.DATA_TRANSFER, fields=("nsid", "slba", "nlb")),
    0x02: OpcodeInfo("READ", CommandClass.DATA_TRANSFER, fields=("nsid", "slba", "nlb")),
    0x09: OpcodeInfo("DSM", CommandClass.DATA_TRANSFER, fields=("nsid", "slba", "nlb")),
}

NVME_ADMIN_OPCODES: dict[int, OpcodeInfo] = {
    0x02: OpcodeInfo("GET_LOG_PAGE", CommandClass.ADMIN, fields=("nsid",)),
    0x06: OpcodeInfo("IDENTIFY", CommandClass.ADMIN, fields=("nsid",)),
    0x09: OpcodeInfo("SET_FEATURES", CommandClass.ADMIN, fields=("nsid",)),
    0x0A: OpcodeInfo("GET_FEATURES", CommandClass.ADMIN, fields=("nsid",)),
}


def _unknown_info(opcode: int) -> OpcodeInfo:
    return OpcodeInfo(f"UNKNOWN_0x{opcode:02X}", CommandClass.ADMIN)


def opcode_info(protocol: Protocol, opcode: int, queue: Queue | None) -> OpcodeInfo:
    """Table lookup; unknown opcodes map to UNKNOWN_0xNN with class Admin."""
    if protocol is Protocol.SCSI:
        table = SCSI_OPCODES
    elif queue is Queue.ADMIN:
        table = NVME_ADMIN_OPCODES
    else:
        table = NVME_IO_OPCODES
    return table.get(opcode, _unknown_info(opcode))


def parse_dev_log(lines: Iterable[str] | str, source: str = "<dev>") -> list[DevLogRecord]:
    """Parse a device log into records, rejecting malformed lines."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    records: list[DevLogRecord] = []
    for line_no, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        if len(tokens) < 3:
            raise DevLogParseError(f"expected at least 3 columns, got {len(tokens)}", line_no, source)
        try:
            ts = int(tokens[0])
        except ValueError:
            raise DevLogParseError(f"non-numeric timestamp {tokens[0]!r}", line_no, source) from None
        if ts < 0:
            raise DevLogParseError(f"negative timestamp {ts}", line_no, source)
        try:
            protocol = Protocol(tokens[1])
        except ValueError:
            raise DevLogParseError(f"bad protocol tag {tokens[1]!r}", line_no, source) from None

        if protocol is Protocol.SCSI:
            if len(tokens) != 3:
                raise DevLogParseError("SCSI lines must not carry a queue column", line_no, source)
            queue = None
            hex_str = tokens[2]
            want_len = SCSI_RAW_LEN * 2
        else:
            if len(tokens) != 4:
                raise DevLogParseError("NVME lines need a queue column", line_no, source)
            try:
                queue = Queue(tokens[2])
            except ValueError:
                raise DevLogParseError(f"bad queue tag {tokens[2]!r}", line_no, source) from None
            hex_str = tokens[3]
            want_len = NVME_RAW_LEN * 2

        if len(hex_str) != want_len:
            raise DevLogParseError(
                f"bad raw length: {len(hex_str)} hex chars, expected {want_len}",
                line_no,
                source,
            )
        try:
            raw = bytes.fromhex(hex_str)
        except ValueError:
            raise DevLogParseError("bad hex", line_no, source) from None
        records.append(DevLogRecord(ts=ts, protocol=protocol, queue=queue, raw=raw))
    return records


def format_record(record: DevLogRecord) -> str:
    if record.protocol is Protocol.SCSI:
        return f"{record.ts} SCSI {record.raw.hex()}"
    queue = record.queue or Queue.IO
    return f"{record.ts} NVME {queue.value} {record.raw.hex()}"


def format_dev_log(records: Iterable[DevLogRecord]) -> str:
    return "".join(format_record(r) + "\n" for r in records)


def decode_scsi(record: DevLogRecord) -> DeviceCommand:
    """Decode a 16-byte SCSI CDB buffer."""
    raw = record.raw
    opcode = raw[0]
    info = opcode_info(Protocol.SCSI, opcode, None)
    decoded: dict[str, int] = {}
    if info.fields == ("lba", "block_count"):
        if info.cdb_len == 16:
            decoded["lba"] = struct.unpack_from(">Q", raw, 2)[0]
            decoded["block_count"] = struct.unpack_from(">I", raw, 10)[0]
        else:
            decoded["lba"] = struct.unpack_from(">I", raw, 2)[0]
            decoded["block_count"] = struct.unpack_from(">H", raw, 7)[0]
    return DeviceCommand(
        ts=record.ts,
        protocol=Protocol.SCSI,
        opcode=opcode,
        name=info.name,
        cmd_class=info.cmd_class,
        decoded=decoded,
        raw=raw,
    )


def decode_nvme(record: DevLogRecord) -> DeviceCommand:
    """Decode a 64-byte NVMe submission queue entry."""
    raw = record.raw
    opcode = raw[0]
    queue = record.queue or Queue.IO
    info = opcode_info(Protocol.NVME, opcode, queue)
    decoded: dict[str, int] = {"nsid": struct.unpack_from("<I", raw, 4)[0]}
    if "slba" in info.fields:
        decoded["slba"] = struct.unpack_from("<Q", raw, 40)[0]
        decoded["nlb"] = struct.unpack_from("<H", raw, 48)[0]
    # Class tracks the queue so that encode() can recover the queue column.
    cmd_class = CommandClass.ADMIN if queue is Queue.ADMIN else CommandClass.DATA_TRANSFER
    return DeviceCommand(
        ts=record.ts,
        protocol=Protocol.NVME,
        opcode=opcode,
        name=info.name,
        cmd_class=cmd_class,
        decoded=decoded,
        raw=raw,
    )


def decode_record(record: DevLogRecord) -> DeviceCommand:
    if record.protocol is Protocol.SCSI:
        return decode_scsi(record)
    return decode_nvme(record)


def decode_dev_log(lines: Iterable[str] | str, source: str = "<dev>") -> list[DeviceCommand]:
    return [decode_record(r) for r in parse_dev_log(lines, source)]


def _encode_scsi_raw(opcode: int, info: OpcodeInfo, fields: dict[str, int]) -> bytes:
    raw = bytearray(SCSI_RAW_LEN)
    raw[0] = opcode
    if info.fields == ("lba", "block_count"):
        if info.cdb_len == 16:
            struct.pack_into(">Q", raw, 2, fields["lba"])
            struct.pack_into(">I", raw, 10, fields["block_count"])
        else:
            struct.pack_into(">I", raw, 2, fields["lba"])
            struct.pack_into(">H", raw, 7, fields["block_count"])
    return bytes(raw)


def _encode_nvme_raw(opcode: int, info: OpcodeInfo, fields: dict[str, int]) -> bytes:
    raw = bytearray(NVME_RAW_LEN)
    raw[0] = opcode
    struct.pack_into("<I", raw, 4, fields.get("nsid", 0))
    if "slba" in info.fields:
        struct.pack_into("<Q", raw, 40, fields["slba"])
        struct.pack_into("<H", raw, 48, fields["nlb"])
    return bytes(raw)


def _resolve_name(protocol: Protocol, name: str) -> tuple[int, OpcodeInfo, Queue | None]:
    if protocol is Protocol.SCSI:
        for opcode, info in SCSI_OPCODES.items():
            if info.name == name:
                return opcode, info, None
    else:
        for opcode, info in NVME_IO_OPCODES.items():
            if info.name == name:
                return opcode, info, Queue.IO
        for opcode, info in NVME_ADMIN_OPCODES.items():
            if info.name == name:
                return opcode, info, Queue.ADMIN
    raise XrayError(f"unknown {protocol.value} command name {name!r}")


def build_command(
    protocol: Protocol, name: str, ts: int, **fields: int
) -> DeviceCommand:
    """Construct a DeviceCommand by name, packing the raw buffer from fields."""
    opcode, info, queue = _resolve_name(protocol, name)
    given = set(fields)
    expected = set(info.fields)
    if given != expected:
        raise XrayError(
            f"inconsistent field set for {name}: got {sorted(given)}, need {sorted(expected)}"
        )
    if protocol is Protocol.SCSI:
        raw = _encode_scsi_raw(opcode, info, fields)
        cmd_class = info.cmd_class
    else:
        raw = _encode_nvme_raw(opcode, info, fields)
        cmd_class = CommandClass.ADMIN if queue is Queue.ADMIN else CommandClass.DATA_TRANSFER
    return DeviceCommand(
        ts=ts,
        protocol=protocol,
        opcode=opcode,
        name=name,
        cmd_class=cmd_class,
        decoded=dict(fields),
        raw=raw,
    )


def encode(cmd: DeviceCommand) -> DevLogRecord:
    """Rebuild the log record for a command; inverse of decode for known opcodes."""
    if cmd.protocol is Protocol.SCSI:
        info = opcode_info(Protocol.SCSI, cmd.opcode, None)
        queue = None
    else:
        queue = Queue.ADMIN if cmd.cmd_class is CommandClass.ADMIN else Queue.IO
        info = opcode_info(Protocol.NVME, cmd.opcode, queue)

    if info.name.startswith("UNKNOWN_"):
        # No field layout to pack; pass the captured buffer through.
        return DevLogRecord(ts=cmd.ts, protocol=cmd.protocol, queue=queue, raw=cmd.raw)

    expected = set(info.fields)
    if set(cmd.decoded) != expected:
        raise XrayError(
            f"inconsistent field set for {info.name}: got {sorted(cmd.decoded)}, "
            f"need {sorted(expected)}"
        )
    if cmd.protocol is Protocol.SCSI:
        raw = _encode_scsi_raw(cmd.opcode, info, cmd.decoded)
    else:
        raw = _encode_nvme_raw(cmd.opcode, info, cmd.decoded)
    return DevLogRecord(ts=cmd.ts, protocol=cmd.protocol, queue=queue, raw=raw)
