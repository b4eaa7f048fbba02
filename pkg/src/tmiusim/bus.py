"""SDIO wire model: command/response framing, data blocks, virtual card.

The bus is untimed at the logic level; cycle accounting lives with the guard
unit, which owns the master side. The wire supports one-shot bit-flip fault
injection on command frames and on data blocks in either direction, and an
optional line-oriented transcript of everything that crosses it.

Command frames are 48 bits (start/direction bits, 6-bit index, 32-bit
argument, CRC7, end bit). R1 responses echo the index with a 32-bit status;
R2 responses carry a 128-bit register. Data blocks are 512 bytes followed by
a 16-bit CRC.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

from .crypto import SECTOR_SIZE, crc7, crc16
from .identity import CardIdentity
from .image import NvmImage

CMD_GO_IDLE = 0
CMD_ALL_SEND_CID = 2
CMD_SELECT = 7
CMD_SEND_CSD = 9
CMD_STOP_TRANSMISSION = 12
CMD_SET_BLOCKLEN = 16
CMD_READ_SINGLE = 17
CMD_READ_MULTIPLE = 18
CMD_WRITE_SINGLE = 24
CMD_WRITE_MULTIPLE = 25

R2_COMMANDS = (CMD_ALL_SEND_CID, CMD_SEND_CSD)

STATUS_OUT_OF_RANGE = 1 << 31
STATUS_BLOCK_LEN_ERROR = 1 << 29
STATUS_ILLEGAL_COMMAND = 1 << 22

TOKEN_CRC_OK = 0x05
TOKEN_CRC_ERR = 0x0B

COMMAND_FRAME_SIZE = 6
R1_FRAME_SIZE = 6
R2_FRAME_SIZE = 17
DATA_FRAME_SIZE = SECTOR_SIZE + 2

DEFAULT_LINE_RATE = 25_000_000  # bytes/s, rated card line speed


class FramingError(ValueError):
    pass


@dataclass(frozen=True)
class CommandFrame:
    index: int
    argument: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < 64:
            raise ValueError("command index is 6 bits")
        if not 0 <= self.argument <= 0xFFFFFFFF:
            raise ValueError("argument is 32 bits")

    def to_bytes(self) -> bytes:
        body = struct.pack(">BI", 0x40 | self.index, self.argument)
        return body + bytes([(crc7(body) << 1) | 1])


def parse_command(raw: bytes) -> tuple[CommandFrame, bool]:
    """Decode a command frame; the flag reports whether its CRC7 holds."""
    if len(raw) != COMMAND_FRAME_SIZE:
        raise FramingError("command frame must be 6 bytes")
    first, argument = struct.unpack(">BI", raw[:5])
    if first & 0xC0 != 0x40 or raw[5] & 1 != 1:
        raise FramingError("bad start/direction/end bits")
    crc_ok = raw[5] >> 1 == crc7(raw[:5])
    return CommandFrame(index=first & 0x3F, argument=argument), crc_ok


@dataclass(frozen=True)
class ResponseFrame:
    index: int
    status: int = 0
    register: bytes | None = None  # set for R2 responses

    def to_bytes(self) -> bytes:
        if self.register is not None:
            if len(self.register) != 16:
                raise ValueError("R2 register must be 16 bytes")
            return bytes([0x3F]) + self.register
        body = struct.pack(">BI", self.index & 0x3F, self.status)
        return body + bytes([(crc7(body) << 1) | 1])


def parse_response(raw: bytes) -> tuple[ResponseFrame, bool]:
    if len(raw) == R2_FRAME_SIZE:
        if raw[0] != 0x3F:
            raise FramingError("bad R2 reserved bits")
        # The R2 payload carries its own CRC inside the register image.
        return ResponseFrame(index=0x3F, register=raw[1:]), True
    if len(raw) == R1_FRAME_SIZE:
        first, status = struct.unpack(">BI", raw[:5])
        if first & 0xC0 != 0x00 or raw[5] & 1 != 1:
            raise FramingError("bad start/direction/end bits")
        crc_ok = raw[5] >> 1 == crc7(raw[:5])
        return ResponseFrame(index=first & 0x3F, status=status), crc_ok
    raise FramingError(f"unexpected response length {len(raw)}")


@dataclass(frozen=True)
class DataBlock:
    payload: bytes
    crc: int

    def __post_init__(self) -> None:
        if len(self.payload) != SECTOR_SIZE:
            raise ValueError("data block payload must be 512 bytes")
        if not 0 <= self.crc <= 0xFFFF:
            raise ValueError("crc is 16 bits")

    @classmethod
    def for_payload(cls, payload: bytes) -> "DataBlock":
        return cls(payload=payload, crc=crc16(payload))

    @property
    def crc_ok(self) -> bool:
        return crc16(self.payload) == self.crc

    def to_bytes(self) -> bytes:
        return self.payload + struct.pack(">H", self.crc)


def parse_data(raw: bytes) -> DataBlock:
    if len(raw) != DATA_FRAME_SIZE:
        raise FramingError("data frame must be 514 bytes")
    (crc,) = struct.unpack(">H", raw[SECTOR_SIZE:])
    return DataBlock(payload=raw[:SECTOR_SIZE], crc=crc)


class CardState(Enum):
    IDLE = "idle"
    STANDBY = "standby"
    TRANSFER = "transfer"


class VirtualCard:
    """SD card answering the minimal command subset over one exclusive bus."""

    def __init__(
        self,
        identity: CardIdentity,
        backing: NvmImage,
        line_rate: int = DEFAULT_LINE_RATE,
    ):
        self.identity = identity
        self.backing = backing
        self.line_rate = line_rate
        self.state = CardState.IDLE
        self.io_suspended = False
        self._read_lba: int | None = None
        self._read_stream = False
        self._write_lba: int | None = None
        self._write_stream = False

    @property
    def geometry(self) -> int:
        return self.backing.total_sectors

    def power_cycle(self) -> None:
        self.state = CardState.IDLE
        self.io_suspended = False
        self._clear_transfers()

    def suspend_io(self) -> None:
        """Suspend all I/O until power cycle; idempotent and irreversible."""
        self.io_suspended = True
        self._clear_transfers()

    def _clear_transfers(self) -> None:
        self._read_lba = None
        self._read_stream = False
        self._write_lba = None
        self._write_stream = False

    def issue(self, raw: bytes) -> bytes | None:
        """Handle a raw command frame; None models a silent card."""
        if self.io_suspended:
            return None
        frame, crc_ok = parse_command(raw)
        if not crc_ok:
            return None
        return self._dispatch(frame)

    def _dispatch(self, frame: CommandFrame) -> bytes | None:
        idx, arg = frame.index, frame.argument
        if idx == CMD_GO_IDLE:
            self.state = CardState.IDLE
            self._clear_transfers()
            return None  # CMD0 carries no response
        if idx == CMD_ALL_SEND_CID:
            if self.state is not CardState.IDLE:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            self.state = CardState.STANDBY
            return ResponseFrame(index=0x3F, register=self.identity.cid).to_bytes()
        if idx == CMD_SEND_CSD:
            if self.state is not CardState.STANDBY:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            return ResponseFrame(index=0x3F, register=self.identity.csd).to_bytes()
        if idx == CMD_SELECT:
            if self.state is not CardState.STANDBY:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            self.state = CardState.TRANSFER
            return self._r1(idx, 0)
        if idx == CMD_SET_BLOCKLEN:
            if self.state is not CardState.TRANSFER:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            if arg != SECTOR_SIZE:
                return self._r1(idx, STATUS_BLOCK_LEN_ERROR)
            return self._r1(idx, 0)
        if idx == CMD_STOP_TRANSMISSION:
            self._clear_transfers()
            return self._r1(idx, 0)
        if idx in (CMD_READ_SINGLE, CMD_READ_MULTIPLE):
            if self.state is not CardState.TRANSFER:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            if arg >= self.geometry:
                return self._r1(idx, STATUS_OUT_OF_RANGE)
            self._read_lba = arg
            self._read_stream = idx == CMD_READ_MULTIPLE
            return self._r1(idx, 0)
        if idx in (CMD_WRITE_SINGLE, CMD_WRITE_MULTIPLE):
            if self.state is not CardState.TRANSFER:
                return self._r1(idx, STATUS_ILLEGAL_COMMAND)
            if arg >= self.geometry:
                return self._r1(idx, STATUS_OUT_OF_RANGE)
            self._write_lba = arg
            self._write_stream = idx == CMD_WRITE_MULTIPLE
            return self._r1(idx, 0)
        return self._r1(idx, STATUS_ILLEGAL_COMMAND)

    @staticmethod
    def _r1(index: int, status: int) -> bytes:
        return ResponseFrame(index=index, status=status).to_bytes()

    def read_block(self, lba: int) -> DataBlock | None:
        """Serve one stored sector with a freshly computed CRC16."""
        if self.io_suspended or self.state is not CardState.TRANSFER:
            return None
        return DataBlock.for_payload(self.backing.read_sector(lba))

    def write_block(self, lba: int, block: DataBlock) -> int | None:
        """Commit a block if its CRC holds; report acceptance via token."""
        if self.io_suspended or self.state is not CardState.TRANSFER:
            return None
        if not block.crc_ok:
            return TOKEN_CRC_ERR
        self.backing.write_sector(lba, block.payload)
        return TOKEN_CRC_OK

    def take_read_block(self) -> bytes | None:
        """Next pending data frame of an open read transfer, raw on the wire."""
        if self.io_suspended or self.state is not CardState.TRANSFER:
            return None
        if self._read_lba is None or self._read_lba >= self.geometry:
            return None
        block = self.read_block(self._read_lba)
        if block is None:
            return None
        if self._read_stream:
            self._read_lba += 1
        else:
            self._read_lba = None
        return block.to_bytes()

    def receive_write_block(self, raw: bytes) -> int | None:
        """Accept one raw data frame of an open write transfer."""
        if self.io_suspended or self.state is not CardState.TRANSFER:
            return None
        if self._write_lba is None or self._write_lba >= self.geometry:
            return None
        token = self.write_block(self._write_lba, parse_data(raw))
        if token is None:
            return None
        if self._write_stream and token == TOKEN_CRC_OK:
            self._write_lba += 1
        elif not self._write_stream:
            self._write_lba = None
        return token


@dataclass
class _FaultPlan:
    countdown: int
    byte_offset: int
    bit: int


class SdioBus:
    """One master, one card; applies scheduled wire faults and keeps a trace."""

    def __init__(self, card: VirtualCard, ledger=None, trace: bool = False):
        self.card = card
        self.ledger = ledger
        self.trace_enabled = trace
        self.transcript: list[str] = []
        self._faults: dict[str, list[_FaultPlan]] = {"cmd": [], "c2h": [], "h2c": []}

    # Fault scheduling: the nth upcoming frame of the given kind gets one bit
    # flipped in flight. Boot sequences recover from any single such fault.
    def inject_command_fault(self, nth: int = 1, byte_offset: int = 0, bit: int = 0) -> None:
        self._faults["cmd"].append(_FaultPlan(nth, byte_offset, bit))

    def inject_card_to_host_fault(self, nth: int = 1, byte_offset: int = 0, bit: int = 0) -> None:
        self._faults["c2h"].append(_FaultPlan(nth, byte_offset, bit))

    def inject_host_to_card_fault(self, nth: int = 1, byte_offset: int = 0, bit: int = 0) -> None:
        self._faults["h2c"].append(_FaultPlan(nth, byte_offset, bit))

    def _apply_faults(self, kind: str, raw: bytes) -> bytes:
        out = raw
        for plan in list(self._faults[kind]):
            plan.countdown -= 1
            if plan.countdown == 0:
                mutated = bytearray(out)
                mutated[plan.byte_offset % len(mutated)] ^= 1 << (plan.bit & 7)
                out = bytes(mutated)
                self._faults[kind].remove(plan)
        return out

    def _log(self, direction: str, kind: str, raw: bytes) -> None:
        if not self.trace_enabled:
            return
        t = self.ledger.cycles if self.ledger is not None else 0
        self.transcript.append(f"t={t} DIR={direction} KIND={kind} {raw.hex()}")

    def command(self, index: int, argument: int = 0) -> ResponseFrame | None:
        """Send one command frame; None models no response (bad CRC, silence)."""
        raw = CommandFrame(index=index, argument=argument).to_bytes()
        raw = self._apply_faults("cmd", raw)
        self._log("H→C", "CMD", raw)
        reply = self.card.issue(raw)
        if reply is None:
            return None
        self._log("C→H", "RSP", reply)
        frame, crc_ok = parse_response(reply)
        if not crc_ok:
            return None
        return frame

    def fetch_block(self) -> DataBlock | None:
        """Pull the next data frame of an open read transfer off the card."""
        raw = self.card.take_read_block()
        if raw is None:
            return None
        raw = self._apply_faults("c2h", raw)
        self._log("C→H", "DAT", raw)
        return parse_data(raw)

    def push_block(self, block: DataBlock) -> int | None:
        """Send one data frame of an open write transfer to the card."""
        raw = self._apply_faults("h2c", block.to_bytes())
        self._log("H→C", "DAT", raw)
        token = self.card.receive_write_block(raw)
        if token is not None:
            self._log("C→H", "TOK", bytes([token]))
        return token

    def write_transcript(self, path) -> None:
        from pathlib import Path

        Path(path).write_text("\n".join(self.transcript) + ("\n" if self.transcript else ""))
