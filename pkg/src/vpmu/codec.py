"""Synchrophasor data/command frame codec.

Wire layout (big-endian throughout):

    data frame     SYNC(2)=0xAA01 | FRAMESIZE(2) | IDCODE(2) | SOC(4) |
                   FRACSEC(4) | per block [ STAT(2) | phasors | FREQ | DFREQ ]
                   | CHK(2)
    command frame  SYNC(2)=0xAA41 | FRAMESIZE(2) | IDCODE(2) | SOC(4) |
                   FRACSEC(4) | CMD(2) | CHK(2)

Phasors are rectangular (re, im) pairs: 2 x int16 in fixed16 format, 2 x
float32 otherwise.  FREQ carries the deviation from nominal in mHz, DFREQ
the ROCOF in Hz/s; both are int16 (mHz, Hz/s x 100) in fixed16 and float32
otherwise.  CHK is CRC-CCITT over all preceding bytes.

Stream shape (blocks, phasors per block, number format) is out-of-band
metadata: there are no configuration frames, so decoding requires a
:class:`FrameLayout` describing the stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

TIME_BASE = 1_000_000  # fracsec ticks per second

SYNC_DATA = 0xAA01
SYNC_COMMAND = 0xAA41

HEADER_BYTES = 14  # SYNC + FRAMESIZE + IDCODE + SOC + FRACSEC
CRC_BYTES = 2
MAX_FRAME_BYTES = 0xFFFF  # FRAMESIZE is a 16-bit field

CMD_DATA_OFF = 1
CMD_DATA_ON = 2

# fixed16 scales: phasors get 50 % headroom above the 1.0 pu nominal
# magnitude; FREQ counts are mHz of deviation; DFREQ counts are Hz/s x 100.
PHASOR_SCALE = 1.5 / 32767.0
FREQ_SCALE = 1.0
ROCOF_SCALE = 0.01

Phasor = complex  # rectangular per-unit phasor


class CodecError(ValueError):
    """Base class for frame encode/decode failures."""


class FramingError(CodecError):
    """SYNC word does not identify a supported frame type."""


class FrameLengthError(CodecError):
    """Input shorter than a frame or FRAMESIZE disagrees with the data."""


class ChecksumError(CodecError):
    """CRC check failed."""


class FrameTooLargeError(CodecError):
    """Encoded frame would exceed the 16-bit FRAMESIZE capacity."""


class FixedPointOverflowError(CodecError):
    """Value does not fit a signed 16-bit count at the given scale."""


class UnknownCommandError(CodecError):
    """Command code outside the supported {data_off, data_on} set."""


class FrameFormat(Enum):
    """Number format applied uniformly to phasors, FREQ and DFREQ."""

    FIXED16 = "fixed16"
    FLOAT32 = "float32"

    @property
    def phasor_bytes(self) -> int:
        return 4 if self is FrameFormat.FIXED16 else 8

    @property
    def scalar_bytes(self) -> int:
        return 2 if self is FrameFormat.FIXED16 else 4


@dataclass(frozen=True, order=True)
class Timestamp:
    """Second-of-century plus fractional-second ticks (1/TIME_BASE s)."""

    soc: int
    fracsec: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.soc <= 0xFFFFFFFF:
            raise ValueError(f"soc {self.soc} outside unsigned 32-bit range")
        if not 0 <= self.fracsec < TIME_BASE:
            raise ValueError(f"fracsec {self.fracsec} not in [0, {TIME_BASE})")

    @property
    def seconds(self) -> float:
        return self.soc + self.fracsec / TIME_BASE

    @property
    def total_us(self) -> int:
        return self.soc * TIME_BASE + self.fracsec

    @classmethod
    def from_us(cls, total_us: int) -> "Timestamp":
        return cls(total_us // TIME_BASE, total_us % TIME_BASE)


@dataclass(frozen=True)
class PmuBlock:
    """One PMU's contribution to a data frame."""

    phasors: tuple[Phasor, ...]
    freq_dev_mhz: float = 0.0
    rocof_hzps: float = 0.0
    stat: int = 0


@dataclass(frozen=True)
class DataFrame:
    """A timestamped measurement frame carrying one block per PMU."""

    idcode: int
    timestamp: Timestamp
    blocks: tuple[PmuBlock, ...]
    fmt: FrameFormat = FrameFormat.FLOAT32

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ValueError("a data frame needs at least one block")
        if not 0 <= self.idcode <= 0xFFFF:
            raise ValueError(f"idcode {self.idcode} outside 16-bit range")

    @property
    def layout(self) -> "FrameLayout":
        return FrameLayout(self.fmt, tuple(len(b.phasors) for b in self.blocks))


@dataclass(frozen=True)
class CommandFrame:
    """data_on / data_off control frame addressed to one stream."""

    idcode: int
    timestamp: Timestamp
    command: int

    def __post_init__(self) -> None:
        if self.command not in (CMD_DATA_OFF, CMD_DATA_ON):
            raise UnknownCommandError(f"unsupported command code {self.command}")


@dataclass(frozen=True)
class FrameLayout:
    """Out-of-band stream shape needed to decode a data frame."""

    fmt: FrameFormat
    phasor_counts: tuple[int, ...]

    def byte_length(self) -> int:
        body = sum(
            2 + n * self.fmt.phasor_bytes + 2 * self.fmt.scalar_bytes
            for n in self.phasor_counts
        )
        return HEADER_BYTES + body + CRC_BYTES


def crc_ccitt(data: bytes) -> int:
    """CRC-CCITT: poly 0x1021, init 0xFFFF, no reflection, no final XOR."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def quantize_fixed16(x: float, scale: float) -> int:
    """Round x to the nearest signed 16-bit count of `scale` units."""
    counts = round(x / scale)
    if not -32768 <= counts <= 32767:
        raise FixedPointOverflowError(
            f"{x!r} is {counts} counts at scale {scale!r}, outside int16"
        )
    return counts


def dequantize_fixed16(counts: int, scale: float) -> float:
    return counts * scale


def data_frame_size(n_blocks: int, n_phasors_per_block: int, fmt: FrameFormat) -> int:
    """Byte length of a data frame with uniform per-block phasor counts."""
    if n_blocks < 0 or n_phasors_per_block < 0:
        raise ValueError("block and phasor counts must be non-negative")
    block = 2 + n_phasors_per_block * fmt.phasor_bytes + 2 * fmt.scalar_bytes
    return HEADER_BYTES + n_blocks * block + CRC_BYTES


def _pack_header(sync: int, size: int, idcode: int, ts: Timestamp) -> bytes:
    return struct.pack(">HHHII", sync, size, idcode, ts.soc, ts.fracsec)


def encode_data_frame(frame: DataFrame) -> bytes:
    """Serialize a data frame; CHK is computed over everything before it."""
    size = frame.layout.byte_length()
    if size > MAX_FRAME_BYTES:
        raise FrameTooLargeError(f"frame of {size} bytes exceeds FRAMESIZE capacity")
    out = bytearray(_pack_header(SYNC_DATA, size, frame.idcode, frame.timestamp))
    fixed = frame.fmt is FrameFormat.FIXED16
    for block in frame.blocks:
        out += struct.pack(">H", block.stat & 0xFFFF)
        for ph in block.phasors:
            if fixed:
                out += struct.pack(
                    ">hh",
                    quantize_fixed16(ph.real, PHASOR_SCALE),
                    quantize_fixed16(ph.imag, PHASOR_SCALE),
                )
            else:
                out += struct.pack(">ff", ph.real, ph.imag)
        if fixed:
            out += struct.pack(
                ">hh",
                quantize_fixed16(block.freq_dev_mhz, FREQ_SCALE),
                quantize_fixed16(block.rocof_hzps, ROCOF_SCALE),
            )
        else:
            out += struct.pack(">ff", block.freq_dev_mhz, block.rocof_hzps)
    out += struct.pack(">H", crc_ccitt(bytes(out)))
    return bytes(out)


def _check_envelope(raw: bytes, expected_sync: int) -> None:
    if len(raw) < HEADER_BYTES + CRC_BYTES:
        raise FrameLengthError(f"{len(raw)} bytes is shorter than any frame")
    sync = struct.unpack_from(">H", raw, 0)[0]
    if sync != expected_sync:
        raise FramingError(f"bad SYNC 0x{sync:04X}, expected 0x{expected_sync:04X}")
    declared = struct.unpack_from(">H", raw, 2)[0]
    if declared != len(raw):
        raise FrameLengthError(f"FRAMESIZE says {declared} bytes, got {len(raw)}")
    chk = struct.unpack_from(">H", raw, len(raw) - 2)[0]
    if chk != crc_ccitt(raw[:-2]):
        raise ChecksumError("frame CRC mismatch")


def decode_data_frame(raw: bytes, layout: FrameLayout) -> DataFrame:
    """Parse a data frame whose stream shape is described by `layout`."""
    _check_envelope(raw, SYNC_DATA)
    if len(raw) != layout.byte_length():
        raise FrameLengthError(
            f"{len(raw)}-byte frame does not match the {layout.byte_length()}-byte layout"
        )
    idcode, soc, fracsec = struct.unpack_from(">HII", raw, 4)
    pos = HEADER_BYTES
    fixed = layout.fmt is FrameFormat.FIXED16
    blocks = []
    for n_phasors in layout.phasor_counts:
        stat = struct.unpack_from(">H", raw, pos)[0]
        pos += 2
        phasors = []
        for _ in range(n_phasors):
            if fixed:
                re, im = struct.unpack_from(">hh", raw, pos)
                phasors.append(
                    complex(
                        dequantize_fixed16(re, PHASOR_SCALE),
                        dequantize_fixed16(im, PHASOR_SCALE),
                    )
                )
            else:
                re, im = struct.unpack_from(">ff", raw, pos)
                phasors.append(complex(re, im))
            pos += layout.fmt.phasor_bytes
        if fixed:
            freq, rocof = struct.unpack_from(">hh", raw, pos)
            freq_dev = dequantize_fixed16(freq, FREQ_SCALE)
            rocof_v = dequantize_fixed16(rocof, ROCOF_SCALE)
        else:
            freq_dev, rocof_v = struct.unpack_from(">ff", raw, pos)
        pos += 2 * layout.fmt.scalar_bytes
        blocks.append(
            PmuBlock(
                phasors=tuple(phasors),
                freq_dev_mhz=freq_dev,
                rocof_hzps=rocof_v,
                stat=stat,
            )
        )
    return DataFrame(
        idcode=idcode,
        timestamp=Timestamp(soc, fracsec),
        blocks=tuple(blocks),
        fmt=layout.fmt,
    )


COMMAND_FRAME_BYTES = HEADER_BYTES + 2 + CRC_BYTES


def encode_command(cmd: CommandFrame) -> bytes:
    out = bytearray(
        _pack_header(SYNC_COMMAND, COMMAND_FRAME_BYTES, cmd.idcode, cmd.timestamp)
    )
    out += struct.pack(">H", cmd.command)
    out += struct.pack(">H", crc_ccitt(bytes(out)))
    return bytes(out)


def decode_command(raw: bytes) -> CommandFrame:
    _check_envelope(raw, SYNC_COMMAND)
    if len(raw) != COMMAND_FRAME_BYTES:
        raise FrameLengthError(f"command frame must be {COMMAND_FRAME_BYTES} bytes")
    idcode, soc, fracsec = struct.unpack_from(">HII", raw, 4)
    code = struct.unpack_from(">H", raw, HEADER_BYTES)[0]
    if code not in (CMD_DATA_OFF, CMD_DATA_ON):
        raise UnknownCommandError(f"unknown command code 0x{code:04X}")
    return CommandFrame(idcode=idcode, timestamp=Timestamp(soc, fracsec), command=code)
