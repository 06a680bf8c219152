"""Binary codec for CSI packet logs (.csilog).

Layout, little endian, no padding:

  file:   magic b"CSILOG1\\0" | u32 packet_count | records...
  record: u64 timestamp_us | u16 csi_len | u16 channel_mhz | u8 err_info |
          i8 noise_floor | u8 rate | u8 bandwidth | u8 num_tones | u8 nr |
          u8 nc | u8 rssi | u8 rssi1 | u8 rssi2 | u8 rssi3 |
          u16 payload_len | u8 reserved(=0) |
          csi_len bytes of CSI | payload_len bytes of payload

CSI entries are (i16 re, i16 im) pairs with the tone index varying fastest,
then the transmit antenna, then the receive antenna. The layout is this
project's own and is not wire-compatible with vendor firmware logs.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CSILOG1\x00"

_RECORD_HEADER = struct.Struct("<QHHBbBBBBBBBBBHB")
RECORD_HEADER_SIZE = _RECORD_HEADER.size  # 26 bytes
_FILE_HEADER = struct.Struct("<8sI")

__all__ = [
    "CodecError",
    "TruncationError",
    "CsiMatrix",
    "CsiPacket",
    "LogReadResult",
    "encode_packet",
    "decode_packet",
    "write_log",
    "read_log",
    "write_log_file",
    "read_log_file",
    "filter_packets",
    "MAGIC",
    "RECORD_HEADER_SIZE",
]


class CodecError(ValueError):
    """Malformed packet or log content."""


class TruncationError(CodecError):
    """Input ended before the declared structure was complete."""

    def __init__(self, needed: int, got: int, context: str = "record"):
        self.needed = needed
        self.got = got
        super().__init__(f"truncated {context}: needed {needed} bytes, got {got}")


@dataclass(eq=False)
class CsiMatrix:
    """Per-packet channel estimate, complex with integer 16-bit components.

    ``data`` has shape (nr, nc, num_tones), receive antenna first.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise CodecError(f"csi must be 3-dimensional, got shape {self.data.shape}")

    @property
    def nr(self) -> int:
        return self.data.shape[0]

    @property
    def nc(self) -> int:
        return self.data.shape[1]

    @property
    def num_tones(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        return (isinstance(other, CsiMatrix)
                and self.data.shape == other.data.shape
                and bool(np.array_equal(self.data, other.data)))


@dataclass(eq=False)
class CsiPacket:
    timestamp: int
    csi_len: int
    channel: int
    err_info: int
    noise_floor: int
    rate: int
    bandwidth: int
    num_tones: int
    nr: int
    nc: int
    rssi: int
    rssi1: int
    rssi2: int
    rssi3: int
    payload_len: int
    csi: CsiMatrix
    payload: bytes = b""

    @classmethod
    def build(cls, csi, *, timestamp=0, channel=2462, err_info=0, noise_floor=0,
              rate=0, bandwidth=0, rssi=0, rssi1=0, rssi2=0, rssi3=0, payload=b""):
        """Construct a packet with the length fields derived from its data."""
        matrix = csi if isinstance(csi, CsiMatrix) else CsiMatrix(csi)
        return cls(
            timestamp=timestamp,
            csi_len=matrix.nr * matrix.nc * matrix.num_tones * 4,
            channel=channel,
            err_info=err_info,
            noise_floor=noise_floor,
            rate=rate,
            bandwidth=bandwidth,
            num_tones=matrix.num_tones,
            nr=matrix.nr,
            nc=matrix.nc,
            rssi=rssi,
            rssi1=rssi1,
            rssi2=rssi2,
            rssi3=rssi3,
            payload_len=len(payload),
            csi=matrix,
            payload=bytes(payload),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CsiPacket):
            return NotImplemented
        scalar = ("timestamp", "csi_len", "channel", "err_info", "noise_floor",
                  "rate", "bandwidth", "num_tones", "nr", "nc", "rssi", "rssi1",
                  "rssi2", "rssi3", "payload_len")
        return (all(getattr(self, f) == getattr(other, f) for f in scalar)
                and self.csi == other.csi and self.payload == other.payload)


@dataclass
class LogReadResult:
    """Packets recovered from a log plus any non-fatal parse diagnostics."""

    packets: list[CsiPacket] = field(default_factory=list)
    declared_count: int = 0
    warnings: list[str] = field(default_factory=list)


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, (int, np.integer)) or not (lo <= value <= hi):
        raise CodecError(f"field {name}={value!r} outside [{lo}, {hi}]")


def encode_packet(p: CsiPacket) -> bytes:
    """Serialize one packet record; raises CodecError naming the bad field."""
    _check_range("timestamp", p.timestamp, 0, 2**64 - 1)
    _check_range("csi_len", p.csi_len, 0, 2**16 - 1)
    _check_range("channel", p.channel, 0, 2**16 - 1)
    _check_range("err_info", p.err_info, 0, 255)
    _check_range("noise_floor", p.noise_floor, -128, 127)
    _check_range("rate", p.rate, 0, 255)
    _check_range("bandwidth", p.bandwidth, 0, 255)
    _check_range("num_tones", p.num_tones, 0, 255)
    _check_range("nr", p.nr, 0, 255)
    _check_range("nc", p.nc, 0, 255)
    for name in ("rssi", "rssi1", "rssi2", "rssi3"):
        _check_range(name, getattr(p, name), 0, 255)
    _check_range("payload_len", p.payload_len, 0, 2**16 - 1)

    if p.csi.data.shape != (p.nr, p.nc, p.num_tones):
        raise CodecError(
            f"field csi has shape {p.csi.data.shape}, header says ({p.nr}, {p.nc}, {p.num_tones})")
    if p.csi_len != p.nr * p.nc * p.num_tones * 4:
        raise CodecError(
            f"field csi_len={p.csi_len} != nr*nc*num_tones*4={p.nr * p.nc * p.num_tones * 4}")
    if p.payload_len != len(p.payload):
        raise CodecError(
            f"field payload_len={p.payload_len} != len(payload)={len(p.payload)}")

    re = p.csi.data.real
    im = p.csi.data.imag
    if not (np.all(re == np.round(re)) and np.all(im == np.round(im))):
        raise CodecError("field csi has non-integer components")
    if re.size and (re.max() > 32767 or im.max() > 32767
                    or re.min() < -32768 or im.min() < -32768):
        raise CodecError("field csi component outside int16 range")

    header = _RECORD_HEADER.pack(
        p.timestamp, p.csi_len, p.channel, p.err_info, p.noise_floor, p.rate,
        p.bandwidth, p.num_tones, p.nr, p.nc, p.rssi, p.rssi1, p.rssi2,
        p.rssi3, p.payload_len, 0)
    interleaved = np.empty((p.nr, p.nc, p.num_tones, 2), dtype="<i2")
    interleaved[..., 0] = re.astype("<i2")
    interleaved[..., 1] = im.astype("<i2")
    return header + interleaved.tobytes() + p.payload


def _decode_record(buf: bytes, offset: int) -> tuple[CsiPacket, int]:
    if len(buf) - offset < RECORD_HEADER_SIZE:
        raise TruncationError(RECORD_HEADER_SIZE, len(buf) - offset, "record header")
    (timestamp, csi_len, channel, err_info, noise_floor, rate, bandwidth,
     num_tones, nr, nc, rssi, rssi1, rssi2, rssi3, payload_len,
     _reserved) = _RECORD_HEADER.unpack_from(buf, offset)

    if csi_len != nr * nc * num_tones * 4:
        raise CodecError(
            f"csi_len={csi_len} inconsistent with nr={nr}, nc={nc}, num_tones={num_tones}")
    body = offset + RECORD_HEADER_SIZE
    end = body + csi_len + payload_len
    if len(buf) < end:
        raise TruncationError(end - offset, len(buf) - offset, "record body")

    pairs = np.frombuffer(buf, dtype="<i2", count=csi_len // 2, offset=body)
    pairs = pairs.reshape(nr, nc, num_tones, 2).astype(float)
    matrix = CsiMatrix(pairs[..., 0] + 1j * pairs[..., 1])
    payload = bytes(buf[body + csi_len:end])
    packet = CsiPacket(
        timestamp=timestamp, csi_len=csi_len, channel=channel,
        err_info=err_info, noise_floor=noise_floor, rate=rate,
        bandwidth=bandwidth, num_tones=num_tones, nr=nr, nc=nc, rssi=rssi,
        rssi1=rssi1, rssi2=rssi2, rssi3=rssi3, payload_len=payload_len,
        csi=matrix, payload=payload)
    return packet, end


def decode_packet(buf: bytes) -> CsiPacket:
    """Parse one packet record from the start of the buffer (trailing bytes ignored)."""
    packet, _ = _decode_record(bytes(buf), 0)
    return packet


def write_log(packets) -> bytes:
    """Serialize a packet sequence as a .csilog byte string."""
    records = [encode_packet(p) for p in packets]
    return _FILE_HEADER.pack(MAGIC, len(records)) + b"".join(records)


def read_log(data: bytes) -> LogReadResult:
    """Parse a .csilog byte string, recovering every structurally valid packet.

    A truncated or malformed trailing record stops parsing and is reported as
    a warning; a bad magic raises CodecError.
    """
    data = bytes(data)
    if len(data) < _FILE_HEADER.size:
        raise TruncationError(_FILE_HEADER.size, len(data), "file header")
    magic, declared = _FILE_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CodecError(f"bad magic {magic!r}, expected {MAGIC!r}")

    result = LogReadResult(declared_count=declared)
    offset = _FILE_HEADER.size
    for index in range(declared):
        try:
            packet, offset = _decode_record(data, offset)
        except CodecError as exc:
            result.warnings.append(f"packet {index}: {exc}")
            return result
        result.packets.append(packet)
    if offset != len(data):
        result.warnings.append(
            f"{len(data) - offset} trailing bytes after {declared} declared packets")
    return result


def write_log_file(path, packets) -> None:
    with open(path, "wb") as fh:
        fh.write(write_log(packets))


def read_log_file(path) -> LogReadResult:
    with open(path, "rb") as fh:
        return read_log(fh.read())


def filter_packets(packets) -> list[CsiPacket]:
    """Keep only packets usable for localization: err_info 0 and a full
    3x3x56 CSI matrix; order is preserved."""
    return [p for p in packets
            if p.err_info == 0 and p.nr == 3 and p.nc == 3 and p.num_tones == 56]
