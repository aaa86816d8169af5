"""Bit-accurate CAN 2.0A framing.

Serialization with bit stuffing and CRC-15, deserialization with stuff/CRC/form
checking, arbitration comparison, and frame-duration accounting.  Standard
(11-bit) identifiers only; extended frames are rejected.

All functions here are pure and hold no shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CrcError, DuplicateId, FormError, InvalidFrame, StuffError

DOMINANT = 0
RECESSIVE = 1

MAX_STD_ID = 0x7FF
MAX_DLC = 8

# CAN 2.0 generator polynomial x^15+x^14+x^10+x^8+x^7+x^4+x^3+1
CRC15_POLY = 0x4599

# Fixed-form tail after the stuffed region: CRC delimiter, ACK slot,
# ACK delimiter, 7xEOF, 3x intermission.
_TAIL_BITS = 13
_EOF_BITS = 7
_INTERMISSION_BITS = 3

# Index of the ACK slot counted from the end of the full bitstream.
ACK_SLOT_FROM_END = 12


@dataclass
class CanFrame:
    """One CAN 2.0A frame: 11-bit identifier, 0-8 byte payload.

    ``timestamp`` is the start-of-frame time in bus bit ticks, set by the
    bus when the frame is transmitted; it never participates in equality.
    """

    can_id: int
    payload: bytes = b""
    rtr: bool = False
    dlc: int | None = None
    timestamp: int | None = field(default=None, compare=False)

    def __post_init__(self):
        self.payload = bytes(self.payload)
        if self.dlc is None:
            self.dlc = len(self.payload)
        self.validate()

    def validate(self):
        if not 0 <= self.can_id <= MAX_STD_ID:
            raise InvalidFrame(f"id 0x{self.can_id:X} outside 11-bit range")
        if not 0 <= self.dlc <= MAX_DLC:
            raise InvalidFrame(f"dlc {self.dlc} outside [0, 8]")
        if self.rtr:
            if self.payload:
                raise InvalidFrame("remote frame carries no payload")
        elif len(self.payload) != self.dlc:
            raise InvalidFrame(
                f"payload length {len(self.payload)} != dlc {self.dlc}")

    @property
    def arbitration_field(self) -> int:
        """12-bit arbitration value: identifier then RTR bit."""
        return (self.can_id << 1) | int(self.rtr)


@dataclass
class FrameBitstream:
    """Dominant(0)/recessive(1) levels from SOF through intermission."""

    bits: list[int]
    stuff_count: int
    nominal_bits: int

    def __len__(self):
        return len(self.bits)

    def bus_view(self) -> list[int]:
        """Levels as seen on the wire when at least one receiver is active:
        the ACK slot is driven dominant by the bus."""
        out = list(self.bits)
        out[len(out) - ACK_SLOT_FROM_END] = DOMINANT
        return out


def int_to_bits(value: int, width: int) -> list[int]:
    return [(value >> i) & 1 for i in range(width - 1, -1, -1)]


def bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | b
    return out


def crc15(bits) -> int:
    """CRC-15 over a bit sequence with the CAN 2.0 generator polynomial."""
    reg = 0
    for b in bits:
        if ((reg >> 14) & 1) ^ b:
            reg = ((reg << 1) ^ CRC15_POLY) & 0x7FFF
        else:
            reg = (reg << 1) & 0x7FFF
    return reg


def stuff_bits(bits) -> tuple[list[int], int]:
    """Insert a complementary bit after every run of 5 identical bits.

    Stuff bits themselves participate in subsequent run counting, matching
    the transmitter rule.  Returns (stuffed bits, number inserted).
    """
    out: list[int] = []
    run_val = None
    run_len = 0
    inserted = 0
    for b in bits:
        out.append(b)
        if b == run_val:
            run_len += 1
        else:
            run_val, run_len = b, 1
        if run_len == 5:
            s = 1 - b
            out.append(s)
            inserted += 1
            run_val, run_len = s, 1
    return out, inserted


def destuff_bits(bits) -> list[int]:
    """Inverse of :func:`stuff_bits` over a complete stuffed region.

    Raises StuffError on a run of 6 identical bits (missing stuff bit).
    """
    reader = _StuffedReader(bits)
    out = []
    while reader.pos < len(bits):
        out.append(reader.read())
    return out


class _StuffedReader:
    """Sequential destuffing cursor over a stuffed bit sequence.

    After every run of 5 identical bits the following bit is consumed as a
    stuff bit and checked to be the complement; the stuff bit seeds the next
    run, exactly mirroring the transmitter.
    """

    def __init__(self, bits):
        self.bits = bits
        self.pos = 0
        self._run_val = None
        self._run_len = 0

    def _raw(self) -> int:
        if self.pos >= len(self.bits):
            raise FormError("truncated frame")
        b = self.bits[self.pos]
        self.pos += 1
        return b

    def read(self) -> int:
        b = self._raw()
        if b == self._run_val:
            self._run_len += 1
        else:
            self._run_val, self._run_len = b, 1
        if self._run_len == 5:
            s = self._raw()
            if s == b:
                raise StuffError(
                    f"six consecutive identical bits ending at {self.pos}")
            self._run_val, self._run_len = s, 1
        return b

    def read_many(self, n: int) -> list[int]:
        return [self.read() for _ in range(n)]


def nominal_frame_bits(dlc: int, rtr: bool = False) -> int:
    """Unstuffed frame length: SOF, ID, RTR, IDE, r0, DLC, data, CRC,
    CRC delimiter, ACK slot, ACK delimiter, EOF(7), intermission(3)."""
    data = 0 if rtr else 8 * dlc
    return 1 + 11 + 1 + 1 + 1 + 4 + data + 15 + 1 + 1 + 1 + _EOF_BITS + _INTERMISSION_BITS


def encode_frame(frame: CanFrame) -> FrameBitstream:
    """Serialize a frame to bus levels, SOF through intermission.

    Stuffing covers SOF through the CRC sequence; the tail (delimiters, ACK,
    EOF, intermission) is fixed-form and never stuffed.  The ACK slot is
    emitted recessive, i.e. the transmitter's view of the wire.
    """
    frame.validate()
    bits = [DOMINANT]                                # SOF
    bits += int_to_bits(frame.can_id, 11)
    bits.append(int(frame.rtr))
    bits.append(DOMINANT)                            # IDE: standard frame
    bits.append(DOMINANT)                            # r0
    bits += int_to_bits(frame.dlc, 4)
    if not frame.rtr:
        for byte in frame.payload:
            bits += int_to_bits(byte, 8)
    bits += int_to_bits(crc15(bits), 15)

    stuffed, stuff_count = stuff_bits(bits)
    stuffed.append(RECESSIVE)                        # CRC delimiter
    stuffed.append(RECESSIVE)                        # ACK slot (tx view)
    stuffed.append(RECESSIVE)                        # ACK delimiter
    stuffed += [RECESSIVE] * _EOF_BITS
    stuffed += [RECESSIVE] * _INTERMISSION_BITS
    return FrameBitstream(
        bits=stuffed,
        stuff_count=stuff_count,
        nominal_bits=len(bits) + _TAIL_BITS,
    )


def decode_frame(bits) -> CanFrame:
    """Parse bus levels back to a frame, verifying stuffing, CRC and form.

    Accepts both the transmitter view (ACK recessive) and the bus view
    (ACK driven dominant).  The reserved r0 bit is accepted at either level,
    as receivers must per CAN 2.0.
    """
    if isinstance(bits, FrameBitstream):
        bits = bits.bits
    reader = _StuffedReader(bits)

    if reader.read() != DOMINANT:
        raise FormError("SOF not dominant")
    can_id = bits_to_int(reader.read_many(11))
    rtr = bool(reader.read())
    if reader.read() != DOMINANT:
        raise FormError("extended (29-bit) frames unsupported")
    reader.read()                                    # r0, either level
    dlc = bits_to_int(reader.read_many(4))
    if dlc > MAX_DLC:
        raise FormError(f"dlc {dlc} outside [0, 8]")
    payload = bytearray()
    if not rtr:
        for _ in range(dlc):
            payload.append(bits_to_int(reader.read_many(8)))
    crc_rx = bits_to_int(reader.read_many(15))

    # Tail is fixed-form, read raw (no destuffing past the CRC sequence).
    pos = reader.pos
    tail = bits[pos:pos + _TAIL_BITS]
    if len(tail) < _TAIL_BITS:
        raise FormError("truncated frame tail")
    if tail[0] != RECESSIVE:
        raise FormError("CRC delimiter not recessive")

    payload = bytes(payload)
    # Recompute the CRC over the destuffed header+data bits.
    header = [DOMINANT] + int_to_bits(can_id, 11) + [int(rtr), DOMINANT, DOMINANT]
    header += int_to_bits(dlc, 4)
    if not rtr:
        for byte in payload:
            header += int_to_bits(byte, 8)
    if crc15(header) != crc_rx:
        raise CrcError(
            f"crc mismatch: got 0x{crc_rx:04X}, want 0x{crc15(header):04X}")

    # ACK slot (tail[1]) may be dominant (acked) or recessive (tx view).
    if tail[2] != RECESSIVE:
        raise FormError("ACK delimiter not recessive")
    if any(b != RECESSIVE for b in tail[3:3 + _EOF_BITS]):
        raise FormError("EOF not recessive")
    if any(b != RECESSIVE for b in tail[3 + _EOF_BITS:]):
        raise FormError("intermission not recessive")
    if pos + _TAIL_BITS != len(bits):
        raise FormError("trailing bits after intermission")
    return CanFrame(can_id=can_id, payload=payload, rtr=rtr, dlc=dlc)


def frame_bits(frame: CanFrame) -> int:
    """Total on-wire bit count (nominal + stuff), EOF and intermission included."""
    enc = encode_frame(frame)
    return len(enc.bits)


def frame_duration_us(frame: CanFrame, bitrate: float) -> float:
    """On-wire duration in microseconds at the given bitrate."""
    if bitrate <= 0:
        raise InvalidFrame(f"bitrate must be positive, got {bitrate}")
    return frame_bits(frame) * 1e6 / bitrate


def worst_case_frame_bits(dlc: int = 8) -> int:
    """Calibration bound on a frame's on-wire length: the nominal bit count
    inflated by a uniform worst-case stuffing allowance of one stuff bit per
    three frame bits (x4/3, rounded up).

    This pessimistic allowance covers resynchronisation overheads and is the
    published timing convention of the reference hardware testbed: an 8-byte
    frame (111 nominal bits) budgets to 148 bit times, i.e. 296 us at
    500 kbit/s.  The codec's true stuffing maximum is lower (135 bits for an
    8-byte frame); this function is a calibration figure, not a codec bound.
    """
    nominal = nominal_frame_bits(dlc)
    return -(-nominal * 4 // 3)


def worst_case_frame_us(dlc: int = 8, bitrate: float = 500_000.0) -> float:
    if bitrate <= 0:
        raise InvalidFrame(f"bitrate must be positive, got {bitrate}")
    return worst_case_frame_bits(dlc) * 1e6 / bitrate


def arbitration_winner(contenders) -> CanFrame:
    """Resolve bus arbitration among frames starting at the same bit time.

    The frame whose arbitration field (identifier, then RTR) carries the
    first dominant bit where the others are recessive wins, i.e. the
    numerically lowest field.  A data frame beats a remote frame with the
    same identifier.  Two contenders with identical arbitration fields are
    a scenario error (CAN forbids duplicate transmitters).
    """
    frames = list(contenders)
    if not frames:
        raise InvalidFrame("arbitration requires at least one contender")
    for f in frames:
        f.validate()
    frames.sort(key=lambda f: f.arbitration_field)
    if len(frames) > 1 and frames[0].arbitration_field == frames[1].arbitration_field:
        raise DuplicateId(
            f"two contenders share arbitration field 0x{frames[0].arbitration_field:03X}")
    return frames[0]


def error_flag_bits() -> list[int]:
    """Active error flag: a burst of 6 dominant bits (deliberate stuff violation)."""
    return [DOMINANT] * 6
