#!/usr/bin/env python3
"""Encode a CAN 2.0A frame bit by bit and take it apart again.

Shows the field layout, where stuff bits landed, the CRC, and the
worst-case length figures used for latency budgeting.
"""

from canlab import (
    CanFrame,
    decode_frame,
    encode_frame,
    nominal_frame_bits,
    worst_case_frame_bits,
    worst_case_frame_us,
)

frame = CanFrame(can_id=0x2A1, payload=bytes([0xDE, 0xAD, 0xBE, 0xEF]))
enc = encode_frame(frame)

print(f"frame: id=0x{frame.can_id:03X} dlc={frame.dlc} "
      f"payload={frame.payload.hex()}")
print(f"nominal bits (before stuffing): {enc.nominal_bits}")
print(f"stuff bits inserted:            {enc.stuff_count}")
print(f"bits on the wire:               {len(enc.bits)}")
print()

# the wire view, dominant=0 recessive=1, in send order
bits = "".join(str(b) for b in enc.bits)
for i in range(0, len(bits), 40):
    print(f"  {i:3d}  {bits[i:i + 40]}")
print()

# round trip: the decoder must recover the exact frame
back = decode_frame(enc.bits)
assert back == frame
print(f"decode(encode(frame)) == frame: {back == frame}")
print()

# budgeting figures at the classic 500 kbit/s automotive rate
for dlc in (0, 4, 8):
    print(f"dlc={dlc}: nominal {nominal_frame_bits(dlc):3d} bits, "
          f"worst case {worst_case_frame_bits(dlc):3d} bits "
          f"= {worst_case_frame_us(dlc, 500_000.0):.0f} us at 500 kbit/s")
