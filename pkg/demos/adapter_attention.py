"""
Adapter attention at toy scale
==============================

A decoder block built for single images gets two extra attention layers:
one across all frames of a window and one onto full-image features. Their
residual gates start at zero, so the adapted block initially reproduces the
image model frame by frame. This prints the invariant checks and the
parameter budget.
"""

import numpy as np

from handtraj.attention import check_contracts, decoder_block, frame_positional_encoding, init_decoder

report = check_contracts(frames=8, tokens=4, dim=64, heads=4)
print(report.to_text(), end="")

# once the gates open, neighbouring frames start to mix
g = np.random.Generator(np.random.Philox(key=0))
x = g.normal(size=(8, 4, 64))
ctx = g.normal(size=(8, 16, 64))
pe = frame_positional_encoding(8, 64)
closed = decoder_block(x, pe, ctx, init_decoder(seed=0, adapter_gate=0.0))
for gate in (0.1, 0.5, 1.0):
    opened = decoder_block(x, pe, ctx, init_decoder(seed=0, adapter_gate=gate))
    print(f"gate {gate:3.1f}: mean |change| vs closed gates {np.mean(np.abs(opened - closed)):.3f}")
