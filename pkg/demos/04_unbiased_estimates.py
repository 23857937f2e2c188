"""Debiased single-term estimates: noisy draws whose mean is the exact limit.

A monotone sequence a_0 <= a_1 <= ... -> L plus a geometric stopping law give
the randomized value z = a_w + (a_{w+N+1} - a_{w+N}) / P(N = n). Averaging
many such draws recovers L without ever computing it. The offset w trades
variance against the cost of evaluating deeper sequence entries.
"""

import numpy as np

from ctmcinfer import GeometricLaw, oste, oste_variance

# synthetic monotone sequence with limit 1.0
seq = lambda n: 1.0 - 4.0 ** (-n)
law = GeometricLaw(0.5)

diffs = [seq(n + 1) - seq(n) for n in range(60)]
print(f"closed-form variance at offset 0: {oste_variance(diffs, law):.6f}")

rng = np.random.default_rng(1)
for offset in (0, 1, 2):
    draws = np.array([oste(seq, offset, law, rng=rng).z for _ in range(50_000)])
    shifted = [seq(offset + n + 1) - seq(offset + n) for n in range(60)]
    exact = oste_variance(shifted, law, a_offset=seq(offset))
    print(f"offset {offset}: mean {draws.mean():.5f} (limit 1.0), "
          f"variance {draws.var(ddof=1):.6f} vs exact {exact:.6f}")

# when the differences decay exactly like the stopping law's mass the draw
# is the limit itself, every time
matched = lambda n: 3.0 - 2.0 ** (-n)
zs = {oste(matched, 0, law, rng=rng).z for _ in range(1000)}
print(f"\nmatched tail: {len(zs)} distinct draw value(s), {zs}")
