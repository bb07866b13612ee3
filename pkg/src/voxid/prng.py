"""Portable 64-bit PRNG used wherever results must be reproducible bit-for-bit.

Algorithm (all arithmetic mod 2**64):

  seeding   state = splitmix64(seed)           -- replaced by a fixed constant
                                                  if it comes out zero
  step      x ^= x >> 12; x ^= x << 25; x ^= x >> 27; state = x
  output    x * 0x2545F4914F6CDD1D            -- xorshift64*
  uniform   (output >> 11) * 2**-53            -- in [0, 1)
  below(n)  floor(uniform * n)

splitmix64(z): z += 0x9E3779B97F4A7C15; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31).
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be >= 1")
        return min(int(self.uniform() * n), n - 1)
