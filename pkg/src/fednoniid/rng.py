"""Portable deterministic random streams.

Every random draw in this package comes from PCG32 (the XSH-RR 64/32
variant of the PCG family) so that any implementation, in any language,
can reproduce the exact byte-level output of partitioning, training and
evaluation.  The generator and all derived algorithms are pinned below.

PCG32 core
    state      : 64-bit unsigned, multiplier A = 6364136223846793005
    increment  : ``(stream << 1) | 1`` for a 64-bit ``stream`` selector
    seeding    : state = 0; step; state += seed; step
    output     : with ``s`` the pre-step state,
                 ``x = (((s >> 18) ^ s) >> 27) & 0xFFFFFFFF``,
                 ``r = s >> 59``; emit 32-bit rotate-right of ``x`` by ``r``.

Derived draws (all consume the uint32 stream in documented order):
    below(n)      rejection sampling: ``t = (2**32 - n) % n``; draw ``x``
                  until ``x >= t``; return ``x % n``.
    uniforms(k)   ``(x + 0.5) / 2**32`` giving floats in (0, 1).
    normals(k)    Box-Muller on consecutive pairs ``(x1, x2)``:
                  ``u1 = (x1 + 1) / 2**32`` in (0, 1],
                  ``u2 = (x2 + 0.5) / 2**32``,
                  ``z0 = sqrt(-2 ln u1) cos(2 pi u2)``,
                  ``z1 = sqrt(-2 ln u1) sin(2 pi u2)``.
                  For odd ``k`` the trailing ``z1`` is discarded.
    shuffle(a)    Fisher-Yates: for i = n-1 .. 1, ``j = below(i + 1)``,
                  swap ``a[i], a[j]``.
    sample(n, k)  partial Fisher-Yates over ``arange(n)``: for i = 0 .. k-1,
                  ``j = i + below(n - i)``, swap; return the first k slots.

Independent streams are derived from one master seed with ``derive_seed``
(the splitmix64 finalizer applied to ``seed + purpose * GOLDEN``); the
purpose constants live at the bottom of this module.  Context within a
purpose (node id, round index, source sample index) selects the PCG32
``stream`` argument.
"""

from __future__ import annotations

import numpy as np

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_TWO32 = float(1 << 32)


def derive_seed(seed: int, purpose: int) -> int:
    """Mix a master seed with a purpose tag into an independent 64-bit seed."""
    z = (seed + purpose * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class PCG32:
    """PCG32 (XSH-RR 64/32) with a selectable stream.

    ``PCG32(seed, stream)`` matches the reference ``pcg32_srandom_r``:
    the same (seed, stream) pair always yields the same output sequence.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.inc = (((stream << 1) | 1) & _MASK64)
        self.state = 0
        self.next_uint32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_uint32()

    def next_uint32(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def uint32s(self, n: int) -> np.ndarray:
        """Vectorised batch draw; identical to ``n`` calls of next_uint32.

        Uses the closed form of the underlying LCG: the state after k
        steps is ``A**k * s0 + inc * sum_{j<k} A**j`` (mod 2**64), which
        numpy evaluates with wrapping uint64 arithmetic.
        """
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            powers = np.empty(n, dtype=np.uint64)
            powers[0] = 1
            if n > 1:
                np.cumprod(np.full(n - 1, _MULT, dtype=np.uint64), out=powers[1:])
            sums = np.empty(n, dtype=np.uint64)
            sums[0] = 0
            if n > 1:
                np.cumsum(powers[:-1], out=sums[1:])
            states = powers * np.uint64(self.state) + sums * np.uint64(self.inc)
            self.state = self._advance(n)
            xorshifted = (((states >> np.uint64(18)) ^ states) >> np.uint64(27)) & np.uint64(
                0xFFFFFFFF
            )
            rot = (states >> np.uint64(59)).astype(np.uint64)
            out = ((xorshifted >> rot) | (xorshifted << ((np.uint64(32) - rot) & np.uint64(31)))) & np.uint64(0xFFFFFFFF)
        return out

    def _advance(self, n: int) -> int:
        # state after n LCG steps, scalar arithmetic (n can be any size)
        acc_mult, acc_inc = 1, 0
        cur_mult, cur_inc = _MULT, self.inc
        while n > 0:
            if n & 1:
                acc_mult = (acc_mult * cur_mult) & _MASK64
                acc_inc = (acc_inc * cur_mult + cur_inc) & _MASK64
            cur_inc = ((cur_mult + 1) * cur_inc) & _MASK64
            cur_mult = (cur_mult * cur_mult) & _MASK64
            n >>= 1
        return (acc_mult * self.state + acc_inc) & _MASK64

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 32) - bound) % bound
        while True:
            r = self.next_uint32()
            if r >= threshold:
                return r % bound

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 values in (0, 1)."""
        x = self.uint32s(n).astype(np.float64)
        return (x + 0.5) / _TWO32

    def normals(self, n: int) -> np.ndarray:
        """n float64 standard normals (Box-Muller, see module docstring)."""
        pairs = (n + 1) // 2
        x = self.uint32s(2 * pairs).astype(np.float64)
        u1 = (x[0::2] + 1.0) / _TWO32
        u2 = (x[1::2] + 0.5) / _TWO32
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def shuffle(self, arr: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.below(i + 1)
            arr[i], arr[j] = arr[j], arr[i]

    def permutation(self, n: int) -> np.ndarray:
        out = np.arange(n, dtype=np.int64)
        self.shuffle(out)
        return out

    def sample(self, n: int, k: int) -> np.ndarray:
        """k distinct integers from [0, n) by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        arr = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.below(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr[:k].copy()


# Stream purposes; the numbers are part of the reproducibility contract.
PARTITION_SHUFFLE = 1
NOISE = 2
LABEL_ERROR = 3
OVERLAP_POOL = 4
QUALITY_POOL = 5
MODEL_INIT = 6
FED_SAMPLE = 7
FED_ORDER = 8
SYNTH_SAMPLE = 9
ENCODER_SPLIT = 10
ENCODER_ORDER = 11
FRACTION_SPLIT = 12
