"""Memory-efficient reversible chains.

A forward chain keeps only O(d) state: the refresh noise of step k is
regenerated from a 64-bit seed s_k evolved by an invertible linear
congruential map, so the backward pass can rebuild every epsilon_k and undo
the dynamics step by step instead of storing the trajectory.

Exact reversal needs exact arithmetic.  In ``fixedpoint`` mode the state
lives in signed fixed-point integers and the only contracting operation,
the momentum damping v = gamma * v_hat, is performed as an exactly
invertible rational multiply: gamma is quantized to n / 2^q, the remainder
bits destroyed by the division are pushed onto a per-coordinate bit stack,
and previously stored bits are packed back into the result.  The stack
grows by log2(1/gamma) bits per coordinate per step on average, against
the 32-64 bits per value of naive trajectory storage.  ``float`` mode runs
the same seed discipline in ordinary floats: fast, bit-identical to the
plain sampler, but reversal only recovers the initial state up to round-off
drift (reported, not guaranteed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import MASK64, keyed_generator
from .sampler import NumericalFailure, TransitionConfig, _quad, _refresh_with_noise, leapfrog
from .schedules import AnnealingSchedule, StepSizeScheme
from .targets import AnnealedTarget

# odd multiplier => bijection on 64-bit states
SEED_MULT = 6364136223846793005
SEED_INC = 1442695040888963407
SEED_MULT_INV = pow(SEED_MULT, -1, 1 << 64)

DEFAULT_FRAC_BITS = 48
GAMMA_DENOM_BITS = 16
BUFFER_MAGIC = b"DAISREV1"


def forward_seed(s: int) -> int:
    """Advance the 64-bit seed state; bijective."""
    return (SEED_MULT * s + SEED_INC) & MASK64


def backward_seed(s: int) -> int:
    """Exact inverse of `forward_seed`."""
    return (SEED_MULT_INV * (s - SEED_INC)) & MASK64


def seed_noise(s: int, dim: int) -> np.ndarray:
    """Standard normal vector fully determined by the seed state."""
    return keyed_generator(s).standard_normal(dim)


class BufferOverflow(RuntimeError):
    """Information buffer exceeded its configured capacity."""


class BufferCorruption(RuntimeError):
    """Buffer drained past its push depth or failed deserialization."""


SLOT_SENTINEL = 1 << 8


class InfoBuffer:
    """Append-only bit stacks, one per coordinate, holding damping remainders.

    push/pop amounts need not be whole bits: pushing a value modulo m costs
    log2(m) bits exactly, so the amortized growth per damping is
    log2(denominator/numerator) = log2(1/gamma) bits per coordinate.  Pop
    order must be the exact reverse of push order.  Every slot starts from a
    one-byte sentinel: draining past it (underflow) is detectable, an empty
    buffer is all-sentinel, and the sentinel keeps the slot's leading
    constant positive so the physical size never undershoots the amortized
    log2(1/gamma) cost (the raw remainder stream carries a small negative
    transient).
    """

    def __init__(self, n_slots: int, cap_bytes: int | None = None):
        self._store = np.array([SLOT_SENTINEL] * n_slots, dtype=object)
        self._cap_bytes = cap_bytes
        self.depth = 0  # completed damping ops not yet undone

    @property
    def n_slots(self) -> int:
        return self._store.size

    def push(self, values, modulus: int):
        self._store = self._store * modulus + values
        if self._cap_bytes is not None and self.nbytes() > self._cap_bytes:
            raise BufferOverflow(f"info buffer exceeded {self._cap_bytes} bytes")

    def pop(self, modulus: int):
        out = self._store % modulus
        self._store //= modulus
        return out

    def bit_size(self) -> int:
        """Physical bits held, sentinel included; d bits when empty."""
        return int(sum(int(v).bit_length() for v in self._store))

    def nbytes(self) -> int:
        """Serialized size: header plus length-prefixed pages."""
        payload = sum((int(v).bit_length() + 7) // 8 for v in self._store)
        return len(BUFFER_MAGIC) + 4 + 8 + 4 * self.n_slots + payload

    def is_empty(self) -> bool:
        return all(int(v) == SLOT_SENTINEL for v in self._store) and self.depth == 0

    def to_bytes(self) -> bytes:
        """Magic, page count, op depth, then one length-prefixed page per slot."""
        parts = [BUFFER_MAGIC, struct.pack("<I", self.n_slots), struct.pack("<q", self.depth)]
        for v in self._store:
            raw = int(v).to_bytes((int(v).bit_length() + 7) // 8, "little")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes, cap_bytes: int | None = None) -> "InfoBuffer":
        if blob[: len(BUFFER_MAGIC)] != BUFFER_MAGIC:
            raise BufferCorruption("bad magic bytes")
        off = len(BUFFER_MAGIC)
        (n_slots,) = struct.unpack_from("<I", blob, off)
        off += 4
        (depth,) = struct.unpack_from("<q", blob, off)
        off += 8
        buf = cls(n_slots, cap_bytes)
        vals = []
        for _ in range(n_slots):
            if off + 4 > len(blob):
                raise BufferCorruption("truncated page header")
            (length,) = struct.unpack_from("<I", blob, off)
            off += 4
            if off + length > len(blob):
                raise BufferCorruption("truncated page payload")
            vals.append(int.from_bytes(blob[off : off + length], "little"))
            off += length
        buf._store = np.array(vals, dtype=object)
        buf.depth = depth
        return buf


def float_to_fixed(x, frac_bits: int = DEFAULT_FRAC_BITS) -> np.ndarray:
    """Round-to-nearest-even conversion to arbitrary-precision integers."""
    scaled = np.rint(np.asarray(x, dtype=float) * (1 << frac_bits))
    if not np.all(np.isfinite(scaled)):
        raise NumericalFailure("non-finite value in fixed-point conversion")
    if np.any(np.abs(scaled) >= 2**62):
        raise NumericalFailure("fixed-point overflow; state magnitude too large")
    return scaled.astype(np.int64).astype(object)


def fixed_to_float(i, frac_bits: int = DEFAULT_FRAC_BITS) -> np.ndarray:
    return np.array([int(v) for v in np.atleast_1d(i)], dtype=float) / (1 << frac_bits)


@dataclass
class FixedPointState:
    """Chain state as signed fixed-point integers (object dtype, exact)."""

    theta: np.ndarray
    v: np.ndarray
    frac_bits: int = DEFAULT_FRAC_BITS

    def to_floats(self):
        return fixed_to_float(self.theta, self.frac_bits), fixed_to_float(self.v, self.frac_bits)


def quantize_gamma(gamma: float, denom_bits: int = GAMMA_DENOM_BITS):
    """Largest rational n / 2^denom_bits not exceeding gamma.

    Rounding down keeps the per-step buffer cost at or above log2(1/gamma),
    so measured bits land in the documented [log2(1/gamma), log2(1/gamma)+1]
    window.  Returns (numerator, denominator, effective gamma).
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1] for rational damping, got {gamma}")
    den = 1 << denom_bits
    num = int(np.floor(gamma * den))
    if num == 0:
        raise ValueError("gamma too small to quantize; use naive storage instead")
    if gamma == 1.0:
        num = den
    return num, den, num / den


def _rational_mul(x, num, den, buffer: InfoBuffer):
    """x <- approximately x * num/den, exactly invertible through the buffer."""
    buffer.push(x % den, den)
    x = (x // den) * num
    x = x + buffer.pop(num)
    buffer.depth += 1
    return x


def _rational_unmul(x, num, den, buffer: InfoBuffer):
    if buffer.depth <= 0:
        raise BufferCorruption("buffer drained past its push depth")
    buffer.depth -= 1
    buffer.push(x % num, num)
    x = (x // num) * den
    x = x + buffer.pop(den)
    return x


@dataclass
class ForwardResult:
    """Output of `reversible_forward`: float views plus the exact state."""

    theta: np.ndarray
    v: np.ndarray
    seed: int
    buffer: InfoBuffer | None
    bound: float
    fixed: FixedPointState | None
    gamma_eff: float


def _initial_draws(target, config, s0):
    g = keyed_generator(s0)
    theta0 = target.sample_p0(g)
    v0 = np.sqrt(config.mass_diag(target.dim)) * g.standard_normal(target.dim)
    return theta0, v0


def reversible_forward(
    target: AnnealedTarget,
    schedule: AnnealingSchedule,
    steps: StepSizeScheme,
    config: TransitionConfig,
    s0: int,
    mode: str = "fixedpoint",
    theta0=None,
    v0=None,
    frac_bits: int = DEFAULT_FRAC_BITS,
    buffer_cap_bytes: int | None = None,
) -> ForwardResult:
    """Forward chain keeping O(d) state plus the lost-bits buffer.

    The per-step refresh noise is drawn from the evolved seed, never stored.
    In float mode the trajectory and bound are identical to `dais_chain`
    driven by the same noise.  When ``theta0``/``v0`` are omitted they are
    drawn from a generator keyed by ``s0``.
    """
    if mode not in ("float", "fixedpoint"):
        raise ValueError(f"unknown mode {mode!r}")
    if steps.K != schedule.K:
        raise ValueError(f"step scheme has K={steps.K}, schedule has K={schedule.K}")
    d = target.dim
    mass = config.mass_diag(d)
    inv_mass = 1.0 / mass
    sqrt_mass = np.sqrt(mass)
    if theta0 is None or v0 is None:
        theta0, v0 = _initial_draws(target, config, s0)
    theta0 = np.asarray(theta0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    s = int(s0) & MASK64
    betas = schedule.betas
    etas = steps.per_step

    if mode == "float":
        gamma = config.gamma
        theta, v = theta0, v0
        L = float(-target.log_p0(theta))
        for k in range(1, schedule.K + 1):
            theta, v_hat = leapfrog(theta, v, etas[k - 1], betas[k], target, config)
            L = L + 0.5 * (_quad(v, inv_mass) - _quad(v_hat, inv_mass))
            s = forward_seed(s)
            v = _refresh_with_noise(v_hat, gamma, seed_noise(s, d), sqrt_mass)
            if not np.isfinite(L):
                raise NumericalFailure("non-finite bound accumulator", step=k)
        L = float(L + target.log_f(1.0, theta))
        return ForwardResult(theta, v, s, None, L, None, gamma)

    num, den, gamma_eff = quantize_gamma(config.gamma)
    noise_scale = np.sqrt(1.0 - gamma_eff * gamma_eff)
    buffer = InfoBuffer(d, buffer_cap_bytes)
    th = float_to_fixed(theta0, frac_bits)
    vv = float_to_fixed(v0, frac_bits)
    L = float(-target.log_p0(fixed_to_float(th, frac_bits)))
    for k in range(1, schedule.K + 1):
        eta = etas[k - 1]
        th = th + float_to_fixed(0.5 * eta * inv_mass * fixed_to_float(vv, frac_bits), frac_bits)
        grad = target.grad_log_f(betas[k], fixed_to_float(th, frac_bits))
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure("non-finite gradient", step=k, midpoint=fixed_to_float(th, frac_bits))
        v_prev_f = fixed_to_float(vv, frac_bits)
        vv = vv + float_to_fixed(eta * grad, frac_bits)
        v_hat_f = fixed_to_float(vv, frac_bits)
        th = th + float_to_fixed(0.5 * eta * inv_mass * v_hat_f, frac_bits)
        L += 0.5 * (_quad(v_prev_f, inv_mass) - _quad(v_hat_f, inv_mass))
        s = forward_seed(s)
        eps = seed_noise(s, d)
        if gamma_eff != 1.0:
            vv = _rational_mul(vv, num, den, buffer)
        vv = vv + float_to_fixed(noise_scale * (sqrt_mass * eps), frac_bits)
    L = float(L + target.log_f(1.0, fixed_to_float(th, frac_bits)))
    fixed = FixedPointState(th, vv, frac_bits)
    tf, vf = fixed.to_floats()
    return ForwardResult(tf, vf, s, buffer, L, fixed, gamma_eff)


def reversible_backward(
    target: AnnealedTarget,
    schedule: AnnealingSchedule,
    steps: StepSizeScheme,
    config: TransitionConfig,
    theta,
    v,
    seed: int,
    buffer: InfoBuffer | None = None,
    mode: str = "fixedpoint",
    frac_bits: int = DEFAULT_FRAC_BITS,
):
    """Invert a forward chain, returning (theta_0, v_0, s_0).

    Regenerates epsilon_k from the seed, undoes the refreshment (exactly
    through the buffer in fixedpoint mode), and runs the leapfrog
    arithmetic in reverse.  In fixedpoint mode pass the integer state from
    ``ForwardResult.fixed`` (a FixedPointState or its arrays) to get
    bit-exact recovery; the returned theta_0 / v_0 are integer arrays in
    that mode and floats in float mode.
    """
    if mode not in ("float", "fixedpoint"):
        raise ValueError(f"unknown mode {mode!r}")
    if steps.K != schedule.K:
        raise ValueError(f"step scheme has K={steps.K}, schedule has K={schedule.K}")
    d = target.dim
    mass = config.mass_diag(d)
    inv_mass = 1.0 / mass
    sqrt_mass = np.sqrt(mass)
    s = int(seed) & MASK64
    betas = schedule.betas
    etas = steps.per_step

    if mode == "float":
        gamma = config.gamma
        if gamma == 0.0:
            raise ValueError("gamma = 0 destroys the pre-refresh momentum; reversal impossible")
        theta = np.asarray(theta, dtype=float).copy()
        v = np.asarray(v, dtype=float).copy()
        for k in range(schedule.K, 0, -1):
            eta = etas[k - 1]
            eps = seed_noise(s, d)
            v_hat = (v - np.sqrt(1.0 - gamma * gamma) * (sqrt_mass * eps)) / gamma
            s = backward_seed(s)
            half = theta - 0.5 * eta * inv_mass * v_hat
            v = v_hat - eta * target.grad_log_f(betas[k], half)
            theta = half - 0.5 * eta * inv_mass * v
        return theta, v, s

    if isinstance(theta, FixedPointState):
        th, vv = theta.theta.copy(), theta.v.copy()
        frac_bits = theta.frac_bits
    elif np.asarray(theta).dtype == object:
        th = np.asarray(theta).copy()
        vv = np.asarray(v).copy()
    else:
        # float input: exact only if the fixed-point values survive the
        # float round trip; prefer passing ForwardResult.fixed
        th = float_to_fixed(theta, frac_bits)
        vv = float_to_fixed(v, frac_bits)
    if buffer is None:
        raise ValueError("fixedpoint reversal requires the forward buffer")
    num, den, gamma_eff = quantize_gamma(config.gamma)
    noise_scale = np.sqrt(1.0 - gamma_eff * gamma_eff)
    for k in range(schedule.K, 0, -1):
        eta = etas[k - 1]
        eps = seed_noise(s, d)
        vv = vv - float_to_fixed(noise_scale * (sqrt_mass * eps), frac_bits)
        if gamma_eff != 1.0:
            vv = _rational_unmul(vv, num, den, buffer)
        s = backward_seed(s)
        th = th - float_to_fixed(0.5 * eta * inv_mass * fixed_to_float(vv, frac_bits), frac_bits)
        grad = target.grad_log_f(betas[k], fixed_to_float(th, frac_bits))
        vv = vv - float_to_fixed(eta * grad, frac_bits)
        th = th - float_to_fixed(0.5 * eta * inv_mass * fixed_to_float(vv, frac_bits), frac_bits)
    return th, vv, s


@dataclass(frozen=True)
class MemoryReport:
    """Storage accounting for a K-step chain over d parameters."""

    naive_bits: float
    reversible_bits: float
    time_complexity: str = "O(K)"

    @property
    def ratio(self) -> float:
        return self.reversible_bits / self.naive_bits


def memory_report(d: int, K: int, gamma: float, mode: str = "fixedpoint", precision_bits: int = 32) -> MemoryReport:
    """Naive trajectory storage vs the lost-bits buffer.

    Naive storage costs ``precision_bits`` per parameter per step; the
    reversible buffer costs log2(1/gamma).  gamma = 0 is unsupported in
    fixedpoint mode: full refreshment destroys the pre-refresh momentum
    entirely, so there is nothing to invert; store the trajectory instead.
    """
    if mode not in ("float", "fixedpoint"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 0.0:
        if mode == "fixedpoint":
            raise ValueError(
                "gamma = 0 is unsupported in fixedpoint mode: the damping "
                "division is undefined and full refreshment destroys the "
                "momentum; use naive trajectory storage"
            )
        reversible = float("inf")
    else:
        reversible = float(np.log2(1.0 / gamma) * K * d)
    return MemoryReport(naive_bits=float(precision_bits * K * d), reversible_bits=reversible)
