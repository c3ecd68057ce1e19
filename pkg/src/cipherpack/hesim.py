"""Simulated SIMD-slot ciphertext arithmetic over Z_t.

A ciphertext is a length-N vector of residues mod t plus a multiplicative
depth counter.  Operations are exact (no noise is modelled; a depth limit
can be recorded in the scheme parameters for reporting purposes) and every
homomorphic primitive tallies into per-context operation counters:

    mul_pc           plaintext-ciphertext multiplications
    add_cc           ciphertext-ciphertext additions
    rot              slot rotations
    mul_cc           ciphertext-ciphertext multiplications (squarings)
    assembly_mul_pc  one-hot mask multiplications used purely to place
                     results into output slots (kept apart so layer-level
                     multiply counts stay comparable with the usual
                     complexity formulas)

Signed values are represented by centered residues in [-t/2, t/2).
Rotation by 0 is a no-op and is not charged; schedules that account per
scheduled move can opt into charging it (``charge_identity``).

Ciphertexts are immutable; every operation returns a new value.  Counters
live on the :class:`HeContext`, so independent contexts can run
concurrently and be merged afterwards.

Two execution modes share the same code paths:

* tracked (default): slot values are computed exactly, using int64 numpy
  arrays when t is small enough and arbitrary-precision object arrays
  otherwise;
* untracked ("count-only"): ``slots is None``; every counter and depth
  update still happens, only the slot math is skipped.  Used to measure
  operation counts of large configurations quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Storage switches to arbitrary-precision objects above this modulus;
# below it, a+b with a,b < t always fits in int64.
_INT64_T_LIMIT = 1 << 62
# Upper bound for a product to stay inside int64.
_INT64_PROD_LIMIT = (1 << 63) - 1


class CapacityError(ValueError):
    """Payload does not fit into the available slots."""


class EncodingOverflowError(ValueError):
    """A signed value falls outside the representable range (-t/2, t/2)."""


class PreconditionError(ValueError):
    """An operation's slot-content precondition is violated."""


@dataclass(frozen=True)
class SchemeParams:
    """Parameters of the simulated scheme.

    n_slots is the SIMD slot count (the ring dimension), t the plaintext
    modulus.  rotation_weight is the dimensionless cost multiplier used
    when collapsing counter triples into a single weighted cost (rotations
    are roughly an order of magnitude more expensive than multiply or
    add).  noise_budget_bits / security_bits are recorded metadata only;
    noise growth is not simulated, only multiplicative depth is tracked.
    """

    n_slots: int
    t: int
    rotation_weight: float = 10.0
    noise_budget_bits: int | None = None
    security_bits: int | None = None

    def __post_init__(self):
        if self.n_slots < 2 or (self.n_slots & (self.n_slots - 1)) != 0:
            raise ValueError(f"n_slots must be a power of two >= 2, got {self.n_slots}")
        if self.t < 2:
            raise ValueError(f"plaintext modulus must be >= 2, got {self.t}")
        if not self.rotation_weight > 0:
            raise ValueError("rotation_weight must be positive")

    @property
    def int64_storage(self) -> bool:
        return self.t <= _INT64_T_LIMIT

    @property
    def max_value(self) -> int:
        """Largest magnitude representable as a centered residue."""
        return (self.t - 1) // 2


@dataclass
class OpCounters:
    """Additive tallies of homomorphic operations."""

    mul_pc: int = 0
    add_cc: int = 0
    rot: int = 0
    mul_cc: int = 0
    assembly_mul_pc: int = 0

    def copy(self) -> "OpCounters":
        return replace(self)

    def __sub__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            mul_pc=self.mul_pc - other.mul_pc,
            add_cc=self.add_cc - other.add_cc,
            rot=self.rot - other.rot,
            mul_cc=self.mul_cc - other.mul_cc,
            assembly_mul_pc=self.assembly_mul_pc - other.assembly_mul_pc,
        )

    def __add__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            mul_pc=self.mul_pc + other.mul_pc,
            add_cc=self.add_cc + other.add_cc,
            rot=self.rot + other.rot,
            mul_cc=self.mul_cc + other.mul_cc,
            assembly_mul_pc=self.assembly_mul_pc + other.assembly_mul_pc,
        )

    def merge(self, other: "OpCounters") -> None:
        """Fold another context's tallies into this one."""
        self.mul_pc += other.mul_pc
        self.add_cc += other.add_cc
        self.rot += other.rot
        self.mul_cc += other.mul_cc
        self.assembly_mul_pc += other.assembly_mul_pc


@dataclass(frozen=True)
class PlainVector:
    """Unencrypted slot vector, stored as canonical residues in [0, t)."""

    slots: np.ndarray
    params: SchemeParams

    def centered(self) -> np.ndarray:
        lift = (self.params.t + 1) // 2
        if self.params.int64_storage:
            out = self.slots.astype(np.int64, copy=True)
        else:
            out = self.slots.copy()
        out[self.slots >= lift] -= self.params.t
        return out


@dataclass(frozen=True)
class SlotCiphertext:
    """Packed ciphertext: N residues mod t plus depth counters.

    ``slots is None`` marks a count-only ciphertext (see module docstring).
    ``assembly_depth`` is the extra depth consumed by assembly masks; the
    headline ``depth`` excludes it so layer-level depth claims can be
    checked against the usual per-layer accounting.
    """

    slots: np.ndarray | None
    depth: int
    params: SchemeParams
    assembly_depth: int = 0

    @property
    def tracked(self) -> bool:
        return self.slots is not None


def _slot_dtype(params: SchemeParams):
    return np.int64 if params.int64_storage else object


def _as_residues(values, params: SchemeParams) -> np.ndarray:
    """Map arbitrary signed integers to canonical residues in [0, t)."""
    res = np.asarray(values, dtype=object) % params.t
    if params.int64_storage:
        return res.astype(np.int64)
    return res


class HeContext:
    """One evaluation context: scheme parameters plus operation counters.

    elided_rotations records rotate calls that were issued with amount 0
    and therefore not charged; it is diagnostic only and not part of the
    counter contract.
    """

    def __init__(self, params: SchemeParams):
        self.params = params
        self.counters = OpCounters()
        self.elided_rotations = 0

    # ------------------------------------------------------------------
    # encode / encrypt / decrypt (client-side, never counted)
    # ------------------------------------------------------------------

    def encode(self, values) -> PlainVector:
        """Encode signed integers into a plaintext slot vector."""
        values = np.asarray(values)
        n, t = self.params.n_slots, self.params.t
        if values.size > n:
            raise CapacityError(f"{values.size} values exceed {n} slots")
        flat = values.ravel()
        if flat.size and int(2 * np.max(np.abs(flat.astype(object)))) >= t:
            raise EncodingOverflowError(f"|value| must be < t/2 = {t / 2}")
        slots = np.zeros(n, dtype=_slot_dtype(self.params))
        if flat.size:
            slots[: flat.size] = _as_residues(flat, self.params)
        return PlainVector(slots=slots, params=self.params)

    def encrypt(self, values) -> SlotCiphertext:
        pv = self.encode(values)
        return SlotCiphertext(slots=pv.slots, depth=0, params=self.params)

    def encrypt_zero(self, tracked: bool = True) -> SlotCiphertext:
        if not tracked:
            return SlotCiphertext(slots=None, depth=0, params=self.params)
        slots = np.zeros(self.params.n_slots, dtype=_slot_dtype(self.params))
        return SlotCiphertext(slots=slots, depth=0, params=self.params)

    def encrypt_untracked(self) -> SlotCiphertext:
        """A count-only ciphertext: counters flow, slot values do not."""
        return SlotCiphertext(slots=None, depth=0, params=self.params)

    def decrypt(self, ct: SlotCiphertext) -> np.ndarray:
        """Centered representatives in [-t/2, t/2), as an object array."""
        if not ct.tracked:
            raise ValueError("cannot decrypt a count-only ciphertext")
        t = self.params.t
        out = np.array([int(v) for v in ct.slots], dtype=object)
        out[out >= (t + 1) // 2] -= t
        return out

    # ------------------------------------------------------------------
    # homomorphic primitives
    # ------------------------------------------------------------------

    def rotate(self, ct: SlotCiphertext, k: int, charge_identity: bool = False) -> SlotCiphertext:
        """Cyclic left rotation: output slot i = input slot (i+k) mod N.

        k = 0 is an identity no backend would issue, so it is free unless
        the caller explicitly charges per scheduled move.
        """
        n = self.params.n_slots
        if not 0 <= k < n:
            raise ValueError(f"rotation amount must be in [0, {n}), got {k}")
        if k != 0 or charge_identity:
            self.counters.rot += 1
        if k == 0:
            if not charge_identity:
                self.elided_rotations += 1
            return ct
        slots = None if not ct.tracked else np.roll(ct.slots, -k)
        return SlotCiphertext(slots=slots, depth=ct.depth, params=ct.params,
                              assembly_depth=ct.assembly_depth)

    def mul_plain(self, ct: SlotCiphertext, pv: PlainVector | None,
                  assembly: bool = False) -> SlotCiphertext:
        """Slot-wise product mod t.  Consumes one multiplicative level.

        assembly=True marks a one-hot placement mask: it is tallied in
        assembly_mul_pc / assembly_depth instead of the headline counters.
        """
        if assembly:
            self.counters.assembly_mul_pc += 1
        else:
            self.counters.mul_pc += 1
        depth = ct.depth + (0 if assembly else 1)
        assembly_depth = ct.assembly_depth + (1 if assembly else 0)
        if not ct.tracked:
            return SlotCiphertext(slots=None, depth=depth, params=ct.params,
                                  assembly_depth=assembly_depth)
        if pv is None:
            raise ValueError("tracked ciphertext requires a plaintext operand")
        slots = self._mul_arrays(ct.slots, pv)
        return SlotCiphertext(slots=slots, depth=depth, params=ct.params,
                              assembly_depth=assembly_depth)

    def _mul_arrays(self, slots: np.ndarray, pv: PlainVector) -> np.ndarray:
        t = self.params.t
        centered = pv.centered()
        if self.params.int64_storage:
            max_abs = int(np.max(np.abs(centered))) if centered.size else 0
            if max_abs * (t - 1) <= _INT64_PROD_LIMIT:
                return (slots * centered) % t
            # Exact fallback on the plaintext's support only; elsewhere the
            # product is zero regardless of the slot value.
            out = np.zeros_like(slots)
            idx = np.nonzero(centered)[0]
            prods = slots[idx].astype(object) * centered[idx].astype(object)
            out[idx] = (prods % t).astype(np.int64)
            return out
        out = np.zeros(self.params.n_slots, dtype=object)
        idx = np.nonzero(centered)[0]
        out[idx] = (slots[idx] * centered[idx]) % t
        return out

    def add_cc(self, a: SlotCiphertext, b: SlotCiphertext) -> SlotCiphertext:
        """Slot-wise sum mod t; depth is the max of the operands."""
        if a.params != b.params:
            raise ValueError("ciphertexts come from different schemes")
        self.counters.add_cc += 1
        depth = max(a.depth, b.depth)
        assembly_depth = max(a.assembly_depth, b.assembly_depth)
        if not (a.tracked and b.tracked):
            return SlotCiphertext(slots=None, depth=depth, params=a.params,
                                  assembly_depth=assembly_depth)
        slots = (a.slots + b.slots) % self.params.t
        return SlotCiphertext(slots=slots, depth=depth, params=a.params,
                              assembly_depth=assembly_depth)

    def add_plain(self, ct: SlotCiphertext, pv: PlainVector | None) -> SlotCiphertext:
        """Plaintext addition; free in every tabulated cost model."""
        if not ct.tracked:
            return ct
        if pv is None:
            raise ValueError("tracked ciphertext requires a plaintext operand")
        slots = (ct.slots + pv.slots) % self.params.t
        return SlotCiphertext(slots=slots, depth=ct.depth, params=ct.params,
                              assembly_depth=ct.assembly_depth)

    def square(self, ct: SlotCiphertext) -> SlotCiphertext:
        """Slot-wise square mod t (ciphertext-ciphertext multiply)."""
        self.counters.mul_cc += 1
        depth = ct.depth + 1
        if not ct.tracked:
            return SlotCiphertext(slots=None, depth=depth, params=ct.params,
                                  assembly_depth=ct.assembly_depth)
        t = self.params.t
        if self.params.int64_storage:
            if (t - 1) * (t - 1) <= _INT64_PROD_LIMIT:
                slots = (ct.slots * ct.slots) % t
            else:
                slots = np.fromiter((v * v % t for v in ct.slots.tolist()),
                                    dtype=np.int64, count=self.params.n_slots)
        else:
            slots = (ct.slots * ct.slots) % t
        return SlotCiphertext(slots=slots, depth=depth, params=ct.params,
                              assembly_depth=ct.assembly_depth)

    def rotate_and_sum(self, ct: SlotCiphertext, m: int) -> SlotCiphertext:
        """Binary-tree accumulation: slot 0 of the result is the sum of the
        first m input slots, at a cost of ceil(log2 m) rotations and as many
        additions.

        Requires every slot from index m on to be zero (the tree sums the
        full 2^ceil(log2 m) window, so anything non-zero past the payload
        would corrupt the total).  Count-only ciphertexts are trusted on
        occupancy.
        """
        n = self.params.n_slots
        if not 1 <= m <= n:
            raise ValueError(f"m must be in [1, {n}], got {m}")
        if ct.tracked and m < n and np.any(ct.slots[m:]):
            raise PreconditionError(f"slots at index >= {m} must be zero")
        rounds = (m - 1).bit_length()  # == ceil(log2 m)
        acc = ct
        for h in reversed(range(rounds)):
            acc = self.add_cc(acc, self.rotate(acc, 1 << h))
        return acc


def rotations_for_span(m: int) -> int:
    """ceil(log2 m): rotate-and-sum cost over an m-slot payload."""
    if m < 1:
        raise ValueError("span must be positive")
    return (m - 1).bit_length()


def merge_contexts(target: HeContext, *others: HeContext) -> HeContext:
    """Fold counters of per-thread contexts into one."""
    for other in others:
        if other.params != target.params:
            raise ValueError("contexts use different scheme parameters")
        target.counters.merge(other.counters)
        target.elided_rotations += other.elided_rotations
    return target
