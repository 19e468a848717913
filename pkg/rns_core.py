"""
Exact residue-number-system arithmetic.

A ModuliSet holds pairwise co-prime moduli together with the constants the
Chinese remainder theorem needs (M, M_i, T_i) and the signed half-range psi.
Integers in [-psi, psi] are converted to residues and back; negative values
live in the upper half of [0, M).

All scalar operations use Python big integers. The *_array helpers are the
numpy forms used by the tile simulator.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from errors import (
    InvalidModulus,
    LengthMismatch,
    ModuliMismatch,
    NotCoprime,
    OutOfRange,
)

logger = logging.getLogger(__name__)

# Moduli sets of the data-converter precision comparison, keyed by bit width.
PRESETS: Dict[str, Tuple[int, ...]] = {
    'rns4': (15, 14, 13, 11),
    'rns5': (31, 29, 28, 27),
    'rns6': (63, 62, 61, 59),
    'rns7': (127, 126, 125),
    'rns8': (255, 254, 253),
}

# Past this bound CRT sums no longer fit in int64 and the array helpers
# switch to Python-int object arrays.
_INT64_SAFE = 1 << 62


@dataclass(frozen=True)
class ModuliSet:
    """Validated co-prime moduli with precomputed CRT constants."""

    moduli: Tuple[int, ...]
    M: int
    Mi: Tuple[int, ...]
    Ti: Tuple[int, ...]
    psi: int
    # M_i * T_i reduced mod M, the per-residue CRT weights
    _weights: Tuple[int, ...] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.moduli)

    @property
    def bits(self) -> int:
        """Converter width needed for the widest residue, max ceil(log2 m_i)."""
        return max(math.ceil(math.log2(m)) for m in self.moduli)

    @property
    def log2_range(self) -> float:
        return math.log2(self.M)


@dataclass(frozen=True)
class ResidueVector:
    """RNS representation of one integer, tied to the ModuliSet it came from."""

    residues: Tuple[int, ...]
    moduli_set: ModuliSet = field(repr=False)

    def __iter__(self):
        return iter(self.residues)

    def __len__(self) -> int:
        return len(self.residues)


def new_moduli_set(moduli: Sequence[int]) -> ModuliSet:
    """
    Build a ModuliSet and precompute its CRT constants.

    Args:
        moduli: Pairwise co-prime integers, each at least 2

    Returns:
        Immutable ModuliSet

    Raises:
        InvalidModulus: empty list or some m_i < 2
        NotCoprime: some pair shares a factor
    """
    moduli = tuple(int(m) for m in moduli)
    if not moduli:
        raise InvalidModulus("Moduli list must not be empty")
    for m in moduli:
        if m < 2:
            raise InvalidModulus(f"Modulus {m} is smaller than 2")
    for i in range(len(moduli)):
        for j in range(i + 1, len(moduli)):
            g = math.gcd(moduli[i], moduli[j])
            if g != 1:
                raise NotCoprime(
                    f"Moduli {moduli[i]} and {moduli[j]} share the factor {g}"
                )

    M = math.prod(moduli)
    Mi = tuple(M // m for m in moduli)
    Ti = tuple(pow(Mi[i] % m, -1, m) for i, m in enumerate(moduli))
    for i, m in enumerate(moduli):
        assert (Mi[i] * Ti[i]) % m == 1
    weights = tuple((Mi[i] * Ti[i]) % M for i in range(len(moduli)))
    return ModuliSet(
        moduli=moduli,
        M=M,
        Mi=Mi,
        Ti=Ti,
        psi=(M - 1) // 2,
        _weights=weights,
    )


def get_preset(name: str) -> ModuliSet:
    """Look up one of the named preset moduli sets ('rns4' … 'rns8')."""
    if name not in PRESETS:
        raise InvalidModulus(
            f"Unknown moduli preset '{name}'. Known presets: {', '.join(PRESETS)}"
        )
    return new_moduli_set(PRESETS[name])


# ----------------------------------------------------------------------
# Conversion
# ----------------------------------------------------------------------

def forward_convert(A: int, ms: ModuliSet) -> ResidueVector:
    """
    Convert a signed integer into residues.

    Negative values are mapped to A + M before reduction, which is the same
    as reducing each residue into [0, m_i).

    Raises:
        OutOfRange: |A| > psi
    """
    A = int(A)
    if abs(A) > ms.psi:
        raise OutOfRange(f"{A} is outside the signed range [-{ms.psi}, {ms.psi}]")
    representative = A % ms.M
    return ResidueVector(tuple(representative % m for m in ms.moduli), ms)


def _check_consistent(rv: ResidueVector, ms: ModuliSet) -> None:
    if rv.moduli_set.moduli != ms.moduli:
        raise ModuliMismatch(
            f"Residues belong to {rv.moduli_set.moduli}, expected {ms.moduli}"
        )
    if len(rv.residues) != len(ms.moduli):
        raise LengthMismatch(
            f"Got {len(rv.residues)} residues for {len(ms.moduli)} moduli"
        )
    for r, m in zip(rv.residues, ms.moduli):
        if not 0 <= r < m:
            raise OutOfRange(f"Residue {r} is not in [0, {m})")


def crt_unsigned(residues: Sequence[int], ms: ModuliSet) -> int:
    """CRT reconstruction into [0, M) without the signed mapping."""
    total = sum(int(a) * w for a, w in zip(residues, ms._weights))
    return total % ms.M


def crt_reconstruct(rv: ResidueVector, ms: ModuliSet) -> int:
    """
    Reconstruct the signed integer in [-psi, psi] whose residues equal rv.

    Values above psi in [0, M) are the negative half and have M subtracted.
    """
    _check_consistent(rv, ms)
    value = crt_unsigned(rv.residues, ms)
    return value - ms.M if value > ms.psi else value


def make_residues(residues: Sequence[int], ms: ModuliSet) -> ResidueVector:
    """Wrap raw residues as a ResidueVector after checking them against ms."""
    rv = ResidueVector(tuple(int(r) for r in residues), ms)
    _check_consistent(rv, ms)
    return rv


# ----------------------------------------------------------------------
# Residue arithmetic
# ----------------------------------------------------------------------

def _elementwise(a: ResidueVector, b: ResidueVector, op) -> ResidueVector:
    if a.moduli_set.moduli != b.moduli_set.moduli:
        raise ModuliMismatch(
            f"Cannot combine residues over {a.moduli_set.moduli} and {b.moduli_set.moduli}"
        )
    ms = a.moduli_set
    return ResidueVector(
        tuple(op(x, y) % m for x, y, m in zip(a.residues, b.residues, ms.moduli)),
        ms,
    )


def residue_add(a: ResidueVector, b: ResidueVector) -> ResidueVector:
    return _elementwise(a, b, lambda x, y: x + y)


def residue_sub(a: ResidueVector, b: ResidueVector) -> ResidueVector:
    return _elementwise(a, b, lambda x, y: x - y)


def residue_mul(a: ResidueVector, b: ResidueVector) -> ResidueVector:
    return _elementwise(a, b, lambda x, y: x * y)


def modular_dot(w: Sequence[int], x: Sequence[int], m: int) -> int:
    """
    Dot product followed by the modulo applied at each analog output.

    Args:
        w: Weight residues, already reduced mod m
        x: Input residues, already reduced mod m
        m: Modulus

    Returns:
        |sum(w_i * x_i)|_m in [0, m)
    """
    if len(w) != len(x):
        raise LengthMismatch(f"Vectors have lengths {len(w)} and {len(x)}")
    return sum(int(wi) * int(xi) for wi, xi in zip(w, x)) % m


def output_bits(b_in: int, b_w: int, h: int) -> int:
    """Full width of a partial output: b_in + b_w + ceil(log2 h) - 1."""
    if h < 1:
        raise ValueError(f"Tile size must be at least 1, got {h}")
    return b_in + b_w + math.ceil(math.log2(h)) - 1


def check_range_constraint(b_in: int, b_w: int, h: int, ms: ModuliSet) -> Tuple[bool, int]:
    """
    Check that the moduli range can hold a full-width dot product.

    Non-power-of-two h rounds log2(h) up.

    Returns:
        (log2(M) >= b_out, b_out)
    """
    b_out = output_bits(b_in, b_w, h)
    return ms.M >= (1 << b_out), b_out


# ----------------------------------------------------------------------
# numpy forms
# ----------------------------------------------------------------------

def _needs_object_dtype(ms: ModuliSet) -> bool:
    return ms.M * max(ms.moduli) * len(ms.moduli) >= _INT64_SAFE


def forward_convert_array(values: np.ndarray, ms: ModuliSet, check_range: bool = True) -> np.ndarray:
    """
    Forward-convert an integer array.

    Returns:
        Array of shape (n_moduli, *values.shape) with residues in [0, m_i)
    """
    values = np.asarray(values)
    if check_range and values.size:
        peak = max(abs(int(values.max())), abs(int(values.min())))
        if peak > ms.psi:
            raise OutOfRange(f"|{peak}| exceeds the signed range psi={ms.psi}")
    dtype = object if values.dtype == object else np.int64
    return np.stack([np.mod(values, m).astype(dtype) for m in ms.moduli])


def crt_reconstruct_array(residues: np.ndarray, ms: ModuliSet) -> np.ndarray:
    """
    Signed CRT over the leading axis of a residue array.

    Uses int64 when M * max(m) * n fits, Python ints otherwise.
    """
    residues = np.asarray(residues)
    if residues.shape[0] != len(ms.moduli):
        raise LengthMismatch(
            f"Leading axis has {residues.shape[0]} entries for {len(ms.moduli)} moduli"
        )
    if _needs_object_dtype(ms):
        total = np.zeros(residues.shape[1:], dtype=object)
        for a, w in zip(residues, ms._weights):
            total = total + a.astype(object) * w
        total = total % ms.M
        return np.where(total > ms.psi, total - ms.M, total)

    total = np.zeros(residues.shape[1:], dtype=np.int64)
    for a, w in zip(residues, ms._weights):
        total += a.astype(np.int64) * np.int64(w)
    total %= ms.M
    return np.where(total > ms.psi, total - ms.M, total)
