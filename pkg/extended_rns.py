"""
Hybrid RNS + positional arithmetic for precision beyond one moduli range.

A value Z is written in base M_p (the product of the primary moduli) as
digits z_d, Z = sum(z_d * M_p**d). Every digit is held twice, as residues
over the primary set and over the secondary set. Adding or multiplying
digits happens independently per modulus; the secondary copy is what lets
normalize_digits spot a digit that grew past M_p and move the quotient into
the next digit.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from errors import (
    DigitRangeViolation,
    HybridOverflow,
    LengthMismatch,
    ModuliMismatch,
    Unnormalized,
)
from rns_core import ModuliSet, crt_unsigned, new_moduli_set

logger = logging.getLogger(__name__)

HYBRID_PRESETS: Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]] = {
    'small': ((3, 5), (7, 11)),
    'rns4': ((15, 14, 13, 11), (17, 19, 23, 29, 31)),
}

Residues = Tuple[int, ...]
Digit = Tuple[Residues, Residues]


@dataclass(frozen=True)
class HybridConfig:
    primary: ModuliSet
    secondary: ModuliSet
    # M_p^-1 modulo each secondary modulus
    mp_inv: Tuple[int, ...]

    @property
    def Mp(self) -> int:
        return self.primary.M

    @property
    def Ms(self) -> int:
        return self.secondary.M

    @property
    def capacity(self) -> int:
        """Raw digit values (carry included) must stay below M_p * M_s."""
        return self.Mp * self.Ms


@dataclass(frozen=True)
class HybridNumber:
    """Digits least-significant first, each as (primary, secondary) residues."""

    digits: Tuple[Digit, ...]

    def __len__(self) -> int:
        return len(self.digits)


def new_hybrid_config(primary: Sequence[int], secondary: Sequence[int]) -> HybridConfig:
    """
    Build a HybridConfig.

    Raises:
        NotCoprime: primary and secondary moduli are not jointly co-prime
        InvalidModulus: some modulus below 2
    """
    # Joint co-primality; raises NotCoprime on any shared factor.
    new_moduli_set(tuple(primary) + tuple(secondary))
    p = new_moduli_set(primary)
    s = new_moduli_set(secondary)
    mp_inv = tuple(pow(p.M % m, -1, m) for m in s.moduli)
    return HybridConfig(primary=p, secondary=s, mp_inv=mp_inv)


def get_hybrid_preset(name: str) -> HybridConfig:
    if name not in HYBRID_PRESETS:
        raise ValueError(f"Unknown hybrid preset '{name}'. Known presets: {', '.join(HYBRID_PRESETS)}")
    primary, secondary = HYBRID_PRESETS[name]
    return new_hybrid_config(primary, secondary)


def _reduce(value: int, ms: ModuliSet) -> Residues:
    return tuple(value % m for m in ms.moduli)


def _encode_digit(z: int, cfg: HybridConfig) -> Digit:
    return _reduce(z, cfg.primary), _reduce(z, cfg.secondary)


def _zero_digit(cfg: HybridConfig) -> Digit:
    return _encode_digit(0, cfg)


def base_extend(residues: Sequence[int], source: ModuliSet, target: ModuliSet) -> Residues:
    """
    Residues of the same integer over another moduli set.

    The value is recovered by CRT over the source set, then reduced by the
    target moduli. Used as p2s (primary to secondary) and s2p.
    """
    if len(residues) != len(source):
        raise LengthMismatch(f"Got {len(residues)} residues for {len(source)} source moduli")
    return _reduce(crt_unsigned(residues, source), target)


def to_hybrid(Z: int, D: int, cfg: HybridConfig) -> HybridNumber:
    """
    Split Z into D base-M_p digits and dual-encode each.

    Raises:
        HybridOverflow: Z >= M_p^D
    """
    if Z < 0:
        raise ValueError(f"Hybrid numbers are unsigned, got {Z}")
    if D < 1:
        raise ValueError(f"Digit count must be at least 1, got {D}")
    if Z >= cfg.Mp ** D:
        raise HybridOverflow(f"{Z} needs more than {D} digits of base {cfg.Mp}")
    digits = []
    for _ in range(D):
        Z, z = divmod(Z, cfg.Mp)
        digits.append(_encode_digit(z, cfg))
    return HybridNumber(tuple(digits))


def _digit_value(digit: Digit, cfg: HybridConfig) -> int:
    z_p, z_s = digit
    value = crt_unsigned(z_p, cfg.primary)
    if _reduce(value, cfg.secondary) != tuple(z_s):
        raise Unnormalized(f"Digit {digit} has disagreeing primary and secondary encodings")
    return value


def from_hybrid(x: HybridNumber, cfg: HybridConfig) -> int:
    """
    Positional value sum(z_d * M_p**d) of a normalized number.

    Raises:
        Unnormalized: a digit's two encodings disagree
    """
    total = 0
    for d in reversed(range(len(x.digits))):
        total = total * cfg.Mp + _digit_value(x.digits[d], cfg)
    return total


def detect_overflow(z_p: Sequence[int], z_s: Sequence[int], cfg: HybridConfig) -> Tuple[Residues, int]:
    """
    Split one raw digit into its normalized remainder and carry.

    R|p = z|p; R|s = p2s(R|p). When R|s equals z|s the digit did not
    overflow. Otherwise Q|s = (z|s - R|s) * M_p^-1 over the secondary
    moduli and Q is recovered from its secondary residues.

    Returns:
        (primary residues of R, carry Q)
    """
    r_s = base_extend(z_p, cfg.primary, cfg.secondary)
    if r_s == tuple(z_s):
        return tuple(z_p), 0
    q_s = tuple(
        ((z - r) * inv) % m
        for z, r, inv, m in zip(z_s, r_s, cfg.mp_inv, cfg.secondary.moduli)
    )
    return tuple(z_p), crt_unsigned(q_s, cfg.secondary)


def normalize_digits(raw: Sequence[Digit], cfg: HybridConfig) -> HybridNumber:
    """
    Propagate carries through raw digits until every digit is below M_p.

    Each raw digit plus the incoming carry must stay below M_p * M_s for
    the dual encoding to identify it; callers validate that bound. A carry
    out of the top digit appends new digits.
    """
    digits: List[Digit] = []
    carry = 0
    d = 0
    while d < len(raw) or carry:
        z_p, z_s = raw[d] if d < len(raw) else _zero_digit(cfg)
        if carry:
            carry_p, carry_s = _encode_digit(carry, cfg)
            z_p = tuple((a + b) % m for a, b, m in zip(z_p, carry_p, cfg.primary.moduli))
            z_s = tuple((a + b) % m for a, b, m in zip(z_s, carry_s, cfg.secondary.moduli))
        r_p, carry = detect_overflow(z_p, z_s, cfg)
        digits.append((r_p, base_extend(r_p, cfg.primary, cfg.secondary)))
        d += 1
    return HybridNumber(tuple(digits))


def _check_capacity(raw_bound: int, cfg: HybridConfig, what: str) -> None:
    carry_bound = -(-raw_bound // (cfg.Mp - 1))
    if raw_bound + carry_bound >= cfg.capacity:
        raise DigitRangeViolation(
            f"{what} can produce raw digits up to {raw_bound + carry_bound}, "
            f"beyond M_p*M_s={cfg.capacity}; use larger secondary moduli"
        )


def dot_capacity(cfg: HybridConfig, digits: int) -> int:
    """Longest dot product of `digits`-digit operands the secondary set can carry."""
    per_term = digits * (cfg.Mp - 1) ** 2
    h = 0
    while True:
        raw = (h + 1) * per_term
        if raw + -(-raw // (cfg.Mp - 1)) >= cfg.capacity:
            return h
        h += 1


def _check_same_cfg(xs: Sequence[HybridNumber], cfg: HybridConfig) -> None:
    width = (len(cfg.primary), len(cfg.secondary))
    for x in xs:
        for z_p, z_s in x.digits:
            if (len(z_p), len(z_s)) != width:
                raise ModuliMismatch("Hybrid number was built over a different configuration")


def _pad(x: HybridNumber, D: int, cfg: HybridConfig) -> List[Digit]:
    return list(x.digits) + [_zero_digit(cfg)] * (D - len(x.digits))


def _digit_op(a: Digit, b: Digit, cfg: HybridConfig, op) -> Digit:
    return (
        tuple(op(x, y) % m for x, y, m in zip(a[0], b[0], cfg.primary.moduli)),
        tuple(op(x, y) % m for x, y, m in zip(a[1], b[1], cfg.secondary.moduli)),
    )


def hybrid_add(a: HybridNumber, b: HybridNumber, cfg: HybridConfig, auto_extend: bool = True) -> HybridNumber:
    """
    Digit-wise residue addition followed by carry propagation.

    Raises:
        HybridOverflow: the sum needs an extra digit and auto_extend is off
    """
    _check_same_cfg((a, b), cfg)
    _check_capacity(2 * (cfg.Mp - 1), cfg, "Addition")
    D = max(len(a), len(b))
    raw = [_digit_op(x, y, cfg, lambda p, q: p + q) for x, y in zip(_pad(a, D, cfg), _pad(b, D, cfg))]
    result = normalize_digits(raw, cfg)
    if len(result) > D and not auto_extend:
        raise HybridOverflow(f"Sum does not fit in {D} digits")
    return result


def _convolve_into(acc: List[Digit], x: HybridNumber, y: HybridNumber, cfg: HybridConfig) -> None:
    for i, xd in enumerate(x.digits):
        for j, yd in enumerate(y.digits):
            product = _digit_op(xd, yd, cfg, lambda p, q: p * q)
            acc[i + j] = _digit_op(acc[i + j], product, cfg, lambda p, q: p + q)


def hybrid_mul(a: HybridNumber, b: HybridNumber, cfg: HybridConfig) -> HybridNumber:
    """Long multiplication over digits; the product has len(a) + len(b) digits."""
    _check_same_cfg((a, b), cfg)
    _check_capacity(min(len(a), len(b)) * (cfg.Mp - 1) ** 2, cfg, "Multiplication")
    acc = [_zero_digit(cfg)] * (len(a) + len(b))
    _convolve_into(acc, a, b, cfg)
    return normalize_digits(acc, cfg)


def hybrid_dot(ws: Sequence[HybridNumber], xs: Sequence[HybridNumber], cfg: HybridConfig) -> HybridNumber:
    """
    Dot product with all partial products accumulated in digit space and one
    normalization pass at the end.

    The result has D_w + D_x + ceil(log2 h) digits.

    Raises:
        LengthMismatch: operand lists differ in length
        DigitRangeViolation: accumulated digits can outgrow M_p * M_s
    """
    if len(ws) != len(xs):
        raise LengthMismatch(f"Operand lists have lengths {len(ws)} and {len(xs)}")
    _check_same_cfg(tuple(ws) + tuple(xs), cfg)
    h = len(ws)
    D_w = max((len(w) for w in ws), default=1)
    D_x = max((len(x) for x in xs), default=1)
    if h == 0:
        return HybridNumber(tuple([_zero_digit(cfg)] * (D_w + D_x)))

    _check_capacity(h * min(D_w, D_x) * (cfg.Mp - 1) ** 2, cfg, f"Dot product of length {h}")
    budget = D_w + D_x + math.ceil(math.log2(h))
    acc = [_zero_digit(cfg)] * budget
    for w, x in zip(ws, xs):
        _convolve_into(acc, w, x, cfg)
    result = normalize_digits(acc, cfg)
    if len(result) > budget:
        raise HybridOverflow(f"Dot product carried out of its {budget}-digit budget")
    return result
