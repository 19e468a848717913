"""
Bit-accurate simulation of analog tile cores.

Three kinds of core run an h x h tile matrix-vector multiply on quantized
integer operands:

  LP   fixed point, ADC as wide as the DACs, keeps only the MSBs
  HP   fixed point, ADC as wide as the full dot product (lossless)
  RNS  one modular MVM per modulus, residues back through CRT (lossless
       whenever the moduli range covers the dot-product width)

Inputs and weights are scaled at run time: every weight row and every
input vector carries one FP32 scale (max |.|), so a tile MVM stores h+1
scales. The module also holds the output corruption model and behavioural
models of ring-oscillator and phase-shifter modulo.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    DigitOverflow,
    InvalidInverterCount,
    NonFiniteInput,
    NumericDrift,
    RangeViolation,
    ShapeMismatch,
)
from rns_core import (
    PRESETS,
    ModuliSet,
    check_range_constraint,
    crt_reconstruct_array,
    forward_convert_array,
    modular_dot,
    new_moduli_set,
    output_bits,
)

logger = logging.getLogger(__name__)

PHASE_TOLERANCE = 1e-6

# (stacked output residues, moduli) -> residues
ResidueHook = Callable[[np.ndarray, Tuple[int, ...]], np.ndarray]


class CoreKind(str, Enum):
    LP = 'LP'
    HP = 'HP'
    RNS = 'RNS'


@dataclass(frozen=True)
class CoreConfig:
    """A simulated analog core: converter widths, tile size and moduli."""

    kind: CoreKind
    b_dac: int
    b_adc: int
    h: int
    moduli: Optional[ModuliSet] = None

    @property
    def b_out(self) -> int:
        return output_bits(self.b_dac, self.b_dac, self.h)

    @property
    def lost_bits(self) -> int:
        return max(0, self.b_out - self.b_adc)

    @property
    def n_moduli(self) -> int:
        return len(self.moduli) if self.moduli is not None else 1

    @property
    def output_bound(self) -> int:
        """Largest magnitude the core can hand back as an integer output."""
        if self.kind == CoreKind.RNS:
            return self.moduli.psi
        return (1 << (self.b_out - 1)) - 1


def new_core_config(
    kind: str,
    h: int,
    bits: Optional[int] = None,
    moduli: Optional[ModuliSet] = None,
) -> CoreConfig:
    """
    Build a CoreConfig, deriving converter widths from the core kind.

    LP uses b_adc = b_dac, HP uses b_adc = b_out, RNS uses
    b_dac = b_adc = max ceil(log2 m_i) and requires the moduli range to
    cover b_out.

    Raises:
        ValueError: missing bits / moduli or an invalid tile size
        RangeViolation: RNS moduli too small for the tile
    """
    kind = CoreKind(kind)
    if h < 1:
        raise ValueError(f"Tile size must be at least 1, got {h}")

    if kind == CoreKind.RNS:
        if moduli is None:
            raise ValueError("An RNS core needs a moduli set")
        b = moduli.bits
        if bits is not None and bits != b:
            raise ValueError(f"RNS converters are {b} bits for moduli {moduli.moduli}, not {bits}")
        ok, b_out = check_range_constraint(b, b, h, moduli)
        if not ok:
            raise RangeViolation(
                f"log2(M)={moduli.log2_range:.2f} < b_out={b_out} for moduli {moduli.moduli}, h={h}"
            )
        return CoreConfig(kind, b, b, h, moduli)

    if bits is None or bits < 2:
        raise ValueError(f"{kind.value} core needs bits >= 2, got {bits}")
    b_adc = bits if kind == CoreKind.LP else output_bits(bits, bits, h)
    return CoreConfig(kind, bits, b_adc, h, None)


def table_core_configs(h: int = 128) -> List[Dict[str, CoreConfig]]:
    """LP / HP / RNS configurations for every preset moduli set."""
    rows = []
    for name, moduli in PRESETS.items():
        ms = new_moduli_set(moduli)
        b = ms.bits
        rows.append({
            'preset': name,
            'LP': new_core_config('LP', h, bits=b),
            'HP': new_core_config('HP', h, bits=b),
            'RNS': new_core_config('RNS', h, moduli=ms),
        })
    return rows


# ----------------------------------------------------------------------
# Quantization
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class QuantizedVector:
    """
    Symmetric integer codes with their FP32 scale.

    values may be a single vector or a (length, N) block of column vectors,
    in which case scale holds one entry per column.
    """

    values: np.ndarray
    scale: np.ndarray
    bits: int

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


@dataclass(frozen=True)
class QuantizedTile:
    """Weight tile quantized per row; scales holds one FP32 scale per row."""

    values: np.ndarray
    scales: np.ndarray
    bits: int

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


@dataclass(frozen=True)
class TileOutput:
    """Post-ADC integer outputs and the factors that map them back to FP32."""

    raw: np.ndarray
    scales: np.ndarray

    @property
    def as_float(self) -> np.ndarray:
        return (self.raw.astype(np.float32) * self.scales).astype(np.float32)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize_along(v: np.ndarray, b: int, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    if b < 2:
        raise ValueError(f"Quantization needs at least 2 bits, got {b}")
    v = np.asarray(v, dtype=np.float32)
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("Cannot quantize NaN or infinite values")
    qmax = (1 << (b - 1)) - 1
    if v.size == 0:
        return v.astype(np.int64), np.ones(0, dtype=np.float32)
    scale = np.max(np.abs(v), axis=axis, keepdims=True)
    scale = np.where(scale == 0, np.float32(1.0), scale).astype(np.float32)
    ratio = v.astype(np.float64) / scale.astype(np.float64) * qmax
    q = np.clip(round_half_away(ratio), -qmax, qmax).astype(np.int64)
    return q, np.squeeze(scale, axis=axis)


def quantize_symmetric(v: np.ndarray, b: int) -> QuantizedVector:
    """
    Quantize a vector (or a block of column vectors) to signed b-bit codes.

    scale = max|v| per vector (1 for an all-zero vector) and
    q = round_half_away(v / scale * (2^(b-1) - 1)).
    """
    v = np.asarray(v, dtype=np.float32)
    q, scale = _quantize_along(v, b, axis=0)
    return QuantizedVector(values=q, scale=scale, bits=b)


def quantize_rows(W: np.ndarray, b: int) -> QuantizedTile:
    """Quantize a weight tile with one scale per row."""
    W = np.asarray(W, dtype=np.float32)
    if W.ndim != 2:
        raise ShapeMismatch(f"Weight tile must be 2-D, got shape {W.shape}")
    q, scales = _quantize_along(W, b, axis=1)
    return QuantizedTile(values=q, scales=scales, bits=b)


def dequantize(qv: QuantizedVector) -> np.ndarray:
    return (qv.values.astype(np.float32) * (qv.scale / np.float32(qv.qmax))).astype(np.float32)


# ----------------------------------------------------------------------
# Tile MVM
# ----------------------------------------------------------------------

def _check_shapes(W: QuantizedTile, x: QuantizedVector, cfg: CoreConfig, kind: CoreKind) -> None:
    if cfg.kind != kind:
        raise ValueError(f"Expected a {kind.value} core, got {cfg.kind.value}")
    if W.values.shape[1] != x.values.shape[0]:
        raise ShapeMismatch(
            f"Tile has {W.values.shape[1]} columns but input has {x.values.shape[0]} rows"
        )
    if W.values.shape[1] > cfg.h or W.values.shape[0] > cfg.h:
        raise ShapeMismatch(f"Tile {W.values.shape} exceeds the {cfg.h}x{cfg.h} core")


def _output_scales(W: QuantizedTile, x: QuantizedVector) -> np.ndarray:
    w_scale = W.scales.astype(np.float32) / np.float32(W.qmax)
    x_scale = np.asarray(x.scale, dtype=np.float32) / np.float32(x.qmax)
    if x.values.ndim == 1:
        return (w_scale * x_scale).astype(np.float32)
    return (w_scale[:, None] * x_scale[None, :]).astype(np.float32)


def _exact_products(w: np.ndarray, x: np.ndarray, pairwise: bool) -> np.ndarray:
    if pairwise:
        return np.einsum('ij,ij->i', w, x)
    return w @ x


def adc_capture(exact: np.ndarray, cfg: CoreConfig) -> np.ndarray:
    """
    Keep the b_adc most significant bits of a b_out-bit output.

    Dropped LSBs are rounded half away from zero, the captured code is
    clamped to the signed ADC range and shifted back to full scale.
    """
    shift = cfg.b_out - cfg.b_adc
    if shift <= 0:
        return exact
    limit = (1 << (cfg.b_adc - 1)) - 1
    magnitude = (np.abs(exact) + (1 << (shift - 1))) >> shift
    captured = np.clip(np.sign(exact) * magnitude, -limit, limit)
    return captured << shift


def _rns_products(
    w: np.ndarray,
    x: np.ndarray,
    ms: ModuliSet,
    pairwise: bool,
    fault_hook: Optional[ResidueHook] = None,
) -> np.ndarray:
    w_res = forward_convert_array(w, ms)
    x_res = forward_convert_array(x, ms)
    out = np.stack([
        _exact_products(w_res[i], x_res[i], pairwise) % m
        for i, m in enumerate(ms.moduli)
    ])
    if fault_hook is not None:
        out = fault_hook(out, ms.moduli)
    return crt_reconstruct_array(out, ms)


def mvm_hp(W: QuantizedTile, x: QuantizedVector, cfg: CoreConfig) -> TileOutput:
    """Exact integer MVM captured losslessly by a b_out-bit ADC."""
    _check_shapes(W, x, cfg, CoreKind.HP)
    raw = _exact_products(W.values, x.values, pairwise=False)
    return TileOutput(raw=raw, scales=_output_scales(W, x))


def mvm_lp(W: QuantizedTile, x: QuantizedVector, cfg: CoreConfig) -> TileOutput:
    """Exact integer MVM followed by a truncating b_adc-bit ADC."""
    _check_shapes(W, x, cfg, CoreKind.LP)
    exact = _exact_products(W.values, x.values, pairwise=False)
    return TileOutput(raw=adc_capture(exact, cfg), scales=_output_scales(W, x))


def mvm_rns(
    W: QuantizedTile,
    x: QuantizedVector,
    cfg: CoreConfig,
    fault_hook: Optional[ResidueHook] = None,
) -> TileOutput:
    """
    Modular MVM per modulus, then signed CRT back to integers.

    Args:
        fault_hook: optional callable (residues, moduli) -> residues applied
            to the stacked output residues before reconstruction (negative
            controls only)

    Raises:
        RangeViolation: moduli range smaller than b_out
    """
    _check_shapes(W, x, cfg, CoreKind.RNS)
    ok, b_out = check_range_constraint(cfg.b_dac, cfg.b_dac, cfg.h, cfg.moduli)
    if not ok:
        raise RangeViolation(f"Moduli {cfg.moduli.moduli} cannot hold b_out={b_out}")
    raw = _rns_products(W.values, x.values, cfg.moduli, pairwise=False, fault_hook=fault_hook)
    return TileOutput(raw=np.asarray(raw, dtype=np.int64), scales=_output_scales(W, x))


def run_mvm(
    W: QuantizedTile,
    x: QuantizedVector,
    cfg: CoreConfig,
    fault_hook: Optional[ResidueHook] = None,
) -> TileOutput:
    """Dispatch a tile MVM to the core named by cfg.kind."""
    if cfg.kind == CoreKind.HP:
        return mvm_hp(W, x, cfg)
    if cfg.kind == CoreKind.LP:
        return mvm_lp(W, x, cfg)
    return mvm_rns(W, x, cfg, fault_hook=fault_hook)


def core_dot_products(wq: np.ndarray, xq: np.ndarray, cfg: CoreConfig) -> np.ndarray:
    """
    Row-paired integer dot products (row i of wq with row i of xq) on a core.

    Used by the dot-product error experiment, where every trial is an
    independent vector pair.
    """
    if wq.shape != xq.shape:
        raise ShapeMismatch(f"Operand shapes differ: {wq.shape} vs {xq.shape}")
    if cfg.kind == CoreKind.RNS:
        return np.asarray(_rns_products(wq, xq, cfg.moduli, pairwise=True), dtype=np.int64)
    exact = _exact_products(wq, xq, pairwise=True)
    return adc_capture(exact, cfg) if cfg.kind == CoreKind.LP else exact


# ----------------------------------------------------------------------
# Output corruption
# ----------------------------------------------------------------------

def corrupt_outputs(
    t: TileOutput,
    p_err: float,
    rng: np.random.Generator,
    cfg: CoreConfig,
) -> Tuple[TileOutput, np.ndarray]:
    """
    Replace each output with probability p_err by a uniform integer in the
    core's signed output range.

    Returns:
        (corrupted output, boolean mask of replaced elements)
    """
    if not 0.0 <= p_err <= 1.0:
        raise ValueError(f"p_err must be in [0, 1], got {p_err}")
    raw = np.asarray(t.raw, dtype=np.int64)
    mask = rng.random(raw.shape) < p_err
    if not mask.any():
        return t, mask
    bound = cfg.output_bound
    noise = rng.integers(-bound, bound, size=raw.shape, endpoint=True, dtype=np.int64)
    return TileOutput(raw=np.where(mask, noise, raw), scales=t.scales), mask


def tile_rng(seed: int, tile_index: int, stream: Tuple[int, ...] = ()) -> np.random.Generator:
    """
    Independent stream for one tile, identical under any evaluation order.

    stream tells apart GEMM calls that share a seed (layer, batch, pass).
    """
    key = tuple(stream) + (tile_index,)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ----------------------------------------------------------------------
# Behavioural analog modulo
# ----------------------------------------------------------------------

def ring_oscillator_modulo(A: int, N: int, max_ticks: int = 10_000_000) -> int:
    """
    Modulo through the state of an N-inverter ring oscillator.

    Exactly one inverter has equal input and output at any time; that
    position advances one stage per propagation delay. Sampling after
    A delays and taking the state difference yields |A|_N.

    Args:
        A: Non-negative dividend (number of propagation delays sampled)
        N: Odd number of inverters, at least 3
        max_ticks: Refuse to simulate more delays than this

    Raises:
        InvalidInverterCount: N even or below 3
    """
    if N < 3 or N % 2 == 0:
        raise InvalidInverterCount(f"A ring oscillator needs an odd count >= 3, got {N}")
    if A < 0:
        raise ValueError(f"Dividend must be non-negative, got {A}")
    if A > max_ticks:
        raise ValueError(f"{A} propagation delays exceeds max_ticks={max_ticks}")

    # node[i] is the output of inverter i and the input of inverter i+1.
    # Alternating levels with an odd count leave inverter 0 with in == out.
    nodes = [i % 2 for i in range(N)]
    nodes[0] = nodes[N - 1]

    def state() -> int:
        for i in range(N):
            if nodes[i - 1] == nodes[i]:
                return i
        raise RuntimeError("Ring oscillator lost its unique stable stage")

    start = state()
    current = start
    for _ in range(A):
        nodes[current] ^= 1
        current = (current + 1) % N
    return (state() - start) % N


def phase_shifter_modular_dot(
    w: Sequence[int],
    x: Sequence[int],
    m: int,
    digit_count: int,
) -> int:
    """
    Modular dot product through cascaded phase shifters.

    Each weight is laid out digit by digit on shifters of length 2^j; a digit
    that is set applies a voltage proportional to x_i * 2pi/m. The phase
    wraps at 2pi along the path and the final phase times m/2pi is the
    residue.

    Raises:
        DigitOverflow: some w_i needs more than digit_count digits
        NumericDrift: rescaled phase further than 1e-6 from an integer
    """
    if len(w) != len(x):
        raise ShapeMismatch(f"Vectors have lengths {len(w)} and {len(x)}")
    two_pi = 2.0 * math.pi
    unit = two_pi / m
    phase = 0.0
    for wi, xi in zip(w, x):
        if wi < 0 or xi < 0:
            raise ValueError("Phase-shifter operands must be non-negative")
        if wi >= (1 << digit_count):
            raise DigitOverflow(f"{wi} does not fit in {digit_count} digits")
        for j in range(digit_count):
            if (wi >> j) & 1:
                phase = math.fmod(phase + (1 << j) * xi * unit, two_pi)

    scaled = phase * m / two_pi
    nearest = round(scaled)
    if abs(scaled - nearest) > PHASE_TOLERANCE:
        raise NumericDrift(f"Phase rescaled to {scaled!r}, not within {PHASE_TOLERANCE} of an integer")
    return nearest % m


def check_phase_model(w: Sequence[int], x: Sequence[int], m: int, digit_count: int) -> bool:
    return phase_shifter_modular_dot(w, x, m, digit_count) == modular_dot(
        [wi % m for wi in w], [xi % m for xi in x], m
    )


# ----------------------------------------------------------------------
# Dot-product error experiment
# ----------------------------------------------------------------------

def quantization_error_bound(w_scale: np.ndarray, x_scale: np.ndarray, h: int, b: int) -> np.ndarray:
    """
    Worst-case |dot(w, x) - dot(w_q, x_q)| after rescale.

    Each operand is off by at most half a code, so every product term is off
    by at most s_w * s_x * (qmax + 1/4) / qmax^2.
    """
    qmax = (1 << (b - 1)) - 1
    scale = np.asarray(w_scale, dtype=np.float64) * np.asarray(x_scale, dtype=np.float64)
    return h * scale * (qmax + 0.25) / qmax ** 2


def dot_error_trials(
    cfgs: Sequence[CoreConfig],
    trials: int,
    rng: np.random.Generator,
) -> List[Dict]:
    """
    Absolute error versus FP32 of random dot products on each core.

    Every trial draws one FP32 vector pair uniform in [-1, 1) of length h;
    all cores see the same pairs.

    Returns:
        Rows (trial, core_kind, b, h, abs_error) plus a 'bound' entry holding
        the analytic quantization bound of the trial
    """
    h = cfgs[0].h
    w = rng.uniform(-1.0, 1.0, size=(trials, h)).astype(np.float32)
    x = rng.uniform(-1.0, 1.0, size=(trials, h)).astype(np.float32)
    reference = np.einsum('ij,ij->i', w.astype(np.float64), x.astype(np.float64))

    rows = []
    for cfg in cfgs:
        if cfg.h != h:
            raise ShapeMismatch("All cores in one experiment must share the tile size")
        wq = quantize_rows(w, cfg.b_dac)
        xq = quantize_rows(x, cfg.b_dac)
        raw = core_dot_products(wq.values, xq.values, cfg)
        qmax = np.float32(wq.qmax)
        scale = (wq.scales / qmax) * (xq.scales / qmax)
        estimate = (raw.astype(np.float32) * scale.astype(np.float32)).astype(np.float64)
        errors = np.abs(estimate - reference)
        bounds = quantization_error_bound(wq.scales, xq.scales, h, cfg.b_dac)
        for i in range(trials):
            rows.append({
                'trial': i,
                'core_kind': cfg.kind.value,
                'b': cfg.b_dac,
                'h': h,
                'abs_error': float(errors[i]),
                'bound': float(bounds[i]),
            })
    return rows
