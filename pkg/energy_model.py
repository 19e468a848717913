"""
Data-converter energy per dot product for LP, HP and RNS cores.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

from analog_core import CoreConfig, CoreKind, table_core_configs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConverterParams:
    """Unit capacitance, supply voltage and the ADC energy coefficients."""

    Cu: float = 0.5e-15
    Vdd: float = 1.0
    k1: float = 100e-15
    k2: float = 1e-18

    def __post_init__(self):
        for name in ('Cu', 'Vdd', 'k1', 'k2'):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"ConverterParams.{name} must be positive, got {value}")


@dataclass(frozen=True)
class EnergyRow:
    kind: str
    b_dac: int
    b_adc: int
    n_moduli: int
    dac_energy_j: float
    adc_energy_j: float

    @property
    def total_j(self) -> float:
        return self.dac_energy_j + self.adc_energy_j

    def as_dict(self) -> Dict:
        return {
            'kind': self.kind,
            'b_dac': self.b_dac,
            'b_adc': self.b_adc,
            'n_moduli': self.n_moduli,
            'dac_energy_j': self.dac_energy_j,
            'adc_energy_j': self.adc_energy_j,
            'total_j': self.total_j,
        }


def _check_enob(enob: float) -> None:
    if enob < 1:
        raise ValueError(f"ENOB must be at least 1, got {enob}")


def dac_energy(enob: float, params: ConverterParams = ConverterParams()) -> float:
    """Energy of one DAC conversion: ENOB^2 * Cu * Vdd^2."""
    _check_enob(enob)
    return enob ** 2 * params.Cu * params.Vdd ** 2


def adc_energy(enob: float, params: ConverterParams = ConverterParams()) -> float:
    """Energy of one ADC conversion: k1 * ENOB + k2 * 4^ENOB."""
    _check_enob(enob)
    return params.k1 * enob + params.k2 * 4.0 ** enob


def dot_energy_report(
    cfg: CoreConfig,
    params: ConverterParams = ConverterParams(),
    weight_stationary: bool = False,
    h: Optional[int] = None,
) -> EnergyRow:
    """
    Converter energy of one length-h dot product on a core.

    Counts h input DAC conversions, h weight DAC conversions (none when the
    weights stay programmed) and one ADC conversion. An RNS core repeats
    everything once per modulus.

    Args:
        cfg: Core configuration
        params: Converter constants
        weight_stationary: Skip the weight DAC conversions
        h: Override the dot-product length (defaults to cfg.h)
    """
    length = cfg.h if h is None else h
    if length < 0:
        raise ValueError(f"Dot-product length must be non-negative, got {length}")
    copies = cfg.n_moduli if cfg.kind == CoreKind.RNS else 1
    dac_conversions = length if weight_stationary else 2 * length

    return EnergyRow(
        kind=cfg.kind.value,
        b_dac=cfg.b_dac,
        b_adc=cfg.b_adc,
        n_moduli=copies,
        dac_energy_j=copies * dac_conversions * dac_energy(cfg.b_dac, params),
        adc_energy_j=copies * adc_energy(cfg.b_adc, params),
    )


def energy_table(
    h: int = 128,
    params: ConverterParams = ConverterParams(),
    weight_stationary: bool = False,
) -> List[EnergyRow]:
    """LP, HP and RNS energy rows for every preset moduli set."""
    rows = []
    for entry in table_core_configs(h):
        for kind in (CoreKind.LP, CoreKind.HP, CoreKind.RNS):
            row = dot_energy_report(entry[kind.value], params, weight_stationary)
            rows.append(row)
            logger.debug(
                f"{entry['preset']} {kind.value}: DAC {row.dac_energy_j:.3e} J, ADC {row.adc_energy_j:.3e} J"
            )
    return rows


def format_energy_table(rows: List[EnergyRow]) -> str:
    """Fixed-width table of energies in fJ for the console."""
    header = f"{'core':<5} {'b_dac':>5} {'b_adc':>5} {'n':>3} {'DAC fJ':>14} {'ADC fJ':>14} {'total fJ':>14}"
    lines = [header, '-' * len(header)]
    for row in rows:
        lines.append(
            f"{row.kind:<5} {row.b_dac:>5} {row.b_adc:>5} {row.n_moduli:>3} "
            f"{row.dac_energy_j * 1e15:>14.3f} {row.adc_energy_j * 1e15:>14.3f} {row.total_j * 1e15:>14.3f}"
        )
    return '\n'.join(lines)
