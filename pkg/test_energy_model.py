import pytest

from analog_core import new_core_config
from energy_model import (
    ConverterParams,
    adc_energy,
    dac_energy,
    dot_energy_report,
    energy_table,
    format_energy_table,
)
from rns_core import get_preset

FJ = 1e-15


def test_dac_energy_examples():
    assert dac_energy(4) == pytest.approx(8 * FJ)
    assert dac_energy(1) == pytest.approx(0.5 * FJ)
    assert dac_energy(8) == pytest.approx(32 * FJ)


def test_adc_energy_example():
    assert adc_energy(6) == pytest.approx(604.096 * FJ)


def test_energy_rejects_enob_below_one():
    with pytest.raises(ValueError):
        dac_energy(0)
    with pytest.raises(ValueError):
        adc_energy(0.5)


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        ConverterParams(Cu=0)
    with pytest.raises(ValueError):
        ConverterParams(k2=-1e-18)


def test_adc_energy_grows_by_four_per_bit():
    assert adc_energy(31) / adc_energy(30) == pytest.approx(4.0, rel=1e-9)
    for b in range(1, 24):
        assert adc_energy(b + 1) > adc_energy(b)


def test_one_wide_adc_costs_more_than_several_narrow():
    assert adc_energy(22) / (3 * adc_energy(8)) >= 1e6


def test_rns_core_repeats_lp_energy_per_modulus():
    ms = get_preset('rns6')
    lp = dot_energy_report(new_core_config('LP', 128, bits=6))
    rns = dot_energy_report(new_core_config('RNS', 128, moduli=ms))
    assert rns.n_moduli == 4
    assert rns.dac_energy_j == pytest.approx(4 * lp.dac_energy_j)
    assert rns.adc_energy_j == pytest.approx(4 * lp.adc_energy_j)


def test_dot_energy_counts_conversions():
    cfg = new_core_config('HP', 128, bits=4)
    row = dot_energy_report(cfg)
    assert row.dac_energy_j == pytest.approx(2 * 128 * 8 * FJ)
    assert row.adc_energy_j == pytest.approx(adc_energy(14))
    ws = dot_energy_report(cfg, weight_stationary=True)
    assert ws.dac_energy_j == pytest.approx(row.dac_energy_j / 2)
    assert ws.total_j == pytest.approx(ws.dac_energy_j + ws.adc_energy_j)


def test_empty_dot_product_spends_only_the_adc():
    cfg = new_core_config('LP', 128, bits=6)
    row = dot_energy_report(cfg, h=0)
    assert row.dac_energy_j == 0
    assert row.adc_energy_j == pytest.approx(adc_energy(6))


def test_energy_table_orders_cores():
    rows = energy_table(128)
    assert len(rows) == 15
    for i in range(0, 15, 3):
        lp, hp, rns = rows[i:i + 3]
        assert (lp.kind, hp.kind, rns.kind) == ('LP', 'HP', 'RNS')
        assert hp.total_j > rns.total_j > lp.total_j
    text = format_energy_table(rows)
    assert text.splitlines()[0].split()[0] == 'core'
    assert len(text.splitlines()) == 17
