import csv
import json
import os

import numpy as np
import pytest

from config import config_from_dict
from errors import ConfigInvalid, ExperimentFailed, VerificationFailed
from experiments import flip_first_residue, lp_accuracy_trend, run_experiment, run_hybrid_check, run_verify
from exporters import FIELDNAMES


def _cfg(tmp_path, **raw):
    return config_from_dict({'output_dir': str(tmp_path), **raw})


def _read_csv(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


def test_energy_run_writes_artifacts(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='energy'), excel=True)
    assert result['status'] == 'success'
    assert [os.path.basename(p) for p in result['artifacts']] == ['energy.csv', 'energy.json', 'energy.xlsx']
    table = _read_csv(tmp_path / 'energy.csv')
    assert table[0] == FIELDNAMES['energy']
    assert len(table) == 16
    summary = json.loads((tmp_path / 'energy.json').read_text())
    assert summary['summary']['hp_over_rns_adc_energy_8bit'] > 1e6
    assert 'output_dir' not in summary['config']


def test_dot_error_run(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='dot-error', trials=500))
    assert len(result['rows']) == 1500
    assert result['summary']['rns_within_quantization_bound'] is True
    assert _read_csv(tmp_path / 'dot-error.csv')[0] == FIELDNAMES['dot-error']


def test_perr_curve_marks_infinite_attempts(tmp_path):
    run_experiment(_cfg(tmp_path, experiment='perr-curve', p_values=[0.01, 0.1], k_values=[0, 2],
                        R_values=[1, 'inf']))
    table = _read_csv(tmp_path / 'perr-curve.csv')
    assert table[0] == FIELDNAMES['perr-curve']
    assert len(table) == 1 + 2 * 2 * 2
    assert {row[2] for row in table[1:]} == {'1', 'inf'}
    summary = json.loads((tmp_path / 'perr-curve.json').read_text())
    assert summary['summary']['monotone_in_R'] is True
    assert summary['summary']['monotone_in_k'] is True
    assert summary['config']['R_values'] == [1, 'inf']


def test_perr_curve_is_monotone_in_k_and_R(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='perr-curve', p_values=[0.01, 0.1, 0.3],
                                 k_values=[4, 0, 2], R_values=[2, 'inf', 1]))
    assert result['summary']['monotone_in_R'] is True
    assert result['summary']['monotone_in_k'] is True


def test_detection_only_modulus_raises_single_attempt_perr(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='perr-curve', p_values=[0.1], k_values=[0, 1],
                                 R_values=[1, 'inf']))
    assert result['summary']['monotone_in_k'] is False
    p_err = {(r['k'], r['R']): r['p_err'] for r in result['rows']}
    assert p_err[(1, 1)] > p_err[(0, 1)]
    assert p_err[(1, 'inf')] < p_err[(0, 'inf')]


def test_rrns_mc_single_attempt_matches_closed_form(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='rrns-mc', preset='rns4', trials=20_000,
                                 p_values=[0.05], k_values=[2], R_values=[1]))
    row = result['rows'][0]
    assert row['ci_low'] <= row['analytic'] <= row['ci_high']
    assert result['summary']['outside_interval'] == 0


def test_hybrid_check_is_clean(tmp_path):
    result = run_hybrid_check(_cfg(tmp_path, experiment='hybrid-check', hybrid_cases=50))
    assert result.summary['failures'] == 0
    ops = [(r['config'], r['operation']) for r in result.rows]
    assert ('small', 'overflow') in ops
    assert ('rns4', 'overflow') not in ops


def test_hybrid_check_rejects_unknown_preset(tmp_path):
    with pytest.raises(ConfigInvalid):
        run_experiment(_cfg(tmp_path, experiment='hybrid-check', hybrid_presets=['huge']))


def test_verify_passes(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='verify', trials=300, verify_tiles=3, hybrid_cases=100))
    assert [r['verdict'] for r in result['rows']] == ['pass'] * 5
    assert _read_csv(tmp_path / 'verify.csv')[0] == FIELDNAMES['verify']


def test_verify_catches_fault_injection(tmp_path):
    cfg = _cfg(tmp_path, experiment='verify', trials=300, verify_tiles=3, hybrid_cases=100)
    with pytest.raises(VerificationFailed) as info:
        run_experiment(cfg, fault_hook=flip_first_residue)
    assert info.value.failing_suites == ['rns_equals_hp']
    table = _read_csv(tmp_path / 'verify.csv')
    assert ['rns_equals_hp', '15', '15', 'fail'] in table


def test_flip_first_residue_stays_in_range():
    residues = np.array([[0, 6, 14], [3, 4, 10]])
    flipped = flip_first_residue(residues, (15, 11))
    assert flipped[0].tolist() == [1, 7, 0]
    assert flipped[1].tolist() == [3, 4, 10]
    assert residues[0].tolist() == [0, 6, 14]


def test_verify_output_is_reproducible(tmp_path):
    outputs = []
    for workers in (1, 3):
        out = tmp_path / f'w{workers}'
        cfg = _cfg(out, experiment='verify', trials=3000, verify_tiles=20, hybrid_cases=100, seed=7, workers=workers)
        run_experiment(cfg)
        outputs.append(((out / 'verify.csv').read_bytes(), (out / 'verify.json').read_bytes()))
    assert outputs[0] == outputs[1]


def test_verify_passes_for_another_seed(tmp_path):
    a = run_verify(_cfg(tmp_path, experiment='verify', trials=300, verify_tiles=3, hybrid_cases=100, seed=1))
    assert not a.summary['failing_suites']


def test_train_then_infer(tmp_path):
    weights = str(tmp_path / 'mlp.rnst')
    common = dict(dataset='blobs', samples=128, hidden=8, steps=60, batch_size=32, lr=0.05,
                  core_kind='HP', bits=8, weights_path=weights)
    trained = run_experiment(_cfg(tmp_path, experiment='train', **common))
    assert os.path.exists(weights)
    assert trained['summary']['test_accuracy'] >= 0.9
    assert _read_csv(tmp_path / 'train.csv')[0] == ['step', 'loss', 'accuracy']

    inferred = run_experiment(_cfg(tmp_path, experiment='infer', b_values=[4, 8], h_values=[16, 128], **common))
    rows = inferred['rows']
    assert rows[0]['core_kind'] == 'FP32'
    kinds = {(r['core_kind'], r['b'], r['h']) for r in rows[1:]}
    assert ('RNS', 8, 128) in kinds and ('LP', 4, 16) in kinds
    hp8 = next(r for r in rows if r['core_kind'] == 'HP' and r['b'] == 8 and r['h'] == 128)
    rns8 = next(r for r in rows if r['core_kind'] == 'RNS' and r['b'] == 8 and r['h'] == 128)
    assert hp8['accuracy'] == rns8['accuracy']


def test_infer_reports_lp_trend(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='infer', dataset='blobs', samples=200, hidden=8, steps=150,
                                 batch_size=32, lr=0.05, b_values=[2, 8], h_values=[16, 128]))
    summary = result['summary']
    assert summary['fp32_accuracy'] >= 0.95
    assert summary['lp_trend_holds'] is True
    lp = {(r['b'], r['h']): r['accuracy'] for r in result['rows'] if r['core_kind'] == 'LP'}
    assert lp[(2, 128)] == 0.5
    assert summary['lp_near_fp32_at_8_bits'] is True


def test_lp_trend_flags_each_violation():
    def rows(grid):
        return [{'core_kind': 'LP', 'b': b, 'h': h, 'accuracy': acc} for (b, h), acc in grid.items()]

    good = {(4, 16): 0.9, (4, 128): 0.6, (8, 16): 0.99, (8, 128): 0.9}
    assert lp_accuracy_trend(rows(good), 0.995)['lp_trend_holds'] is True

    rising_in_h = {**good, (4, 128): 0.95, (8, 128): 0.99}
    assert lp_accuracy_trend(rows(rising_in_h), 0.995)['lp_non_increasing_in_h'] is False

    falling_in_b = {**good, (8, 128): 0.5}
    assert lp_accuracy_trend(rows(falling_in_b), 0.995)['lp_non_decreasing_in_b'] is False

    flags = lp_accuracy_trend(rows(good), 0.985)
    assert flags['lp_near_fp32_at_8_bits'] is True
    flags = lp_accuracy_trend(rows(good), 0.97)
    assert flags['lp_near_fp32_at_8_bits'] is False and flags['lp_trend_holds'] is False


def test_noise_sweep_degrades_with_error_rate(tmp_path):
    result = run_experiment(_cfg(tmp_path, experiment='noise-sweep', dataset='blobs', samples=128, hidden=8,
                                 steps=60, batch_size=32, lr=0.05, p_values=[0.0, 0.5], k_values=[0],
                                 R_values=[1]))
    clean, noisy = result['rows']
    assert clean['p_err'] == 0.0
    assert noisy['p_err'] == pytest.approx(1 - 0.5 ** 4)
    assert clean['accuracy'] >= 0.9
    assert noisy['accuracy'] < clean['accuracy']


def test_bad_weights_file_fails_the_run(tmp_path):
    weights = tmp_path / 'broken.rnst'
    weights.write_bytes(b'NOPE')
    with pytest.raises(ExperimentFailed):
        run_experiment(_cfg(tmp_path, experiment='infer', weights_path=str(weights), samples=32))
