"""
Experiment runners behind the CLI subcommands.

Each runner takes an ExperimentConfig and returns an ExperimentResult of CSV
rows plus a JSON-able summary; run_experiment writes the artifacts. Runs
are fully determined by the config and its seed.
"""
import dataclasses
import logging
import math
import os
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from analog_core import (
    CoreConfig,
    dot_error_trials,
    mvm_hp,
    mvm_rns,
    new_core_config,
    QuantizedTile,
    QuantizedVector,
    ResidueHook,
)
from config import ExperimentConfig
from datasets import Dataset, MnistClient, find_mnist, load_mnist, synth_dataset
from energy_model import ConverterParams, energy_table, format_energy_table
from errors import (
    ConfigInvalid,
    ExperimentFailed,
    RangeViolation,
    VerificationFailed,
    WorkbenchError,
)
from exporters import FIELDNAMES, export_json, export_rows_to_csv, export_rows_to_excel
from extended_rns import (
    HYBRID_PRESETS,
    HybridConfig,
    detect_overflow,
    dot_capacity,
    from_hybrid,
    get_hybrid_preset,
    hybrid_add,
    hybrid_dot,
    hybrid_mul,
    to_hybrid,
)
from nn_runner import (
    Model,
    build_cnn,
    build_mlp,
    evaluate,
    load_weights,
    new_train_state,
    save_weights,
    train_model,
)
from rns_core import (
    PRESETS,
    crt_reconstruct_array,
    forward_convert_array,
    get_preset,
)
from rrns_codec import (
    analytic_curve_rows,
    code_distance,
    encode,
    error_probabilities,
    hamming_distance,
    monte_carlo_p_err,
    new_rrns_config,
    output_error_probability,
    rrns_from_preset,
)

logger = logging.getLogger(__name__)

FaultHook = Optional[ResidueHook]

# accuracy slack for the LP trend checks in infer
TREND_TOLERANCE = 0.01 + 1e-12


@dataclass
class ExperimentResult:
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any] = field(default_factory=dict)
    console: Optional[str] = None


def _attempts_label(R: float) -> Any:
    return 'inf' if math.isinf(R) else int(R)


def _sub_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for one grid point."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def make_core(kind: str, bits: int, h: int, preset: str) -> CoreConfig:
    """
    Core of the given kind; RNS cores take the preset matching `bits` when
    there is one and `preset` otherwise.
    """
    if kind == 'RNS':
        name = f'rns{bits}' if f'rns{bits}' in PRESETS else preset
        return new_core_config('RNS', h, moduli=get_preset(name))
    return new_core_config(kind, h, bits=bits)


# ----------------------------------------------------------------------
# Converters and precision
# ----------------------------------------------------------------------

def run_dot_error(cfg: ExperimentConfig) -> ExperimentResult:
    """Per-trial |error| against FP32 for LP, HP and RNS cores sharing one set of vector pairs."""
    ms = get_preset(cfg.preset)
    b = ms.bits
    if b != cfg.bits:
        logger.warning(f"Preset {cfg.preset} uses {b}-bit converters; ignoring bits={cfg.bits}")
    cores = [
        new_core_config('LP', cfg.h, bits=b),
        new_core_config('HP', cfg.h, bits=b),
        new_core_config('RNS', cfg.h, moduli=ms),
    ]
    rows = dot_error_trials(cores, cfg.trials, np.random.default_rng(cfg.seed))

    medians = {}
    for core in cores:
        errors = [r['abs_error'] for r in rows if r['core_kind'] == core.kind.value]
        medians[core.kind.value] = float(np.median(errors))
    rns_rows = [r for r in rows if r['core_kind'] == 'RNS']
    within_bound = all(r['abs_error'] <= r['bound'] * (1 + 1e-6) + 1e-6 for r in rns_rows)
    ratio = medians['LP'] / medians['RNS'] if medians['RNS'] > 0 else math.inf

    logger.info(f"Median |error|: LP={medians['LP']:.4g} HP={medians['HP']:.4g} RNS={medians['RNS']:.4g}")
    return ExperimentResult(rows, {
        'bits': b,
        'h': cfg.h,
        'trials': cfg.trials,
        'median_abs_error': medians,
        'lp_over_rns_median': ratio if math.isfinite(ratio) else 'inf',
        'rns_within_quantization_bound': within_bound,
    })


def run_energy(cfg: ExperimentConfig) -> ExperimentResult:
    params = ConverterParams(**cfg.converter)
    table = energy_table(cfg.h, params, cfg.weight_stationary)
    rows = [row.as_dict() for row in table]
    by_key = {(r.kind, r.b_dac): r for r in table}
    rns8 = get_preset('rns8')
    hp = by_key[('HP', rns8.bits)]
    rns = by_key[('RNS', rns8.bits)]
    return ExperimentResult(
        rows,
        {
            'h': cfg.h,
            'weight_stationary': cfg.weight_stationary,
            'hp_over_rns_adc_energy_8bit': hp.adc_energy_j / rns.adc_energy_j,
        },
        console=format_energy_table(table),
    )


# ----------------------------------------------------------------------
# Redundant RNS
# ----------------------------------------------------------------------

def _non_increasing(curve: List[float]) -> bool:
    return not any(b > a + 1e-15 for a, b in zip(curve, curve[1:]))


def run_perr_curve(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Closed-form p_err over the (p, k, R) grid.

    The summary flags whether every curve is non-increasing in R at fixed
    (p, k) and in k at fixed (p, R). At R=1 a detection-only modulus (odd k)
    raises p_err, so the k check is only expected to hold on grids whose k
    steps add correction capability.
    """
    ms = get_preset(cfg.preset)
    rows = analytic_curve_rows(lambda k: rrns_from_preset(ms, k), cfg.p_values, cfg.k_values, cfg.R_values)
    p_err = {(r['p'], r['k'], r['R']): r['p_err'] for r in rows}
    attempts = sorted(cfg.R_values, key=_sort_R)
    ks = sorted(set(cfg.k_values))

    monotone_in_R = all(
        _non_increasing([p_err[(p, k, _attempts_label(R))] for R in attempts])
        for k in ks for p in cfg.p_values
    )
    monotone_in_k = all(
        _non_increasing([p_err[(p, k, _attempts_label(R))] for k in ks])
        for R in attempts for p in cfg.p_values
    )
    if not monotone_in_k:
        logger.warning("p_err grows with k somewhere on this grid (detection-only moduli at low R)")
    return ExperimentResult(rows, {
        'preset': cfg.preset,
        'redundant_moduli': {str(k): list(rrns_from_preset(ms, k).redundant) for k in cfg.k_values},
        'monotone_in_R': monotone_in_R,
        'monotone_in_k': monotone_in_k,
    })


def _sort_R(R: float) -> float:
    return math.inf if math.isinf(R) else float(R)


def run_rrns_mc(cfg: ExperimentConfig) -> ExperimentResult:
    """Monte Carlo p_err next to the closed form for every grid point."""
    ms = get_preset(cfg.preset)
    rows = []
    disagreements = 0
    for ki, k in enumerate(cfg.k_values):
        code = rrns_from_preset(ms, k)
        for pi, p in enumerate(cfg.p_values):
            probs = error_probabilities(code, p)
            for ri, R in enumerate(cfg.R_values):
                mc = monte_carlo_p_err(code, p, R, cfg.trials, _sub_seed(cfg.seed, ki, pi, ri), cfg.workers)
                analytic = output_error_probability(probs, R)
                if not mc.ci_low <= analytic <= mc.ci_high:
                    disagreements += 1
                rows.append({
                    'p': p,
                    'k': k,
                    'R': _attempts_label(R),
                    'trials': mc.trials,
                    'empirical': mc.empirical,
                    'ci_low': mc.ci_low,
                    'ci_high': mc.ci_high,
                    'analytic': analytic,
                })
                logger.info(f"k={k} p={p} R={_attempts_label(R)}: MC {mc.empirical:.4g} vs analytic {analytic:.4g}")
    return ExperimentResult(rows, {
        'preset': cfg.preset,
        'points': len(rows),
        'outside_interval': disagreements,
    })


# ----------------------------------------------------------------------
# Networks
# ----------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset, Callable[[int], Model]]:
    """
    Train/test data and a model builder for the configured dataset.

    MNIST files come from data_dir and are downloaded when missing.
    """
    if cfg.dataset == 'mnist':
        paths = find_mnist(cfg.data_dir)
        if paths is None:
            logger.info(f"MNIST not found under {cfg.data_dir}, downloading")
            paths = MnistClient().download(cfg.data_dir)
        train, test = load_mnist(paths, limit=cfg.samples)
        return train, test, lambda seed: build_cnn(seed)

    train = synth_dataset(cfg.dataset, cfg.samples, seed=cfg.seed)
    test = synth_dataset(cfg.dataset, cfg.samples, seed=cfg.seed + 1)
    return train, test, lambda seed: build_mlp((2, cfg.hidden, 2), seed)


def _weights_path(cfg: ExperimentConfig) -> str:
    return cfg.weights_path or os.path.join(cfg.output_dir, 'weights.rnst')


def _train(cfg: ExperimentConfig, model: Model, train: Dataset, core: Optional[CoreConfig]) -> List[Dict]:
    state = new_train_state(
        model,
        lr=cfg.lr,
        momentum=cfg.momentum,
        seed=cfg.seed,
        decay_steps=cfg.decay_steps,
        decay_factor=cfg.decay_factor,
        master_weights=cfg.master_weights,
        weight_bits=core.b_dac if core is not None else 8,
    )
    return train_model(model, train.X, train.y, state, cfg.steps, core, cfg.batch_size)


def run_train(cfg: ExperimentConfig) -> ExperimentResult:
    train, test, builder = load_data(cfg)
    core = make_core(cfg.core_kind, cfg.bits, cfg.h, cfg.preset)
    model = builder(cfg.seed)
    history = _train(cfg, model, train, core)
    path = _weights_path(cfg)
    save_weights(model, path)
    test_acc = evaluate(model, test.X, test.y, core)
    return ExperimentResult(history, {
        'core_kind': core.kind.value,
        'b': core.b_dac,
        'h': core.h,
        'train_accuracy': history[-1]['accuracy'],
        'test_accuracy': test_acc,
        'weights_file': os.path.basename(path),
    })


def _trained_model(cfg: ExperimentConfig, builder, train: Dataset) -> Model:
    model = builder(cfg.seed)
    if cfg.weights_path and os.path.exists(cfg.weights_path):
        logger.info(f"Loading weights from {cfg.weights_path}")
        return load_weights(model, cfg.weights_path)
    logger.info(f"No weights file given; training {cfg.steps} steps in FP32 first")
    _train(cfg, model, train, None)
    return model


def lp_accuracy_trend(rows: List[Dict[str, Any]], reference: float) -> Dict[str, bool]:
    """
    Check LP accuracy over the (b, h) grid against the expected trend.

    Accuracy averaged over b must not rise with h, accuracy at each h must
    not fall with b, and 8-bit LP cores with h <= 16 must stay within
    TREND_TOLERANCE of FP32. All comparisons allow TREND_TOLERANCE of slack.
    """
    lp = {(r['b'], r['h']): r['accuracy'] for r in rows if r['core_kind'] == 'LP'}
    bits = sorted({b for b, _ in lp})
    tiles = sorted({h for _, h in lp})

    by_h = [float(np.mean([lp[(b, h)] for b in bits if (b, h) in lp])) for h in tiles]
    non_increasing_in_h = all(later <= earlier + TREND_TOLERANCE for earlier, later in zip(by_h, by_h[1:]))

    non_decreasing_in_b = True
    for h in tiles:
        curve = [lp[(b, h)] for b in bits if (b, h) in lp]
        if any(later < earlier - TREND_TOLERANCE for earlier, later in zip(curve, curve[1:])):
            non_decreasing_in_b = False

    near_fp32 = all(
        abs(acc - reference) <= TREND_TOLERANCE for (b, h), acc in lp.items() if b == 8 and h <= 16
    )
    return {
        'lp_non_increasing_in_h': non_increasing_in_h,
        'lp_non_decreasing_in_b': non_decreasing_in_b,
        'lp_near_fp32_at_8_bits': near_fp32,
        'lp_trend_holds': non_increasing_in_h and non_decreasing_in_b and near_fp32,
    }


def run_infer(cfg: ExperimentConfig) -> ExperimentResult:
    """Accuracy on each core over the (b, h) grid, next to the FP32 reference."""
    train, test, builder = load_data(cfg)
    model = _trained_model(cfg, builder, train)
    reference = evaluate(model, test.X, test.y)
    rows = [{'core_kind': 'FP32', 'b': 32, 'h': 0, 'accuracy': reference}]
    for b in cfg.b_values:
        for h in cfg.h_values:
            for kind in ('LP', 'HP', 'RNS'):
                try:
                    core = make_core(kind, b, h, cfg.preset)
                except RangeViolation as e:
                    logger.debug(f"Skipping {kind} b={b} h={h}: {e}")
                    continue
                acc = evaluate(model, test.X, test.y, core)
                rows.append({'core_kind': kind, 'b': core.b_dac, 'h': h, 'accuracy': acc})
                logger.info(f"{kind} b={core.b_dac} h={h}: accuracy {acc:.4f}")
    summary = {'fp32_accuracy': reference, 'dataset': cfg.dataset}
    summary.update(lp_accuracy_trend(rows, reference))
    if not summary['lp_trend_holds']:
        logger.warning("LP accuracy does not follow the expected trend over the (b, h) grid")
    return ExperimentResult(rows, summary)


def run_noise_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Accuracy of a trained model when every tile output fails with the p_err
    an RRNS code leaves behind at single-residue error rate p.
    """
    train, test, builder = load_data(cfg)
    model = _trained_model(cfg, builder, train)
    ms = get_preset(cfg.preset)
    core = new_core_config('RNS', cfg.h, moduli=ms)
    rows = []
    for ki, k in enumerate(cfg.k_values):
        code = rrns_from_preset(ms, k)
        for pi, p in enumerate(cfg.p_values):
            probs = error_probabilities(code, p)
            for ri, R in enumerate(cfg.R_values):
                p_err = output_error_probability(probs, R)
                acc = evaluate(model, test.X, test.y, core, p_err=p_err, seed=_sub_seed(cfg.seed, ki, pi, ri))
                rows.append({'p': p, 'k': k, 'R': _attempts_label(R), 'p_err': p_err, 'accuracy': acc})
                logger.info(f"k={k} p={p} R={_attempts_label(R)}: p_err={p_err:.3e} accuracy={acc:.4f}")
    return ExperimentResult(rows, {'preset': cfg.preset, 'clean_accuracy': evaluate(model, test.X, test.y, core)})


# ----------------------------------------------------------------------
# Extended RNS
# ----------------------------------------------------------------------

def hybrid_oracle_rows(name: str, hcfg: HybridConfig, cases: int, rng: random.Random) -> List[Dict]:
    """Random add / mul / dot checks against Python integers, plus the exhaustive overflow check on small sets."""
    digits = 2
    limit = hcfg.Mp ** digits
    failures = {'add': 0, 'mul': 0, 'dot': 0}

    for _ in range(cases):
        a, b = rng.randrange(limit), rng.randrange(limit)
        ha, hb = to_hybrid(a, digits, hcfg), to_hybrid(b, digits, hcfg)
        if from_hybrid(hybrid_add(ha, hb, hcfg), hcfg) != a + b:
            failures['add'] += 1
        if from_hybrid(hybrid_mul(ha, hb, hcfg), hcfg) != a * b:
            failures['mul'] += 1

    dot_digits = 1
    h = max(1, min(8, dot_capacity(hcfg, dot_digits)))
    dot_limit = hcfg.Mp ** dot_digits
    for _ in range(cases):
        ws = [rng.randrange(dot_limit) for _ in range(h)]
        xs = [rng.randrange(dot_limit) for _ in range(h)]
        result = hybrid_dot(
            [to_hybrid(w, dot_digits, hcfg) for w in ws],
            [to_hybrid(x, dot_digits, hcfg) for x in xs],
            hcfg,
        )
        if from_hybrid(result, hcfg) != sum(w * x for w, x in zip(ws, xs)):
            failures['dot'] += 1

    rows = [
        {'config': name, 'operation': op, 'cases': cases, 'failures': failures[op]}
        for op in ('add', 'mul', 'dot')
    ]
    if hcfg.capacity <= 1 << 16:
        rows.append({'config': name, 'operation': 'overflow', 'cases': hcfg.capacity,
                     'failures': overflow_detector_failures(hcfg)})
    return rows


def overflow_detector_failures(hcfg: HybridConfig) -> int:
    """Raw digit values in [0, M_p*M_s) whose detected carry is not value // M_p."""
    failures = 0
    for value in range(hcfg.capacity):
        z_p = tuple(value % m for m in hcfg.primary.moduli)
        z_s = tuple(value % m for m in hcfg.secondary.moduli)
        _, carry = detect_overflow(z_p, z_s, hcfg)
        if carry != value // hcfg.Mp:
            failures += 1
    return failures


def run_hybrid_check(cfg: ExperimentConfig) -> ExperimentResult:
    rows = []
    for i, name in enumerate(cfg.hybrid_presets):
        if name not in HYBRID_PRESETS:
            raise ConfigInvalid(f"Unknown hybrid preset '{name}'")
        rows.extend(hybrid_oracle_rows(name, get_hybrid_preset(name), cfg.hybrid_cases,
                                       random.Random(_sub_seed(cfg.seed, i))))
    total_failures = sum(r['failures'] for r in rows)
    return ExperimentResult(rows, {'failures': total_failures})


# ----------------------------------------------------------------------
# Verification suites
# ----------------------------------------------------------------------

def _suite_crt(rng: np.random.Generator, cases: int) -> Tuple[int, int]:
    small = get_preset('rns4')
    values = np.arange(-small.psi, small.psi + 1, dtype=np.int64)
    back = crt_reconstruct_array(forward_convert_array(values, small), small)
    failures = int(np.count_nonzero(back != values))
    total = len(values)
    for name in PRESETS:
        ms = get_preset(name)
        values = rng.integers(-ms.psi, ms.psi, size=cases, endpoint=True, dtype=np.int64)
        back = crt_reconstruct_array(forward_convert_array(values, ms), ms)
        failures += int(np.count_nonzero(back != values))
        total += cases
    return total, failures


def _suite_rns_equals_hp(rng: np.random.Generator, tiles: int, fault_hook: FaultHook) -> Tuple[int, int]:
    h = 128
    failures = 0
    total = 0
    for name in PRESETS:
        ms = get_preset(name)
        b = ms.bits
        qmax = (1 << (b - 1)) - 1
        hp = new_core_config('HP', h, bits=b)
        rns = new_core_config('RNS', h, moduli=ms)
        for _ in range(tiles):
            W = QuantizedTile(rng.integers(-qmax, qmax, size=(h, h), endpoint=True), np.ones(h, dtype=np.float32), b)
            x = QuantizedVector(rng.integers(-qmax, qmax, size=h, endpoint=True), np.float32(1.0), b)
            if not np.array_equal(mvm_hp(W, x, hp).raw, mvm_rns(W, x, rns, fault_hook=fault_hook).raw):
                failures += 1
            total += 1
    return total, failures


def _suite_distance(cfg: ExperimentConfig) -> Tuple[int, int]:
    code = new_rrns_config((3, 5), (7,))
    zero = encode(0, code).residues
    counts = [0] * (len(code.all_moduli) + 1)
    for A in range(code.legitimate_M):
        counts[hamming_distance(encode(A, code).residues, zero)] += 1
    failures = sum(1 for eta, c in enumerate(counts) if c != code_distance(code, eta))
    return len(counts), failures


def _suite_monte_carlo(cfg: ExperimentConfig) -> Tuple[int, int]:
    code = new_rrns_config((3, 5), (7,))
    failures = 0
    ps = (0.01, 0.05, 0.1)
    for i, p in enumerate(ps):
        mc = monte_carlo_p_err(code, p, 1, cfg.trials * 10, _sub_seed(cfg.seed, 100, i), cfg.workers)
        analytic = output_error_probability(error_probabilities(code, p), 1)
        if not mc.ci_low <= analytic <= mc.ci_high:
            failures += 1
    return len(ps), failures


def _suite_hybrid(cfg: ExperimentConfig) -> Tuple[int, int]:
    rows = hybrid_oracle_rows('small', get_hybrid_preset('small'), max(1, cfg.hybrid_cases // 10),
                              random.Random(_sub_seed(cfg.seed, 200)))
    return sum(r['cases'] for r in rows), sum(r['failures'] for r in rows)


def run_verify(cfg: ExperimentConfig, fault_hook: FaultHook = None) -> ExperimentResult:
    """
    Run every oracle suite and report pass/fail per suite.

    Args:
        fault_hook: applied to RNS output residues in the RNS-vs-HP suite;
            used to check that a broken residue path is caught
    """
    rng = np.random.default_rng(cfg.seed)
    suites = [
        ('crt_round_trip', lambda: _suite_crt(rng, cfg.trials)),
        ('rns_equals_hp', lambda: _suite_rns_equals_hp(rng, cfg.verify_tiles, fault_hook)),
        ('distance_distribution', lambda: _suite_distance(cfg)),
        ('monte_carlo_vs_analytic', lambda: _suite_monte_carlo(cfg)),
        ('hybrid_vs_bigint', lambda: _suite_hybrid(cfg)),
    ]
    rows = []
    for suite, run in suites:
        cases, failures = run()
        verdict = 'pass' if failures == 0 else 'fail'
        rows.append({'suite': suite, 'cases': cases, 'failures': failures, 'verdict': verdict})
        logger.info(f"  {suite}: {cases} cases, {failures} failures - {verdict}")
    failing = [r['suite'] for r in rows if r['verdict'] == 'fail']
    return ExperimentResult(rows, {'failing_suites': failing, 'verdicts': {r['suite']: r['verdict'] for r in rows}})


def flip_first_residue(residues: np.ndarray, moduli: Tuple[int, ...]) -> np.ndarray:
    """Fault hook: move every output of the first modulus to the next residue."""
    out = residues.copy()
    out[0] = (out[0] + 1) % moduli[0]
    return out


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    'dot-error': run_dot_error,
    'energy': run_energy,
    'perr-curve': run_perr_curve,
    'rrns-mc': run_rrns_mc,
    'noise-sweep': run_noise_sweep,
    'train': run_train,
    'infer': run_infer,
    'hybrid-check': run_hybrid_check,
    'verify': run_verify,
}


def _jsonable_config(cfg: ExperimentConfig) -> Dict[str, Any]:
    raw = dataclasses.asdict(cfg)
    raw['R_values'] = [_attempts_label(R) for R in cfg.R_values]
    # Output location and thread count never change results.
    raw.pop('output_dir')
    raw.pop('workers')
    return raw


def run_experiment(cfg: ExperimentConfig, excel: bool = False, fault_hook: FaultHook = None) -> Dict[str, Any]:
    """
    Run one experiment and write <name>.csv and <name>.json under output_dir.

    Returns:
        Dict with status, artifact paths, rows and summary

    Raises:
        ConfigInvalid: the config cannot drive this experiment
        VerificationFailed: some verify suite failed (artifacts are written first)
        ExperimentFailed: any other failure while running
    """
    name = cfg.experiment
    logger.info("=" * 60)
    logger.info(f"Experiment {name} (seed={cfg.seed})")
    logger.info("=" * 60)

    try:
        if name == 'verify':
            result = run_verify(cfg, fault_hook=fault_hook)
        else:
            result = RUNNERS[name](cfg)
    except ConfigInvalid:
        raise
    except (WorkbenchError, ValueError, OSError) as e:
        logger.error(f"Experiment {name} failed: {e}", exc_info=True)
        raise ExperimentFailed(f"{name}: {e}") from e

    fieldnames = FIELDNAMES[name]
    csv_path = export_rows_to_csv(result.rows, fieldnames, os.path.join(cfg.output_dir, f"{name}.csv"))
    json_path = export_json(
        {'experiment': name, 'config': _jsonable_config(cfg), 'summary': result.summary, 'rows': len(result.rows)},
        os.path.join(cfg.output_dir, f"{name}.json"),
    )
    artifacts = [csv_path, json_path]
    if excel:
        artifacts.append(export_rows_to_excel(result.rows, fieldnames,
                                              os.path.join(cfg.output_dir, f"{name}.xlsx"), name))

    logger.info("=" * 60)
    logger.info(f"Experiment {name} finished: {len(result.rows)} rows")
    logger.info("=" * 60)

    failing = result.summary.get('failing_suites') if name == 'verify' else None
    if failing:
        raise VerificationFailed(failing)
    return {
        'status': 'success',
        'experiment': name,
        'artifacts': artifacts,
        'rows': result.rows,
        'summary': result.summary,
        'console': result.console,
    }
