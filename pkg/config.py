"""
Experiment configuration: a JSON file validated into ExperimentConfig, plus
the environment variables read from .env.

    RNS_WORKBENCH_OUTPUT_DIR   output directory override
    RNS_WORKBENCH_THREADS      worker threads for Monte Carlo runs
    RNS_WORKBENCH_LOG_LEVEL    logging level name
    MNIST_BASE_URL             mirror for the MNIST download client
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from errors import ConfigInvalid

logger = logging.getLogger(__name__)

EXPERIMENT_NAMES = (
    'dot-error',
    'energy',
    'perr-curve',
    'rrns-mc',
    'noise-sweep',
    'train',
    'infer',
    'hybrid-check',
    'verify',
)

CORE_KINDS = ('LP', 'HP', 'RNS')
DATASETS = ('blobs', 'xor', 'mnist')


def load_environment() -> None:
    """Load .env if present; an unreadable file is logged and skipped."""
    try:
        load_dotenv()
    except UnicodeDecodeError as e:
        logger.warning(f"Could not read .env file due to encoding error: {e}")
    except Exception as e:
        logger.warning(f"Could not load .env file: {e}")


def parse_attempts(value: Any) -> float:
    """Number of attempts R: a positive integer or the string 'inf'."""
    if isinstance(value, str):
        if value.strip().lower() == 'inf':
            return math.inf
        raise ConfigInvalid(f"Attempts must be a positive integer or 'inf', got '{value}'")
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigInvalid(f"Attempts must be a positive integer or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs; runs are fully determined by (config, seed)."""

    experiment: str
    seed: int = 0
    output_dir: str = 'results'
    workers: int = 1

    # cores
    core_kind: str = 'RNS'
    preset: str = 'rns6'
    bits: int = 6
    h: int = 128
    weight_stationary: bool = False
    converter: Dict[str, float] = field(default_factory=dict)

    # sweeps
    trials: int = 10_000
    p_values: Tuple[float, ...] = (0.001, 0.01, 0.05, 0.1, 0.2, 0.3)
    k_values: Tuple[int, ...] = (0, 1, 2, 3)
    R_values: Tuple[float, ...] = (1, 2, math.inf)
    b_values: Tuple[int, ...] = (4, 6, 8)
    h_values: Tuple[int, ...] = (16, 32, 64, 128)
    # random 128 x 128 tiles per preset in the RNS-vs-HP verify suite
    verify_tiles: int = 1000

    # extended RNS
    hybrid_presets: Tuple[str, ...] = ('small', 'rns4')
    hybrid_cases: int = 10_000

    # networks
    dataset: str = 'blobs'
    samples: int = 512
    hidden: int = 16
    steps: int = 500
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    decay_steps: int = 0
    decay_factor: float = 0.1
    master_weights: bool = True
    weights_path: Optional[str] = None
    data_dir: str = 'data'


_TUPLE_FIELDS = {
    'p_values': float,
    'k_values': int,
    'b_values': int,
    'h_values': int,
    'hybrid_presets': str,
}


def _as_tuple(key: str, value: Any, kind) -> Tuple:
    if not isinstance(value, list) or not value:
        raise ConfigInvalid(f"'{key}' must be a non-empty list")
    out = []
    for item in value:
        if kind is float and isinstance(item, int) and not isinstance(item, bool):
            item = float(item)
        if not isinstance(item, kind) or isinstance(item, bool):
            raise ConfigInvalid(f"'{key}' entries must be {kind.__name__}, got {item!r}")
        out.append(item)
    return tuple(out)


def _check_scalar(key: str, value: Any, expected: Any) -> Any:
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigInvalid(f"'{key}' must be true or false")
        return value
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigInvalid(f"'{key}' must be an integer, got {value!r}")
    if expected in (float, str) and not isinstance(value, expected):
        raise ConfigInvalid(f"'{key}' must be a {expected.__name__}, got {value!r}")
    return value


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a parsed JSON object into an ExperimentConfig.

    Raises:
        ConfigInvalid: unknown experiment, unknown key or a badly typed value
    """
    if not isinstance(raw, dict):
        raise ConfigInvalid("Config must be a JSON object")
    name = raw.get('experiment')
    if name not in EXPERIMENT_NAMES:
        raise ConfigInvalid(f"Unknown experiment '{name}'. Known: {', '.join(EXPERIMENT_NAMES)}")

    known = {f.name: f for f in fields(ExperimentConfig)}
    scalar_types = {
        'seed': int, 'output_dir': str, 'workers': int, 'core_kind': str, 'preset': str,
        'bits': int, 'h': int, 'weight_stationary': bool, 'trials': int, 'verify_tiles': int,
        'hybrid_cases': int,
        'dataset': str, 'samples': int, 'hidden': int, 'steps': int, 'batch_size': int,
        'lr': float, 'momentum': float, 'decay_steps': int, 'decay_factor': float,
        'master_weights': bool, 'data_dir': str,
    }
    values: Dict[str, Any] = {'experiment': name}
    for key, value in raw.items():
        if key == 'experiment':
            continue
        if key not in known:
            raise ConfigInvalid(f"Unknown config key '{key}'")
        if key in _TUPLE_FIELDS:
            values[key] = _as_tuple(key, value, _TUPLE_FIELDS[key])
        elif key == 'R_values':
            if not isinstance(value, list) or not value:
                raise ConfigInvalid("'R_values' must be a non-empty list")
            values[key] = tuple(parse_attempts(v) for v in value)
        elif key == 'converter':
            if not isinstance(value, dict):
                raise ConfigInvalid("'converter' must be an object")
            for ck, cv in value.items():
                if ck not in ('Cu', 'Vdd', 'k1', 'k2') or not isinstance(cv, (int, float)) or cv <= 0:
                    raise ConfigInvalid(f"Bad converter parameter {ck}={cv!r}")
            values[key] = {k: float(v) for k, v in value.items()}
        elif key == 'weights_path':
            if value is not None and not isinstance(value, str):
                raise ConfigInvalid("'weights_path' must be a string")
            values[key] = value
        else:
            values[key] = _check_scalar(key, value, scalar_types[key])

    cfg = ExperimentConfig(**values)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: ExperimentConfig) -> None:
    if cfg.core_kind not in CORE_KINDS:
        raise ConfigInvalid(f"'core_kind' must be one of {CORE_KINDS}, got '{cfg.core_kind}'")
    if cfg.dataset not in DATASETS:
        raise ConfigInvalid(f"'dataset' must be one of {DATASETS}, got '{cfg.dataset}'")
    for key in ('trials', 'verify_tiles', 'h', 'workers', 'samples', 'hidden', 'steps', 'batch_size',
                'hybrid_cases'):
        if getattr(cfg, key) < 1:
            raise ConfigInvalid(f"'{key}' must be at least 1")
    if cfg.bits < 2 or any(b < 2 for b in cfg.b_values):
        raise ConfigInvalid("Bit widths must be at least 2")
    if any(h < 1 for h in cfg.h_values):
        raise ConfigInvalid("Tile sizes must be at least 1")
    if any(not 0.0 <= p <= 1.0 for p in cfg.p_values):
        raise ConfigInvalid("Probabilities in 'p_values' must lie in [0, 1]")
    if any(k < 0 for k in cfg.k_values):
        raise ConfigInvalid("Redundant moduli counts must be non-negative")
    if cfg.lr < 0 or not 0.0 <= cfg.momentum < 1.0:
        raise ConfigInvalid("'lr' must be non-negative and 'momentum' in [0, 1)")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigInvalid(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"Config file {path} is not valid JSON: {e}")
    return config_from_dict(raw)


def apply_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """
    Layer environment and command-line overrides onto a config.

    The environment may only move the output directory and set the thread
    count; --seed and --out win over both file and environment.
    """
    changes: Dict[str, Any] = {}
    env_out = os.getenv('RNS_WORKBENCH_OUTPUT_DIR')
    if env_out:
        changes['output_dir'] = env_out
    env_threads = os.getenv('RNS_WORKBENCH_THREADS')
    if env_threads:
        try:
            threads = int(env_threads)
        except ValueError:
            raise ConfigInvalid(f"RNS_WORKBENCH_THREADS must be an integer, got '{env_threads}'")
        if threads < 1:
            raise ConfigInvalid("RNS_WORKBENCH_THREADS must be at least 1")
        changes['workers'] = threads
    if seed is not None:
        changes['seed'] = seed
    if output_dir is not None:
        changes['output_dir'] = output_dir
    return replace(cfg, **changes) if changes else cfg
