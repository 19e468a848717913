"""
Redundant residue number system codec.

An RRNS(n+k, n) code appends k redundant moduli to n information moduli.
Legitimate values live in [0, M) with M the product of the information
moduli; any n residues determine the value, so up to k residue errors are
detected and floor(k/2) corrected.

Besides encode / fault injection / majority-logic decoding this module holds
the closed-form error model (V_eta, zeta, D_eta, p_c / p_d / p_u, p_err(R))
and a Monte Carlo simulator used as its oracle.
"""
import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidModulus, LengthMismatch, OutOfLegitimateRange, OutOfRange
from rns_core import ModuliSet, crt_unsigned, new_moduli_set

logger = logging.getLogger(__name__)

INFINITE_ATTEMPTS = math.inf

# Trials per independently seeded Monte Carlo chunk. Fixed so the result
# does not depend on the number of worker threads.
_MC_CHUNK = 20_000
# Upper bound on retries when R is infinite.
_MAX_RETRIES = 100_000


@dataclass(frozen=True)
class RRNSConfig:
    """Parameters of an RRNS(n+k, n) code."""

    non_redundant: Tuple[int, ...]
    redundant: Tuple[int, ...]
    all_moduli: Tuple[int, ...]
    legitimate_M: int
    correction_capability: int
    moduli_set: ModuliSet = field(repr=False, compare=False)
    # (positions, ModuliSet) for every n-subset of residues
    groups: Tuple[Tuple[Tuple[int, ...], ModuliSet], ...] = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.non_redundant)

    @property
    def k(self) -> int:
        return len(self.redundant)

    @property
    def detection_capability(self) -> int:
        return self.k


@dataclass(frozen=True)
class Codeword:
    residues: Tuple[int, ...]


@dataclass(frozen=True)
class DecodedValue:
    value: int
    errors_corrected: int


@dataclass(frozen=True)
class DetectedUncorrectable:
    pass


DecodeOutcome = Union[DecodedValue, DetectedUncorrectable]


@dataclass(frozen=True)
class ErrorProbabilities:
    p_c: float
    p_d: float
    p_u: float


@dataclass(frozen=True)
class MonteCarloResult:
    empirical: float
    ci_low: float
    ci_high: float
    failures: int
    trials: int


def new_rrns_config(non_redundant: Sequence[int], redundant: Sequence[int]) -> RRNSConfig:
    """
    Build an RRNS code description.

    Args:
        non_redundant: The n information moduli
        redundant: The k redundant moduli (may be empty)

    Raises:
        InvalidModulus / NotCoprime: the n+k moduli are not a valid co-prime set
    """
    non_redundant = tuple(int(m) for m in non_redundant)
    redundant = tuple(int(m) for m in redundant)
    if not non_redundant:
        raise InvalidModulus("An RRNS code needs at least one non-redundant modulus")

    all_moduli = non_redundant + redundant
    moduli_set = new_moduli_set(all_moduli)
    if redundant and min(redundant) < max(non_redundant):
        logger.warning(
            "Redundant moduli %s are smaller than the largest information modulus %d; "
            "the code distance may fall below k+1",
            redundant, max(non_redundant),
        )

    n = len(non_redundant)
    groups = tuple(
        (positions, new_moduli_set([all_moduli[i] for i in positions]))
        for positions in itertools.combinations(range(len(all_moduli)), n)
    )
    return RRNSConfig(
        non_redundant=non_redundant,
        redundant=redundant,
        all_moduli=all_moduli,
        legitimate_M=math.prod(non_redundant),
        correction_capability=len(redundant) // 2,
        moduli_set=moduli_set,
        groups=groups,
    )


def pick_redundant_moduli(ms: ModuliSet, k: int) -> Tuple[int, ...]:
    """
    Choose k redundant moduli for an existing information set.

    Walks upward from max(m_i)+1 and keeps every integer co-prime with all
    moduli chosen so far, so each redundant modulus exceeds every
    information modulus.
    """
    chosen: List[int] = []
    candidate = max(ms.moduli) + 1
    while len(chosen) < k:
        if all(math.gcd(candidate, m) == 1 for m in ms.moduli + tuple(chosen)):
            chosen.append(candidate)
        candidate += 1
    return tuple(chosen)


def rrns_from_preset(ms: ModuliSet, k: int) -> RRNSConfig:
    return new_rrns_config(ms.moduli, pick_redundant_moduli(ms, k))


# ----------------------------------------------------------------------
# Encode / inject / decode
# ----------------------------------------------------------------------

def encode(A: int, cfg: RRNSConfig) -> Codeword:
    """
    Encode an unsigned value against all n+k moduli.

    Raises:
        OutOfLegitimateRange: A outside [0, legitimate_M)
    """
    A = int(A)
    if not 0 <= A < cfg.legitimate_M:
        raise OutOfLegitimateRange(
            f"{A} is outside the legitimate range [0, {cfg.legitimate_M})"
        )
    return Codeword(tuple(A % m for m in cfg.all_moduli))


def inject_residue_errors(
    cw: Codeword,
    p: float,
    rng: np.random.Generator,
    cfg: Optional[RRNSConfig] = None,
    moduli: Optional[Sequence[int]] = None,
) -> Tuple[Codeword, Tuple[int, ...]]:
    """
    Corrupt each residue independently with probability p.

    A corrupted residue takes a uniformly random value in [0, m_i) other
    than the original.

    Returns:
        (corrupted codeword, positions that were corrupted)

    Raises:
        ValueError: p outside [0, 1], or neither cfg nor moduli given
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Error probability must be in [0, 1], got {p}")
    if cfg is None and moduli is None:
        raise ValueError("cfg or moduli required")
    moduli = tuple(cfg.all_moduli if cfg is not None else moduli)
    if len(moduli) != len(cw.residues):
        raise LengthMismatch(
            f"Codeword has {len(cw.residues)} residues for {len(moduli)} moduli"
        )

    flips = rng.random(len(moduli)) < p
    residues = list(cw.residues)
    mask = []
    for i, m in enumerate(moduli):
        if flips[i]:
            residues[i] = (residues[i] + int(rng.integers(1, m))) % m
            mask.append(i)
    return Codeword(tuple(residues)), tuple(mask)


def hamming_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)


def majority_decode(cw: Codeword, cfg: RRNSConfig) -> DecodeOutcome:
    """
    Majority-logic decoding over all C(n+k, n) residue groups.

    Every group reconstructs a candidate through CRT; candidates outside the
    legitimate range are dropped and the most frequent survivor is accepted
    only if its re-encoding lies within floor(k/2) of the received word.
    """
    if len(cw.residues) != len(cfg.all_moduli):
        raise LengthMismatch(
            f"Codeword has {len(cw.residues)} residues, code expects {len(cfg.all_moduli)}"
        )
    for r, m in zip(cw.residues, cfg.all_moduli):
        if not 0 <= r < m:
            raise OutOfRange(f"Residue {r} is not in [0, {m})")

    votes: Counter = Counter()
    for positions, group_set in cfg.groups:
        candidate = crt_unsigned([cw.residues[i] for i in positions], group_set)
        if candidate < cfg.legitimate_M:
            votes[candidate] += 1
    if not votes:
        return DetectedUncorrectable()

    value, _ = votes.most_common(1)[0]
    distance = hamming_distance(encode(value, cfg).residues, cw.residues)
    if distance <= cfg.correction_capability:
        return DecodedValue(value, distance)
    return DetectedUncorrectable()


def decode_batch(residues: np.ndarray, cfg: RRNSConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decode many received words at once.

    A value within floor(k/2) of the received word is unique (minimum
    distance k+1) and wins every vote, so accepting the first group candidate
    that passes the distance test gives the same outcome as majority_decode.

    Args:
        residues: int64 array of shape (trials, n+k)

    Returns:
        (values, distances): value is -1 where the word was detected as
        uncorrectable; distance is the number of corrected residues
    """
    residues = np.asarray(residues, dtype=np.int64)
    moduli = np.asarray(cfg.all_moduli, dtype=np.int64)
    values = np.full(residues.shape[0], -1, dtype=np.int64)
    distances = np.zeros(residues.shape[0], dtype=np.int64)

    for positions, group_set in cfg.groups:
        undecided = values < 0
        if not undecided.any():
            break
        sub = residues[undecided][:, list(positions)]
        candidate = np.zeros(sub.shape[0], dtype=np.int64)
        for col, w in enumerate(group_set._weights):
            candidate = (candidate + sub[:, col] * np.int64(w)) % group_set.M
        reencoded = candidate[:, None] % moduli[None, :]
        distance = (reencoded != residues[undecided]).sum(axis=1)
        accept = (candidate < cfg.legitimate_M) & (distance <= cfg.correction_capability)

        idx = np.flatnonzero(undecided)[accept]
        values[idx] = candidate[accept]
        distances[idx] = distance[accept]
    return values, distances


# ----------------------------------------------------------------------
# Closed-form error model
# ----------------------------------------------------------------------

def vector_distance(cfg: RRNSConfig, eta: int) -> int:
    """V_eta: number of words at Hamming distance eta from a codeword."""
    _check_eta(cfg, eta, lowest=0)
    return sum(
        math.prod(m - 1 for m in selection)
        for selection in itertools.combinations(cfg.all_moduli, eta)
    )


def zeta(cfg: RRNSConfig, eta: int) -> int:
    """Non-zero common divisors in [0, M) over every (n+k-eta)-subset of moduli."""
    _check_eta(cfg, eta, lowest=1)
    size = len(cfg.all_moduli) - eta
    return sum(
        (cfg.legitimate_M - 1) // math.prod(selection)
        for selection in itertools.combinations(cfg.all_moduli, size)
    )


def code_distance(cfg: RRNSConfig, eta: int) -> int:
    """D_eta: number of codewords at Hamming distance eta from a codeword."""
    _check_eta(cfg, eta, lowest=0)
    total = len(cfg.all_moduli)
    if eta == 0:
        return 1
    if eta <= cfg.k:
        return 0
    return sum(
        (-1) ** h * math.comb(total - eta + h, total - eta) * zeta(cfg, eta - h)
        for h in range(eta - cfg.k)
    )


def prob_eta_errors(cfg: RRNSConfig, eta: int, p: float) -> float:
    """Probability that exactly eta of the n+k residues are wrong."""
    _check_probability(p)
    total = len(cfg.all_moduli)
    return math.comb(total, eta) * p ** eta * (1.0 - p) ** (total - eta)


def error_probabilities(cfg: RRNSConfig, p: float) -> ErrorProbabilities:
    """
    Probabilities of correctable, detected-uncorrectable and undetected errors.

    p_d is taken as the remainder 1 - p_c - p_u.
    """
    _check_probability(p)
    total = len(cfg.all_moduli)
    p_c = sum(prob_eta_errors(cfg, eta, p) for eta in range(cfg.correction_capability + 1))
    p_u = sum(
        code_distance(cfg, eta) / vector_distance(cfg, eta) * prob_eta_errors(cfg, eta, p)
        for eta in range(cfg.k + 1, total + 1)
    )
    p_d = max(0.0, 1.0 - p_c - p_u)
    return ErrorProbabilities(p_c=p_c, p_d=p_d, p_u=p_u)


def output_error_probability(probs: ErrorProbabilities, R: Union[int, float]) -> float:
    """
    Probability of a wrong output after up to R attempts.

    Detected errors trigger a recomputation; R may be math.inf, which uses
    the limit p_u / (p_u + p_c).
    """
    if R == INFINITE_ATTEMPTS:
        denom = probs.p_u + probs.p_c
        return 1.0 if denom == 0.0 else probs.p_u / denom
    R = int(R)
    if R < 1:
        raise ValueError(f"Number of attempts must be at least 1, got {R}")
    if probs.p_d == 1.0:
        geometric = float(R)
    else:
        geometric = (1.0 - probs.p_d ** R) / (1.0 - probs.p_d)
    return min(1.0, max(0.0, 1.0 - probs.p_c * geometric))


def analytic_curve_rows(
    cfg_for_k,
    ps: Sequence[float],
    ks: Sequence[int],
    attempts: Sequence[Union[int, float]],
) -> List[Dict]:
    """
    Rows (p, k, R, p_c, p_d, p_u, p_err) for the p_err-versus-p curves.

    Args:
        cfg_for_k: callable returning the RRNSConfig for k redundant moduli
    """
    rows = []
    for k in ks:
        cfg = cfg_for_k(k)
        for p in ps:
            probs = error_probabilities(cfg, p)
            for R in attempts:
                rows.append({
                    'p': p,
                    'k': k,
                    'R': 'inf' if R == INFINITE_ATTEMPTS else int(R),
                    'p_c': probs.p_c,
                    'p_d': probs.p_d,
                    'p_u': probs.p_u,
                    'p_err': output_error_probability(probs, R),
                })
    return rows


# ----------------------------------------------------------------------
# Monte Carlo oracle
# ----------------------------------------------------------------------

def _simulate_chunk(cfg: RRNSConfig, p: float, R, trials: int, seed_seq: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed_seq)
    moduli = np.asarray(cfg.all_moduli, dtype=np.int64)
    values = rng.integers(0, cfg.legitimate_M, size=trials, dtype=np.int64)
    clean = values[:, None] % moduli[None, :]

    failures = 0
    active = np.ones(trials, dtype=bool)
    limit = _MAX_RETRIES if R == INFINITE_ATTEMPTS else int(R)
    for _ in range(limit):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        flips = rng.random((idx.size, moduli.size)) < p
        offsets = rng.integers(1, moduli, size=(idx.size, moduli.size))
        received = np.where(flips, (clean[idx] + offsets) % moduli, clean[idx])

        decoded, _ = decode_batch(received, cfg)
        detected = decoded < 0
        wrong = (~detected) & (decoded != values[idx])
        failures += int(wrong.sum())
        active[idx[~detected]] = False

    leftover = int(active.sum())
    if leftover and R == INFINITE_ATTEMPTS:
        logger.warning("%d trials still detected after %d retries", leftover, _MAX_RETRIES)
    return failures + leftover


def _wilson_interval(failures: int, trials: int, z: float = 3.0) -> Tuple[float, float]:
    phat = failures / trials
    denom = 1.0 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def monte_carlo_p_err(
    cfg: RRNSConfig,
    p: float,
    R: Union[int, float],
    trials: int,
    seed: int,
    workers: int = 1,
) -> MonteCarloResult:
    """
    Estimate p_err(R) by simulating encode -> inject -> decode.

    Detected words are recomputed with fresh errors up to R times; words
    still detected after the last attempt count as wrong. Trials are split
    into fixed-size chunks with independent seed streams, so any worker
    count yields the same answer.
    """
    _check_probability(p)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")

    sizes = [min(_MC_CHUNK, trials - start) for start in range(0, trials, _MC_CHUNK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, streams))

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda job: _simulate_chunk(cfg, p, R, job[0], job[1]), jobs))
    else:
        counts = [_simulate_chunk(cfg, p, R, size, stream) for size, stream in jobs]

    failures = sum(counts)
    low, high = _wilson_interval(failures, trials)
    logger.debug("Monte Carlo p=%s R=%s: %d/%d wrong", p, R, failures, trials)
    return MonteCarloResult(
        empirical=failures / trials,
        ci_low=low,
        ci_high=high,
        failures=failures,
        trials=trials,
    )


def _check_eta(cfg: RRNSConfig, eta: int, lowest: int) -> None:
    if not lowest <= eta <= len(cfg.all_moduli):
        raise ValueError(f"eta must be in [{lowest}, {len(cfg.all_moduli)}], got {eta}")


def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Probability must be in [0, 1], got {p}")
