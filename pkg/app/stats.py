# app/stats.py
"""
Desk-scale randomness battery and goodness-of-fit checks.

Bit tests follow the usual SP 800-22 formulations (frequency, runs) plus a
non-overlapping block chi-square; full suites are meant to run on the
exported ASCII/raw files instead.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.special import erfc
from scipy.stats import chisquare, kstest

from app.errors import InsufficientDataError
from app.extraction import BitStream

logger = logging.getLogger(__name__)

DEFAULT_SIGNIFICANCE = 0.01
MIN_BITS = 100
MIN_SAMPLES = 1000
GOF_CELLS = 20

Bits = Union[BitStream, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class TestReport:
    test_name: str
    statistic: float
    p_value: float
    sample_size: int
    significance: float
    passed: bool
    skipped: bool = False
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def status(self) -> str:
        if self.skipped:
            return "SKIP"
        return "PASS" if self.passed else "FAIL"


# keep pytest from collecting the report type
TestReport.__test__ = False


def _report(name: str, statistic: float, p_value: float, n: int, significance: float,
            **details) -> TestReport:
    p_value = min(1.0, max(0.0, float(p_value)))
    return TestReport(name, float(statistic), p_value, n, significance, p_value >= significance,
                      details=details)


def _bits(stream: Bits) -> np.ndarray:
    if isinstance(stream, BitStream):
        return stream.bits
    return np.asarray(stream, dtype=np.uint8)


def _blocks(bits: np.ndarray, block_bits: int) -> np.ndarray:
    n_blocks = len(bits) // block_bits
    need = 50 * 2 ** block_bits
    if n_blocks < need:
        raise InsufficientDataError(
            f"{block_bits}-bit blocks need at least {need} blocks, got {n_blocks}"
        )
    shaped = bits[: n_blocks * block_bits].reshape(n_blocks, block_bits).astype(np.int64)
    weights = 1 << np.arange(block_bits - 1, -1, -1)
    return shaped @ weights


# -----------------------------
# BIT TESTS
# -----------------------------
def monobit_test(stream: Bits, significance: float = DEFAULT_SIGNIFICANCE) -> TestReport:
    bits = _bits(stream)
    n = len(bits)
    if n < MIN_BITS:
        raise InsufficientDataError(f"monobit test needs at least {MIN_BITS} bits, got {n}")
    ones = int(bits.sum())
    s_obs = abs(2 * ones - n) / math.sqrt(n)
    return _report("monobit", s_obs, erfc(s_obs / math.sqrt(2.0)), n, significance,
                   ones_fraction=ones / n)


def runs_test(stream: Bits, significance: float = DEFAULT_SIGNIFICANCE) -> TestReport:
    bits = _bits(stream)
    n = len(bits)
    if n < MIN_BITS:
        raise InsufficientDataError(f"runs test needs at least {MIN_BITS} bits, got {n}")
    pi = float(bits.sum()) / n
    tau = 2.0 / math.sqrt(n)
    if abs(pi - 0.5) >= tau:
        return TestReport("runs", float("nan"), 0.0, n, significance, False, skipped=True,
                          details={"reason": f"ones fraction {pi:.6f} outside 0.5 +/- {tau:.6f}"})
    runs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    expected = 2.0 * n * pi * (1.0 - pi)
    statistic = abs(runs - expected) / (2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi))
    return _report("runs", runs, erfc(statistic), n, significance, expected_runs=expected)


def serial_chi2_test(stream: Bits, block_bits: int, significance: float = DEFAULT_SIGNIFICANCE) -> TestReport:
    """Non-overlapping block frequencies against uniform, 2^m - 1 degrees of freedom."""
    values = _blocks(_bits(stream), block_bits)
    counts = np.bincount(values, minlength=2 ** block_bits)
    result = chisquare(counts)
    return _report(f"serial_chi2_m{block_bits}", result.statistic, result.pvalue, len(values),
                   significance, degrees_of_freedom=2 ** block_bits - 1)


@dataclass(frozen=True)
class EntropyEstimate:
    block_bits: int
    blocks: int
    bits_per_block: float
    miller_madow_correction: float

    @property
    def corrected(self) -> float:
        return self.bits_per_block + self.miller_madow_correction


def shannon_entropy(stream: Bits, block_bits: int) -> EntropyEstimate:
    """Plug-in entropy of the block distribution, with the Miller-Madow term (K - 1) / (2 N ln 2)."""
    values = _blocks(_bits(stream), block_bits)
    counts = np.bincount(values, minlength=2 ** block_bits)
    nonzero = counts[counts > 0]
    probs = nonzero / len(values)
    plugin = float(-np.sum(probs * np.log2(probs)))
    correction = (len(nonzero) - 1) / (2.0 * len(values) * math.log(2.0))
    return EntropyEstimate(block_bits, len(values), max(0.0, plugin), correction)


# -----------------------------
# LIMITING-VALUE FIT
# -----------------------------
def limiting_value_gof(samples: Sequence[float], model, significance: float = DEFAULT_SIGNIFICANCE,
                       cells: int = GOF_CELLS) -> TestReport:
    """Chi-square over `cells` equiprobable cells of `model`; KS statistic reported alongside."""
    x = np.asarray(samples, dtype=float)
    if len(x) < MIN_SAMPLES:
        raise InsufficientDataError(f"goodness of fit needs at least {MIN_SAMPLES} samples, got {len(x)}")
    edges = np.array([model.ppf(j / cells) for j in range(1, cells)])
    counts = np.bincount(np.searchsorted(edges, x, side="right"), minlength=cells)
    chi = chisquare(counts)
    ks = kstest(x, model.cdf)
    return _report("limiting_value_chi2", chi.statistic, chi.pvalue, len(x), significance,
                   cells=cells, ks_statistic=float(ks.statistic), ks_p_value=float(ks.pvalue))


def limiting_value_ks(samples: Sequence[float], model, significance: float = DEFAULT_SIGNIFICANCE) -> TestReport:
    x = np.asarray(samples, dtype=float)
    if len(x) < MIN_SAMPLES:
        raise InsufficientDataError(f"KS test needs at least {MIN_SAMPLES} samples, got {len(x)}")
    ks = kstest(x, model.cdf)
    return _report("limiting_value_ks", ks.statistic, ks.pvalue, len(x), significance)


# -----------------------------
# BATTERY
# -----------------------------
@dataclass(frozen=True)
class Battery:
    reports: List[TestReport]
    entropy: Optional[EntropyEstimate]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports if not r.skipped)


def run_battery(stream: Bits, significance: float = DEFAULT_SIGNIFICANCE, max_block_bits: int = 3,
                entropy_block_bits: int = 8) -> Battery:
    bits = _bits(stream)
    reports = [monobit_test(bits, significance), runs_test(bits, significance)]
    for m in range(1, max_block_bits + 1):
        if len(bits) // m >= 50 * 2 ** m:
            reports.append(serial_chi2_test(bits, m, significance))
    entropy = None
    for m in range(entropy_block_bits, 0, -1):
        if len(bits) // m >= 50 * 2 ** m:
            entropy = shannon_entropy(bits, m)
            break
    logger.info("[battery] bits=%d tests=%d", len(bits), len(reports))
    return Battery(reports, entropy)


def render_table(battery: Battery) -> str:
    header = f"{'test':<22} {'statistic':>14} {'p_value':>12} {'n':>10}  result"
    lines = [header, "-" * len(header)]
    for r in battery.reports:
        lines.append(f"{r.test_name:<22} {r.statistic:>14.6g} {r.p_value:>12.6g} {r.sample_size:>10d}  {r.status}")
    if battery.entropy is not None:
        e = battery.entropy
        lines.append(
            f"entropy ({e.block_bits}-bit blocks): {e.bits_per_block:.6f} bits/block "
            f"(Miller-Madow {e.miller_madow_correction:+.2e})"
        )
    return "\n".join(lines)


def render_records(battery: Battery) -> str:
    lines = []
    for r in battery.reports:
        lines.append(
            f"test={r.test_name} statistic={r.statistic:.17g} p_value={r.p_value:.17g} "
            f"n={r.sample_size} significance={r.significance:g} result={r.status}"
        )
    if battery.entropy is not None:
        e = battery.entropy
        lines.append(
            f"test=entropy_m{e.block_bits} bits_per_block={e.bits_per_block:.17g} "
            f"miller_madow={e.miller_madow_correction:.17g} n={e.blocks}"
        )
    return "\n".join(lines) + "\n"
