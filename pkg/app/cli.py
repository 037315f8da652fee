# app/cli.py
"""
Subcommand handlers used by main.py.

Every handler takes a QrngConfig, prints a short human summary and returns
a process exit code (see EXIT_* below).
"""

import hashlib
import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy import integrate

from app.config import QrngConfig
from app.detector import noise_dominance_check
from app.distributions import (
    BetaParams, MixtureSpec, beta_cdf, beta_pdf, beta_quantile, density_rows, mixture_pdf,
    render_quantile_table,
)
from app.errors import BoundaryMassError, NoiseGateError
from app.extraction import BitStream, pipeline, read_bits, write_ascii, write_raw, write_sidecar
from app.quantum_oracle import (
    beta_binomial_exact, beta_binomial_float, enumerate_paths, equivalence_suite, exchangeability_violations,
)
from app.stats import (
    limiting_value_gof, limiting_value_ks, render_records, render_table, run_battery,
)
from app.urn import (
    UrnState, ensemble, expected_posterior_mean_after_step, limiting_values, posterior_mean, run_batch,
)
from utils.formats import ensure_parent, read_kv, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_USAGE = 2
EXIT_GATE_REFUSED = 3
EXIT_VERIFY_FAILED = 4
EXIT_IO_ERROR = 5
EXIT_CONFIG_ERROR = 6

# both refuse before any bit is produced
REFUSALS = (NoiseGateError, BoundaryMassError)


def _out(cfg: QrngConfig, suffix: str) -> str:
    return os.path.join(cfg.output_dir, f"{cfg.output_prefix}{suffix}")


# -----------------------------
# GENERATE
# -----------------------------
def generate_stream(cfg: QrngConfig, timings: Optional[Dict[str, float]] = None, **overrides) -> BitStream:
    recipe = cfg.recipe()
    params = cfg.limit_law() if cfg.input_mode == "coherent" else cfg.beta_params()
    return pipeline(
        cfg.run_config(), cfg.detector_model(), recipe, overrides.get("count", cfg.count),
        params=params, input_spec=cfg.input_spec(), override=cfg.override_gate,
        measure=cfg.noise_measure, workers=overrides.get("workers", cfg.workers),
        block_size=cfg.block_size, timings=timings,
    )


def cmd_generate(cfg: QrngConfig) -> int:
    try:
        stream = generate_stream(cfg)
    except REFUSALS as exc:
        print(f"refused: {exc}")
        return EXIT_GATE_REFUSED
    recipe_text = stream.metadata.get("thresholds", "")
    written = []
    if "raw" in cfg.format_list:
        path = _out(cfg, ".bin")
        ensure_parent(path)
        written.append(write_raw(stream, path))
    if "ascii" in cfg.format_list:
        path = _out(cfg, ".txt")
        ensure_parent(path)
        written.append(write_ascii(stream, path))
    written.append(write_sidecar(stream, _out(cfg, ".meta")))
    written.append(cfg.write_echo(_out(cfg, ".env"), [
        "effective configuration; reload with --config to reproduce",
        f"thresholds: {recipe_text}",
        f"stream_derivation: {stream.metadata['stream_derivation']}",
    ]))
    print(f"{stream.bit_count} bits from {len(stream.symbols)} runs ({stream.n_bits} bit/run)")
    for path in written:
        print(f"  wrote {path}")
    return EXIT_OK


# -----------------------------
# TRAJECTORIES / DENSITIES
# -----------------------------
def cmd_trajectories(cfg: QrngConfig) -> int:
    trajectories = run_batch(ensemble(cfg.run_config(), cfg.runs), workers=cfg.workers, block_size=cfg.block_size)
    for traj in trajectories:
        path = _out(cfg, f"_trajectory_{traj.run_index}.csv")
        write_csv(path, ("step", "fraction"), ((s, repr(f)) for s, f in traj.rows()))
        print(f"run {traj.run_index}: limiting value {traj.limiting_value:.6f} -> {path}")
    return EXIT_OK


def cmd_densities(cfg: QrngConfig) -> int:
    law = cfg.observed_law()
    path = write_csv(_out(cfg, "_density.csv"), ("t", "pdf", "cdf"), density_rows(law, cfg.density_points))
    try:
        recipe = cfg.recipe()
    except REFUSALS as exc:
        print(f"refused: {exc}")
        return EXIT_GATE_REFUSED
    table_path = _out(cfg, "_quantiles.txt")
    ensure_parent(table_path)
    with open(table_path, "w") as fh:
        fh.write(render_quantile_table(recipe.table))
    print(f"density of {law.describe()} -> {path}")
    print(f"{recipe.n_bits}-bit quantile table -> {table_path}")
    if cfg.input_mode == "number" and cfg.fwhm > 0:
        check = noise_dominance_check(cfg.beta_params(), cfg.detector_model(), cfg.dominance_threshold)
        print(f"noise dominance: s/delta = {check.ratio:.4g} ({'ok' if check.passed else 'noise too large'})")
    if cfg.fit_runs:
        _report_limit_fit(cfg)
    return EXIT_OK


def _report_limit_fit(cfg: QrngConfig) -> None:
    """Noiseless limiting values of FIT_RUNS runs against the asymptotic law."""
    values = limiting_values(ensemble(cfg.run_config(), cfg.fit_runs), workers=cfg.workers,
                             block_size=cfg.block_size)
    law = cfg.limit_law()
    reports = (limiting_value_gof(values, law, cfg.significance), limiting_value_ks(values, law, cfg.significance))
    for report in reports:
        print(f"{report.test_name}: statistic={report.statistic:.4g} p={report.p_value:.4g} {report.status}")


# -----------------------------
# VERIFY
# -----------------------------
@dataclass(frozen=True)
class VerifyCheck:
    name: str
    passed: bool
    detail: str


def verification_checks(perturbation: float = 0.0) -> List[VerifyCheck]:
    checks = []

    rows = equivalence_suite(max_total=4, max_steps=8, perturbation=perturbation)
    worst = max(rows, key=lambda r: max(r.max_difference, r.norm_error))
    checks.append(VerifyCheck(
        "amplitudes == path enumeration (n0+m0<=4, k<=8)",
        all(r.passed for r in rows),
        f"{len(rows)} cases, worst {worst.initial} k={worst.steps}: "
        f"diff={worst.max_difference:.2e} norm_err={worst.norm_error:.2e}",
    ))
    trivial = [r for r in rows if r.steps == 0]
    checks.append(VerifyCheck("k=0 cases", all(r.passed for r in trivial), f"{len(trivial)} cases"))

    mismatched = []
    for b0 in range(5):
        for r0 in range(5 - b0):
            for k in range(9):
                if enumerate_paths((b0, r0), k).probabilities != beta_binomial_exact(k, b0 + 1, r0 + 1).probabilities:
                    mismatched.append((b0, r0, k))
    checks.append(VerifyCheck("path enumeration == beta-binomial (exact)", not mismatched, f"mismatches: {mismatched[:3]}"))

    worst_float = max(
        beta_binomial_exact(k, a, b).max_abs_difference(beta_binomial_float(k, a, b))
        for a, b in [(1, 1), (4, 4), (2, 5)] for k in (1, 5, 12)
    )
    checks.append(VerifyCheck("beta-binomial exact == scipy betabinom", worst_float <= 1e-12,
                              f"max difference {worst_float:.2e}"))

    sums_ok = all(enumerate_paths((b0, 2), 6).total() == 1 for b0 in range(4))
    checks.append(VerifyCheck("path probabilities sum to exactly 1", sums_ok, "rational arithmetic"))

    bad_paths = sum(len(exchangeability_violations((b0, r0), 6)) for b0, r0 in [(0, 0), (1, 0), (3, 3)])
    checks.append(VerifyCheck("exchangeability of path products", bad_paths == 0, f"{bad_paths} violating paths"))

    states = [UrnState(blue=b, red=r) for b, r in [(0, 0), (3, 3), (1, 0), (7, 2)]]
    martingale = all(expected_posterior_mean_after_step(s) == posterior_mean(s) for s in states)
    checks.append(VerifyCheck("posterior mean is a martingale", martingale, "exact one-step expectation"))

    worst_norm = 0.0
    for shape in (0.5, 1.0, 4.0, 50.0):
        params = BetaParams(shape, 2.0)
        value, _ = integrate.quad(lambda t: beta_pdf(t, params), 0.0, 1.0, epsabs=1e-12, limit=200)
        worst_norm = max(worst_norm, abs(value - 1.0))
    checks.append(VerifyCheck("beta density integrates to 1", worst_norm <= 1e-9, f"worst error {worst_norm:.2e}"))

    worst_rt = 0.0
    for params in (BetaParams(1, 1), BetaParams(4, 4), BetaParams(1, 1, 0.2), BetaParams(2, 1)):
        for xi in (0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99):
            worst_rt = max(worst_rt, abs(beta_cdf(beta_quantile(xi, params), params) - xi))
    checks.append(VerifyCheck("quantile/CDF round trip", worst_rt <= 1e-9, f"worst error {worst_rt:.2e}"))

    grid = np.linspace(0.0, 1.0, 101)
    uniform_err = float(np.max(np.abs(mixture_pdf(grid, MixtureSpec(0.0, 0.0)) - 1.0)))
    checks.append(VerifyCheck("vacuum-input mixture is uniform", uniform_err <= 1e-10, f"max error {uniform_err:.2e}"))
    return checks


def cmd_verify(cfg: QrngConfig, perturbation: float = 0.0) -> int:
    checks = verification_checks(perturbation)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


# -----------------------------
# BATTERY
# -----------------------------
def cmd_battery(cfg: QrngConfig, input_path: Optional[str] = None) -> int:
    if input_path:
        bit_count = None
        sidecar = os.path.splitext(input_path)[0] + ".meta"
        if os.path.isfile(sidecar):
            bit_count = int(read_kv(sidecar).get("bit_count", 0)) or None
        stream = read_bits(input_path, bit_count)
    else:
        try:
            stream = generate_stream(cfg)
        except REFUSALS as exc:
            print(f"refused: {exc}")
            return EXIT_GATE_REFUSED
    battery = run_battery(stream, cfg.significance)
    print(render_table(battery))
    records = _out(cfg, "_battery.txt")
    ensure_parent(records)
    with open(records, "w") as fh:
        fh.write(render_records(battery))
    print(f"records -> {records}")
    print("battery: " + ("PASS" if battery.passed else "FAIL"))
    return EXIT_OK


# -----------------------------
# BENCH
# -----------------------------
@dataclass(frozen=True)
class BenchRow:
    steps: int
    workers: int
    bits: int
    seconds: float
    stages: Dict[str, float]
    digest: str

    @property
    def bits_per_second(self) -> float:
        return self.bits / self.seconds if self.bits and self.seconds > 0 else 0.0


def bench_rows(cfg: QrngConfig) -> List[BenchRow]:
    rows = []
    for steps in cfg.bench_steps_list:
        for workers in cfg.bench_workers_list:
            run_cfg = cfg.model_copy(update={"steps": steps})
            timings: Dict[str, float] = {}
            clock = time.perf_counter()
            stream = generate_stream(run_cfg, timings, count=cfg.bench_count, workers=workers)
            elapsed = time.perf_counter() - clock
            digest = hashlib.sha256(stream.packed()).hexdigest()[:16]
            rows.append(BenchRow(steps, workers, stream.bit_count, elapsed, timings, digest))
            logger.info("[bench] steps=%d workers=%d bits=%d %.3fs", steps, workers, stream.bit_count, elapsed)
    return rows


def cmd_bench(cfg: QrngConfig) -> int:
    try:
        rows = bench_rows(cfg)
    except REFUSALS as exc:
        print(f"refused: {exc}")
        return EXIT_GATE_REFUSED
    print(f"{'steps':>8} {'workers':>7} {'bits':>8} {'seconds':>9} {'bits/s':>12}  "
          f"{'urn':>7} {'readout':>7} {'extract':>7} {'pack':>7}  digest")
    for r in rows:
        s = r.stages
        print(f"{r.steps:>8} {r.workers:>7} {r.bits:>8} {r.seconds:>9.3f} {r.bits_per_second:>12.1f}  "
              f"{s.get('urn', 0):>7.3f} {s.get('readout', 0):>7.3f} {s.get('extraction', 0):>7.3f} "
              f"{s.get('packing', 0):>7.3f}  {r.digest}")
    by_steps: Dict[int, List[float]] = {}
    for r in rows:
        if r.bits_per_second > 0:
            by_steps.setdefault(r.steps, []).append(r.bits_per_second)
    steps_sorted = sorted(by_steps)
    for lo, hi in zip(steps_sorted, steps_sorted[1:]):
        ratio = max(by_steps[lo]) / max(by_steps[hi])
        print(f"throughput ratio steps {lo} vs {hi}: {ratio:.2f} (linear cost predicts {hi / lo:.2f})")
    return EXIT_OK
