# app/config.py
"""
Run configuration.

One pydantic model holds every knob. Files are plain KEY=VALUE text (the
dotenv format, keys case-insensitive); `--set KEY=VALUE` overrides apply on
top. The echo written next to every output reloads to the same run.
"""

import logging
import os
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.detector import DEFAULT_DOMINANCE_THRESHOLD, DetectorModel
from app.distributions import (
    BetaLaw, BetaParams, ConvolvedLaw, MixtureLaw, MixtureSpec, parse_quantile_table, urn_beta_params,
)
from app.errors import BoundaryMassError, DomainError
from app.extraction import ExtractionRecipe
from app.urn import RunConfig
from utils.formats import read_kv, render_kv, write_kv
from utils.streams import SEED_LIMIT, STREAM_DERIVATION

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.environ.get("QRNG_CONFIG", "")


class QrngConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # ---- run ----
    seed: int = Field(1, ge=0, lt=SEED_LIMIT)
    initial_blue: int = Field(0, ge=0)
    initial_red: int = Field(0, ge=0)
    steps: int = Field(10_000, ge=1)
    record_stride: int = Field(1, ge=1)
    epsilon: float = Field(0.0, gt=-1.0)

    # ---- input ----
    input_mode: Literal["number", "coherent"] = "number"
    lambda_min: float = Field(0.0, ge=0)
    lambda_max: float = Field(0.0, ge=0)
    lambda_grid: int = Field(11, ge=1)
    truncation_mass: float = Field(1e-12, gt=0, lt=1)
    splitter_ratio: float = Field(0.5, gt=0, lt=1)

    # ---- detector ----
    fwhm: float = Field(0.0, ge=0)
    intensity_scale: float = Field(1.0, gt=0)
    blue_mode: Literal["H", "V"] = "H"
    dominance_threshold: float = Field(DEFAULT_DOMINANCE_THRESHOLD, gt=0)
    noise_measure: Literal["fwhm", "sigma", "delta_ratio"] = "fwhm"

    # ---- extraction ----
    n_bits: int = Field(1, ge=1, le=16)
    fold_detector: bool = True
    override_gate: bool = False
    threshold_file: str = ""

    # ---- execution ----
    count: int = Field(100_000, ge=0)
    runs: int = Field(4, ge=1)
    workers: int = Field(1, ge=1)
    block_size: int = Field(2048, ge=1)

    # ---- analysis ----
    significance: float = Field(0.01, gt=0, lt=1)
    density_points: int = Field(101, ge=2)
    fit_runs: int = Field(0, ge=0)
    bench_steps: str = "1000,10000"
    bench_workers: str = "1,4"
    bench_count: int = Field(2000, ge=0)

    # ---- output ----
    output_dir: str = "out"
    output_prefix: str = "qrng"
    formats: str = "raw,ascii"

    @model_validator(mode="after")
    def _check(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        unknown = set(self.format_list) - {"raw", "ascii"}
        if unknown:
            raise ValueError(f"unknown output formats: {sorted(unknown)}")
        self.run_config()
        return self

    # ---- loading ----
    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> "QrngConfig":
        values: Dict[str, str] = {}
        path = path or DEFAULT_CONFIG_PATH
        if path:
            values.update({k.lower(): v for k, v in read_kv(path).items()})
        values.update({k.lower(): v for k, v in (overrides or {}).items()})
        return cls(**values)

    def env_values(self) -> Dict[str, object]:
        return {k.upper(): (str(v).lower() if isinstance(v, bool) else v) for k, v in self.model_dump().items()}

    def to_env_text(self, comments: Optional[List[str]] = None) -> str:
        return render_kv(self.env_values(), comments)

    def write_echo(self, path: str, comments: Optional[List[str]] = None) -> str:
        return write_kv(path, self.env_values(), comments)

    # ---- derived objects ----
    @property
    def format_list(self) -> List[str]:
        return [f.strip() for f in self.formats.split(",") if f.strip()]

    @property
    def bench_steps_list(self) -> List[int]:
        return [int(s) for s in self.bench_steps.split(",") if s.strip()]

    @property
    def bench_workers_list(self) -> List[int]:
        return [int(s) for s in self.bench_workers.split(",") if s.strip()]

    def run_config(self, run_index: int = 0) -> RunConfig:
        return RunConfig(
            initial_blue=self.initial_blue, initial_red=self.initial_red, steps=self.steps,
            record_stride=self.record_stride, seed=self.seed, run_index=run_index, epsilon=self.epsilon,
        )

    def beta_params(self) -> BetaParams:
        return urn_beta_params(self.initial_blue, self.initial_red, epsilon=self.epsilon)

    def mixture_spec(self) -> MixtureSpec:
        return MixtureSpec(
            lambda_min=self.lambda_min, lambda_max=self.lambda_max, truncation_mass=self.truncation_mass,
            grid_points=self.lambda_grid, epsilon=self.epsilon, splitter_ratio=self.splitter_ratio,
        )

    def input_spec(self) -> Optional[MixtureSpec]:
        return self.mixture_spec() if self.input_mode == "coherent" else None

    def detector_model(self) -> DetectorModel:
        return DetectorModel(fwhm=self.fwhm, intensity_scale=self.intensity_scale, blue_mode=self.blue_mode)

    def limit_law(self):
        if self.input_mode == "coherent":
            return MixtureLaw(self.mixture_spec())
        return BetaLaw(self.beta_params())

    def observed_law(self):
        """Law the comparator sees; folds in the instrument function when configured."""
        law = self.limit_law()
        sigma = self.detector_model().sigma
        if self.fold_detector and sigma > 0:
            return ConvolvedLaw(law, sigma)
        return law

    def recipe(self) -> ExtractionRecipe:
        """Thresholds from THRESHOLD_FILE when set, otherwise quantiles of the observed law.

        Folded thresholds are undefined once an edge atom of the clamped
        reading reaches 2^-n_bits; with OVERRIDE_GATE the unfolded law is
        used instead, otherwise BoundaryMassError propagates.
        """
        if self.threshold_file:
            with open(self.threshold_file) as fh:
                table = parse_quantile_table(fh.read())
            if table.n_bits != self.n_bits:
                raise DomainError(f"{self.threshold_file} holds a {table.n_bits}-bit table, N_BITS={self.n_bits}")
            return ExtractionRecipe(table)
        law = self.observed_law()
        try:
            return ExtractionRecipe.for_law(law, self.n_bits)
        except BoundaryMassError as exc:
            if not (self.override_gate and isinstance(law, ConvolvedLaw)):
                raise
            logger.warning("[recipe] %s; using unfolded thresholds", exc)
            return ExtractionRecipe.for_law(law.base, self.n_bits)

    def echo_comments(self, recipe: Optional[ExtractionRecipe] = None) -> List[str]:
        comments = [f"stream_derivation: {STREAM_DERIVATION}"]
        if recipe is not None:
            comments.append(f"law: {recipe.table.law}")
            comments.append("thresholds: " + ",".join(repr(t) for t in recipe.table.thresholds))
        return comments


def parse_overrides(items: Optional[List[str]]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override must look like KEY=VALUE, got {item!r}")
        out[key.strip().lower()] = value.strip()
    return out
