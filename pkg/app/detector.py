# app/detector.py
"""
Read-out chain: limiting value -> H/V intensities -> noisy fraction -> comparator.

The instrument function is a Gaussian of full width at half maximum `fwhm`
(limiting-value units); sigma = fwhm / (2 sqrt(2 ln 2)). Noisy fractions are
clamped into [0, 1].
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from app.distributions import BetaParams, beta_moments
from app.errors import DomainError
from utils.streams import derive_stream

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
DEFAULT_DOMINANCE_THRESHOLD = 0.1


@dataclass(frozen=True)
class DetectorModel:
    """`blue_mode` says which polarization carries the blue population.

    With blue on H (default) the H-dominant outcome is the low symbol, so the
    pipeline complements the fraction-ordered cells; with blue on V the two
    orderings agree.
    """
    fwhm: float = 0.0
    intensity_scale: float = 1.0
    blue_mode: str = "H"
    noise_stream: str = "detector"

    def __post_init__(self):
        if self.fwhm < 0:
            raise DomainError(f"fwhm must be non-negative, got {self.fwhm}")
        if self.intensity_scale <= 0:
            raise DomainError(f"intensity_scale must be positive, got {self.intensity_scale}")
        if self.blue_mode not in ("H", "V"):
            raise DomainError(f"blue_mode must be 'H' or 'V', got {self.blue_mode!r}")

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_TO_SIGMA

    def describe(self) -> str:
        return f"detector(fwhm={self.fwhm:g}, scale={self.intensity_scale:g}, blue={self.blue_mode})"


@dataclass(frozen=True)
class Reading:
    i_h: float
    i_v: float
    observed_t: float


@dataclass(frozen=True)
class DominanceCheck:
    ratio: float
    delta: float
    passed: bool


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def read_out(t: float, model: DetectorModel, draw: Callable[[], float]) -> Reading:
    """`draw` yields a standard normal variate; it is not consulted when fwhm == 0."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"limiting value must lie in [0, 1], got {t}")
    blue = model.intensity_scale * t
    red = model.intensity_scale * (1.0 - t)
    i_h, i_v = (blue, red) if model.blue_mode == "H" else (red, blue)
    observed = t if model.sigma == 0 else _clamp(t + model.sigma * draw())
    return Reading(i_h=i_h, i_v=i_v, observed_t=observed)


def noise_draws(model: DetectorModel, seed: int, run_indices: Sequence[int]) -> np.ndarray:
    """One standard normal per run, each from that run's detector stream."""
    draws = np.array([derive_stream(seed, i, model.noise_stream).standard_normal() for i in run_indices])
    logger.debug("[detector] noise draws=%d seed=%d", len(draws), seed)
    return draws


def read_out_batch(t: np.ndarray, model: DetectorModel, noise: Union[np.ndarray, None],
                   clamp: bool = True) -> np.ndarray:
    """Observed fractions for many runs; elementwise identical to read_out.

    With clamp=False the raw reading t + sigma * g is returned.
    """
    t = np.asarray(t, dtype=float)
    if model.sigma == 0:
        return t.copy()
    raw = t + model.sigma * noise
    return np.clip(raw, 0.0, 1.0) if clamp else raw


def comparator(reading: Reading, threshold: float) -> int:
    """0 below the threshold, 1 at or above it."""
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    return 0 if reading.observed_t < threshold else 1


def noise_dominance_check(params: BetaParams, model: DetectorModel,
                          threshold: float = DEFAULT_DOMINANCE_THRESHOLD) -> DominanceCheck:
    """Instrument width relative to the spread of the limiting law."""
    _, variance = beta_moments(params)
    delta = math.sqrt(variance)
    ratio = model.fwhm / delta
    return DominanceCheck(ratio=ratio, delta=delta, passed=ratio < threshold)
