# app/distributions.py
"""
Limiting-value laws of the urn.

- beta law f(t; beta', rho) with beta' = beta * (1 + epsilon)
- Poisson mixture f'(t; lambda) for coherent-state inputs
- quantile inversion and quantile tables for bit extraction

Densities use the log-beta formulation (scipy.special.betaln) so large
shapes do not overflow; CDFs are regularized incomplete beta integrals.
"""

import functools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import betainc, betaln, ndtr, xlog1py, xlogy
from scipy.stats import norm, poisson

from app.errors import BoundaryMassError, DomainError, QuantileConvergenceError, ShapeError
from utils.formats import format_float

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

SOLVER_TOLERANCE = 1e-10
BISECTION_STEPS = 12
DEFAULT_LAMBDA_GRID = 11
DEFAULT_TRUNCATION_MASS = 1e-12


# -----------------------------
# PARAMETERS
# -----------------------------
@dataclass(frozen=True)
class BetaParams:
    """Shapes of the limiting law; epsilon is the H/V coupling asymmetry."""
    beta: float
    rho: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.beta > 0 and self.rho > 0):
            raise ShapeError(f"shapes must be positive, got beta={self.beta}, rho={self.rho}")
        if not self.beta * (1.0 + self.epsilon) > 0:
            raise ShapeError(
                f"effective shape beta*(1+epsilon) must be positive, got epsilon={self.epsilon}"
            )

    @property
    def effective_beta(self) -> float:
        return self.beta * (1.0 + self.epsilon)

    def describe(self) -> str:
        return f"beta(beta={self.beta:g}, rho={self.rho:g}, epsilon={self.epsilon:g})"


def urn_beta_params(b0: int, r0: int, c: int = 1, shift: int = 1, epsilon: float = 0.0) -> BetaParams:
    """Shapes for an urn seeded with (b0, r0) that adds c balls per draw.

    Bosonic stimulation is c = 1 with unit shifts, giving (b0 + 1, r0 + 1).
    """
    if c < 1:
        raise DomainError(f"replacement count must be >= 1, got {c}")
    return BetaParams(beta=(b0 + shift) / c, rho=(r0 + shift) / c, epsilon=epsilon)


@dataclass(frozen=True)
class MixtureSpec:
    lambda_min: float = 0.0
    lambda_max: float = 0.0
    truncation_mass: float = DEFAULT_TRUNCATION_MASS
    grid_points: int = DEFAULT_LAMBDA_GRID
    epsilon: float = 0.0
    splitter_ratio: float = 0.5

    def __post_init__(self):
        if not 0 <= self.lambda_min <= self.lambda_max:
            raise DomainError(
                f"need 0 <= lambda_min <= lambda_max, got [{self.lambda_min}, {self.lambda_max}]"
            )
        if not 0 < self.truncation_mass < 1:
            raise DomainError(f"truncation_mass must lie in (0, 1), got {self.truncation_mass}")
        if self.grid_points < 1:
            raise DomainError(f"grid_points must be >= 1, got {self.grid_points}")
        if not 0 < self.splitter_ratio < 1:
            raise DomainError(f"splitter_ratio must lie in (0, 1), got {self.splitter_ratio}")
        if not self.epsilon > -1:
            raise ShapeError(f"epsilon must exceed -1, got {self.epsilon}")

    def lambda_grid(self) -> np.ndarray:
        if self.lambda_min == self.lambda_max:
            return np.array([self.lambda_min])
        return np.linspace(self.lambda_min, self.lambda_max, self.grid_points)

    def mode_means(self, lam: float) -> Tuple[float, float]:
        """Per-mode Poisson means for pulse mean lam after the splitter."""
        return 2.0 * self.splitter_ratio * lam, 2.0 * (1.0 - self.splitter_ratio) * lam

    @property
    def symmetric(self) -> bool:
        return self.splitter_ratio == 0.5 and self.epsilon == 0.0

    def describe(self) -> str:
        return (
            f"mixture(lambda=[{self.lambda_min:g}, {self.lambda_max:g}], grid={self.grid_points}, "
            f"truncation={self.truncation_mass:g}, epsilon={self.epsilon:g}, "
            f"splitter={self.splitter_ratio:g})"
        )


# -----------------------------
# BETA LAW
# -----------------------------
def _check_unit(t: ArrayLike) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"argument must lie in [0, 1], got {t!r}")
    return arr


def _scalar_or_array(arr: np.ndarray, like: ArrayLike):
    return float(arr) if np.ndim(like) == 0 else arr


def _log_beta_pdf(t: np.ndarray, a, b) -> np.ndarray:
    return xlogy(a - 1.0, t) + xlog1py(b - 1.0, -t) - betaln(a, b)


def beta_pdf(t: ArrayLike, params: BetaParams):
    arr = _check_unit(t)
    return _scalar_or_array(np.exp(_log_beta_pdf(arr, params.effective_beta, params.rho)), t)


def beta_cdf(t: ArrayLike, params: BetaParams):
    arr = _check_unit(t)
    return _scalar_or_array(betainc(params.effective_beta, params.rho, arr), t)


def beta_moments(params: BetaParams) -> Tuple[float, float]:
    """Exact mean and variance of Beta(beta', rho)."""
    a, b = params.effective_beta, params.rho
    mean = a / (a + b)
    variance = a * b / ((a + b) ** 2 * (a + b + 1.0))
    return mean, variance


def seed_form_moments(b0: int, r0: int) -> Tuple[float, float]:
    """Mean/variance written directly in the urn seeds, without the unit shifts.

    Kept for comparison only: the shifted law Beta(b0 + 1, r0 + 1) has mean
    (b0 + 1)/(b0 + r0 + 2), which is what beta_moments returns.
    """
    total = b0 + r0
    if total == 0:
        raise DomainError("seed-form moments are undefined for an empty urn")
    return b0 / total, b0 * r0 / (total ** 2 * (total + 1))


def solve_quantile(cdf: Callable[[float], float], xi: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Invert a monotone CDF on [lo, hi]: bisection to narrow, then Brent."""
    if not 0.0 < xi < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {xi!r}")
    if cdf(lo) >= xi:
        raise QuantileConvergenceError(xi, (lo, hi), "cdf at lower end already exceeds level")
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < xi:
            lo = mid
        else:
            hi = mid
    try:
        t, info = brentq(lambda x: cdf(x) - xi, lo, hi, xtol=1e-15, maxiter=200, full_output=True)
    except (ValueError, RuntimeError) as exc:
        raise QuantileConvergenceError(xi, (lo, hi), str(exc)) from exc
    if not info.converged or abs(cdf(t) - xi) > SOLVER_TOLERANCE:
        raise QuantileConvergenceError(xi, (lo, hi), f"residual {cdf(t) - xi:g}")
    return float(t)


def beta_quantile(xi: float, params: BetaParams) -> float:
    a, b = params.effective_beta, params.rho
    return solve_quantile(lambda x: float(betainc(a, b, x)), xi)


# -----------------------------
# POISSON MIXTURE
# -----------------------------
def poisson_masses(lam: float, truncation_mass: float = DEFAULT_TRUNCATION_MASS) -> np.ndarray:
    """Poisson(lam) masses for n = 0..N, tail beyond N below truncation_mass, renormalized."""
    if lam == 0:
        return np.array([1.0])
    upper = int(lam + 12.0 * math.sqrt(lam) + 40)
    pmf = poisson.pmf(np.arange(upper + 1), lam)
    cut = int(np.searchsorted(np.cumsum(pmf), 1.0 - truncation_mass))
    kept = pmf[: min(cut, upper) + 1]
    return kept / kept.sum()


@functools.lru_cache(maxsize=64)
def mixture_weights(spec: MixtureSpec) -> np.ndarray:
    """W[n, m]: probability of n blue and m red input photons, averaged over the lambda grid."""
    blocks = []
    for lam in spec.lambda_grid():
        lam_b, lam_r = spec.mode_means(float(lam))
        blocks.append(np.outer(poisson_masses(lam_b, spec.truncation_mass),
                               poisson_masses(lam_r, spec.truncation_mass)))
    rows = max(w.shape[0] for w in blocks)
    cols = max(w.shape[1] for w in blocks)
    weights = np.zeros((rows, cols))
    for w in blocks:
        weights[: w.shape[0], : w.shape[1]] += w
    weights /= len(blocks)
    weights.setflags(write=False)
    return weights


def _mixture_terms(spec: MixtureSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    weights = mixture_weights(spec)
    n, m = np.nonzero(weights)
    # shape = photon number + 1
    a = (n + 1.0) * (1.0 + spec.epsilon)
    b = m + 1.0
    return weights[n, m], a, b


def mixture_pdf(t: ArrayLike, spec: MixtureSpec):
    arr = _check_unit(t)
    w, a, b = _mixture_terms(spec)
    x = np.atleast_1d(arr)[:, None]
    values = np.exp(_log_beta_pdf(x, a[None, :], b[None, :])) @ w
    return _scalar_or_array(values.reshape(arr.shape), t)


def mixture_cdf(t: ArrayLike, spec: MixtureSpec):
    """Term-wise exact integral of mixture_pdf."""
    arr = _check_unit(t)
    w, a, b = _mixture_terms(spec)
    x = np.atleast_1d(arr)[:, None]
    values = betainc(a[None, :], b[None, :], x) @ w
    return _scalar_or_array(np.clip(values, 0.0, 1.0).reshape(arr.shape), t)


def mixture_quantile(xi: float, spec: MixtureSpec) -> float:
    return solve_quantile(lambda x: float(mixture_cdf(x, spec)), xi)


def mixture_moments(spec: MixtureSpec) -> Tuple[float, float]:
    w, a, b = _mixture_terms(spec)
    mean = float(np.sum(w * a / (a + b)))
    second = float(np.sum(w * a * (a + 1.0) / ((a + b) * (a + b + 1.0))))
    return mean, second - mean ** 2


# -----------------------------
# DISTRIBUTION HANDLES
# -----------------------------
class BetaLaw:
    def __init__(self, params: BetaParams):
        self.params = params

    def pdf(self, t):
        return beta_pdf(t, self.params)

    def cdf(self, t):
        return beta_cdf(t, self.params)

    def ppf(self, xi: float) -> float:
        return beta_quantile(xi, self.params)

    def moments(self) -> Tuple[float, float]:
        return beta_moments(self.params)

    def describe(self) -> str:
        return self.params.describe()


class MixtureLaw:
    def __init__(self, spec: MixtureSpec):
        self.spec = spec

    def pdf(self, t):
        return mixture_pdf(t, self.spec)

    def cdf(self, t):
        return mixture_cdf(t, self.spec)

    def ppf(self, xi: float) -> float:
        return mixture_quantile(xi, self.spec)

    def moments(self) -> Tuple[float, float]:
        return mixture_moments(self.spec)

    def describe(self) -> str:
        return self.spec.describe()


class ConvolvedLaw:
    """Law of clamp(T + sigma * g, 0, 1): base law seen through a Gaussian instrument function."""

    def __init__(self, base, sigma: float):
        if sigma <= 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        self.base = base
        self.sigma = sigma

    def _smooth_cdf(self, x: float) -> float:
        s = self.sigma
        # integration by parts: F(1) Phi((x-1)/s) + int F(t) phi((x-t)/s)/s dt
        inner, _ = integrate.quad(
            lambda t: float(self.base.cdf(t)) * norm.pdf((x - t) / s) / s,
            0.0, 1.0, points=[x] if 0.0 < x < 1.0 else None, epsabs=1e-12, limit=200,
        )
        return min(1.0, max(0.0, float(ndtr((x - 1.0) / s)) + inner))

    def _cdf_scalar(self, x: float) -> float:
        if x < 0.0:
            return 0.0
        if x >= 1.0:
            return 1.0
        return self._smooth_cdf(x)

    def _pdf_scalar(self, x: float) -> float:
        if x <= 0.0 or x >= 1.0:
            return 0.0
        s = self.sigma
        value, _ = integrate.quad(
            lambda t: float(self.base.pdf(t)) * norm.pdf((x - t) / s) / s,
            0.0, 1.0, points=[x], epsabs=1e-12, limit=200,
        )
        return value

    def cdf(self, x):
        if np.ndim(x) == 0:
            return self._cdf_scalar(float(x))
        return np.array([self._cdf_scalar(float(v)) for v in np.asarray(x, dtype=float).ravel()]).reshape(np.shape(x))

    def pdf(self, x):
        if np.ndim(x) == 0:
            return self._pdf_scalar(float(x))
        return np.array([self._pdf_scalar(float(v)) for v in np.asarray(x, dtype=float).ravel()]).reshape(np.shape(x))

    def ppf(self, xi: float) -> float:
        return solve_quantile(self._cdf_scalar, xi)

    def atoms(self) -> Tuple[float, float]:
        """Probability mass clamped onto 0 and onto 1."""
        return self._smooth_cdf(0.0), 1.0 - self._smooth_cdf(1.0)

    def moments(self) -> Tuple[float, float]:
        """Mean and variance of the clamped reading.

        The unclamped reading has variance var(T) + sigma^2; clamping pulls
        mass back from both edges, so this is smaller.
        """
        def survival(y: float) -> float:
            return 1.0 - self._cdf_scalar(y)

        mean, _ = integrate.quad(survival, 0.0, 1.0, epsabs=1e-12, limit=200)
        second, _ = integrate.quad(lambda y: 2.0 * y * survival(y), 0.0, 1.0, epsabs=1e-12, limit=200)
        return mean, second - mean * mean

    def unclamped_moments(self) -> Tuple[float, float]:
        mean, var = self.base.moments()
        return mean, var + self.sigma ** 2

    def tabulate(self, points: int = 2049) -> "TabulatedLaw":
        grid = np.linspace(0.0, 1.0, points)
        return TabulatedLaw(grid, self.cdf(grid), self.describe())

    def describe(self) -> str:
        return f"convolved({self.base.describe()}, sigma={self.sigma:.6g})"


class TabulatedLaw:
    """Piecewise-linear CDF on a grid; used for large goodness-of-fit samples."""

    def __init__(self, grid: np.ndarray, cdf_values: np.ndarray, description: str = "tabulated"):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.maximum.accumulate(np.asarray(cdf_values, dtype=float))
        self.description = description

    def cdf(self, x):
        out = np.interp(x, self.grid, self.values, left=0.0, right=1.0)
        return float(out) if np.ndim(x) == 0 else out

    def ppf(self, xi: float) -> float:
        return solve_quantile(lambda v: float(self.cdf(v)), xi)

    def describe(self) -> str:
        return f"tabulated({self.description})"


# -----------------------------
# QUANTILE TABLES
# -----------------------------
@dataclass(frozen=True)
class QuantileTable:
    n_bits: int
    thresholds: Tuple[float, ...]
    law: str = ""
    tolerance: float = SOLVER_TOLERANCE

    def __post_init__(self):
        if self.n_bits < 1:
            raise DomainError(f"n_bits must be >= 1, got {self.n_bits}")
        if len(self.thresholds) != 2 ** self.n_bits - 1:
            raise DomainError(
                f"{self.n_bits}-bit table needs {2 ** self.n_bits - 1} thresholds, got {len(self.thresholds)}"
            )
        ts = self.thresholds
        if any(not 0.0 < t < 1.0 for t in ts) or any(a >= b for a, b in zip(ts, ts[1:])):
            raise DomainError("thresholds must be strictly increasing inside (0, 1)")


def quantile_table(law, n_bits: int) -> QuantileTable:
    cells = 2 ** n_bits
    if hasattr(law, "atoms"):
        # an edge atom at or above 1/cells swallows a whole level
        low, high = law.atoms()
        if max(low, high) >= 1.0 / cells:
            raise BoundaryMassError(n_bits, low, high)
    thresholds = tuple(law.ppf(j / cells) for j in range(1, cells))
    logger.debug("[quantiles] n_bits=%d law=%s", n_bits, law.describe())
    return QuantileTable(n_bits=n_bits, thresholds=thresholds, law=law.describe())


def render_quantile_table(table: QuantileTable) -> str:
    lines = [
        f"# n_bits={table.n_bits}",
        f"# law={table.law}",
        f"# tolerance={table.tolerance:g}",
    ]
    lines += [format_float(t) for t in table.thresholds]
    return "\n".join(lines) + "\n"


def parse_quantile_table(text: str) -> QuantileTable:
    header: Dict[str, str] = {}
    values: List[float] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
        else:
            values.append(float(line))
    return QuantileTable(
        n_bits=int(header["n_bits"]),
        thresholds=tuple(values),
        law=header.get("law", ""),
        tolerance=float(header.get("tolerance", SOLVER_TOLERANCE)),
    )


def density_rows(law, points: int = 101) -> List[Tuple[str, str, str]]:
    """(t, pdf, cdf) over a uniform grid of [0, 1]."""
    grid = np.linspace(0.0, 1.0, points)
    pdf = np.asarray(law.pdf(grid), dtype=float)
    cdf = np.asarray(law.cdf(grid), dtype=float)
    return [(format_float(t), format_float(p), format_float(c)) for t, p, c in zip(grid, pdf, cdf)]
