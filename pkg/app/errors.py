# app/errors.py
"""
Exception types raised by the simulator.
The CLI maps them onto exit codes (see app/cli.py).
"""

from typing import Optional, Tuple


class QrngError(Exception):
    """Base class for every error the simulator raises on purpose."""


class DomainError(QrngError, ValueError):
    """Argument outside the domain of a density/CDF/quantile."""


class ShapeError(QrngError, ValueError):
    """Non-positive effective shape parameter."""


class OracleCapError(QrngError, ValueError):
    """Exact oracle asked for more steps than it enumerates."""


class InsufficientDataError(QrngError, ValueError):
    """Too few bits or samples for a statistical test."""


class QuantileConvergenceError(QrngError, RuntimeError):
    def __init__(self, xi: float, bracket: Tuple[float, float], detail: str = ""):
        self.xi = xi
        self.bracket = bracket
        super().__init__(
            f"quantile solver did not converge for xi={xi!r}, "
            f"bracket=[{bracket[0]!r}, {bracket[1]!r}] {detail}".strip()
        )


class NoiseGateError(QrngError, RuntimeError):
    def __init__(self, n_bits: int, measure: str, value: float):
        self.n_bits = n_bits
        self.measure = measure
        self.value = value
        self.bound = 2.0 ** (-n_bits)
        super().__init__(
            f"noise gate refused {n_bits}-bit extraction: "
            f"{measure}={value:g} is not below 2^-{n_bits}={self.bound:g}"
        )


class RunError(QrngError, RuntimeError):
    def __init__(self, run_index: int, cause: Optional[BaseException] = None):
        self.run_index = run_index
        self.cause = cause
        super().__init__(f"run {run_index} failed: {cause}")


class BoundaryMassError(QrngError, RuntimeError):
    """Clamped reading puts too much mass on an edge for the requested cell count."""

    def __init__(self, n_bits: int, low: float, high: float):
        self.n_bits = n_bits
        self.low = low
        self.high = high
        self.bound = 2.0 ** (-n_bits)
        super().__init__(
            f"folded {n_bits}-bit thresholds refused: clamped reading has mass {low:.4g} at 0 "
            f"and {high:.4g} at 1, both must be below 2^-{n_bits}={self.bound:g}"
        )
