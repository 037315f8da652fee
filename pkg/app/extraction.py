# app/extraction.py
"""
Quantile-threshold bit extraction.

Thresholds sit at the 2^n quantiles of the law the comparator actually sees,
so every n-bit symbol is equally likely whatever the shape of that law.
A symbol is the index of the half-open cell [t_j, t_{j+1}) holding the
observed fraction, written most significant bit first; a value equal to a
threshold belongs to the upper cell.
"""

import bisect
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from app.detector import DetectorModel, noise_draws, read_out_batch
from app.distributions import BetaParams, MixtureSpec, QuantileTable, beta_moments, quantile_table
from app.errors import DomainError, NoiseGateError
from app.urn import RunConfig, coherent_ensemble, ensemble, limiting_values
from utils.formats import format_float, write_kv
from utils.streams import STREAM_DERIVATION

logger = logging.getLogger(__name__)

NOISE_MEASURES = ("fwhm", "sigma", "delta_ratio")


# -----------------------------
# RECIPES AND STREAMS
# -----------------------------
@dataclass(frozen=True)
class ExtractionRecipe:
    table: QuantileTable

    @property
    def n_bits(self) -> int:
        return self.table.n_bits

    @classmethod
    def for_law(cls, law, n_bits: int) -> "ExtractionRecipe":
        return cls(table=quantile_table(law, n_bits))

    def describe(self) -> str:
        return f"{self.n_bits}-bit quantile cells over {self.table.law}"


def symbol_bits(symbol: int, n_bits: int) -> str:
    return format(symbol, f"0{n_bits}b")


@dataclass
class BitStream:
    """Symbols in run order plus metadata; bits are MSB first within a symbol."""
    symbols: np.ndarray
    n_bits: int
    metadata: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_bits(cls, bits, metadata: Optional[Dict[str, str]] = None) -> "BitStream":
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.size and arr.max() > 1:
            raise DomainError("bits must be 0 or 1")
        return cls(symbols=arr.astype(np.int64), n_bits=1, metadata=dict(metadata or {}))

    @property
    def bits(self) -> np.ndarray:
        shifts = np.arange(self.n_bits - 1, -1, -1)
        return ((np.asarray(self.symbols, dtype=np.int64)[:, None] >> shifts) & 1).astype(np.uint8).ravel()

    @property
    def bit_count(self) -> int:
        return int(len(self.symbols) * self.n_bits)

    @property
    def pad_bits(self) -> int:
        return (-self.bit_count) % 8

    def packed(self) -> bytes:
        return np.packbits(self.bits, bitorder="big").tobytes()

    def symbol_counts(self) -> np.ndarray:
        return np.bincount(np.asarray(self.symbols, dtype=np.int64), minlength=2 ** self.n_bits)

    def ascii(self) -> str:
        return self.bits.astype(np.uint8).tobytes().translate(bytes.maketrans(b"\x00\x01", b"01")).decode("ascii")


# -----------------------------
# EXTRACTION
# -----------------------------
def extract(observed_t: float, recipe: ExtractionRecipe) -> int:
    if not 0.0 <= observed_t <= 1.0:
        raise DomainError(f"observed fraction must lie in [0, 1], got {observed_t}")
    return bisect.bisect_right(recipe.table.thresholds, observed_t)


def extract_batch(observed: np.ndarray, recipe: ExtractionRecipe) -> np.ndarray:
    return np.searchsorted(np.asarray(recipe.table.thresholds), observed, side="right").astype(np.int64)


def noise_measure_value(model: DetectorModel, params: Union[BetaParams, object, None],
                        measure: str = "fwhm") -> float:
    if measure == "fwhm":
        return model.fwhm
    if measure == "sigma":
        return model.sigma
    if measure == "delta_ratio":
        if params is None:
            raise DomainError("delta_ratio noise measure needs the limiting-law parameters")
        _, variance = beta_moments(params) if isinstance(params, BetaParams) else params.moments()
        return model.fwhm / math.sqrt(variance)
    raise DomainError(f"unknown noise measure {measure!r}; expected one of {NOISE_MEASURES}")


def noise_gate(n_bits: int, model: DetectorModel, params: Union[BetaParams, object, None] = None,
               measure: str = "fwhm") -> bool:
    """True when the noise measure is strictly below 2^-n_bits."""
    return noise_measure_value(model, params, measure) < 2.0 ** (-n_bits)


# -----------------------------
# PIPELINE
# -----------------------------
def pipeline(run_config: RunConfig, detector_model: DetectorModel, recipe: ExtractionRecipe, count: int,
             params: Union[BetaParams, object, None] = None, input_spec: Optional[MixtureSpec] = None,
             override: bool = False, measure: str = "fwhm", workers: int = 1, block_size: int = 2048,
             timings: Optional[Dict[str, float]] = None) -> BitStream:
    """`count` urn runs -> detector read-out -> n-bit symbols.

    Run i uses run index run_config.run_index + i. With `input_spec` the
    initial populations are drawn per run from the coherent-state mixture.
    """
    n_bits = recipe.n_bits
    if count < 0:
        raise DomainError(f"count must be non-negative, got {count}")
    if not noise_gate(n_bits, detector_model, params, measure):
        value = noise_measure_value(detector_model, params, measure)
        if not override:
            raise NoiseGateError(n_bits, measure, value)
        logger.warning("[pipeline] noise gate overridden: %s=%g >= 2^-%d", measure, value, n_bits)

    logger.info("[pipeline] count=%d n_bits=%d steps=%d seed=%d", count, n_bits, run_config.steps, run_config.seed)
    clock = time.perf_counter()
    if input_spec is not None:
        configs = coherent_ensemble(run_config, input_spec, count)
    else:
        configs = ensemble(run_config, count)
    limits = limiting_values(configs, workers=workers, block_size=block_size)
    t_urn = time.perf_counter()

    indices = [c.run_index for c in configs]
    noise = noise_draws(detector_model, run_config.seed, indices) if detector_model.sigma > 0 else None
    observed = read_out_batch(limits, detector_model, noise)
    t_read = time.perf_counter()

    symbols = extract_batch(observed, recipe)
    if detector_model.blue_mode == "H":
        symbols = (2 ** n_bits - 1) - symbols
    t_extract = time.perf_counter()

    stream = BitStream(symbols=symbols, n_bits=n_bits)
    stream.metadata = stream_metadata(stream, run_config, detector_model, recipe, input_spec)
    t_pack = time.perf_counter()

    if timings is not None:
        timings.update({
            "urn": t_urn - clock,
            "readout": t_read - t_urn,
            "extraction": t_extract - t_read,
            "packing": t_pack - t_extract,
        })
    return stream


def stream_metadata(stream: BitStream, run_config: RunConfig, model: DetectorModel,
                    recipe: ExtractionRecipe, input_spec: Optional[MixtureSpec]) -> Dict[str, str]:
    counts = stream.symbol_counts()
    meta = {
        "recipe": recipe.describe(),
        "n_bits": str(stream.n_bits),
        "thresholds": ",".join(format_float(t) for t in recipe.table.thresholds),
        "input": input_spec.describe() if input_spec is not None else
        f"number(blue={run_config.initial_blue}, red={run_config.initial_red})",
        "epsilon": format_float(run_config.epsilon),
        "detector": model.describe(),
        "seed": str(run_config.seed),
        "first_run_index": str(run_config.run_index),
        "runs": str(len(stream.symbols)),
        "run_length": str(run_config.steps),
        "bit_count": str(stream.bit_count),
        "pad_bits": str(stream.pad_bits),
        "bit_order": "msb-first",
        "stream_derivation": STREAM_DERIVATION,
    }
    for j, c in enumerate(counts):
        meta[f"count_{symbol_bits(j, stream.n_bits)}"] = str(int(c))
    return meta


# -----------------------------
# WRITERS / READERS
# -----------------------------
def write_raw(stream: BitStream, path: str) -> str:
    with open(path, "wb") as fh:
        fh.write(stream.packed())
    return path


def write_ascii(stream: BitStream, path: str) -> str:
    with open(path, "w") as fh:
        fh.write(stream.ascii())
        fh.write("\n")
    return path


def write_sidecar(stream: BitStream, path: str) -> str:
    return write_kv(path, stream.metadata)


def read_bits(path: str, bit_count: Optional[int] = None) -> BitStream:
    """Load a bitstream written by write_ascii (.txt) or write_raw (anything else)."""
    if path.endswith(".txt"):
        with open(path) as fh:
            text = "".join(fh.read().split())
        if set(text) - {"0", "1"}:
            raise DomainError(f"{path}: ASCII bitstream may only hold '0' and '1'")
        bits = np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")
    else:
        with open(path, "rb") as fh:
            bits = np.unpackbits(np.frombuffer(fh.read(), dtype=np.uint8), bitorder="big")
    if bit_count is not None:
        bits = bits[:bit_count]
    return BitStream.from_bits(bits, {"source": path})
