# app/urn.py
"""
Bosonic stimulation as a Polya urn.

A run starts from (blue, red) photon populations and adds one photon per
step, to blue with probability (blue + 1) / (blue + red + 2). The fraction
blue / (blue + red) settles on a random limiting value.

Runs are simulated in blocks: all runs of a block advance in lockstep on
numpy arrays, but each run draws its uniforms from its own derived stream
(utils/streams.py), so results never depend on block size or worker count.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.distributions import MixtureSpec
from app.errors import RunError
from utils.streams import SEED_LIMIT, derive_stream

logger = logging.getLogger(__name__)

MAX_TOTAL = 2 ** 62
STEP_CHUNK = 1024
DEFAULT_BLOCK_SIZE = 2048


# ---- state and config ----
class UrnState(BaseModel):
    """Mode populations after `step` transitions.

    `bias` is an extra blue pseudo-count modelling unequal coupling to the two
    modes; it is 0 for the symmetric process.
    """
    model_config = ConfigDict(frozen=True)

    blue: int = Field(ge=0)
    red: int = Field(ge=0)
    step: int = Field(0, ge=0)
    bias: float = 0.0

    @model_validator(mode="after")
    def _positive_weight(self):
        if not self.blue + 1 + self.bias > 0:
            raise ValueError(f"blue weight must stay positive, got bias={self.bias}")
        return self

    @property
    def total(self) -> int:
        return self.blue + self.red

    @property
    def fraction(self) -> float:
        # empty urn: both modes equally likely
        return self.blue / self.total if self.total else 0.5


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    initial_blue: int = Field(0, ge=0)
    initial_red: int = Field(0, ge=0)
    steps: int = Field(10_000, ge=1)
    record_stride: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)
    run_index: int = Field(0, ge=0)
    epsilon: float = Field(0.0, gt=-1.0)

    @model_validator(mode="after")
    def _no_overflow(self):
        if self.steps > MAX_TOTAL - (self.initial_blue + self.initial_red):
            raise ValueError(f"steps={self.steps} would overflow 64-bit counts")
        return self

    @property
    def bias(self) -> float:
        return self.epsilon * (self.initial_blue + 1)

    def initial_state(self) -> UrnState:
        return UrnState(blue=self.initial_blue, red=self.initial_red, bias=self.bias)

    def recorded_steps(self) -> np.ndarray:
        """Step numbers recorded in a trajectory; the last one is always `steps`."""
        n_rec = -(-self.steps // self.record_stride)
        return self.steps - self.record_stride * np.arange(n_rec - 1, -1, -1, dtype=np.int64)


@dataclass(frozen=True)
class Trajectory:
    initial: UrnState
    final: UrnState
    steps: np.ndarray
    fractions: np.ndarray
    run_index: int
    seed: int

    @property
    def limiting_value(self) -> float:
        return float(self.fractions[-1])

    def rows(self) -> List[Tuple[int, float]]:
        """CSV rows (step, fraction), starting with the initial state."""
        out = [(0, self.initial.fraction)]
        out += [(int(s), float(f)) for s, f in zip(self.steps, self.fractions)]
        return out


# ---- single transitions ----
def step_probability_blue(state: UrnState) -> float:
    return (state.blue + 1 + state.bias) / (state.blue + state.red + 2 + state.bias)


def advance(state: UrnState, draw: Callable[[], float]) -> UrnState:
    """One transition; a uniform draw below P(blue) adds to blue."""
    if draw() < step_probability_blue(state):
        return state.model_copy(update={"blue": state.blue + 1, "step": state.step + 1})
    return state.model_copy(update={"red": state.red + 1, "step": state.step + 1})


def posterior_mean(state: UrnState) -> Fraction:
    bias = Fraction(state.bias)
    return (state.blue + 1 + bias) / (state.blue + state.red + 2 + bias)


def expected_posterior_mean_after_step(state: UrnState) -> Fraction:
    """Exact one-step expectation of posterior_mean; equals posterior_mean(state)."""
    p = posterior_mean(state)
    after_blue = state.model_copy(update={"blue": state.blue + 1, "step": state.step + 1})
    after_red = state.model_copy(update={"red": state.red + 1, "step": state.step + 1})
    return p * posterior_mean(after_blue) + (1 - p) * posterior_mean(after_red)


# ---- block engine ----
@dataclass(frozen=True)
class _Block:
    seeds: Tuple[int, ...]
    run_indices: Tuple[int, ...]
    blue0: Tuple[int, ...]
    red0: Tuple[int, ...]
    epsilons: Tuple[float, ...]
    steps: int
    stride: int
    record: bool


def _simulate_block(block: _Block) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (final blue, final red, recorded fractions [runs x records])."""
    blue = np.array(block.blue0, dtype=np.int64)
    red = np.array(block.red0, dtype=np.int64)
    bias = np.array(block.epsilons, dtype=float) * (blue + 1)
    gens = [derive_stream(s, i, "urn") for s, i in zip(block.seeds, block.run_indices)]

    stride = block.stride if block.record else block.steps
    n_rec = -(-block.steps // stride)
    targets = block.steps - stride * np.arange(n_rec - 1, -1, -1, dtype=np.int64)
    fractions = np.empty((len(gens), n_rec))
    k = 0
    done = 0
    while done < block.steps:
        chunk = min(STEP_CHUNK, block.steps - done)
        draws = np.stack([g.random(chunk) for g in gens], axis=1)
        for i in range(chunk):
            take = draws[i] < (blue + 1.0 + bias) / (blue + red + 2.0 + bias)
            blue += take
            red += ~take
            done += 1
            if done == targets[k]:
                fractions[:, k] = blue / (blue + red)
                k = min(k + 1, n_rec - 1)
    return blue, red, fractions


def _blocks_for(configs: Sequence[RunConfig], record: bool, block_size: int) -> List[Tuple[List[int], _Block]]:
    groups: Dict[Tuple[int, int], List[int]] = {}
    for pos, cfg in enumerate(configs):
        key = (cfg.steps, cfg.record_stride if record else cfg.steps)
        groups.setdefault(key, []).append(pos)
    blocks = []
    for (steps, stride), positions in groups.items():
        for start in range(0, len(positions), block_size):
            chunk = positions[start:start + block_size]
            blocks.append((chunk, _Block(
                seeds=tuple(configs[p].seed for p in chunk),
                run_indices=tuple(configs[p].run_index for p in chunk),
                blue0=tuple(configs[p].initial_blue for p in chunk),
                red0=tuple(configs[p].initial_red for p in chunk),
                epsilons=tuple(configs[p].epsilon for p in chunk),
                steps=steps,
                stride=stride,
                record=record,
            )))
    return blocks


def _locate_failure(configs: Sequence[RunConfig], positions: List[int], record: bool, exc: BaseException):
    for p in positions:
        try:
            _simulate_block(_blocks_for([configs[p]], record, 1)[0][1])
        except Exception as inner:
            raise RunError(configs[p].run_index, inner) from inner
    raise RunError(configs[positions[0]].run_index, exc) from exc


def _execute(configs: Sequence[RunConfig], record: bool, workers: int, block_size: int):
    blocks = _blocks_for(configs, record, block_size)
    logger.info("[urn] runs=%d blocks=%d workers=%d", len(configs), len(blocks), workers)
    results = []
    if workers <= 1 or len(blocks) == 1:
        for positions, block in blocks:
            try:
                results.append((positions, block, _simulate_block(block)))
            except Exception as exc:
                _locate_failure(configs, positions, record, exc)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [(positions, block, pool.submit(_simulate_block, block)) for positions, block in blocks]
        for positions, block, fut in futures:
            try:
                results.append((positions, block, fut.result()))
            except Exception as exc:
                _locate_failure(configs, positions, record, exc)
    return results


# ---- public runners ----
def run(config: RunConfig) -> Trajectory:
    return run_batch([config])[0]


def run_batch(configs: Sequence[RunConfig], workers: int = 1,
              block_size: int = DEFAULT_BLOCK_SIZE) -> List[Trajectory]:
    """Trajectories in input order; identical to calling `run` on each config."""
    if not configs:
        raise ValueError("run_batch needs at least one config")
    out: List[Optional[Trajectory]] = [None] * len(configs)
    for positions, block, (blue, red, fractions) in _execute(configs, True, workers, block_size):
        for row, p in enumerate(positions):
            cfg = configs[p]
            out[p] = Trajectory(
                initial=cfg.initial_state(),
                final=UrnState(blue=int(blue[row]), red=int(red[row]), step=cfg.steps, bias=cfg.bias),
                steps=cfg.recorded_steps(),
                fractions=fractions[row].copy(),
                run_index=cfg.run_index,
                seed=cfg.seed,
            )
    return out


def limiting_values(configs: Sequence[RunConfig], workers: int = 1,
                    block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Final fractions only; no trajectory is kept."""
    values = np.empty(len(configs))
    if not configs:
        return values
    for positions, _, (_, _, fractions) in _execute(configs, False, workers, block_size):
        values[positions] = fractions[:, -1]
    return values


def ensemble(template: RunConfig, count: int) -> List[RunConfig]:
    """`count` runs sharing the template, with consecutive run indices."""
    return [template.model_copy(update={"run_index": template.run_index + i}) for i in range(count)]


def sample_initial_populations(spec: MixtureSpec, seed: int, run_index: int) -> Tuple[int, int]:
    """Coherent-state inputs: lambda from the spec grid, then Poisson photon numbers per mode."""
    rng = derive_stream(seed, run_index, "input")
    grid = spec.lambda_grid()
    lam = float(grid[rng.integers(len(grid))])
    lam_b, lam_r = spec.mode_means(lam)
    return int(rng.poisson(lam_b)), int(rng.poisson(lam_r))


def coherent_ensemble(template: RunConfig, spec: MixtureSpec, count: int) -> List[RunConfig]:
    configs = []
    for i in range(count):
        idx = template.run_index + i
        b0, r0 = sample_initial_populations(spec, template.seed, idx)
        configs.append(template.model_copy(update={
            "run_index": idx, "initial_blue": b0, "initial_red": r0,
        }))
    return configs
