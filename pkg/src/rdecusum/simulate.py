"""Monte-Carlo trial engine: seeding scheme, block simulation, parallel map.

Seeding contract
----------------
Trial ``i`` of a run with base seed ``s`` owns two independent generator
streams derived through numpy's splittable SeedSequence mechanism:

* observations: ``default_rng(SeedSequence(entropy=s, spawn_key=(0, i)))``
* fractional-sampling coin: ``spawn_key=(1, i)``

Streams are therefore reproducible, order-independent across trials, and
identical for every detector kind and threshold, which is what gives the
common-random-number couplings used by the calibration and sweep code.
Observations are drawn in blocks; numpy generators produce the same variate
sequence regardless of block boundaries (asserted in the test suite).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .detectors import DetectorKind, PolicyParams
from .distributions import DistributionSpec, llr_coefficients
from .errors import InvalidInputError

OBS_STREAM = 0
COIN_STREAM = 1
NOISE_STREAM = 2

_BLOCK_SIZES = (256, 1024, 4096, 16384)

#: Cap on any single random-walk excursion; capped walks are counted upstream.
WALK_CAP = 1_000_000


def seed_sequence(base_seed: int, trial_index: int, stream: int = OBS_STREAM) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(stream, trial_index))


def trial_rng(base_seed: int, trial_index: int, stream: int = OBS_STREAM) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(base_seed, trial_index, stream))


def _block_length(block_index: int) -> int:
    return _BLOCK_SIZES[min(block_index, len(_BLOCK_SIZES) - 1)]


@dataclass(frozen=True)
class TrialOutcome:
    """Aggregate view of one simulated trial (no per-step path is kept)."""

    stop_time: int | None
    steps: int
    samples_used: int
    samples_prechange: int
    first_undershoot: float | None
    running_max: float
    checkpoint_samples: dict[int, int]
    checkpoint_max: dict[int, float]
    record_steps: np.ndarray | None = None
    record_values: np.ndarray | None = None


def run_trial(
    f: DistributionSpec,
    gbar: DistributionSpec,
    true_g: DistributionSpec | None,
    change_point: int | None,
    params: PolicyParams,
    max_steps: int,
    base_seed: int,
    trial_index: int,
    *,
    threshold: float | None = None,
    stop_on_alarm: bool = True,
    checkpoints: Sequence[int] = (),
    collect_records: bool = False,
) -> TrialOutcome:
    """Simulate one trial of a detector on synthetic data.

    Observations before step ``change_point`` are drawn from ``f`` and from
    ``true_g`` afterwards (``change_point=None`` means no change ever).  A
    skipped step still consumes one observation slot so that detector kinds
    stay aligned on shared sample paths.
    """
    if change_point is not None:
        if change_point < 1:
            raise InvalidInputError(f"change_point must be >= 1, got {change_point}")
        if true_g is None:
            raise InvalidInputError("a change point needs a true post-change law")
    slope, intercept = llr_coefficients(f, gbar)
    obs_rng = trial_rng(base_seed, trial_index, OBS_STREAM)
    fractional = params.kind is DetectorKind.FRACTIONAL
    coin_rng = trial_rng(base_seed, trial_index, COIN_STREAM) if fractional else None
    a = float(threshold if threshold is not None else params.threshold_a)
    if not stop_on_alarm:
        a = math.inf

    checkpoint_set = {int(c) for c in checkpoints if 0 < c <= max_steps}
    boundaries = set(checkpoint_set)
    if change_point is not None and 0 < change_point - 1 <= max_steps:
        boundaries.add(change_point - 1)
    boundary_list = sorted(boundaries)

    stat = 0.0
    anchor = 0.0
    skips_done = 0
    skips_left = 0
    samples = 0
    steps = 0
    running_max = 0.0
    first_undershoot = math.nan
    samples_prechange = 0 if change_point is not None and change_point == 1 else None
    checkpoint_samples: dict[int, int] = {}
    checkpoint_max: dict[int, float] = {}
    rec_steps_parts: list[np.ndarray] = []
    rec_vals_parts: list[np.ndarray] = []
    _empty_i = np.empty(0, dtype=np.int64)
    _empty_f = np.empty(0, dtype=np.float64)

    stop_time: int | None = None
    block_index = 0
    while steps < max_steps:
        limit = max_steps
        for b in boundary_list:
            if b > steps:
                limit = min(limit, b)
                break
        length = min(_block_length(block_index), limit - steps)
        block_index += 1
        pre_change = change_point is None or steps + 1 < change_point
        law = f if pre_change else true_g
        xs = law.sample(obs_rng, length)
        z = slope * xs.astype(np.float64, copy=False) + intercept

        if collect_records:
            rec_s = np.empty(length, dtype=np.int64)
            rec_v = np.empty(length, dtype=np.float64)
        else:
            rec_s, rec_v = _empty_i, _empty_f

        if fractional:
            heads = np.empty(length, dtype=np.bool_)
            if steps == 0:
                heads[0] = True  # the first observation is always used
                if length > 1:
                    heads[1:] = coin_rng.random(length - 1) < params.sample_prob
            else:
                heads[:] = coin_rng.random(length) < params.sample_prob
            alarm_off, stat, got, running_max, nrec = _kernels.scan_fractional(
                z, heads, stat, a, running_max, collect_records, rec_s, rec_v
            )
        else:
            (
                alarm_off,
                stat,
                anchor,
                skips_done,
                skips_left,
                got,
                running_max,
                first_undershoot,
                nrec,
            ) = _kernels.scan_rde(
                z,
                stat,
                anchor,
                skips_done,
                skips_left,
                a,
                params.mu,
                params.floor,
                running_max,
                first_undershoot,
                collect_records,
                rec_s,
                rec_v,
            )
        if collect_records and nrec:
            rec_steps_parts.append(rec_s[:nrec] + steps)
            rec_vals_parts.append(rec_v[:nrec].copy())

        consumed = (alarm_off + 1) if alarm_off >= 0 else length
        steps += consumed
        samples += got
        if change_point is not None and steps == change_point - 1:
            samples_prechange = samples
        if steps in checkpoint_set:
            checkpoint_samples[steps] = samples
            checkpoint_max[steps] = running_max
        if alarm_off >= 0:
            stop_time = steps
            break

    if samples_prechange is None:
        # No change, or the run ended before reaching the change point.
        samples_prechange = samples
    rec_steps = np.concatenate(rec_steps_parts) if rec_steps_parts else None
    rec_vals = np.concatenate(rec_vals_parts) if rec_vals_parts else None
    return TrialOutcome(
        stop_time=stop_time,
        steps=steps,
        samples_used=samples,
        samples_prechange=samples_prechange,
        first_undershoot=None if math.isnan(first_undershoot) else first_undershoot,
        running_max=running_max,
        checkpoint_samples=checkpoint_samples,
        checkpoint_max=checkpoint_max,
        record_steps=rec_steps,
        record_values=rec_vals,
    )


@dataclass(frozen=True)
class WalkBatch:
    """First-passage excursions of the llr random walk under the no-change law."""

    lengths: np.ndarray  # steps to exit (capped walks get WALK_CAP)
    end_values: np.ndarray  # raw walk value at exit (nan for capped walks)
    exited_above: np.ndarray  # bool; only possible when upper < inf
    first_increments: np.ndarray
    capped: int


def simulate_walks(
    f: DistributionSpec,
    gbar: DistributionSpec,
    n_walks: int,
    base_seed: int,
    upper: float = math.inf,
    cap: int = WALK_CAP,
    workers: int | None = None,
) -> WalkBatch:
    """Simulate n_walks excursions of cumulative llr from 0 until exit of [0, upper).

    With upper = inf this is the first passage below zero.  Observations are
    drawn under ``f``; walk ``i`` uses the trial stream (base_seed, i).
    """
    args = (f, gbar, float(upper), int(cap), int(base_seed))
    lengths, ends, above, first = map_trial_chunks(_walk_chunk, args, n_walks, workers)
    capped = int(np.count_nonzero(lengths >= cap))
    return WalkBatch(
        lengths=lengths,
        end_values=ends,
        exited_above=above.astype(bool),
        first_increments=first,
        capped=capped,
    )


def _walk_chunk(args, start: int, stop: int):
    f, gbar, upper, cap, base_seed = args
    slope, intercept = llr_coefficients(f, gbar)
    n = stop - start
    lengths = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.float64)
    above = np.zeros(n, dtype=np.bool_)
    first = np.empty(n, dtype=np.float64)
    for j in range(n):
        rng = trial_rng(base_seed, start + j, OBS_STREAM)
        s = 0.0
        steps = 0
        block_index = 0
        got_first = False
        while True:
            length = min(_block_length(block_index), cap - steps)
            block_index += 1
            xs = f.sample(rng, length)
            z = slope * xs.astype(np.float64, copy=False) + intercept
            if not got_first:
                first[j] = z[0]
                got_first = True
            off, s, kind = _kernels.walk_first_exit(z, s, upper)
            if off >= 0:
                lengths[j] = steps + off + 1
                ends[j] = s
                above[j] = kind == 1
                break
            steps += length
            if steps >= cap:
                lengths[j] = cap
                ends[j] = math.nan
                break
    return lengths, ends, above, first


def map_trial_chunks(
    chunk_fn: Callable,
    args,
    n_trials: int,
    workers: int | None,
) -> tuple:
    """Run ``chunk_fn(args, start, stop)`` over [0, n_trials) and merge outputs.

    Each output slot is either a numpy array (concatenated) or a list
    (extended); merging follows trial order, so results do not depend on
    worker scheduling.
    """
    if n_trials <= 0:
        raise InvalidInputError(f"need at least one trial, got {n_trials}")
    if workers is None or workers <= 1 or n_trials < 64:
        return chunk_fn(args, 0, n_trials)
    n_chunks = min(workers * 4, n_trials)
    edges = np.linspace(0, n_trials, n_chunks + 1, dtype=int)
    parts = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(chunk_fn, args, int(a), int(b))
            for a, b in zip(edges[:-1], edges[1:])
            if b > a
        ]
        for fut in futures:
            parts.append(fut.result())
    merged = []
    for slot in range(len(parts[0])):
        pieces = [p[slot] for p in parts]
        if isinstance(pieces[0], np.ndarray):
            merged.append(np.concatenate(pieces))
        else:
            out: list = []
            for piece in pieces:
                out.extend(piece)
            merged.append(out)
    return tuple(merged)
