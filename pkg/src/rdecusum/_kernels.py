"""Compiled inner loops for the Monte-Carlo engine.

These scans replicate the streaming recursions in ``detectors`` step for step
(same arithmetic, same ceiling rule for skip runs), so simulated trials are
bit-identical to what ``run_detector`` would produce on the same inputs.  The
equivalence is property-tested in the suite.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Skip runs are capped at the same bound as detectors.SKIP_RUN_CAP; kept as a
# float here for the overflow comparison before the int conversion.
_SKIP_CAP = float(1 << 62)
_SKIP_CAP_INT = 1 << 62


@njit(cache=True)
def scan_rde(
    z,
    d,
    anchor,
    skips_done,
    skips_left,
    a,
    mu,
    floor,
    running_max,
    first_undershoot,
    collect,
    rec_steps,
    rec_vals,
):
    """Advance the rde/robust recursion over one block of llr values.

    Returns (alarm_offset, d, anchor, skips_done, skips_left, samples,
    running_max, first_undershoot, n_records); alarm_offset is -1 when the
    whole block was consumed without an alarm.
    """
    n = z.shape[0]
    samples = 0
    alarm = -1
    nrec = 0
    for i in range(n):
        if skips_left > 0:
            skips_done += 1
            skips_left -= 1
            if skips_left == 0:
                d = 0.0
            else:
                climbed = anchor + skips_done * mu
                d = climbed if climbed < 0.0 else 0.0
        else:
            raw = d + z[i]
            d = raw if raw > floor else floor
            samples += 1
            if d < 0.0:
                anchor = d
                skips_done = 0
                ratio = -d / mu
                if ratio >= _SKIP_CAP:
                    skips_left = _SKIP_CAP_INT
                else:
                    skips_left = int(np.ceil(ratio))
                if np.isnan(first_undershoot):
                    first_undershoot = d
        if d > running_max:
            running_max = d
            if collect:
                rec_steps[nrec] = i
                rec_vals[nrec] = d
                nrec += 1
        if d >= a:
            alarm = i
            break
    return alarm, d, anchor, skips_done, skips_left, samples, running_max, first_undershoot, nrec


@njit(cache=True)
def scan_fractional(z, heads, w, a, running_max, collect, rec_steps, rec_vals):
    """Advance the fractional-sampling robust CUSUM over one block.

    Returns (alarm_offset, w, samples, running_max, n_records).
    """
    n = z.shape[0]
    samples = 0
    alarm = -1
    nrec = 0
    for i in range(n):
        if heads[i]:
            raw = w + z[i]
            w = raw if raw > 0.0 else 0.0
            samples += 1
        if w > running_max:
            running_max = w
            if collect:
                rec_steps[nrec] = i
                rec_vals[nrec] = w
                nrec += 1
        if w >= a:
            alarm = i
            break
    return alarm, w, samples, running_max, nrec


@njit(cache=True)
def walk_first_exit(z, s, upper):
    """Plain random walk until it leaves [0, upper); upper = inf disables the top.

    Returns (exit_offset, s, exit_kind): kind 0 for a below-zero exit, 1 for an
    at-or-above-upper exit, -1 if the block ended inside the interval.
    """
    n = z.shape[0]
    for i in range(n):
        s += z[i]
        if s < 0.0:
            return i, s, 0
        if s >= upper:
            return i, s, 1
    return -1, s, -1
