"""Bundled 200-day outbreak-shaped sample series.

These are emulations shaped like early-2020 county case-count curves (a flat
near-zero baseline followed by a sustained rise), not real surveillance data;
``scripts/fetch_county_data.py`` documents how to pull the real thing.  Each
bundle records the first day of its built-in sustained rise so pipelines can
score detection latency against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path


@dataclass(frozen=True)
class BundledSeries:
    name: str
    filename: str
    rise_day: int  # first index of the sustained rise built into the series

    @property
    def path(self) -> Path:
        return Path(str(files("rdecusum.data").joinpath(self.filename)))


ALLEGHENY = BundledSeries(name="allegheny", filename="allegheny_sample.csv", rise_day=53)
ST_LOUIS = BundledSeries(name="st_louis", filename="stlouis_sample.csv", rise_day=55)

ALL_BUNDLES = (ALLEGHENY, ST_LOUIS)
