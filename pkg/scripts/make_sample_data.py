#!/usr/bin/env python3
"""Regenerate the bundled outbreak-shaped sample series.

The curves are deterministic: a flat near-zero baseline, then logistic growth
with a weekly reporting dip, rounded to counts.  Rise days here must stay in
sync with the constants in rdecusum.data.
"""

from __future__ import annotations

import math
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "rdecusum" / "data"

WEEKLY = (1.0, 1.05, 0.95, 0.9, 1.0, 0.8, 0.7)


def logistic_series(
    n_days: int,
    rise_day: int,
    plateau: float,
    rate: float,
    midpoint: int,
    blips: dict[int, int],
) -> list[tuple[int, int]]:
    rows = []
    for day in range(1, n_days + 1):
        if day < rise_day:
            value = blips.get(day, 0)
        else:
            level = plateau / (1.0 + math.exp(-rate * (day - midpoint)))
            value = round(level * WEEKLY[day % 7])
        rows.append((day, int(value)))
    return rows


def write_csv(path: Path, rows: list[tuple[int, int]]) -> None:
    lines = ["day,cases"] + [f"{d},{v}" for d, v in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path} ({len(rows)} rows)")


def main() -> None:
    write_csv(
        DATA_DIR / "allegheny_sample.csv",
        logistic_series(
            n_days=200, rise_day=53, plateau=85.0, rate=0.30, midpoint=66, blips={35: 1}
        ),
    )
    write_csv(
        DATA_DIR / "stlouis_sample.csv",
        logistic_series(
            n_days=200, rise_day=55, plateau=130.0, rate=0.28, midpoint=70, blips={22: 1, 41: 1}
        ),
    )


if __name__ == "__main__":
    main()
