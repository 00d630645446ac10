"""Desk-scale synthetic diurnal temperature corpus.

T(x, y, t) = base(M, k) + A(M) sin(2 pi (t - phase(R)) / 24) + lapse (x + y) + d + e

``d`` is a per-day anomaly shared by the whole region (coherent weather) and
``e`` is per-pixel noise.  Parameters vary with month, region and period so
that conditional distributions differ across labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .grid_store import (
    CELL_SIZE_DEG,
    HOURS_PER_DAY,
    REGION_CELLS,
    ConditionLabel,
    GridDataset,
    SampleBucket,
    datetime_to_hour,
    hour_to_datetime,
    period_index,
)


@dataclass(frozen=True)
class DiurnalClimate:
    annual_mean: float = 285.0
    seasonal_amplitude: float = 8.0
    period_trend: float = 0.4
    diurnal_amplitude: float = 4.0
    diurnal_seasonal: float = 2.0
    peak_hour: float = 21.0  # UTC, i.e. mid-afternoon on the US west coast
    region_phase_step: float = 0.5
    region_offset: float = 1.5
    lapse: float = -0.15
    daily_anomaly_std: float = 1.5
    noise_std: float = 0.3

    def params(self, label: ConditionLabel) -> tuple:
        """(base K, diurnal amplitude K, phase hour) for a label."""
        season = -np.cos(2 * np.pi * (label.month - 1) / 12)  # -1 in Jan, +1 in Jul
        base = (self.annual_mean + self.seasonal_amplitude * season + self.period_trend * label.k
                + self.region_offset * ((label.x - 1) - 0.5 * (label.y - 1)))
        amp = self.diurnal_amplitude + self.diurnal_seasonal * season
        phase = self.peak_hour - 6.0 + self.region_phase_step * (label.x - 1)
        return base, amp, phase

    def sample(self, label: ConditionLabel, n: int, rng) -> np.ndarray:
        base, amp, phase = self.params(label)
        t = np.arange(HOURS_PER_DAY, dtype=np.float64)
        cycle = amp * np.sin(2 * np.pi * (t - phase) / HOURS_PER_DAY)
        cells = np.arange(REGION_CELLS, dtype=np.float64)
        ramp = self.lapse * (cells[:, None] + cells[None, :])
        anomaly = rng.normal(0.0, self.daily_anomaly_std, size=(n, 1, 1, 1))
        noise = rng.normal(0.0, self.noise_std, size=(n, HOURS_PER_DAY, REGION_CELLS, REGION_CELLS))
        return base + cycle[None, :, None, None] + ramp[None, None] + anomaly + noise


def synthetic_buckets(labels, n_per_label: int, seed: int = 0, climate: DiurnalClimate | None = None) -> list:
    climate = climate or DiurnalClimate()
    rng = np.random.default_rng(seed)
    return [SampleBucket(lab, climate.sample(lab, n_per_label, rng).astype(np.float32)) for lab in labels]


def synthetic_grid(width: int, height: int, start: datetime, n_days: int, base_year: int,
                   seed: int = 0, climate: DiurnalClimate | None = None,
                   origin=(-122.0, 37.0), extra_hours: int = 0) -> GridDataset:
    """Hourly grid whose full 8x8 blocks follow the per-label climate.

    Cells outside full blocks reuse the nearest block's parameters.
    """
    climate = climate or DiurnalClimate()
    rng = np.random.default_rng(seed)
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)
    t0 = datetime_to_hour(start)
    values = np.empty((n_days * HOURS_PER_DAY + extra_hours, height, width), dtype=np.float32)
    nbx = max(width // REGION_CELLS, 1)
    nby = max(height // REGION_CELLS, 1)
    n_total_days = n_days + (1 if extra_hours else 0)
    for d in range(n_total_days):
        date = hour_to_datetime(t0 + d * HOURS_PER_DAY)
        k = period_index(date.year, base_year)
        hours = slice(d * HOURS_PER_DAY, min((d + 1) * HOURS_PER_DAY, values.shape[0]))
        span = hours.stop - hours.start
        for by in range(nby):
            for bx in range(nbx):
                lab = ConditionLabel(date.month, bx + 1, by + 1, k)
                block = climate.sample(lab, 1, rng)[0]
                rows = slice(by * REGION_CELLS, height if by == nby - 1 else (by + 1) * REGION_CELLS)
                cols = slice(bx * REGION_CELLS, width if bx == nbx - 1 else (bx + 1) * REGION_CELLS)
                h, w = rows.stop - rows.start, cols.stop - cols.start
                tiled = np.pad(block, ((0, 0), (0, max(h - REGION_CELLS, 0)), (0, max(w - REGION_CELLS, 0))), mode="edge")
                values[hours, rows, cols] = tiled[:span, :h, :w]
    return GridDataset(origin[0], origin[1], CELL_SIZE_DEG, t0, values, meta={"base_year": base_year})
