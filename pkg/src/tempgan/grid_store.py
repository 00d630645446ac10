"""Gridded hourly temperature ingestion, region/day bucketing and binary I/O.

Grids are stored hour-major, then latitude rows from the south edge, then
longitude columns from the west edge, so ``values[t, row, col]`` is the
temperature at hour ``t`` of the cell ``col`` cells east and ``row`` cells
north of the south-west corner.
"""

from __future__ import annotations

import csv
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

logger = logging.getLogger(__name__)

REGION_CELLS = 8
HOURS_PER_DAY = 24
PERIOD_YEARS = 4
CELL_SIZE_DEG = 0.125
KELVIN_RANGE = (150.0, 350.0)
SAMPLE_SHAPE = (HOURS_PER_DAY, REGION_CELLS, REGION_CELLS)
LABEL_DIM = 15

GRID_MAGIC = b"TGRD"
BUCKET_MAGIC = b"TBKT"
FORMAT_VERSION = 1
_GRID_HEADER = struct.Struct("<4sHdddIIIQ")
_BUCKET_HEADER = struct.Struct(f"<4sH{LABEL_DIM}fI")

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class GridFormatError(ValueError):
    """Raised when a grid or bucket file is malformed."""


def hour_to_datetime(hour: int) -> datetime:
    return _EPOCH + timedelta(hours=int(hour))


def datetime_to_hour(dt: datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - _EPOCH
    hours, rem = divmod(delta.total_seconds(), 3600)
    if rem:
        raise ValueError(f"timestamp {dt.isoformat()} is not on an hour boundary")
    return int(hours)


@dataclass(frozen=True, order=True)
class RegionIndex:
    """1-based (x, y) block offset from the south-west corner."""

    x: int
    y: int

    def __post_init__(self):
        if self.x < 1 or self.y < 1:
            raise ValueError(f"region indices are 1-based, got ({self.x}, {self.y})")


def period_index(year: int, base_year: int) -> int:
    if year < base_year:
        raise ValueError(f"year {year} precedes base year {base_year}")
    return (year - base_year) // PERIOD_YEARS


def period_years(k: int, base_year: int) -> tuple:
    return base_year + PERIOD_YEARS * k, base_year + PERIOD_YEARS * k + PERIOD_YEARS - 1


@dataclass(frozen=True, order=True)
class ConditionLabel:
    """Month (1-12), region and 4-year period of a sample.

    The raw form is 15 numbers: a 12-way month one-hot, the region x and y,
    and the period index.
    """

    month: int
    x: int
    y: int
    k: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")
        if self.x < 1 or self.y < 1:
            raise ValueError(f"region indices are 1-based, got ({self.x}, {self.y})")
        if self.k < 0:
            raise ValueError(f"period index must be >= 0, got {self.k}")

    @property
    def region(self) -> RegionIndex:
        return RegionIndex(self.x, self.y)

    def raw(self) -> np.ndarray:
        vec = np.zeros(LABEL_DIM, dtype=np.float32)
        vec[self.month - 1] = 1.0
        vec[12:] = (self.x, self.y, self.k)
        return vec

    @classmethod
    def from_raw(cls, vec) -> "ConditionLabel":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != LABEL_DIM:
            raise ValueError(f"raw label must have {LABEL_DIM} entries, got {vec.size}")
        onehot = vec[:12]
        if not (np.all((onehot == 0) | (onehot == 1)) and onehot.sum() == 1):
            raise ValueError(f"month one-hot is invalid: {onehot.tolist()}")
        x, y, k = (int(round(v)) for v in vec[12:])
        return cls(int(np.argmax(onehot)) + 1, x, y, k)

    def as_dict(self) -> dict:
        return {"month": self.month, "x": self.x, "y": self.y, "k": self.k}


@dataclass
class GridDataset:
    origin_lon: float
    origin_lat: float
    cell_size: float
    start_time: int
    values: np.ndarray  # (n_hours, height, width) Kelvin
    mask: np.ndarray = None  # (height, width) True where no data
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"values must be (n_hours, height, width) with every dim >= 1, got {self.values.shape}")
        if self.mask is None:
            self.mask = np.zeros(self.values.shape[1:], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} != grid shape {self.values.shape[1:]}")
        if self.mask.any():
            self.values = np.where(self.mask[None], 0, self.values).astype(self.values.dtype)
        _check_temperatures(self.values, self.mask)

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        if not isinstance(other, GridDataset):
            return NotImplemented
        return (
            (self.origin_lon, self.origin_lat, self.cell_size, self.start_time)
            == (other.origin_lon, other.origin_lat, other.cell_size, other.start_time)
            and np.array_equal(self.mask, other.mask)
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )


def _check_temperatures(values: np.ndarray, mask: np.ndarray) -> None:
    lo, hi = KELVIN_RANGE
    bad = ~(np.isfinite(values) & (values >= lo) & (values <= hi)) & ~mask[None]
    if bad.any():
        t, r, c = np.argwhere(bad)[0]
        raise ValueError(
            f"out-of-range temperature {values[t, r, c]!r} K at hour {t}, row {r}, col {c} "
            f"(valid range {lo}-{hi} K)"
        )


@dataclass
class SampleBucket:
    label: ConditionLabel
    samples: np.ndarray  # (n, 24, 8, 8)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 4 or self.samples.shape[1:] != SAMPLE_SHAPE:
            raise ValueError(f"bucket samples must be (n, 24, 8, 8), got {self.samples.shape}")

    def __len__(self):
        return len(self.samples)


# -- ingestion / export ----------------------------------------------------------------

def export_grid(ds: GridDataset, path) -> None:
    header = _GRID_HEADER.pack(
        GRID_MAGIC, FORMAT_VERSION, float(ds.origin_lon), float(ds.origin_lat), float(ds.cell_size),
        ds.width, ds.height, ds.n_hours, int(ds.start_time),
    )
    bits = np.packbits(ds.mask.reshape(-1), bitorder="little").tobytes()
    payload = np.ascontiguousarray(ds.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + bits + payload)


def _read_grid_binary(path) -> GridDataset:
    buf = Path(path).read_bytes()
    if len(buf) < _GRID_HEADER.size:
        raise GridFormatError(f"{path}: malformed header (file too short)")
    magic, version, lon, lat, cell, width, height, n_hours, start = _GRID_HEADER.unpack_from(buf)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: malformed header (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise GridFormatError(f"{path}: malformed header (unsupported version {version})")
    if width < 1 or height < 1 or n_hours < 1:
        raise GridFormatError(f"{path}: malformed header (dims {width}x{height}x{n_hours})")
    n_cells = width * height
    mask_bytes = (n_cells + 7) // 8
    expected = _GRID_HEADER.size + mask_bytes + 4 * n_cells * n_hours
    if len(buf) != expected:
        raise GridFormatError(f"{path}: payload length mismatch ({len(buf)} bytes, expected {expected})")
    pos = _GRID_HEADER.size
    mask = np.unpackbits(np.frombuffer(buf, np.uint8, mask_bytes, pos), count=n_cells, bitorder="little")
    pos += mask_bytes
    values = np.frombuffer(buf, "<f4", n_cells * n_hours, pos).reshape(n_hours, height, width)
    return GridDataset(lon, lat, cell, start, values.astype(np.float32), mask.reshape(height, width).astype(bool))


def _read_grid_csv(path) -> GridDataset:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"time_iso8601", "lon", "lat", "kelvin"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise GridFormatError(f"{path}: malformed header, need columns {sorted(required)}")
        for rec in reader:
            t = datetime_to_hour(datetime.fromisoformat(rec["time_iso8601"].replace("Z", "+00:00")))
            rows.append((t, float(rec["lon"]), float(rec["lat"]), float(rec["kelvin"])))
    if not rows:
        raise GridFormatError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    times, lons, lats = arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2]
    ulon, ulat = np.unique(lons), np.unique(lats)
    steps = np.concatenate([np.diff(ulon), np.diff(ulat)])
    cell = float(steps.min()) if steps.size else CELL_SIZE_DEG
    t0 = int(times.min())
    n_hours = int(times.max()) - t0 + 1
    width = int(round((ulon.max() - ulon.min()) / cell)) + 1
    height = int(round((ulat.max() - ulat.min()) / cell)) + 1
    cols = np.rint((lons - ulon.min()) / cell).astype(int)
    rws = np.rint((lats - ulat.min()) / cell).astype(int)
    values = np.zeros((n_hours, height, width), dtype=np.float32)
    seen = np.zeros((n_hours, height, width), dtype=bool)
    values[times - t0, rws, cols] = arr[:, 3]
    seen[times - t0, rws, cols] = True
    covered = seen.any(axis=0)
    partial = covered & ~seen.all(axis=0)
    if partial.any():
        r, c = np.argwhere(partial)[0]
        raise GridFormatError(f"{path}: incomplete record for cell row {r}, col {c}")
    return GridDataset(float(ulon.min()), float(ulat.min()), cell, t0, values, ~covered)


def ingest_grid(path, format: str = "binary") -> GridDataset:
    if format == "binary":
        return _read_grid_binary(path)
    if format == "csv":
        return _read_grid_csv(path)
    raise ValueError(f"unknown grid format {format!r}; use 'binary' or 'csv'")


def export_bucket(bucket: SampleBucket, path) -> None:
    header = _BUCKET_HEADER.pack(BUCKET_MAGIC, FORMAT_VERSION, *bucket.label.raw(), len(bucket))
    Path(path).write_bytes(header + np.ascontiguousarray(bucket.samples, dtype="<f4").tobytes())


def export_buckets(buckets, directory) -> list:
    """Write one ``.tbkt`` file per bucket; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for b in buckets:
        lab = b.label
        p = directory / f"bucket_x{lab.x}_y{lab.y}_k{lab.k}_m{lab.month:02d}.tbkt"
        export_bucket(b, p)
        paths.append(p)
    return paths


def ingest_bucket(path) -> SampleBucket:
    buf = Path(path).read_bytes()
    if len(buf) < _BUCKET_HEADER.size:
        raise GridFormatError(f"{path}: malformed header (file too short)")
    magic, version, *raw, count = _BUCKET_HEADER.unpack_from(buf)
    if magic != BUCKET_MAGIC:
        raise GridFormatError(f"{path}: malformed header (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise GridFormatError(f"{path}: malformed header (unsupported version {version})")
    per = int(np.prod(SAMPLE_SHAPE))
    expected = _BUCKET_HEADER.size + 4 * per * count
    if len(buf) != expected:
        raise GridFormatError(f"{path}: payload length mismatch ({len(buf)} bytes, expected {expected})")
    samples = np.frombuffer(buf, "<f4", per * count, _BUCKET_HEADER.size).reshape((count,) + SAMPLE_SHAPE)
    return SampleBucket(ConditionLabel.from_raw(raw), samples.astype(np.float32))


def ingest_buckets(paths) -> list:
    """Load buckets from files and/or directories of ``.tbkt`` files."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.tbkt")) if p.is_dir() else [p])
    return [ingest_bucket(f) for f in files]


# -- aggregation -------------------------------------------------------------------------

def aggregate_spatial(ds: GridDataset) -> dict:
    """Split the grid into 8x8-cell regions anchored at the south-west corner.

    Partial blocks along the east and north edges are dropped, as are blocks
    containing any masked cell.  Returns ``{RegionIndex: (n_hours, 8, 8)}``.
    """
    if not np.isclose(ds.cell_size, CELL_SIZE_DEG):
        raise ValueError(f"cell size must be {CELL_SIZE_DEG} deg, got {ds.cell_size}")
    if ds.width < REGION_CELLS or ds.height < REGION_CELLS:
        raise ValueError(f"grid {ds.width}x{ds.height} is smaller than one {REGION_CELLS}x{REGION_CELLS} region")
    regions = {}
    for yi in range(ds.height // REGION_CELLS):
        for xi in range(ds.width // REGION_CELLS):
            rows = slice(yi * REGION_CELLS, (yi + 1) * REGION_CELLS)
            cols = slice(xi * REGION_CELLS, (xi + 1) * REGION_CELLS)
            if ds.mask[rows, cols].any():
                logger.info("region (%d, %d) has masked cells; excluded", xi + 1, yi + 1)
                continue
            regions[RegionIndex(xi + 1, yi + 1)] = ds.values[:, rows, cols]
    return regions


def aggregate_temporal(regions: dict, start_time: int, base_year: int) -> list:
    """Cut each region stream into UTC days and bucket by (region, month, period)."""
    if start_time % HOURS_PER_DAY:
        raise ValueError(f"stream start hour {start_time} is not at UTC midnight")
    groups = defaultdict(list)
    dropped = 0
    for region, stream in sorted(regions.items()):
        n_days, rem = divmod(stream.shape[0], HOURS_PER_DAY)
        dropped = max(dropped, rem)
        days = stream[: n_days * HOURS_PER_DAY].reshape((n_days,) + SAMPLE_SHAPE)
        first_day = start_time // HOURS_PER_DAY
        for d in range(n_days):
            date = hour_to_datetime((first_day + d) * HOURS_PER_DAY)
            label = ConditionLabel(date.month, region.x, region.y, period_index(date.year, base_year))
            groups[label].append(days[d])
    if dropped:
        logger.warning("dropped %d trailing hours forming a partial day", dropped)
    return [SampleBucket(label, np.stack(groups[label])) for label in sorted(groups, key=lambda l: (l.x, l.y, l.k, l.month))]


def aggregate(ds: GridDataset, base_year: int) -> list:
    return aggregate_temporal(aggregate_spatial(ds), ds.start_time, base_year)


# -- standardization -------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationStats:
    mean: float
    std: float
    convention: str = "population"

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "convention": self.convention}


def _stack(buckets) -> np.ndarray:
    if isinstance(buckets, np.ndarray):
        return buckets
    buckets = list(buckets)
    if not buckets:
        raise ValueError("no buckets given")
    return np.concatenate([np.asarray(b.samples, dtype=np.float64).reshape(-1) for b in buckets])


class Standardizer(TransformerMixin, BaseEstimator):
    """Global z-scoring of temperatures with a population standard deviation.

    Accepts arrays or lists of :class:`SampleBucket`; bucket inputs come back
    as buckets with the same labels.
    """

    def fit(self, X, y=None):
        vals = _stack(X).astype(np.float64)
        if vals.size == 0:
            raise ValueError("no values to standardize")
        mean = float(vals.mean())
        std = float(vals.std())
        if not std > 0:
            raise ValueError("degenerate dataset: zero standard deviation")
        self.mean_, self.std_ = mean, std
        return self

    @property
    def stats_(self) -> StandardizationStats:
        check_is_fitted(self, "mean_")
        return StandardizationStats(self.mean_, self.std_)

    @classmethod
    def from_stats(cls, stats: StandardizationStats) -> "Standardizer":
        obj = cls()
        obj.mean_, obj.std_ = float(stats.mean), float(stats.std)
        return obj

    def _apply(self, X, fn):
        check_is_fitted(self, "mean_")
        if isinstance(X, np.ndarray):
            return fn(X.astype(np.float64))
        return [SampleBucket(b.label, fn(np.asarray(b.samples, dtype=np.float64))) for b in X]

    def transform(self, X):
        return self._apply(X, lambda a: (a - self.mean_) / self.std_)

    def inverse_transform(self, X):
        return self._apply(X, lambda a: a * self.std_ + self.mean_)


def standardize(buckets, stats: StandardizationStats | None = None):
    """Return ``(standardized buckets, stats)``; fits the stats when not given."""
    buckets = list(buckets)
    if not buckets:
        raise ValueError("no buckets given")
    scaler = Standardizer.from_stats(stats) if stats is not None else Standardizer().fit(buckets)
    return scaler.transform(buckets), scaler.stats_


def destandardize(buckets, stats: StandardizationStats):
    return Standardizer.from_stats(stats).inverse_transform(list(buckets))
