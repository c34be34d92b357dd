"""Price ingestion, mean-corrected returns, summary statistics and rolling skewness."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .errors import DataError, DomainError
from .model import Dataset

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PriceSeries:
    """Daily closing prices with strictly increasing dates."""

    dates: np.ndarray
    close: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        close = np.asarray(self.close, dtype=float)
        if dates.shape != close.shape or close.ndim != 1:
            raise DataError("dates and close must be 1-D and of equal length")
        if close.size < 3:
            raise DataError("a price series needs at least 3 rows")
        bad = np.flatnonzero(~np.isfinite(close) | (close <= 0.0))
        if bad.size:
            raise DataError(f"non-positive or missing close at row {int(bad[0])}")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "close", close)

    def __len__(self) -> int:
        return self.close.size

    def window(self, start=None, end=None) -> "PriceSeries":
        """Rows with ``start <= date <= end`` (either bound may be omitted)."""
        keep = np.ones(len(self), dtype=bool)
        if start is not None:
            keep &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            keep &= self.dates <= np.datetime64(end, "D")
        return PriceSeries(self.dates[keep], self.close[keep])


def read_prices(path: PathLike) -> PriceSeries:
    """Read a CSV with a header and ``date`` and ``close`` columns.

    Column names are matched case-insensitively; other columns are ignored.
    Rows are sorted by date. Blank closes are rejected.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = {c.strip().lower(): c for c in df.columns}
    if "date" not in cols or "close" not in cols:
        raise DataError(f"{path}: expected columns 'date' and 'close', found {list(df.columns)}")
    raw_close = df[cols["close"]].str.strip()
    blank = np.flatnonzero((raw_close == "").to_numpy() | raw_close.str.lower().isin(["na", "nan", "null"]).to_numpy())
    if blank.size:
        raise DataError(f"{path}: missing close at data row {int(blank[0]) + 1}")
    try:
        close = raw_close.astype(float).to_numpy()
        dates = pd.to_datetime(df[cols["date"]].str.strip(), format="ISO8601").to_numpy()
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    order = np.argsort(dates, kind="stable")
    return PriceSeries(dates[order].astype("datetime64[D]"), close[order])


def compute_returns(prices: PriceSeries) -> Dataset:
    """Mean-corrected compounded percentage returns.

    ``y_t = 100 (r_t - mean(r))`` with ``r_t = log P_t - log P_{t-1}``.
    """
    r = np.diff(np.log(prices.close))
    y = 100.0 * (r - math.fsum(r) / r.size)
    return Dataset(y)


@dataclass(frozen=True)
class SummaryStats:
    T: int
    mean: float
    sd: float
    min: float
    max: float
    skewness: float
    kurtosis: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _central_moments(y: np.ndarray):
    d = y - y.mean()
    return np.mean(d**2), np.mean(d**3), np.mean(d**4)


def summary_stats(data) -> SummaryStats:
    """T, mean, SD (ddof=1), min, max, skewness and (non-excess) kurtosis.

    Skewness and kurtosis use population moments ``m3 / m2^1.5`` and
    ``m4 / m2^2``.
    """
    y = np.asarray(getattr(data, "y", data), dtype=float)
    if y.size < 4:
        raise DomainError("summary statistics need at least 4 observations")
    m2, m3, m4 = _central_moments(y)
    if m2 == 0.0:
        raise DataError("series has zero variance")
    return SummaryStats(
        T=int(y.size),
        mean=float(y.mean()),
        sd=float(np.std(y, ddof=1)),
        min=float(y.min()),
        max=float(y.max()),
        skewness=float(m3 / m2**1.5),
        kurtosis=float(m4 / m2**2),
    )


def rolling_skewness(data, window: int = 200) -> np.ndarray:
    """Sample skewness over trailing windows; the first ``window - 1`` entries are NaN.

    A zero-variance window also yields NaN.
    """
    y = np.asarray(getattr(data, "y", data), dtype=float)
    if window < 4 or window > y.size:
        raise DomainError(f"window must lie in [4, {y.size}], got {window}")
    out = np.full(y.size, np.nan)
    view = np.lib.stride_tricks.sliding_window_view(y, window)
    d = view - view.mean(axis=1, keepdims=True)
    m2 = np.mean(d**2, axis=1)
    m3 = np.mean(d**3, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sk = np.where(m2 > 0.0, m3 / np.where(m2 > 0.0, m2, 1.0) ** 1.5, np.nan)
    out[window - 1 :] = sk
    return out


def write_returns(data: Dataset, path: PathLike) -> None:
    pd.DataFrame({"t": np.arange(1, data.T + 1), "y": data.y}).to_csv(
        path, index=False, float_format="%.10g"
    )


def read_returns(path: PathLike) -> Dataset:
    """Read a ``t,y`` CSV (only the ``y`` column is used)."""
    df = pd.read_csv(path)
    if "y" not in df.columns:
        raise DataError(f"{path}: expected a 'y' column")
    return Dataset(df["y"].to_numpy(dtype=float))


def write_stats(stats: SummaryStats, path: PathLike, name: str = "series") -> None:
    with open(path, "w") as fh:
        json.dump({"name": name, **stats.to_dict()}, fh, indent=2)
