"""Count-table ingestion and the column transforms applied before fitting."""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.utils.errors import DataParseError, InvalidParameterError, SelectionError, ShapeError

logger = logging.getLogger(__name__)

QUARTILE_LEVELS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Dataset:
    """n x p nonnegative count matrix with column names and the pipeline that produced it."""

    values: np.ndarray
    variable_names: Tuple[str, ...]
    provenance: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ShapeError(f"expected an n x p matrix, got shape {values.shape}")
        if len(self.variable_names) != values.shape[1]:
            raise ShapeError(f"{len(self.variable_names)} names for {values.shape[1]} columns")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DataParseError("counts must be finite and nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @classmethod
    def from_array(cls, values, names: Optional[Sequence[str]] = None, source: str = "array") -> "Dataset":
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            names = [f"y{j + 1}" for j in range(values.shape[1])]
        return cls(values=values, variable_names=tuple(names), provenance=(source,))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def zero_fractions(self) -> np.ndarray:
        return np.mean(self.values == 0, axis=0)

    @property
    def is_integral(self) -> bool:
        return bool(np.all(self.values == np.rint(self.values)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.variable_names))


def load_counts_csv(path: Union[str, Path], allow_fractional: bool = False) -> Dataset:
    """Read a header-plus-rows count table; bad cells are reported by data row and column."""
    path = Path(path)
    if not path.is_file():
        raise DataParseError(f"count table {path} does not exist")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataParseError(f"count table {path} is empty") from exc
    if frame.empty:
        raise DataParseError(f"count table {path} has a header but no rows")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    for column in frame.columns:
        bad = numeric[column].isna() | ~np.isfinite(numeric[column].fillna(0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataParseError(f"non-numeric entry {frame[column].iloc[row]!r}", row + 1, column)
        negative = numeric[column] < 0
        if negative.any():
            row = int(np.flatnonzero(negative.to_numpy())[0])
            raise DataParseError(f"negative count {numeric[column].iloc[row]}", row + 1, column)
        fractional = numeric[column] != np.rint(numeric[column])
        if fractional.any() and not allow_fractional:
            row = int(np.flatnonzero(fractional.to_numpy())[0])
            raise DataParseError(f"non-integer count {numeric[column].iloc[row]}", row + 1, column)

    values = numeric.to_numpy(dtype=float)
    if not allow_fractional:
        values = values.astype(np.int64)
    logger.info("loaded %s: %d rows x %d columns", path, *values.shape)
    return Dataset(values=values, variable_names=tuple(str(c) for c in frame.columns),
                   provenance=(f"csv:{path}",))


def rescale_power(data: Dataset, exponent: float) -> Dataset:
    """Replace every entry by round(entry ** exponent)."""
    if not 0 < exponent <= 1:
        raise InvalidParameterError(f"rescale exponent must lie in (0, 1], got {exponent}")
    values = np.rint(np.power(data.values.astype(float), exponent)).astype(np.int64)
    return replace(data, values=values, provenance=data.provenance + (f"power:{exponent:g}+round",))


def select_by_zero_proportion(data: Dataset, targets: Optional[Sequence[float]], p_out: int) -> Dataset:
    """Greedily pick, per target, the unused nonconstant column with the closest zero fraction.

    Ties go to the earlier column. Without targets the first ``p_out`` nonconstant
    columns are kept.
    """
    if p_out < 1 or p_out > data.p:
        raise SelectionError(f"cannot select {p_out} of {data.p} columns")
    values = data.values
    eligible = np.flatnonzero(np.any(values != values[:1], axis=0))
    if eligible.size < p_out:
        raise SelectionError(f"only {eligible.size} nonconstant columns, {p_out} requested")

    if targets is None:
        chosen = list(eligible[:p_out])
    else:
        targets = list(targets)
        if len(targets) == 1:
            targets = targets * p_out
        if len(targets) != p_out:
            raise ShapeError(f"{len(targets)} zero targets for {p_out} columns")
        fractions = data.zero_fractions
        available = list(eligible)
        chosen = []
        for target in targets:
            gaps = np.abs(fractions[available] - target)
            chosen.append(available.pop(int(np.argmin(gaps))))

    names = tuple(data.variable_names[j] for j in chosen)
    step = "select:" + ",".join(names)
    return Dataset(values=values[:, chosen], variable_names=names, provenance=data.provenance + (step,))


def zero_proportion_quantiles(data: Dataset, levels: Sequence[float] = QUARTILE_LEVELS) -> np.ndarray:
    return np.quantile(data.zero_fractions, levels)
