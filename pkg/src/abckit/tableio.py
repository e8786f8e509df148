"""Reading and writing of the text tables exchanged by the pipeline.

Three kinds of files are handled:

* simulation tables: a whitespace-separated header naming every column,
  followed by one row of finite reals per simulation.  Parameter columns
  are selected by a 1-based range expression such as ``"1-2"``.
* observed-statistics files: a header line plus one or more value lines,
  one observed data set per value line.
* tagged output files: every result file is written as
  ``<prefix>_model<m>_<tag>_Obs<k>.txt`` with parts omitted where they do
  not apply (validation files that span observations drop the ``Obs``
  suffix, model-spanning files drop the ``model`` part).

Values are written with 6 significant digits, using scientific notation
outside ``[1e-4, 1e6)``.  Reading accepts any run of spaces/tabs as a
separator; writing uses single tabs.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TableFormatError

log = logging.getLogger(__name__)

__all__ = [
    "SimulationTable",
    "ObservedStats",
    "OutputTag",
    "read_table",
    "read_observed",
    "write_observed",
    "write_tagged",
    "write_table",
    "parse_param_spec",
    "format_value",
]


def format_value(x) -> str:
    """Format a number with 6 significant digits.

    Scientific notation is used when ``|x| < 1e-4`` or ``|x| >= 1e6``
    (zero is printed as ``0``).
    """
    if isinstance(x, str):
        return x
    x = float(x)
    if x == 0:
        return "0"
    if not np.isfinite(x):
        return repr(x)
    ax = abs(x)
    if ax < 1e-4 or ax >= 1e6:
        return f"{x:.5e}"
    s = f"{x:.6g}"
    return s


def parse_param_spec(spec: str) -> tuple[int, ...]:
    """Parse a 1-based column-range expression like ``"1-2"`` or ``"1,3-4"``.

    Returns 0-based column indices.
    """
    spec = spec.strip()
    if not spec:
        raise TableFormatError("empty parameter column specification")
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo < 1 or hi < lo:
                raise TableFormatError(f"bad column range '{part}'")
            out.extend(range(lo - 1, hi))
            continue
        if not part.isdigit() or int(part) < 1:
            raise TableFormatError(f"bad column index '{part}'")
        out.append(int(part) - 1)
    seen = set()
    uniq = [i for i in out if not (i in seen or seen.add(i))]
    return tuple(uniq)


@dataclass
class SimulationTable:
    """A table of simulations: one row per run, named columns.

    ``param_idx`` and ``stat_idx`` partition the columns used by the
    pipeline; any remaining columns are carried along but ignored.
    The value matrix is locked read-only after construction, so tables can
    be shared freely.
    """

    names: tuple[str, ...]
    values: np.ndarray
    param_idx: tuple[int, ...]
    stat_idx: tuple[int, ...]
    dropped_rows: int = 0

    def __post_init__(self):
        self.names = tuple(self.names)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            vals = vals.reshape(-1, len(self.names))
        if vals.shape[1] != len(self.names):
            raise TableFormatError(
                f"{len(self.names)} column names but rows of arity {vals.shape[1]}"
            )
        if len(set(self.names)) != len(self.names):
            dup = sorted({n for n in self.names if self.names.count(n) > 1})
            raise TableFormatError(f"duplicate column names: {', '.join(dup)}")
        if vals.size and not np.isfinite(vals).all():
            raise TableFormatError("table contains non-finite values")
        self.param_idx = tuple(self.param_idx)
        self.stat_idx = tuple(self.stat_idx)
        if set(self.param_idx) & set(self.stat_idx):
            raise TableFormatError("a column cannot be both parameter and statistic")
        for i in self.param_idx + self.stat_idx:
            if not 0 <= i < len(self.names):
                raise TableFormatError(f"column index {i + 1} out of range")
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        self.values = vals

    # -- basic accessors -------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.param_idx)

    @property
    def stat_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.stat_idx)

    @property
    def params(self) -> np.ndarray:
        return self.values[:, list(self.param_idx)]

    @property
    def stats(self) -> np.ndarray:
        return self.values[:, list(self.stat_idx)]

    def stat_matrix(self, names: Sequence[str]) -> np.ndarray:
        """Statistic columns in the order of ``names`` (exact-name match)."""
        lookup = {self.names[i]: i for i in self.stat_idx}
        missing = [n for n in names if n not in lookup]
        if missing:
            raise TableFormatError(f"statistics not in table: {', '.join(missing)}")
        return self.values[:, [lookup[n] for n in names]]

    # -- derived tables --------------------------------------------------

    def take_rows(self, idx) -> "SimulationTable":
        return SimulationTable(self.names, self.values[np.asarray(idx)],
                               self.param_idx, self.stat_idx)

    def drop_row(self, i: int) -> "SimulationTable":
        keep = np.ones(self.n_rows, dtype=bool)
        keep[i] = False
        return self.take_rows(np.nonzero(keep)[0])

    def with_stats(self, names: Sequence[str]) -> "SimulationTable":
        """Restrict the statistic set to ``names`` (params kept as-is)."""
        cols = list(self.param_idx)
        lookup = {self.names[i]: i for i in self.stat_idx}
        missing = [n for n in names if n not in lookup]
        if missing:
            raise TableFormatError(f"statistics not in table: {', '.join(missing)}")
        cols += [lookup[n] for n in names]
        new_names = tuple(self.names[i] for i in cols)
        p = len(self.param_idx)
        return SimulationTable(new_names, self.values[:, cols],
                               tuple(range(p)), tuple(range(p, len(cols))))


@dataclass
class ObservedStats:
    """Named vector of observed summary statistics."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.names) != self.values.size:
            raise TableFormatError(
                f"{len(self.names)} names but {self.values.size} values"
            )
        if len(set(self.names)) != len(self.names):
            raise TableFormatError("duplicate statistic names in observation")
        self.values.flags.writeable = False

    def vector(self, names: Sequence[str]) -> np.ndarray:
        lookup = dict(zip(self.names, self.values))
        missing = [n for n in names if n not in lookup]
        if missing:
            raise TableFormatError(f"observed statistics missing: {', '.join(missing)}")
        return np.array([lookup[n] for n in names])


class OutputTag(enum.Enum):
    """Tags naming each kind of result file; the tag string appears
    verbatim in the emitted filename."""

    BEST_SIMS = "BestSimsParamStats"
    MARGINAL_DENSITIES = "MarginalPosteriorDensities"
    MARGINAL_CHARACTERISTICS = "MarginalPosteriorCharacteristics"
    JOINT_POSTERIOR = "jointPosterior"
    MODEL_FIT = "modelFit"
    RANDOM_VALIDATION = "RandomValidation"
    RETAINED_VALIDATION = "RetainedValidation"
    MODEL_CHOICE_VALIDATION = "modelChoiceValidation"
    CONFUSION_MATRIX = "confusionMatrix"
    GREEDY_SEARCH = "searchStatsgreedySearch"


# tags whose files span observations (no Obs suffix)
_NO_OBS_TAGS = {
    OutputTag.RANDOM_VALIDATION,
    OutputTag.MODEL_CHOICE_VALIDATION,
    OutputTag.CONFUSION_MATRIX,
    OutputTag.GREEDY_SEARCH,
}
# tags whose files span models (no model part)
_NO_MODEL_TAGS = {
    OutputTag.MODEL_FIT,
    OutputTag.MODEL_CHOICE_VALIDATION,
    OutputTag.CONFUSION_MATRIX,
    OutputTag.GREEDY_SEARCH,
}


def tagged_filename(prefix: str, tag: OutputTag, model_index=None, obs_index=None,
                    joint_params: Sequence[int] | None = None) -> str:
    parts = [prefix]
    if tag not in _NO_MODEL_TAGS and model_index is not None:
        parts.append(f"model{model_index}")
    parts.append(tag.value)
    if joint_params:
        parts.extend(str(i) for i in joint_params)
    if tag not in _NO_OBS_TAGS and obs_index is not None:
        parts.append(f"Obs{obs_index}")
    return "_".join(parts) + ".txt"


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(format_value(v) for v in row) + "\n")


def write_tagged(prefix: str, tag: OutputTag, payload, model_index=None,
                 obs_index=None, joint_params=None, directory=".") -> Path:
    """Write a result table to its conventional filename and return the path.

    ``payload`` is either a :class:`SimulationTable` or a ``(header, rows)``
    pair, where rows may mix strings (labels) and numbers.
    """
    name = tagged_filename(prefix, tag, model_index, obs_index, joint_params)
    path = Path(directory) / name
    if isinstance(payload, SimulationTable):
        if payload.n_rows == 0:
            raise TableFormatError("refusing to write an empty table", path=path)
        _write_rows(path, payload.names, payload.values)
    else:
        header, rows = payload
        if not rows:
            raise TableFormatError("refusing to write an empty table", path=path)
        _write_rows(path, header, rows)
    return path


def write_table(path, table: SimulationTable) -> Path:
    """Write a simulation table (header + rows) to ``path``."""
    path = Path(path)
    _write_rows(path, table.names, table.values)
    return path


def _split_nonempty_lines(text: str):
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield i, line.split()


def read_table(path, param_spec: str | Sequence[int] = (), max_rows=None) -> SimulationTable:
    """Read a simulation table.

    ``param_spec`` is a 1-based column-range expression (or an iterable of
    0-based indices); all remaining columns are treated as statistics until
    matched against an observation.  Rows containing non-finite values are
    rejected with a counted warning.  ``max_rows`` caps the number of rows
    read.
    """
    path = Path(path)
    text = path.read_text()
    lines = list(_split_nonempty_lines(text))
    if not lines:
        raise TableFormatError("empty file", path=path)
    _, header = lines[0]
    ncol = len(header)
    if isinstance(param_spec, str):
        pidx = parse_param_spec(param_spec) if param_spec else ()
    else:
        pidx = tuple(param_spec)
    for i in pidx:
        if i >= ncol:
            raise TableFormatError(
                f"parameter column {i + 1} beyond the {ncol} available", path=path)

    rows = []
    dropped = 0
    for lineno, fields in lines[1:]:
        if max_rows is not None and len(rows) >= max_rows:
            break
        if len(fields) != ncol:
            raise TableFormatError(
                f"row has {len(fields)} fields, expected {ncol}",
                path=path, line=lineno)
        try:
            row = np.array([float(v) for v in fields])
        except ValueError as exc:
            raise TableFormatError(f"non-numeric value ({exc})",
                                   path=path, line=lineno) from None
        if not np.isfinite(row).all():
            dropped += 1
            continue
        rows.append(row)
    if dropped:
        log.warning("%s: dropped %d row(s) with non-finite statistics", path, dropped)
    values = np.array(rows) if rows else np.empty((0, ncol))
    sidx = tuple(i for i in range(ncol) if i not in pidx)
    return SimulationTable(tuple(header), values, pidx, sidx, dropped_rows=dropped)


def read_observed(path) -> list[ObservedStats]:
    """Read an observed-statistics file: header plus one or more value lines.

    Each value line becomes one observed data set (output files are then
    suffixed ``Obs0``, ``Obs1``, ...).
    """
    path = Path(path)
    lines = list(_split_nonempty_lines(path.read_text()))
    if len(lines) < 2:
        raise TableFormatError("need a header line and at least one value line",
                               path=path)
    _, names = lines[0]
    out = []
    for lineno, fields in lines[1:]:
        if len(fields) != len(names):
            raise TableFormatError(
                f"{len(names)} statistic names but {len(fields)} values",
                path=path, line=lineno)
        try:
            values = [float(v) for v in fields]
        except ValueError as exc:
            raise TableFormatError(f"non-numeric value ({exc})",
                                   path=path, line=lineno) from None
        out.append(ObservedStats(tuple(names), np.array(values)))
    return out


def write_observed(path, obs: ObservedStats) -> Path:
    path = Path(path)
    _write_rows(path, obs.names, [obs.values])
    return path
