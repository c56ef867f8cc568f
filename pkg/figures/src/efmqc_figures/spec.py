"""Figure-spec files and run-CSV loading.

A figure spec is a flat ``key = value`` text file; the ``input`` key may
repeat (one line per CSV, ``path ; label``).  Example::

    kind = populations
    input = runs/shxf.csv ; SHXF
    input = runs/exact.csv ; exact
    states = 0,1,2
    t_min = 0
    t_max = 30
    out = populations.png
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("populations", "surfaces", "rho_dot", "consistency")


class ValidationError(ValueError):
    """A figure spec or input file violates the interface contract."""


@dataclass
class RunTable:
    """One parsed CSV: commented header metadata plus named columns."""

    path: Path
    label: str
    header: dict
    columns: list
    data: np.ndarray

    @property
    def n_states(self):
        return sum(1 for c in self.columns if c.startswith("pop_el_"))

    def col(self, name):
        if name not in self.columns:
            raise ValidationError(f"{self.path}: no column {name!r}")
        return self.data[:, self.columns.index(name)]

    @property
    def au_per_fs(self):
        try:
            return float(self.header["au_per_fs"])
        except KeyError:
            raise ValidationError(
                f"{self.path}: header lacks 'au_per_fs'; not a run CSV?"
            ) from None

    @property
    def method(self):
        return self.header.get("method", "")


def load_table(path, label=None):
    path = Path(path)
    header = {}
    columns = None
    try:
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    columns = [c.strip() for c in line.strip().split(",")]
                    break
                key, sep, val = line[1:].partition("=")
                if sep:
                    header[key.strip()] = val.strip()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not columns:
        raise ValidationError(f"{path}: no column-name row found")
    data = np.loadtxt(path, delimiter=",", skiprows=len(header) + 1, ndmin=2)
    if data.shape[1] != len(columns):
        raise ValidationError(
            f"{path}: {data.shape[1]} data columns for {len(columns)} names")
    return RunTable(path=path, label=label or path.stem, header=header,
                    columns=columns, data=data)


def check_same_schema(tables):
    """All inputs must share schema version and column list; report diffs."""
    ref = tables[0]
    for t in tables[1:]:
        if t.header.get("schema") != ref.header.get("schema") or \
                t.columns != ref.columns:
            missing = [c for c in ref.columns if c not in t.columns]
            extra = [c for c in t.columns if c not in ref.columns]
            raise ValidationError(
                f"schema mismatch between {ref.path} "
                f"(schema {ref.header.get('schema')!r}) and {t.path} "
                f"(schema {t.header.get('schema')!r}): "
                f"missing columns {missing}, unexpected columns {extra}")


@dataclass
class FigureSpec:
    kind: str
    inputs: list                      # (path, label) pairs
    out: Path
    states: list = None               # None = all available
    t_min: float = None
    t_max: float = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(
                f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.inputs:
            raise ValidationError("at least one input CSV is required")
        if self.kind == "consistency" and len(self.inputs) != 1:
            raise ValidationError("consistency figures take exactly one input")

    @classmethod
    def from_file(cls, path):
        values = {"input": []}
        for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key == "input":
                csv_path, _, label = val.partition(";")
                values["input"].append((csv_path.strip(), label.strip() or None))
            elif key in ("kind", "out", "states", "t_min", "t_max"):
                values[key] = val
            else:
                raise ValidationError(f"{path}:{ln}: unknown key {key!r}")
        for required in ("kind", "out"):
            if required not in values:
                raise ValidationError(f"{path}: missing required key {required!r}")
        states = None
        if values.get("states"):
            states = [int(s) for s in values["states"].split(",")]
        return cls(kind=values["kind"], inputs=values["input"],
                   out=Path(values["out"]), states=states,
                   t_min=float(values["t_min"]) if "t_min" in values else None,
                   t_max=float(values["t_max"]) if "t_max" in values else None)

    def window(self, t):
        lo = -np.inf if self.t_min is None else self.t_min
        hi = np.inf if self.t_max is None else self.t_max
        mask = (t >= lo) & (t <= hi)
        if not np.any(mask):
            raise ValidationError(
                f"time window [{self.t_min}, {self.t_max}] fs selects no rows "
                f"(data spans [{t.min():g}, {t.max():g}] fs)")
        return mask
