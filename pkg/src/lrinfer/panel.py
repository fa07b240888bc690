"""Observed panels, group index sets, CSV ingestion and heterogeneity weights.

Missing cells are always stored as ``Y = 0`` together with ``X = 0``; NaN is
accepted only while reading files.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

X_BOUND = 1e6
P_FLOOR = 1e-8

_MISSING = {"", "nan", "NaN", "NAN", "na", "NA"}


class Mode(str, enum.Enum):
    GENERAL = "general-regressor"
    BINARY = "binary-mask"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        aliases = {"general": cls.GENERAL, "binary": cls.BINARY, "mask": cls.BINARY}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown panel mode {value!r}") from None


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ObservedPanel:
    """Outcome ``Y`` and regressor ``X`` (both N x T) with ``Y = X o M + E``.

    In binary-mask mode ``X`` is the 0/1 observation indicator and ``Y`` is
    zero wherever ``X`` is zero.
    """

    Y: np.ndarray
    X: np.ndarray
    mode: Mode = Mode.GENERAL
    x_bound: float = X_BOUND

    def __post_init__(self):
        Y, X = _frozen(self.Y), _frozen(self.X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if Y.ndim != 2 or X.ndim != 2:
            raise ValidationError("Y and X must be 2-d matrices")
        if Y.shape != X.shape:
            raise ValidationError(f"shape mismatch: Y is {Y.shape}, X is {X.shape}")
        if Y.shape[0] < 2 or Y.shape[1] < 2:
            raise ValidationError(f"panel must be at least 2x2, got {Y.shape}")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise ValidationError("panel contains non-finite entries")
        if np.abs(X).max() > self.x_bound:
            raise ValidationError(f"max |X| = {np.abs(X).max():g} exceeds bound {self.x_bound:g}")
        if self.mode is Mode.BINARY:
            if not np.all((X == 0) | (X == 1)):
                raise ValidationError("binary-mask mode requires X entries in {0, 1}")
            bad = np.argwhere((X == 0) & (Y != 0))
            if bad.size:
                i, t = bad[0]
                raise ValidationError(
                    f"Y is non-zero at unobserved cell (row {i + 1}, col {t + 1})"
                )

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    @property
    def is_binary(self) -> bool:
        return self.mode is Mode.BINARY


class GroupKind(str, enum.Enum):
    BLOCK = "block"
    SERIAL = "serial"
    CROSS_SECTIONAL = "cross-sectional"

    @classmethod
    def parse(cls, value) -> "GroupKind":
        if isinstance(value, cls):
            return value
        if value in ("cs", "cross", "crosssectional", "cross_sectional"):
            return cls.CROSS_SECTIONAL
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown group kind {value!r}") from None


def _index_tuple(idx, n: int, what: str) -> tuple[int, ...]:
    out = tuple(int(i) for i in idx)
    if not out:
        raise ValidationError(f"group {what} must be non-empty")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValidationError(f"group {what} must be strictly increasing without duplicates")
    if out[0] < 0 or out[-1] >= n:
        raise ValidationError(f"group {what} out of range for dimension {n}")
    return out


@dataclass(frozen=True)
class GroupSpec:
    """Index set ``G = I x T`` (0-based) over a panel of the given shape."""

    kind: GroupKind
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    shape: tuple[int, int]

    def __post_init__(self):
        kind = GroupKind.parse(self.kind)
        N, T = (int(v) for v in self.shape)
        rows = _index_tuple(self.rows, N, "rows")
        cols = _index_tuple(self.cols, T, "cols")
        full_rows, full_cols = len(rows) == N, len(cols) == T
        if kind is GroupKind.BLOCK and (full_rows or full_cols):
            raise ValidationError("block group needs proper subsets of both rows and cols")
        if kind is GroupKind.SERIAL and (full_rows or not full_cols):
            raise ValidationError("serial group needs a proper row subset and all cols")
        if kind is GroupKind.CROSS_SECTIONAL and (full_cols or not full_rows):
            raise ValidationError("cross-sectional group needs all rows and a proper col subset")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "shape", (N, T))

    @classmethod
    def block(cls, rows, cols, shape) -> "GroupSpec":
        return cls(GroupKind.BLOCK, tuple(rows), tuple(cols), shape)

    @classmethod
    def serial(cls, rows, shape) -> "GroupSpec":
        return cls(GroupKind.SERIAL, tuple(rows), tuple(range(shape[1])), shape)

    @classmethod
    def cross_sectional(cls, cols, shape) -> "GroupSpec":
        return cls(GroupKind.CROSS_SECTIONAL, tuple(range(shape[0])), tuple(cols), shape)

    @property
    def size(self) -> int:
        return len(self.rows) * len(self.cols)

    def row_mask(self) -> np.ndarray:
        m = np.zeros(self.shape[0], dtype=bool)
        m[list(self.rows)] = True
        return m

    def col_mask(self) -> np.ndarray:
        m = np.zeros(self.shape[1], dtype=bool)
        m[list(self.cols)] = True
        return m

    def restricted_mask(self) -> np.ndarray:
        """Cells used by the restricted (sample-split) fit."""
        outside_rows = ~self.row_mask()[:, None]
        outside_cols = ~self.col_mask()[None, :]
        if self.kind is GroupKind.BLOCK:
            return outside_rows & outside_cols
        if self.kind is GroupKind.SERIAL:
            return np.broadcast_to(outside_rows, self.shape).copy()
        return np.broadcast_to(outside_cols, self.shape).copy()

    def to_json(self) -> dict:
        """1-based JSON form."""
        return {
            "kind": self.kind.value,
            "rows": [i + 1 for i in self.rows],
            "cols": [t + 1 for t in self.cols],
        }

    @classmethod
    def from_json(cls, obj: dict, shape) -> "GroupSpec":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ValidationError("group spec needs a 'kind' field")
        kind = GroupKind.parse(obj["kind"])
        N, T = shape
        try:
            rows = [int(i) - 1 for i in obj["rows"]] if "rows" in obj else list(range(N))
            cols = [int(t) - 1 for t in obj["cols"]] if "cols" in obj else list(range(T))
        except (TypeError, ValueError):
            raise ValidationError("group rows/cols must be integer lists") from None
        if kind is GroupKind.BLOCK and ("rows" not in obj or "cols" not in obj):
            raise ValidationError("block group spec needs both 'rows' and 'cols'")
        return cls(kind, tuple(rows), tuple(cols), shape)

    @classmethod
    def parse(cls, text: str, shape) -> "GroupSpec":
        """Parse inline ``block:1-5x10-20``, ``serial:3``, ``cs:1,4-6`` (1-based)."""
        m = re.fullmatch(r"\s*([A-Za-z_-]+)\s*:\s*(.+?)\s*", text)
        if not m:
            raise ValidationError(f"cannot parse group spec {text!r}")
        kind = GroupKind.parse(m.group(1).lower())
        body = m.group(2)
        if kind is GroupKind.BLOCK:
            parts = body.split("x")
            if len(parts) != 2:
                raise ValidationError(f"block spec needs ROWSxCOLS, got {body!r}")
            obj = {"kind": "block", "rows": _parse_ranges(parts[0]), "cols": _parse_ranges(parts[1])}
        elif kind is GroupKind.SERIAL:
            obj = {"kind": "serial", "rows": _parse_ranges(body)}
        else:
            obj = {"kind": "cross-sectional", "cols": _parse_ranges(body)}
        return cls.from_json(obj, shape)


def _parse_ranges(text: str) -> list[int]:
    out: list[int] = []
    for piece in text.split(","):
        piece = piece.strip()
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", piece)
        if not m:
            raise ValidationError(f"bad index range {piece!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        if hi < lo:
            raise ValidationError(f"descending range {piece!r}")
        out.extend(range(lo, hi + 1))
    return sorted(set(out))


@dataclass(frozen=True)
class HeterogeneityWeights:
    """Row second moments ``p_hat`` (length N) and the diagonal ``psi_hat`` (length T)."""

    p_hat: np.ndarray
    psi_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_hat", _frozen(self.p_hat))
        object.__setattr__(self, "psi_hat", _frozen(self.psi_hat))

    @property
    def p_min(self) -> float:
        return float(self.p_hat.min())


def compute_heterogeneity(panel: ObservedPanel, p_floor: float = P_FLOOR) -> HeterogeneityWeights:
    """``p_i = T^-1 sum_t X_it^2`` and ``psi_t = N^-1 sum_j X_jt^2 / p_j^2``."""
    X2 = panel.X**2
    p_hat = X2.mean(axis=1)
    low = np.flatnonzero(p_hat <= p_floor)
    if low.size:
        raise ValidationError(
            f"row {low[0] + 1} has second moment {p_hat[low[0]]:.3g} <= {p_floor:g}; "
            "every row needs observations"
        )
    psi_hat = (X2 / p_hat[:, None] ** 2).mean(axis=0)
    return HeterogeneityWeights(p_hat, psi_hat)


# ---------------------------------------------------------------------------
# CSV ingestion


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_grid(path) -> np.ndarray:
    """Read a dense numeric CSV grid; missing cells become NaN.

    A first row containing any non-numeric, non-missing cell is taken as a
    header and skipped.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    first = [c.strip() for c in rows[0]]
    if any(c not in _MISSING and not _is_number(c) for c in first):
        rows = rows[1:]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"{path}: ragged row {i + 1} ({len(row)} cells, expected {width})")
        for t, cell in enumerate(row):
            cell = cell.strip()
            if cell in _MISSING:
                out[i, t] = math.nan
            elif _is_number(cell):
                out[i, t] = float(cell)
            else:
                raise ValidationError(f"{path}: non-numeric cell {cell!r} at row {i + 1}, col {t + 1}")
    return out


def load_panel(y_path, x_path=None, mode=Mode.BINARY, x_bound: float = X_BOUND) -> ObservedPanel:
    """Load an :class:`ObservedPanel` from CSV.

    Binary-mask mode without an ``x`` file derives the mask from the
    non-missing cells of ``Y``. General-regressor mode without an ``x`` file
    uses ``X = 1`` (a pure factor model).
    """
    mode = Mode.parse(mode)
    Y = read_grid(y_path)
    missing = np.isnan(Y)
    if x_path is None:
        if mode is Mode.BINARY:
            X = (~missing).astype(float)
        else:
            X = np.ones_like(Y)
    else:
        X = read_grid(x_path)
        if X.shape != Y.shape:
            raise ValidationError(f"shape mismatch: y is {Y.shape}, x is {X.shape}")
        if np.isnan(X).any():
            raise ValidationError("x file contains missing cells")
    if mode is Mode.GENERAL:
        if missing.any():
            i, t = np.argwhere(missing)[0]
            raise ValidationError(f"missing Y at row {i + 1}, col {t + 1} in general-regressor mode")
    else:
        bad = np.argwhere(missing & (X != 0))
        if bad.size:
            i, t = bad[0]
            raise ValidationError(f"Y missing at observed cell (row {i + 1}, col {t + 1})")
        Y = np.where(missing, 0.0, Y)
    return ObservedPanel(Y, X, mode, x_bound)


def write_grid(path, A, missing_mask=None) -> None:
    A = np.asarray(A, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for i, row in enumerate(A):
            if missing_mask is None:
                w.writerow([repr(float(v)) for v in row])
            else:
                w.writerow(["" if missing_mask[i, t] else repr(float(v)) for t, v in enumerate(row)])
