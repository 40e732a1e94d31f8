"""Matrix Market coordinate files and whitespace-separated trace files."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

TRACE_COLUMNS = ("iteration", "fg_rel_residual", "bound", "ff_rel_residual", "p_residual", "inner_iters")

_FIELDS = {"real", "complex", "integer", "pattern"}
_SYMMETRIES = {"general", "symmetric", "skew-symmetric", "hermitian"}


class MatrixMarketError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def read_matrix_market(path) -> sp.csr_array:
    """Read a coordinate Matrix Market file into CSR.

    Indices are converted to 0-based, symmetric/skew/hermitian storage is
    expanded and duplicate entries are summed.
    """
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket" or head[1].lower() != "matrix":
        raise MatrixMarketError("expected '%%MatrixMarket matrix coordinate <field> <symmetry>'", 1)
    fmt, fld, sym = (t.lower() for t in head[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"only coordinate format is supported, got '{fmt}'", 1)
    if fld not in _FIELDS:
        raise MatrixMarketError(f"unknown field '{fld}'", 1)
    if sym not in _SYMMETRIES:
        raise MatrixMarketError(f"unknown symmetry '{sym}'", 1)

    lineno = 1
    it = iter(enumerate(lines[1:], start=2))
    for lineno, line in it:
        if line.strip() and not line.lstrip().startswith("%"):
            break
    else:
        raise MatrixMarketError("missing size line", lineno)
    try:
        nrows, ncols, nnz = (int(t) for t in line.split())
    except ValueError:
        raise MatrixMarketError(f"malformed size line '{line.strip()}'", lineno)

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.complex128 if fld == "complex" else np.float64)
    n = 0
    for lineno, line in it:
        tok = line.split()
        if not tok or tok[0].startswith("%"):
            continue
        if n >= nnz:
            raise MatrixMarketError(f"more than {nnz} entries", lineno)
        want = {"pattern": 2, "complex": 4}.get(fld, 3)
        if len(tok) != want:
            raise MatrixMarketError(f"expected {want} fields, got {len(tok)}", lineno)
        try:
            i, j = int(tok[0]), int(tok[1])
            if fld == "pattern":
                val = 1.0
            elif fld == "complex":
                val = complex(float(tok[2]), float(tok[3]))
            else:
                val = float(tok[2])
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry '{line.strip()}'", lineno)
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) outside {nrows} x {ncols}", lineno)
        rows[n], cols[n], vals[n] = i - 1, j - 1, val
        n += 1
    if n != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {n}", lineno)

    if sym != "general":
        off = rows != cols
        mirror = vals[off]
        if sym == "skew-symmetric":
            mirror = -mirror
        elif sym == "hermitian":
            mirror = np.conj(mirror)
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, mirror]),
        )
    A = sp.coo_array((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
    A.sum_duplicates()
    return A


def write_matrix_market(path, A, comment: str | None = None) -> None:
    """Write ``A`` (sparse or dense) as a general coordinate file, full precision."""
    A = sp.coo_array(A)
    is_complex = np.iscomplexobj(A.data)
    lines = [f"%%MatrixMarket matrix coordinate {'complex' if is_complex else 'real'} general"]
    if comment:
        lines += [f"% {c}" for c in comment.splitlines()]
    lines.append(f"{A.shape[0]} {A.shape[1]} {A.nnz}")
    for i, j, v in zip(A.row, A.col, A.data):
        if is_complex:
            lines.append(f"{i + 1} {j + 1} {float(v.real)!r} {float(v.imag)!r}")
        else:
            lines.append(f"{i + 1} {j + 1} {float(v)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass
class TraceRecord:
    """Rows of (iteration, relative FGMRES residual, bound, relative FFOM residual, ||r^P||, inner iterations)."""

    fg_rel: np.ndarray
    bound: np.ndarray
    ff_rel: np.ndarray
    p_res: np.ndarray
    inner_iters: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.fg_rel)
        for name in ("bound", "ff_rel", "p_res", "inner_iters"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column '{name}' has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.fg_rel)

    def rows(self) -> np.ndarray:
        return np.column_stack(
            [np.arange(len(self)), self.fg_rel, self.bound, self.ff_rel, self.p_res, self.inner_iters]
        ).astype(float)


def write_trace_dat(record: TraceRecord, path) -> None:
    if not len(record):
        raise ValueError("empty trace record")
    head = ["# columns: " + " ".join(TRACE_COLUMNS)]
    head.append("# blank values (undefined FFOM iterate, no preconditioner at step 0) are written as nan")
    for key, val in record.meta.items():
        head.append(f"# {key} = {val}")
    body = []
    for row in record.rows():
        body.append(
            " ".join([str(int(row[0]))] + [f"{x:.17e}" for x in row[1:5]] + [str(int(row[5]))])
        )
    atomic_write_text(path, "\n".join(head + body) + "\n")


def read_trace_dat(path) -> TraceRecord:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            text = line[1:].strip()
            if " = " in text:
                k, v = text.split(" = ", 1)
                meta[k] = v
    data = np.atleast_2d(np.loadtxt(path, comments="#"))
    return TraceRecord(data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5].astype(int), meta)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
