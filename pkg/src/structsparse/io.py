"""Plain-text matrix files, truth files and score tables."""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .baselines import FSR_FIELDS
from .errors import InvalidArgumentError
from .inference import read_summaries
from .simgen import SimTruth


def write_matrix(path, A):
    """Write ``A`` as a ``#rows n #cols p`` header followed by whitespace-delimited rows.

    Integer arrays are written as integers; floats use ``repr`` so that
    reading the file back is exact.
    """
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidArgumentError(f"expected a matrix, got shape {A.shape}")
    integer = np.issubdtype(A.dtype, np.integer) or A.dtype == bool
    with open(path, "w") as fh:
        fh.write(f"#rows {A.shape[0]} #cols {A.shape[1]}\n")
        for row in A:
            if integer:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")
            else:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns an int64 array when every entry is an integer literal."""
    try:
        with open(path) as fh:
            header = fh.readline().split()
            body = fh.read().split()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read {path}: {exc}") from exc
    if len(header) != 4 or header[0] != "#rows" or header[2] != "#cols":
        raise InvalidArgumentError(f"{path}: missing '#rows n #cols p' header")
    try:
        n, p = int(header[1]), int(header[3])
    except ValueError:
        raise InvalidArgumentError(f"{path}: malformed header {' '.join(header)!r}") from None
    if len(body) != n * p:
        raise InvalidArgumentError(f"{path}: header says {n}x{p} but found {len(body)} entries")
    try:
        if all(_is_int(tok) for tok in body):
            values = np.array([int(t) for t in body], dtype=np.int64)
        else:
            values = np.array([float(t) for t in body])
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from None
    return values.reshape(n, p)


def _is_int(tok):
    return tok.lstrip("+-").isdigit()


def write_truth(path, truth: SimTruth):
    with open(path, "w") as fh:
        fh.write(truth.to_json() + "\n")


def read_truth(path):
    try:
        with open(path) as fh:
            return SimTruth.from_json(fh.read())
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read truth file {path}: {exc}") from exc


def read_scores(path):
    """Per-trait score vectors from a posterior summary (PPI) or an FSR record table (|coefficient|).

    Returns a list of ``(trait_id, scores)`` in file order.
    """
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("{"):
        out = []
        for tid, rec in read_summaries(path).items():
            if "failure" in rec:
                raise InvalidArgumentError(f"{path}: trait {tid} failed: {rec['failure']}")
            out.append((tid, rec["ppi"]))
        return out
    cols = first.rstrip("\n").split("\t")
    if tuple(cols) != FSR_FIELDS:
        raise InvalidArgumentError(f"{path}: unrecognized score table header {first.strip()!r}")
    per_trait = {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            tid, j, _, coef = line.rstrip("\n").split("\t")
            per_trait.setdefault(tid, []).append((int(j), abs(float(coef))))
    out = []
    for tid, rows in per_trait.items():
        rows.sort()
        out.append((tid, np.array([r[1] for r in rows])))
    return out


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
