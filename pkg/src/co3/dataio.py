"""CSV ingestion and emission of datasets, partitions and matrices."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .model import OrdinalDataset, Partition

MISSING_TOKENS = frozenset({"", "NA", "na"})


class IngestionError(ValueError):
    """Malformed input data; the message names the offending row and column."""


def read_dataset(path, header: bool = False, c: Optional[int] = None,
                 binary01: bool = False) -> OrdinalDataset:
    """Parse an ``n x p`` CSV of ordinal codes; blank, ``NA`` or ``na`` mean censored.

    ``binary01`` shifts a {0, 1} coding to {1, 2}.  ``c`` defaults to the
    largest observed code.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return parse_rows(rows, header=header, c=c, binary01=binary01, source=str(path))


def parse_rows(rows, header=False, c=None, binary01=False, source="<input>") -> OrdinalDataset:
    start = 1 if header else 0
    body = [r for r in rows[start:]]
    # a trailing empty line is not a data row
    while body and body[-1] == []:
        body.pop()
    if not body:
        raise IngestionError(f"{source}: no data rows")
    width = len(body[0])
    n = len(body)
    y = np.zeros((n, width), np.int64)
    delta = np.zeros((n, width), np.int8)
    shift = 1 if binary01 else 0
    for i, row in enumerate(body):
        line = i + start + 1
        if len(row) != width:
            raise IngestionError(f"{source}: row {line} has {len(row)} fields, expected {width}")
        for j, token in enumerate(row):
            token = token.strip()
            if token in MISSING_TOKENS:
                continue
            try:
                value = int(token)
            except ValueError:
                raise IngestionError(
                    f"{source}: row {line}, column {j + 1}: non-integer code {token!r}") from None
            value += shift
            if value < 1:
                raise IngestionError(
                    f"{source}: row {line}, column {j + 1}: code {token} below the minimum")
            y[i, j] = value
            delta[i, j] = 1
    max_code = int(y.max()) if delta.any() else 2
    if c is None:
        c = max(max_code, 2)
    elif max_code > c:
        raise IngestionError(f"{source}: code {max_code - shift} exceeds configured c={c}")
    return OrdinalDataset(y, delta, c)


def write_dataset(path, data: OrdinalDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for yi, di in zip(data.y, data.delta):
            writer.writerow([str(v) if d else "" for v, d in zip(yi, di)])


def write_partition(path, partition) -> None:
    labels = partition.labels if isinstance(partition, Partition) else np.asarray(partition)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def read_partition(path) -> Partition:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return Partition(np.array([int(r[1]) for r in rows[1:] if r], np.int64))


def write_matrix(path, matrix, fmt="%.10g") -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=fmt)


def write_table(path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
