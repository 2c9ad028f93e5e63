"""Delimited dataset files: ``id,proxy,value[,predicate]``, comma-separated, UTF-8."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

from .core import AbaeError, Dataset

log = logging.getLogger(__name__)

REQUIRED = ("id", "proxy", "value")


class ParseError(AbaeError):
    pass


class DuplicateId(AbaeError):
    pass


def _number(text: str, kind, line: int, col: str):
    try:
        v = kind(text)
    except ValueError:
        raise ParseError(f"line {line}: column {col!r} is not a valid number: {text!r}") from None
    if kind is float and not math.isfinite(v):
        raise ParseError(f"line {line}: column {col!r} must be finite")
    return v


def ingest(path, require_predicate: bool = True, warnings: list[str] | None = None) -> Dataset:
    path = Path(path)
    ids, proxy, value, pred = [], [], [], []
    seen: dict[int, int] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("line 1: empty file") from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise ParseError(f"line 1: header is missing column(s) {', '.join(missing)}")
        has_pred = "predicate" in header
        if require_predicate and not has_pred:
            raise ParseError("line 1: predicate column required for the inline oracle")
        col = {name: header.index(name) for name in header}
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            rid = _number(row[col["id"]].strip(), int, line, "id")
            if rid < 0:
                raise ParseError(f"line {line}: id must be non-negative")
            if rid in seen:
                raise DuplicateId(f"line {line}: duplicate id {rid} (first seen on line {seen[rid]})")
            seen[rid] = line
            px = _number(row[col["proxy"]].strip(), float, line, "proxy")
            if not 0.0 <= px <= 1.0:
                msg = f"line {line}: proxy {px} outside [0, 1]"
                log.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
            ids.append(rid)
            proxy.append(px)
            value.append(_number(row[col["value"]].strip(), float, line, "value"))
            if has_pred:
                p = row[col["predicate"]].strip()
                if p not in ("0", "1"):
                    raise ParseError(f"line {line}: predicate must be 0 or 1, got {p!r}")
                pred.append(p == "1")
    if not ids:
        raise ParseError(f"{path}: no records")
    return Dataset(ids, proxy, value, pred if has_pred else None, name=path.stem)


def write_dataset(dataset: Dataset, path, include_predicate: bool = True) -> None:
    with_pred = include_predicate and dataset.predicate is not None
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("id,proxy,value,predicate\n" if with_pred else "id,proxy,value\n")
        for i in range(len(dataset)):
            parts = [str(int(dataset.ids[i])), repr(float(dataset.proxy[i])), repr(float(dataset.value[i]))]
            if with_pred:
                parts.append("1" if dataset.predicate[i] else "0")
            fh.write(",".join(parts) + "\n")
