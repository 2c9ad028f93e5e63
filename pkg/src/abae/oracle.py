"""External predicate oracle speaking a line protocol over a child process.

Request: one decimal record id per line. Response: ``id,predicate,value`` per
line, predicate 0 or 1, in any order. The child is started once per batch,
receives the whole batch on stdin, and must answer every id before exiting.
"""
from __future__ import annotations

import shlex
import subprocess

import numpy as np

from .core import AbaeError, Dataset


class OracleProtocolError(AbaeError):
    pass


def parse_responses(text: str, requested) -> dict[int, tuple[bool, float]]:
    wanted = {int(i) for i in requested}
    out: dict[int, tuple[bool, float]] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise OracleProtocolError(f"response line {n}: expected 'id,predicate,value', got {line!r}")
        try:
            rid = int(parts[0])
            value = float(parts[2])
        except ValueError:
            raise OracleProtocolError(f"response line {n}: malformed numbers in {line!r}") from None
        if parts[1].strip() not in ("0", "1"):
            raise OracleProtocolError(f"response line {n}: predicate must be 0 or 1, got {parts[1]!r}")
        if rid not in wanted:
            raise OracleProtocolError(f"response line {n}: id {rid} was never requested")
        if rid in out:
            raise OracleProtocolError(f"response line {n}: id {rid} answered twice")
        out[rid] = (parts[1].strip() == "1", value)
    missing = sorted(wanted - out.keys())
    if missing:
        shown = ", ".join(map(str, missing[:20])) + (" ..." if len(missing) > 20 else "")
        raise OracleProtocolError(f"oracle exited without answering {len(missing)} id(s): {shown}")
    return out


class SubprocessOracle:
    def __init__(self, command, dataset: Dataset, timeout: float | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("empty oracle command")
        self.dataset = dataset
        self.timeout = timeout
        self.calls = 0

    def query(self, record_ids) -> dict[int, tuple[bool, float]]:
        ids = [int(i) for i in record_ids]
        payload = "".join(f"{i}\n" for i in ids)
        try:
            proc = subprocess.run(
                self.argv,
                input=payload,
                capture_output=True,
                text=True,
                encoding="ascii",
                timeout=self.timeout,
                check=False,
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise OracleProtocolError(f"oracle command failed: {e}") from None
        self.calls += 1
        return parse_responses(proc.stdout, ids)

    def __call__(self, positions: np.ndarray):
        ids = self.dataset.ids[positions]
        answers = self.query(ids)
        pred = np.array([answers[int(i)][0] for i in ids], dtype=bool)
        value = np.array([answers[int(i)][1] for i in ids], dtype=np.float64)
        return pred, value
