"""CSV and key-value writers shared by the experiment runner.

Floats are written with ``repr`` so that output is exact and byte-stable
across runs. Every file is written to a temporary sibling and renamed.
"""

from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import DualPair, SolveTrace

TRACE_HEADER = ["n", "delta_n", "gamma", "supnorm_step", "seconds"]


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace(trace: SolveTrace, path, timing: bool = False) -> None:
    """Trace rows ``n,delta_n,gamma,supnorm_step,seconds``.

    Wall time is only written when ``timing`` is set; otherwise the column
    holds ``nan`` so repeated runs give identical files.
    """
    rows = []
    for k in range(len(trace)):
        secs = float(trace.seconds[k]) if timing else float("nan")
        rows.append([k + 1, float(trace.delta[k]), float(trace.gamma[k]),
                     float(trace.supnorm_step[k]), secs])
    write_table(path, TRACE_HEADER, rows)


def read_trace(path) -> SolveTrace:
    trace = SolveTrace()
    for row in read_table(path):
        trace.delta.append(float(row["delta_n"]))
        trace.gamma.append(float(row["gamma"]))
        trace.supnorm_step.append(float(row["supnorm_step"]))
        trace.seconds.append(float(row["seconds"]))
    return trace


def write_dual(dual: DualPair, path_f, path_g) -> None:
    write_table(path_f, ["index", "value"], ([i, float(v)] for i, v in enumerate(dual.f)))
    write_table(path_g, ["index", "value"], ([j, float(v)] for j, v in enumerate(dual.g)))


def read_dual(path_f, path_g) -> DualPair:
    f = [float(r["value"]) for r in read_table(path_f)]
    g = [float(r["value"]) for r in read_table(path_g)]
    return DualPair(f, g)


def write_summary(path, values: Mapping[str, object]) -> None:
    lines = [f"{k} = {fmt(values[k])}" for k in sorted(values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
