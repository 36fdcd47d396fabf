"""Accuracy tables and alpha curves as Markdown or CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

METHODS = (
    "3D Conv Nets",
    "Skeleton LSTM",
    "3D ConvNets + Skeleton LSTM",
    "3D ConvNets + Skeleton LSTM + SVM",
)
HEADER = ("Method", "Result /%")


@dataclass
class ExperimentResult:
    accuracies: dict  # method name -> percentage, in table order
    curve: dict = field(default_factory=dict)  # alpha -> percentage
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        for name, v in list(self.accuracies.items()) + list(self.curve.items()):
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"accuracy for {name} is outside [0, 100]: {v}")


def render_markdown(result: ExperimentResult) -> str:
    lines = [f"| {HEADER[0]} | {HEADER[1]} |", "| --- | --- |"]
    lines += [f"| {name} | {acc:.2f} |" for name, acc in result.accuracies.items()]
    return "\n".join(lines) + "\n"


def render_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for name, acc in result.accuracies.items():
        w.writerow([name, repr(float(acc))])
    w.writerow(["# seed", result.seed])
    w.writerow(["# config_hash", result.config_hash])
    return buf.getvalue()


def render_curve(curve: dict) -> str:
    return "alpha,accuracy\n" + "".join(f"{a!r},{v!r}\n" for a, v in curve.items())


def parse_csv(text: str, curve_text: str | None = None) -> ExperimentResult:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError(f"result CSV must start with header {','.join(HEADER)}")
    acc, meta = {}, {}
    for row in rows[1:]:
        if not row:
            continue
        if row[0].startswith("# "):
            meta[row[0][2:]] = row[1]
        else:
            acc[row[0]] = float(row[1])
    curve = {}
    if curve_text:
        for row in list(csv.reader(io.StringIO(curve_text)))[1:]:
            curve[float(row[0])] = float(row[1])
    return ExperimentResult(acc, curve, meta.get("config_hash", ""), int(meta.get("seed", 0)))


def write_report(result: ExperimentResult, out_dir, fmt="md") -> list[Path]:
    """Write ``table.md`` or ``table.csv``, plus ``alpha_curve.csv`` when the sweep is not empty."""
    if fmt not in ("md", "csv"):
        raise ValueError("format must be csv or md")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / f"table.{fmt}"
    table.write_text(render_markdown(result) if fmt == "md" else render_csv(result))
    written = [table]
    curve = out / "alpha_curve.csv"
    if result.curve:
        curve.write_text(render_curve(result.curve))
        written.append(curve)
    elif curve.exists():
        curve.unlink()
    return written
