"""The full command sequence, as a user would type it, run in-process."""

import time
from pathlib import Path

from mmrec.cli import main

STEPS = (
    ["gen-data", "--out", "{data}", "--seed", "{seed}"],
    ["train", "--data", "{data}", "--out", "{models}"],
    ["eval", "--data", "{data}", "--models", "{models}"],
    ["sweep-alpha", "--grid", "0:1:0.1", "--models", "{models}"],
    ["report", "--format", "csv", "--models", "{models}"],
)


def run_pipeline(root, seed=0):
    """Run every step under ``root``; returns ``(seconds, report_dir)``."""
    root = Path(root)
    names = {"data": str(root / "data"), "models": str(root / "models"), "seed": str(seed)}
    start = time.perf_counter()
    for step in STEPS:
        code = main([a.format(**names) for a in step])
        if code != 0:
            raise RuntimeError(f"step {step[0]} exited with {code}")
    return time.perf_counter() - start, root / "models" / "report"
