"""Per-step metric records and their on-disk formats.

``metrics.jsonl``
    First line is a header ``{"type": "header", "schema": ..., "version": N}``;
    every following line is one ``{"type": "step", ...}`` record with the
    fields of :data:`STEP_FIELDS`, in step order.
``metrics.csv``
    The same step records flattened to one row per step, with a header row.

Both files contain no timestamps or host information, so identical runs
produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

SCHEMA = "frontier-grpo.metrics"
SCHEMA_VERSION = 1
KIND_KEYS = ("draft", "debug", "improve")


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class StepMetrics:
    step: int
    stage: str
    buffer_size: int
    support_size: int = 0
    entropy: float = 0.0
    frontier_mass: float = 0.0
    policy_version: int = 0
    executions: int = 0
    ticks: int = 0
    ticks_total: int = 0
    valid_rate: dict = field(default_factory=dict)
    mean_reward_by_kind: dict = field(default_factory=dict)
    mean_reward: float | None = None
    eval_reward: float = 0.0
    degenerate_groups: int = 0
    loss: float | None = None
    surrogate: float | None = None
    kl: float | None = None
    policy_entropy: float | None = None
    grad_norm: float | None = None
    clip_fraction: float | None = None
    update_aborted: bool = False
    no_eligible: bool = False
    max_staleness: int = 0

    def record(self) -> dict:
        d = asdict(self)
        rec = {"type": "step"}
        for k, v in d.items():
            if isinstance(v, dict):
                for kk in KIND_KEYS:
                    rec[f"{k}_{kk}"] = _clean(v.get(kk))
            else:
                rec[k] = _clean(v)
        return rec


STEP_FIELDS = tuple(k for k in StepMetrics(0, "", 0).record() if k != "type")


def emit_metrics(records: Iterable[StepMetrics], out_dir: str | os.PathLike, prefix: str = "metrics") -> tuple[str, str]:
    """Write ``<prefix>.jsonl`` and ``<prefix>.csv``; returns both paths."""
    out_dir = os.fspath(out_dir)
    jpath = os.path.join(out_dir, f"{prefix}.jsonl")
    cpath = os.path.join(out_dir, f"{prefix}.csv")
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(jpath, "w", encoding="utf-8", newline="\n") as jf, open(
            cpath, "w", encoding="utf-8", newline=""
        ) as cf:
            jf.write(json.dumps({"type": "header", "schema": SCHEMA, "version": SCHEMA_VERSION}) + "\n")
            writer = csv.DictWriter(cf, fieldnames=STEP_FIELDS, lineterminator="\n")
            writer.writeheader()
            last = None
            for m in records:
                if last is not None and m.step <= last:
                    raise ValueError(f"step records out of order ({m.step} after {last})")
                last = m.step
                rec = m.record()
                jf.write(json.dumps(rec, separators=(",", ":")) + "\n")
                writer.writerow({k: ("" if rec[k] is None else rec[k]) for k in STEP_FIELDS})
    except OSError as exc:
        raise OSError(exc.errno, f"writing metrics under {out_dir!r}: {exc.strerror}") from None
    return jpath, cpath


def read_metrics(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(ln) for ln in fh if ln.strip()]
    if not lines or lines[0].get("type") != "header" or lines[0].get("schema") != SCHEMA:
        raise ValueError(f"{os.fspath(path)!r} is not a metrics file")
    if lines[0].get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported metrics schema version {lines[0].get('version')}")
    return lines[1:]


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
