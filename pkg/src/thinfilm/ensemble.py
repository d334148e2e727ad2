"""Independent trajectories over a process pool, merged by trajectory id.

Trajectory ``i`` draws its noise from the counter-based stream keyed by
``(seed, i)``, so results do not depend on which worker ran it or in what
order.  Summaries are accumulated with exactly rounded sums in id order.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, initial_field
from .diagnostics import moment_check
from .errors import NumericalFailure
from .splitting import TrajectoryRecord, observable_columns, run_trajectory

__all__ = ["EnsembleResult", "run_ensemble", "summary_rows", "sup_rows", "worker_cap", "write_ensemble"]

SUCCESS_FRACTION = 0.9


def worker_cap(requested: int) -> int:
    """Honour ``THINFILM_THREADS`` as an upper bound on the pool size."""
    cap = os.environ.get("THINFILM_THREADS")
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, requested)


def _run_one(args) -> tuple[int, TrajectoryRecord | None, str | None]:
    config, traj = args
    cfg = replace(config.splitting, trajectory=traj)
    try:
        rec = run_trajectory(initial_field(config), cfg)
    except NumericalFailure as err:
        return traj, None, str(err)
    return traj, rec, None


@dataclass
class EnsembleResult:
    config: RunConfig
    records: dict[int, TrajectoryRecord]
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.records) + len(self.failures)

    @property
    def ok(self) -> bool:
        return self.count > 0 and len(self.records) >= SUCCESS_FRACTION * self.count

    def ordered(self) -> list[TrajectoryRecord]:
        return [self.records[k] for k in sorted(self.records)]

    def moments(self) -> list[dict]:
        recs = self.ordered()
        if len(recs) < 2:
            return []
        out = []
        for p in self.config.p_list:
            for which in ("H1_sup", "J_norm"):
                out.append(moment_check(recs, p, which).to_dict())
        return out


def run_ensemble(config: RunConfig, count: int, workers: int = 1) -> EnsembleResult:
    if count < 1:
        raise ValueError("count must be at least 1")
    workers = min(worker_cap(workers), count)
    jobs = [(config, i) for i in range(count)]
    if workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with mp.get_context("spawn").Pool(workers) as pool:
            results = pool.map(_run_one, jobs, chunksize=1)
    records, failures = {}, {}
    for traj, rec, err in results:
        if rec is None:
            failures[traj] = err
        else:
            records[traj] = rec
    return EnsembleResult(config, records, failures)


def summary_rows(result: EnsembleResult) -> tuple[list[str], list[list[float]]]:
    """Per-time ensemble mean and variance of every observable."""
    recs = result.ordered()
    names = [c for c in observable_columns(result.config.splitting) if c != "t"]
    header = ["t", "samples"] + [f"{s}_{c}" for c in names for s in ("mean", "var")]
    if not recs:
        return header, []
    times = recs[0].columns["t"]
    rows = []
    for i, t in enumerate(times):
        row = [float(t), len(recs)]
        for c in names:
            vals = [float(r.columns[c][i]) for r in recs]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / max(len(vals) - 1, 1)
            row += [mean, var]
        rows.append(row)
    return header, rows


def sup_rows(result: EnsembleResult) -> tuple[list[str], list[list]]:
    """One row per trajectory id with sup-over-time statistics; failures are marked excluded."""
    header = ["trajectory", "status", "sup_h1_norm", "sup_energy", "min_min_u", "max_max_u", "j_norm", "mass_T"]
    rows = []
    for k in range(result.count):
        if k in result.failures:
            rows.append([k, "excluded"] + [""] * (len(header) - 2))
            continue
        c = result.records[k].columns
        rows.append([
            k, "ok", float(c["h1_norm"].max()), float(c["energy"].max()), float(c["min_u"].min()),
            float(c["max_u"].max()), result.records[k].j_norm(), float(c["mass"][-1]),
        ])
    return header, rows


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_ensemble(result: EnsembleResult, out: Path) -> dict:
    """Write per-trajectory CSVs, the summaries and the moment reports; return the file index."""
    out = Path(out)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    index = {}
    for k, rec in sorted(result.records.items()):
        name = f"trajectories/traj_{k:05d}.csv"
        rec.write_csv(out / name)
        index[str(k)] = name
    _write_rows(out / "summary.csv", *summary_rows(result))
    _write_rows(out / "summary_sup.csv", *sup_rows(result))
    with open(out / "moments.json", "w") as fh:
        json.dump(result.moments(), fh, indent=2)
    if result.failures:
        with open(out / "failures.json", "w") as fh:
            json.dump({str(k): v for k, v in sorted(result.failures.items())}, fh, indent=2)
    return index
