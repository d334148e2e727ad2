"""Trotter-Kato splitting between the thin-film flow and the stochastic flow.

With ``delta = T / (N+1)``, macro step ``j`` runs the deterministic flow for
``delta`` and then the stochastic flow for ``delta``.  On the physical clock
both phases are squeezed into half-intervals at double speed:

* ``t in [j delta, (j+1/2) delta)``: ``u(t) = v(2 (t - j delta))``,
* ``t in [(j+1/2) delta, (j+1) delta)``: ``u(t) = w(2 (t - j delta) - delta)``,

and ``u(T)`` is the end of the last stochastic phase.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import detstep, stochstep
from .diagnostics import EntropySpec, entropy
from .errors import NumericalFailure
from .noise import KeyedNoise, ModeFields, PairedNoise, build_mode_set
from .torus import TorusGrid

__all__ = [
    "NoiseParams",
    "SplittingConfig",
    "TrajectoryRecord",
    "entropy_production_audit",
    "fit_loglog_slope",
    "observable_columns",
    "run_trajectory",
    "self_convergence_study",
]


@dataclass(frozen=True)
class NoiseParams:
    kmax: int = 0
    sigma: float = 0.0
    decay_r: float = 0.0


@dataclass(frozen=True)
class SplittingConfig:
    T: float
    N: int
    n: int = 32
    epsilon: float = 0.0
    alpha_list: tuple[float, ...] = (-0.5,)
    q: float = 3.0
    mobility: detstep.MobilityParams = detstep.MobilityParams()
    noise: NoiseParams = NoiseParams()
    seed: int = 0
    trajectory: int = 0
    det_controls: detstep.DetControls = detstep.DetControls()
    stoch_controls: stochstep.StochControls = stochstep.StochControls(store_increments=False)
    snapshot_cadence: int = 0  # record inside phases every k substeps; 0 = phase ends only
    keep_snapshots: bool = False
    keep_boundary_fields: bool = False
    hs_list: tuple[float, ...] = (1.0,)
    kappa: float | None = None  # cutoff for the regularized entropy; None = 1e-3 * mean height

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("N must be a non-negative integer")
        for a in self.alpha_list:
            if not -1.0 < a < 0.0:
                raise ValueError("alpha must lie in (-1,0)")
        if not self.q > 2.0:
            raise ValueError("q must exceed 2")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.snapshot_cadence < 0:
            raise ValueError("snapshot_cadence must be non-negative")

    @property
    def delta(self) -> float:
        return self.T / (self.N + 1)

    @property
    def qprime(self) -> float:
        return self.q / (self.q - 1.0)


def observable_columns(config: SplittingConfig) -> list[str]:
    cols = ["t", "mass", "energy", "h1_norm", "min_u", "max_u"]
    cols += [f"entropy_alpha_{a:g}" for a in config.alpha_list]
    cols += [f"homog_hs_{s:g}" for s in config.hs_list]
    return cols


@dataclass
class TrajectoryRecord:
    """Observables on the physical clock plus per-macro-step summaries."""

    config: SplittingConfig
    columns: dict
    macro: dict
    snapshots: list = field(default_factory=list)
    boundary_fields: list = field(default_factory=list)
    noise_manifest: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    kappa: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.columns["t"]

    def j_norm(self) -> float:
        """``||J||_{L^2(0,T; L^q')}`` accumulated over all deterministic phases."""
        return math.sqrt(math.fsum(self.macro["j_sq_integral"]))

    def write_csv(self, path) -> None:
        names = observable_columns(self.config)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for i in range(len(self.columns["t"])):
                w.writerow([repr(float(self.columns[c][i])) for c in names])


class _Recorder:
    def __init__(self, grid: TorusGrid, config: SplittingConfig):
        self.g = grid
        self.config = config
        self.names = observable_columns(config)
        self.rows: dict[str, list] = {c: [] for c in self.names}
        self.snapshots: list = []

    def record(self, t: float, u: np.ndarray) -> None:
        g = self.g
        if self.rows["t"] and t <= self.rows["t"][-1]:
            return
        r = self.rows
        r["t"].append(t)
        r["mass"].append(g.integrate(u))
        r["energy"].append(g.dirichlet_energy(u))
        r["h1_norm"].append(g.bessel_norm(u, 1.0))
        r["min_u"].append(float(u.min()))
        r["max_u"].append(float(u.max()))
        for a in self.config.alpha_list:
            r[f"entropy_alpha_{a:g}"].append(entropy(u, EntropySpec(a)))
        for s in self.config.hs_list:
            r[f"homog_hs_{s:g}"].append(g.homogeneous_norm(u, s))
        if self.config.keep_snapshots:
            self.snapshots.append((t, u.copy()))

    def columns(self) -> dict:
        return {k: np.array(v) for k, v in self.rows.items()}


def run_trajectory(
    u0: np.ndarray,
    config: SplittingConfig,
    noise_source=None,
    mode_fields: ModeFields | None = None,
) -> TrajectoryRecord:
    """Run the splitting scheme from ``u0`` and record observables.

    ``noise_source`` defaults to independent keyed increments for
    ``(config.seed, config.trajectory)``; pass a :class:`PairedNoise` to share
    one Brownian path across different ``N``.
    """
    if u0.min() < 0:
        raise ValueError("initial height must be non-negative")
    grid = TorusGrid(config.n, config.det_controls.dealias)
    if u0.shape != (config.n, config.n):
        raise ValueError(f"initial field has shape {u0.shape}, expected {(config.n, config.n)}")
    modes = build_mode_set(config.noise.kmax, config.noise.sigma, config.noise.decay_r)
    fields = mode_fields if mode_fields is not None else ModeFields(modes, grid)
    if noise_source is None:
        noise_source = KeyedNoise(config.seed, config.trajectory, fields.n_modes)
    delta = config.delta
    kappa = config.kappa if config.kappa is not None else 1e-3 * grid.integrate(u0)
    alphas = tuple(config.alpha_list)
    cadence = config.snapshot_cadence
    stoch_controls = replace(config.stoch_controls, store_path=cadence > 0 or config.stoch_controls.store_path)

    rec = _Recorder(grid, config)
    u = np.array(u0, dtype=float, copy=True)
    rec.record(0.0, u)
    macro = {
        "det_entropy_drop": {a: [] for a in alphas},
        "stoch_entropy_gain": {a: [] for a in alphas},
        "j_sq_integral": [],
        "j_avg_norm": [],
        "det_clipped_mass": [],
        "stoch_clipped_mass": [],
        "stoch_exceedances": [],
        "det_substeps": [],
        "det_halvings": [],
        "det_max_energy_rel_increase": [],
        "det_energy_violations": [],
        "det_energy_start": [],
        "det_energy_end": [],
        "min_height": [],
    }
    boundary = []
    t_det = t_sto = 0.0
    for j in range(config.N + 1):
        t0 = j * delta
        clock = time.perf_counter()
        try:
            det = detstep.advance(
                u, delta, config.mobility, config.det_controls, alphas=(), qprime=config.qprime,
                grid=grid, record_every=cadence,
            )
        except NumericalFailure as err:
            raise NumericalFailure(err.reason, macro_step=j) from err
        t_det += time.perf_counter() - clock
        for s, v in det.path[1:-1]:
            rec.record(t0 + 0.5 * s, v)
        v_end = det.v_end
        rec.record(t0 + 0.5 * delta, v_end)

        clock = time.perf_counter()
        try:
            sto = stochstep.advance(
                v_end, delta, config.epsilon, fields, stochstep.PhaseKey(noise_source, j), stoch_controls
            )
        except NumericalFailure as err:
            raise NumericalFailure(err.reason, macro_step=j) from err
        t_sto += time.perf_counter() - clock
        if cadence:
            nsub = len(sto.path) - 1
            tau = delta / nsub
            for s in range(cadence, nsub, cadence):
                rec.record(t0 + 0.5 * delta + 0.5 * s * tau, sto.path[s])
        w_end = sto.w_end
        rec.record(config.T if j == config.N else (j + 1) * delta, w_end)

        for a in alphas:
            spec = EntropySpec(a)
            macro["det_entropy_drop"][a].append(entropy(u, spec) - entropy(v_end, spec))
            reg = EntropySpec(a, kappa)
            macro["stoch_entropy_gain"][a].append(entropy(w_end, reg) - entropy(v_end, reg))
        macro["j_sq_integral"].append(det.j_sq_integral)
        jx, jy = det.J_time_avg
        macro["j_avg_norm"].append(float(np.sqrt(np.mean(jx**2 + jy**2))))
        macro["det_clipped_mass"].append(det.clipped_mass)
        macro["stoch_clipped_mass"].append(float(sto.clipped_mass))
        macro["stoch_exceedances"].append(sto.exceedances)
        macro["det_substeps"].append(det.substeps_taken)
        macro["det_halvings"].append(det.halvings)
        macro["det_max_energy_rel_increase"].append(det.max_energy_rel_increase)
        macro["det_energy_violations"].append(det.energy_violations)
        macro["det_energy_start"].append(det.energy_start)
        macro["det_energy_end"].append(det.energy_end)
        macro["min_height"].append(min(det.min_height, float(sto.min_height)))
        if config.keep_boundary_fields:
            boundary.append((u.copy(), v_end.copy(), w_end.copy()))
        u = w_end

    return TrajectoryRecord(
        config=config,
        columns=rec.columns(),
        macro=macro,
        snapshots=rec.snapshots,
        boundary_fields=boundary,
        noise_manifest=dict(modes.manifest(), paired=bool(getattr(noise_source, "paired", False))),
        timings={"deterministic_s": t_det, "stochastic_s": t_sto},
        kappa=kappa,
    )


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class ConvergenceTable:
    N_list: list
    deltas: list
    differences: list  # ||u_{N_i}(T) - u_{N_{i+1}}(T)||_{L^2}
    order: float | None
    flag: str = ""


def self_convergence_study(
    u0: np.ndarray,
    config: SplittingConfig,
    N_list: Sequence[int],
    paired_noise: bool = True,
    fine_substeps: int | None = None,
) -> ConvergenceTable:
    """Compare terminal states across macro-step counts and fit ``diff ~ delta^p``.

    With paired noise every run sums the same fine Brownian path, so the
    stochastic clock is subdivided identically for each ``N`` (``nsub`` per
    phase is chosen so that all runs share the substep size).
    """
    N_list = list(N_list)
    if sorted(N_list) != N_list or len(N_list) < 2:
        raise ValueError("N_list must be increasing with at least two entries")
    grid = TorusGrid(config.n)
    fields = ModeFields(build_mode_set(config.noise.kmax, config.noise.sigma, config.noise.decay_r), grid)
    phases_max = N_list[-1] + 1
    base_nsub = config.stoch_controls.substeps(config.T / phases_max)
    total = phases_max * base_nsub
    for N in N_list:
        if total % (N + 1):
            raise ValueError("every N+1 must divide the finest phase count for paired noise")
    fine = fine_substeps or total
    ends = []
    for i, N in enumerate(N_list):
        nsub = total // (N + 1)
        cfg = replace(config, N=N, stoch_controls=replace(config.stoch_controls, nsub=nsub))
        if paired_noise:
            src = PairedNoise(config.seed, config.trajectory, fields.n_modes, config.T, fine)
        else:
            src = KeyedNoise(config.seed + 7919 * (i + 1), config.trajectory, fields.n_modes)
        cfg = replace(cfg, keep_snapshots=False)
        ends.append(_terminal_state(u0, cfg, src, fields))
    diffs = [grid.l2_norm(a - b) for a, b in zip(ends[:-1], ends[1:])]
    deltas = [config.T / (N + 1) for N in N_list[:-1]]
    if not paired_noise:
        return ConvergenceTable(N_list, deltas, diffs, None, "unpaired noise")
    usable = [(d, e) for d, e in zip(deltas, diffs) if e > 0]
    order = fit_loglog_slope(*zip(*usable)) if len(usable) >= 2 else None
    return ConvergenceTable(N_list, deltas, diffs, order)


def _terminal_state(u0, cfg, src, fields) -> np.ndarray:
    rec = run_trajectory(u0, replace(cfg, keep_boundary_fields=True), noise_source=src, mode_fields=fields)
    return rec.boundary_fields[-1][2]


@dataclass
class EntropyAudit:
    per_step_det: list
    per_step_stoch: list
    mean_stoch_gain: float
    fitted_slope_vs_delta: float | None = None


def entropy_production_audit(record: TrajectoryRecord, alpha: float, kappa: float | None = None) -> EntropyAudit:
    """Per-macro-step deterministic entropy drop and stochastic gain of ``phi_kappa``.

    Uses the boundary fields when the record kept them; otherwise falls back
    to the values computed during the run, which requires ``kappa`` to match.
    """
    if record.boundary_fields:
        kap = record.kappa if kappa is None else kappa
        det, sto = [], []
        for u, v, w in record.boundary_fields:
            det.append(entropy(u, EntropySpec(alpha)) - entropy(v, EntropySpec(alpha)))
            sto.append(entropy(w, EntropySpec(alpha, kap)) - entropy(v, EntropySpec(alpha, kap)))
    else:
        if kappa is not None and kappa != record.kappa:
            raise ValueError("record has no boundary fields; cannot change kappa")
        det = list(record.macro["det_entropy_drop"][alpha])
        sto = list(record.macro["stoch_entropy_gain"][alpha])
    return EntropyAudit(det, sto, math.fsum(sto) / len(sto))


def ensemble_stoch_gain_slope(records_by_N: dict, alpha: float) -> tuple[float, dict]:
    """Regress the ensemble mean per-step stochastic gain against ``delta``."""
    means = {}
    for N, records in sorted(records_by_N.items()):
        gains = [g for r in records for g in entropy_production_audit(r, alpha).per_step_stoch]
        means[N] = (records[0].config.delta, math.fsum(gains) / len(gains))
    deltas = [d for d, _ in means.values()]
    vals = [m for _, m in means.values()]
    if min(vals) <= 0:
        return float("nan"), means
    return fit_loglog_slope(deltas, vals), means
