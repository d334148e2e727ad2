"""Run configuration: TOML sections, strict validation and a lossless echo.

Sections and keys (all optional except ``time.T`` and ``time.N``)::

    [grid]      n
    [time]      T, N
    [physics]   epsilon, alpha_list, q, kappa
    [mobility]  delta, eps_m, s
    [noise]     kmax, sigma, decay_r, seed
    [init]      u0, shift
    [output]    snapshot_cadence, keep_snapshots, hs_list, p_list
    [controls]  dt_init, dt_min, max_substeps, positivity_tol, mass_clip_budget,
                face_mean, dealias, stabilize, energy_rtol, grow_after, tau_max, nsub,
                blowup_factor

``init.u0`` is one of ``constant:c``, ``droplet:cx,cy,r,h``,
``perturbed:hbar,amp,kx,ky`` or ``file:<path>``; ``init.shift`` adds a
constant to the initial height.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import detstep, stochstep
from .errors import ConfigError
from .splitting import NoiseParams, SplittingConfig
from .torus import TorusGrid, read_field, read_field_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "config_from_dict", "initial_field", "load_config", "parse_config"]

_DET_KEYS = {f.name for f in fields(detstep.DetControls)}
_STOCH_KEYS = {"tau_max", "nsub", "blowup_factor", "positivity_tol", "mass_clip_budget"}

_SCHEMA: dict[str, dict[str, type | tuple]] = {
    "grid": {"n": int},
    "time": {"T": float, "N": int},
    "physics": {"epsilon": float, "alpha_list": list, "q": float, "kappa": float},
    "mobility": {"delta": float, "eps_m": float, "s": float},
    "noise": {"kmax": int, "sigma": float, "decay_r": float, "seed": int},
    "init": {"u0": str, "shift": float},
    "output": {"snapshot_cadence": int, "keep_snapshots": bool, "hs_list": list, "p_list": list},
    "controls": {
        "dt_init": float, "dt_min": float, "max_substeps": int, "positivity_tol": float,
        "mass_clip_budget": float, "face_mean": str, "dealias": bool, "stabilize": str,
        "energy_rtol": float, "grow_after": int, "tau_max": float, "nsub": int, "blowup_factor": float,
    },
}


@dataclass(frozen=True)
class RunConfig:
    splitting: SplittingConfig
    u0: str = "constant:1.0"
    shift: float = 0.0
    p_list: tuple[float, ...] = (1.0, 2.0)
    base_dir: str = "."  # resolves relative ``file:`` paths

    @property
    def seed(self) -> int:
        return self.splitting.seed

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, splitting=replace(self.splitting, seed=seed))

    def echo(self) -> dict:
        """Nested dict that :func:`config_from_dict` maps back to this config."""
        s = self.splitting
        controls = {k: getattr(s.det_controls, k) for k in sorted(_DET_KEYS)}
        controls.update(tau_max=s.stoch_controls.tau_max, blowup_factor=s.stoch_controls.blowup_factor)
        if s.stoch_controls.nsub is not None:
            controls["nsub"] = s.stoch_controls.nsub
        physics = {"epsilon": s.epsilon, "alpha_list": list(s.alpha_list), "q": s.q}
        if s.kappa is not None:
            physics["kappa"] = s.kappa
        return {
            "grid": {"n": s.n},
            "time": {"T": s.T, "N": s.N},
            "physics": physics,
            "mobility": {"delta": s.mobility.delta, "eps_m": s.mobility.eps_m, "s": s.mobility.s},
            "noise": {"kmax": s.noise.kmax, "sigma": s.noise.sigma, "decay_r": s.noise.decay_r, "seed": s.seed},
            "init": {"u0": self.u0, "shift": self.shift},
            "output": {
                "snapshot_cadence": s.snapshot_cadence,
                "keep_snapshots": s.keep_snapshots,
                "hs_list": list(s.hs_list),
                "p_list": list(self.p_list),
            },
            "controls": controls,
        }


def _key_line(text: str | None, section: str, key: str | None) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]``."""
    if text is None:
        return None
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([A-Za-z_]+)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    return None


def _coerce(value, kind, where: str):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{where} must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{where} must be an integer")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise TypeError(f"{where} must be true or false")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(f"{where} must be a string")
        return value
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise TypeError(f"{where} must be a list of numbers")
        return tuple(float(v) for v in value)
    raise AssertionError(kind)


def config_from_dict(data: dict, text: str | None = None, base_dir: str = ".") -> RunConfig:
    """Validate a nested section dict; ``text`` (the source) improves line diagnostics."""
    clean: dict[str, dict] = {}
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", key=section, line=_key_line(text, section, None))
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", key=section)
        clean[section] = {}
        for key, value in body.items():
            where = f"{section}.{key}"
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {where}", key=where, line=_key_line(text, section, key))
            try:
                clean[section][key] = _coerce(value, _SCHEMA[section][key], where)
            except TypeError as err:
                raise ConfigError(str(err), key=where, line=_key_line(text, section, key)) from None

    def get(section, key, default=None):
        return clean.get(section, {}).get(key, default)

    for required in ("T", "N"):
        if get("time", required) is None:
            raise ConfigError(f"missing required key time.{required}", key=f"time.{required}")

    def build(section, key, factory):
        try:
            return factory()
        except (ValueError, TypeError) as err:
            where = f"{section}.{key}" if key else section
            raise ConfigError(str(err), key=where, line=_key_line(text, section, key)) from None

    controls = clean.get("controls", {})
    det = build("controls", None, lambda: detstep.DetControls(**{k: v for k, v in controls.items() if k in _DET_KEYS}))
    stoch = build(
        "controls", None,
        lambda: stochstep.StochControls(
            store_increments=False, **{k: v for k, v in controls.items() if k in _STOCH_KEYS}
        ),
    )
    mob = build("mobility", None, lambda: detstep.MobilityParams(**clean.get("mobility", {})))
    noise_kw = {k: v for k, v in clean.get("noise", {}).items() if k != "seed"}
    if noise_kw.get("kmax", 0) < 0 or noise_kw.get("sigma", 0.0) < 0 or noise_kw.get("decay_r", 0.0) < 0:
        bad = next(k for k in ("kmax", "sigma", "decay_r") if noise_kw.get(k, 0) < 0)
        raise ConfigError(f"noise.{bad} must be non-negative", key=f"noise.{bad}", line=_key_line(text, "noise", bad))
    noise = NoiseParams(**noise_kw)
    n = get("grid", "n", 32)
    if n < 4 or n % 2:
        raise ConfigError("grid.n must be an even integer >= 4", key="grid.n", line=_key_line(text, "grid", "n"))
    if noise.kmax >= n // 2:
        raise ConfigError("noise.kmax must be below n/2", key="noise.kmax", line=_key_line(text, "noise", "kmax"))
    alpha_list = get("physics", "alpha_list", (-0.5,))
    for a in alpha_list:
        if not -1.0 < a < 0.0:
            raise ConfigError("alpha must lie in (-1,0)", key="physics.alpha_list",
                              line=_key_line(text, "physics", "alpha_list"))
    q = get("physics", "q", 3.0)
    if not q > 2.0:
        raise ConfigError("q must exceed 2", key="physics.q", line=_key_line(text, "physics", "q"))
    kw = dict(
        T=get("time", "T"), N=get("time", "N"), n=n,
        epsilon=get("physics", "epsilon", 0.0), alpha_list=alpha_list, q=q,
        kappa=get("physics", "kappa"), mobility=mob, noise=noise, seed=get("noise", "seed", 0),
        det_controls=det, stoch_controls=stoch,
        snapshot_cadence=get("output", "snapshot_cadence", 0),
        keep_snapshots=get("output", "keep_snapshots", False),
        hs_list=get("output", "hs_list", (1.0,)),
    )
    try:
        split = SplittingConfig(**kw)
    except ValueError as err:
        msg = str(err)
        key = next(
            (f"{s}.{k}" for s, k in (("time", "T"), ("time", "N"), ("physics", "epsilon"), ("output", "snapshot_cadence"))
             if msg.startswith(k)),
            None,
        )
        line = _key_line(text, *key.split(".")) if key else None
        raise ConfigError(msg, key=key, line=line) from None
    u0 = get("init", "u0", "constant:1.0")
    try:
        _parse_u0(u0)
    except ValueError as err:
        raise ConfigError(str(err), key="init.u0", line=_key_line(text, "init", "u0")) from None
    p_list = get("output", "p_list", (1.0, 2.0))
    if any(p <= 0 for p in p_list):
        raise ConfigError("p_list entries must be positive", key="output.p_list", line=_key_line(text, "output", "p_list"))
    return RunConfig(split, u0, get("init", "shift", 0.0), p_list, base_dir)


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        raise ConfigError(f"malformed config: {err}", line=int(m.group(1)) if m else None) from None
    return config_from_dict(data, text, base_dir)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    return parse_config(text, str(path.parent))


# -- initial data -----------------------------------------------------------
def _parse_u0(spec: str) -> tuple[str, list]:
    kind, _, rest = spec.partition(":")
    if kind == "file":
        if not rest:
            raise ValueError("file: needs a path")
        return kind, [rest]
    arity = {"constant": 1, "droplet": 4, "perturbed": 4}
    if kind not in arity:
        raise ValueError(f"unknown initial field {kind!r}")
    try:
        vals = [float(v) for v in rest.split(",")]
    except ValueError:
        raise ValueError(f"{kind}: expects {arity[kind]} comma-separated numbers") from None
    if len(vals) != arity[kind]:
        raise ValueError(f"{kind}: expects {arity[kind]} comma-separated numbers")
    if kind == "constant" and vals[0] < 0:
        raise ValueError("constant height must be non-negative")
    if kind == "droplet" and (vals[2] <= 0 or vals[2] >= 0.5 or vals[3] < 0):
        raise ValueError("droplet needs 0 < r < 0.5 and h >= 0")
    if kind == "perturbed" and abs(vals[1]) > vals[0]:
        raise ValueError("perturbed needs |amp| <= hbar for a non-negative height")
    return kind, vals


def droplet(grid: TorusGrid, cx: float, cy: float, r: float, h: float) -> np.ndarray:
    """``h (1 - rho^2/r^2)_+^2`` with periodic distance ``rho``; C^1 with a contact line at ``rho = r``."""
    dx = (grid.X - cx + 0.5) % 1.0 - 0.5
    dy = (grid.Y - cy + 0.5) % 1.0 - 0.5
    return h * np.maximum(0.0, 1.0 - (dx * dx + dy * dy) / (r * r)) ** 2


def initial_field(config: RunConfig) -> np.ndarray:
    n = config.splitting.n
    grid = TorusGrid(n)
    kind, vals = _parse_u0(config.u0)
    if kind == "constant":
        u = np.full((n, n), vals[0])
    elif kind == "droplet":
        u = droplet(grid, *vals)
    elif kind == "perturbed":
        hbar, amp, kx, ky = vals
        u = hbar + amp * np.sin(2 * math.pi * (kx * grid.X + ky * grid.Y))
    else:
        path = Path(vals[0])
        if not path.is_absolute():
            path = Path(config.base_dir) / path
        try:
            u = read_field_csv(path) if path.suffix == ".csv" else read_field(path)
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot load initial field: {err}", key="init.u0") from None
        if u.shape != (n, n):
            raise ConfigError(f"initial field has shape {u.shape}, grid is {n}x{n}", key="init.u0")
        if u.min() < 0:
            raise ConfigError("initial field has negative heights", key="init.u0")
    return u + config.shift
