"""TOML run configuration with strict key checking.

Example::

    seed = 0

    [grid]
    n = 256
    l = 40.0

    [params]
    tau = 10.0
    gamma = 0.0

    [init]
    atoms = [{ mass = 12.566, x = 0.0, y = 0.0, width = 0.5 }]
    # background = "bg.ksf"   # optional KSF1 file, its u-field is added

    [time]
    t_end = 10.0
    dt_init = 1e-3
    dt_max = 1e-2
    dt_min = 1e-10
    cfl = 0.5
    n_t = 64
    kappa = 2.0

    [solver]
    mode = "evolution"        # or "picard"
    p = 1.5
    q = 4.0
    tol = 1e-10
    max_iter = 60

    [output]
    directory = "out"
    snapshot_times = [1.0, 5.0, 10.0]
    formats = ["csv", "ksf"]
    plot_scripts = false

Every section and key is optional and falls back to the defaults above;
unknown sections or keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .field import Atom, Grid2D, MollifiedMeasure, Params


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    n: int = 256
    l: float = 40.0


@dataclass
class ParamsSection:
    tau: float = 1.0
    gamma: float = 0.0


@dataclass
class InitSection:
    atoms: List[dict] = field(default_factory=list)
    background: Optional[str] = None


@dataclass
class TimeSection:
    t_end: float = 1.0
    dt_init: float = 1e-3
    dt_max: float = 1e-2
    dt_min: float = 1e-10
    cfl: float = 0.5
    n_t: int = 64
    kappa: float = 2.0


@dataclass
class SolverSection:
    mode: str = "evolution"
    p: float = 1.5
    q: float = 4.0
    tol: float = 1e-10
    max_iter: int = 60


@dataclass
class OutputSection:
    directory: Optional[str] = None
    snapshot_times: List[float] = field(default_factory=list)
    formats: List[str] = field(default_factory=lambda: ["csv", "ksf"])
    plot_scripts: bool = False


_SECTIONS = {
    "grid": GridSection,
    "params": ParamsSection,
    "init": InitSection,
    "time": TimeSection,
    "solver": SolverSection,
    "output": OutputSection,
}
_ATOM_KEYS = {"mass", "x", "y", "width"}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    params: ParamsSection = field(default_factory=ParamsSection)
    init: InitSection = field(default_factory=InitSection)
    time: TimeSection = field(default_factory=TimeSection)
    solver: SolverSection = field(default_factory=SolverSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    source: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    def make_grid(self) -> Grid2D:
        return Grid2D(self.grid.n, self.grid.l)

    def make_params(self) -> Params:
        return Params(self.params.tau, self.params.gamma)

    def make_measure(self) -> MollifiedMeasure:
        from .snapshot import read_snapshot

        atoms = tuple(Atom(a["mass"], a.get("x", 0.0), a.get("y", 0.0), a.get("width")) for a in self.init.atoms)
        bg = None
        if self.init.background is not None:
            u, _, _, _ = read_snapshot(self._resolve(self.init.background))
            if u.grid != self.make_grid():
                raise ConfigError(f"background {self.init.background} lives on a different grid")
            bg = u
        return MollifiedMeasure(atoms, bg)

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        if not p.is_absolute() and self.source is not None:
            p = Path(self.source).parent / p
        return p

    def validate(self) -> None:
        """Cross-field checks; raises :class:`ConfigError` with a specific message."""
        try:
            grid = self.make_grid()
            self.make_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for k, a in enumerate(self.init.atoms):
            x, y = a.get("x", 0.0), a.get("y", 0.0)
            label = f"atom {k} (mass {a['mass']}, center ({x}, {y}))"
            if not grid.contains(x, y):
                raise ConfigError(f"{label} lies outside the box [-{grid.l / 2}, {grid.l / 2})^2")
            w = a.get("width")
            if w is not None and not w > 0:
                raise ConfigError(f"{label} has non-positive width {w}")
        if self.init.background is not None and not self._resolve(self.init.background).is_file():
            raise ConfigError(f"background file {self.init.background} does not exist")
        t = self.time
        if not t.t_end > 0:
            raise ConfigError("time.t_end must be positive")
        if not 0 < t.dt_min <= t.dt_max:
            raise ConfigError("need 0 < time.dt_min <= time.dt_max")
        if not 0 < t.cfl < 1:
            raise ConfigError("time.cfl must lie in (0, 1)")
        if t.n_t < 8 or t.kappa < 1:
            raise ConfigError("need time.n_t >= 8 and time.kappa >= 1")
        s = self.solver
        if s.mode not in ("evolution", "picard"):
            raise ConfigError(f"solver.mode must be 'evolution' or 'picard', got {s.mode!r}")
        if s.mode == "picard":
            from .estimates import ExponentSet

            try:
                ExponentSet(s.p, s.q)
            except ValueError as exc:
                raise ConfigError(f"inadmissible exponents: {exc}") from exc
        if not s.tol > 0 or s.max_iter < 1:
            raise ConfigError("need solver.tol > 0 and solver.max_iter >= 1")
        bad = [f for f in self.output.formats if f not in ("csv", "ksf")]
        if bad:
            raise ConfigError(f"unknown output formats {bad}")
        for ts in self.output.snapshot_times:
            if not 0 <= ts <= t.t_end or not math.isfinite(ts):
                raise ConfigError(f"snapshot time {ts} outside [0, {t.t_end}]")


def _section(name: str, cls, data) -> object:
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    out = cls()
    for key, value in data.items():
        default = getattr(out, key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be true or false")
        if isinstance(default, int) and not isinstance(default, bool) and not isinstance(value, int):
            raise ConfigError(f"{name}.{key} must be an integer")
        if isinstance(default, float) and not isinstance(value, (int, float)):
            raise ConfigError(f"{name}.{key} must be a number")
        if isinstance(default, float):
            value = float(value)
        setattr(out, key, value)
    return out


def _check_atoms(atoms) -> List[dict]:
    if not isinstance(atoms, list):
        raise ConfigError("init.atoms must be an array of tables")
    out = []
    for k, a in enumerate(atoms):
        if not isinstance(a, dict):
            raise ConfigError(f"init.atoms[{k}] must be a table")
        unknown = sorted(set(a) - _ATOM_KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s) in init.atoms[{k}]: {', '.join(unknown)}")
        if "mass" not in a:
            raise ConfigError(f"init.atoms[{k}] needs a mass")
        for key, v in a.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"init.atoms[{k}].{key} must be a number")
        out.append({k2: float(v) for k2, v in a.items()})
    return out


def parse_config(data: dict, source: Optional[str] = None) -> RunConfig:
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = RunConfig(source=source)
    for name, cls in _SECTIONS.items():
        if name in data:
            setattr(cfg, name, _section(name, cls, data[name]))
    cfg.init.atoms = _check_atoms(cfg.init.atoms)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    cfg.seed = seed
    cfg.output.snapshot_times = [float(t) for t in cfg.output.snapshot_times]
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, str(path))

