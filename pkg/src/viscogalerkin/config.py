"""Experiment configuration: flat INI sections, validated before any run.

A document looks like::

    [model]
    name = power_law
    alpha = 1.0

    [basis]
    m_max = 4

    [initial]
    preset = taylor_green

Every key has a default except ``model.name``, ``basis.m_max`` and
``initial.preset``.  :meth:`ExperimentConfig.echo` writes the resolved
document back out; parsing the echo gives an equal configuration.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .basis import (
    BasisSpec,
    CoefficientVector,
    build_basis,
    default_grid_size,
    project_function,
    random_coefficients,
    taylor_green,
)
from .integrator import IntegratorConfig
from .rhs import ForcingSpec
from .viscosity import ParameterError, ViscosityModel, model_from_params

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "parse_float_list",
    "parse_int_list",
    "parse_modes",
    "PRESETS",
]

PRESETS = ("single_mode", "taylor_green", "random_seeded", "modes", "snapshot")

_MODEL_KEYS = ("name", "alpha", "mu", "gamma", "beta", "kappa", "K", "t0", "c", "file", "convection")
_SCHEMA: dict[str, tuple[str, ...]] = {
    "model": _MODEL_KEYS,
    "basis": ("N", "m_max", "grid_size"),
    "regularization": ("eps",),
    "initial": ("preset", "xi", "phase", "branch", "amplitude", "seed", "slope", "energy", "modes", "path"),
    "forcing": ("T1", "modes"),
    "integrator": tuple(f.name for f in fields(IntegratorConfig)),
    "output": ("dir", "snapshot_every"),
    "stoptime": ("alpha", "eps_list", "window_lo", "window_hi"),
    "converge": ("eps_list", "m_list"),
}
_DEFAULT_STOP_EPS = (1e-6, 1e-7, 1e-8)
_DEFAULT_CONVERGE_EPS = (1e-2, 1e-3, 1e-4)
_DEFAULT_CONVERGE_M = (4, 8, 16)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.key = key
        self.line = line


# -- value parsers -------------------------------------------------------------


def parse_float_list(text: str) -> list[float]:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def parse_int_list(text: str) -> list[int]:
    return [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def parse_modes(text: str, N: int) -> list[tuple[tuple[int, ...], str, int, float]]:
    """``"1 0 cos 0.5; 0 1 sin 0.25"`` into ``(xi, phase, branch, amplitude)`` tuples.

    In three dimensions each entry carries a branch before the phase.
    """
    out = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if not parts:
            continue
        want = N + (3 if N == 3 else 2)
        if len(parts) != want:
            raise ValueError(f"mode entry {chunk.strip()!r} needs {want} fields")
        xi = tuple(int(v) for v in parts[:N])
        branch = int(parts[N]) if N == 3 else 0
        phase = parts[-2]
        if phase not in ("cos", "sin"):
            raise ValueError(f"phase must be cos or sin, got {phase!r}")
        out.append((xi, phase, branch, float(parts[-1])))
    return out


def _fmt_modes(modes, N: int) -> str:
    items = []
    for xi, phase, branch, amp in modes:
        head = " ".join(str(k) for k in xi)
        if N == 3:
            head += f" {branch}"
        items.append(f"{head} {phase} {amp!r}")
    return "; ".join(items)


def _fmt_list(values) -> str:
    return ", ".join(repr(v) for v in values)


# -- configuration object ---------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    model_params: dict[str, Any]
    model: ViscosityModel
    N: int
    m_max: int
    grid_size: int
    eps: float
    initial: dict[str, Any]
    forcing: ForcingSpec
    forcing_modes: list = field(default_factory=list)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    out_dir: str = "out"
    snapshot_every: int = 0
    convection: bool = True
    stop_alpha: float | None = None
    stop_eps: tuple[float, ...] = _DEFAULT_STOP_EPS
    stop_window: tuple[float, float] = (0.01, 0.5)
    converge_eps: tuple[float, ...] = _DEFAULT_CONVERGE_EPS
    converge_m: tuple[int, ...] = _DEFAULT_CONVERGE_M

    # -- derived objects ------------------------------------------------------
    def basis(self, m_max: int | None = None) -> BasisSpec:
        if m_max is None or m_max == self.m_max:
            return build_basis(self.N, self.m_max, self.grid_size)
        return build_basis(self.N, m_max)

    def initial_state(self, basis: BasisSpec | None = None) -> CoefficientVector:
        basis = basis or self.basis()
        ini = self.initial
        preset = ini["preset"]
        if preset == "taylor_green":
            u = project_function(taylor_green, basis)
            return u.replace(d=u.d * ini["amplitude"])
        if preset == "random_seeded":
            return random_coefficients(basis, ini["seed"], ini["slope"], ini["energy"])
        if preset == "snapshot":
            from .files import load_snapshot

            return load_snapshot(ini["path"], basis)
        d = np.zeros(basis.M)
        for xi, phase, branch, amp in _initial_modes(ini):
            d[basis.index(xi, phase, branch)] += amp
        return CoefficientVector(basis, d)

    @property
    def t_start(self) -> float:
        if self.initial["preset"] == "snapshot":
            from .files import load_snapshot

            return load_snapshot(self.initial["path"]).t
        return 0.0

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    # -- echo -----------------------------------------------------------------
    def echo(self) -> str:
        """The resolved configuration as a document that parses back to ``self``."""
        lines = ["[model]", f"name = {self.model_name}"]
        for k, v in self.model_params.items():
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        lines.append(f"convection = {str(self.convection).lower()}")
        lines += ["", "[basis]", f"N = {self.N}", f"m_max = {self.m_max}", f"grid_size = {self.grid_size}"]
        lines += ["", "[regularization]", f"eps = {self.eps!r}"]
        lines += ["", "[initial]"]
        for k, v in self.initial.items():
            if k == "modes":
                v = _fmt_modes(v, self.N)
            elif k == "xi":
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines += ["", "[forcing]", f"T1 = {self.forcing.T1!r}"]
        if self.forcing_modes:
            lines.append(f"modes = {_fmt_modes(self.forcing_modes, self.N)}")
        lines += ["", "[integrator]"]
        for f in fields(IntegratorConfig):
            v = getattr(self.integrator, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        lines += ["", "[output]", f"dir = {self.out_dir}", f"snapshot_every = {self.snapshot_every}"]
        lines += ["", "[stoptime]"]
        if self.stop_alpha is not None:
            lines.append(f"alpha = {self.stop_alpha!r}")
        lines += [
            f"eps_list = {_fmt_list(self.stop_eps)}",
            f"window_lo = {self.stop_window[0]!r}",
            f"window_hi = {self.stop_window[1]!r}",
        ]
        lines += [
            "",
            "[converge]",
            f"eps_list = {_fmt_list(self.converge_eps)}",
            f"m_list = {', '.join(str(m) for m in self.converge_m)}",
        ]
        return "\n".join(lines) + "\n"


def _initial_modes(ini: Mapping[str, Any]):
    if ini["preset"] == "single_mode":
        return [(tuple(ini["xi"]), ini["phase"], ini["branch"], ini["amplitude"])]
    return ini["modes"]


# -- parsing -----------------------------------------------------------------------------


def _key_line(text: str, section: str, key: str | None) -> int | None:
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None:
            m = re.match(r"^([^=:\s]+)\s*[=:]", s)
            if m and m.group(1) == key:
                return lineno
    return None


class _Reader:
    """Typed access to one parsed document with located errors."""

    def __init__(self, cp: configparser.ConfigParser, text: str, base: Path | None):
        self.cp = cp
        self.text = text
        self.base = base

    def error(self, section: str, key: str | None, msg: str) -> ConfigError:
        name = f"{section}.{key}" if key else section
        return ConfigError(f"[{name}] {msg}", key=key or section, line=_key_line(self.text, section, key))

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_option(section, key)

    def raw(self, section: str, key: str, default=None):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        return default

    def get(self, section: str, key: str, conv: Callable, default=None, required=False):
        raw = self.raw(section, key)
        if raw is None or raw == "":
            if required:
                raise self.error(section, key, "is required")
            return default
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, f"bad value {raw!r}: {exc}") from None

    def path(self, section: str, key: str) -> str | None:
        raw = self.raw(section, key)
        if raw is None:
            return None
        p = Path(raw)
        if not p.is_absolute() and self.base is not None:
            p = self.base / p
        return str(p)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";;"), strict=True, empty_lines_in_values=False
    )
    cp.optionxform = str  # keys are case sensitive (N, T1, K)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", key=exc.section, line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", key=exc.option, line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        line = text.splitlines()[lineno - 1].strip()
        raise ConfigError(f"cannot parse {line!r}; expected key = value", line=lineno) from None
    return cp


def parse_config(
    text: str,
    overrides: Mapping[tuple[str, str], str] | None = None,
    base_dir: str | Path | None = None,
) -> ExperimentConfig:
    """Parse and fully validate a configuration document.

    ``overrides`` maps ``(section, key)`` to replacement text, applied before
    validation (the command line uses this).  Relative paths resolve against
    ``base_dir``.

    Raises
    ------
    ConfigError
        With the line number for syntax errors and the key for invalid or
        unknown entries.
    """
    cp = _read(text)
    for (sec, key), val in (overrides or {}).items():
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(val))
    r = _Reader(cp, text, Path(base_dir) if base_dir is not None else None)

    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise r.error(sec, None, f"unknown section {sec!r}")
        for key in cp.options(sec):
            if key not in _SCHEMA[sec]:
                raise r.error(sec, key, f"unknown key {key!r}")

    # model
    name = r.get("model", "name", str, required=True)
    params: dict[str, Any] = {}
    for key in ("alpha", "mu", "gamma", "beta", "kappa", "K", "t0", "c"):
        v = r.get("model", key, float)
        if v is not None:
            params[key] = v
    if name == "table":
        path = r.path("model", "file")
        if path is None:
            raise r.error("model", "file", "is required for a table model")
        params = {"file": path, **params}
    elif r.has("model", "file"):
        raise r.error("model", "file", "only table models read a file")
    try:
        model = model_from_params(name, params)
    except ParameterError as exc:
        msg = str(exc)
        key = "name"
        if msg.startswith("unknown model parameter"):
            key = msg.split(":")[-1].strip().split(",")[0]
        else:
            for cand in ("alpha", "beta", "mu", "gamma", "c", "kappa", "file"):
                if re.search(rf"\b{cand}\b", msg) and cand in params:
                    key = cand
                    break
        raise r.error("model", key, msg) from None
    except OSError as exc:
        raise r.error("model", "file", str(exc)) from None
    convection = r.get("model", "convection", _bool, True)

    # basis
    N = r.get("basis", "N", int, 2)
    if N not in (2, 3):
        raise r.error("basis", "N", f"N must be 2 or 3, got {N}")
    m_max = r.get("basis", "m_max", int, required=True)
    if m_max < 1:
        raise r.error("basis", "m_max", "must be >= 1")
    grid = r.get("basis", "grid_size", int, default_grid_size(m_max))
    if grid < 3 * m_max:
        raise r.error("basis", "grid_size", f"{grid} is below 3*m_max = {3 * m_max}; products would alias")

    # regularization
    eps = r.get("regularization", "eps", float, 1e-6)
    if not (eps >= 0 and math.isfinite(eps)):
        raise r.error("regularization", "eps", "must be finite and >= 0")
    if eps == 0 and not model.bounded_at_zero:
        raise r.error("regularization", "eps", f"eps = 0 is not allowed for {name}: F is unbounded at rest")

    # initial data
    preset = r.get("initial", "preset", str, required=True)
    if preset not in PRESETS:
        raise r.error("initial", "preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    ini: dict[str, Any] = {"preset": preset}
    allowed = {
        "single_mode": ("xi", "phase", "branch", "amplitude"),
        "taylor_green": ("amplitude",),
        "random_seeded": ("seed", "slope", "energy"),
        "modes": ("modes",),
        "snapshot": ("path",),
    }[preset]
    for key in cp.options("initial"):
        if key != "preset" and key not in allowed:
            raise r.error("initial", key, f"not used by preset {preset!r}")
    if preset == "single_mode":
        xi = r.get("initial", "xi", parse_int_list, required=True)
        if len(xi) != N:
            raise r.error("initial", "xi", f"needs {N} components")
        ini["xi"] = tuple(xi)
        ini["phase"] = r.get("initial", "phase", str, "cos")
        if ini["phase"] not in ("cos", "sin"):
            raise r.error("initial", "phase", "must be cos or sin")
        ini["branch"] = r.get("initial", "branch", int, 0)
        ini["amplitude"] = r.get("initial", "amplitude", float, 1.0)
    elif preset == "taylor_green":
        if N != 2:
            raise r.error("initial", "preset", "taylor_green is two-dimensional")
        ini["amplitude"] = r.get("initial", "amplitude", float, 1.0)
    elif preset == "random_seeded":
        ini["seed"] = r.get("initial", "seed", int, required=True)
        ini["slope"] = r.get("initial", "slope", float, -1.0)
        ini["energy"] = r.get("initial", "energy", float, 1.0)
        if not ini["energy"] >= 0:
            raise r.error("initial", "energy", "must be >= 0")
    elif preset == "modes":
        ini["modes"] = r.get("initial", "modes", lambda s: parse_modes(s, N), required=True)
    else:
        ini["path"] = r.path("initial", "path")
        if ini["path"] is None:
            raise r.error("initial", "path", "is required for a snapshot")

    # forcing
    T1 = r.get("forcing", "T1", float, 0.0)
    if not T1 >= 0:
        raise r.error("forcing", "T1", "must be >= 0")
    fmodes = r.get("forcing", "modes", lambda s: parse_modes(s, N), [])
    forcing = ForcingSpec({(xi, ph, br): amp for xi, ph, br, amp in fmodes}, T1)

    # integrator
    kw: dict[str, Any] = {"rel_tol": 1e-8, "stop_tol": 1e-10}
    for f in fields(IntegratorConfig):
        if not r.has("integrator", f.name):
            continue
        if f.name in ("record_every", "max_steps"):
            conv = int
        elif f.name == "record_j":
            conv = _bool
        else:
            conv = float
        kw[f.name] = r.get("integrator", f.name, conv)
    try:
        icfg = IntegratorConfig(**kw)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in kw if re.search(rf"\b{k}\b", msg)), "t_end")
        raise r.error("integrator", key, msg) from None

    # output
    out_dir = r.raw("output", "dir", "out")
    snap = r.get("output", "snapshot_every", int, 0)
    if snap < 0:
        raise r.error("output", "snapshot_every", "must be >= 0")

    # sweeps
    stop_alpha = r.get("stoptime", "alpha", float)
    stop_eps = tuple(r.get("stoptime", "eps_list", parse_float_list, list(_DEFAULT_STOP_EPS)))
    window = (r.get("stoptime", "window_lo", float, 0.01), r.get("stoptime", "window_hi", float, 0.5))
    if not 0 < window[0] < window[1] <= 1:
        raise r.error("stoptime", "window_lo", "need 0 < window_lo < window_hi <= 1")
    conv_eps = tuple(r.get("converge", "eps_list", parse_float_list, list(_DEFAULT_CONVERGE_EPS)))
    conv_m = tuple(r.get("converge", "m_list", parse_int_list, list(_DEFAULT_CONVERGE_M)))
    for sec, vals in (("stoptime", stop_eps), ("converge", conv_eps)):
        if any(not (e >= 0 and math.isfinite(e)) for e in vals):
            raise r.error(sec, "eps_list", "entries must be finite and >= 0")

    cfg = ExperimentConfig(
        model_name=name,
        model_params=params,
        model=model,
        N=N,
        m_max=m_max,
        grid_size=grid,
        eps=eps,
        initial=ini,
        forcing=forcing,
        forcing_modes=fmodes,
        integrator=icfg,
        out_dir=out_dir,
        snapshot_every=snap,
        convection=convection,
        stop_alpha=stop_alpha,
        stop_eps=stop_eps,
        stop_window=window,
        converge_eps=conv_eps,
        converge_m=conv_m,
    )
    # resolve mode keys now so bad modes fail before any run
    basis = cfg.basis()
    if preset in ("single_mode", "modes"):
        for xi, ph, br, _ in _initial_modes(ini):
            try:
                basis.index(xi, ph, br)
            except KeyError as exc:
                raise r.error("initial", "xi" if preset == "single_mode" else "modes", exc.args[0]) from None
    try:
        forcing.resolve(basis)
    except KeyError as exc:
        raise r.error("forcing", "modes", exc.args[0]) from None
    return cfg


def load_config(path, overrides: Mapping[tuple[str, str], str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides, base_dir=path.parent)
