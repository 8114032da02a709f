"""Scenario configuration files.

Flat INI text, one section per concern and one ``[constraint <kind>]`` section
per active constraint. Physical quantities are SI except angles, which are
written in degrees (``theta_deg``, ``thetadot_deg``, ``bound_deg``) and held in
radians once loaded. Radian keys (``theta_rad`` etc.) are accepted too; the
serializer uses them only for angles with no exact degree text. Floats are written so that ``parse(serialize(cfg))``
reproduces ``cfg`` exactly.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import CraneParams, PdGains
from .errors import ConfigurationError
from .lyapunov import ConstraintKind, ConstraintSpec
from .sim import CONTROLLERS, DEFAULT_ALPHAS, DEFAULT_CBF_GAINS, ScenarioConfig

BUNDLED = ("scenario_a", "scenario_b")

_SECTION_KEYS = {
    "scenario": {"name", "controller"},
    "plant": {"m_c", "m_p", "L", "g"},
    "prestabilizing": {"kp", "kd"},
    "nominal": {"kp", "kd"},
    "reference": {"r", "v0"},
    "initial": {"x", "theta_deg", "theta_rad", "xdot", "thetadot_deg", "thetadot_rad"},
    "filter": {"eta", "angle_form", "sampled", "backoff"},
    "simulation": {"dt", "horizon"},
    "class_k": {f"alpha_{i}" for i in range(1, 6)},
    "candidate_cbf": ({f"gamma_{i}" for i in range(1, 6)}
                      | {f"alpha_tilde_{i}" for i in range(1, 6)}),
    "verify": {"v_min", "v_max", "v_points", "resolution", "tol"},
}
_CONSTRAINT_PREFIX = "constraint "


@dataclass(frozen=True)
class VerifyGrid:
    """Reference sweep and tolerance used by threshold verification."""

    v_min: float = -1.0
    v_max: float = 1.05
    v_points: int = 23
    resolution: int = 61
    tol: float = 0.02

    def references(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.v_points)


def fmt_float(x: float) -> str:
    """Shortest text that parses back to exactly ``x``."""
    return repr(float(x))


def deg_text(rad: float) -> str | None:
    """Degrees as text such that ``math.radians(float(text)) == rad`` exactly.

    Returns None when no double maps onto ``rad``: the degree-to-radian
    conversion shrinks ulp spacing, so it misses some radian values.
    """
    deg = math.degrees(rad)
    for direction in (math.inf, -math.inf):
        cand = deg
        for _ in range(4):
            if math.radians(cand) == rad:
                return repr(cand)
            cand = math.nextafter(cand, direction)
    return None


def _angle_line(stem: str, rad: float) -> str:
    text = deg_text(rad)
    return f"{stem}_deg = {text}" if text is not None else f"{stem}_rad = {fmt_float(rad)}"


def _read_angle(rd: "_Reader", section: str, stem: str, default: float | None = None) -> tuple[float, str]:
    """Angle in radians from ``<stem>_deg`` or ``<stem>_rad``, plus the key used."""
    deg_key, rad_key = f"{stem}_deg", f"{stem}_rad"
    if rd.has(section, deg_key) and rd.has(section, rad_key):
        raise rd.error(section, rad_key, f"conflicts with {deg_key}; give one of them")
    if rd.has(section, rad_key):
        return rd.float(section, rad_key), rad_key
    return math.radians(rd.float(section, deg_key, None if default is None else math.degrees(default))), deg_key


class _Reader:
    """configparser wrapper that reports errors as ``file:line: section.key: message``."""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from None

    def line_of(self, section: str, key: str | None = None) -> int | None:
        cur = None
        for no, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                cur = line[1:-1].strip()
                if key is None and cur == section:
                    return no
                continue
            if cur == section and key is not None:
                name = line.split("=", 1)[0].split(":", 1)[0].strip()
                if name == key:
                    return no
        return None

    def error(self, section: str, key: str | None, msg: str) -> ConfigurationError:
        no = self.line_of(section, key)
        where = f"{self.source}:{no}" if no else self.source
        field_ = f"{section}.{key}" if key else f"[{section}]"
        return ConfigurationError(f"{where}: {field_}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_option(section, key)

    def float(self, section: str, key: str, default=None) -> float:
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        raw = self.cp.get(section, key)
        try:
            val = float(raw)
        except ValueError:
            raise self.error(section, key, f"not a number: {raw!r}") from None
        if not math.isfinite(val):
            raise self.error(section, key, f"must be finite, got {raw!r}")
        return val

    def int(self, section: str, key: str, default: int) -> int:
        if not self.has(section, key):
            return default
        raw = self.cp.get(section, key)
        try:
            return int(raw)
        except ValueError:
            raise self.error(section, key, f"not an integer: {raw!r}") from None

    def str(self, section: str, key: str, default: str) -> str:
        return self.cp.get(section, key) if self.has(section, key) else default

    def bool(self, section: str, key: str, default: bool) -> bool:
        if not self.has(section, key):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise self.error(section, key, "expected true/false") from None


def _check_layout(rd: _Reader) -> None:
    for sec in rd.cp.sections():
        if sec.startswith(_CONSTRAINT_PREFIX):
            kind = sec[len(_CONSTRAINT_PREFIX):].strip()
            try:
                ConstraintKind(kind)
            except ValueError:
                kinds = ", ".join(k.value for k in ConstraintKind)
                raise rd.error(sec, None, f"unknown constraint kind (expected one of {kinds})") \
                    from None
            angle = kind == ConstraintKind.ANGLE_BOUND.value
            allowed = {"bound_deg", "bound_rad", "gamma_scale"} if angle else {"bound", "gamma_scale"}
        elif sec in _SECTION_KEYS:
            allowed = _SECTION_KEYS[sec]
        else:
            raise rd.error(sec, None, "unknown section")
        for key in rd.cp.options(sec):
            if key not in allowed:
                raise rd.error(sec, key, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from configuration text."""
    rd = _Reader(text, source)
    _check_layout(rd)
    base = ScenarioConfig()
    try:
        params = CraneParams(*(rd.float("plant", k, getattr(base.params, k))
                               for k in ("m_c", "m_p", "L", "g")))
    except ConfigurationError as exc:
        raise rd.error("plant", None, str(exc)) from None
    gains = {}
    for sec, dflt in (("prestabilizing", base.pi_gains), ("nominal", base.kappa_gains)):
        try:
            gains[sec] = PdGains(rd.float(sec, "kp", dflt.kp), rd.float(sec, "kd", dflt.kd))
        except ConfigurationError as exc:
            raise rd.error(sec, None, str(exc)) from None
    alphas = dict(DEFAULT_ALPHAS)
    for i in range(1, 6):
        alphas[i] = rd.float("class_k", f"alpha_{i}", alphas[i])
        if not alphas[i] > 0:
            raise rd.error("class_k", f"alpha_{i}", "must be positive")
    cbf = dict(DEFAULT_CBF_GAINS)
    for i in range(1, 6):
        gm = rd.float("candidate_cbf", f"gamma_{i}", cbf[i][0])
        at = rd.float("candidate_cbf", f"alpha_tilde_{i}", cbf[i][1])
        for key, val in ((f"gamma_{i}", gm), (f"alpha_tilde_{i}", at)):
            if not val > 0:
                raise rd.error("candidate_cbf", key, "must be positive")
        cbf[i] = (gm, at)
    constraints = []
    for sec in rd.cp.sections():
        if not sec.startswith(_CONSTRAINT_PREFIX):
            continue
        kind = ConstraintKind(sec[len(_CONSTRAINT_PREFIX):].strip())
        if kind is ConstraintKind.ANGLE_BOUND:
            bound, key = _read_angle(rd, sec, "bound")
        else:
            key = "bound"
            bound = rd.float(sec, key)
        try:
            constraints.append(ConstraintSpec(kind, bound, rd.float(sec, "gamma_scale", 1.0)))
        except ConfigurationError as exc:
            raise rd.error(sec, key, str(exc)) from None
    constraints.sort(key=lambda c: c.kind.index)
    theta, theta_key = _read_angle(rd, "initial", "theta", base.x0[1])
    x0 = (rd.float("initial", "x", base.x0[0]), theta, rd.float("initial", "xdot", base.x0[2]),
          _read_angle(rd, "initial", "thetadot", base.x0[3])[0])
    if not abs(x0[1]) < 0.5 * math.pi:
        raise rd.error("initial", theta_key, "must lie strictly between -90 and 90 degrees")
    controller = rd.str("scenario", "controller", base.controller)
    if controller not in CONTROLLERS:
        raise rd.error("scenario", "controller",
                       f"unknown controller {controller!r} (expected one of {', '.join(CONTROLLERS)})")
    angle_form = rd.str("filter", "angle_form", base.angle_form)
    if angle_form not in ("cosine", "linear"):
        raise rd.error("filter", "angle_form", "expected 'cosine' or 'linear'")
    cfg = ScenarioConfig(
        params=params, pi_gains=gains["prestabilizing"], kappa_gains=gains["nominal"],
        constraints=constraints, alphas=alphas, cbf_gains=cbf,
        eta=rd.float("filter", "eta", base.eta),
        r=rd.float("reference", "r", base.r), x0=x0,
        v0=rd.float("reference", "v0", base.v0),
        dt=rd.float("simulation", "dt", base.dt),
        horizon=rd.float("simulation", "horizon", base.horizon),
        controller=controller, angle_form=angle_form,
        sampled=rd.bool("filter", "sampled", base.sampled),
        backoff=rd.float("filter", "backoff", base.backoff),
        name=rd.str("scenario", "name", base.name),
    )
    for sec, key, ok, msg in (
            ("simulation", "dt", cfg.dt > 0, "must be positive"),
            ("simulation", "horizon", cfg.horizon >= 0, "must be non-negative"),
            ("filter", "eta", cfg.eta >= 0, "must be non-negative"),
            ("filter", "backoff", cfg.backoff >= 0, "must be non-negative")):
        if not ok:
            raise rd.error(sec, key, msg)
    try:
        cfg.validate()
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    return cfg


def parse_verify_grid(text: str, source: str = "<config>") -> VerifyGrid:
    rd = _Reader(text, source)
    d = VerifyGrid()
    grid = VerifyGrid(rd.float("verify", "v_min", d.v_min), rd.float("verify", "v_max", d.v_max),
                      rd.int("verify", "v_points", d.v_points),
                      rd.int("verify", "resolution", d.resolution),
                      rd.float("verify", "tol", d.tol))
    if grid.v_points < 1:
        raise rd.error("verify", "v_points", "must be at least 1")
    if grid.resolution < 2:
        raise rd.error("verify", "resolution", "must be at least 2")
    if grid.tol < 0:
        raise rd.error("verify", "tol", "must be non-negative")
    return grid


def serialize_config(cfg: ScenarioConfig) -> str:
    """Configuration text for ``cfg``; :func:`parse_config` inverts it exactly."""
    f = fmt_float
    p = cfg.params
    lines = [
        "[scenario]", f"name = {cfg.name}", f"controller = {cfg.controller}", "",
        "[plant]", f"m_c = {f(p.m_c)}", f"m_p = {f(p.m_p)}", f"L = {f(p.L)}", f"g = {f(p.g)}", "",
        "[prestabilizing]", f"kp = {f(cfg.pi_gains.kp)}", f"kd = {f(cfg.pi_gains.kd)}", "",
        "[nominal]", f"kp = {f(cfg.kappa_gains.kp)}", f"kd = {f(cfg.kappa_gains.kd)}", "",
        "[reference]", f"r = {f(cfg.r)}", f"v0 = {f(cfg.v0)}", "",
        "[initial]", f"x = {f(cfg.x0[0])}", _angle_line("theta", cfg.x0[1]),
        f"xdot = {f(cfg.x0[2])}", _angle_line("thetadot", cfg.x0[3]), "",
        "[filter]", f"eta = {f(cfg.eta)}", f"angle_form = {cfg.angle_form}",
        f"sampled = {'true' if cfg.sampled else 'false'}", f"backoff = {f(cfg.backoff)}", "",
        "[simulation]", f"dt = {f(cfg.dt)}", f"horizon = {f(cfg.horizon)}", "",
        "[class_k]",
    ]
    lines += [f"alpha_{i} = {f(cfg.alphas[i])}" for i in range(1, 6)]
    lines += ["", "[candidate_cbf]"]
    for i in range(1, 6):
        gm, at = cfg.cbf_gains[i]
        lines += [f"gamma_{i} = {f(gm)}", f"alpha_tilde_{i} = {f(at)}"]
    for c in sorted(cfg.constraints, key=lambda c: c.kind.index):
        lines += ["", f"[{_CONSTRAINT_PREFIX}{c.kind.value}]"]
        if c.kind is ConstraintKind.ANGLE_BOUND:
            lines.append(_angle_line("bound", c.bound))
        else:
            lines.append(f"bound = {f(c.bound)}")
        if c.gamma_scale != 1.0:
            lines.append(f"gamma_scale = {f(c.gamma_scale)}")
    return "\n".join(lines) + "\n"


def bundled_path(name: str):
    """Path-like handle of a bundled scenario file (``scenario_a`` or ``scenario_b``)."""
    stem = name[:-4] if name.endswith(".cfg") else name
    if stem not in BUNDLED:
        raise ConfigurationError(f"no bundled scenario named {name!r}")
    return resources.files("dsmcbf").joinpath("scenarios", f"{stem}.cfg")


def read_config_text(path: str) -> tuple[str, str]:
    """Text and display name of a config file, a manifest, or a bundled scenario name.

    A manifest (JSON written by ``simulate``) contributes its resolved config
    echo, so re-running it reproduces the original run.
    """
    p = Path(path)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
        if p.suffix == ".json":
            try:
                text = json.loads(text)["config_text"]
            except (ValueError, KeyError, TypeError):
                raise ConfigurationError(f"{path}: not a run manifest") from None
        return text, str(p)
    try:
        handle = bundled_path(path)
    except ConfigurationError:
        raise ConfigurationError(f"{path}: no such file or bundled scenario") from None
    return handle.read_text(encoding="utf-8"), f"bundled:{handle.name}"


def load_config(path: str) -> ScenarioConfig:
    text, source = read_config_text(path)
    return parse_config(text, source)


__all__ = ["VerifyGrid", "parse_config", "parse_verify_grid", "serialize_config", "load_config",
           "read_config_text", "bundled_path", "deg_text", "fmt_float", "BUNDLED"]
