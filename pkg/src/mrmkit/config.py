"""Structured text configuration for the experiment runner.

Flat INI-style sections ([model], [grid], [set], [run], [output]) with
typed, closed-world parsing: unknown keys are rejected, and every
constraint of the downstream modules is re-validated at parse time so no
invalid configuration reaches a sampler.
"""

import configparser
import hashlib
import math
from dataclasses import dataclass, field as dfield
from typing import Optional

from . import chaos2d, fractal, levy
from .cones import ConeParams
from .errors import ValidationError

__all__ = [
    "ExperimentConfig",
    "ConfigErrors",
    "parse_config",
    "parse_config_text",
    "config_hash",
    "triple_to_model_lines",
    "COMMANDS",
]

COMMANDS = (
    "zeta-table",
    "simulate-1d",
    "kpz-1d",
    "scaling-check",
    "kpz-2d",
    "gff-kpz",
    "geometry-selftest",
)

_MODEL_KEYS = {
    "lognormal": {"kind", "sigma2", "t"},
    "lebesgue": {"kind", "t"},
    "compound-poisson": {"kind", "sigma2", "atoms", "t"},
    "density": {"kind", "sigma2", "family", "c", "beta", "alpha", "hi", "eps", "x_max", "t"},
    "lognormal-2d": {"kind", "gamma2", "r_scale", "l"},
    "gff-disk": {"kind", "gamma2", "r_scale", "r_set"},
}
_GRID_KEYS_1D = {"n", "l"}
_GRID_KEYS_2D = {"n", "extent", "x0", "y0"}
_SET_KEYS = {"kind", "ratio", "depth", "points", "side", "x0", "y0"}
_RUN_KEYS = {
    "replicas", "seed", "q_list", "scale_list", "lambda", "levels",
    "box_scales", "tolerance", "threads", "n_configs",
}
_OUTPUT_KEYS = {"directory", "formats"}


class ConfigErrors(ValidationError):
    """Carries the full machine-readable list of validation failures."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    command: str
    model: dict
    grid: dict
    fset: dict
    run: dict
    output: dict
    raw_text: str

    # -- builders ----------------------------------------------------------
    def triple(self) -> levy.LevyTriple:
        m = self.model
        kind = m["kind"]
        if kind == "lebesgue":
            return levy.lebesgue_triple()
        if kind == "lognormal":
            return levy.lognormal_triple(m["sigma2"])
        if kind == "compound-poisson":
            nu = levy.AtomicJumps(xs=tuple(x for x, _ in m["atoms"]),
                                  ws=tuple(w for _, w in m["atoms"]))
            return levy.normalize(m.get("sigma2", 0.0), nu)
        if kind == "density":
            if m["family"] == "exponential":
                nu = levy.exponential_jumps(m["c"], m["beta"], eps=m.get("eps", 1e-6),
                                            x_max=m.get("x_max"))
            else:
                nu = levy.power_small_jumps(m["c"], m["alpha"], hi=m.get("hi", 1.0),
                                            eps=m.get("eps", 1e-4))
            return levy.normalize(m.get("sigma2", 0.0), nu)
        raise ValidationError(f"model kind {kind} has no 1D triple")

    def cone(self) -> ConeParams:
        return ConeParams(l=self.grid["l"], T=self.model.get("t", 1.0))

    def grid2d(self) -> chaos2d.Grid2D:
        g = self.grid
        ext = g["extent"]
        return chaos2d.Grid2D(x0=g.get("x0", -ext / 2.0), y0=g.get("y0", -ext / 2.0),
                              side=ext, n=g["n"])

    def kernel2d(self) -> chaos2d.Kernel2D:
        m = self.model
        if m["kind"] == "lognormal-2d":
            return chaos2d.lognormal_kernel2d(m["gamma2"], m["r_scale"], m["l"])
        return chaos2d.gff_kernel2d(m["gamma2"], m["r_scale"], self.grid2d().h)

    def fractal_set(self):
        s = self.fset
        if s["kind"] == "cantor":
            return fractal.make_cantor(s["ratio"], s["depth"],
                                       domain_length=self.model.get("t", 1.0))
        if s["kind"] == "interval":
            return fractal.full_interval(self.model.get("t", 1.0))
        if s["kind"] == "points":
            return fractal.point_set(s["points"])
        if s["kind"] == "dust":
            return chaos2d.make_dust(s["ratio"], s["depth"], self._set_square())
        if s["kind"] == "full-square":
            return chaos2d.full_square(self._set_square())
        raise ValidationError(f"unknown set kind {s['kind']}")

    def _set_square(self):
        s = self.fset
        g = self.grid
        side = s.get("side", g["extent"] * 0.9)
        x0 = s.get("x0", -side / 2.0)
        y0 = s.get("y0", -side / 2.0)
        return (x0, y0, side)


def _parse_float(raw, errors, where):
    try:
        return float(raw)
    except ValueError:
        errors.append(f"{where}: not a number: {raw!r}")
        return math.nan


def _parse_int(raw, errors, where):
    try:
        return int(raw)
    except ValueError:
        errors.append(f"{where}: not an integer: {raw!r}")
        return 0


def _parse_list(raw, errors, where):
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        errors.append(f"{where}: not a comma-separated number list: {raw!r}")
        return []


def _parse_atoms(raw, errors, where):
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            errors.append(f"{where}: atoms need x:w pairs, got {item!r}")
            continue
        try:
            out.append((float(parts[0]), float(parts[1])))
        except ValueError:
            errors.append(f"{where}: bad atom pair {item!r}")
    return out


def parse_config_text(text: str, command: str) -> ExperimentConfig:
    """Parse and fully validate a configuration for the given command.

    Raises ConfigErrors carrying every violation found.
    """
    if command not in COMMANDS:
        raise ConfigErrors([f"unknown command {command!r}"])
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    errors = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigErrors([f"config syntax: {exc}"]) from exc

    known_sections = {"model", "grid", "set", "run", "output"}
    for sec in cp.sections():
        if sec not in known_sections:
            errors.append(f"unknown section [{sec}]")

    model = _parse_model(cp, command, errors)
    grid = _parse_grid(cp, command, model, errors)
    fset = _parse_set(cp, command, grid, errors)
    run = _parse_run(cp, errors)
    output = _parse_output(cp, errors)
    cfg = ExperimentConfig(command=command, model=model, grid=grid, fset=fset,
                           run=run, output=output, raw_text=text)
    _cross_validate(cfg, errors)
    if errors:
        raise ConfigErrors(errors)
    return cfg


def parse_config(path: str, command: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), command)


def _needs_model(command):
    return command != "geometry-selftest"


def _is_2d(command):
    return command in ("kpz-2d", "gff-kpz")


def _parse_model(cp, command, errors):
    if not _needs_model(command):
        return {}
    if not cp.has_section("model"):
        errors.append("missing [model] section")
        return {}
    sec = dict(cp.items("model"))
    kind = sec.get("kind", "").strip()
    if kind not in _MODEL_KEYS:
        errors.append(f"model.kind must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
        return {"kind": kind}
    allowed = _MODEL_KEYS[kind]
    for key in sec:
        if key not in allowed:
            errors.append(f"model.{key}: unknown key for kind {kind}")
    out = {"kind": kind}
    for key, raw in sec.items():
        if key == "kind" or key not in allowed:
            continue
        if key == "atoms":
            out[key] = _parse_atoms(raw, errors, "model.atoms")
        elif key == "family":
            fam = raw.strip()
            if fam not in ("exponential", "power"):
                errors.append(f"model.family must be exponential or power, got {fam!r}")
            out[key] = fam
        else:
            out[key] = _parse_float(raw, errors, f"model.{key}")
    if _is_2d(command) and kind not in ("lognormal-2d", "gff-disk"):
        errors.append(f"command {command} needs a 2D model, got kind {kind}")
    if not _is_2d(command) and command != "zeta-table" and kind in ("lognormal-2d", "gff-disk"):
        if command != "scaling-check":
            errors.append(f"command {command} needs a 1D model, got kind {kind}")
    return out


def _parse_grid(cp, command, model, errors):
    needs_grid = command in ("simulate-1d", "kpz-1d", "scaling-check", "kpz-2d", "gff-kpz")
    if not needs_grid:
        return {}
    if not cp.has_section("grid"):
        errors.append("missing [grid] section")
        return {}
    sec = dict(cp.items("grid"))
    two_d = model.get("kind") in ("lognormal-2d", "gff-disk")
    allowed = _GRID_KEYS_2D if two_d else _GRID_KEYS_1D
    out = {}
    for key, raw in sec.items():
        if key not in allowed:
            errors.append(f"grid.{key}: unknown key")
            continue
        out[key] = _parse_int(raw, errors, f"grid.{key}") if key == "n" \
            else _parse_float(raw, errors, f"grid.{key}")
    for key in ("n",) if two_d else ("n", "l"):
        if key not in out:
            errors.append(f"grid.{key}: required")
    if two_d and "extent" not in out:
        errors.append("grid.extent: required for 2D models")
    return out


def _parse_set(cp, command, grid, errors):
    needs_set = command in ("kpz-1d", "kpz-2d", "gff-kpz")
    if not needs_set:
        return {}
    if not cp.has_section("set"):
        errors.append("missing [set] section")
        return {}
    sec = dict(cp.items("set"))
    kind = sec.get("kind", "").strip()
    valid_1d = ("cantor", "interval", "points")
    valid_2d = ("dust", "full-square")
    valid = valid_2d if command in ("kpz-2d", "gff-kpz") else valid_1d
    if kind not in valid:
        errors.append(f"set.kind must be one of {valid} for {command}, got {kind!r}")
    out = {"kind": kind}
    for key, raw in sec.items():
        if key == "kind":
            continue
        if key not in _SET_KEYS:
            errors.append(f"set.{key}: unknown key")
            continue
        if key == "depth":
            out[key] = _parse_int(raw, errors, "set.depth")
        elif key == "points":
            out[key] = _parse_list(raw, errors, "set.points")
        else:
            out[key] = _parse_float(raw, errors, f"set.{key}")
    if kind in ("cantor", "dust"):
        if "ratio" not in out:
            errors.append("set.ratio: required for cantor/dust")
        if "depth" not in out:
            errors.append("set.depth: required for cantor/dust")
    if kind == "points" and not out.get("points"):
        errors.append("set.points: required for point sets")
    return out


def _parse_run(cp, errors):
    out = {"replicas": 100, "seed": 0, "threads": 1, "tolerance": None,
           "q_list": [], "scale_list": [], "lambda": 0.5,
           "levels": [3, 4, 5, 6], "box_scales": list(fractal.DYADIC_SCALES),
           "n_configs": 50}
    if not cp.has_section("run"):
        return out
    for key, raw in cp.items("run"):
        if key not in _RUN_KEYS:
            errors.append(f"run.{key}: unknown key")
            continue
        if key in ("replicas", "seed", "threads", "n_configs"):
            out[key] = _parse_int(raw, errors, f"run.{key}")
        elif key in ("q_list", "scale_list", "box_scales"):
            out[key] = _parse_list(raw, errors, f"run.{key}")
        elif key == "levels":
            out[key] = [int(v) for v in _parse_list(raw, errors, "run.levels")]
        else:
            out[key] = _parse_float(raw, errors, f"run.{key}")
    return out


def _parse_output(cp, errors):
    out = {"directory": "out", "formats": "csv"}
    if not cp.has_section("output"):
        return out
    for key, raw in cp.items("output"):
        if key not in _OUTPUT_KEYS:
            errors.append(f"output.{key}: unknown key")
            continue
        out[key] = raw.strip()
    if out["formats"] not in ("csv",):
        errors.append(f"output.formats: only 'csv' is supported, got {out['formats']!r}")
    return out


def _cross_validate(cfg: ExperimentConfig, errors):
    m, g, s, r = cfg.model, cfg.grid, cfg.fset, cfg.run
    kind = m.get("kind")
    if kind in ("lognormal-2d", "gff-disk"):
        gamma2 = m.get("gamma2", math.nan)
        if not (0.0 <= gamma2 < 4.0):
            errors.append(f"model.gamma2 must lie in [0, 4), got {gamma2}")
        if m.get("r_scale", 0.0) <= 0.0:
            errors.append("model.r_scale must be > 0")
        if kind == "lognormal-2d":
            l = m.get("l", math.nan)
            if not (0.0 < l <= m.get("r_scale", math.inf)):
                errors.append("model.l must satisfy 0 < l <= r_scale")
        if kind == "gff-disk":
            if not (0.0 < m.get("r_set", math.nan) < m.get("r_scale", 0.0)):
                errors.append("model.r_set must satisfy 0 < r_set < r_scale")
        n = g.get("n", 0)
        if n and not (1 <= n <= 64):
            errors.append("grid.n must lie in [1, 64] for the dense 2D path")
        if n and n & (n - 1):
            errors.append("grid.n must be a power of two for dyadic content sums")
        if g.get("extent", 1.0) <= 0.0:
            errors.append("grid.extent must be > 0")
        if r["levels"] and n:
            mlev = int(round(math.log2(n)))
            bad = [v for v in r["levels"] if not (1 <= v <= mlev)]
            if bad:
                errors.append(f"run.levels {bad} outside [1, log2(n)]")
        if kind == "gff-disk" and g.get("n") and not errors:
            # the grid square must sit strictly inside the disk
            gg = cfg.grid2d()
            corner = math.hypot(max(abs(gg.x0), abs(gg.x0 + gg.side)),
                                max(abs(gg.y0), abs(gg.y0 + gg.side)))
            if corner >= m["r_scale"]:
                errors.append("grid square must sit strictly inside the gff disk")
    elif kind is not None and cfg.command != "zeta-table":
        T = m.get("t", 1.0)
        if T <= 0.0:
            errors.append("model.t must be > 0")
        if "l" in g:
            l = g["l"]
            if not (0.0 < l <= T):
                errors.append("grid.l must satisfy 0 < l <= T")
            n = g.get("n", 0)
            if n and n > 8192:
                errors.append("grid.n must be <= 8192 (dense Cholesky cap)")
            if n and l and T / n > l / 4.0 * (1.0 + 1e-12):
                errors.append("grid spacing T/n must be <= l/4")
    if kind == "lognormal" and m.get("sigma2", -1.0) < 0.0:
        errors.append("model.sigma2 must be >= 0")
    if kind == "compound-poisson":
        if not m.get("atoms"):
            errors.append("model.atoms: at least one x:w atom required")
        elif any(w <= 0.0 for _, w in m["atoms"]):
            errors.append("model.atoms: weights must be > 0")
    if s.get("kind") in ("cantor", "dust"):
        ratio = s.get("ratio", math.nan)
        if not (0.0 < ratio <= 0.5):
            errors.append("set.ratio must lie in (0, 1/2]")
        if not (1 <= s.get("depth", 0) <= 16):
            errors.append("set.depth must lie in [1, 16]")
    if r["replicas"] < 1:
        errors.append("run.replicas must be >= 1")
    if r["threads"] < 1:
        errors.append("run.threads must be >= 1")
    if not (0.0 < r["lambda"] <= 1.0):
        errors.append("run.lambda must lie in (0, 1]")
    if any(q < 0.0 for q in r["q_list"]):
        errors.append("run.q_list must be >= 0")
    if cfg.command in ("kpz-2d", "gff-kpz") and s.get("kind") == "dust" and not errors:
        sq = cfg._set_square()
        gg = cfg.grid2d()
        if (sq[0] < gg.x0 - 1e-12 or sq[1] < gg.y0 - 1e-12
                or sq[0] + sq[2] > gg.x0 + gg.side + 1e-12
                or sq[1] + sq[2] > gg.y0 + gg.side + 1e-12):
            errors.append("set square must lie inside the grid square")
    if cfg.command == "gff-kpz" and not errors:
        kset = cfg.fractal_set()
        if kset.max_radius() > m["r_set"] * (1.0 + 1e-12):
            errors.append("the set must lie inside B(0, r_set)")


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def triple_to_model_lines(triple: levy.LevyTriple, T: float = 1.0) -> str:
    """Serialize a triple back to [model] config lines (round-trips through
    parse_config_text for the supported families)."""
    nu = triple.nu
    if nu is None:
        if triple.sigma2 == 0.0 and triple.m == 0.0:
            return f"[model]\nkind = lebesgue\nt = {T!r}\n"
        return f"[model]\nkind = lognormal\nsigma2 = {triple.sigma2!r}\nt = {T!r}\n"
    if isinstance(nu, levy.AtomicJumps):
        atoms = ", ".join(f"{x!r}:{w!r}" for x, w in zip(nu.xs, nu.ws))
        return (f"[model]\nkind = compound-poisson\nsigma2 = {triple.sigma2!r}\n"
                f"atoms = {atoms}\nt = {T!r}\n")
    if isinstance(nu, levy.DensityJumps) and nu.label in ("exponential", "power"):
        p = nu.params
        if nu.label == "exponential":
            extra = f"c = {p['c']!r}\nbeta = {p['beta']!r}\nx_max = {nu.x_max!r}\n"
        else:
            extra = f"c = {p['c']!r}\nalpha = {p['alpha']!r}\nhi = {p['hi']!r}\n"
        return (f"[model]\nkind = density\nsigma2 = {triple.sigma2!r}\n"
                f"family = {nu.label}\n{extra}eps = {nu.eps!r}\nt = {T!r}\n")
    raise ValidationError("only named density families serialize to config text")
