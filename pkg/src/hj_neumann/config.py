"""Experiment configuration: INI sections, strict validation, semantic hash."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field

from . import geometry as geo
from . import models
from .errors import ConfigError

_GE_KEYS = {"kind", "bounds", "h", "band"}
_HA_KEYS = {"name", "potential", "coeff", "speed", "offset", "coeffs"}
_BD_KEYS = {"name", "kind", "g", "gamma_scale", "forms"}
_RUN_KEYS = {"subcommand", "t_final", "dt", "record_every", "epsilon_schedule",
             "n_velocity", "n_intensity", "v_max", "seed", "out", "u0",
             "aubry_tol", "eta", "delta", "start", "control", "y",
             "t1", "t2", "normalize", "sample_budget"}

SUBCOMMANDS = ("evolve", "ergodic", "value", "crosscheck", "skorokhod",
               "distance", "aubry", "asymptotic", "monotonicity", "audit",
               "report")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


@dataclass
class ExperimentConfig:
    """Validated experiment description; see docs/config grammar in README."""

    geometry: dict
    hamiltonian: dict
    boundary: dict
    run: dict
    path: str = ""
    semantic: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.semantic, sort_keys=True).encode()).hexdigest()[:16]

    # -- builders ------------------------------------------------------------

    def build_geometry(self) -> geo.DomainGeometry:
        g = self.geometry
        kind, b = g["kind"], g["bounds"]
        if kind == "interval":
            if len(b) != 2:
                raise ConfigError("interval bounds need 2 numbers")
            return geo.interval(*b)
        if kind == "rectangle":
            if len(b) != 4:
                raise ConfigError("rectangle bounds need 4 numbers")
            return geo.rectangle(*b)
        if kind == "disc":
            if len(b) != 3:
                raise ConfigError("disc parameters are cx, cy, r")
            return geo.disc(*b)
        raise ConfigError(f"unsupported geometry kind {kind!r} in config")

    def build_hamiltonian(self, geom) -> models.Hamiltonian:
        hm = self.hamiltonian
        name = hm["name"]
        if name == "quadratic":
            return models.quadratic(geom.dim, potential=hm.get("potential"),
                                    coeff=hm.get("coeff", 0.5))
        if name == "eikonal":
            return models.eikonal(geom.dim, speed=hm.get("speed"))
        if name == "double_well":
            return models.double_well(geom.dim, offset=hm.get("offset", 0.0))
        if name == "poly1d":
            if geom.dim != 1:
                raise ConfigError("poly1d needs a 1-D geometry")
            return models.poly1d(hm["coeffs"])
        raise ConfigError(f"unknown hamiltonian {name!r}")

    def build_boundary(self, geom) -> models.BoundaryOperator:
        bd = self.boundary
        name = bd["name"]
        if name == "neumann":
            return models.neumann(geom)
        if name == "affine":
            return models.affine(geom, gamma=bd.get("gamma_scale"),
                                 g=bd.get("g", 0.0))
        if name == "max_affine":
            forms = bd.get("forms")
            if not forms:
                raise ConfigError("max_affine needs forms = scale:g, scale:g, ...")
            return models.max_affine(geom, forms)
        raise ConfigError(f"unknown boundary model {name!r}")


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for sec in ("geometry", "hamiltonian", "boundary", "run"):
        if sec not in cp:
            raise ConfigError(f"missing [{sec}] section in {path}")
    extra = set(cp.sections()) - {"geometry", "hamiltonian", "boundary", "run"}
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")

    def check_keys(sec, allowed):
        unknown = set(cp[sec]) - allowed
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} in [{sec}]")

    check_keys("geometry", _GE_KEYS)
    check_keys("hamiltonian", _HA_KEYS)
    check_keys("boundary", _BD_KEYS)
    check_keys("run", _RUN_KEYS)

    g = cp["geometry"]
    geometry = {
        "kind": g.get("kind", "interval"),
        "bounds": _floats(g.get("bounds", "0, 1")),
        "h": g.getfloat("h"),
        "band": g.getfloat("band", geo.DEFAULT_BAND),
    }
    if geometry["h"] is None or geometry["h"] <= 0:
        raise ConfigError("[geometry] h must be a positive number")
    if not 0 < geometry["band"] <= 0.9:
        raise ConfigError("[geometry] band must lie in (0, 0.9]")

    hm = cp["hamiltonian"]
    hamiltonian = {"name": hm.get("name", "quadratic")}
    for key in ("potential", "speed"):
        if hm.get(key):
            hamiltonian[key] = hm.get(key)
    if hm.get("coeff"):
        hamiltonian["coeff"] = hm.getfloat("coeff")
    if hm.get("offset"):
        hamiltonian["offset"] = hm.getfloat("offset")
    if hm.get("coeffs"):
        hamiltonian["coeffs"] = _floats(hm.get("coeffs"))

    bd = cp["boundary"]
    boundary = {"name": bd.get("name", "neumann"),
                "kind": bd.get("kind", "cn")}
    if boundary["kind"] not in ("cn", "dbc"):
        raise ConfigError("[boundary] kind must be cn or dbc")
    if bd.get("g"):
        text = bd.get("g")
        try:
            boundary["g"] = float(text)
        except ValueError:
            boundary["g"] = text
    if bd.get("gamma_scale"):
        boundary["gamma_scale"] = bd.getfloat("gamma_scale")
    if bd.get("forms"):
        forms = []
        for part in bd.get("forms").split(","):
            try:
                scale, gv = part.split(":")
                forms.append((float(scale), float(gv)))
            except ValueError:
                raise ConfigError(f"bad max_affine form {part!r}; "
                                  "use scale:g, scale:g, ...") from None
        boundary["forms"] = forms

    rn = cp["run"]
    sub = rn.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"[run] subcommand must be one of {SUBCOMMANDS}")
    run = {
        "subcommand": sub,
        "t_final": rn.getfloat("t_final", 1.0),
        "dt": rn.getfloat("dt", 0.0),
        "record_every": rn.getfloat("record_every", 0.0),
        "epsilon_schedule": _floats(rn.get("epsilon_schedule",
                                           "0.1, 0.03, 0.01, 0.003, 0.001")),
        "n_velocity": rn.getint("n_velocity", 0),
        "n_intensity": rn.getint("n_intensity", 8),
        "v_max": rn.getfloat("v_max", 0.0),
        "seed": rn.getint("seed", 0),
        "out": rn.get("out", "out"),
        "u0": rn.get("u0", "0"),
        "aubry_tol": rn.getfloat("aubry_tol", 0.0),
        "eta": rn.getfloat("eta", 0.05),
        "delta": rn.getfloat("delta", 0.05),
        "start": _floats(rn.get("start", "0.5")),
        "control": rn.get("control", "constant:1.0"),
        "y": _floats(rn.get("y", "0.5")),
        "t1": rn.getfloat("t1", 0.0),
        "t2": rn.getfloat("t2", 0.0),
        "normalize": rn.get("normalize", "auto"),
        "sample_budget": rn.getint("sample_budget", 400),
    }
    if run["normalize"] not in ("auto", "none"):
        raise ConfigError("[run] normalize must be auto or none")
    if run["t_final"] < 0:
        raise ConfigError("[run] t_final must be nonnegative")

    semantic = {"geometry": geometry, "hamiltonian": hamiltonian,
                "boundary": boundary,
                "run": {k: v for k, v in run.items() if k != "out"}}
    return ExperimentConfig(geometry, hamiltonian, boundary, run, str(path),
                            semantic)
