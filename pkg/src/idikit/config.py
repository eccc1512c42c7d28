"""Experiment configuration: INI grammar, validation, problem construction.

The file format is plain configparser INI (sections of key = value lines).
Unknown sections or keys, missing required fields and ill-typed values all
raise :class:`ConfigError` naming the offending field.  See the README for
the full grammar.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import catalog
from .catalog import CatalogEntry
from .kernel import VolterraKernel
from .problem import (BallSet, BoxSet, PointSet, ProblemData,
                      RunningCost, TerminalCost, WholeSpace)
from .setvalued import BallOffset, PolytopeOffset, Singleton

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    pass


_KNOWN_SECTIONS = {"problem", "meshes", "solver", "run", "reference", "audit"}

_KNOWN_KEYS = {
    "problem": {"name", "inline", "dim", "variant", "radius", "vertices",
                "drift", "drift_scale", "kernel", "kernel_rate", "x0",
                "horizon", "epsilon", "m_F", "l_F", "beta", "alpha",
                "state_box_lo", "state_box_hi", "terminal", "terminal_target",
                "running", "running_x_weight", "running_v_weight", "omega",
                "omega_center", "omega_radius", "omega_point", "omega_lo",
                "omega_hi"},
    "meshes": {"k"},
    "solver": {"tol_stat", "max_iter", "endpoint_tol"},
    "run": {"seed", "output_dir", "label"},
    "reference": {"policy", "k", "constant_deviation", "feas_tol"},
    "audit": {"n_instances", "samples_per_cell", "policies", "mesh_k"},
}


@dataclass
class ExperimentConfig:
    entry: CatalogEntry
    mesh_ks: List[int]
    seed: int
    output_dir: str
    label: str
    tol_stat: float
    max_iter: int
    endpoint_tol: float
    reference_policy: str
    reference_k: int
    reference_constant: Optional[np.ndarray]
    reference_feas_tol: Optional[float]
    audit_instances: int
    audit_policies: List[str]
    audit_mesh_k: int
    snapshot: dict = field(default_factory=dict)


def _vector(raw: str, field_name: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in raw.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"field '{field_name}': expected numbers, got {raw!r}")


def _get(parser, section, key, cast, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"missing required field '{section}.{key}'")
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{section}.{key}': cannot parse {raw!r}")


def _build_inline_problem(parser) -> CatalogEntry:
    sec = "problem"
    name = _get(parser, sec, "name", str, required=True)
    dim = _get(parser, sec, "dim", int, required=True)
    variant = _get(parser, sec, "variant", str, required=True)
    drift = _get(parser, sec, "drift", str, default="zero")
    scale = _get(parser, sec, "drift_scale", float, default=0.0)

    if drift == "zero":
        f = lambda t, x: np.zeros(dim)
        jac = lambda t, x: np.zeros((dim, dim))
        drift_norm = lambda box_rad: 0.0
        l_f_auto = 0.0
    elif drift == "rotation":
        if dim != 2:
            raise ConfigError("field 'problem.drift': rotation needs dim = 2")
        A = scale * np.array([[0.0, 1.0], [-1.0, 0.0]])
        f = lambda t, x: A @ np.atleast_1d(x)
        jac = lambda t, x: A
        drift_norm = lambda box_rad: abs(scale) * box_rad
        l_f_auto = abs(scale)
    elif drift == "scalar_linear":
        if dim != 1:
            raise ConfigError("field 'problem.drift': scalar_linear needs dim = 1")
        f = lambda t, x: scale * np.atleast_1d(x)
        jac = lambda t, x: np.array([[scale]])
        drift_norm = lambda box_rad: abs(scale) * box_rad
        l_f_auto = abs(scale)
    else:
        raise ConfigError(f"field 'problem.drift': unknown drift {drift!r}")

    if variant == "singleton":
        fmap = Singleton(f, jac=jac)
        body_rad = 0.0
    elif variant == "ball":
        radius = _get(parser, sec, "radius", float, required=True)
        fmap = BallOffset(f, radius, jac=jac)
        body_rad = radius
    elif variant == "polytope":
        raw = _get(parser, sec, "vertices", str, required=True)
        rows = [r for r in raw.split(";") if r.strip()]
        verts = np.array([_vector(r, "problem.vertices") for r in rows])
        if verts.shape[1] != dim:
            raise ConfigError("field 'problem.vertices': dimension mismatch")
        fmap = PolytopeOffset(f, verts, jac=jac)
        body_rad = float(np.linalg.norm(verts, axis=1).max())
    else:
        raise ConfigError(f"field 'problem.variant': unknown variant {variant!r}")

    kernel_name = _get(parser, sec, "kernel", str, default="none")
    if kernel_name == "none":
        kern = VolterraKernel.zero()
        beta_auto = alpha_auto = 0.0
    elif kernel_name == "negative_identity":
        kern = VolterraKernel(lambda t, s, x: -np.asarray(x, dtype=float),
                              jac=lambda t, s, x: -np.eye(dim),
                              beta=1.0, alpha=1.0)
        beta_auto = alpha_auto = 1.0
    elif kernel_name == "identity_decay":
        rate = _get(parser, sec, "kernel_rate", float, default=1.0)
        kern = VolterraKernel(
            lambda t, s, x: -np.exp(-rate * (t - s)) * np.asarray(x, dtype=float),
            jac=lambda t, s, x: -np.exp(-rate * (t - s)) * np.eye(dim),
            beta=1.0, alpha=1.0)
        beta_auto = alpha_auto = 1.0
    else:
        raise ConfigError(f"field 'problem.kernel': unknown kernel {kernel_name!r}")

    x0 = _vector(_get(parser, sec, "x0", str, required=True), "problem.x0")
    if x0.size != dim:
        raise ConfigError("field 'problem.x0': dimension mismatch")
    horizon = _get(parser, sec, "horizon", float, required=True)
    if horizon <= 0:
        raise ConfigError("field 'problem.horizon': must be positive")
    eps = _get(parser, sec, "epsilon", float, default=1.0)

    lo = _vector(_get(parser, sec, "state_box_lo", str, required=True),
                 "problem.state_box_lo")
    hi = _vector(_get(parser, sec, "state_box_hi", str, required=True),
                 "problem.state_box_hi")
    box_rad = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    m_f = _get(parser, sec, "m_F", float,
               default=drift_norm(box_rad) + body_rad)
    l_f = _get(parser, sec, "l_F", float, default=l_f_auto)
    beta = _get(parser, sec, "beta", float, default=beta_auto)
    alpha = _get(parser, sec, "alpha", float, default=alpha_auto)

    terminal = _get(parser, sec, "terminal", str, default="none")
    if terminal == "none":
        phi = TerminalCost.zero()
    elif terminal == "quadratic":
        target = _vector(_get(parser, sec, "terminal_target", str,
                              default=" ".join(["0"] * dim)),
                         "problem.terminal_target")
        phi = TerminalCost(
            value=lambda x: 0.5 * float(np.sum((np.atleast_1d(x) - target) ** 2)),
            grad=lambda x: np.atleast_1d(x) - target)
    else:
        raise ConfigError(f"field 'problem.terminal': unknown cost {terminal!r}")

    running = _get(parser, sec, "running", str, default="none")
    if running == "none":
        lrun = RunningCost.zero()
    elif running == "quadratic":
        cx = _get(parser, sec, "running_x_weight", float, default=1.0)
        cv = _get(parser, sec, "running_v_weight", float, default=1.0)
        lrun = RunningCost(
            value=lambda t, x, v: 0.5 * (cx * float(np.sum(np.atleast_1d(x) ** 2))
                                         + cv * float(np.sum(np.atleast_1d(v) ** 2))),
            grad_x=lambda t, x, v: cx * np.atleast_1d(x),
            grad_v=lambda t, x, v: cv * np.atleast_1d(v))
    else:
        raise ConfigError(f"field 'problem.running': unknown cost {running!r}")

    omega_kind = _get(parser, sec, "omega", str, default="free")
    if omega_kind == "free":
        omega = WholeSpace()
    elif omega_kind == "ball":
        center = _vector(_get(parser, sec, "omega_center", str, required=True),
                         "problem.omega_center")
        omega = BallSet(center, _get(parser, sec, "omega_radius", float,
                                     required=True))
    elif omega_kind == "point":
        omega = PointSet(_vector(_get(parser, sec, "omega_point", str,
                                      required=True), "problem.omega_point"))
    elif omega_kind == "box":
        omega = BoxSet(_vector(_get(parser, sec, "omega_lo", str, required=True),
                               "problem.omega_lo"),
                       _vector(_get(parser, sec, "omega_hi", str, required=True),
                               "problem.omega_hi"))
    else:
        raise ConfigError(f"field 'problem.omega': unknown shape {omega_kind!r}")

    problem = ProblemData(
        name=name, fmap=fmap, kernel=kern, x0=x0, horizon=horizon,
        omega=omega, terminal_cost=phi, running_cost=lrun, m_F=m_f, l_F=l_f,
        beta=beta, alpha=alpha, state_box=(lo, hi), epsilon=eps)
    return CatalogEntry(problem, None)


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (m_F vs m_f)
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    for section in parser.sections():
        if section not in _KNOWN_SECTIONS:
            raise ConfigError(f"unknown section '[{section}]'")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown field '{section}.{key}'")

    if not parser.has_section("problem"):
        raise ConfigError("missing required section '[problem]'")
    inline = _get(parser, "problem", "inline", bool, default=False)
    name = _get(parser, "problem", "name", str, required=True)
    if inline:
        entry = _build_inline_problem(parser)
    else:
        if name not in catalog.names():
            raise ConfigError(
                f"field 'problem.name': unknown catalog problem {name!r}; "
                f"known: {catalog.names()} (set inline = true for custom)")
        overrides = {}
        horizon = _get(parser, "problem", "horizon", float)
        if horizon is not None:
            overrides["T"] = horizon
        entry = catalog.get(name, **overrides)
        m_f = _get(parser, "problem", "m_F", float)
        if m_f is not None:  # declared-constant override, e.g. for audits
            from dataclasses import replace
            entry = CatalogEntry(replace(entry.problem, m_F=m_f),
                                 entry.reference, entry.oracle)

    ks_raw = _get(parser, "meshes", "k", str, default="20 40 80") \
        if parser.has_section("meshes") else "20 40 80"
    try:
        ks = [int(tok) for tok in ks_raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"field 'meshes.k': expected integers, got {ks_raw!r}")
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
        raise ConfigError("field 'meshes.k': need a strictly increasing list")

    const_raw = _get(parser, "reference", "constant_deviation", str) \
        if parser.has_section("reference") else None
    snapshot = {s: dict(parser.items(s)) for s in parser.sections()}
    policies_raw = _get(parser, "audit", "policies", str,
                        default="min_norm extreme constant") \
        if parser.has_section("audit") else "min_norm extreme constant"

    return ExperimentConfig(
        entry=entry,
        mesh_ks=ks,
        seed=_get(parser, "run", "seed", int, default=0)
        if parser.has_section("run") else 0,
        output_dir=_get(parser, "run", "output_dir", str, default="idikit_out")
        if parser.has_section("run") else "idikit_out",
        label=_get(parser, "run", "label", str, default=name)
        if parser.has_section("run") else name,
        tol_stat=_get(parser, "solver", "tol_stat", float, default=1e-7)
        if parser.has_section("solver") else 1e-7,
        max_iter=_get(parser, "solver", "max_iter", int, default=20000)
        if parser.has_section("solver") else 20000,
        endpoint_tol=_get(parser, "solver", "endpoint_tol", float, default=1e-6)
        if parser.has_section("solver") else 1e-6,
        reference_policy=_get(parser, "reference", "policy", str,
                              default="min_norm")
        if parser.has_section("reference") else "min_norm",
        reference_k=_get(parser, "reference", "k", int, default=0)
        if parser.has_section("reference") else 0,
        reference_constant=None if const_raw is None
        else _vector(const_raw, "reference.constant_deviation"),
        reference_feas_tol=_get(parser, "reference", "feas_tol", float)
        if parser.has_section("reference") else None,
        audit_instances=_get(parser, "audit", "n_instances", int, default=1000)
        if parser.has_section("audit") else 1000,
        audit_policies=policies_raw.replace(",", " ").split(),
        audit_mesh_k=_get(parser, "audit", "mesh_k", int, default=24)
        if parser.has_section("audit") else 24,
        snapshot=snapshot,
    )
