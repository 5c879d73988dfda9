"""Experiment configuration: TOML-backed dataclasses, schema validation with
field-path error messages, and a stable content hash embedded in outputs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .integrator import IntegratorConfig
from .noise import CovarianceOperator, LevyModel, NoiseModel
from .spectral import SpectralField, unit_mode


@dataclass(frozen=True)
class X0Config:
    kind: str = "mode"  # "zero" | "mode" | "coeffs"
    mode: int = 1
    amplitude: float = 1.0
    coeffs: tuple[float, ...] = ()

    def build(self, m: int) -> SpectralField:
        if self.kind == "zero":
            return SpectralField(np.zeros(m))
        if self.kind == "mode":
            return SpectralField(unit_mode(self.mode, max(m, self.mode)).coeffs[:m] * self.amplitude)
        if self.kind == "coeffs":
            c = np.zeros(m)
            vals = np.asarray(self.coeffs, dtype=float)
            c[: min(m, vals.size)] = vals[:m]
            return SpectralField(c)
        raise ConfigError(f"unknown x0 kind {self.kind!r}", field="problem.x0.kind")


@dataclass(frozen=True)
class ProblemConfig:
    m: int = 4
    T: float = 0.25
    dt: float = 1e-3
    viscosity: float = 1.0
    include_nonlinearity: bool = True
    x0: X0Config = field(default_factory=X0Config)


@dataclass(frozen=True)
class CovarianceConfig:
    kind: str = "a_power"  # "a_power" | "explicit" | "none"
    alpha: float = 0.75
    eigenvalues: tuple[float, ...] = ()


@dataclass(frozen=True)
class LevyConfig:
    atoms: tuple[tuple[float, float], ...] = ()  # [[z, w], ...]
    sigma_j: float = 0.0
    profile_mode: int = 1


@dataclass(frozen=True)
class NoiseConfig:
    covariance: CovarianceConfig = field(default_factory=CovarianceConfig)
    levy: LevyConfig = field(default_factory=LevyConfig)


@dataclass(frozen=True)
class ControlConfig:
    rho: float = 0.5


@dataclass(frozen=True)
class PicardConfig:
    slices: int = 20
    max_iter: int = 12
    tol: float = 2e-3


@dataclass(frozen=True)
class HjbConfig:
    R: float = 2.0
    n_pts: int = 201
    dt_pde: float | None = None
    slices: int = 20
    method: str = "fd"  # "fd" | "picard" | "both"
    picard: PicardConfig = field(default_factory=PicardConfig)


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10_000
    n_paths_value: int = 10_000
    n_paths_gradient: int = 100_000
    n_paths_hessian: int = 200_000
    n_paths_picard: int = 1024
    n_record_paths: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    hjb: HjbConfig = field(default_factory=HjbConfig)
    mc: McConfig = field(default_factory=McConfig)
    seed: int = 0
    output_dir: str = "runs"

    # -- builders ----------------------------------------------------------

    def integrator_config(self) -> IntegratorConfig:
        p = self.problem
        return IntegratorConfig(
            m=p.m,
            dt=p.dt,
            T=p.T,
            viscosity=p.viscosity,
            include_nonlinearity=p.include_nonlinearity,
        )

    def noise_model(self) -> NoiseModel:
        cov_cfg = self.noise.covariance
        if cov_cfg.kind == "none":
            cov = None
        elif cov_cfg.kind == "a_power":
            cov = CovarianceOperator.a_power(cov_cfg.alpha)
        else:
            cov = CovarianceOperator.explicit(cov_cfg.eigenvalues)
        lv = self.noise.levy
        levy = None
        if lv.atoms and lv.sigma_j != 0.0:
            levy = LevyModel(
                atoms=lv.atoms,
                sigma_j=lv.sigma_j,
                profile=unit_mode(lv.profile_mode, max(self.problem.m, lv.profile_mode)),
            )
        return NoiseModel(covariance=cov, levy=levy)

    def x0_field(self) -> SpectralField:
        return self.problem.x0.build(self.problem.m)

    def resolved_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.resolved_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# TOML loading with field-path diagnostics
# ---------------------------------------------------------------------------

def _require(table: dict, key: str, typ, path: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError("missing required field", field=f"{path}.{key}")
        return default
    val = table[key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(
            f"expected {getattr(typ, '__name__', typ)}, got {type(val).__name__}",
            field=f"{path}.{key}",
        )
    return val


def _check_positive(value, path: str, strict: bool = True):
    if value is None:
        return
    if (strict and value <= 0) or (not strict and value < 0):
        raise ConfigError(f"must be {'positive' if strict else 'nonnegative'}, got {value}", field=path)


def _known_keys(table: dict, keys: set, path: str):
    unknown = set(table) - keys
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}", field=path)


def config_from_dict(raw: dict) -> ExperimentConfig:
    _known_keys(raw, {"problem", "noise", "control", "hjb", "mc", "seed", "output_dir"}, "config")

    prob = raw.get("problem", {})
    _known_keys(prob, {"m", "T", "dt", "viscosity", "include_nonlinearity", "x0"}, "problem")
    x0_raw = prob.get("x0", {})
    _known_keys(x0_raw, {"kind", "mode", "amplitude", "coeffs"}, "problem.x0")
    x0 = X0Config(
        kind=_require(x0_raw, "kind", str, "problem.x0", default="mode"),
        mode=_require(x0_raw, "mode", int, "problem.x0", default=1),
        amplitude=_require(x0_raw, "amplitude", float, "problem.x0", default=1.0),
        coeffs=tuple(_require(x0_raw, "coeffs", list, "problem.x0", default=[])),
    )
    if x0.kind not in ("zero", "mode", "coeffs"):
        raise ConfigError(f"unknown kind {x0.kind!r}", field="problem.x0.kind")
    problem = ProblemConfig(
        m=_require(prob, "m", int, "problem", default=4),
        T=_require(prob, "T", float, "problem", default=0.25),
        dt=_require(prob, "dt", float, "problem", default=1e-3),
        viscosity=_require(prob, "viscosity", float, "problem", default=1.0),
        include_nonlinearity=_require(prob, "include_nonlinearity", bool, "problem", default=True),
        x0=x0,
    )
    _check_positive(problem.m, "problem.m")
    _check_positive(problem.T, "problem.T")
    _check_positive(problem.dt, "problem.dt")
    _check_positive(problem.viscosity, "problem.viscosity")
    if problem.dt > problem.T:
        raise ConfigError("dt must not exceed T", field="problem.dt")

    noi = raw.get("noise", {})
    _known_keys(noi, {"covariance", "levy"}, "noise")
    cov_raw = noi.get("covariance", {})
    _known_keys(cov_raw, {"kind", "alpha", "eigenvalues"}, "noise.covariance")
    cov = CovarianceConfig(
        kind=_require(cov_raw, "kind", str, "noise.covariance", default="a_power"),
        alpha=_require(cov_raw, "alpha", float, "noise.covariance", default=0.75),
        eigenvalues=tuple(_require(cov_raw, "eigenvalues", list, "noise.covariance", default=[])),
    )
    if cov.kind not in ("a_power", "explicit", "none"):
        raise ConfigError(f"unknown kind {cov.kind!r}", field="noise.covariance.kind")
    if cov.kind == "a_power" and cov.alpha <= 0.5:
        raise ConfigError(
            f"alpha = {cov.alpha} gives a non-trace-class covariance (needs alpha > 1/2)",
            field="noise.covariance.alpha",
        )
    if cov.kind == "explicit" and not cov.eigenvalues:
        raise ConfigError("explicit covariance needs eigenvalues", field="noise.covariance.eigenvalues")
    levy_raw = noi.get("levy", {})
    _known_keys(levy_raw, {"atoms", "sigma_j", "profile_mode"}, "noise.levy")
    atoms_raw = _require(levy_raw, "atoms", list, "noise.levy", default=[])
    atoms = []
    for i, pair in enumerate(atoms_raw):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError("each atom is a [mark, weight] pair", field=f"noise.levy.atoms[{i}]")
        z, w = float(pair[0]), float(pair[1])
        if w < 0:
            raise ConfigError("atom weight must be nonnegative", field=f"noise.levy.atoms[{i}]")
        atoms.append((z, w))
    levy = LevyConfig(
        atoms=tuple(atoms),
        sigma_j=_require(levy_raw, "sigma_j", float, "noise.levy", default=0.0),
        profile_mode=_require(levy_raw, "profile_mode", int, "noise.levy", default=1),
    )
    _check_positive(levy.profile_mode, "noise.levy.profile_mode")

    ctrl = raw.get("control", {})
    _known_keys(ctrl, {"rho"}, "control")
    control = ControlConfig(rho=_require(ctrl, "rho", float, "control", default=0.5))
    _check_positive(control.rho, "control.rho", strict=False)

    hjb_raw = raw.get("hjb", {})
    _known_keys(hjb_raw, {"R", "n_pts", "dt_pde", "slices", "method", "picard"}, "hjb")
    pic_raw = hjb_raw.get("picard", {})
    _known_keys(pic_raw, {"slices", "max_iter", "tol"}, "hjb.picard")
    picard = PicardConfig(
        slices=_require(pic_raw, "slices", int, "hjb.picard", default=20),
        max_iter=_require(pic_raw, "max_iter", int, "hjb.picard", default=12),
        tol=_require(pic_raw, "tol", float, "hjb.picard", default=2e-3),
    )
    hjb = HjbConfig(
        R=_require(hjb_raw, "R", float, "hjb", default=2.0),
        n_pts=_require(hjb_raw, "n_pts", int, "hjb", default=201),
        dt_pde=_require(hjb_raw, "dt_pde", float, "hjb", default=None),
        slices=_require(hjb_raw, "slices", int, "hjb", default=20),
        method=_require(hjb_raw, "method", str, "hjb", default="fd"),
        picard=picard,
    )
    if hjb.method not in ("fd", "picard", "both"):
        raise ConfigError(f"unknown method {hjb.method!r}", field="hjb.method")
    _check_positive(hjb.R, "hjb.R")
    if hjb.n_pts < 5:
        raise ConfigError("need at least 5 grid points per axis", field="hjb.n_pts")

    mc_raw = raw.get("mc", {})
    _known_keys(
        mc_raw,
        {
            "n_paths",
            "n_paths_value",
            "n_paths_gradient",
            "n_paths_hessian",
            "n_paths_picard",
            "n_record_paths",
        },
        "mc",
    )
    mc = McConfig(
        n_paths=_require(mc_raw, "n_paths", int, "mc", default=10_000),
        n_paths_value=_require(mc_raw, "n_paths_value", int, "mc", default=10_000),
        n_paths_gradient=_require(mc_raw, "n_paths_gradient", int, "mc", default=100_000),
        n_paths_hessian=_require(mc_raw, "n_paths_hessian", int, "mc", default=200_000),
        n_paths_picard=_require(mc_raw, "n_paths_picard", int, "mc", default=1024),
        n_record_paths=_require(mc_raw, "n_record_paths", int, "mc", default=2),
    )
    for name in ("n_paths", "n_paths_value", "n_paths_gradient", "n_paths_hessian", "n_paths_picard"):
        _check_positive(getattr(mc, name), f"mc.{name}")

    return ExperimentConfig(
        problem=problem,
        noise=NoiseConfig(covariance=cov, levy=levy),
        control=control,
        hjb=hjb,
        mc=mc,
        seed=_require(raw, "seed", int, "config", default=0),
        output_dir=_require(raw, "output_dir", str, "config", default="runs"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found", field="config")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error: {exc}", field=str(path)) from exc
    return config_from_dict(raw)
