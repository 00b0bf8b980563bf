"""Run configuration: dataclasses, JSON (de)serialization, validation.

This module is deliberately free of numpy imports so the CLI can parse a
configuration (and set thread environment variables) before any numerical
library is loaded.

Unknown keys in a configuration document are rejected outright: a typo in
a tolerance name must fail the run, not silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class KernelConfig:
    """Scattering kernel parameters within the admissibility window."""

    beta: float = 1.0
    delta: float = 0.0
    gamma: float = 0.0
    form_id: str = "g2_over_1plusg"
    # Two conventions for the invariant s circulate: 4 + 4g^2 and
    # 2(u0 v0 - u.v - 1); only the first is consistent with the Moller
    # factor 2g sqrt(1+g^2)/(u0 v0) used here, so it is the default.
    s_convention: str = "consistent"

    def validate(self) -> None:
        if not (0.0 <= self.delta < 0.5):
            raise ConfigError(f"kernel.delta={self.delta} outside [0, 1/2)")
        if not (0.0 <= self.beta < 2.0 - 2.0 * self.delta):
            raise ConfigError(f"kernel.beta={self.beta} outside [0, 2-2*delta)")
        if self.gamma < 0.0:
            raise ConfigError("kernel.gamma < 0 is not supported")
        if self.form_id not in ("g2_over_1plusg",):
            raise ConfigError(f"unknown kernel form_id {self.form_id!r}")
        if self.s_convention not in ("consistent", "literal"):
            raise ConfigError(f"unknown s_convention {self.s_convention!r}")


@dataclass(frozen=True)
class BasisConfig:
    """Velocity basis resolution.

    The scalar (l=0) sector always carries one extra radial degree so the
    energy collision invariant is exactly representable at every resolution.
    """

    n_radial: int = 8
    l_max: int = 7
    m_max: int = 1

    def validate(self) -> None:
        if self.n_radial < 1 or self.l_max < 1:
            raise ConfigError("basis requires n_radial >= 1 and l_max >= 1")
        if not (1 <= self.m_max <= self.l_max):
            raise ConfigError("basis requires 1 <= m_max <= l_max")


@dataclass(frozen=True)
class QuadConfig:
    qmc_samples: int = 1 << 21
    seed: int = 20250801
    r_max: float = 33.0
    n_radial_nodes: int = 320
    n_theta: int = 24
    n_phi: int = 48

    def validate(self) -> None:
        if self.qmc_samples < 1 or self.n_radial_nodes < 1:
            raise ConfigError("quadrature counts must be >= 1")
        if not (0 <= self.seed <= _U64_MAX):
            raise ConfigError("seed must be an unsigned 64-bit value")
        if self.r_max <= 1.0:
            raise ConfigError("r_max must exceed 1")
        if self.n_theta < 1 or self.n_phi < 1:
            raise ConfigError("sphere rule counts must be >= 1")


@dataclass(frozen=True)
class SpectrumConfig:
    k_max: float = 16.0
    k_points: int = 161

    def validate(self) -> None:
        if self.k_points < 2 or self.k_max <= 0:
            raise ConfigError("spectrum requires k_points >= 2 and k_max > 0")


@dataclass(frozen=True)
class DecayConfig:
    scenario: str = "generic"
    k_max: float = 0.0  # 0 -> use the measured tau0
    t_min: float = 1.0
    t_max: float = 1.0e4
    t_points: int = 40
    fit_window: tuple[float, float] = (1.0e2, 1.0e4)
    amplitude: float = 1.0
    nodes_per_panel: int = 4
    max_k_nodes: int = 120_000

    def validate(self) -> None:
        if self.scenario not in ("generic", "microscopic"):
            raise ConfigError(f"unknown decay scenario {self.scenario!r}")
        if self.t_points < 2 or self.t_min <= 0 or self.t_max <= self.t_min:
            raise ConfigError("decay time grid is malformed")
        lo, hi = self.fit_window
        if not (self.t_min <= lo < hi <= self.t_max):
            raise ConfigError("fit_window must sit inside [t_min, t_max]")
        if self.amplitude <= 0:
            raise ConfigError("decay amplitude d0 must be positive")
        if self.k_max < 0:
            raise ConfigError("decay k_max must be >= 0 (0 means tau0)")


_DEFAULT_TOLERANCES: dict[str, float] = {
    "moments_rtol": 1.0e-8,
    "orthonormality": 1.0e-10,
    "assembly_rtol": 5.0e-2,
    "nu_rtol": 1.0e-3,
    "null_residual": 1.0e-6,
    "gap_refine_rel": 0.10,
    "branch_overlap_min": 0.80,
    "newton_residual": 1.0e-10,
    "dispersion_match_rtol": 1.0e-6,
    "expansion_first_order_rel": 0.02,
    "expansion_second_order_rel": 0.05,
    "residual_order_min": 2.5,
    "slope_ci_max": 0.10,
}


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    quadrature: QuadConfig = field(default_factory=QuadConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    tolerances: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_TOLERANCES))
    output_dir: str = "out"

    def validate(self) -> "RunConfig":
        self.kernel.validate()
        self.basis.validate()
        self.quadrature.validate()
        self.spectrum.validate()
        self.decay.validate()
        for name, value in self.tolerances.items():
            if name not in _DEFAULT_TOLERANCES:
                raise ConfigError(f"unknown tolerance {name!r}")
            if not value > 0:
                raise ConfigError(f"tolerance {name!r} must be positive")
        return self

    def tol(self, name: str) -> float:
        if name not in _DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {name!r}")
        return float(self.tolerances.get(name, _DEFAULT_TOLERANCES[name]))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["decay"]["fit_window"] = list(self.decay.fit_window)
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def assembly_hash(self) -> str:
        """Hash of the fields the assembled matrices depend on.

        Spectrum/dispersion/decay settings do not change L, N, V or P0, so
        stages can reuse stored matrices across those variations.
        """
        subset = {k: v for k, v in self.to_dict().items()
                  if k in ("kernel", "basis", "quadrature")}
        payload = json.dumps(subset, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _from_mapping(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name == "fit_window":
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(f"{path}.fit_window: expected [lo, hi]")
            value = (float(value[0]), float(value[1]))
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    known = {"kernel", "basis", "quadrature", "spectrum", "decay", "tolerances", "output_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"top level: unknown key(s) {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in (
        ("kernel", KernelConfig),
        ("basis", BasisConfig),
        ("quadrature", QuadConfig),
        ("spectrum", SpectrumConfig),
        ("decay", DecayConfig),
    ):
        if name in data:
            kwargs[name] = _from_mapping(cls, data[name], name)
    if "tolerances" in data:
        tols = data["tolerances"]
        if not isinstance(tols, dict):
            raise ConfigError("tolerances: expected an object")
        merged = dict(_DEFAULT_TOLERANCES)
        for key, value in tols.items():
            if key not in _DEFAULT_TOLERANCES:
                raise ConfigError(f"tolerances: unknown tolerance {key!r}")
            merged[key] = float(value)
        kwargs["tolerances"] = merged
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    return RunConfig(**kwargs).validate()


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
