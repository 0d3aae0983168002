"""Line-oriented `section.key = value` run configuration.

The format is flat dotted keys, one per line, `#` comments allowed.  Every
key has a registered type; unknown keys are rejected.  A configuration can
be produced from a device preset, overridden key by key, emitted back to
text, and re-parsed to an equal object.  Keys touching the same parameter
group (e.g. the two redox charge numbers, whose difference is pinned) are
applied together so paired invariants can be changed consistently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pecsolve.device import DeviceConfig, preset
from pecsolve.errors import ConfigError
from pecsolve.physics import DopingProfile, DopingSegment
from pecsolve.stepping import StepperKind


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected boolean (on/off), got {s!r}")


def _fmt_bool(v: bool) -> str:
    return "on" if v else "off"


def _parse_segments(s: str) -> DopingProfile:
    segs = []
    for part in s.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = [float(b) for b in part.split(":")]
        if len(bits) != 4:
            raise ConfigError(f"doping segment needs x_lo:x_hi:n_d:n_a, got {part!r}")
        segs.append(DopingSegment(*bits))
    if not segs:
        raise ConfigError("doping.segments is empty")
    return DopingProfile(tuple(segs))


def _fmt_segments(p: DopingProfile) -> str:
    return "; ".join(
        f"{_fmt_float(s.x_lo)}:{_fmt_float(s.x_hi)}:{_fmt_float(s.n_d)}:{_fmt_float(s.n_a)}"
        for s in p.segments
    )


def _parse_optional_float(s: str) -> float | None:
    return None if s.strip().lower() == "none" else float(s)


def _fmt_optional_float(v: float | None) -> str:
    return "none" if v is None else _fmt_float(v)


def _parse_stepper(s: str) -> StepperKind:
    return StepperKind.parse(s)


# key -> (group, attr, parse, fmt); group "device" sets DeviceConfig fields
# directly, "material"/"transfer" collect into one replace() on the nested
# dataclass so paired invariants apply atomically
def _registry() -> dict[str, tuple]:
    f, i = float, int
    reg: dict[str, tuple] = {
        "domain.x_left": ("device", "x_left", f, _fmt_float),
        "domain.x_interface": ("device", "x_interface", f, _fmt_float),
        "domain.x_right": ("device", "x_right", f, _fmt_float),
        "material.mu_n": ("material", "mu_n", f, _fmt_float),
        "material.mu_p": ("material", "mu_p", f, _fmt_float),
        "material.mu_r": ("material", "mu_r", f, _fmt_float),
        "material.mu_o": ("material", "mu_o", f, _fmt_float),
        "material.lambda2_s": ("material", "lambda2_s", f, _fmt_float),
        "material.lambda2_e": ("material", "lambda2_e", f, _fmt_float),
        "material.tau_n": ("material", "tau_n", f, _fmt_float),
        "material.tau_p": ("material", "tau_p", f, _fmt_float),
        "material.rho_i": ("material", "rho_i", f, _fmt_float),
        "material.sigma_a": ("material", "sigma_a", f, _fmt_float),
        "material.g0": ("material", "g0", f, _fmt_float),
        "material.phi_bi": ("material", "phi_bi", f, _fmt_float),
        "material.phi_inf": ("material", "phi_inf", f, _fmt_float),
        "material.alpha_r": ("material", "alpha_r", f, _fmt_float),
        "material.alpha_o": ("material", "alpha_o", f, _fmt_float),
        "material.rho_n_e": ("device", "rho_n_e", f, _fmt_float),
        "material.rho_p_e": ("device", "rho_p_e", f, _fmt_float),
        "material.rho_r_inf": ("device", "rho_r_inf", f, _fmt_float),
        "material.rho_o_inf": ("device", "rho_o_inf", f, _fmt_float),
        "doping.segments": ("device", "doping", _parse_segments, _fmt_segments),
        "interface.model": ("transfer", "kind", str, str),
        "interface.k_et": ("transfer", "k_et", f, _fmt_float),
        "interface.k_ht": ("transfer", "k_ht", f, _fmt_float),
        "interface.v_n": ("transfer", "v_n", f, _fmt_float),
        "interface.v_p": ("transfer", "v_p", f, _fmt_float),
        "discretization.k": ("device", "degree", i, str),
        "discretization.n_s": ("device", "n_semiconductor", i, str),
        "discretization.n_e": ("device", "n_electrolyte", i, str),
        "discretization.tau_tilde": ("device", "tau_tilde", f, _fmt_float),
        "discretization.beta": ("device", "beta", f, _fmt_float),
        "stepping.stepper": ("device", "stepper", _parse_stepper,
                             lambda v: v.value),
        "stepping.c_cfl": ("device", "c_cfl", f, _fmt_float),
        "stepping.dt_cap": ("device", "dt_cap", f, _fmt_float),
        "stepping.dt_fixed": ("device", "dt_fixed", _parse_optional_float,
                              _fmt_optional_float),
        "stepping.tol_ss": ("device", "tol_ss", f, _fmt_float),
        "stepping.rho_floor": ("device", "rho_floor", f, _fmt_float),
        "stepping.max_steps": ("device", "max_steps", i, str),
        "stepping.k_max_substeps": ("device", "k_max_substeps", i, str),
        "experiment.light": ("gamma", "gamma", _parse_bool, _fmt_bool),
        "experiment.phi_app": ("device", "phi_app", f, _fmt_float),
        "experiment.frozen_redox": ("device", "frozen_redox", _parse_bool, _fmt_bool),
        "experiment.p_sun": ("device", "p_sun", _parse_optional_float,
                             _fmt_optional_float),
    }
    return reg


REGISTRY = _registry()


def _get(device: DeviceConfig, key: str):
    group, attr, _, _ = REGISTRY[key]
    if group == "device":
        return getattr(device, attr)
    if group == "material":
        return getattr(device.params, attr)
    if group == "transfer":
        return getattr(device.transfer, attr)
    if group == "gamma":
        return bool(device.gamma)
    raise KeyError(group)


def _apply(device: DeviceConfig, updates: dict[str, object]) -> DeviceConfig:
    """Apply parsed key -> value pairs, grouping nested-dataclass fields."""
    device_kw: dict = {}
    material_kw: dict = {}
    transfer_kw: dict = {}
    for key, value in updates.items():
        group, attr, _, _ = REGISTRY[key]
        if group == "device":
            device_kw[attr] = value
        elif group == "material":
            material_kw[attr] = value
        elif group == "transfer":
            transfer_kw[attr] = value
        elif group == "gamma":
            device_kw["gamma"] = int(bool(value))
    if material_kw:
        device_kw["params"] = replace(device.params, **material_kw)
    if transfer_kw:
        device_kw["transfer"] = replace(device.transfer, **transfer_kw)
    return replace(device, **device_kw)


@dataclass
class RunConfig:
    """A device configuration with parse/emit/overrides in the flat format."""

    device: DeviceConfig

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        return cls(device=preset(name))

    @classmethod
    def parse(cls, text: str, base: DeviceConfig | None = None) -> "RunConfig":
        device = base if base is not None else DeviceConfig()
        updates: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in REGISTRY:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            _, _, parse, _ = REGISTRY[key]
            try:
                updates[key] = parse(val)
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        return cls(device=_apply(device, updates))

    def emit(self) -> str:
        lines = []
        for key, (_, _, _, fmt) in REGISTRY.items():
            lines.append(f"{key} = {fmt(_get(self.device, key))}")
        return "\n".join(lines) + "\n"

    def override_many(self, pairs: dict[str, str]) -> "RunConfig":
        updates: dict[str, object] = {}
        for key, raw in pairs.items():
            if key not in REGISTRY:
                raise ConfigError(f"unknown key {key!r}")
            _, _, parse, _ = REGISTRY[key]
            updates[key] = parse(raw)
        return RunConfig(device=_apply(self.device, updates))

    def override(self, key: str, raw_value: str) -> "RunConfig":
        return self.override_many({key: raw_value})


def parse_bias_grid(spec: str) -> np.ndarray:
    """Either 'a,b,c,...' or 'linspace:start:stop:n'."""
    spec = spec.strip()
    if spec.startswith("linspace:"):
        _, a, b, n = spec.split(":")
        return np.linspace(float(a), float(b), int(n))
    try:
        vals = np.array([float(tok) for tok in spec.split(",") if tok.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad bias grid {spec!r}: {exc}") from exc
    if vals.size == 0:
        raise ConfigError("bias grid is empty")
    return vals
