"""Plain-text configuration.

INI sections with JSON values, for example::

    [hawkes]
    base_intensity = 0.1
    alpha = {"kind": "exponential", "c": 1.0, "rate": 1.0}
    beta = {"kind": "polynomial", "c": 1.0, "power": 2.0}
    mark_std = 1.0

    [pendulum]
    gain = 0.5
    injection = [1.0, 0.5]
    gamma = 0.9

    [experiment]
    trials = 20
    N_values = [500, 2000, 10000]

Sections: ``hawkes``, ``pendulum``, ``policy``, ``mixing``, ``experiment``,
``finite``, ``bounds``. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from .bounds import DecaySpec, MixingParams
from .event_process import DecayKernel, HawkesParams
from .experiment import EnergyShapingPolicy, ExperimentConfig

__all__ = [
    "load_sections",
    "kernel_from",
    "hawkes_from",
    "experiment_from",
    "FiniteSettings",
    "finite_from",
    "BoundsSettings",
    "bounds_from",
]

SECTIONS = ("hawkes", "pendulum", "policy", "mixing", "experiment", "finite", "bounds")


def load_sections(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    out: Dict[str, Dict[str, Any]] = {s: {} for s in SECTIONS}
    if path is None:
        return out
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    for sec in cp.sections():
        if sec not in out:
            raise ValueError(f"unknown config section [{sec}]")
        for key, raw in cp.items(sec):
            try:
                out[sec][key] = json.loads(raw)
            except json.JSONDecodeError:
                out[sec][key] = raw
    return out


def _check_keys(section: str, values: Dict[str, Any], allowed) -> None:
    extra = set(values) - set(allowed)
    if extra:
        raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")


def kernel_from(spec: Any) -> DecayKernel:
    """``{"kind": "exponential", "c", "rate"}``, ``{"kind": "polynomial", "c", "power"}``,
    ``{"kind": "tabulated", "values": [...]}`` or ``{"kind": "zero"}``."""
    if isinstance(spec, DecayKernel):
        return spec
    kind = spec.get("kind")
    if kind == "exponential":
        return DecayKernel.exponential(float(spec["c"]), float(spec["rate"]))
    if kind == "polynomial":
        return DecayKernel.polynomial(float(spec["c"]), float(spec["power"]))
    if kind == "tabulated":
        return DecayKernel.tabulated([float(v) for v in spec["values"]])
    if kind == "zero":
        return DecayKernel.zero()
    raise ValueError(f"unknown kernel kind {kind!r}")


def hawkes_from(sections: Dict[str, Dict[str, Any]]) -> HawkesParams:
    h = dict(sections.get("hawkes", {}))
    _check_keys("hawkes", h, ("base_intensity", "alpha", "beta", "mark_std", "horizon_cap", "mark_clip"))
    return HawkesParams(
        base_intensity=float(h.get("base_intensity", 0.1)),
        excitation=kernel_from(h.get("alpha", {"kind": "exponential", "c": 1.0, "rate": 1.0})),
        mark_coupling=kernel_from(h.get("beta", {"kind": "polynomial", "c": 1.0, "power": 2.0})),
        mark_std=float(h.get("mark_std", 1.0)),
        horizon_cap=int(h.get("horizon_cap", 64)),
        mark_clip=h.get("mark_clip"),
    )


def experiment_from(sections: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    kw: Dict[str, Any] = {}
    pend = dict(sections.get("pendulum", {}))
    _check_keys("pendulum", pend, ("gain", "injection", "gamma"))
    kw.update(pend)
    h = dict(sections.get("hawkes", {}))
    _check_keys("hawkes", h, ("base_intensity", "alpha", "beta", "mark_std", "horizon_cap", "mark_clip"))
    if "alpha" in h:
        a = h.pop("alpha")
        if a.get("kind") != "exponential":
            raise ValueError("the experiment uses an exponential excitation kernel")
        kw["alpha_scale"] = float(a["c"])
    if "beta" in h:
        b = h.pop("beta")
        if b.get("kind") != "polynomial":
            raise ValueError("the experiment uses a polynomial mark kernel")
        kw["beta_scale"] = float(b["c"])
        kw["beta_power"] = float(b["power"])
    kw.update(h)
    pol = dict(sections.get("policy", {}))
    _check_keys("policy", pol, [f.name for f in dataclasses.fields(EnergyShapingPolicy)])
    if pol:
        kw["policy"] = EnergyShapingPolicy(**pol)
    mix = dict(sections.get("mixing", {}))
    _check_keys("mixing", mix, ("beta_bar", "b", "kappa"))
    if mix:
        kw["mixing"] = MixingParams(**mix)
    exp = dict(sections.get("experiment", {}))
    allowed = [f.name for f in dataclasses.fields(ExperimentConfig)]
    _check_keys("experiment", exp, allowed)
    kw.update(exp)
    for k in ("percentiles",):
        if k in kw:
            kw[k] = tuple(tuple(p) for p in kw[k])
    return ExperimentConfig(**kw)


@dataclass(frozen=True)
class FiniteSettings:
    n_states: int = 3
    n_actions: int = 2
    window: int = 3
    m_scale: float = 0.05
    m_rate: float = 1.0
    n_scale: float = 0.05
    n_rate: float = 1.0
    gamma: float = 0.9
    seed: int = 0
    T: int = 1
    k_max: int = 20
    exact: bool = True
    n_completions: int = 4
    n_transition_samples: int = 4
    tolerance: float = 1e-3


def finite_from(sections: Dict[str, Dict[str, Any]]) -> FiniteSettings:
    f = dict(sections.get("finite", {}))
    _check_keys("finite", f, [x.name for x in dataclasses.fields(FiniteSettings)])
    return FiniteSettings(**f)


@dataclass(frozen=True)
class BoundsSettings:
    m_kernel: DecayKernel = field(default_factory=lambda: DecayKernel.exponential(0.5, 1.0))
    n_kernel: DecayKernel = field(default_factory=lambda: DecayKernel.exponential(0.5, 1.0))
    gamma: float = 0.9
    epsilon: float = 0.1
    T_values: tuple = (0, 1, 2, 3, 4, 5, 6, 8, 10, 15, 20)

    @property
    def spec(self) -> DecaySpec:
        return DecaySpec(self.m_kernel, self.n_kernel)


def bounds_from(sections: Dict[str, Dict[str, Any]]) -> BoundsSettings:
    b = dict(sections.get("bounds", {}))
    _check_keys("bounds", b, ("m_kernel", "n_kernel", "gamma", "epsilon", "T_values"))
    kw: Dict[str, Any] = {}
    if "m_kernel" in b:
        kw["m_kernel"] = kernel_from(b["m_kernel"])
    if "n_kernel" in b:
        kw["n_kernel"] = kernel_from(b["n_kernel"])
    for k in ("gamma", "epsilon"):
        if k in b:
            kw[k] = float(b[k])
    if "T_values" in b:
        kw["T_values"] = tuple(int(t) for t in b["T_values"])
    return BoundsSettings(**kw)
