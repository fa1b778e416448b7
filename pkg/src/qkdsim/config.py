"""Scenario configuration: a strict JSON schema mapped onto the model types.

Every section is optional on top of a named preset; without a preset the
source pair rate must be given. Unknown keys are rejected and every problem
is reported with its dotted JSON path.
"""
from __future__ import annotations

import json
import math
from dataclasses import replace
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import ChannelParams, DetectorParams, ProtocolParams, SourceParams
from .errors import ConfigError, DomainError
from .link import Arm, LinkModel
from .presets import PRESETS


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SourceConfig(_Strict):
    mu: Optional[float] = Field(None, ge=0, description="pairs per coincidence window")
    pair_rate: Optional[float] = Field(None, ge=0, description="pairs per second")
    heralding_eff_a: Optional[float] = Field(None, gt=0, le=1)
    heralding_eff_b: Optional[float] = Field(None, gt=0, le=1)
    misalignment_error: Optional[float] = Field(None, ge=0, le=0.5)
    visibility: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def _one_rate(self):
        if self.mu is not None and self.pair_rate is not None:
            raise ValueError("give either mu or pair_rate, not both")
        return self


class ArmConfig(_Strict):
    loss_db: Optional[float] = Field(None, ge=0)
    background_rate_per_detector: Optional[float] = Field(None, ge=0)
    dark_rate: Optional[float] = Field(None, ge=0)
    dead_time: Optional[float] = Field(None, ge=0)
    afterpulse_prob: Optional[float] = Field(None, ge=0, lt=1)
    jitter_sigma: Optional[float] = Field(None, ge=0)
    noise_yield: Optional[float] = Field(None, ge=0)


class ProtocolConfig(_Strict):
    coincidence_window: Optional[float] = Field(None, gt=0, description="tau_cw > 0 (seconds)")
    ec_efficiency: Optional[float] = Field(None, ge=1)
    phase_error_failure_prob: Optional[float] = Field(None, gt=0, lt=1)
    phase_error_mode: Optional[Literal[
        "same_basis_asymptotic", "same_basis_with_deviation", "cross_basis_with_deviation"]] = None
    deviation_bound: Optional[Literal["normal", "serfling"]] = None


class ClocksConfig(_Strict):
    offset_s: float = 0.0
    drift: float = Field(0.0, gt=-1)


class SweepConfig(_Strict):
    variable: Literal["mu", "loss_db_total"] = "mu"
    start: float = Field(..., gt=0)
    stop: float = Field(..., gt=0)
    num: int = Field(64, ge=1)
    log: bool = True

    @model_validator(mode="after")
    def _order(self):
        if self.num > 1 and not self.stop > self.start:
            raise ValueError("stop must exceed start")
        return self


class OptimizeConfig(_Strict):
    mu_min: float = Field(1e-5, gt=0)
    mu_max: float = Field(1.0, gt=0)
    loss_db: Optional[list[float]] = None

    @model_validator(mode="after")
    def _bounds(self):
        if not self.mu_max > self.mu_min:
            raise ValueError("mu_max must exceed mu_min")
        return self


class TemplateConfig(_Strict):
    kind: Literal["constant", "triangular", "elevation"]
    duration_s: float = Field(..., gt=0)
    loss_db: Optional[float] = Field(None, ge=0)
    edge_db: Optional[float] = Field(None, ge=0)
    peak_db: Optional[float] = Field(None, ge=0)
    min_db: Optional[float] = Field(None, ge=0)
    max_db: Optional[float] = Field(None, ge=0)


class PassConfig(_Strict):
    profile_csv: Optional[str] = None
    template: Optional[TemplateConfig] = None
    noise_csv: Optional[str] = None
    noise_detectors_summed: bool = False
    bin_width_s: float = Field(1.0, gt=0)
    policy: Literal["fixed", "track"] = "track"
    mu: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _source(self):
        if (self.profile_csv is None) == (self.template is None):
            raise ValueError("give exactly one of profile_csv or template")
        if self.policy == "fixed" and self.mu is None:
            raise ValueError("policy 'fixed' needs mu")
        return self


class SimulateConfig(_Strict):
    duration_s: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0)


class KeygenConfig(_Strict):
    qber_mode: Literal["oracle", "sample"] = "oracle"
    sample_fraction: float = Field(0.1, gt=0, lt=1)
    sample_seed: int = Field(0, ge=0)
    pa_seed: int = Field(0, ge=0)


class OutputsConfig(_Strict):
    directory: str = "."
    prefix: str = ""


class ScenarioConfig(_Strict):
    preset: Optional[Literal["terrestrial", "micius", "snspd"]] = None
    scenario: Literal["single", "dual", "pass"] = "single"
    total_loss_db: Optional[float] = Field(None, ge=0)
    source: SourceConfig = SourceConfig()
    arm_a: ArmConfig = ArmConfig()
    arm_b: ArmConfig = ArmConfig()
    protocol: ProtocolConfig = ProtocolConfig()
    basis_split: Optional[tuple[float, float]] = None
    basis_split_a: Optional[tuple[float, float]] = None
    reference_loss_db: Optional[float] = Field(None, ge=0)
    clocks: ClocksConfig = ClocksConfig()
    simulate: SimulateConfig = SimulateConfig()
    sweep: Optional[SweepConfig] = None
    optimize: OptimizeConfig = OptimizeConfig()
    pass_: Optional[PassConfig] = Field(None, alias="pass")
    keygen: KeygenConfig = KeygenConfig()
    outputs: OutputsConfig = OutputsConfig()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _scenario(self):
        if self.preset is None and self.source.mu is None and self.source.pair_rate is None:
            raise ValueError("source.mu or source.pair_rate is required without a preset")
        if self.scenario == "pass" and self.pass_ is None:
            raise ValueError("scenario 'pass' needs a 'pass' section")
        for name in ("basis_split", "basis_split_a"):
            split = getattr(self, name)
            if split is not None and (min(split) < 0 or abs(sum(split) - 1) > 1e-9):
                raise ValueError(f"{name} must be two non-negative probabilities summing to 1")
        return self


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _path(loc) -> str:
    parts = []
    for p in loc:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(("." if parts else "") + ("pass" if p == "pass_" else str(p)))
    return "".join(parts) or "<root>"


INVARIANTS = {
    "coincidence_window": "protocol invariant tau_cw > 0",
    "ec_efficiency": "protocol invariant f >= 1",
    "phase_error_failure_prob": "protocol invariant 0 < eps_ph < 1",
    "afterpulse_prob": "detector invariant 0 <= P_a < 1",
}


def _message(err) -> str:
    text = _base_message(err)
    field = err["loc"][-1] if err["loc"] else None
    if field in INVARIANTS and err["type"] != "extra_forbidden":
        text += f" ({INVARIANTS[field]})"
    return text


def _base_message(err) -> str:
    ctx = err.get("ctx") or {}
    kind = err["type"]
    if kind == "greater_than":
        return f"must be > {ctx['gt']}"
    if kind == "greater_than_equal":
        return f"must be >= {ctx['ge']}"
    if kind == "less_than":
        return f"must be < {ctx['lt']}"
    if kind == "less_than_equal":
        return f"must be <= {ctx['le']}"
    if kind == "extra_forbidden":
        return "unknown key"
    msg = err["msg"]
    return msg[len("Value error, "):] if msg.startswith("Value error, ") else msg


def diagnostics_of(exc: ValidationError):
    out = []
    for err in exc.errors():
        out.append((_path(err["loc"]), _message(err)))
    return out


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a decoded JSON document; raises :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "configuration must be a JSON object")])
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(diagnostics_of(exc)) from None
    # physical invariants of the assembled model
    try:
        build_link(cfg)
    except DomainError as exc:
        raise ConfigError([("<model>", str(exc))]) from None
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from None
    except OSError as exc:
        raise ConfigError([("<file>", str(exc))]) from None
    return parse_config(data)


def validate_config(path):
    """``[]`` if the file is valid, else the ``(path, message)`` diagnostics."""
    try:
        load_config(path)
    except ConfigError as exc:
        return exc.diagnostics
    return []


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


def _set(obj, updates: dict):
    updates = {k: v for k, v in updates.items() if v is not None}
    return replace(obj, **updates) if updates else obj


def _arm(base: Arm, cfg: ArmConfig) -> Arm:
    channel = _set(base.channel, {"loss_db": cfg.loss_db,
                                  "background_rate_per_detector": cfg.background_rate_per_detector})
    det = _set(base.detector, {"dark_rate": cfg.dark_rate, "dead_time": cfg.dead_time,
                               "afterpulse_prob": cfg.afterpulse_prob,
                               "jitter_sigma": cfg.jitter_sigma, "noise_yield": cfg.noise_yield})
    return Arm(channel, det)


def _base_link(cfg: ScenarioConfig) -> LinkModel:
    if cfg.preset is not None:
        return PRESETS[cfg.preset]()
    window = cfg.protocol.coincidence_window or ProtocolParams().coincidence_window
    rate = cfg.source.pair_rate if cfg.source.pair_rate is not None else cfg.source.mu / window
    arm = Arm(ChannelParams(), DetectorParams())
    if cfg.scenario == "single":
        return LinkModel(SourceParams(rate), arm, arm, ProtocolParams(window))
    from .satpass import DualLinkModel

    return DualLinkModel(SourceParams(rate), arm, arm, ProtocolParams(window))


def build_link(cfg: ScenarioConfig) -> LinkModel:
    """The :class:`LinkModel` (or dual model) a configuration describes."""
    link = _base_link(cfg)
    p = cfg.protocol
    protocol = _set(link.protocol, {
        "coincidence_window": p.coincidence_window, "ec_efficiency": p.ec_efficiency,
        "phase_error_failure_prob": p.phase_error_failure_prob,
        "phase_error_mode": p.phase_error_mode, "deviation_bound": p.deviation_bound,
    })
    mu = link.mu if cfg.source.mu is None else cfg.source.mu
    s = cfg.source
    source = _set(link.source, {"heralding_eff_a": s.heralding_eff_a, "heralding_eff_b": s.heralding_eff_b,
                                "misalignment_error": s.misalignment_error, "visibility": s.visibility})
    if s.pair_rate is not None:
        source = replace(source, pair_rate=s.pair_rate)
    else:
        source = replace(source, pair_rate=mu / protocol.coincidence_window)
    link = replace(
        link,
        source=source,
        protocol=protocol,
        arm_a=_arm(link.arm_a, cfg.arm_a),
        arm_b=_arm(link.arm_b, cfg.arm_b),
    )
    link = _set(link, {"basis_split": cfg.basis_split, "basis_split_a": cfg.basis_split_a,
                       "reference_loss_db": cfg.reference_loss_db})
    if cfg.total_loss_db is not None:
        link = link.with_total_loss(cfg.total_loss_db)
    if not math.isfinite(link.total_loss_db):
        raise DomainError("total loss must be finite")
    return link


def minimal_config(preset: str = "terrestrial") -> dict:
    """Smallest valid configuration document."""
    return {"preset": preset}
