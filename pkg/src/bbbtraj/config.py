"""Run configuration: a JSON document validated into typed models.

See ``docs/config.md`` for the schema and ``configs/`` for one example per
formulation.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

FORMULATIONS = ("reference", "f1-guided", "f2-ensemble", "f3-hydro", "wavefree")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------- models

class ZeroPotential(_Strict):
    kind: Literal["zero"] = "zero"


class HarmonicPotential(_Strict):
    kind: Literal["harmonic"] = "harmonic"
    omega: float = Field(gt=0)


class ArrayPotential(_Strict):
    kind: Literal["array"] = "array"
    values: list[float]


Potential = Annotated[Union[ZeroPotential, HarmonicPotential, ArrayPotential], Field(discriminator="kind")]


class CircleSpec(_Strict):
    kind: Literal["circle"] = "circle"
    N: int = Field(ge=3)
    L: float = Field(gt=0, description="ring circumference; the spacing is L / N")
    M: float = Field(1.0, gt=0)
    potential: Potential = ZeroPotential()

    @property
    def a(self) -> float:
        return self.L / self.N

    @model_validator(mode="after")
    def _potential_length(self):
        if isinstance(self.potential, ArrayPotential) and len(self.potential.values) != self.N:
            raise ValueError(f"potential.values has {len(self.potential.values)} entries, expected N = {self.N}")
        return self


class SpinSpec(_Strict):
    kind: Literal["spin-half"] = "spin-half"
    mu: float = 1.0
    B: float = 1.0
    bz: float = 0.0


class ParticleSpinSpec(_Strict):
    kind: Literal["particle-spin"] = "particle-spin"
    circle: CircleSpec
    spin: SpinSpec


ModelSpec = Annotated[Union[CircleSpec, SpinSpec, ParticleSpinSpec], Field(discriminator="kind")]


# ---------------------------------------------------------------- initial states

class GaussianPacket(_Strict):
    kind: Literal["gaussian-packet"] = "gaussian-packet"
    center: float
    width: float = Field(gt=0)
    momentum: float = 0.0


class PlaneWave(_Strict):
    kind: Literal["plane-wave"] = "plane-wave"
    q: int


class BasisState(_Strict):
    kind: Literal["basis-state"] = "basis-state"
    n: int = Field(ge=0)


class SpinDelta(_Strict):
    kind: Literal["spin-delta"] = "spin-delta"
    delta: float


class GroundState(_Strict):
    kind: Literal["ground-state"] = "ground-state"


class Explicit(_Strict):
    kind: Literal["explicit"] = "explicit"
    R: list[float]
    S: list[float]

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.R) != len(self.S):
            raise ValueError("R and S must have the same length")
        if any(r < 0 for r in self.R):
            raise ValueError("R must be nonnegative")
        return self


class Product(_Strict):
    kind: Literal["product"] = "product"
    space: "SpatialState"
    spin: "SpinState"


SpatialState = Annotated[Union[GaussianPacket, PlaneWave, BasisState, GroundState, Explicit],
                         Field(discriminator="kind")]
SpinState = Annotated[Union[SpinDelta, BasisState, Explicit], Field(discriminator="kind")]
InitialState = Annotated[Union[GaussianPacket, PlaneWave, BasisState, SpinDelta, GroundState,
                               Explicit, Product], Field(discriminator="kind")]
Product.model_rebuild()


# ---------------------------------------------------------------- run

class Output(_Strict):
    dir: str = "out"
    record_every: int = Field(1, ge=1)
    trajectories: int = Field(10, ge=0, description="trajectories written to the time series")


class Options(_Strict):
    scheme: str | None = None
    rule: Literal["instant", "flux"] = "instant"
    flux: Literal["upwind", "central"] = "central"
    convective: bool = True
    estimator: Literal["histogram", "cic", "kde"] = "kde"
    bandwidth: float | None = Field(None, gt=0)
    backend: Literal["compiled", "python"] | None = None


class RunConfig(_Strict):
    model: ModelSpec
    formulation: Literal["reference", "f1-guided", "f2-ensemble", "f3-hydro", "wavefree"]
    initial: InitialState
    dt: float = Field(gt=0)
    horizon: float = Field(gt=0)
    M: int | None = Field(None, ge=1, description="ensemble size; jump ensemble for reference/wavefree")
    seed: int = Field(0, ge=0, lt=2 ** 64)
    hbar: float = Field(1.0, gt=0)
    options: Options = Options()
    output: Output = Output()
    tolerances: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistency(self):
        kind = self.model.kind
        grid = self.formulation in ("f1-guided", "f2-ensemble", "f3-hydro")
        if grid and kind != "circle":
            raise ValueError(f"formulation {self.formulation} needs a circle model, got {kind}")
        if self.formulation in ("f1-guided", "f2-ensemble") and self.M is None:
            raise ValueError(f"formulation {self.formulation} needs M (number of trajectories)")
        if self.horizon < self.dt:
            raise ValueError("horizon is shorter than one step dt")
        schemes = {"wavefree": ("euler", "midpoint", "rk4"),
                   "reference": ("implicit-midpoint", "exact-exponential"),
                   "f1-guided": ("implicit-midpoint", "exact-exponential")}
        if self.options.scheme is not None:
            allowed = schemes.get(self.formulation, ())
            if self.options.scheme not in allowed:
                raise ValueError(f"options.scheme {self.options.scheme!r} not valid for "
                                 f"{self.formulation}; choose from {allowed}")
        init = self.initial.kind
        if kind == "spin-half" and init not in ("spin-delta", "basis-state", "explicit"):
            raise ValueError(f"initial state {init} does not apply to a spin-half model")
        if kind == "circle" and init in ("spin-delta", "product"):
            raise ValueError(f"initial state {init} does not apply to a circle model")
        if kind == "particle-spin" and init != "product":
            raise ValueError("particle-spin models need a product initial state")
        if init == "ground-state" and not (kind == "circle" and self.model.potential.kind == "harmonic"):
            raise ValueError("ground-state initial state needs a circle with a harmonic potential")
        unknown = set(self.tolerances) - set(TOLERANCE_KEYS)
        if unknown:
            raise ValueError(f"unknown tolerance keys {sorted(unknown)}; known: {sorted(TOLERANCE_KEYS)}")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


TOLERANCE_KEYS = {
    "sum_drift": 1e-8,
    "radicand": -1e-9,
    "theta_modulus": 1e-9,
    "loop": 1e-6,
    "antisymmetry": 1e-9,
}


def tolerance(cfg: RunConfig, key: str) -> float:
    return cfg.tolerances.get(key, TOLERANCE_KEYS[key])


class ConfigError(ValueError):
    """Invalid configuration; ``messages`` holds one 'path: reason' line per problem."""

    def __init__(self, messages: list):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def parse(doc: dict, seed: int | None = None, out: str | None = None) -> RunConfig:
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["output"] = {**doc.get("output", {}), "dir": out}
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            path = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{path}: {err['msg']}")
        raise ConfigError(lines) from None


def load(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    return parse(doc, seed, out)


def canonical(cfg: RunConfig) -> str:
    """Stable JSON text of a validated config (sorted keys, defaults filled in)."""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
