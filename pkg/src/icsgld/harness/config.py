"""Experiment configuration: strict JSON schema, loading and presets."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError

ALGORITHMS = ("sgld", "cycsgld", "resgld", "csgld", "icsgld")
PRESETS = ("d2_multimodal", "d5_mixture", "mnist_style")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseConfig(_Strict):
    energy_std: float = Field(0.0, ge=0)
    grad_std: float = Field(0.0, ge=0)


class DatasetConfig(_Strict):
    """Synthetic Gaussian records, or a CSV file when ``path`` is set."""

    N: int = Field(1000, ge=1)
    n: int = Field(100, ge=1)
    dim: int = Field(1, ge=1)
    true_mean: float = 0.5
    sigma: float = Field(1.0, gt=0)
    prior_std: float = Field(10.0, gt=0)
    seed: int = Field(0, ge=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _batch_fits(self):
        if self.path is None and self.n > self.N:
            raise ValueError("batch size n must not exceed N")
        return self


class TargetConfig(_Strict):
    kind: Literal["multimodal25", "gaussian_mixture_1d", "quadratic", "dataset"]
    weights: List[float] = [0.4, 0.6]
    means: List[float] = [-6.0, 4.0]
    stds: List[float] = [1.0, 1.0]
    dim: int = Field(1, ge=1)
    offset: float = 0.0
    scale: float = Field(1.0, gt=0)
    noise: Optional[NoiseConfig] = None
    dataset: Optional[DatasetConfig] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "gaussian_mixture_1d":
            if not len(self.weights) == len(self.means) == len(self.stds) >= 1:
                raise ValueError("weights, means and stds need equal, non-zero length")
            if any(w <= 0 for w in self.weights) or any(s <= 0 for s in self.stds):
                raise ValueError("mixture weights and stds must be positive")
        if self.kind == "dataset" and self.noise is not None:
            raise ValueError("dataset targets get their noise from minibatching; drop 'noise'")
        return self

    @property
    def dimension(self) -> int:
        if self.kind == "multimodal25":
            return 2
        if self.kind == "gaussian_mixture_1d":
            return 1
        if self.kind == "dataset":
            return (self.dataset or DatasetConfig()).dim
        return self.dim


class LRConfig(_Strict):
    kind: Literal["constant", "polynomial_decay", "cosine_cyclical"] = "constant"
    epsilon0: float = Field(3e-3, gt=0)
    power: float = Field(0.0, ge=0)
    scale: float = Field(1.0, gt=0)
    cycles: int = Field(1, ge=1)


class SAConfig(_Strict):
    """``omega_k = min(cap, 1 / (k^alpha + offset))``."""

    cap: float = Field(3e-3, gt=0)
    alpha: float = 0.6
    offset: float = Field(100.0, ge=0)

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, v):
        if not 0.5 < v <= 1.0:
            raise ValueError("alpha must lie in (0.5, 1]: the step sizes need sum(omega) = inf "
                             "and sum(omega^2) < inf")
        return v


class PartitionConfig(_Strict):
    """Either ``m`` uniform bins from ``lowest_cut`` or explicit ``cuts``."""

    m: Optional[int] = Field(None, ge=2)
    delta_u: Optional[float] = Field(None, gt=0)
    lowest_cut: Optional[float] = None
    cuts: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        if self.cuts is not None:
            if self.m is not None or self.lowest_cut is not None:
                raise ValueError("give either cuts or (m, delta_u, lowest_cut), not both")
            if not self.cuts or any(not math.isfinite(c) for c in self.cuts):
                raise ValueError("cuts must be a non-empty list of finite numbers")
            if len(self.cuts) == 1 and self.delta_u is None:
                raise ValueError("delta_u is required with a single cut")
        elif self.m is None or self.delta_u is None or self.lowest_cut is None:
            raise ValueError("uniform partitions need m, delta_u and lowest_cut")
        return self


class VRConfig(_Strict):
    enabled: bool = False
    period: int = Field(100, ge=1)


class ReplicaConfig(_Strict):
    """Temperature ladder for replica exchange; one entry per chain."""

    taus: List[float]
    lrs: List[float]
    initial_correction: float = 30.0
    correction_period: int = Field(100, ge=1)
    swap_interval: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _ladder(self):
        if len(self.taus) != len(self.lrs) or len(self.taus) < 2:
            raise ValueError("taus and lrs need equal length >= 2")
        if any(t <= 0 for t in self.taus) or any(e <= 0 for e in self.lrs):
            raise ValueError("temperatures and learning rates must be positive")
        if sorted(self.taus) != list(self.taus) or len(set(self.taus)) != len(self.taus):
            raise ValueError("taus must be strictly increasing")
        return self


class AlgorithmConfig(_Strict):
    name: Literal["sgld", "cycsgld", "resgld", "csgld", "icsgld"]
    chains: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    mode: Literal["shared_memory", "channels"] = "shared_memory"
    comm_interval: int = Field(1, ge=1)
    lr: LRConfig = LRConfig()
    sa: SAConfig = SAConfig()
    tau: float = Field(1.0, gt=0)
    zeta: float = Field(1.0, gt=0)
    field_variant: Literal["new", "original"] = "new"
    partition: Optional[PartitionConfig] = None
    vr: VRConfig = VRConfig()
    replica: Optional[ReplicaConfig] = None
    timeout: Optional[float] = Field(None, gt=0)
    warmup: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _algorithm_fields(self):
        if self.chains % self.workers:
            raise ValueError(f"chains={self.chains} must be a multiple of workers={self.workers}")
        contour = self.name in ("csgld", "icsgld")
        if self.warmup and not contour:
            raise ValueError("warmup applies to csgld and icsgld only")
        if contour and self.partition is None:
            raise ValueError(f"{self.name} needs a partition")
        if self.name == "csgld" and self.chains != 1:
            raise ValueError("csgld runs a single chain; use icsgld for chains > 1")
        if self.name == "resgld":
            if self.replica is None:
                raise ValueError("resgld needs a replica ladder")
            if len(self.replica.taus) != self.chains:
                raise ValueError("replica ladder length must equal chains")
        if self.name == "cycsgld" and self.lr.kind != "cosine_cyclical":
            raise ValueError("cycsgld needs lr.kind = cosine_cyclical")
        return self


class InitConfig(_Strict):
    """Chain start: one fixed point for every chain, or uniform draws in a box."""

    kind: Literal["point", "uniform"] = "point"
    value: Optional[List[float]] = None
    low: float = -1.0
    high: float = 1.0

    @model_validator(mode="after")
    def _box(self):
        if self.kind == "uniform" and not self.low < self.high:
            raise ValueError("need low < high")
        return self


class GridConfig(_Strict):
    lower: List[float]
    upper: List[float]
    cells: List[int]
    smoothing: float = Field(1e-10, ge=0)

    @model_validator(mode="after")
    def _shape(self):
        if not len(self.lower) == len(self.upper) == len(self.cells) >= 1:
            raise ValueError("lower, upper and cells need one entry per dimension")
        if any(a >= b for a, b in zip(self.lower, self.upper)) or any(c < 2 for c in self.cells):
            raise ValueError("need lower < upper and at least 2 cells per axis")
        return self


class RecordConfig(_Strict):
    checkpoints: int = Field(10, ge=1)
    sample_stride: int = Field(10, ge=1)
    theta_stride: Optional[int] = Field(None, ge=1)
    oracle: bool = True
    timing: bool = False
    figures: bool = True


class ExperimentConfig(_Strict):
    name: str = "experiment"
    target: TargetConfig
    algorithm: AlgorithmConfig
    rounds: int = Field(..., ge=1)
    repeats: int = Field(1, ge=1)
    base_seed: int = Field(0, ge=0)
    out_dir: str = "out"
    init: InitConfig = InitConfig()
    grid: Optional[GridConfig] = None
    record: RecordConfig = RecordConfig()

    @model_validator(mode="after")
    def _dimensions(self):
        d = self.target.dimension
        if self.init.value is not None and len(self.init.value) != d:
            raise ValueError(f"init.value has {len(self.init.value)} entries, target dimension is {d}")
        if self.grid is not None and len(self.grid.cells) != d:
            raise ValueError(f"grid has {len(self.grid.cells)} axes, target dimension is {d}")
        if self.algorithm.vr.enabled and self.target.kind != "dataset":
            raise ValueError("variance reduction needs a dataset target")
        if self.algorithm.lr.kind == "cosine_cyclical" and self.algorithm.lr.cycles > self.rounds:
            raise ValueError("more learning-rate cycles than rounds")
        return self

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Copy with ``rounds`` multiplied by ``factor`` (at least one round)."""
        if not factor > 0:
            raise ConfigError("scale", "scale factor must be positive")
        return self.model_copy(update={"rounds": max(1, int(round(self.rounds * factor)))})

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Re-validated copy with top-level fields replaced."""
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        return validate_config(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring where outputs are written."""
        data = self.model_dump(mode="json")
        data.pop("out_dir", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _error_path(loc) -> str:
    parts = []
    for item in loc:
        if isinstance(item, int):
            parts.append(f"[{item}]")
        elif str(item).startswith(("function-after", "function-before", "function-wrap")):
            continue
        else:
            parts.append(("." if parts else "") + str(item))
    return "".join(parts) or "<root>"


def validate_config(data) -> ExperimentConfig:
    """Validate a decoded JSON object; the first schema error becomes a ConfigError."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_error_path(err["loc"]), err["msg"]) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", f"invalid JSON: {exc.msg}") from None
    return validate_config(data)


def save_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.model_dump(mode="json", exclude_unset=True), indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# presets

_D2_GRID = {"lower": [-5.5, -5.5], "upper": [5.5, 5.5], "cells": [100, 100]}
_D5_GRID = {"lower": [-12.0], "upper": [12.0], "cells": [240]}


def _d2_multimodal(algorithm: str) -> dict:
    algo = {"name": algorithm, "chains": 5, "lr": {"kind": "constant", "epsilon0": 3e-3}, "tau": 1.0}
    if algorithm == "icsgld":
        algo.update(zeta=0.75, sa={"cap": 3e-3, "alpha": 0.6, "offset": 100.0},
                    partition={"m": 100, "delta_u": 0.125, "lowest_cut": -3.875})
    elif algorithm == "csgld":
        algo.update(chains=1, zeta=0.75, sa={"cap": 3e-3, "alpha": 0.6, "offset": 100.0},
                    partition={"m": 100, "delta_u": 0.125, "lowest_cut": -3.875})
    elif algorithm == "cycsgld":
        algo.update(chains=1, lr={"kind": "cosine_cyclical", "epsilon0": 1e-2, "cycles": 10})
    elif algorithm == "resgld":
        algo.update(replica={"taus": [1.0, 2.0, 3.0, 4.0, 5.0],
                             "lrs": [0.001, 0.002, 0.003, 0.004, 0.005]})
    # single-chain baselines get the five-chain budget as iterations
    rounds = 80_000 * (5 if algorithm in ("csgld", "cycsgld") else 1)
    return {"name": f"d2_multimodal_{algorithm}", "target": {"kind": "multimodal25"}, "algorithm": algo,
            "rounds": rounds, "repeats": 20, "init": {"kind": "point", "value": [0.0, 0.0]},
            "grid": _D2_GRID}


def _d5_mixture(algorithm: str) -> dict:
    if algorithm not in ("icsgld", "csgld"):
        raise ConfigError("algorithm", "d5_mixture compares icsgld and csgld only")
    chains = 10 if algorithm == "icsgld" else 1
    algo = {"name": algorithm, "chains": chains, "lr": {"kind": "constant", "epsilon0": 0.01},
            "tau": 1.0, "zeta": 0.9, "sa": {"cap": 3e-3, "alpha": 0.6, "offset": 100.0},
            "partition": {"m": 20, "delta_u": 1.0, "lowest_cut": 3.0}}
    rounds = 1_000_000 if algorithm == "icsgld" else 10_000_000
    return {"name": f"d5_mixture_{algorithm}", "target": {"kind": "gaussian_mixture_1d"}, "algorithm": algo,
            "rounds": rounds, "repeats": 10, "init": {"kind": "point", "value": [0.0]},
            "grid": _D5_GRID, "record": {"checkpoints": 10, "sample_stride": 100}}


def _mnist_style(algorithm: str) -> dict:
    if algorithm not in ("icsgld", "csgld"):
        raise ConfigError("algorithm", "mnist_style runs contour samplers only")
    algo = {"name": algorithm, "chains": 4 if algorithm == "icsgld" else 1,
            "lr": {"kind": "constant", "epsilon0": 1e-6}, "tau": 0.1, "zeta": 3e4,
            "sa": {"cap": 0.01, "alpha": 0.6, "offset": 100.0},
            "partition": {"m": 100_000, "delta_u": 10.0, "lowest_cut": 0.0},
            "vr": {"enabled": True, "period": 100}}
    return {"name": f"mnist_style_{algorithm}",
            "target": {"kind": "dataset", "dataset": {"N": 25_000, "n": 2500, "true_mean": 0.5}},
            "algorithm": algo, "rounds": 2000 * (4 if algorithm == "csgld" else 1), "repeats": 1,
            "init": {"kind": "point", "value": [0.0]}, "record": {"oracle": False, "sample_stride": 10}}


_BUILDERS = {"d2_multimodal": _d2_multimodal, "d5_mixture": _d5_mixture, "mnist_style": _mnist_style}


def preset(name: str, scale: float = 1.0, algorithm: str = "icsgld") -> ExperimentConfig:
    """Published settings of a benchmark; ``scale`` multiplies the round count only."""
    if name not in _BUILDERS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"unknown algorithm {algorithm!r}")
    return validate_config(_BUILDERS[name](algorithm)).scaled(scale)
