"""Energy functions, gradients and their stochastic estimators.

Two families of targets are provided:

* :class:`AnalyticTarget` -- closed-form energies (the 25-mode lattice
  density, a 1D Gaussian mixture, or user callables).  Mini-batch noise is
  simulated by additive Gaussian perturbations of the energy and gradient.
* :class:`DatasetTarget` -- finite-sum energies over ``N`` records, estimated
  from mini-batches of size ``n`` and optionally through a control-variate
  (variance-reduced) energy estimator anchored at a past position.

Targets are immutable after construction.  Every stochastic call takes a
caller-owned :class:`numpy.random.Generator`, so a target can be shared by
any number of chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .errors import InputError, StateError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi

ENERGY_KINDS = ("multimodal25", "gaussian_mixture_1d", "custom")


@dataclass(frozen=True)
class TargetNoise:
    """Standard deviations of the additive estimator noise."""

    energy_std: float = 0.0
    grad_std: float = 0.0

    def __post_init__(self):
        if self.energy_std < 0 or self.grad_std < 0:
            raise InputError("noise standard deviations must be >= 0")


# --------------------------------------------------------------------------
# closed-form energies


def _multimodal25(x, params):
    x1, x2 = float(x[0]), float(x[1])
    r2 = x1 * x1 + x2 * x2
    u = 0.2 * r2 - 2.0 * (math.cos(_TWO_PI * x1) + math.cos(_TWO_PI * x2))
    g1 = 0.4 * x1 + 2.0 * _TWO_PI * math.sin(_TWO_PI * x1)
    g2 = 0.4 * x2 + 2.0 * _TWO_PI * math.sin(_TWO_PI * x2)
    if r2 > 20.0:
        u += r2 - 20.0
        g1 += 2.0 * x1
        g2 += 2.0 * x2
    return u, np.array([g1, g2])


def _gaussian_mixture_1d(x, params):
    # params = (w_1, mu_1, sigma_1, w_2, mu_2, sigma_2, ...)
    xv = float(x[0])
    logs = []
    slopes = []
    for j in range(0, len(params), 3):
        w, mu, sd = params[j], params[j + 1], params[j + 2]
        z = (xv - mu) / sd
        logs.append(math.log(w) - math.log(sd) - _LOG_SQRT_2PI - 0.5 * z * z)
        slopes.append(z / sd)
    top = max(logs)
    expo = [math.exp(v - top) for v in logs]
    total = sum(expo)
    u = -(top + math.log(total))
    g = sum(e * s for e, s in zip(expo, slopes)) / total
    return u, np.array([g])


_ANALYTIC = {
    "multimodal25": _multimodal25,
    "gaussian_mixture_1d": _gaussian_mixture_1d,
}


@dataclass(frozen=True)
class AnalyticTarget:
    """Closed-form energy ``U(x)`` with optional simulated estimator noise.

    ``parameters`` holds mixture triples ``(weight, mean, std)`` for the
    Gaussian mixture and is empty for the lattice target.  ``custom`` targets
    carry an ``energy_grad_fn`` returning ``(U(x), grad U(x))``.
    """

    dim: int
    energy_kind: str
    parameters: tuple = ()
    noise: Optional[TargetNoise] = None
    energy_grad_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("dim must be a positive integer")
        if self.energy_kind not in ENERGY_KINDS:
            raise InputError(f"unknown energy kind {self.energy_kind!r}")
        if self.energy_kind == "custom" and self.energy_grad_fn is None:
            raise InputError("custom targets need an energy_grad_fn")
        if self.energy_kind == "gaussian_mixture_1d":
            if self.dim != 1 or len(self.parameters) % 3 or not self.parameters:
                raise InputError("gaussian_mixture_1d needs dim=1 and (w, mu, sd) triples")
            if any(p <= 0 for p in self.parameters[0::3]) or any(p <= 0 for p in self.parameters[2::3]):
                raise InputError("mixture weights and standard deviations must be positive")
        if self.energy_kind == "multimodal25" and self.dim != 2:
            raise InputError("multimodal25 is two-dimensional")

    @property
    def noisy(self) -> bool:
        return self.noise is not None and (self.noise.energy_std > 0 or self.noise.grad_std > 0)

    def energy_grad(self, x):
        if self.energy_kind == "custom":
            u, g = self.energy_grad_fn(x)
            return float(u), np.asarray(g, dtype=float)
        return _ANALYTIC[self.energy_kind](x, self.parameters)

    def energy(self, x) -> float:
        return self.energy_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.energy_grad(x)[1]

    def stochastic(self, x, rng: np.random.Generator):
        """One noisy ``(energy, gradient)`` pair; no draws when noise is off."""
        u, g = self.energy_grad(x)
        if self.noise is not None:
            if self.noise.energy_std > 0:
                u += self.noise.energy_std * rng.standard_normal()
            if self.noise.grad_std > 0:
                g = g + self.noise.grad_std * rng.standard_normal(self.dim)
        return u, g

    def energy_variance(self, x=None) -> float:
        """Variance of the energy estimator (constant for additive noise)."""
        return 0.0 if self.noise is None else self.noise.energy_std ** 2

    def energy_grid(self, points: np.ndarray) -> np.ndarray:
        """Exact energies at the rows of ``points`` (shape ``(M, dim)``)."""
        points = np.asarray(points, dtype=float)
        if self.energy_kind == "multimodal25":
            x1, x2 = points[:, 0], points[:, 1]
            r2 = x1 * x1 + x2 * x2
            u = 0.2 * r2 - 2.0 * (np.cos(_TWO_PI * x1) + np.cos(_TWO_PI * x2))
            return u + np.where(r2 > 20.0, r2 - 20.0, 0.0)
        if self.energy_kind == "gaussian_mixture_1d":
            p = np.asarray(self.parameters, dtype=float).reshape(-1, 3)
            z = (points[:, :1] - p[:, 1]) / p[:, 2]
            logs = np.log(p[:, 0]) - np.log(p[:, 2]) - _LOG_SQRT_2PI - 0.5 * z * z
            top = logs.max(axis=1)
            return -(top + np.log(np.exp(logs - top[:, None]).sum(axis=1)))
        return np.array([self.energy_grad(p)[0] for p in points])


def multimodal25(noise: Optional[TargetNoise] = None) -> AnalyticTarget:
    """``0.2|x|^2 - 2(cos 2pi x1 + cos 2pi x2)`` plus the outer quadratic wall."""
    return AnalyticTarget(dim=2, energy_kind="multimodal25", noise=noise, name="multimodal25")


def gaussian_mixture_1d(weights=(0.4, 0.6), means=(-6.0, 4.0), stds=(1.0, 1.0),
                        noise: Optional[TargetNoise] = None) -> AnalyticTarget:
    if not len(weights) == len(means) == len(stds):
        raise InputError("weights, means and stds must have equal length")
    if not weights or any(w <= 0 for w in weights) or any(s <= 0 for s in stds):
        raise InputError("mixture weights and stds must be positive")
    total = float(sum(weights))
    params = []
    for w, mu, sd in zip(weights, means, stds):
        params += [float(w) / total, float(mu), float(sd)]
    return AnalyticTarget(dim=1, energy_kind="gaussian_mixture_1d", parameters=tuple(params),
                          noise=noise, name="gaussian_mixture_1d")


def quadratic(dim: int = 1, offset: float = 0.0, scale: float = 1.0,
              noise: Optional[TargetNoise] = None) -> AnalyticTarget:
    """``offset + scale * |x|^2 / 2`` as a custom target."""

    def fn(x):
        x = np.asarray(x, dtype=float)
        return offset + 0.5 * scale * float(x @ x), scale * x

    return AnalyticTarget(dim=dim, energy_kind="custom", parameters=(offset, scale),
                          noise=noise, energy_grad_fn=fn, name="quadratic")


# --------------------------------------------------------------------------
# finite-sum targets


@dataclass(frozen=True, eq=False)
class DatasetTarget:
    """Gaussian-likelihood mean estimation over ``N`` records.

    The energy of record ``i`` is ``|y_i - x|^2 / (2 sigma^2) + prior(x) / N``
    so that the full energy is exactly the sum of the per-record energies.
    The prior is ``N(prior_mean, prior_std^2)`` per coordinate.
    """

    data: np.ndarray
    n: int
    sigma: float = 1.0
    prior_mean: float = 0.0
    prior_std: float = 10.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise InputError("data must be an (N, d) array with N >= 1")
        if not 1 <= self.n <= data.shape[0]:
            raise InputError(f"batch size n={self.n} must lie in [1, N={data.shape[0]}]")
        if self.sigma <= 0 or self.prior_std <= 0:
            raise InputError("sigma and prior_std must be positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def noisy(self) -> bool:
        return self.n < self.N

    def _prior(self, x):
        d = x - self.prior_mean
        return float(d @ d) / (2.0 * self.prior_std ** 2)

    def per_point_energies(self, x, batch=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.data if batch is None else self.data[batch]
        r = y - x
        return (r * r).sum(axis=1) / (2.0 * self.sigma ** 2) + self._prior(x) / self.N

    def likelihood_energies(self, x) -> np.ndarray:
        r = self.data - np.asarray(x, dtype=float)
        return (r * r).sum(axis=1) / (2.0 * self.sigma ** 2)

    def prior_energy(self, x) -> float:
        return self._prior(np.asarray(x, dtype=float))

    def _batch_grad(self, x, batch):
        y = self.data if batch is None else self.data[batch]
        size = y.shape[0]
        return (size * x - y.sum(axis=0)) / self.sigma ** 2 + size * (x - self.prior_mean) / (
            self.prior_std ** 2 * self.N)

    def energy(self, x) -> float:
        return float(np.sum(self.per_point_energies(x)))

    def grad(self, x) -> np.ndarray:
        return self._batch_grad(x, None)

    def energy_grad(self, x):
        return self.energy(x), self.grad(x)

    def draw_batch(self, rng: np.random.Generator):
        if self.n == self.N:
            return None
        return rng.choice(self.N, size=self.n, replace=False)

    def batch_estimates(self, x, batch):
        """Scaled energy and gradient estimates on a given batch."""
        if batch is None:
            return self.energy(x), self.grad(x)
        scale = self.N / self.n
        return scale * float(np.sum(self.per_point_energies(x, batch))), scale * self._batch_grad(x, batch)

    def stochastic(self, x, rng: np.random.Generator):
        """``(N/n)`` scaled energy and gradient from one shared mini-batch."""
        return self.batch_estimates(x, self.draw_batch(rng))

    def energy_variance(self, x, batch=None) -> float:
        """Plug-in variance of the scaled mini-batch energy estimator."""
        if self.n == self.N:
            return 0.0
        e = self.per_point_energies(x, batch)
        s2 = float(np.var(e, ddof=1)) if e.size > 1 else 0.0
        return self.N ** 2 / self.n * s2 * (1.0 - self.n / self.N)

    def energy_grid(self, points):
        return np.array([self.energy(p) for p in np.asarray(points, dtype=float)])


def synthesize_dataset(N: int = 1000, n: int = 100, true_mean=0.5, sigma: float = 1.0,
                       seed: int = 0, dim: int = 1, prior_mean: float = 0.0,
                       prior_std: float = 10.0) -> DatasetTarget:
    rng = np.random.default_rng(seed)
    data = np.asarray(true_mean, dtype=float) + sigma * rng.standard_normal((N, dim))
    return DatasetTarget(data=data, n=n, sigma=sigma, prior_mean=prior_mean, prior_std=prior_std)


def load_dataset_csv(path, n: int, **kwargs) -> DatasetTarget:
    """One record per line, comma-separated coordinates, no header."""
    data = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    return DatasetTarget(data=data, n=n, **kwargs)


TargetModel = Union[AnalyticTarget, DatasetTarget]


# --------------------------------------------------------------------------
# variance-reduced energy estimator


@dataclass(frozen=True, eq=False)
class VRState:
    """Control-variate anchor for the variance-reduced energy estimator."""

    update_period: int
    anchor: Optional[np.ndarray] = None
    anchor_per_point: Optional[np.ndarray] = None
    anchor_full_energy: Optional[float] = None

    def __post_init__(self):
        if self.update_period < 1:
            raise InputError("update_period q must be >= 1")

    @property
    def initialized(self) -> bool:
        return self.anchor is not None


def _check_x(target, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (target.dim,):
        raise InputError(f"position has shape {x.shape}, target expects ({target.dim},)")
    return x


def energy_exact(target: TargetModel, x) -> float:
    return target.energy(_check_x(target, x))


def grad_exact(target: TargetModel, x) -> np.ndarray:
    return target.grad(_check_x(target, x))


def energy_stochastic(target: TargetModel, x, rng: np.random.Generator) -> float:
    """Unbiased estimate of ``U(x)``."""
    return target.stochastic(_check_x(target, x), rng)[0]


def grad_stochastic(target: TargetModel, x, rng: np.random.Generator) -> np.ndarray:
    """Unbiased estimate of ``grad U(x)``."""
    return target.stochastic(_check_x(target, x), rng)[1]


def vr_energy(target: DatasetTarget, vr: VRState, x, batch=None) -> float:
    """Control-variate energy estimate using one batch for both terms.

    ``batch=None`` means the full data set.
    """
    if not vr.initialized:
        raise StateError("variance-reduction anchor has not been initialised")
    x = _check_x(target, x)
    if batch is None:
        return float(np.sum(target.per_point_energies(x) - vr.anchor_per_point)) + vr.anchor_full_energy
    batch = np.asarray(batch)
    scale = target.N / batch.size
    diff = target.per_point_energies(x, batch) - vr.anchor_per_point[batch]
    return scale * float(np.sum(diff)) + vr.anchor_full_energy


def set_anchor(vr: VRState, x, target: DatasetTarget) -> VRState:
    x = np.array(x, dtype=float)
    per_point = target.per_point_energies(x)
    per_point.setflags(write=False)
    x.setflags(write=False)
    return VRState(update_period=vr.update_period, anchor=x, anchor_per_point=per_point,
                   anchor_full_energy=float(np.sum(per_point)))


def refresh_anchor(vr: VRState, x, k: int, target: DatasetTarget) -> VRState:
    """Move the anchor to ``x`` when ``k`` is a multiple of the period."""
    if k % vr.update_period == 0:
        return set_anchor(vr, _check_x(target, x), target)
    return vr
