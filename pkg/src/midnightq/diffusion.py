"""Discrete-time diffusion approximation of the centered midnight count.

The approximating process takes an independent Gaussian step each day and,
while the state is negative (idle servers), receives an extra upward push
proportional to the idle depth:

    X[k+1] = X[k] + G[k] + mu * max(-X[k], 0),   G[k] ~ Normal(drift, variance)

This module provides the one-day transition density of that process, the
closed-form piecewise proxy for its stationary density (exponential tail on
the congested side, Gaussian on the idle side, pieced continuously at
zero), the exact Gaussian stationary law of the always-pulled recursion,
path simulation, and an empirical check that the scaled pre-limit queue
converges to the Gaussian-driven limit recursion as the system grows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .model import DiffusionParams, ModelParams
from . import chain as chain_mod

_SQRT2PI = math.sqrt(2.0 * math.pi)


class UnstableRegimeError(ValueError):
    """The closed-form proxy needs negative drift (load below one)."""


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """One-day transition density of the approximating process.

    With ``ou_everywhere`` the mean-reverting pull applies on both sides of
    zero, which turns the process into the pure discrete OU recursion whose
    stationary law is known in closed form (useful as a self-test).
    """

    diffusion: DiffusionParams
    service_prob: float
    ou_everywhere: bool = False

    def __post_init__(self) -> None:
        mu = self.service_prob
        if not 0.0 < mu < 1.0:
            raise ValueError(f"service_prob must lie in (0, 1), got {mu!r}")

    def step_base(self, x):
        """Pre-increment location: x on the congested side, (1-mu)x on the idle side."""
        pulled = (1.0 - self.service_prob) * np.asarray(x, dtype=float)
        if self.ou_everywhere:
            return pulled
        return np.where(np.asarray(x, dtype=float) >= 0.0, x, pulled)


def transition_density(kernel: TransitionKernel, x, y):
    """Density of tomorrow's state ``y`` given today's state ``x``."""
    d = kernel.diffusion
    base = kernel.step_base(x)
    sd = math.sqrt(d.variance)
    z = (np.asarray(y, dtype=float) - base - d.drift) / sd
    out = np.exp(-0.5 * z * z) / (sd * _SQRT2PI)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class NormalDensity:
    """Gaussian density with closed-form cdf/ppf (idle-side building block)."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance > 0.0:
            raise ValueError(f"variance must be positive, got {self.variance!r}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        out = np.exp(-0.5 * z * z) / (self.sd * _SQRT2PI)
        return out if out.ndim else float(out)

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def ppf(self, u):
        return self.mean + self.sd * ndtri(np.asarray(u, dtype=float))


@dataclass(frozen=True, eq=False)
class PiecewiseDensity:
    """Closed-form proxy for the stationary density of the daily diffusion.

    Exponential with rate ``tail_rate`` on [0, inf), Gaussian with mean
    ``gaussian_center`` and variance ``ou_variance`` on (-inf, 0), with the
    two amplitudes solving continuity at zero and unit total mass.
    """

    alpha_pos: float
    alpha_neg: float
    tail_rate: float
    gaussian_center: float
    ou_variance: float

    @property
    def _gauss_total(self) -> float:
        # alpha_neg times the full-line Gaussian mass
        return self.alpha_neg * _SQRT2PI * math.sqrt(self.ou_variance)

    @property
    def _neg_mass(self) -> float:
        sd = math.sqrt(self.ou_variance)
        return self._gauss_total * float(ndtr(-self.gaussian_center / sd))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        sd = math.sqrt(self.ou_variance)
        z = (x - self.gaussian_center) / sd
        neg = self.alpha_neg * np.exp(-0.5 * z * z)
        pos = self.alpha_pos * np.exp(-self.tail_rate * np.clip(x, 0.0, None))
        out = np.where(x < 0.0, neg, pos)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        sd = math.sqrt(self.ou_variance)
        below = self._gauss_total * ndtr((np.minimum(x, 0.0) - self.gaussian_center) / sd)
        above = (self.alpha_pos / self.tail_rate) * (
            1.0 - np.exp(-self.tail_rate * np.clip(x, 0.0, None))
        )
        out = below + above
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        split = self._neg_mass
        sd = math.sqrt(self.ou_variance)
        ratio = np.clip(u / self._gauss_total, 1e-300, 1.0 - 1e-16)
        gauss = self.gaussian_center + sd * ndtri(ratio)
        arg = 1.0 - np.clip(u - split, 0.0, None) * self.tail_rate / self.alpha_pos
        expo = -np.log(np.clip(arg, 1e-300, None)) / self.tail_rate
        out = np.where(u < split, gauss, expo)
        return out if out.ndim else float(out)

    def integrate(self, a: float, b: float) -> float:
        """Exact mass on [a, b)."""
        return float(self.cdf(b) - self.cdf(a))

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        """Exact masses of the half-open bins defined by ``edges``."""
        c = self.cdf(np.asarray(edges, dtype=float))
        return np.diff(c)


def proxy_density(d: DiffusionParams, mu: float) -> PiecewiseDensity:
    """Solve the two normalizing amplitudes of the piecewise proxy.

    Continuity at zero ties the amplitudes together; unit total mass fixes
    the remaining scale.  Requires negative drift, otherwise the exponential
    branch carries infinite mass.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu!r}")
    if d.tail_rate <= 0.0 or d.drift >= 0.0:
        raise UnstableRegimeError(
            "proxy density not normalizable (γ ≤ 0): drift must be negative"
        )
    center = d.gaussian_center
    v = d.ou_variance
    sd = math.sqrt(v)
    # alpha_pos = ratio * alpha_neg, from matching the two branches at zero
    ratio = math.exp(-center * center / (2.0 * v))
    neg_mass_unit = _SQRT2PI * sd * float(ndtr(-center / sd))
    alpha_neg = 1.0 / (ratio / d.tail_rate + neg_mass_unit)
    alpha_pos = ratio * alpha_neg
    return PiecewiseDensity(
        alpha_pos=alpha_pos,
        alpha_neg=alpha_neg,
        tail_rate=d.tail_rate,
        gaussian_center=center,
        ou_variance=v,
    )


def dou_stationary_density(theta: float, sigma2: float, mu: float) -> NormalDensity:
    """Stationary law of the always-pulled Gaussian recursion.

    X[k+1] = (1 - mu) X[k] + G[k] with G ~ Normal(theta, sigma2) has the
    Gaussian stationary density with mean theta/mu and variance
    sigma2 / (2 mu - mu^2).
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu!r}")
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2!r}")
    return NormalDensity(mean=theta / mu, variance=sigma2 / (2.0 * mu - mu * mu))


def simulate_diffusion(
    d: DiffusionParams,
    mu: float,
    steps: int,
    seed,
    x0: float = 0.0,
) -> np.ndarray:
    """Simulate the daily diffusion path, reproducibly.

    Gaussian increments are pre-drawn in blocks; the idle-side push is
    applied sequentially since it depends on the running state.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps!r}")
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu!r}")
    rng = np.random.Generator(np.random.Philox(seed=seed))
    sd = math.sqrt(d.variance)
    keep = 1.0 - mu

    path = np.empty(steps + 1)
    path[0] = x = float(x0)
    block = 1 << 20
    pos = 0
    while pos < steps:
        m = min(block, steps - pos)
        incs = rng.normal(d.drift, sd, m).tolist()
        base = pos + 1
        for i, g in enumerate(incs):
            x = (x if x >= 0.0 else keep * x) + g
            path[base + i] = x
        pos += m
    return path


@dataclass(frozen=True)
class LimitHarnessConfig:
    """Settings for the empirical convergence check of the scaled queue.

    Each system size N runs with arrival rate N*mu*(1 - beta_star/sqrt(N)),
    so sqrt(N)(1 - rho_N) equals beta_star exactly.  ``lambda_star`` is the
    limiting arrival rate per server and defaults to ``service_prob``, its
    value under that coupling.
    """

    system_sizes: tuple[int, ...]
    horizon: int
    replications: int
    service_prob: float
    beta_star: float = 1.0
    lambda_star: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        sizes = tuple(int(n) for n in self.system_sizes)
        object.__setattr__(self, "system_sizes", sizes)
        if len(set(sizes)) != len(sizes):
            raise ValueError(f"system sizes must be distinct, got {sizes!r}")
        if any(n < 2 for n in sizes):
            raise ValueError(f"system sizes must be >= 2, got {sizes!r}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon!r}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications!r}")
        if not 0.0 < self.service_prob < 1.0:
            raise ValueError(f"service_prob must lie in (0, 1), got {self.service_prob!r}")
        if self.beta_star <= 0.0:
            raise ValueError(f"beta_star must be positive, got {self.beta_star!r}")
        bad = [n for n in sizes if self.beta_star >= math.sqrt(n)]
        if bad:
            raise ValueError(
                f"beta_star={self.beta_star!r} leaves no arrivals for sizes {bad!r}"
            )

    @property
    def limit_arrival_rate(self) -> float:
        return self.service_prob if self.lambda_star is None else self.lambda_star

    def arrival_rate(self, n: int) -> float:
        return n * self.service_prob * (1.0 - self.beta_star / math.sqrt(n))


@dataclass(frozen=True)
class LimitEntry:
    n: int
    ks_distance: float
    replications: int
    horizon: int


@dataclass(frozen=True)
class LimitReport:
    entries: tuple[LimitEntry, ...]
    warnings: tuple[str, ...] = field(default=())

    def ks_distances(self) -> list[float]:
        return [e.ks_distance for e in self.entries]

    def to_json(self) -> str:
        payload = {
            "entries": [
                {
                    "n": e.n,
                    "ks_distance": e.ks_distance,
                    "replications": e.replications,
                    "horizon": e.horizon,
                }
                for e in self.entries
            ],
            "warnings": list(self.warnings),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def _simulate_limit_recursion(
    mu: float,
    drift: float,
    variance: float,
    horizon: int,
    n_paths: int,
    seed,
) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed=seed))
    sd = math.sqrt(variance)
    x = np.zeros(n_paths)
    keep = 1.0 - mu
    for _ in range(horizon):
        g = rng.normal(drift, sd, n_paths)
        x = np.where(x >= 0.0, x, keep * x) + g
    return x


def run_limit_harness(cfg: LimitHarnessConfig) -> LimitReport:
    """Compare the scaled pre-limit queue with the Gaussian limit recursion.

    For each system size the queue starts full, runs ``horizon`` days, and
    the final count is centered and scaled by sqrt(N).  The limit side runs
    the same recursion driven by Gaussian increments with mean
    -mu*beta_star and variance lambda_star + mu(1-mu).  The report carries
    one KS distance per system size.
    """
    mu = cfg.service_prob
    warnings: list[str] = []
    if cfg.replications < 1000:
        warnings.append(
            f"replications={cfg.replications} < 1000: KS noise dominates the comparison"
        )
    limit_drift = -mu * cfg.beta_star
    limit_variance = cfg.limit_arrival_rate + mu * (1.0 - mu)

    root = np.random.SeedSequence(cfg.seed)
    entries = []
    for n, child in zip(cfg.system_sizes, root.spawn(len(cfg.system_sizes))):
        pre_seed, lim_seed = child.spawn(2)
        params = ModelParams(n, cfg.arrival_rate(n), mu)
        finals = chain_mod.simulate_replications(
            params, cfg.horizon, cfg.replications, seed=pre_seed, x0=n
        )
        scaled = (finals - n) / math.sqrt(n)
        limit = _simulate_limit_recursion(
            mu, limit_drift, limit_variance, cfg.horizon, cfg.replications, lim_seed
        )
        entries.append(
            LimitEntry(
                n=n,
                ks_distance=ks_distance(scaled, limit),
                replications=cfg.replications,
                horizon=cfg.horizon,
            )
        )
    return LimitReport(entries=tuple(entries), warnings=tuple(warnings))


@dataclass(frozen=True, eq=False)
class DensityTable:
    """A continuous density sampled on a grid, with tail descriptors."""

    x: np.ndarray
    density: np.ndarray
    tail_rate: float | None = None
    gaussian_center: float | None = None
    ou_variance: float | None = None

    def to_csv(self, path: str) -> None:
        lines = ["x,density"]
        lines += [f"{xi:.12g},{di:.12g}" for xi, di in zip(self.x, self.density)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def density_table(density, grid: np.ndarray) -> DensityTable:
    """Sample any callable density on ``grid``, keeping its tail descriptors."""
    values = np.asarray(density(np.asarray(grid, dtype=float)), dtype=float)
    return DensityTable(
        x=np.asarray(grid, dtype=float),
        density=values,
        tail_rate=getattr(density, "tail_rate", None),
        gaussian_center=getattr(density, "gaussian_center", None),
        ou_variance=getattr(density, "ou_variance", None),
    )
