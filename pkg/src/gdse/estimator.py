"""Data-free estimation of the state evolution: track (tau-hat, delta-hat,
gamma-hat, alpha-hat) from the link function, signal strength, and step size
alone, and predict the correlation of gradient descent with the signal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .design import replication_seed
from .errors import ConfigError
from .model import (DEFAULT_NODES, GaussianPairCov, LinkFunction, ModelSpec,
                    gauss2_expect, zero_noise)
from .tableio import write_csv

DEFAULT_CAP = math.exp(100.0)

# Links whose value and first two derivatives are globally bounded, as the
# estimation guarantee assumes; running other links still works but is
# flagged in the track metadata.
BOUNDED_LINKS = frozenset({"sigmoid"})


@dataclass(frozen=True)
class QuadratureBackend:
    nodes: int = DEFAULT_NODES

    def expect(self, f, cov: GaussianPairCov, t: int) -> float:
        return gauss2_expect(lambda x, z, xi: f(x, z), cov, zero_noise(),
                             self.nodes, affine_in_xi=True)


@dataclass(frozen=True)
class MonteCarloBackend:
    draws: int = 1000
    seed: int = 0

    def expect(self, f, cov: GaussianPairCov, t: int) -> float:
        rng = np.random.default_rng(replication_seed(self.seed, t + 1))
        z1 = rng.standard_normal(self.draws)
        z2 = rng.standard_normal(self.draws)
        g = math.sqrt(cov.gamma2)
        s = math.sqrt(cov.s2)
        rho = cov.correlation
        G1 = g * z1
        G2 = s * (rho * z1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * z2)
        return float(np.mean(f(G1, G2)))


Backend = Union[QuadratureBackend, MonteCarloBackend]


@dataclass(frozen=True)
class EstimatorConfig:
    """Inputs of the data-free tracker: signal strength, step size, the
    initialization pair, the overflow cap, and the expectation backend."""

    mu_star_norm: float
    eta: float
    gamma0_hat: float
    alpha0_hat: float = 0.0
    cap: float = DEFAULT_CAP
    backend: Backend = field(default_factory=QuadratureBackend)

    def __post_init__(self):
        if self.mu_star_norm <= 0:
            raise ConfigError(
                f"mu_star_norm must be > 0, got {self.mu_star_norm}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.cap <= 0:
            raise ConfigError(f"cap must be > 0, got {self.cap}")
        if self.gamma0_hat < 0:
            raise ConfigError(f"gamma0_hat must be >= 0, got {self.gamma0_hat}")
        if abs(self.alpha0_hat) > self.gamma0_hat * self.mu_star_norm * (1 + 1e-12):
            raise ConfigError(
                f"|alpha0_hat| = {abs(self.alpha0_hat)} exceeds "
                f"gamma0_hat * mu_star_norm = "
                f"{self.gamma0_hat * self.mu_star_norm}")


@dataclass
class EstimatorTrack:
    """Per-iteration estimates; row t holds the state (gamma, alpha, corr)
    at t and the (tau, delta) estimates computed from that state."""

    tau_hats: np.ndarray
    delta_hats: np.ndarray
    gamma_hats: np.ndarray
    alpha_hats: np.ndarray
    corr_hats: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.gamma_hats.size

    def to_csv(self, path) -> None:
        header = ["t", "tau_hat", "delta_hat", "gamma_hat", "alpha_hat",
                  "corr_hat"]
        rows = zip(range(len(self)), self.tau_hats, self.delta_hats,
                   self.gamma_hats, self.alpha_hats, self.corr_hats)
        write_csv(path, header, rows)


def _link_of(model_or_link) -> LinkFunction:
    if isinstance(model_or_link, LinkFunction):
        return model_or_link
    if isinstance(model_or_link, ModelSpec):
        if model_or_link.link is None:
            raise ConfigError(
                f"model {model_or_link.name!r} has no link function; the "
                "data-free tracker is defined for single-index links only")
        return model_or_link.link
    raise ConfigError(f"expected a LinkFunction or ModelSpec, got "
                      f"{type(model_or_link).__name__}")


def estimator_step(state, cfg: EstimatorConfig, model, t: int = 0):
    """One tracker update from state (gamma_hat, alpha_hat).

    Returns (tau_hat, delta_hat, gamma_next, alpha_next, psd_clipped).
    The tau estimate is noise-free by construction: the tracker never sees
    realized noise, so the noise cross-term of the population value is
    absent.
    """
    link = _link_of(model)
    gamma_hat, alpha_hat = float(state[0]), float(state[1])
    s = cfg.mu_star_norm
    g2 = gamma_hat ** 2
    bound = gamma_hat * s
    psd_clipped = abs(alpha_hat) > bound
    if psd_clipped:
        alpha_hat = math.copysign(bound, alpha_hat)
    cov = GaussianPairCov(g2, alpha_hat, s * s)

    f, f1, f2 = link.f, link.d1, link.d2
    tau_hat = cfg.backend.expect(
        lambda x, z: f1(x) ** 2 + (f(x) - f(z)) * f2(x), cov, t)
    delta_hat = cfg.backend.expect(lambda x, z: f1(x) * f1(z), cov, t)

    eta = cfg.eta
    shrink = 1.0 - eta * tau_hat
    g2_next = (shrink ** 2 * g2 + (eta * delta_hat) ** 2 * s * s
               + 2.0 * eta * delta_hat * shrink * alpha_hat)
    gamma_next = min(math.sqrt(max(g2_next, 0.0)), cfg.cap)
    alpha_raw = shrink * alpha_hat + eta * delta_hat * s * s
    cap_a = gamma_next * s
    alpha_next = min(max(alpha_raw, -cap_a), cap_a)
    return tau_hat, delta_hat, gamma_next, alpha_next, psd_clipped


def estimator_run(cfg: EstimatorConfig, model, t_max: int) -> EstimatorTrack:
    """Iterate the tracker for t_max steps; deterministic under the
    quadrature backend, seed-deterministic under Monte Carlo."""
    if t_max < 0:
        raise ConfigError(f"t_max must be >= 0, got {t_max}")
    link = _link_of(model)
    s = cfg.mu_star_norm
    gamma, alpha = float(cfg.gamma0_hat), float(cfg.alpha0_hat)

    gammas, alphas, corrs, taus, deltas = [], [], [], [], []
    clip_events = 0
    for t in range(t_max + 1):
        gammas.append(gamma)
        alphas.append(alpha)
        denom = gamma * s
        corrs.append(alpha / denom if denom > 0 else 0.0)
        tau_hat, delta_hat, g_next, a_next, clipped = estimator_step(
            (gamma, alpha), cfg, link, t)
        taus.append(tau_hat)
        deltas.append(delta_hat)
        clip_events += int(clipped)
        if t < t_max:
            gamma, alpha = g_next, a_next

    metadata = {
        "link": link.name,
        "assumption_mismatch": link.name not in BOUNDED_LINKS,
        "psd_clip_events": clip_events,
        "backend": type(cfg.backend).__name__,
    }
    return EstimatorTrack(
        tau_hats=np.asarray(taus), delta_hats=np.asarray(deltas),
        gamma_hats=np.asarray(gammas), alpha_hats=np.asarray(alphas),
        corr_hats=np.asarray(corrs), metadata=metadata)


def estimate_signal_norm(y, link: LinkFunction, noise_mean: float = 0.0) -> float:
    """Method-of-moments estimate of |mu*| for the square link:
    E Y = |mu*|^2 + E xi, so |mu*| = sqrt(mean(y) - noise mean)."""
    if link.name != "square":
        raise ConfigError(
            "the method-of-moments helper supports the square link only, "
            f"got {link.name!r}")
    val = float(np.mean(np.asarray(y, dtype=float))) - float(noise_mean)
    return math.sqrt(max(val, 0.0))
