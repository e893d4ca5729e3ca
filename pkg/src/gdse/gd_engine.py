"""Empirical gradient descent on the sample loss, leave-one-out variants,
and trajectory diagnostics (incoherence, concentration error, empirical
M-matrices and the product-of-norms statistic)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .design import DesignMatrix
from .errors import ConfigError, NumericError
from .model import ModelSpec
from .tableio import write_csv

DIVERGENCE_NORM = 1e12


def as_step_sizes(step_sizes: Union[float, Sequence[float]], t_max: int) -> np.ndarray:
    """Normalize a constant or per-iteration step-size spec to an array of
    length t_max; steps must be nonnegative and finite."""
    if np.isscalar(step_sizes):
        etas = np.full(int(t_max), float(step_sizes))
    else:
        etas = np.asarray(step_sizes, dtype=float)
        if etas.size < t_max:
            raise ConfigError(
                f"need {t_max} step sizes, got {etas.size}")
        etas = etas[:t_max].copy()
    if not np.all(np.isfinite(etas)) or (etas < 0).any():
        raise ConfigError("step sizes must be finite and >= 0")
    return etas


@dataclass(frozen=True)
class GdConfig:
    """Gradient-descent run configuration: steps, horizon, initialization."""

    step_sizes: Union[float, Sequence[float]]
    t_max: int
    init: np.ndarray
    record_every: int = 1

    def __post_init__(self):
        if self.t_max < 0:
            raise ConfigError(f"t_max must be >= 0, got {self.t_max}")
        if self.record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every}")
        object.__setattr__(self, "init", np.asarray(self.init, dtype=float))

    def etas(self) -> np.ndarray:
        return as_step_sizes(self.step_sizes, self.t_max)


@dataclass
class GdTrajectory:
    """Recorded iterates and per-iteration scalar diagnostics.

    Scalar arrays cover every computed iteration t = 0..T; full iterate
    vectors are stored every ``record_every`` steps (plus the final one).
    ``diverged_at`` is the first t whose iterate norm exceeded the cutoff.
    """

    ts: np.ndarray
    norms: np.ndarray
    overlaps: np.ndarray
    corrs: np.ndarray
    incoherences: np.ndarray
    conc_errors: np.ndarray
    stored_ts: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    diverged_at: Optional[int] = None
    step_sizes: Optional[np.ndarray] = None

    @property
    def t_final(self) -> int:
        return int(self.ts[-1])

    def iterate_at(self, t: int) -> np.ndarray:
        try:
            return self.iterates[self.stored_ts.index(int(t))]
        except ValueError:
            raise KeyError(f"iterate at t={t} was not recorded") from None

    @property
    def final_iterate(self) -> np.ndarray:
        return self.iterates[-1]

    def to_csv(self, path) -> None:
        header = ["t", "norm", "overlap", "corr", "incoherence", "conc_error"]
        rows = zip(self.ts, self.norms, self.overlaps, self.corrs,
                   self.incoherences, self.conc_errors)
        write_csv(path, header, rows)

    def save_iterates(self, path) -> None:
        np.save(path, np.asarray(self.iterates))


def generate_response(X: DesignMatrix, mu_star, model: ModelSpec, seed: int):
    """Draw noise and produce (y, xi) with y_i = response(<X_i, mu*>, xi_i)."""
    mu_star = np.asarray(mu_star, dtype=float)
    if mu_star.shape != (X.n,):
        raise ConfigError(f"mu_star must have shape ({X.n},), got {mu_star.shape}")
    rng = np.random.default_rng(int(seed))
    xi = model.noise.draw(rng, X.m)
    y = np.asarray(model.response(X.entries @ mu_star, xi), dtype=float)
    return y, xi


def run_gd(X: DesignMatrix, y, model: ModelSpec, cfg: GdConfig,
           mu_star=None, se_track=None) -> GdTrajectory:
    """Iterate mu <- mu - (eta_t/m) X^T dL(X mu, y).

    Signal-relative diagnostics (overlap, corr, conc_error) require
    ``mu_star``; concentration error additionally needs the deterministic
    track ``se_track`` whose iterate t is compared against mu^(t).
    Divergent runs halt at the cutoff norm and keep the partial trajectory.
    """
    A = X.entries
    y = np.asarray(y, dtype=float)
    if y.shape != (X.m,):
        raise ConfigError(f"response must have shape ({X.m},), got {y.shape}")
    mu = cfg.init.copy()
    if mu.shape != (X.n,):
        raise ConfigError(f"init must have shape ({X.n},), got {mu.shape}")
    if model.loss_d1 is None:
        raise ConfigError(
            f"model {model.name!r} has no loss derivative; empirical GD needs one")
    if se_track is not None and mu_star is None:
        raise ConfigError("concentration error needs mu_star alongside se_track")
    etas = cfg.etas()

    star = None if mu_star is None else np.asarray(mu_star, dtype=float)
    star_norm = None if star is None else float(np.linalg.norm(star))

    ts, norms, overlaps, corrs, incohs, concs = [], [], [], [], [], []
    stored_ts, iterates = [], []
    diverged_at = None

    t = 0
    while True:
        p = A @ mu
        norm = float(np.linalg.norm(mu))
        ts.append(t)
        norms.append(norm)
        incohs.append(float(np.max(np.abs(p))))
        if star is None:
            overlaps.append(math.nan)
            corrs.append(math.nan)
        else:
            ov = float(star @ mu)
            overlaps.append(ov)
            denom = norm * star_norm
            corrs.append(ov / denom if denom > 0 else math.nan)
        if se_track is not None and t < len(se_track.points):
            u_t = se_track.u_vector(t, cfg.init, star)
            concs.append(float(np.linalg.norm(mu - u_t)))
        else:
            concs.append(math.nan)
        record = (t % cfg.record_every == 0) or (t == cfg.t_max)
        if norm > DIVERGENCE_NORM:
            diverged_at = t
            record = True
        if record:
            stored_ts.append(t)
            iterates.append(mu.copy())
        if diverged_at is not None or t >= cfg.t_max:
            break
        g = np.asarray(model.loss_d1(p, y), dtype=float)
        mu = mu - (etas[t] / X.m) * (A.T @ g)
        if not np.all(np.isfinite(mu)):
            # overflow inside the step: report divergence at the new index
            diverged_at = t + 1
            ts.append(t + 1)
            norms.append(math.inf)
            overlaps.append(math.nan)
            corrs.append(math.nan)
            incohs.append(math.nan)
            concs.append(math.nan)
            break
        t += 1

    return GdTrajectory(
        ts=np.asarray(ts, dtype=int),
        norms=np.asarray(norms, dtype=float),
        overlaps=np.asarray(overlaps, dtype=float),
        corrs=np.asarray(corrs, dtype=float),
        incoherences=np.asarray(incohs, dtype=float),
        conc_errors=np.asarray(concs, dtype=float),
        stored_ts=stored_ts,
        iterates=iterates,
        diverged_at=diverged_at,
        step_sizes=etas,
    )


def leave_one_out(X: DesignMatrix, i: int, y, model: ModelSpec, cfg: GdConfig,
                  mu_star=None, se_track=None) -> GdTrajectory:
    """GD trajectory with design row i (1-based) zeroed, still dividing by m."""
    if not 1 <= i <= X.m:
        raise ConfigError(f"sample index must be in [1, {X.m}], got {i}")
    entries = X.entries.copy()
    entries[i - 1, :] = 0.0
    entries.setflags(write=False)
    X_loo = DesignMatrix(entries=entries, kind=X.kind, seed=X.seed)
    return run_gd(X_loo, y, model, cfg, mu_star=mu_star, se_track=se_track)


def unit_interval_nodes(n: int):
    """Gauss-Legendre nodes and weights on [0, 1] (weights sum to 1)."""
    if n < 1:
        raise ConfigError(f"need >= 1 quadrature node, got {n}")
    if n == 1:
        return np.array([0.5]), np.array([1.0])
    x, w = leggauss(int(n))
    return (x + 1.0) / 2.0, w / 2.0


def empirical_M(X: DesignMatrix, u, v, model: ModelSpec, mu_star,
                xi=None, u_nodes: int = 16) -> np.ndarray:
    """Sample M-matrix: average over rows and over U ~ Unif[0,1] of
    d1S(<X_i, U u + (1-U) v>, <X_i, mu*>, xi_i) X_i X_i^T."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    A = X.entries
    pu, pv, pstar = A @ u, A @ v, A @ mu_star
    xi_vec = np.full(X.m, model.noise.mean) if xi is None else np.asarray(xi, float)
    nodes, wts = unit_interval_nodes(u_nodes)
    weight = np.zeros(X.m)
    for U, w in zip(nodes, wts):
        weight += w * np.asarray(
            model.score_d1(U * pu + (1.0 - U) * pv, pstar, xi_vec), dtype=float)
    M = (A * (weight / X.m)[:, None]).T @ A
    return (M + M.T) / 2.0


def op_norm(A, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest singular value: dense SVD up to 200 columns, else power
    iteration on A^T A with relative tolerance ``tol``."""
    A = np.asarray(A, dtype=float)
    if min(A.shape) == 0:
        return 0.0
    if max(A.shape) <= 200:
        return float(np.linalg.svd(A, compute_uv=False)[0])
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    lam_prev = 0.0
    for _ in range(max_iter):
        w = A @ v
        lam = float(w @ w)
        if lam == 0.0:
            return 0.0
        v = A.T @ w
        v /= np.linalg.norm(v)
        if abs(lam - lam_prev) <= tol * lam:
            return math.sqrt(lam)
        lam_prev = lam
    raise NumericError(f"operator-norm power iteration failed to reach tol={tol}")


def product_norm_diag(matrices, etas) -> float:
    """Blow-up statistic 1 + max over tau of sum over s of the products of
    ||I - eta_r M_r||_op for r in [s:tau) (empty products count as 1).

    Computed by the running recursion S_0 = 1, S_tau = S_{tau-1} f_{tau-1} + 1.
    """
    matrices = list(matrices)
    etas = np.asarray(etas, dtype=float)
    if etas.size != len(matrices):
        raise ConfigError(
            f"got {len(matrices)} matrices but {etas.size} step sizes")
    n = None
    for M in matrices:
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConfigError("all matrices must be square")
        if n is None:
            n = M.shape[0]
        elif M.shape[0] != n:
            raise ConfigError("all matrices must have equal size")
    best = s = 1.0
    for M, eta in zip(matrices, etas):
        M = np.asarray(M, dtype=float)
        f = op_norm(np.eye(M.shape[0]) - eta * M)
        s = s * f + 1.0
        best = max(best, s)
    return 1.0 + best
