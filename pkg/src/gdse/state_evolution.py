"""Deterministic Gaussian state evolution, its phase-retrieval scalar
specialization, rank-2 eigenstructure diagnostics, blow-up quantities, and
the convex-regime fixed point."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .design import DesignKind, replication_seed
from .errors import ConfigError, NumericError
from .gd_engine import as_step_sizes, unit_interval_nodes
from .model import (DEFAULT_NODES, GaussianPairCov, ModelSpec, gauss2_expect,
                    noise_from_sample)
from .tableio import write_csv

# ---------------------------------------------------------------------------
# Geometry and the (a, b) representation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeGeometry:
    """The three Gram numbers of (mu0, mu*): |mu0|, <mu0, mu*>, |mu*|."""

    mu0_norm: float
    inner: float
    mu_star_norm: float

    def __post_init__(self):
        if self.mu_star_norm <= 0:
            raise ConfigError(
                f"mu_star_norm must be > 0, got {self.mu_star_norm}")
        if self.mu0_norm < 0:
            raise ConfigError(f"mu0_norm must be >= 0, got {self.mu0_norm}")
        cap = self.mu0_norm * self.mu_star_norm
        if abs(self.inner) > cap * (1 + 1e-12) + 1e-300:
            raise ConfigError(
                f"inner product {self.inner} violates Cauchy-Schwarz for "
                f"norms ({self.mu0_norm}, {self.mu_star_norm})")

    @classmethod
    def from_vectors(cls, mu0, mu_star) -> "SeGeometry":
        mu0 = np.asarray(mu0, dtype=float)
        mu_star = np.asarray(mu_star, dtype=float)
        return cls(float(np.linalg.norm(mu0)), float(mu0 @ mu_star),
                   float(np.linalg.norm(mu_star)))

    @property
    def g00(self) -> float:
        return self.mu0_norm ** 2

    @property
    def g01(self) -> float:
        return self.inner

    @property
    def g11(self) -> float:
        return self.mu_star_norm ** 2


def _as_geometry(geometry) -> SeGeometry:
    if isinstance(geometry, SeGeometry):
        return geometry
    return SeGeometry(*geometry)


@dataclass(frozen=True)
class SePoint:
    """One state-evolution iterate u* = a mu0 + b mu* with its scalars."""

    a: float
    b: float
    gamma: float
    alpha: float
    tau: float
    delta: float


@dataclass
class SeTrack:
    geometry: SeGeometry
    points: list
    model: ModelSpec
    step_sizes: np.ndarray

    def cov_at(self, t: int) -> GaussianPairCov:
        p = self.points[t]
        return GaussianPairCov(p.gamma ** 2, p.alpha, self.geometry.g11)

    def u_vector(self, t: int, mu0, mu_star) -> np.ndarray:
        p = self.points[t]
        return p.a * np.asarray(mu0, dtype=float) + p.b * np.asarray(mu_star, float)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([p.gamma for p in self.points])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    def to_csv(self, path, bq: Optional["BQuantities"] = None) -> None:
        header = ["t", "a", "b", "gamma", "alpha", "tau", "delta",
                  "lam_min_signal", "lam_min_self", "B0", "B"]
        rows = []
        for t, p in enumerate(self.points):
            if bq is not None and t < len(bq.lam_min_signal):
                lam_sig = bq.lam_min_signal[t]
                lam_self = bq.lam_min_self[t]
            else:
                lam_sig = lam_self = math.nan
            if bq is not None and t < len(bq.B0):
                b0, b_ = bq.B0[t], bq.B[t]
            else:
                b0 = b_ = math.nan
            rows.append((t, p.a, p.b, p.gamma, p.alpha, p.tau, p.delta,
                         lam_sig, lam_self, b0, b_))
        write_csv(path, header, rows)


def se_run(geometry, model: ModelSpec, step_sizes, t_max: int,
           nodes: int = DEFAULT_NODES, xi=None) -> SeTrack:
    """Run the two-dimensional state evolution for t_max steps.

    Each point carries (tau, delta) evaluated at its own covariance; the
    next point is a' = (1 - eta tau) a, b' = (1 - eta tau) b + eta delta.
    ``xi`` selects the empirical noise mode (average over realized noise).
    """
    geo = _as_geometry(geometry)
    if t_max < 0:
        raise ConfigError(f"t_max must be >= 0, got {t_max}")
    etas = as_step_sizes(step_sizes, t_max)
    noise = model.noise if xi is None else noise_from_sample(xi)
    aff = model.affine_in_noise

    a, b = 1.0, 0.0
    points = []
    for t in range(t_max + 1):
        gamma2 = a * a * geo.g00 + 2 * a * b * geo.g01 + b * b * geo.g11
        gamma2 = max(gamma2, 0.0)
        alpha = a * geo.g01 + b * geo.g11
        cov = GaussianPairCov(gamma2, alpha, geo.g11)
        tau = gauss2_expect(model.score_d1, cov, noise, nodes, affine_in_xi=aff)
        delta = -gauss2_expect(model.score_d2, cov, noise, nodes, affine_in_xi=aff)
        if not (np.isfinite(tau) and np.isfinite(delta)):
            raise NumericError(
                f"state evolution produced non-finite (tau, delta) at t={t}")
        points.append(SePoint(a, b, math.sqrt(gamma2), alpha, tau, delta))
        if t < t_max:
            eta = etas[t]
            a, b = (1 - eta * tau) * a, (1 - eta * tau) * b + eta * delta
    return SeTrack(geometry=geo, points=points, model=model, step_sizes=etas)


# ---------------------------------------------------------------------------
# Theoretical gradient descent under a non-Gaussian design law (Monte Carlo)
# ---------------------------------------------------------------------------


@dataclass
class TheoreticalGdTrack:
    """Monte Carlo estimate of the population gradient iteration under a
    design law, with per-step and accumulated standard errors."""

    us: list
    step_se_norms: np.ndarray       # length t_max: |per-coordinate SE| at step t
    cumulative_se: np.ndarray       # length t_max + 1: error budget through t
    mc_reps: int

    def deviations_from(self, track: SeTrack, mu0, mu_star) -> np.ndarray:
        out = []
        for t, u in enumerate(self.us):
            out.append(float(np.linalg.norm(u - track.u_vector(t, mu0, mu_star))))
        return np.asarray(out)


def theoretical_gd_mc(kind: DesignKind, model: ModelSpec, mu0, mu_star,
                      step_sizes, t_max: int, mc_reps: int, seed: int,
                      m: int = 200, threads: int = 1) -> TheoreticalGdTrack:
    """Estimate u^(t) <- u - (eta/m) E X^T S(X u, X mu*, xi) by drawing
    ``mc_reps`` fresh (X, xi) pairs at every step."""
    if mc_reps < 1:
        raise ConfigError(f"mc_reps must be >= 1, got {mc_reps}")
    mu0 = np.asarray(mu0, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    n = mu0.size
    etas = as_step_sizes(step_sizes, t_max)

    u = mu0.copy()
    us = [u.copy()]
    step_se = []
    cum2 = 0.0
    cumulative = [0.0]

    def one_rep(idx: int, u_now: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(replication_seed(seed, idx + 1))
        X = kind.sampler(rng, (m, n))
        xi = model.noise.draw(rng, m)
        vals = np.asarray(model.score(X @ u_now, X @ mu_star, xi), dtype=float)
        return (X.T @ vals) / m

    for t in range(t_max):
        base = t * mc_reps
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                grads = list(ex.map(lambda r: one_rep(base + r, u), range(mc_reps)))
        else:
            grads = [one_rep(base + r, u) for r in range(mc_reps)]
        G = np.stack(grads)
        g_hat = G.mean(axis=0)
        if mc_reps > 1:
            se = G.std(axis=0, ddof=1) / math.sqrt(mc_reps)
        else:
            se = np.zeros(n)
        se_norm = float(np.linalg.norm(se))
        step_se.append(se_norm)
        cum2 += (etas[t] * se_norm) ** 2
        cumulative.append(math.sqrt(cum2))
        u = u - etas[t] * g_hat
        us.append(u.copy())

    return TheoreticalGdTrack(us=us, step_se_norms=np.asarray(step_se),
                              cumulative_se=np.asarray(cumulative),
                              mc_reps=mc_reps)


# ---------------------------------------------------------------------------
# Phase-retrieval scalar dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrState:
    """Square-link state evolution in (overlap, perpendicular-norm) form."""

    alpha: float
    beta: float
    eta: float
    noise_mean: float = 0.0


def pr_step(s: PrState) -> PrState:
    """One step of the scalar recursion at |mu*| = 1:
    alpha' = [1 - 6 eta (alpha^2 + beta^2 - 1) + 2 eta nu] alpha,
    beta'  = [1 - 6 eta (alpha^2 + beta^2 - 1/3) + 2 eta nu] beta,
    with beta kept nonnegative (it is a projected norm)."""
    r2 = s.alpha ** 2 + s.beta ** 2
    drift = 2.0 * s.eta * s.noise_mean
    alpha = (1.0 - 6.0 * s.eta * (r2 - 1.0) + drift) * s.alpha
    beta = abs((1.0 - 6.0 * s.eta * (r2 - 1.0 / 3.0) + drift) * s.beta)
    return PrState(alpha=alpha, beta=beta, eta=s.eta, noise_mean=s.noise_mean)


@dataclass
class PrTrack:
    alphas: np.ndarray
    betas: np.ndarray
    eta: float
    noise_mean: float

    def __len__(self) -> int:
        return self.alphas.size

    def signal_distance(self, t: int) -> float:
        """|u*(t) - sign(alpha_0) mu*| in the (alpha, beta) plane."""
        sgn = math.copysign(1.0, self.alphas[0]) if self.alphas[0] != 0 else 1.0
        return math.hypot(self.alphas[t] * sgn - 1.0, self.betas[t])


def pr_run(alpha0: float, beta0: float, eta: float, t_max: int,
           noise_mean: float = 0.0) -> PrTrack:
    if beta0 < 0:
        raise ConfigError(f"beta0 must be >= 0, got {beta0}")
    state = PrState(float(alpha0), float(beta0), float(eta), float(noise_mean))
    alphas, betas = [state.alpha], [state.beta]
    for _ in range(int(t_max)):
        state = pr_step(state)
        alphas.append(state.alpha)
        betas.append(state.beta)
    return PrTrack(np.asarray(alphas), np.asarray(betas), float(eta),
                   float(noise_mean))


_INV_SQRT3 = 1.0 / math.sqrt(3.0)


@dataclass
class PrStageReport:
    """First-hitting times and the detected three-stage decomposition.

    ``T0``/``T_eps`` are None when never reached within the track.  Stage 2
    is the window where beta sits on the 1/sqrt(3) plateau while the overlap
    is still small; stage 1 is everything before it, stage 3 everything
    after until T_eps.
    """

    T0: Optional[int]
    T_eps: Optional[int]
    threshold: float
    eps0: float
    stage1_end: Optional[int]
    stage2_start: Optional[int]
    stage2_end: Optional[int]


def pr_stage_times(track: PrTrack, m: int, c0: float = 1.0,
                   eps0: float = 0.1, threshold: Optional[float] = None,
                   plateau_band: float = 0.02,
                   alpha_small: float = 0.05) -> PrStageReport:
    """Detect the escape time T0 (first t with alpha_{t+1} sign(alpha_0)
    above 1/(c0 log^5 m), or an explicit threshold override) and the
    convergence time T_eps (first t with |alpha - 1| v beta <= eps0/4,
    overlap taken up to the sign of alpha_0)."""
    if threshold is None:
        if m < 3:
            raise ConfigError(f"sample size m={m} gives no usable threshold")
        threshold = 1.0 / (c0 * math.log(m) ** 5)
    alphas, betas = track.alphas, track.betas
    sgn = math.copysign(1.0, alphas[0]) if alphas[0] != 0 else 1.0

    T0 = None
    for t in range(len(track) - 1):
        if alphas[t + 1] * sgn >= threshold:
            T0 = t
            break
    T_eps = None
    for t in range(len(track)):
        if max(abs(alphas[t] * sgn - 1.0), betas[t]) <= eps0 / 4.0:
            T_eps = t
            break

    on_plateau = np.abs(betas - _INV_SQRT3) <= plateau_band
    small = np.abs(alphas) <= alpha_small
    stage2 = np.flatnonzero(on_plateau & small)
    if stage2.size:
        s2a, s2b = int(stage2[0]), int(stage2[-1])
        stage1_end = s2a
    else:
        s2a = s2b = None
        plateau = np.flatnonzero(on_plateau)
        stage1_end = int(plateau[0]) if plateau.size else None
    return PrStageReport(T0=T0, T_eps=T_eps, threshold=float(threshold),
                         eps0=float(eps0), stage1_end=stage1_end,
                         stage2_start=s2a, stage2_end=s2b)


# ---------------------------------------------------------------------------
# Rank-2 eigenstructure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rank2Spectrum:
    """Spectrum of c0 I + (rank <= 2 correction): an (n-2)-fold bulk value
    plus two extreme eigenvalues (which may coincide with the bulk)."""

    bulk: float
    extremes: tuple

    @property
    def lam_min(self) -> float:
        return min(self.bulk, *self.extremes)

    @property
    def lam_max(self) -> float:
        return max(self.bulk, *self.extremes)

    def eigenvalues(self, n: int) -> np.ndarray:
        if n < 2:
            raise ConfigError(f"need n >= 2 to expand the multiset, got {n}")
        return np.sort(np.concatenate(
            [np.full(n - 2, self.bulk), np.asarray(self.extremes)]))


def rank2_eigs_gram(c0: float, c11: float, c12: float, c22: float,
                    u_norm2: float, inner: float, v_norm2: float) -> Rank2Spectrum:
    """Spectrum of c0 I + c11 uu^T + c12(uv^T + vu^T) + c22 vv^T from the
    Gram data (|u|^2, <u,v>, |v|^2) via the 2x2 reduction on span(u, v)
    with first basis vector u/|u|."""
    if u_norm2 < 0 or v_norm2 < 0:
        raise ConfigError("squared norms must be nonnegative")
    if u_norm2 == 0.0:
        return Rank2Spectrum(bulk=c0, extremes=(c0 + c22 * v_norm2, c0))
    r = math.sqrt(u_norm2)
    p = inner / r
    q = math.sqrt(max(v_norm2 - p * p, 0.0))
    b11 = c11 * u_norm2 + 2.0 * c12 * r * p + c22 * p * p
    b12 = (c12 * r + c22 * p) * q
    b22 = c22 * q * q
    half_tr = (b11 + b22) / 2.0
    disc = math.sqrt(((b11 - b22) / 2.0) ** 2 + b12 * b12)
    return Rank2Spectrum(bulk=c0,
                         extremes=(c0 + half_tr + disc, c0 + half_tr - disc))


def rank2_eigs(c0: float, c11: float, c12: float, c22: float,
               u, v) -> Rank2Spectrum:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if float(v @ v) == 0.0:
        raise ConfigError("rank-2 reduction requires v != 0")
    return rank2_eigs_gram(c0, c11, c12, c22,
                           float(u @ u), float(u @ v), float(v @ v))


# ---------------------------------------------------------------------------
# Gaussian M-matrices via integration by parts
# ---------------------------------------------------------------------------

MZ_MODES = ("with_signal", "self")


def _mix_cov(U: float, cov: GaussianPairCov) -> GaussianPairCov:
    """Covariance of (<Z, U u + (1-U) mu*>, <Z, mu*>) from that of
    (<Z,u>, <Z,mu*>)."""
    g2, al, s2 = cov.gamma2, cov.alpha, cov.s2
    w2 = U * U * g2 + 2 * U * (1 - U) * al + (1 - U) ** 2 * s2
    wm = U * al + (1 - U) * s2
    return GaussianPairCov(max(w2, 0.0), wm, s2)


def mz_matrix_coeffs(model: ModelSpec, cov, mode: str = "with_signal",
                     nodes: int = DEFAULT_NODES, u_nodes: int = 16,
                     xi=None) -> tuple:
    """Coefficients (c0, c11, c12, c22) of the Gaussian M-matrix
    c0 I + c11 uu^T + c12 (u mu*^T + mu* u^T) + c22 mu* mu*^T.

    Gaussian integration by parts turns E h(<Z,w>, <Z,mu*>) Z Z^T into
    E[h] I + E[d^2 h] on the span; ``with_signal`` additionally averages the
    first argument's direction over w(U) = U u + (1-U) mu*, U ~ Unif[0,1].
    """
    if mode not in MZ_MODES:
        raise ConfigError(f"mode must be one of {MZ_MODES}, got {mode!r}")
    cov = cov if isinstance(cov, GaussianPairCov) else GaussianPairCov(*cov)
    noise = model.noise if xi is None else noise_from_sample(xi)
    aff = model.affine_in_noise
    P = model.partials

    def expects(c: GaussianPairCov):
        e1 = gauss2_expect(P["d1"], c, noise, nodes, affine_in_xi=aff)
        e111 = gauss2_expect(P["d111"], c, noise, nodes, affine_in_xi=aff)
        e112 = gauss2_expect(P["d112"], c, noise, nodes, affine_in_xi=aff)
        e122 = gauss2_expect(P["d122"], c, noise, nodes, affine_in_xi=aff)
        return e1, e111, e112, e122

    if mode == "self":
        e1, e111, e112, e122 = expects(cov)
        return e1, e111, e112, e122

    Us, ws = unit_interval_nodes(u_nodes)
    c0 = c11 = c12 = c22 = 0.0
    for U, w in zip(Us, ws):
        e1, e111, e112, e122 = expects(_mix_cov(float(U), cov))
        c0 += w * e1
        c11 += w * U * U * e111
        c12 += w * (U * (1 - U) * e111 + U * e112)
        c22 += w * ((1 - U) ** 2 * e111 + 2 * (1 - U) * e112 + e122)
    return c0, c11, c12, c22


def mz_matrix_eigs(model: ModelSpec, cov, mode: str = "with_signal",
                   nodes: int = DEFAULT_NODES, u_nodes: int = 16,
                   xi=None) -> Rank2Spectrum:
    """Spectrum of the Gaussian M-matrix at a state-evolution point given by
    its covariance (|u|^2, <u,mu*>, |mu*|^2)."""
    cov = cov if isinstance(cov, GaussianPairCov) else GaussianPairCov(*cov)
    c0, c11, c12, c22 = mz_matrix_coeffs(model, cov, mode, nodes, u_nodes, xi)
    return rank2_eigs_gram(c0, c11, c12, c22, cov.gamma2, cov.alpha, cov.s2)


# ---------------------------------------------------------------------------
# Blow-up quantities along a track
# ---------------------------------------------------------------------------


@dataclass
class BQuantities:
    """Cumulative products of (1 + eta [lambda_min]_-) along a track.

    ``B0`` uses the signal-mixed M-matrix minima; ``B`` uses the self-mode
    minima with an additive slack eps_n inside the factors.  ``B_plain`` is
    ``B`` recomputed at eps_n = 0 for reference.
    """

    lam_min_signal: np.ndarray
    lam_min_self: np.ndarray
    B0: np.ndarray
    B: np.ndarray
    B_plain: np.ndarray
    eps_n: float


def b_quantities(track: SeTrack, model: Optional[ModelSpec] = None,
                 eps_n: float = 0.0, nodes: int = DEFAULT_NODES,
                 u_nodes: int = 16) -> BQuantities:
    """Evaluate both blow-up sequences for every horizon t along the track.

    B0(t) = sum over s < t of prod over r in [s:t) of (1 + eta_r [lam_sig(r)]_-)
    via the running recursion B0(t) = (B0(t-1) + 1) f_{t-1}, B0(0) = 0.
    """
    if eps_n < 0:
        raise ConfigError(f"eps_n must be >= 0, got {eps_n}")
    model = model or track.model
    T = len(track.points) - 1
    etas = track.step_sizes
    lam_sig = np.empty(T)
    lam_self = np.empty(T)
    for r in range(T):
        cov = track.cov_at(r)
        lam_sig[r] = mz_matrix_eigs(model, cov, "with_signal", nodes,
                                    u_nodes).lam_min
        lam_self[r] = mz_matrix_eigs(model, cov, "self", nodes, u_nodes).lam_min

    def accumulate(lams: np.ndarray, slack: float) -> np.ndarray:
        out = np.empty(T + 1)
        out[0] = 0.0
        for t in range(1, T + 1):
            f = 1.0 + etas[t - 1] * (max(-lams[t - 1], 0.0) + slack)
            out[t] = (out[t - 1] + 1.0) * f
        return out

    B0 = accumulate(lam_sig, 0.0)
    B_plain = accumulate(lam_self, 0.0)
    B = B_plain if eps_n == 0.0 else accumulate(lam_self, eps_n)
    return BQuantities(lam_min_signal=lam_sig, lam_min_self=lam_self,
                       B0=B0, B=B, B_plain=B_plain, eps_n=float(eps_n))


# ---------------------------------------------------------------------------
# Convex-regime fixed point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPoint:
    tau: float
    delta: float
    iterations: int
    residual: float


def solve_fixed_point(model: ModelSpec, mu_star_norm: float,
                      damping: float = 0.5, tol: float = 1e-13,
                      max_iter: int = 10000, nodes: int = DEFAULT_NODES,
                      probe_radius: float = 10.0,
                      probe_points: int = 25) -> FixedPoint:
    """Damped Picard iteration for the stationary pair
    tau = E d1S((delta/tau) s G, s G, xi), delta = -E d2S(same),
    with s = |mu*| and G standard normal.

    Requires d1S > 0 on a probe grid (the strongly-convex regime); iterates
    are rejected if tau ever leaves (0, inf)."""
    if not 0.0 < damping <= 1.0:
        raise ConfigError(f"damping must be in (0, 1], got {damping}")
    if mu_star_norm <= 0:
        raise ConfigError(f"mu_star_norm must be > 0, got {mu_star_norm}")
    s = float(mu_star_norm)
    noise = model.noise
    grid = np.linspace(-probe_radius, probe_radius, int(probe_points))
    gx, gz = np.meshgrid(grid, grid, indexing="ij")
    floor = min(
        float(np.min(model.score_d1(gx, gz, float(a)))) for a in noise.atoms)
    if floor <= 0:
        raise ConfigError(
            f"d1S takes nonpositive value {floor:.3g} on the probe grid; the "
            "fixed point is only defined in the strongly-convex regime")

    aff = model.affine_in_noise

    def evaluate(tau: float, delta: float) -> tuple:
        r = delta / tau
        cov = GaussianPairCov(r * r * s * s, r * s * s, s * s)
        T = gauss2_expect(model.score_d1, cov, noise, nodes, affine_in_xi=aff)
        D = -gauss2_expect(model.score_d2, cov, noise, nodes, affine_in_xi=aff)
        return T, D

    tau, delta = 1.0, 1.0
    for k in range(1, max_iter + 1):
        T, D = evaluate(tau, delta)
        if not (np.isfinite(T) and np.isfinite(D)) or T <= 0:
            raise NumericError(
                f"fixed-point map left the admissible region at iteration {k}: "
                f"(tau, delta) -> ({T}, {D})")
        new_tau = (1.0 - damping) * tau + damping * T
        new_delta = (1.0 - damping) * delta + damping * D
        change = max(abs(new_tau - tau), abs(new_delta - delta))
        tau, delta = new_tau, new_delta
        if change < tol:
            T, D = evaluate(tau, delta)
            residual = max(abs(tau - T), abs(delta - D))
            return FixedPoint(tau=tau, delta=delta, iterations=k,
                              residual=residual)
    T, D = evaluate(tau, delta)
    residual = max(abs(tau - T), abs(delta - D))
    raise NumericError(
        f"fixed point did not converge in {max_iter} iterations; "
        f"last residual {residual:.3e}")
