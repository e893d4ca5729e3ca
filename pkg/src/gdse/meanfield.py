"""Mean-field state evolution at finite aspect ratio, via Monte Carlo over
the scalar Gaussian history, and its degeneration diagnostics against the
two-dimensional state evolution as the aspect ratio grows.

The history variables: z^(0) plays the role of <X_i, mu*>-type coordinates,
z^(t) the preactivations of iterate t; w^(t) is the per-coordinate Gaussian
noise injected into the iterate representation Omega_t, which stays affine
in (w^(1), ..., w^(t)) with scalar slopes, so it is carried exactly as a
constant vector plus a slope row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .design import replication_seed
from .errors import ConfigError, NumericError
from .gd_engine import as_step_sizes
from .model import ModelSpec, noise_from_sample
from .state_evolution import SeTrack
from .tableio import write_csv

PSD_ABORT_TOL = 1e-6


@dataclass(frozen=True)
class MfState:
    """Snapshot after mean-field step t.

    Indexing: ``Sigma_Z[i, j]`` covers z^(i), i in 0..t;
    ``Sigma_W``/``tau``/``A`` use row/column i for w^(i+1) resp. z^(i+1);
    ``delta[i]`` is the signal coefficient of step i+1.  ``c[a]`` is the
    constant vector of Omega_a (a in 0..t) and ``A[a, r]`` its slope on
    w^(r+1); ``c_star`` is the rescaled signal sqrt(n) mu*.
    """

    t: int
    phi: float
    etas: np.ndarray
    Sigma_Z: np.ndarray
    Sigma_W: np.ndarray
    tau: np.ndarray
    delta: np.ndarray
    A: np.ndarray
    c: list
    c_star: np.ndarray
    mc_draws: int
    bounds: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c_star.size

    @property
    def rho(self) -> np.ndarray:
        """Lower-triangular t x t matrix of memory coefficients: row a-1
        holds the slopes of Omega_a on w^(1)..w^(a) (the derivative of an
        affine map is its slope)."""
        return self.A[1:self.t + 1, :self.t].copy()

    def omega_eval(self, w) -> np.ndarray:
        """Evaluate Omega_t at a noise vector w (length t) via the stored
        affine representation."""
        w = np.asarray(w, dtype=float)
        if w.size != self.t:
            raise ConfigError(f"need {self.t} noise coordinates, got {w.size}")
        return self.c[self.t] + float(self.A[self.t, :self.t] @ w)


@dataclass(frozen=True)
class MfDiagnostics:
    """Degeneration measurements at step t for a given aspect ratio."""

    t: int
    phi: float
    offdiag_tau_norm: float
    w_cov_max: float
    omega_gap: float
    p: int
    mc_draws: int


def diagnostics_to_csv(path, diags) -> None:
    header = ["t", "phi", "offdiag_tau", "w_cov_max", "omega_gap_p", "mc_draws"]
    rows = [(d.t, d.phi, d.offdiag_tau_norm, d.w_cov_max, d.omega_gap,
             d.mc_draws) for d in diags]
    write_csv(path, header, rows)


@dataclass
class MfRun:
    states: list
    metadata: dict


def _sample_gaussian(rng, cov: np.ndarray, draws: int, what: str) -> np.ndarray:
    """Draw from N(0, cov) with eigenvalue clipping; abort when the matrix
    is indefinite beyond tolerance."""
    cov = (cov + cov.T) / 2.0
    lam, V = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -PSD_ABORT_TOL * scale:
        raise NumericError(
            f"{what} covariance lost positive semidefiniteness: min "
            f"eigenvalue {lam.min():.3e} (matrix {cov.shape[0]}x{cov.shape[1]})")
    L = V * np.sqrt(np.clip(lam, 0.0, None))
    return rng.standard_normal((draws, cov.shape[0])) @ L.T


def mf_run(mu0, mu_star, model: ModelSpec, eta, phi: float, t_max: int,
           mc_draws: int, seed: int, xi=None) -> MfRun:
    """Run the mean-field state evolution for t_max steps.

    Per step: extend the preactivation covariance in closed form from the
    affine iterate representation, draw the joint scalar history, evaluate
    the memory-corrected gradient stack and its derivative recursions, and
    read off the interaction matrix (tau), signal coefficient (delta), and
    noise covariance row.
    """
    if mc_draws < 1:
        raise ConfigError(f"mc_draws must be >= 1, got {mc_draws}")
    if phi <= 0:
        raise ConfigError(f"aspect ratio must be > 0, got {phi}")
    mu0 = np.asarray(mu0, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    if mu0.shape != mu_star.shape:
        raise ConfigError("mu0 and mu_star must have the same shape")
    n = mu0.size
    etas = as_step_sizes(eta, t_max)
    noise = model.noise if xi is None else noise_from_sample(xi)
    sqrt_n = math.sqrt(n)

    c_star = sqrt_n * mu_star
    c = [sqrt_n * mu0.copy()]          # c[a] = constant vector of Omega_a
    A = np.zeros((t_max + 1, t_max + 1))   # A[a, r-1] = slope of Omega_a on w^(r)

    Sigma_Z = np.array([[float(mu_star @ mu_star)]])
    Sigma_W = np.zeros((0, 0))
    tau = np.zeros((0, 0))
    delta = np.zeros(0)

    states = []
    for t in range(1, t_max + 1):
        # extend Sigma_Z with z^(t): Cov(z^(t), z^(s)) from Omega products
        new = np.zeros(t + 1)
        for s in range(0, t + 1):
            cs = c_star if s == 0 else c[s - 1]
            val = float(c[t - 1] @ cs) / n
            if s >= 1 and Sigma_W.size:
                val += float(A[t - 1, :t - 1] @ Sigma_W[:t - 1, :s - 1]
                             @ A[s - 1, :s - 1])
            new[s] = val
        grown = np.zeros((t + 1, t + 1))
        grown[:t, :t] = Sigma_Z
        grown[t, :] = new
        grown[:, t] = new
        Sigma_Z = grown

        rng = np.random.default_rng(replication_seed(seed, t))
        Z = _sample_gaussian(rng, Sigma_Z, mc_draws, f"preactivation (t={t})")
        xi_draws = noise.draw(rng, mc_draws)
        response_arg = Z[:, 0]

        # forward recursion for Upsilon_s, s = 1..t, with derivative stacks
        theta = [None] * (t + 1)
        upsilon = [None] * (t + 1)
        d1_at = [None] * (t + 1)
        D = [[None] * (t + 1) for _ in range(t + 1)]   # D[s][q], 1<=q<=s<=t
        D0 = [None] * (t + 1)
        for s in range(1, t + 1):
            corr = np.zeros(mc_draws)
            for r in range(1, s):
                corr += etas[r - 1] * A[s - 1, r - 1] * upsilon[r]
            theta[s] = Z[:, s] - corr / phi
            upsilon[s] = np.asarray(
                model.score(theta[s], response_arg, xi_draws), dtype=float)
            d1 = np.asarray(
                model.score_d1(theta[s], response_arg, xi_draws), dtype=float)
            d2 = np.asarray(
                model.score_d2(theta[s], response_arg, xi_draws), dtype=float)
            d1_at[s] = d1
            for q in range(1, s + 1):
                inner = np.zeros(mc_draws)
                for r in range(q, s):
                    inner += etas[r - 1] * A[s - 1, r - 1] * D[r][q]
                direct = 1.0 if q == s else 0.0
                D[s][q] = d1 * (direct - inner / phi)
            inner0 = np.zeros(mc_draws)
            for r in range(1, s):
                inner0 += etas[r - 1] * A[s - 1, r - 1] * D0[r]
            D0[s] = d1 * (-inner0 / phi) + d2

        # interaction row, signal coefficient, noise covariance row
        tau_grown = np.zeros((t, t))
        tau_grown[:t - 1, :t - 1] = tau
        for q in range(1, t + 1):
            tau_grown[t - 1, q - 1] = float(np.mean(D[t][q]))
        tau = tau_grown
        delta = np.append(delta, -float(np.mean(D0[t])))

        W_grown = np.zeros((t, t))
        W_grown[:t - 1, :t - 1] = Sigma_W
        for s in range(1, t + 1):
            w_ts = etas[t - 1] ** 2 / phi * float(np.mean(upsilon[t] * upsilon[s]))
            W_grown[t - 1, s - 1] = w_ts
            W_grown[s - 1, t - 1] = w_ts
        Sigma_W = W_grown

        # extend the affine iterate representation (S3)
        c_t = etas[t - 1] * delta[t - 1] * c_star
        A[t, t - 1] = 1.0
        for s in range(1, t + 1):
            coef = (1.0 if t == s else 0.0) - etas[t - 1] * tau[t - 1, s - 1]
            c_t = c_t + coef * c[s - 1]
            A[t, :] += coef * A[s - 1, :]
        c.append(c_t)

        bounds = {
            "tau_op": float(np.linalg.norm(tau, 2)),
            "rho_op": float(np.linalg.norm(A[:t + 1, :t], 2)),
            "sigma_z_op": float(np.linalg.norm(Sigma_Z, 2)),
            "phi_sigma_w_op": float(phi * np.linalg.norm(Sigma_W, 2)),
        }
        states.append(MfState(
            t=t, phi=float(phi), etas=etas[:t].copy(), Sigma_Z=Sigma_Z.copy(),
            Sigma_W=Sigma_W.copy(), tau=tau.copy(), delta=delta.copy(),
            A=A[:t + 1, :t].copy(), c=[v.copy() for v in c], c_star=c_star,
            mc_draws=mc_draws, bounds=bounds))

    metadata = {
        "noise_mode": "population" if xi is None else "empirical",
        "notes": [],
    }
    if etas.size and not np.allclose(etas, etas[0]):
        metadata["notes"].append(
            "varying step sizes: the noise covariance uses the later step's "
            "eta squared for off-diagonal entries, as defined")
    return MfRun(states=states, metadata=metadata)


def mf_idealized(se_track: SeTrack, mu0, mu_star, t_max: int) -> list:
    """Infinite-aspect-ratio idealization: zero noise covariance and a
    diagonal interaction matrix copied from the two-dimensional track."""
    mu0 = np.asarray(mu0, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    n = mu0.size
    if t_max > len(se_track.points) - 1:
        raise ConfigError("track is shorter than the requested horizon")
    sqrt_n = math.sqrt(n)
    etas = se_track.step_sizes
    c_star = sqrt_n * mu_star
    c = [sqrt_n * mu0.copy()]
    A = np.zeros((t_max + 1, t_max + 1))
    Sigma_Z = np.array([[float(mu_star @ mu_star)]])
    tau = np.zeros((0, 0))
    delta = np.zeros(0)
    states = []
    for t in range(1, t_max + 1):
        new = np.zeros(t + 1)
        for s in range(0, t + 1):
            cs = c_star if s == 0 else c[s - 1]
            new[s] = float(c[t - 1] @ cs) / n
        grown = np.zeros((t + 1, t + 1))
        grown[:t, :t] = Sigma_Z
        grown[t, :] = new
        grown[:, t] = new
        Sigma_Z = grown

        p = se_track.points[t - 1]
        tau_grown = np.zeros((t, t))
        tau_grown[:t - 1, :t - 1] = tau
        tau_grown[t - 1, t - 1] = p.tau
        tau = tau_grown
        delta = np.append(delta, p.delta)

        A[t, t - 1] = 1.0
        for s in range(1, t + 1):
            coef = (1.0 if t == s else 0.0) - etas[t - 1] * tau[t - 1, s - 1]
            A[t, :] += coef * A[s - 1, :]
        # the constant part coincides with the rescaled deterministic iterate
        c.append(sqrt_n * se_track.u_vector(t, mu0, mu_star))

        states.append(MfState(
            t=t, phi=math.inf, etas=np.asarray(etas[:t], dtype=float).copy(),
            Sigma_Z=Sigma_Z.copy(), Sigma_W=np.zeros((t, t)), tau=tau.copy(),
            delta=delta.copy(), A=A[:t + 1, :t].copy(),
            c=[v.copy() for v in c], c_star=c_star, mc_draws=0))
    return states


def _abs_moment_gaussian(mean: float, var: float, p: int) -> float:
    """E |N(mean, var)|^p for even p, by the binomial moment expansion."""
    if p % 2 != 0 or p < 2:
        raise ConfigError(f"moment order must be a positive even int, got {p}")
    sd = math.sqrt(max(var, 0.0))
    total = 0.0
    for k in range(0, p + 1, 2):
        dfact = 1.0
        for j in range(k - 1, 0, -2):
            dfact *= j
        total += math.comb(p, k) * mean ** (p - k) * sd ** k * dfact
    return total


def mf_compare(states, se_track: SeTrack, mu0, mu_star, p: int = 2) -> list:
    """Degeneration diagnostics of a mean-field run against the
    two-dimensional state evolution with the same data.

    Per step: operator-norm distance of the interaction matrix from the
    diagonal of the track's tau values, the largest absolute noise
    covariance against the final noise coordinate, and the worst
    per-coordinate p-th moment gap of the iterate representation from the
    rescaled deterministic iterate (closed form: the representation is
    Gaussian per coordinate).
    """
    mu0 = np.asarray(mu0, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    geo = se_track.geometry
    checks = (
        (float(np.linalg.norm(mu0)), geo.mu0_norm),
        (float(mu0 @ mu_star), geo.inner),
        (float(np.linalg.norm(mu_star)), geo.mu_star_norm),
    )
    for got, want in checks:
        if abs(got - want) > 1e-9 * max(1.0, abs(want)):
            raise ConfigError(
                f"geometry mismatch: vectors give {got}, track has {want}")
    out = []
    sqrt_n = math.sqrt(mu0.size)
    for st in states:
        t = st.t
        if t > len(se_track.points) - 1:
            raise ConfigError(
                f"track too short for mean-field step t={t}")
        if st.etas.size and not np.allclose(
                st.etas, se_track.step_sizes[:st.etas.size]):
            raise ConfigError("step-size mismatch between runs")
        diag = np.diag([se_track.points[s - 1].tau for s in range(1, t + 1)])
        offdiag = float(np.linalg.norm(st.tau - diag, 2))
        w_cov = float(np.max(np.abs(st.Sigma_W[t - 1, :t]))) if t else 0.0
        u_t = sqrt_n * se_track.u_vector(t, mu0, mu_star)
        means = st.c[t] - u_t
        slopes = st.A[t, :t]
        var = float(slopes @ st.Sigma_W @ slopes)
        gap = max(_abs_moment_gaussian(float(mm), var, p) for mm in means)
        out.append(MfDiagnostics(t=t, phi=st.phi, offdiag_tau_norm=offdiag,
                                 w_cov_max=w_cov, omega_gap=gap, p=p,
                                 mc_draws=st.mc_draws))
    return out
