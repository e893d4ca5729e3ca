"""Statistical model layer: link functions, noise laws, the score function
with its partial derivatives, and bivariate-Gaussian expectation utilities.

The central object is the score

    S(x, z, xi) = d/dx loss(x, response(z, xi)),

which for the built-in squared loss on the link,
loss(x, y) = (phi(x) - y)^2 / 2, specializes to

    S(x, z, xi) = (phi(x) - phi(z) - xi) * phi'(x).

All first through third partials of S in (x, z) are carried analytically for
built-in links and by central finite differences for custom scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ConfigError, NumericError

DEFAULT_NODES = 60
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# ---------------------------------------------------------------------------
# Link functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkFunction:
    """Scalar link with derivatives up to fourth order (all vectorized)."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    d4: Callable[[np.ndarray], np.ndarray]

    def derivative(self, order: int):
        if not 0 <= order <= 4:
            raise ConfigError(
                f"derivative order must be in [0, 4], got {order}")
        return (self.f, self.d1, self.d2, self.d3, self.d4)[order]

    def __repr__(self) -> str:
        return f"LinkFunction({self.name!r})"


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sig_d1(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _sig_d2(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _sig_d3(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)


def _sig_d4(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s)


def _zero_like(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _one_like(x):
    return np.ones_like(np.asarray(x, dtype=float))


IDENTITY = LinkFunction(
    "identity",
    f=lambda x: np.asarray(x, dtype=float),
    d1=_one_like,
    d2=_zero_like,
    d3=_zero_like,
    d4=_zero_like,
)

SQUARE = LinkFunction(
    "square",
    f=lambda x: np.asarray(x, dtype=float) ** 2,
    d1=lambda x: 2.0 * np.asarray(x, dtype=float),
    d2=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
    d3=_zero_like,
    d4=_zero_like,
)

QUAD_PLUS_LINEAR = LinkFunction(
    "quad_plus_linear",
    f=lambda x: np.asarray(x, dtype=float) ** 2 + 2.0 * np.asarray(x, dtype=float),
    d1=lambda x: 2.0 * np.asarray(x, dtype=float) + 2.0,
    d2=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
    d3=_zero_like,
    d4=_zero_like,
)

X_PLUS_SIN = LinkFunction(
    "x_plus_sin",
    f=lambda x: np.asarray(x, dtype=float) + np.sin(x),
    d1=lambda x: 1.0 + np.cos(x),
    d2=lambda x: -np.sin(np.asarray(x, dtype=float)),
    d3=lambda x: -np.cos(np.asarray(x, dtype=float)),
    d4=lambda x: np.sin(np.asarray(x, dtype=float)),
)

SIGMOID = LinkFunction("sigmoid", f=_sigmoid, d1=_sig_d1, d2=_sig_d2,
                       d3=_sig_d3, d4=_sig_d4)

BUILTIN_LINKS = {
    lk.name: lk for lk in (IDENTITY, SIGMOID, X_PLUS_SIN, QUAD_PLUS_LINEAR, SQUARE)
}


def link_from_name(name: str) -> LinkFunction:
    try:
        return BUILTIN_LINKS[name.strip()]
    except KeyError:
        raise ConfigError(
            f"unknown link {name!r}; expected one of {sorted(BUILTIN_LINKS)}"
        ) from None


# ---------------------------------------------------------------------------
# Noise laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Additive-noise law: analytic mean, quadrature atoms, and a sampler.

    ``atoms``/``weights`` discretize the law for expectations of functions
    that are not affine in the noise; affine integrands only ever see
    ``mean``.
    """

    name: str
    mean: float
    atoms: np.ndarray
    weights: np.ndarray
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    @property
    def is_degenerate(self) -> bool:
        return self.atoms.size == 1

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, size), dtype=float)
        if self.is_degenerate:
            return np.full(size, float(self.atoms[0]))
        return rng.choice(self.atoms, size=size, p=self.weights)

    def __repr__(self) -> str:
        return f"NoiseSpec({self.name!r}, mean={self.mean})"


def _frozen(a) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=float)
    out.setflags(write=False)
    return out


def zero_noise() -> NoiseSpec:
    return NoiseSpec("zero", 0.0, _frozen([0.0]), _frozen([1.0]),
                     sampler=lambda rng, size: np.zeros(size))


def gaussian_noise(sigma: float, mean: float = 0.0, nodes: int = 21) -> NoiseSpec:
    """Gaussian noise N(mean, sigma^2) with Gauss-Hermite quadrature atoms."""
    if sigma < 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        base = zero_noise()
        return NoiseSpec(f"gaussian(sigma=0,mean={mean})", float(mean),
                         _frozen([mean]), _frozen([1.0]),
                         sampler=lambda rng, size: np.full(size, float(mean)))
    z, w = hermegauss(int(nodes))
    return NoiseSpec(
        f"gaussian(sigma={sigma},mean={mean})",
        float(mean),
        _frozen(mean + sigma * z),
        _frozen(w / _SQRT_2PI),
        sampler=lambda rng, size: mean + sigma * rng.standard_normal(size),
    )


def custom_noise(name, mean, atoms, weights, sampler=None) -> NoiseSpec:
    atoms = _frozen(atoms)
    weights = _frozen(weights)
    if atoms.shape != weights.shape:
        raise ConfigError("noise atoms and weights must have matching shapes")
    if abs(weights.sum() - 1.0) > 1e-12 or (weights < 0).any():
        raise ConfigError("noise weights must be a probability vector")
    return NoiseSpec(str(name), float(mean), atoms, weights, sampler=sampler)


def noise_from_sample(xi) -> NoiseSpec:
    """Empirical noise law: equal-weight atoms at the realized values."""
    atoms = np.sort(np.asarray(xi, dtype=float).ravel())
    if atoms.size == 0:
        raise ConfigError("empirical noise requires at least one realized value")
    weights = np.full(atoms.size, 1.0 / atoms.size)
    return NoiseSpec("empirical", float(atoms.mean()), _frozen(atoms),
                     _frozen(weights))


def noise_from_name(name: str, sigma: float = 0.0, mean: float = 0.0) -> NoiseSpec:
    """Resolve 'zero', 'gaussian' (with the sigma/mean arguments), or the
    inline form 'gaussian:<sigma>' / 'gaussian:<sigma>:<mean>'."""
    name = name.strip()
    if name in ("zero", "none"):
        return zero_noise()
    if name.startswith("gaussian"):
        parts = name.split(":")
        if parts[0] != "gaussian" or len(parts) > 3:
            raise ConfigError(f"bad noise spec {name!r}")
        try:
            if len(parts) >= 2:
                sigma = float(parts[1])
            if len(parts) == 3:
                mean = float(parts[2])
        except ValueError:
            raise ConfigError(f"bad noise spec {name!r}")
        return gaussian_noise(sigma, mean)
    raise ConfigError(f"unknown noise law {name!r}; expected 'zero' or "
                      "'gaussian[:<sigma>[:<mean>]]'")


# ---------------------------------------------------------------------------
# Model specification and the score S with partials
# ---------------------------------------------------------------------------

_PARTIAL_KEYS = ("d1", "d2", "d11", "d12", "d22", "d111", "d112", "d122")


@dataclass(frozen=True)
class ModelSpec:
    """Link + loss + noise, exposing the score S(x, z, xi) and its partials.

    ``partials`` maps each of d1, d2, d11, d12, d22, d111, d112, d122 to a
    vectorized callable (x, z, xi) -> array.  ``affine_in_noise`` marks that
    S and every partial are affine in xi, so noise expectations reduce to
    plugging in the noise mean.
    """

    name: str
    link: Optional[LinkFunction]
    noise: NoiseSpec
    score: Callable
    partials: dict = field(repr=False)
    response: Callable
    loss_d1: Optional[Callable] = field(default=None, repr=False)
    affine_in_noise: bool = False

    def score_partial(self, key: str) -> Callable:
        if key not in self.partials:
            raise ConfigError(
                f"unknown score partial {key!r}; expected one of "
                f"{list(_PARTIAL_KEYS)}")
        return self.partials[key]

    # convenience accessors used throughout the package
    @property
    def score_d1(self):
        return self.partials["d1"]

    @property
    def score_d2(self):
        return self.partials["d2"]


def single_index_model(link: LinkFunction, noise: Optional[NoiseSpec] = None,
                       name: Optional[str] = None) -> ModelSpec:
    """Squared loss on the link: Y = phi(<X, mu*>) + xi, loss = (phi(x)-y)^2/2."""
    if noise is None:
        noise = zero_noise()
    f, f1, f2, f3, f4 = (link.f, link.d1, link.d2, link.d3, link.d4)

    def spread(x, z, xi):
        return f(x) - f(z) - xi

    partials = {
        "d1": lambda x, z, xi: f1(x) ** 2 + spread(x, z, xi) * f2(x),
        "d2": lambda x, z, xi: -f1(x) * f1(z),
        "d11": lambda x, z, xi: 3.0 * f1(x) * f2(x) + spread(x, z, xi) * f3(x),
        "d12": lambda x, z, xi: -f1(z) * f2(x),
        "d22": lambda x, z, xi: -f1(x) * f2(z),
        "d111": lambda x, z, xi: 3.0 * f2(x) ** 2 + 4.0 * f1(x) * f3(x)
        + spread(x, z, xi) * f4(x),
        "d112": lambda x, z, xi: -f1(z) * f3(x),
        "d122": lambda x, z, xi: -f2(x) * f2(z),
    }
    return ModelSpec(
        name=name or f"single_index({link.name})",
        link=link,
        noise=noise,
        score=lambda x, z, xi: spread(x, z, xi) * f1(x),
        partials=partials,
        response=lambda z, xi: f(z) + xi,
        loss_d1=lambda x, y: (f(x) - y) * f1(x),
        affine_in_noise=True,
    )


def custom_score_model(name, score, response, noise=None, partials=None,
                       loss_d1=None, affine_in_noise=False,
                       fd_step_first=1e-6, fd_step_second=1e-4,
                       fd_step_third=1e-3) -> ModelSpec:
    """Model defined directly by its score; missing partials are filled in
    with central finite differences of the supplied callables.

    Third partials use direct third-order stencils on the score unless an
    analytic d1 is supplied, in which case they are second differences of d1.
    """
    if noise is None:
        noise = zero_noise()
    given = dict(partials or {})
    unknown = set(given) - set(_PARTIAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown score-partial keys {sorted(unknown)}")

    S = score
    h1, h2, h3 = float(fd_step_first), float(fd_step_second), float(fd_step_third)
    filled = dict(given)

    if "d1" not in filled:
        filled["d1"] = lambda x, z, xi: (S(x + h1, z, xi) - S(x - h1, z, xi)) / (2 * h1)
    if "d2" not in filled:
        filled["d2"] = lambda x, z, xi: (S(x, z + h1, xi) - S(x, z - h1, xi)) / (2 * h1)
    if "d11" not in filled:
        filled["d11"] = lambda x, z, xi: (
            S(x + h2, z, xi) - 2.0 * S(x, z, xi) + S(x - h2, z, xi)) / h2 ** 2
    if "d12" not in filled:
        filled["d12"] = lambda x, z, xi: (
            S(x + h2, z + h2, xi) - S(x + h2, z - h2, xi)
            - S(x - h2, z + h2, xi) + S(x - h2, z - h2, xi)) / (4.0 * h2 ** 2)
    if "d22" not in filled:
        filled["d22"] = lambda x, z, xi: (
            S(x, z + h2, xi) - 2.0 * S(x, z, xi) + S(x, z - h2, xi)) / h2 ** 2

    if "d1" in given:
        D1 = given["d1"]
        if "d111" not in filled:
            filled["d111"] = lambda x, z, xi: (
                D1(x + h2, z, xi) - 2.0 * D1(x, z, xi) + D1(x - h2, z, xi)) / h2 ** 2
        if "d112" not in filled:
            filled["d112"] = lambda x, z, xi: (
                D1(x + h2, z + h2, xi) - D1(x + h2, z - h2, xi)
                - D1(x - h2, z + h2, xi) + D1(x - h2, z - h2, xi)) / (4.0 * h2 ** 2)
        if "d122" not in filled:
            filled["d122"] = lambda x, z, xi: (
                D1(x, z + h2, xi) - 2.0 * D1(x, z, xi) + D1(x, z - h2, xi)) / h2 ** 2
    else:
        if "d111" not in filled:
            filled["d111"] = lambda x, z, xi: (
                S(x + 2 * h3, z, xi) - 2.0 * S(x + h3, z, xi)
                + 2.0 * S(x - h3, z, xi) - S(x - 2 * h3, z, xi)) / (2.0 * h3 ** 3)
        if "d112" not in filled:
            filled["d112"] = lambda x, z, xi: (
                S(x + h3, z + h3, xi) - S(x + h3, z - h3, xi)
                - 2.0 * S(x, z + h3, xi) + 2.0 * S(x, z - h3, xi)
                + S(x - h3, z + h3, xi) - S(x - h3, z - h3, xi)) / (2.0 * h3 ** 3)
        if "d122" not in filled:
            filled["d122"] = lambda x, z, xi: (
                S(x + h3, z + h3, xi) - 2.0 * S(x + h3, z, xi) + S(x + h3, z - h3, xi)
                - S(x - h3, z + h3, xi) + 2.0 * S(x - h3, z, xi)
                - S(x - h3, z - h3, xi)) / (2.0 * h3 ** 3)

    return ModelSpec(
        name=str(name),
        link=None,
        noise=noise,
        score=S,
        partials=filled,
        response=response,
        loss_d1=loss_d1,
        affine_in_noise=bool(affine_in_noise),
    )


def model_from_names(link_name: str, noise_name: str = "zero",
                     noise_sigma: float = 0.0, noise_mean: float = 0.0) -> ModelSpec:
    return single_index_model(link_from_name(link_name),
                              noise_from_name(noise_name, noise_sigma, noise_mean))


# ---------------------------------------------------------------------------
# Bivariate Gaussian covariance parameterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPairCov:
    """Covariance of (G1, G2) = (<Z,u>, <Z,mu*>): (|u|^2, <u,mu*>, |mu*|^2)."""

    gamma2: float
    alpha: float
    s2: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma2) and np.isfinite(self.alpha)
                and np.isfinite(self.s2)):
            raise NumericError(f"non-finite covariance {self}")
        if self.gamma2 < 0 or self.s2 < 0:
            raise ConfigError(f"variances must be nonnegative, got {self}")

    @property
    def correlation(self) -> float:
        denom = math.sqrt(self.gamma2 * self.s2)
        if denom == 0.0:
            return 0.0
        # PSD projection: floating-point drift in the 2-D recursion can push
        # the correlation marginally outside [-1, 1].
        return float(np.clip(self.alpha / denom, -1.0, 1.0))


def _as_cov(cov) -> GaussianPairCov:
    if isinstance(cov, GaussianPairCov):
        return cov
    return GaussianPairCov(*cov)


def gauss2_expect(f, cov, noise: NoiseSpec, nodes: int = DEFAULT_NODES,
                  affine_in_xi: bool = False) -> float:
    """E f(G1, G2, xi) with (G1, G2) centered Gaussian with covariance ``cov``
    and xi independent with law ``noise``.

    Tensorized Gauss-Hermite in the Gaussian pair; the noise expectation uses
    the analytic mean when f is affine in xi, otherwise the noise atoms.
    Degenerate covariances reduce to one-dimensional quadrature.
    """
    if nodes < 2:
        raise ConfigError(f"quadrature needs >= 2 nodes, got {nodes}")
    c = _as_cov(cov)
    z, w = hermegauss(int(nodes))
    w = w / _SQRT_2PI
    g, s = math.sqrt(c.gamma2), math.sqrt(c.s2)
    rho = c.correlation

    if g == 0.0 and s == 0.0:
        g1 = np.zeros(1)
        g2 = np.zeros(1)
        wts = np.ones(1)
    elif g == 0.0:
        g1, g2, wts = np.zeros_like(z), s * z, w
    elif s == 0.0:
        g1, g2, wts = g * z, np.zeros_like(z), w
    elif abs(rho) >= 1.0 - 1e-12:
        g1, g2, wts = g * z, s * math.copysign(1.0, rho) * z, w
    else:
        g1 = (g * z)[:, None] + np.zeros_like(z)[None, :]
        g2 = s * (rho * z[:, None] + math.sqrt(1.0 - rho * rho) * z[None, :])
        wts = w[:, None] * w[None, :]

    if affine_in_xi or noise.is_degenerate:
        vals = np.asarray(f(g1, g2, noise.mean), dtype=float)
        out = float(np.sum(wts * vals))
    else:
        acc = 0.0
        chunk = max(1, 65536 // max(1, g1.size))
        atoms, nw = noise.atoms, noise.weights
        for k0 in range(0, atoms.size, chunk):
            a = atoms[k0:k0 + chunk]
            v = nw[k0:k0 + chunk]
            vals = np.asarray(f(g1[..., None], g2[..., None], a), dtype=float)
            acc += float(np.sum(wts[..., None] * v * vals))
        out = acc
    if not np.isfinite(out):
        raise NumericError(f"quadrature produced non-finite value {out}")
    return out


def tau_delta(model: ModelSpec, cov, nodes: int = DEFAULT_NODES,
              xi=None) -> tuple[float, float]:
    """State-evolution pair at the given covariance:
    tau = E d1S(G1, G2, xi), delta = -E d2S(G1, G2, xi).

    ``xi`` switches to the empirical noise mode: expectations average over
    the realized noise vector instead of the model's population law.
    """
    noise = model.noise if xi is None else noise_from_sample(xi)
    aff = model.affine_in_noise
    tau = gauss2_expect(model.score_d1, cov, noise, nodes, affine_in_xi=aff)
    delta = -gauss2_expect(model.score_d2, cov, noise, nodes, affine_in_xi=aff)
    return tau, delta


def rho_star(model: ModelSpec, mu_star_norm: float,
             nodes: int = DEFAULT_NODES) -> float:
    """Curvature floor at the signal: min of E d1S(sG, sG, xi) and
    E G^2 d1S(sG, sG, xi) with s = |mu*| and G standard normal."""
    if mu_star_norm <= 0:
        raise ConfigError(f"mu_star_norm must be > 0, got {mu_star_norm}")
    s = float(mu_star_norm)
    cov = GaussianPairCov(s * s, s * s, s * s)
    d1 = model.score_d1
    aff = model.affine_in_noise
    plain = gauss2_expect(d1, cov, model.noise, nodes, affine_in_xi=aff)
    weighted = gauss2_expect(lambda x, z, xi: (x / s) ** 2 * d1(x, z, xi),
                             cov, model.noise, nodes, affine_in_xi=aff)
    return float(min(plain, weighted))


def kappa(link: LinkFunction, z: float, grid_points: int = 1000) -> float:
    """Grid estimate of inf_{|x| <= z} |phi'(x)|."""
    if z < 0:
        raise ConfigError(f"kappa radius must be >= 0, got {z}")
    grid = np.linspace(-z, z, int(grid_points))
    return float(np.min(np.abs(link.d1(grid))))


def kappa_star(link: LinkFunction, mu0_norm: float,
               grid_points: int = 1000) -> float:
    """Contraction constant kappa(6(1+|mu0|))^2 used in the linear-rate regime."""
    return kappa(link, 6.0 * (1.0 + float(mu0_norm)), grid_points) ** 2
