"""Experiment orchestration: figure reproductions, scaling sweeps, result
tables with reproducibility manifests, and tidy plot-data emission.

All experiments are deterministic functions of (config, base seed): every
replication draws its randomness from a seed derived from a flat replication
index, and reductions run in index order, so tables are byte-identical
across rerun and across thread counts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import typing
from concurrent.futures import ThreadPoolExecutor
from configparser import ConfigParser
from dataclasses import dataclass

import numpy as np

from . import __version__
from .design import kind_from_name, replication_seed, sample_design
from .errors import ConfigError, NumericError
from .estimator import (EstimatorConfig, MonteCarloBackend, QuadratureBackend,
                        estimate_signal_norm, estimator_run)
from .gd_engine import GdConfig, generate_response, run_gd
from .meanfield import mf_compare, mf_run
from .model import (gaussian_noise, link_from_name, single_index_model,
                    zero_noise)
from .state_evolution import SeGeometry, se_run
from .tableio import fmt_value, write_csv

__all__ = [
    "Fig1Config", "Fig2Config", "ConcSweepConfig", "MfSweepConfig",
    "ResultTable", "run_fig1", "run_fig2", "run_conc_sweep", "run_mf_sweep",
    "run_experiment", "run_from_manifest", "parse_config_file",
    "config_from_mapping", "emit_plotdata", "backend_from_spec",
    "estimate_signal_norm",
]

TABLE_HEADER = ("experiment", "design", "m", "n", "eta", "replication", "t",
                "metric", "value")


# ---------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class Fig1Config:
    """Phase-retrieval universality experiment: mean |correlation| paths for
    several design laws and dimensions at fixed sample size."""
    designs: tuple = ("gaussian", "rademacher", "std_exponential")
    ns: tuple = (50, 100, 150)
    m: int = 3000
    eta: float = 0.1
    replications: int = 50
    t_max: int = 500
    corr_stop: float = 0.999
    band_lo: float = 0.65
    band_hi: float = 0.75
    max_init_attempts: int = 10000
    chunk: int = 25
    seed: int = 1

    def __post_init__(self):
        _check_positive_grid(self.ns, "ns")
        _check_positive(self.m, "m")
        _check_replications(self.replications)
        if not self.band_lo < self.band_hi:
            raise ConfigError("initial-correlation band must be increasing")


@dataclass(frozen=True)
class Fig2Config:
    """Oracle-vs-estimated correlation experiment across links and designs."""
    links: tuple = ("sigmoid", "x_plus_sin", "quad_plus_linear")
    etas: tuple = (0.5, 0.01, 0.005)
    designs: tuple = ("gaussian", "rademacher", "std_exponential")
    n: int = 300
    m: int = 10000
    replications: int = 100
    t_max: int = 60
    backend: str = "quadrature"
    seed: int = 1

    def __post_init__(self):
        _check_positive(self.n, "n")
        _check_positive(self.m, "m")
        _check_replications(self.replications)
        if len(self.links) != len(self.etas):
            raise ConfigError("links and etas must have matching lengths")


@dataclass(frozen=True)
class ConcSweepConfig:
    """Concentration of GD around its deterministic path as the aspect
    ratio grows, with incoherence tracking."""
    link: str = "identity"
    design: str = "gaussian"
    noise_sigma: float = 0.1
    n: int = 50
    phis: tuple = (50.0, 200.0, 800.0)
    eta: float = 0.2
    t_max: int = 20
    replications: int = 20
    seed: int = 1

    def __post_init__(self):
        _check_positive(self.n, "n")
        _check_positive_grid(self.phis, "phis")
        _check_replications(self.replications)


@dataclass(frozen=True)
class MfSweepConfig:
    """Mean-field degeneration diagnostics across an aspect-ratio grid."""
    link: str = "identity"
    n: int = 50
    phis: tuple = (10.0, 100.0, 1000.0)
    eta: float = 0.5
    t_max: int = 3
    mc_draws: int = 100000
    p: int = 2
    seed: int = 1

    def __post_init__(self):
        _check_positive(self.n, "n")
        _check_positive_grid(self.phis, "phis")
        _check_positive(self.mc_draws, "mc_draws")


def _check_positive(value, name):
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")


def _check_positive_grid(grid, name):
    if len(grid) == 0:
        raise ConfigError(f"{name} must be a nonempty grid")
    for v in grid:
        if v <= 0:
            raise ConfigError(f"{name} entries must be positive, got {v}")


def _check_replications(b):
    if b < 1:
        raise ConfigError(f"replications must be >= 1, got {b}")


EXPERIMENT_CONFIGS = {
    "fig1": Fig1Config,
    "fig2": Fig2Config,
    "conc": ConcSweepConfig,
    "mf": MfSweepConfig,
}


# ---------------------------------------------------------------------------
# config file parsing

def _coerce(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is tuple or tp is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        args = typing.get_args(tp)
        elem = args[0] if args and args[0] is not Ellipsis else None
        return tuple(_coerce(p, elem or _guess_scalar(p), key) for p in parts)
    if tp is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected int, got {raw!r}")
    if tp is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected float, got {raw!r}")
    if tp is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected bool, got {raw!r}")
    return raw


def _guess_scalar(raw: str):
    try:
        int(raw)
        return int
    except ValueError:
        pass
    try:
        float(raw)
        return float
    except ValueError:
        pass
    return str


def config_from_mapping(experiment: str, mapping: dict):
    """Build an experiment config from string key/value pairs, rejecting
    unknown keys."""
    if experiment not in EXPERIMENT_CONFIGS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of "
            f"{sorted(EXPERIMENT_CONFIGS)}")
    cls = EXPERIMENT_CONFIGS[experiment]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in fields:
            raise ConfigError(
                f"unknown key {key!r} in section [{experiment}]")
        f = fields[key]
        if isinstance(raw, str):
            tp = f.type if not isinstance(f.type, str) else {
                "int": int, "float": float, "str": str, "tuple": tuple,
                "bool": bool}.get(f.type, str)
            kwargs[key] = _coerce(raw, tp, key)
        elif isinstance(raw, list):
            kwargs[key] = tuple(raw)
        else:
            kwargs[key] = raw
    return cls(**kwargs)


def parse_config_file(path: str) -> dict:
    """Parse an INI-style config with one section per experiment; returns
    {experiment: config}.  Unknown sections or keys fail fast."""
    parser = ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        if section not in EXPERIMENT_CONFIGS:
            raise ConfigError(
                f"unknown section [{section}] in {path}; expected one of "
                f"{sorted(EXPERIMENT_CONFIGS)}")
        out[section] = config_from_mapping(
            section, dict(parser.items(section)))
    return out


# ---------------------------------------------------------------------------
# result table

@dataclass
class ResultTable:
    """Long-format experiment results plus a reproducibility manifest.

    Rows are (experiment, design, m, n, eta, replication, t, metric, value);
    aggregate rows use replication = -1.  The manifest embeds the fully
    resolved config, so default drift is detectable by hash.
    """
    experiment: str
    rows: list
    manifest: dict

    def to_csv(self, path: str) -> None:
        write_csv(path, TABLE_HEADER, self.rows)

    def csv_bytes(self) -> bytes:
        lines = [",".join(TABLE_HEADER)]
        for row in self.rows:
            lines.append(",".join(fmt_value(v) for v in row))
        return ("\n".join(lines) + "\n").encode()

    def save_manifest(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def values(self, metric: str, **match) -> dict:
        """Map from (design, m, n, t) to value for one metric, filtered by
        optional exact column matches (e.g. design='gaussian')."""
        idx = {name: i for i, name in enumerate(TABLE_HEADER)}
        out = {}
        for row in self.rows:
            if row[idx["metric"]] != metric:
                continue
            if any(row[idx[k]] != v for k, v in match.items()):
                continue
            key = (row[idx["design"]], row[idx["m"]], row[idx["n"]],
                   row[idx["t"]])
            out[key] = row[idx["value"]]
        return out

    @staticmethod
    def load(table_path: str, manifest_path: str = None) -> "ResultTable":
        rows = []
        with open(table_path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != TABLE_HEADER:
                raise ConfigError(
                    f"unexpected table header in {table_path}: {header}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != len(TABLE_HEADER):
                    raise ConfigError(
                        f"malformed table row in {table_path}: {line!r}")
                exp, design, m, n, eta, rep, t, metric, value = parts
                rows.append((exp, design, int(m), int(n), float(eta),
                             int(rep), int(t), metric, float(value)))
        manifest = {}
        if manifest_path is not None:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        experiment = rows[0][0] if rows else manifest.get("experiment", "")
        return ResultTable(experiment=experiment, rows=rows,
                           manifest=manifest)


def _make_manifest(experiment: str, cfg) -> dict:
    config = dataclasses.asdict(cfg)
    for k, v in config.items():
        if isinstance(v, tuple):
            config[k] = list(v)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "experiment": experiment,
        "version": __version__,
        "config": config,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed_scheme": "replication_seed(base_seed, flat_index)",
    }


def _parallel_map(fn, jobs, threads: int):
    """Index-ordered map over job descriptions; results are reduced in list
    order no matter how many workers ran them."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# figure 1: phase-retrieval universality

def _rejection_init(rng, n: int, mu_star, lo: float, hi: float,
                    max_attempts: int):
    """Draw mu0 ~ N(0, I/n) until sqrt(n) <mu0, mu*> / ||mu0|| lands in the
    requested band."""
    sqrt_n = math.sqrt(n)
    for _ in range(max_attempts):
        mu0 = rng.standard_normal(n) / sqrt_n
        scaled = sqrt_n * float(mu0 @ mu_star) / float(np.linalg.norm(mu0))
        if lo <= scaled <= hi:
            return mu0
    raise NumericError(
        f"could not match initial correlation band [{lo}, {hi}] in "
        f"{max_attempts} attempts")


def _gd_abs_corr_series(X, y, model, eta: float, t_max: int, mu0, mu_star,
                        corr_stop: float, chunk: int):
    """|corr| series of length t_max+1 with early stopping and last-value
    padding; returns (series, diverged_at)."""
    series = np.empty(t_max + 1)
    series[0] = abs(float(mu0 @ mu_star)
                    / (np.linalg.norm(mu0) * np.linalg.norm(mu_star)))
    current = np.asarray(mu0, dtype=float)
    t = 0
    diverged_at = None
    while t < t_max:
        step = min(chunk, t_max - t)
        traj = run_gd(X, y, model,
                      GdConfig(step_sizes=eta, t_max=step, init=current),
                      mu_star=mu_star)
        got = np.abs(traj.corrs[1:])
        series[t + 1:t + 1 + got.size] = got
        t += got.size
        if traj.diverged_at is not None:
            diverged_at = t
            break
        current = traj.final_iterate
        if got.size and got[-1] > corr_stop:
            break
    if t < t_max:
        series[t + 1:] = series[t]
    return series, diverged_at


def run_fig1(cfg: Fig1Config = Fig1Config(), threads: int = 1) -> ResultTable:
    """Mean |correlation| trajectories of phase-retrieval GD for each design
    law and dimension; initialization rejection-sampled to a fixed scaled
    correlation band, divergent replications recorded but not fatal."""
    model = single_index_model(link_from_name("square"), zero_noise())
    mu_stars = {n: np.full(n, 1.0 / math.sqrt(n)) for n in cfg.ns}
    jobs = []
    for d_idx, design in enumerate(cfg.designs):
        kind = kind_from_name(design)
        for n_idx, n in enumerate(cfg.ns):
            for b in range(cfg.replications):
                flat = ((d_idx * len(cfg.ns)) + n_idx) * cfg.replications + b
                jobs.append((design, kind, n, b,
                             replication_seed(cfg.seed, flat + 1)))

    def one(job):
        design, kind, n, b, seed = job
        mu_star = mu_stars[n]
        rng = np.random.default_rng(replication_seed(seed, 1))
        mu0 = _rejection_init(rng, n, mu_star, cfg.band_lo, cfg.band_hi,
                              cfg.max_init_attempts)
        X = sample_design(kind, cfg.m, n, replication_seed(seed, 2))
        y, _ = generate_response(X, mu_star, model, replication_seed(seed, 3))
        return _gd_abs_corr_series(X, y, model, cfg.eta, cfg.t_max, mu0,
                                   mu_star, cfg.corr_stop, cfg.chunk)

    results = _parallel_map(one, jobs, threads)

    rows = []
    for d_idx, design in enumerate(cfg.designs):
        for n_idx, n in enumerate(cfg.ns):
            base = ((d_idx * len(cfg.ns)) + n_idx) * cfg.replications
            block = results[base:base + cfg.replications]
            stacked = np.vstack([series for series, _ in block])
            mean_abs = stacked.mean(axis=0)
            for t in range(cfg.t_max + 1):
                rows.append(("fig1", design, cfg.m, n, cfg.eta, -1, t,
                             "mean_abs_corr", float(mean_abs[t])))
            for b, (_, diverged_at) in enumerate(block):
                if diverged_at is not None:
                    rows.append(("fig1", design, cfg.m, n, cfg.eta, b,
                                 diverged_at, "diverged_at",
                                 float(diverged_at)))
    return ResultTable("fig1", rows, _make_manifest("fig1", cfg))


# ---------------------------------------------------------------------------
# figure 2: oracle vs estimated correlation

def backend_from_spec(spec: str, seed: int = 0):
    """Parse an estimator backend spec: 'quadrature' or 'mc:<draws>'."""
    if spec == "quadrature":
        return QuadratureBackend()
    if spec.startswith("mc:"):
        try:
            draws = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad backend spec {spec!r}")
        return MonteCarloBackend(draws=draws, seed=seed)
    raise ConfigError(
        f"unknown estimator backend {spec!r}; use 'quadrature' or 'mc:<draws>'")


def run_fig2(cfg: Fig2Config = Fig2Config(), threads: int = 1) -> ResultTable:
    """Mean oracle correlation across replications per (link, design, t),
    alongside the single data-free estimated-correlation track per link."""
    n = cfg.n
    mu_star = np.full(n, 1.0 / math.sqrt(n))
    models = {}
    for link_name in cfg.links:
        models[link_name] = single_index_model(
            link_from_name(link_name), zero_noise())

    jobs = []
    for l_idx, link_name in enumerate(cfg.links):
        for d_idx, design in enumerate(cfg.designs):
            kind = kind_from_name(design)
            for b in range(cfg.replications):
                flat = ((l_idx * len(cfg.designs)) + d_idx) \
                    * cfg.replications + b
                jobs.append((link_name, cfg.etas[l_idx], kind,
                             replication_seed(cfg.seed, flat + 1)))

    def one(job):
        link_name, eta, kind, seed = job
        model = models[link_name]
        rng = np.random.default_rng(replication_seed(seed, 1))
        mu0 = rng.standard_normal(n) / math.sqrt(n)
        X = sample_design(kind, cfg.m, n, replication_seed(seed, 2))
        y, _ = generate_response(X, mu_star, model, replication_seed(seed, 3))
        traj = run_gd(X, y, model,
                      GdConfig(step_sizes=eta, t_max=cfg.t_max, init=mu0),
                      mu_star=mu_star)
        corrs = np.empty(cfg.t_max + 1)
        k = traj.corrs.size
        corrs[:k] = traj.corrs
        if k <= cfg.t_max:
            corrs[k:] = traj.corrs[-1]
        return corrs, traj.diverged_at

    results = _parallel_map(one, jobs, threads)

    rows = []
    for l_idx, link_name in enumerate(cfg.links):
        eta = cfg.etas[l_idx]
        for d_idx, design in enumerate(cfg.designs):
            base = ((l_idx * len(cfg.designs)) + d_idx) * cfg.replications
            block = results[base:base + cfg.replications]
            stacked = np.vstack([c for c, _ in block])
            mean_corr = stacked.mean(axis=0)
            for t in range(cfg.t_max + 1):
                rows.append(("fig2", design, cfg.m, n, eta, -1, t,
                             f"mean_corr[{link_name}]", float(mean_corr[t])))
            for b, (_, diverged_at) in enumerate(block):
                if diverged_at is not None:
                    rows.append(("fig2", design, cfg.m, n, eta, b,
                                 diverged_at, f"diverged_at[{link_name}]",
                                 float(diverged_at)))
        backend = backend_from_spec(cfg.backend, replication_seed(cfg.seed, 0))
        est_cfg = EstimatorConfig(mu_star_norm=1.0, eta=eta, gamma0_hat=1.0,
                                  alpha0_hat=0.0, backend=backend)
        track = estimator_run(est_cfg, models[link_name], cfg.t_max)
        for t in range(cfg.t_max + 1):
            rows.append(("fig2", "-", cfg.m, n, eta, -1, t,
                         f"corr_hat[{link_name}]", float(track.corr_hats[t])))
    return ResultTable("fig2", rows, _make_manifest("fig2", cfg))


# ---------------------------------------------------------------------------
# concentration sweep

def run_conc_sweep(cfg: ConcSweepConfig = ConcSweepConfig(),
                   threads: int = 1) -> ResultTable:
    """Median distance of empirical GD from its deterministic path, plus
    incoherence extremes, across an aspect-ratio grid at fixed dimension.
    All replications share one initialization so the t = 0 error is zero."""
    n = cfg.n
    mu_star = np.full(n, 1.0 / math.sqrt(n))
    noise = (gaussian_noise(cfg.noise_sigma) if cfg.noise_sigma > 0
             else zero_noise())
    model = single_index_model(link_from_name(cfg.link), noise)
    kind = kind_from_name(cfg.design)
    rng = np.random.default_rng(replication_seed(cfg.seed, 0))
    mu0 = rng.standard_normal(n) / math.sqrt(n)
    geometry = SeGeometry.from_vectors(mu0, mu_star)
    track = se_run(geometry, model, cfg.eta, cfg.t_max)
    ms = [int(round(phi * n)) for phi in cfg.phis]

    jobs = []
    for p_idx, m in enumerate(ms):
        for b in range(cfg.replications):
            flat = p_idx * cfg.replications + b
            jobs.append((m, replication_seed(cfg.seed, flat + 1)))

    def one(job):
        m, seed = job
        X = sample_design(kind, m, n, replication_seed(seed, 1))
        y, _ = generate_response(X, mu_star, model, replication_seed(seed, 2))
        traj = run_gd(X, y, model,
                      GdConfig(step_sizes=cfg.eta, t_max=cfg.t_max, init=mu0),
                      mu_star=mu_star, se_track=track)
        if traj.diverged_at is not None:
            raise NumericError(
                f"concentration replication diverged at t={traj.diverged_at}")
        return traj.conc_errors, traj.incoherences, traj.norms

    results = _parallel_map(one, jobs, threads)

    rows = []
    for p_idx, m in enumerate(ms):
        block = results[p_idx * cfg.replications:
                        (p_idx + 1) * cfg.replications]
        errors = np.vstack([r[0] for r in block])
        incos = np.vstack([r[1] for r in block])
        norms = np.vstack([r[2] for r in block])
        running_max_norm = np.maximum.accumulate(norms, axis=1)
        med = np.median(errors, axis=0)
        max_inco = incos.max(axis=0)
        max_norm = running_max_norm.max(axis=0)
        for t in range(cfg.t_max + 1):
            rows.append(("conc", cfg.design, m, n, cfg.eta, -1, t,
                         "median_conc_error", float(med[t])))
            rows.append(("conc", cfg.design, m, n, cfg.eta, -1, t,
                         "max_incoherence", float(max_inco[t])))
            rows.append(("conc", cfg.design, m, n, cfg.eta, -1, t,
                         "max_norm_sofar", float(max_norm[t])))
    return ResultTable("conc", rows, _make_manifest("conc", cfg))


# ---------------------------------------------------------------------------
# mean-field sweep

def run_mf_sweep(cfg: MfSweepConfig = MfSweepConfig(),
                 threads: int = 1) -> ResultTable:
    """Degeneration diagnostics of the mean-field state evolution against
    the two-dimensional one across an aspect-ratio grid; the same seed is
    reused at each aspect ratio so Monte Carlo errors are comparable."""
    n = cfg.n
    mu_star = np.full(n, 1.0 / math.sqrt(n))
    rng = np.random.default_rng(replication_seed(cfg.seed, 0))
    mu0 = rng.standard_normal(n) / math.sqrt(n)
    model = single_index_model(link_from_name(cfg.link), zero_noise())
    geometry = SeGeometry.from_vectors(mu0, mu_star)
    track = se_run(geometry, model, cfg.eta, cfg.t_max)

    def one(phi):
        run = mf_run(mu0, mu_star, model, cfg.eta, phi, cfg.t_max,
                     cfg.mc_draws, replication_seed(cfg.seed, 1))
        return mf_compare(run.states, track, mu0, mu_star, p=cfg.p)

    results = _parallel_map(one, list(cfg.phis), threads)

    rows = []
    for phi, diags in zip(cfg.phis, results):
        m = int(round(phi * n))
        for d in diags:
            for metric, value in (("offdiag_tau", d.offdiag_tau_norm),
                                  ("w_cov_max", d.w_cov_max),
                                  ("omega_gap_p", d.omega_gap)):
                rows.append(("mf", "-", m, n, cfg.eta, -1, d.t, metric,
                             float(value)))
    return ResultTable("mf", rows, _make_manifest("mf", cfg))


RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "conc": run_conc_sweep,
    "mf": run_mf_sweep,
}


def run_experiment(experiment: str, cfg=None, threads: int = 1) -> ResultTable:
    if experiment not in RUNNERS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of "
            f"{sorted(RUNNERS)}")
    if cfg is None:
        cfg = EXPERIMENT_CONFIGS[experiment]()
    return RUNNERS[experiment](cfg, threads=threads)


def run_from_manifest(manifest: dict, threads: int = 1) -> ResultTable:
    """Re-execute the experiment recorded in a manifest; the result is
    byte-identical to the original table."""
    experiment = manifest.get("experiment")
    if experiment not in EXPERIMENT_CONFIGS:
        raise ConfigError(f"manifest has unknown experiment {experiment!r}")
    cfg = config_from_mapping(experiment, manifest.get("config", {}))
    return run_experiment(experiment, cfg, threads=threads)


# ---------------------------------------------------------------------------
# plot-data emission

PLOT_IDS = ("fig1", "fig2", "conc", "mf")

_EMPTY_HEADERS = {
    "fig1": ["t", "design", "mean_abs_corr"],
    "fig2": ["t", "corr_hat"],
    "conc": ["phi", "t", "median_conc_error", "max_incoherence",
             "max_norm_sofar"],
    "mf": ["t", "phi", "offdiag_tau", "w_cov_max", "omega_gap_p",
           "mc_draws"],
}


def emit_plotdata(table: ResultTable, plot_id: str, out_dir: str) -> list:
    """Write tidy per-panel CSVs plus a JSON manifest for one plot id;
    returns the written file paths (manifest last).  No rendering here."""
    if plot_id not in PLOT_IDS:
        raise ConfigError(
            f"unknown plot id {plot_id!r}; expected one of {list(PLOT_IDS)}")
    os.makedirs(out_dir, exist_ok=True)
    writer = {
        "fig1": _emit_fig1,
        "fig2": _emit_fig2,
        "conc": _emit_conc,
        "mf": _emit_mf,
    }[plot_id]
    paths = writer(table, out_dir)
    if not paths:
        path = os.path.join(out_dir, f"{plot_id}.csv")
        write_csv(path, _EMPTY_HEADERS[plot_id], [])
        paths = [path]
    manifest = {
        "plot_id": plot_id,
        "files": [os.path.basename(p) for p in paths],
        "source_experiment": table.experiment,
        "source_config_sha256": table.manifest.get("config_sha256", ""),
        "version": __version__,
    }
    mpath = os.path.join(out_dir, f"{plot_id}_plotdata.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths + [mpath]


def _emit_fig1(table: ResultTable, out_dir: str) -> list:
    series = table.values("mean_abs_corr")
    if not series:
        return []
    ns = sorted({key[2] for key in series})
    paths = []
    for n in ns:
        rows = sorted(
            ((t, design, value)
             for (design, m, nn, t), value in series.items() if nn == n),
            key=lambda r: (r[0], r[1]))
        path = os.path.join(out_dir, f"fig1_n{n}.csv")
        write_csv(path, ["t", "design", "mean_abs_corr"], rows)
        paths.append(path)
    return paths


def _fig2_links(table: ResultTable) -> list:
    links = []
    for row in table.rows:
        metric = row[7]
        if metric.startswith("mean_corr[") and metric.endswith("]"):
            link = metric[len("mean_corr["):-1]
            if link not in links:
                links.append(link)
    return links


def _emit_fig2(table: ResultTable, out_dir: str) -> list:
    paths = []
    for link in _fig2_links(table):
        oracle = table.values(f"mean_corr[{link}]")
        est = table.values(f"corr_hat[{link}]")
        designs = sorted({key[0] for key in oracle})
        ts = sorted({key[3] for key in oracle})
        header = ["t"] + [f"oracle_{d}" for d in designs] + ["corr_hat"]
        rows = []
        for t in ts:
            row = [t]
            for d in designs:
                matches = [v for (dd, m, n, tt), v in oracle.items()
                           if dd == d and tt == t]
                row.append(matches[0] if matches else float("nan"))
            hat = [v for (dd, m, n, tt), v in est.items() if tt == t]
            row.append(hat[0] if hat else float("nan"))
            rows.append(tuple(row))
        path = os.path.join(out_dir, f"fig2_{link}.csv")
        write_csv(path, header, rows)
        paths.append(path)
    return paths


def _emit_conc(table: ResultTable, out_dir: str) -> list:
    med = table.values("median_conc_error")
    if not med:
        return []
    inco = table.values("max_incoherence")
    norm = table.values("max_norm_sofar")
    rows = []
    for (design, m, n, t) in sorted(med, key=lambda k: (k[1], k[3])):
        phi = m / n
        key = (design, m, n, t)
        rows.append((phi, t, med[key], inco.get(key, float("nan")),
                     norm.get(key, float("nan"))))
    path = os.path.join(out_dir, "conc.csv")
    write_csv(path, _EMPTY_HEADERS["conc"], rows)
    return [path]


def _emit_mf(table: ResultTable, out_dir: str) -> list:
    off = table.values("offdiag_tau")
    if not off:
        return []
    wcov = table.values("w_cov_max")
    gap = table.values("omega_gap_p")
    draws = table.manifest.get("config", {}).get("mc_draws", 0)
    rows = []
    for (design, m, n, t) in sorted(off, key=lambda k: (k[3], k[1])):
        phi = m / n
        key = (design, m, n, t)
        rows.append((t, phi, off[key], wcov.get(key, float("nan")),
                     gap.get(key, float("nan")), draws))
    path = os.path.join(out_dir, "mf.csv")
    write_csv(path, _EMPTY_HEADERS["mf"], rows)
    return [path]
