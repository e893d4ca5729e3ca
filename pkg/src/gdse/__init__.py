"""Nonconvex gradient descent in generalized single-index models: empirical
dynamics, deterministic state evolution, spectral stability bookkeeping, a
data-free correlation estimator, finite-aspect-ratio mean-field dynamics,
and a reproducible experiment harness."""

__version__ = "0.1.0"

from .design import (GAUSSIAN, RADEMACHER, STD_EXPONENTIAL, DesignKind,
                     DesignMatrix, custom_kind, empirical_moments,
                     kind_from_name, replication_seed, sample_design)
from .errors import ConfigError, GdseError, NumericError
from .estimator import (EstimatorConfig, EstimatorTrack, MonteCarloBackend,
                        QuadratureBackend, estimate_signal_norm,
                        estimator_run, estimator_step)
from .gd_engine import (GdConfig, GdTrajectory, as_step_sizes, empirical_M,
                        generate_response, leave_one_out, op_norm,
                        product_norm_diag, run_gd, unit_interval_nodes)
from .harness import (ConcSweepConfig, Fig1Config, Fig2Config, MfSweepConfig,
                      ResultTable, backend_from_spec, config_from_mapping,
                      emit_plotdata, parse_config_file, run_conc_sweep,
                      run_experiment, run_fig1, run_fig2, run_from_manifest,
                      run_mf_sweep)
from .meanfield import (MfDiagnostics, MfRun, MfState, diagnostics_to_csv,
                        mf_compare, mf_idealized, mf_run)
from .model import (IDENTITY, QUAD_PLUS_LINEAR, SIGMOID, SQUARE, X_PLUS_SIN,
                    GaussianPairCov, LinkFunction, ModelSpec, NoiseSpec,
                    custom_noise, custom_score_model, gauss2_expect,
                    gaussian_noise, kappa, kappa_star, link_from_name,
                    model_from_names, noise_from_name, noise_from_sample,
                    rho_star, single_index_model, tau_delta, zero_noise)
from .state_evolution import (BQuantities, FixedPoint, PrStageReport, PrState,
                              PrTrack, Rank2Spectrum, SeGeometry, SePoint,
                              SeTrack, TheoreticalGdTrack, b_quantities,
                              mz_matrix_coeffs, mz_matrix_eigs, pr_run,
                              pr_stage_times, pr_step, rank2_eigs,
                              rank2_eigs_gram, se_run, solve_fixed_point,
                              theoretical_gd_mc)
