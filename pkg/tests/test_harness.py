"""Tests for experiment orchestration: config parsing, result tables,
replication determinism, and plot-data emission."""

import json
import math

import numpy as np
import pytest

from gdse.errors import ConfigError, NumericError
from gdse.estimator import MonteCarloBackend, QuadratureBackend
from gdse.harness import (ConcSweepConfig, Fig1Config, Fig2Config,
                          MfSweepConfig, ResultTable, backend_from_spec,
                          config_from_mapping, emit_plotdata,
                          estimate_signal_norm, parse_config_file,
                          run_conc_sweep, run_experiment, run_fig1, run_fig2,
                          run_from_manifest, run_mf_sweep, _rejection_init)

TINY_FIG1 = Fig1Config(designs=("gaussian",), ns=(12,), m=150,
                       replications=3, t_max=8, chunk=3, seed=7)
TINY_FIG2 = Fig2Config(links=("sigmoid",), etas=(0.5,),
                       designs=("gaussian",), n=10, m=80, replications=2,
                       t_max=4, seed=3)
TINY_CONC = ConcSweepConfig(n=10, phis=(5.0, 50.0), replications=4,
                            t_max=4, seed=5)
TINY_MF = MfSweepConfig(n=12, phis=(10.0, 1000.0), t_max=2, mc_draws=3000,
                        seed=9)


class TestConfigMapping:

    def test_string_coercion(self):
        cfg = config_from_mapping("fig1", {"m": "500", "ns": "20, 30",
                                           "eta": "0.25",
                                           "designs": "gaussian,rademacher"})
        assert cfg.m == 500
        assert cfg.ns == (20, 30)
        assert cfg.eta == 0.25
        assert cfg.designs == ("gaussian", "rademacher")

    def test_json_list_passthrough(self):
        cfg = config_from_mapping("conc", {"phis": [5.0, 10.0], "n": 20})
        assert cfg.phis == (5.0, 10.0)
        assert cfg.n == 20

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_mapping("fig1", {"bogus": "1"})

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            config_from_mapping("fig3", {})

    def test_bad_scalar_rejected(self):
        with pytest.raises(ConfigError, match="expected int"):
            config_from_mapping("fig1", {"m": "many"})

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[fig1]\nm = 400\nns = 10, 20\n\n"
                        "[conc]\nphis = 4, 8\nreplications = 2\n")
        parsed = parse_config_file(str(path))
        assert set(parsed) == {"fig1", "conc"}
        assert parsed["fig1"].m == 400
        assert parsed["fig1"].ns == (10, 20)
        assert parsed["conc"].phis == (4.0, 8.0)
        assert parsed["conc"].replications == 2

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[figure_one]\nm = 400\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config_file(str(path))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config_file(str(tmp_path / "missing.ini"))


class TestConfigValidation:

    def test_fig1(self):
        with pytest.raises(ConfigError):
            Fig1Config(band_lo=0.8, band_hi=0.7)
        with pytest.raises(ConfigError):
            Fig1Config(ns=())
        with pytest.raises(ConfigError):
            Fig1Config(replications=0)
        with pytest.raises(ConfigError):
            Fig1Config(m=0)

    def test_fig2(self):
        with pytest.raises(ConfigError):
            Fig2Config(links=("sigmoid",), etas=(0.5, 0.1))
        with pytest.raises(ConfigError):
            Fig2Config(n=-5)

    def test_sweeps(self):
        with pytest.raises(ConfigError):
            ConcSweepConfig(phis=(5.0, -1.0))
        with pytest.raises(ConfigError):
            MfSweepConfig(mc_draws=0)


class TestResultTable:

    def setup_method(self):
        self.table = run_conc_sweep(TINY_CONC)

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "table.csv"
        mpath = tmp_path / "manifest.json"
        self.table.to_csv(str(path))
        self.table.save_manifest(str(mpath))
        loaded = ResultTable.load(str(path), str(mpath))
        assert loaded.experiment == "conc"
        assert loaded.rows == self.table.rows
        assert loaded.manifest == self.table.manifest

    def test_csv_bytes_matches_file(self, tmp_path):
        path = tmp_path / "table.csv"
        self.table.to_csv(str(path))
        assert path.read_bytes() == self.table.csv_bytes()

    def test_values_filtering(self):
        med = self.table.values("median_conc_error", m=50)
        assert med
        assert all(key[1] == 50 for key in med)
        assert self.table.values("median_conc_error", design="rademacher") \
            == {}

    def test_manifest_contents(self):
        man = self.table.manifest
        assert man["experiment"] == "conc"
        assert man["config"]["n"] == 10
        assert len(man["config_sha256"]) == 64
        assert "seed_scheme" in man

    def test_load_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError, match="header"):
            ResultTable.load(str(path))

    def test_load_rejects_short_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(",".join(
            ("experiment", "design", "m", "n", "eta", "replication", "t",
             "metric", "value")) + "\nconc,gaussian,1\n")
        with pytest.raises(ConfigError, match="malformed"):
            ResultTable.load(str(path))


class TestDeterminism:

    def test_fig1_thread_invariance_and_replay(self):
        base = run_fig1(TINY_FIG1, threads=1)
        threaded = run_fig1(TINY_FIG1, threads=3)
        assert base.csv_bytes() == threaded.csv_bytes()
        replay = run_from_manifest(base.manifest, threads=2)
        assert base.csv_bytes() == replay.csv_bytes()

    def test_seed_changes_table(self):
        import dataclasses
        other = dataclasses.replace(TINY_FIG1, seed=8)
        assert run_fig1(TINY_FIG1).csv_bytes() != run_fig1(other).csv_bytes()

    def test_run_from_manifest_unknown_experiment(self):
        with pytest.raises(ConfigError):
            run_from_manifest({"experiment": "nope", "config": {}})

    def test_run_experiment_dispatch(self):
        with pytest.raises(ConfigError):
            run_experiment("nope")
        table = run_experiment("conc", TINY_CONC)
        assert table.experiment == "conc"


class TestFig1:

    def test_rejection_init_band(self):
        n = 40
        mu_star = np.full(n, 1.0 / math.sqrt(n))
        rng = np.random.default_rng(0)
        for _ in range(5):
            mu0 = _rejection_init(rng, n, mu_star, 0.65, 0.75, 10_000)
            scaled = math.sqrt(n) * float(mu0 @ mu_star) \
                / float(np.linalg.norm(mu0))
            assert 0.65 <= scaled <= 0.75

    def test_rejection_init_gives_up(self):
        n = 40
        mu_star = np.full(n, 1.0 / math.sqrt(n))
        rng = np.random.default_rng(0)
        with pytest.raises(NumericError):
            _rejection_init(rng, n, mu_star, 0.699, 0.701, max_attempts=2)

    def test_table_shape(self):
        table = run_fig1(TINY_FIG1)
        series = table.values("mean_abs_corr")
        assert sorted(key[3] for key in series) == list(range(9))
        assert all(key[0] == "gaussian" and key[2] == 12 for key in series)
        assert all(0.0 <= v <= 1.0 for v in series.values())
        for row in table.rows:
            if row[7] == "mean_abs_corr":
                assert row[5] == -1

    def test_early_stop_pads_with_last_value(self):
        import dataclasses
        cfg = dataclasses.replace(TINY_FIG1, replications=1, t_max=30,
                                  corr_stop=0.2, chunk=5)
        table = run_fig1(cfg)
        series = table.values("mean_abs_corr")
        vals = [series[("gaussian", 150, 12, t)] for t in range(31)]
        crossing = next(t for t, v in enumerate(vals) if v > 0.2)
        # after the first chunk that crosses the stop level the series is
        # frozen at its last computed value
        tail_start = min(30, 5 * (crossing // 5 + 1))
        assert len(set(vals[tail_start:])) == 1


class TestFig2:

    def test_backend_specs(self):
        assert isinstance(backend_from_spec("quadrature"), QuadratureBackend)
        mc = backend_from_spec("mc:500", seed=4)
        assert isinstance(mc, MonteCarloBackend)
        assert mc.draws == 500
        with pytest.raises(ConfigError):
            backend_from_spec("mc:lots")
        with pytest.raises(ConfigError):
            backend_from_spec("simpson")

    def test_table_shape(self):
        table = run_fig2(TINY_FIG2)
        oracle = table.values("mean_corr[sigmoid]")
        est = table.values("corr_hat[sigmoid]")
        assert sorted(key[3] for key in oracle) == list(range(5))
        assert sorted(key[3] for key in est) == list(range(5))
        assert all(key[0] == "-" for key in est)

    def test_zero_step_size_freezes_both_tracks(self):
        import dataclasses
        cfg = dataclasses.replace(TINY_FIG2, etas=(0.0,))
        table = run_fig2(cfg)
        oracle = table.values("mean_corr[sigmoid]")
        est = table.values("corr_hat[sigmoid]")
        assert len({round(v, 15) for v in oracle.values()}) == 1
        assert len({round(v, 15) for v in est.values()}) == 1


class TestConcSweep:

    def test_shared_init_gives_zero_start(self):
        table = run_conc_sweep(TINY_CONC)
        med = table.values("median_conc_error")
        for m in (50, 500):
            assert med[("gaussian", m, 10, 0)] == 0.0

    def test_error_shrinks_with_aspect_ratio(self):
        table = run_conc_sweep(TINY_CONC)
        med = table.values("median_conc_error")
        assert med[("gaussian", 500, 10, 4)] < med[("gaussian", 50, 10, 4)]

    def test_all_metrics_emitted(self):
        table = run_conc_sweep(TINY_CONC)
        for metric in ("median_conc_error", "max_incoherence",
                       "max_norm_sofar"):
            vals = table.values(metric)
            assert len(vals) == 2 * 5  # two aspect ratios, t = 0..4


class TestMfSweep:

    def test_diagnostics_shrink(self):
        table = run_mf_sweep(TINY_MF)
        off = table.values("offdiag_tau")
        wcov = table.values("w_cov_max")
        gap = table.values("omega_gap_p")
        m_small, m_big = 120, 12000
        t = 2
        assert off[("-", m_big, 12, t)] < off[("-", m_small, 12, t)]
        for tt in (1, 2):
            assert wcov[("-", m_big, 12, tt)] < wcov[("-", m_small, 12, tt)]
            assert gap[("-", m_big, 12, tt)] < gap[("-", m_small, 12, tt)]


class TestEmitPlotdata:

    def test_fig1_per_dimension_files(self, tmp_path):
        table = run_fig1(TINY_FIG1)
        paths = emit_plotdata(table, "fig1", str(tmp_path))
        names = [p.split("/")[-1] for p in paths]
        assert names == ["fig1_n12.csv", "fig1_plotdata.json"]
        lines = (tmp_path / "fig1_n12.csv").read_text().strip().split("\n")
        assert lines[0] == "t,design,mean_abs_corr"
        assert len(lines) == 1 + 9  # t = 0..8, one design
        manifest = json.loads((tmp_path / "fig1_plotdata.json").read_text())
        assert manifest["plot_id"] == "fig1"
        assert manifest["files"] == ["fig1_n12.csv"]
        assert manifest["source_experiment"] == "fig1"

    def test_fig2_wide_format(self, tmp_path):
        table = run_fig2(TINY_FIG2)
        paths = emit_plotdata(table, "fig2", str(tmp_path))
        lines = (tmp_path / "fig2_sigmoid.csv").read_text().strip().split("\n")
        assert lines[0] == "t,oracle_gaussian,corr_hat"
        assert len(lines) == 1 + 5

    def test_conc_format(self, tmp_path):
        table = run_conc_sweep(TINY_CONC)
        emit_plotdata(table, "conc", str(tmp_path))
        lines = (tmp_path / "conc.csv").read_text().strip().split("\n")
        assert lines[0] == ("phi,t,median_conc_error,max_incoherence,"
                            "max_norm_sofar")
        assert len(lines) == 1 + 2 * 5
        assert lines[1].startswith("5,0,0")  # phi = 5, t = 0, error 0

    def test_mf_format(self, tmp_path):
        table = run_mf_sweep(TINY_MF)
        emit_plotdata(table, "mf", str(tmp_path))
        lines = (tmp_path / "mf.csv").read_text().strip().split("\n")
        assert lines[0] == "t,phi,offdiag_tau,w_cov_max,omega_gap_p,mc_draws"
        assert len(lines) == 1 + 2 * 2
        assert all(line.endswith(",3000") for line in lines[1:])

    def test_empty_table_writes_header_only(self, tmp_path):
        table = ResultTable("fig1", [], {"config_sha256": ""})
        paths = emit_plotdata(table, "fig1", str(tmp_path))
        assert paths[0].endswith("fig1.csv")
        assert (tmp_path / "fig1.csv").read_text() \
            == "t,design,mean_abs_corr\n"

    def test_unknown_plot_id(self, tmp_path):
        table = ResultTable("fig1", [], {})
        with pytest.raises(ConfigError, match="unknown plot id"):
            emit_plotdata(table, "fig9", str(tmp_path))


class TestReexports:

    def test_signal_norm_helper_available(self):
        from gdse.estimator import estimate_signal_norm as original
        assert estimate_signal_norm is original
