import numpy as np
import pytest

from sfgof.errors import ConfigError
from sfgof.harness import (
    ExperimentConfig,
    compare_to_oracle,
    run_power,
    run_size,
    wilson_interval,
)
from sfgof.inference_kit import ParamInterval
from sfgof.limit_laws import oracle_statistics
from sfgof.small_noise import SmallNoiseModel


def explosive_model() -> SmallNoiseModel:
    """Plug-in used to force simulation blow-ups in exclusion tests."""
    return SmallNoiseModel(
        name="explosive",
        drift=lambda theta, t, x: theta * np.asarray(x, dtype=float) ** 3,
        drift_dtheta=lambda theta, t, x: np.asarray(x, dtype=float) ** 3,
        diffusion=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
        x0=60.0,
        horizon=1.0,
        theta_domain=ParamInterval(0.5, 0.9),
    )


def quick_config(**overrides) -> ExperimentConfig:
    base = dict(
        family="small-noise",
        knob="epsilon",
        knob_value=0.05,
        replicates=120,
        alphas=(0.05,),
        model_params={"name": "linear", "theta0": 0.5},
        sim_params={"num_steps": 2000},
        master_seed=5,
        chunk_size=40,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestWilson:
    def test_basic_interval(self):
        lo, hi = wilson_interval(5, 100)
        assert 0.0 <= lo < 0.05 < hi <= 1.0

    def test_edge_counts(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == pytest.approx(0.0, abs=1e-12) and hi > 0.0
        lo, hi = wilson_interval(50, 50)
        assert hi == pytest.approx(1.0, abs=1e-12) and lo < 1.0

    def test_needs_trials(self):
        with pytest.raises(ConfigError):
            wilson_interval(0, 0)

    def test_calibration_coverage(self):
        # Oracle-injection harness runs: the Wilson interval should cover
        # the nominal level in at least 93 of 100 runs.
        covered = 0
        for seed in range(100):
            cfg = ExperimentConfig(
                family="oracle",
                knob="none",
                knob_value=0.0,
                replicates=400,
                alphas=(0.05,),
                master_seed=1000 + seed,
                sim_params={"m": 512},
            )
            row = run_size(cfg).rows[0]
            if row.wilson_lo <= 0.05 <= row.wilson_hi:
                covered += 1
        assert covered >= 93


class TestOracleInjection:
    def test_rate_matches_level(self):
        cfg = ExperimentConfig(
            family="oracle",
            knob="none",
            knob_value=0.0,
            replicates=2000,
            alphas=(0.05, 0.10),
            master_seed=77,
        )
        report = run_size(cfg)
        for row in report.rows:
            assert row.wilson_lo <= row.alpha <= row.wilson_hi
        assert report.ks_to_oracle <= 0.03
        assert report.excluded == 0


class TestCompareToOracle:
    def test_self_comparison(self):
        sample = oracle_statistics("cvm")[:2000]
        assert compare_to_oracle(sample, "cvm") <= 0.03

    def test_shift_detected(self):
        sample = oracle_statistics("cvm")[:2000] + 0.5
        assert compare_to_oracle(sample, "cvm") >= 0.3

    def test_needs_samples(self):
        with pytest.raises(ConfigError):
            compare_to_oracle(np.ones(100), "cvm")


class TestDeterminism:
    def test_threads_do_not_change_output(self):
        r1 = run_size(quick_config(threads=1))
        r2 = run_size(quick_config(threads=2))
        assert r1.csv_text() == r2.csv_text()
        assert np.array_equal(r1.statistics, r2.statistics)

    def test_chunk_size_does_not_change_output(self):
        r1 = run_size(quick_config(chunk_size=40))
        r2 = run_size(quick_config(chunk_size=120))
        assert r1.csv_text() == r2.csv_text()

    def test_seed_changes_output(self):
        r1 = run_size(quick_config(master_seed=5))
        r2 = run_size(quick_config(master_seed=6))
        assert not np.array_equal(r1.statistics, r2.statistics)


class TestModesAndValidation:
    def test_size_rejects_alternative(self):
        with pytest.raises(ConfigError):
            run_size(quick_config(alternative="sin-perturbed"))

    def test_power_requires_alternative(self):
        with pytest.raises(ConfigError):
            run_power(quick_config())

    def test_power_of_null_member_is_near_level(self):
        cfg = quick_config(
            replicates=400,
            alternative="sin-perturbed",
            alternative_params={"theta0": 0.5, "amplitude": 0.0},
            master_seed=8,
        )
        report = run_power(cfg)
        row = report.rows[0]
        assert row.rate <= 0.12

    def test_replicate_floor(self):
        with pytest.raises(ConfigError):
            quick_config(replicates=50)

    def test_alpha_domain(self):
        with pytest.raises(ConfigError):
            quick_config(alphas=(1.5,))

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            run_size(quick_config(family="garch"))


class TestExclusions:
    def test_blow_ups_counted_and_flagged(self):
        cfg = ExperimentConfig(
            family="small-noise",
            knob="epsilon",
            knob_value=0.1,
            replicates=100,
            alphas=(0.05,),
            model_params={"plugin": "test_harness:explosive_model", "theta0": 0.8},
            sim_params={"num_steps": 2000},
            master_seed=9,
            chunk_size=50,
        )
        report = run_size(cfg)
        assert report.excluded == 100
        assert report.exclusions_exceeded
        assert "100" in report.csv_text().splitlines()[1].split(",")[-1]


class TestReportOutput:
    def test_csv_schema(self, tmp_path):
        report = run_size(quick_config(label="smoke"))
        text = report.csv_text()
        header = text.splitlines()[0]
        assert header == (
            "model,knob,knob_value,alpha,kind,approach,M,rejections,rate,"
            "wilson_lo,wilson_hi,ks_to_oracle,excluded"
        )
        path = report.write(tmp_path)
        assert path.read_text() == text
        sidecar = (tmp_path / "smoke.meta.txt").read_text()
        assert "wall_clock_seconds" in sidecar
        assert "master_seed" in sidecar
