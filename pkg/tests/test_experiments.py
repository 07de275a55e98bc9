import numpy as np
import pytest
from pydantic import ValidationError

from rcflow.analysis import NMSE_EXACT_SENTINEL
from rcflow.experiments import (
    SCHEMAS,
    ChannelSpec,
    DatasetSpec,
    ExperimentSpec,
    encode_nmse,
    generate_dataset,
    pilot_count,
    run_experiment,
    run_spectral,
    run_sweep,
)


def small_spec(**overrides):
    base = dict(trials=3, n_outer=2, n_inner=6, seed=11, parallel=1)
    base.update(overrides)
    return ExperimentSpec(**base)


class TestSpecValidation:
    def test_lambda_alias(self):
        spec = ExperimentSpec.model_validate({"lambda": 3.0})
        assert spec.lam == 3.0
        assert spec.model_dump(by_alias=True)["lambda"] == 3.0

    def test_empty_snr_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(snr=[])

    def test_duplicate_axis_values_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            ExperimentSpec(snr=[10.0, 10.0])

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentSpec.model_validate({"bogus": 1})

    def test_channel_rho_range(self):
        with pytest.raises(ValidationError):
            ChannelSpec(row_cov_rho=1.0)


class TestPilotCount:
    @pytest.mark.parametrize("alpha,n_t,expected", [(0.6, 16, 10), (1.0, 16, 16),
                                                    (0.5, 16, 8), (0.1, 4, 1), (0.01, 4, 1)])
    def test_values(self, alpha, n_t, expected):
        assert pilot_count(alpha, n_t) == expected


class TestEncodeNmse:
    def test_finite_passthrough(self):
        assert encode_nmse(-12.5) == (-12.5, 0)

    def test_exact_sentinel(self):
        value, flag = encode_nmse(float("-inf"))
        assert value == NMSE_EXACT_SENTINEL and flag == 1


class TestRunExperiment:
    def test_row_counts_and_header(self):
        spec = small_spec(snr=[10.0, 20.0])
        res = run_experiment(spec)
        lines = res.files["results.csv"].strip().splitlines()
        assert lines[0].strip() == ",".join(SCHEMAS["results.csv"][1])
        assert len(lines) == 1 + 2 * spec.trials
        agg_lines = res.files["aggregate.csv"].strip().splitlines()
        assert len(agg_lines) == 1 + 2

    def test_deterministic_across_calls(self):
        spec = small_spec()
        a = run_experiment(spec)
        b = run_experiment(spec)
        assert a.files["results.csv"] == b.files["results.csv"]
        assert a.files["aggregate.csv"] == b.files["aggregate.csv"]

    def test_parallel_merge_matches_serial(self):
        serial = run_experiment(small_spec(parallel=1))
        pooled = run_experiment(small_spec(parallel=2))
        assert serial.files["results.csv"] == pooled.files["results.csv"]

    def test_common_random_numbers_across_snr(self):
        # the same trial index sees the same channel at every SNR
        from rcflow.experiments import _draw_channel

        spec = small_spec(snr=[0.0, 30.0])
        h_a = _draw_channel(spec, 2)
        h_b = _draw_channel(small_spec(snr=[15.0]), 2)
        assert np.array_equal(h_a, h_b)

    def test_baseline_estimator_column(self):
        res = run_experiment(small_spec(), estimator="lmmse")
        assert ",lmmse," in res.files["results.csv"].splitlines()[1]

    def test_lmmse_beats_zero_estimator_on_gaussian(self):
        res = run_experiment(small_spec(trials=20), estimator="lmmse")
        cell = res.summary["cells"][0]
        assert cell["mean_nmse_db"] < 0.0

    def test_clustered_channel_path(self):
        spec = small_spec(channel=ChannelSpec(kind="clustered", n_paths=2), trials=2)
        res = run_experiment(spec)
        assert len(res.files["results.csv"].strip().splitlines()) == 3

    def test_exponential_row_cov_path(self):
        spec = small_spec(channel=ChannelSpec(row_cov_rho=0.7), trials=2)
        res = run_experiment(spec, estimator="lmmse")
        assert res.summary["cells"][0]["mean_nmse_db"] < 0.0

    def test_unknown_estimator(self):
        with pytest.raises(ValueError, match="estimator"):
            run_experiment(small_spec(), estimator="psycho")

    def test_timings_excluded_from_results(self):
        res = run_experiment(small_spec())
        assert "wall" not in res.files["results.csv"].splitlines()[0]
        assert "wall_ms" in res.files["timings.csv"].splitlines()[0]


class TestSweep:
    def test_lambda_beta_grid_shape_and_sweet_spot(self):
        spec = small_spec(trials=2)
        res = run_sweep(spec, "lambda_beta", lambda_values=[1.0, 2.0, 3.0],
                        beta_values=[2.0, 8.0, 16.0])
        lines = res.files["sweep.csv"].strip().splitlines()
        assert len(lines) == 1 + 9
        header = lines[0].strip().split(",")
        sweet_col = header.index("sweet_spot_n1")
        for line in lines[1:]:
            assert 1 <= int(line.split(",")[sweet_col]) <= spec.n_outer

    def test_snr_axis(self):
        spec = small_spec(snr=[0.0, 10.0, 20.0], trials=2)
        res = run_sweep(spec, "snr")
        assert len(res.files["sweep.csv"].strip().splitlines()) == 4

    def test_duplicate_grid_values_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            run_sweep(small_spec(), "lambda_beta", lambda_values=[2.0, 2.0], beta_values=[1.0])

    def test_missing_grid_values_rejected(self):
        with pytest.raises(ValueError, match="requires"):
            run_sweep(small_spec(), "n1_n2", n_outer_values=[1, 2])

    def test_schedule_grid_pins_first_snr_alpha_cell(self):
        # multi-valued snr/alpha lists must not leak into a lambda-beta grid
        spec = small_spec(snr=[0.0, 30.0], alpha=[0.5, 1.0], trials=2)
        res = run_sweep(spec, "lambda_beta", lambda_values=[2.0], beta_values=[2.0])
        rows = res.files["sweep.csv"].strip().splitlines()[1:]
        header = SCHEMAS["sweep.csv"][1]
        cols = rows[0].split(",")
        assert float(cols[header.index("snr_db")]) == 0.0
        assert float(cols[header.index("alpha")]) == 0.5
        assert int(cols[header.index("trials")]) == 2

    def test_n1_monotone_with_common_randomness(self):
        # nested runs share channels/noise/init, so the mean NMSE over the
        # n_outer axis reproduces one run's per-outer curve
        spec = small_spec(trials=4, snr=[30.0], n_inner=12)
        res = run_sweep(spec, "n1_n2", n_outer_values=[1, 2, 3, 4], n_inner_values=[12])
        rows = res.files["sweep.csv"].strip().splitlines()[1:]
        header = SCHEMAS["sweep.csv"][1]
        nmse = [float(r.split(",")[header.index("mean_nmse_db")]) for r in rows]
        assert all(b <= a + 0.05 for a, b in zip(nmse, nmse[1:]))


class TestSpectral:
    def test_schema_and_stability(self):
        res = run_spectral(small_spec(trials=1, n_outer=1, n_inner=5))
        lines = res.files["spectral.csv"].strip().splitlines()
        assert lines[0].strip() == ",".join(SCHEMAS["spectral.csv"][1])
        assert len(lines) == 1 + 5
        assert res.summary["max_rho_t"] < 1.0


class TestGenerateDataset:
    def test_round_trip_through_bytes(self, tmp_path):
        ds, res = generate_dataset(DatasetSpec(count=12, seed=3))
        target = tmp_path / "x.rcds"
        target.write_bytes(res.binary_files["dataset.rcds"])
        from rcflow.channelgen import load_dataset

        back = load_dataset(target)
        assert np.array_equal(back.samples, ds.samples)
        assert res.summary["count"] == 12

    def test_mean_power_near_unity(self):
        _, res = generate_dataset(DatasetSpec(count=200, seed=4))
        assert 0.95 <= res.summary["mean_entry_power"] <= 1.05
