import json

import pytest

from rcflow.cli import main
from rcflow.experiments import SCHEMAS


def run_cli(*args):
    return main(list(args))


class TestRunCommand:
    def test_writes_expected_files(self, tmp_path, capsys):
        code = run_cli("run", "--trials", "2", "--n-outer", "2", "--n-inner", "5",
                       "--seed", "4", "--parallel", "1", "--out-dir", str(tmp_path))
        assert code == 0
        for name in ("results.csv", "aggregate.csv", "timings.csv", "metadata.json"):
            assert (tmp_path / name).exists()
        out = capsys.readouterr().out
        assert "mean NMSE" in out

    def test_byte_identical_reruns(self, tmp_path):
        args = ("run", "--trials", "2", "--n-outer", "2", "--n-inner", "5",
                "--seed", "4", "--parallel", "1")
        run_cli(*args, "--out-dir", str(tmp_path / "a"))
        run_cli(*args, "--out-dir", str(tmp_path / "b"))
        for name in ("results.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_headers_match_schema_registry(self, tmp_path):
        run_cli("run", "--trials", "1", "--n-outer", "1", "--n-inner", "3",
                "--parallel", "1", "--out-dir", str(tmp_path))
        for name in ("results.csv", "aggregate.csv", "timings.csv"):
            header = (tmp_path / name).read_text().splitlines()[0].strip()
            assert header == ",".join(SCHEMAS[name][1])
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["schemas"]["results.csv"] == SCHEMAS["results.csv"][0]

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"trials": 1, "n_outer": 1, "n_inner": 3,
                                   "lambda": 4.0, "seed": 9, "parallel": 1}))
        code = run_cli("run", "--config", str(cfg), "--seed", "10",
                       "--out-dir", str(tmp_path / "out"))
        assert code == 0
        meta = json.loads((tmp_path / "out" / "metadata.json").read_text())
        assert meta["spec"]["lambda"] == 4.0  # from file
        assert meta["spec"]["seed"] == 10  # flag wins

    def test_invalid_config_json_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{nope")
        assert run_cli("run", "--config", str(cfg)) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert run_cli("run", "--config", str(tmp_path / "absent.json")) == 2

    def test_invalid_spec_value_exit_2(self, tmp_path):
        assert run_cli("run", "--trials", "0", "--out-dir", str(tmp_path)) == 2

    def test_unknown_flag_exit_2(self):
        assert run_cli("run", "--frobnicate") == 2

    def test_missing_weight_file_exit_2(self, tmp_path):
        code = run_cli("run", "--trials", "1", "--n-outer", "1", "--n-inner", "3",
                       "--parallel", "1", "--prior", str(tmp_path / "missing.rcnn"),
                       "--out-dir", str(tmp_path))
        assert code == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_numeric_failure_exit_3(self, tmp_path):
        # a prior whose outputs overflow drives the solver state non-finite
        import numpy as np

        from conftest import write_weight_file

        graph = [
            {"kind": "conv2d", "name": "blow1", "inputs": ["input"],
             "weight": "w1", "bias": "b1", "stride": 1},
            {"kind": "conv2d", "name": "out", "inputs": ["blow1"],
             "weight": "w2", "bias": "b2", "stride": 1},
        ]
        tensors = {
            "w1": np.full((2, 2, 1, 1), 3e38, dtype=np.float32),
            "b1": np.zeros(2, dtype=np.float32),
            "w2": np.full((2, 2, 1, 1), 3e38, dtype=np.float32),
            "b2": np.zeros(2, dtype=np.float32),
        }
        path = write_weight_file(tmp_path / "overflow.rcnn", graph, tensors, 8)
        # the state blows up by ~1e77 per inner step until float64 overflows
        code = run_cli("run", "--trials", "1", "--n-outer", "3", "--n-inner", "3",
                       "--parallel", "1", "--prior", str(path), "--out-dir", str(tmp_path))
        assert code == 3


class TestBaselineCommand:
    def test_estimator_column(self, tmp_path):
        code = run_cli("baseline", "--estimator", "lmmse", "--trials", "2",
                       "--parallel", "1", "--out-dir", str(tmp_path))
        assert code == 0
        body = (tmp_path / "results.csv").read_text()
        assert ",lmmse," in body

    def test_same_schema_as_run(self, tmp_path):
        run_cli("run", "--trials", "1", "--n-outer", "1", "--n-inner", "3",
                "--parallel", "1", "--out-dir", str(tmp_path / "r"))
        run_cli("baseline", "--trials", "1", "--parallel", "1", "--out-dir", str(tmp_path / "b"))
        header_r = (tmp_path / "r" / "results.csv").read_text().splitlines()[0]
        header_b = (tmp_path / "b" / "results.csv").read_text().splitlines()[0]
        assert header_r == header_b


class TestSweepCommand:
    def test_grid_rows(self, tmp_path):
        code = run_cli("sweep", "--axis", "lambda_beta", "--lambda-values", "1,2",
                       "--beta-values", "2,8", "--trials", "1", "--n-outer", "2",
                       "--n-inner", "4", "--parallel", "1", "--out-dir", str(tmp_path))
        assert code == 0
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 5

    def test_axis_required(self, tmp_path):
        assert run_cli("sweep", "--trials", "1", "--out-dir", str(tmp_path)) == 2

    def test_duplicate_values_exit_2(self, tmp_path):
        code = run_cli("sweep", "--axis", "lambda_beta", "--lambda-values", "2,2",
                       "--beta-values", "2", "--trials", "1", "--out-dir", str(tmp_path))
        assert code == 2


class TestSpectralCommand:
    def test_writes_csv(self, tmp_path):
        code = run_cli("spectral", "--trials", "1", "--n-outer", "1", "--n-inner", "4",
                       "--parallel", "1", "--out-dir", str(tmp_path))
        assert code == 0
        header = (tmp_path / "spectral.csv").read_text().splitlines()[0].strip()
        assert header == ",".join(SCHEMAS["spectral.csv"][1])


class TestGenDataCommand:
    def test_writes_dataset_and_summary(self, tmp_path, capsys):
        code = run_cli("gen-data", "--count", "10", "--n-r", "2", "--n-t", "4",
                       "--seed", "5", "--name", "demo.rcds", "--out-dir", str(tmp_path))
        assert code == 0
        out = capsys.readouterr().out
        assert "generated 10 samples" in out
        from rcflow.channelgen import load_dataset

        ds = load_dataset(tmp_path / "demo.rcds")
        assert len(ds) == 10
        assert (2, 4) == (ds.n_r, ds.n_t)

    def test_deterministic_bytes(self, tmp_path):
        for d in ("a", "b"):
            run_cli("gen-data", "--count", "5", "--seed", "6", "--out-dir", str(tmp_path / d))
        assert ((tmp_path / "a" / "dataset.rcds").read_bytes()
                == (tmp_path / "b" / "dataset.rcds").read_bytes())

    def test_invalid_dims_exit_2(self, tmp_path):
        assert run_cli("gen-data", "--n-r", "0", "--out-dir", str(tmp_path)) == 2

    def test_invalid_channel_json_exit_2(self, tmp_path):
        assert run_cli("gen-data", "--channel", "{bad", "--out-dir", str(tmp_path)) == 2

    def test_clustered_channel_flag(self, tmp_path):
        code = run_cli("gen-data", "--count", "5", "--n-r", "2", "--n-t", "4",
                       "--channel", '{"kind": "clustered", "n_paths": 1}',
                       "--out-dir", str(tmp_path))
        assert code == 0
        from rcflow.channelgen import load_dataset

        ds = load_dataset(tmp_path / "dataset.rcds")
        assert ds.model["kind"] == "clustered"
