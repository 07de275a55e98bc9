import hashlib
import json
import math

import numpy as np
import pytest
import torch

from rcflow_trainer.cli import main as cli_main
from rcflow_trainer.export import export_weights
from rcflow_trainer.graph import GraphModel, build_toy_graph
from rcflow_trainer.train import DivergedError, TrainConfig, cfm_batch, snr_to_noise_std, train

from conftest import iid_channels, write_rcds


class TestConfig:
    def test_rejects_bad_ema(self, tiny_dataset):
        with pytest.raises(ValueError):
            TrainConfig(dataset=str(tiny_dataset), ema_decay=1.0)

    def test_rejects_empty_snr_set(self, tiny_dataset):
        with pytest.raises(ValueError):
            TrainConfig(dataset=str(tiny_dataset), snr_set=[])

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            TrainConfig.from_json({"dataset": "x", "nope": 1})


class TestObjective:
    def test_zero_predictor_loss_equals_target_power(self):
        # V = 0 predictor: loss is the mean squared target, E per real
        # component = sigma^2 / 2 under the batch construction
        gen = torch.Generator().manual_seed(0)
        h0 = torch.randn(4000, 2, 4, 16, generator=gen) / math.sqrt(2.0)
        total, count = 0.0, 0
        for snr_db in (0.0,):
            state, t, target = cfm_batch(h0, snr_db, gen)
            total += float(torch.mean(target**2))
            count += 1
        sigma2 = snr_to_noise_std(0.0) ** 2
        assert total / count == pytest.approx(sigma2 / 2.0, rel=0.02)

    def test_analytic_oracle_reaches_conditional_variance(self):
        # predictor v*(h, t) = t s^2 / (1 + t^2 s^2) h achieves the irreducible
        # loss E[Var(n | h_t)] (per real component: s^2 / (2 (1 + t^2 s^2)))
        gen = torch.Generator().manual_seed(1)
        h0 = torch.randn(200_000, 2, 1, 1, generator=gen) / math.sqrt(2.0)
        sigma2 = 1.0
        state, t, target = cfm_batch(h0, 0.0, gen)
        gain = (t * sigma2 / (1.0 + t**2 * sigma2))[:, None, None, None]
        oracle_loss = float(torch.mean((gain * state - target) ** 2))
        irreducible = float(torch.mean(sigma2 / (2.0 * (1.0 + t**2 * sigma2))))
        assert oracle_loss == pytest.approx(irreducible, rel=0.02)

    def test_snr_controls_noise_scale(self):
        gen = torch.Generator().manual_seed(2)
        h0 = torch.zeros(2000, 2, 2, 2)
        _, _, target = cfm_batch(h0, 10.0, gen)
        assert float(torch.mean(target**2)) == pytest.approx(0.05, rel=0.1)


class TestTrainLoop:
    def test_short_run_improves_on_zero_predictor(self, tiny_dataset):
        cfg = TrainConfig(dataset=str(tiny_dataset), epochs=30, batch_size=64,
                          learning_rate=3e-3, seed=0)
        result = train(cfg)
        assert result.epoch_losses[-1] < 0.5  # zero predictor sits at 0.5
        assert len(result.epoch_losses) == 30

    def test_deterministic_export(self, tmp_path, tiny_dataset):
        cfg = TrainConfig(dataset=str(tiny_dataset), epochs=2, batch_size=64, seed=3)
        digests = []
        for rep in ("a", "b"):
            result = train(cfg)
            path = tmp_path / f"{rep}.rcnn"
            export_weights(result.model.spec, result.ema_weights, path)
            digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_aborts_with_epoch(self, tmp_path):
        # absurd input scale overflows float32 immediately
        samples = iid_channels(128, 4, 16, seed=6) * 1e30
        path = write_rcds(tmp_path / "huge.rcds", samples)
        cfg = TrainConfig(dataset=str(path), epochs=3, batch_size=64, seed=0)
        with pytest.raises(DivergedError) as exc:
            train(cfg)
        assert exc.value.epoch == 0

    def test_dataset_smaller_than_batch_rejected(self, tmp_path):
        path = write_rcds(tmp_path / "s.rcds", iid_channels(8, 4, 16, seed=7))
        with pytest.raises(ValueError, match="fewer than one batch"):
            train(TrainConfig(dataset=str(path), epochs=1, batch_size=64))


class TestCli:
    def test_train_command_writes_artifacts(self, tmp_path, tiny_dataset):
        cfg = {"dataset": str(tiny_dataset), "out_dir": str(tmp_path / "out"),
               "epochs": 2, "batch_size": 64, "seed": 1, "fixture_count": 21}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["train", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        assert (out / "model.rcnn").exists()
        assert len(json.loads((out / "fixtures.json").read_text())) == 21
        log = json.loads((out / "train_log.json").read_text())
        assert len(log["epoch_losses"]) == 2

    def test_bad_config_exit_2(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"dataset": "x", "bogus": True}))
        assert cli_main(["train", "--config", str(cfg_path)]) == 2


@pytest.fixture(scope="session")
def fully_trained(tmp_path_factory):
    """Full desk-scale training used by the approximation-quality test."""
    work = tmp_path_factory.mktemp("full")
    samples = iid_channels(10_000, 4, 16, seed=11)
    path = write_rcds(work / "train.rcds", samples)
    cfg = TrainConfig(dataset=str(path), epochs=300, batch_size=256,
                      learning_rate=2e-3, seed=12)
    return train(cfg), cfg


class TestFullTraining:
    @pytest.mark.parametrize("t_value", [0.25, 0.5, 1.0])
    def test_denoiser_approaches_analytic_shrinkage(self, fully_trained, t_value):
        # on iid Gaussian channels the learned denoiser h - t v(h, t) must come
        # within 10% of h / (1 + t^2) on held-out states
        result, _ = fully_trained
        w64 = {k: v.double() for k, v in result.ema_weights.items()}
        rng = np.random.default_rng(13)
        rels = []
        for _ in range(100):
            h0 = (rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))) / np.sqrt(2)
            nz = (rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))) / np.sqrt(2)
            state = h0 + t_value * nz
            planes = torch.from_numpy(np.stack([state.real, state.imag])[None])
            with torch.no_grad():
                out = result.model(planes, torch.tensor([t_value], dtype=torch.float64),
                                   weights=w64)
            v = out[0, 0].numpy() + 1j * out[0, 1].numpy()
            denoised = state - t_value * v
            reference = state / (1.0 + t_value**2)
            rels.append(np.linalg.norm(denoised - reference) / np.linalg.norm(reference))
        assert float(np.mean(rels)) <= 0.10

    def test_loss_near_irreducible_floor(self, fully_trained):
        # the CFM floor for sigma = 1 under logit-normal t is E[1/(2(1+t^2))]
        result, _ = fully_trained
        gen = torch.Generator().manual_seed(14)
        t = torch.sigmoid(torch.randn(200_000, generator=gen))
        floor = float(torch.mean(1.0 / (2.0 * (1.0 + t**2))))
        assert result.epoch_losses[-1] <= 1.05 * floor
