"""Trainer CLI: ``rcflow-train train --config config.json``.

The config mirrors :class:`rcflow_trainer.train.TrainConfig` field names.
Outputs ``model.rcnn`` (EMA weights) and ``fixtures.json`` in ``out_dir``,
plus ``train_log.json`` with the per-epoch loss curve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .export import export_fixtures, export_weights
from .dataset import load_channels
from .train import DivergedError, TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcflow-train")
    sub = parser.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train a velocity-field network and export artifacts")
    t.add_argument("--config", type=Path, required=True, help="JSON TrainConfig")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        config = TrainConfig.from_json(json.loads(args.config.read_text()))
    except (OSError, ValueError, TypeError) as e:
        print(f"error: bad config: {e}", file=sys.stderr)
        return 2
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train(config)
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    export_weights(result.model.spec, result.ema_weights, out_dir / "model.rcnn")
    clean = load_channels(config.dataset).samples
    export_fixtures(result.model, result.ema_weights, clean,
                    out_dir / "fixtures.json", config.fixture_count, seed=config.seed + 1)
    (out_dir / "train_log.json").write_text(json.dumps({
        "epochs": config.epochs,
        "final_loss": result.epoch_losses[-1],
        "epoch_losses": result.epoch_losses,
    }))
    print(f"trained {config.epochs} epochs, final loss {result.epoch_losses[-1]:.4f}")
    print(f"wrote {out_dir / 'model.rcnn'}")
    print(f"wrote {out_dir / 'fixtures.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
