"""Synthesize a dataset and sweep separator depth R = 1..7 through the CLI.

    python scripts/depth_sweep.py --workdir runs/depth --scenes 40 --epochs 5
"""
import argparse
import json
import sys
from pathlib import Path

from eegtse import cli
from eegtse.experiments import tiny_model_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default="runs/depth")
    p.add_argument("--scenes", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--full-size", action="store_true", help="use the default model instead of the tiny one")
    args = p.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    if not (data / "manifest.json").exists():
        code = cli.main(["synth", "--out", str(data), "--scenes", str(args.scenes), "--seed", str(args.seed)])
        if code:
            sys.exit(code)
    cfg = cli.default_run_config()
    cfg["data"]["root"] = str(data)
    if not args.full_size:
        cfg["model"] = tiny_model_config(args.seed).to_dict()
    cfg["train"].update(epochs=args.epochs, lr=args.lr, max_steps=args.max_steps, seed=args.seed)
    cfg["run"].update(root=str(work), name="sweep")
    (work / "sweep_config.json").write_text(json.dumps(cfg, indent=2))
    sys.exit(cli.main(["train", "--config", str(work / "sweep_config.json"),
                       "--sweep", "separator.R=1..7", "--force"]))


if __name__ == "__main__":
    main()
