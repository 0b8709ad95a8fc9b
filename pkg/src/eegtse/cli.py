"""``eegtse`` command line: synth, train (with depth sweeps), eval, extract, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .codec import CodecConfig
from .data import SynthConfig, load_split, preprocess_eeg, read_eeg, read_manifest, read_wav, write_dataset, write_wav
from .eeg_encoder import EEGEncoderConfig
from .errors import ConfigError, FormatError
from .extractor import SeparatorConfig
from .gradcases import format_results, run_gradchecks
from .metrics import format_table, write_reports
from .model import ModelConfig
from .training import Checkpoint, TrainConfig, TrainingDiverged, evaluate, train
from .types import Waveform

log = logging.getLogger("eegtse")

RUN_ROOT_ENV = "EEGTSE_RUN_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

MODEL_SECTIONS = {"codec": CodecConfig, "eeg": EEGEncoderConfig, "separator": SeparatorConfig}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- run config


def default_run_config() -> dict:
    return {
        "data": {"root": "data/synth", "eval_split": "test"},
        "model": ModelConfig().to_dict(),
        "train": asdict(TrainConfig()),
        "run": {"root": None, "name": None},
    }


def _merge(base: dict, update: dict, prefix: str, problems: list):
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            problems.append(f"unknown key '{path}'")
        elif isinstance(base[key], dict):
            if isinstance(value, dict):
                _merge(base[key], value, path + ".", problems)
            else:
                problems.append(f"'{path}' must be a mapping")
        else:
            base[key] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _override_path(key: str) -> list[str]:
    parts = key.split(".")
    if parts[0] in MODEL_SECTIONS or (len(parts) == 1 and parts[0] in ("dtype", "seed")):
        parts = ["model", *parts]
    return parts


def apply_override(cfg: dict, expr: str, problems: list):
    """``a.b.c=value``; model sections may drop the ``model.`` prefix."""
    key, sep, raw = expr.partition("=")
    if not sep or not key:
        problems.append(f"override '{expr}' is not of the form key=value")
        return
    nested = _parse_value(raw)
    for part in reversed(_override_path(key)):
        nested = {part: nested}
    _merge(cfg, nested, "", problems)


def _check_types(cfg: dict, defaults: dict, prefix: str, problems: list):
    for key, default in defaults.items():
        value, path = cfg[key], f"{prefix}{key}"
        if isinstance(default, dict):
            _check_types(value, default, path + ".", problems)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                problems.append(f"'{path}' must be true/false, got {value!r}")
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                problems.append(f"'{path}' must be an integer, got {value!r}")
        elif isinstance(default, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                problems.append(f"'{path}' must be a number, got {value!r}")
        elif isinstance(default, list):
            if not isinstance(value, list):
                problems.append(f"'{path}' must be a list, got {value!r}")


def resolve_config(path=None, overrides=()) -> tuple[dict, list[str]]:
    """Defaults <- config file <- overrides. Returns the config and all problems found."""
    cfg, problems = default_run_config(), []
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            return cfg, [f"config file {path} does not exist"]
        except ValueError as exc:
            return cfg, [f"config file {path} is not valid JSON: {exc}"]
        if not isinstance(loaded, dict):
            return cfg, [f"config file {path} must hold a JSON object"]
        _merge(cfg, loaded, "", problems)
    for expr in overrides:
        apply_override(cfg, expr, problems)
    _check_types(cfg, default_run_config(), "", problems)
    return cfg, problems


def build_configs(cfg: dict) -> tuple[ModelConfig | None, TrainConfig | None, list[str]]:
    problems = []
    parts = {}
    for section, klass in MODEL_SECTIONS.items():
        try:
            parts[section] = klass(**cfg["model"][section])
        except (ConfigError, TypeError) as exc:
            problems.append(f"model.{section}: {exc}")
    model = None
    if len(parts) == len(MODEL_SECTIONS):
        try:
            model = ModelConfig(dtype=cfg["model"]["dtype"], seed=cfg["model"]["seed"], **parts)
        except ConfigError as exc:
            problems.append(f"model: {exc}")
    train_cfg = None
    try:
        train_cfg = TrainConfig(**cfg["train"])
        problems.extend(train_cfg.validate())
    except TypeError as exc:
        train_cfg = None
        problems.append(f"train: {exc}")
    return model, train_cfg, problems


def preflight(cfg: dict) -> tuple[ModelConfig | None, TrainConfig | None, list[str]]:
    """Every configuration and dataset problem, collected before any work starts."""
    model, train_cfg, problems = build_configs(cfg)
    root = Path(cfg["data"]["root"])
    if not root.is_dir():
        problems.append(f"data.root {root} does not exist")
    else:
        try:
            manifest = read_manifest(root)
        except (FileNotFoundError, ValueError, KeyError) as exc:
            problems.append(f"data.root {root}: unreadable manifest ({exc})")
        else:
            if not manifest.train:
                problems.append(f"data.root {root}: training split is empty")
            split = cfg["data"]["eval_split"]
            if split not in ("train", "validation", "test"):
                problems.append(f"data.eval_split must be train, validation or test, got {split!r}")
            synth = manifest.extra.get("synth", {})
            if model is not None and "n_electrodes" in synth and synth["n_electrodes"] != model.eeg.n_electrodes:
                problems.append(f"dataset has {synth['n_electrodes']} EEG channels but "
                                f"model.eeg.n_electrodes is {model.eeg.n_electrodes}")
    return model, train_cfg, problems


def run_root(cfg: dict) -> Path:
    return Path(cfg["run"]["root"] or os.environ.get(RUN_ROOT_ENV) or "runs")


def prepare_run_dir(path: Path, force: bool) -> Path:
    """Run directories are append-only; ``--force`` clears an existing one."""
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"run directory {path} already exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def parse_sweep(expr: str) -> tuple[str, list]:
    """``separator.R=1..7`` or ``key=a,b,c``."""
    key, sep, raw = expr.partition("=")
    if not sep or not key or not raw:
        raise ConfigError(f"sweep '{expr}' is not of the form key=lo..hi or key=a,b,c")
    if ".." in raw:
        lo, _, hi = raw.partition("..")
        try:
            lo, hi = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"sweep range '{raw}' must be two integers") from None
        if hi < lo:
            raise ConfigError(f"sweep range '{raw}' is empty")
        return key, list(range(lo, hi + 1))
    return key, [_parse_value(v) for v in raw.split(",")]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    out = Path(args.out)
    if (out / "manifest.json").exists() and not args.force:
        raise ConfigError(f"{out} already holds a dataset; pass --force to overwrite")
    if out.exists() and args.force:
        shutil.rmtree(out)
    cfg = SynthConfig(fs_audio=args.fs_audio, fs_eeg=args.fs_eeg, duration=args.duration,
                      n_electrodes=args.electrodes, sir_db=args.sir_db, eeg_snr_db=args.eeg_snr_db)
    cfg.validate()
    try:
        manifest = write_dataset(out, args.scenes, args.seed, cfg)
    except OSError as exc:
        raise OSError(f"writing dataset to {out}: {exc}") from exc
    print(f"wrote {args.scenes} scenes to {out} "
          f"(train {len(manifest.train)} / validation {len(manifest.validation)} / test {len(manifest.test)})")
    return EXIT_OK


def _train_once(cfg: dict, run_dir: Path, model_cfg, train_cfg) -> dict:
    (run_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    root = Path(cfg["data"]["root"])
    train_scenes = load_split(root, "train")
    val_scenes = load_split(root, "validation")
    start = time.perf_counter()
    result = train(train_scenes, val_scenes, model_cfg, train_cfg, run_dir=run_dir)
    split = cfg["data"]["eval_split"]
    reports = evaluate(load_split(root, split), model=result.checkpoint.build_model())
    write_reports(run_dir / f"report_{split}.json", reports)
    agg = reports[1].aggregate()
    return {"run_dir": str(run_dir), "best_epoch": result.best_epoch, "steps": len(result.loss_trace),
            "val_si_sdr": result.history[result.best_epoch - 1]["val_si_sdr"],
            "seconds": time.perf_counter() - start, "n_params": result.model.params.num_parameters(),
            **{col: agg[col]["mean"] for col in agg}}


def _sweep_table(key: str, rows: list[dict], split: str) -> str:
    cols = ("n_params", "best_epoch", "val_si_sdr", "si_sdr", "si_sdr_improvement", "stoi", "estoi")
    lines = [f"sweep over {key}; metrics on the {split} split",
             f"| {key} | " + " | ".join(cols) + " |", "|" + "---|" * (len(cols) + 1)]
    for row in rows:
        cells = [f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c]) for c in cols]
        lines.append(f"| {row['value']} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def cmd_train(args) -> int:
    cfg, problems = resolve_config(args.config, args.override)
    sweep = None
    if args.sweep:
        try:
            sweep = parse_sweep(args.sweep)
        except ConfigError as exc:
            problems.append(str(exc))
    problems.extend(preflight(cfg)[2])
    if sweep is not None:
        for value in sweep[1]:
            variant, found = copy.deepcopy(cfg), []
            apply_override(variant, f"{sweep[0]}={json.dumps(value)}", found)
            found = found or build_configs(variant)[2]
            problems.extend(f"sweep {sweep[0]}={value}: {p}" for p in found)
    if problems:
        raise ConfigError("configuration rejected:\n  - " + "\n  - ".join(dict.fromkeys(problems)))
    model_cfg, train_cfg, _ = build_configs(cfg)
    name = cfg["run"]["name"] or f"run-{model_cfg.hash()}-s{train_cfg.seed}"
    base = run_root(cfg) / name
    if sweep is None:
        run_dir = prepare_run_dir(base, args.force)
        print(json.dumps(cfg, indent=2, sort_keys=True))
        summary = _train_once(cfg, run_dir, model_cfg, train_cfg)
        print(f"best epoch {summary['best_epoch']}: validation SI-SDR {summary['val_si_sdr']:.2f} dB; "
              f"{cfg['data']['eval_split']} SI-SDRi {summary['si_sdr_improvement']:.2f} dB; run dir {run_dir}")
        return EXIT_OK
    key, values = sweep
    sweep_dir = prepare_run_dir(base, args.force)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    (sweep_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    rows = []
    for value in values:
        variant = copy.deepcopy(cfg)
        apply_override(variant, f"{key}={json.dumps(value)}", [])
        m, t, _ = build_configs(variant)
        label = f"{key.split('.')[-1]}{value}"
        row = _train_once(variant, prepare_run_dir(sweep_dir / label, args.force), m, t)
        rows.append({"value": value, **row})
        print(f"{key}={value}: SI-SDRi {row['si_sdr_improvement']:.2f} dB", flush=True)
    table = _sweep_table(key, rows, cfg["data"]["eval_split"])
    (sweep_dir / "sweep.json").write_text(json.dumps({"key": key, "rows": rows}, indent=2, sort_keys=True) + "\n")
    (sweep_dir / "sweep.md").write_text(table + "\n")
    print(table)
    return EXIT_OK


def _load_checkpoint(args) -> Checkpoint:
    ckpt = Checkpoint.load(args.checkpoint)
    if args.config:
        cfg, problems = resolve_config(args.config, args.override or ())
        if problems:
            raise ConfigError("configuration rejected:\n  - " + "\n  - ".join(problems))
        model_cfg, _, problems = build_configs(cfg)
        if problems:
            raise ConfigError("configuration rejected:\n  - " + "\n  - ".join(problems))
        if model_cfg.hash() != ckpt.config_hash:
            raise ConfigError(f"checkpoint {args.checkpoint} was trained with model config {ckpt.config_hash}, "
                              f"but {args.config} describes {model_cfg.hash()}; refusing to load mismatched weights")
    return ckpt


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint(args)
    data = args.data
    if data is None:
        run_cfg = Path(args.checkpoint).parent / "config.json"
        if not run_cfg.exists():
            raise UsageError("--data is required when the checkpoint has no config.json beside it")
        data = json.loads(run_cfg.read_text())["data"]["root"]
    reports = evaluate(load_split(data, args.split), checkpoint=ckpt)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"report_{args.split}.json"
    write_reports(out, reports)
    print(format_table(reports))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    ckpt = _load_checkpoint(args)
    model = ckpt.build_model()
    mixture = read_wav(args.mixture)
    if mixture.samples.ndim != 1:
        raise FormatError(f"{args.mixture}: expected a mono mixture, got {mixture.samples.shape[0]} channels")
    eeg = preprocess_eeg(read_eeg(args.eeg), target_fs=model.cfg.eeg.fs)
    estimate = model.extract(mixture.samples, eeg.data)
    write_wav(args.out, Waveform(estimate, mixture.fs))
    print(f"wrote {len(estimate) / mixture.fs:.3f} s to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = run_gradchecks(args.ops or None, seed=args.seed, tol=args.tol)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.perf_counter() - start:.1f} s")
    return EXIT_RUNTIME if failed else EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> Parser:
    p = Parser(prog="eegtse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    d = SynthConfig()
    s.add_argument("--duration", type=float, default=d.duration)
    s.add_argument("--fs-audio", type=int, default=d.fs_audio)
    s.add_argument("--fs-eeg", type=int, default=d.fs_eeg)
    s.add_argument("--electrodes", type=int, default=d.n_electrodes)
    s.add_argument("--sir-db", type=float, default=d.sir_db)
    s.add_argument("--eeg-snr-db", type=float, default=d.eeg_snr_db)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model or sweep a config key")
    t.add_argument("--config")
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--sweep", metavar="KEY=LO..HI", help="e.g. separator.R=1..7")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "score a checkpoint on a split"),
                              ("extract", cmd_extract, "extract the attended talker from one mixture")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--config", help="refuse to run unless the checkpoint matches this config")
        e.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        if name == "eval":
            e.add_argument("--split", default="test", choices=("train", "validation", "test"))
            e.add_argument("--data")
            e.add_argument("--out")
        else:
            e.add_argument("--mixture", required=True)
            e.add_argument("--eeg", required=True)
            e.add_argument("--out", required=True)
        e.set_defaults(func=func)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--ops", nargs="*")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-6)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "ops", None):
        from .gradcases import CASES
        unknown = [o for o in args.ops if o not in CASES]
        if unknown:
            print(f"unknown ops {unknown}; choose from {sorted(CASES)}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FormatError, OSError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
