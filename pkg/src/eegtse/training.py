"""Optimization loop, checkpoints and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Scene, preprocess_eeg
from .errors import ConfigError, FormatError
from .metrics import MetricReport, SceneMetrics, score_scene, si_sdr, si_sdr_loss
from .model import ModelConfig, TargetSpeakerExtractor
from .nn import NonFiniteError
from .nn.optim import Adam, clip_grad_norm

log = logging.getLogger(__name__)

CKPT_MAGIC = b"EEGTSE-CKPT"


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 1
    lr: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 20        # epochs
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    crop_seconds: float = 2.0
    max_steps: int | None = None
    seed: int = 0

    def validate(self) -> list[str]:
        rules = [
            ("train.epochs must be >= 1", lambda: self.epochs >= 1),
            ("train.batch_size must be >= 1", lambda: self.batch_size >= 1),
            ("train.lr must be > 0", lambda: self.lr > 0),
            ("train.decay_factor must lie in (0, 1]", lambda: 0 < self.decay_factor <= 1),
            ("train.decay_every must be >= 1", lambda: self.decay_every >= 1),
            ("train.grad_clip must be > 0", lambda: self.grad_clip > 0),
            ("train.crop_seconds must be > 0", lambda: self.crop_seconds > 0),
            ("train.max_steps must be >= 1 when set", lambda: self.max_steps is None or self.max_steps >= 1),
        ]
        problems = []
        for message, ok in rules:
            try:
                passed = ok()
            except TypeError:
                passed = False
            if not passed:
                problems.append(message)
        return problems


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule; ``epoch`` counts from 1."""
    return cfg.lr * cfg.decay_factor ** ((epoch - 1) // cfg.decay_every)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    epoch: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.model_config.hash()

    def build_model(self) -> TargetSpeakerExtractor:
        model = TargetSpeakerExtractor(self.model_config)
        model.params.load_state(self.params)
        return model

    @classmethod
    def from_model(cls, model: TargetSpeakerExtractor, optimizer: Adam | None = None, epoch: int = 0,
                   metrics: dict | None = None) -> Checkpoint:
        return cls(model.cfg, model.params.state(), optimizer.state() if optimizer else {},
                   optimizer.t if optimizer else 0, epoch, dict(metrics or {}))

    def save(self, path):
        """Magic line, JSON header (names, shapes, offsets, config hash), float32 payloads."""
        arrays = {**self.params, **self.optimizer}
        entries, offset = [], 0
        for name, arr in arrays.items():
            nbytes = int(arr.size) * 4
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
            offset += nbytes
        header = {
            "config": self.model_config.to_dict(),
            "config_hash": self.config_hash,
            "epoch": self.epoch,
            "optimizer_step": self.optimizer_step,
            "metrics": self.metrics,
            "tensors": entries,
            "dtype": "<f4",
        }
        body = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC + b" " + f"{len(body):012d}".encode() + b"\n")
            fh.write(body)
            for arr in arrays.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        raw = Path(path).read_bytes()
        first, _, rest = raw.partition(b"\n")
        parts = first.split()
        if len(parts) != 2 or parts[0] != CKPT_MAGIC or not parts[1].isdigit():
            raise FormatError(f"{path}: not a checkpoint file")
        n = int(parts[1])
        try:
            header = json.loads(rest[:n].decode())
        except ValueError as exc:
            raise FormatError(f"{path}: corrupt header ({exc})") from None
        payload = rest[n:]
        cfg = ModelConfig.from_dict(header["config"])
        if cfg.hash() != header["config_hash"]:
            raise FormatError(f"{path}: stored config hash {header['config_hash']} does not match "
                              f"its config ({cfg.hash()})")
        params, optimizer = {}, {}
        for e in header["tensors"]:
            chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise FormatError(f"{path}: truncated payload for {e['name']}")
            arr = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).copy()
            (optimizer if e["name"].startswith("adam_") else params)[e["name"]] = arr
        return cls(cfg, params, optimizer, header["optimizer_step"], header["epoch"], header.get("metrics", {}))


# ---------------------------------------------------------------- data preparation


@dataclass
class PreparedScene:
    scene_id: str
    mixture: np.ndarray
    target: np.ndarray
    eeg: np.ndarray
    fs: int
    fs_eeg: float


def prepare(scene: Scene, eeg_fs: float = 128.0) -> PreparedScene:
    eeg = preprocess_eeg(scene.eeg, target_fs=eeg_fs)
    return PreparedScene(scene.scene_id, np.asarray(scene.mixture.samples, dtype=np.float64),
                         np.asarray(scene.target.samples, dtype=np.float64), eeg.data, scene.fs, eeg.fs)


def random_crop(s: PreparedScene, seconds: float, rng) -> PreparedScene:
    n = int(round(seconds * s.fs))
    if n >= len(s.mixture):
        return s
    # align the crop start to the EEG sample grid
    n_eeg = int(round(seconds * s.fs_eeg))
    start_eeg = int(rng.integers(0, s.eeg.shape[1] - n_eeg + 1))
    start = min(int(round(start_eeg * s.fs / s.fs_eeg)), len(s.mixture) - n)
    return PreparedScene(s.scene_id, s.mixture[start:start + n], s.target[start:start + n],
                         s.eeg[:, start_eeg:start_eeg + n_eeg], s.fs, s.fs_eeg)


def _batches(scenes: list[PreparedScene], batch_size: int):
    for i in range(0, len(scenes), batch_size):
        group = scenes[i:i + batch_size]
        n = min(len(s.mixture) for s in group)
        ne = min(s.eeg.shape[1] for s in group)
        yield (np.stack([s.mixture[:n] for s in group]), np.stack([s.target[:n] for s in group]),
               np.stack([s.eeg[:, :ne] for s in group]))


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_trace: list[float]
    history: list[dict]
    best_epoch: int
    model: TargetSpeakerExtractor


def mean_si_sdr(model: TargetSpeakerExtractor, scenes: list[PreparedScene]) -> float:
    return float(np.mean([si_sdr(model.extract(s.mixture, s.eeg), s.target) for s in scenes]))


def mean_si_sdri(model: TargetSpeakerExtractor, scenes: list[PreparedScene]) -> float:
    return float(np.mean([si_sdr(model.extract(s.mixture, s.eeg), s.target) - si_sdr(s.mixture, s.target)
                          for s in scenes]))


def train(train_scenes: list[Scene], val_scenes: list[Scene], model_cfg: ModelConfig,
          cfg: TrainConfig, run_dir=None) -> TrainResult:
    """Minimize negative SI-SDR with Adam and a step learning-rate schedule.

    The checkpoint with the best mean validation SI-SDR is kept (written to
    ``run_dir/best.ckpt`` when a run directory is given). Falls back to the
    training scenes for validation when no validation scenes exist.
    """
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    if not train_scenes:
        raise ConfigError("training split is empty")
    eeg_fs = model_cfg.eeg.fs
    train_set = [prepare(s, eeg_fs) for s in train_scenes]
    val_set = [prepare(s, eeg_fs) for s in val_scenes] or train_set
    for s in train_set:
        if s.eeg.shape[0] != model_cfg.eeg.n_electrodes:
            raise ConfigError(f"scene {s.scene_id} has {s.eeg.shape[0]} EEG channels, "
                              f"model expects {model_cfg.eeg.n_electrodes}")
    run_dir = Path(run_dir) if run_dir is not None else None

    model = TargetSpeakerExtractor(model_cfg)
    opt = Adam(model.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    loss_trace, history = [], []
    best, best_epoch, best_score = None, 0, -math.inf
    last_good = Checkpoint.from_model(model, opt, 0)
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = learning_rate(cfg, epoch)
        order = rng.permutation(len(train_set))
        epoch_set = [random_crop(train_set[i], cfg.crop_seconds, rng) for i in order]
        epoch_losses = []
        for mixture, target, eeg in _batches(epoch_set, cfg.batch_size):
            model.params.zero_grad()
            try:
                estimate = model.forward(mixture, eeg, training=True)
                loss = si_sdr_loss(estimate, target[:, None, :])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError(f"loss is {value}")
                loss.backward()
            except NonFiniteError as exc:
                if run_dir is not None:
                    last_good.save(run_dir / "last_good.ckpt")
                raise TrainingDiverged(f"epoch {epoch}, step {steps + 1}: {exc}; "
                                       f"last good checkpoint is from epoch {last_good.epoch}") from exc
            clip_grad_norm(model.params, cfg.grad_clip)
            opt.step()
            steps += 1
            loss_trace.append(value)
            epoch_losses.append(value)
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        val = mean_si_sdr(model, val_set)
        record = {"epoch": epoch, "lr": opt.lr, "train_loss": float(np.mean(epoch_losses)),
                  "train_si_sdr": -float(np.mean(epoch_losses)), "val_si_sdr": val, "steps": steps}
        history.append(record)
        log.info("epoch %d lr %.3g train SI-SDR %.2f dB val SI-SDR %.2f dB", epoch, opt.lr,
                 record["train_si_sdr"], val)
        last_good = Checkpoint.from_model(model, opt, epoch, {"val_si_sdr": val})
        if val > best_score:
            best, best_epoch, best_score = last_good, epoch, val
        if run_dir is not None:
            with open(run_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    if run_dir is not None:
        best.save(run_dir / "best.ckpt")
        (run_dir / "loss_trace.json").write_text(json.dumps(loss_trace) + "\n")
    return TrainResult(best, loss_trace, history, best_epoch, model)


# ---------------------------------------------------------------- evaluation


def evaluate(scenes: list[Scene], checkpoint: Checkpoint | None = None,
             model: TargetSpeakerExtractor | None = None, system: str = "model") -> list[MetricReport]:
    """Mixture baseline report plus (when a model is given) the model's report."""
    if model is None and checkpoint is not None:
        model = checkpoint.build_model()
    eeg_fs = model.cfg.eeg.fs if model is not None else 128.0
    baseline = MetricReport("mixture")
    reports = [baseline]
    result = MetricReport(system) if model is not None else None
    if result is not None:
        reports.append(result)
    for scene in scenes:
        s = prepare(scene, eeg_fs)
        mix = score_scene(s.scene_id, s.mixture, s.target, s.mixture, s.fs)
        baseline.scenes.append(SceneMetrics(s.scene_id, mix.si_sdr, 0.0, mix.stoi, mix.estoi))
        if result is not None:
            result.scenes.append(score_scene(s.scene_id, model.extract(s.mixture, s.eeg), s.target,
                                             s.mixture, s.fs))
    return reports


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
