"""Training, fine-tuning, and checkpoint serialization.

Checkpoint files are a single container: magic ``GKPT``, a u32 format version,
a length-prefixed metadata JSON (config, vocabulary, blob directory, metric
history), then raw little-endian float32 blobs, each CRC32-checked.
"""

from __future__ import annotations

import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .anchors import box_pixel_to_norm, encode_box, match_anchors
from .data import evaluate, load_dataset, load_image, prepare_image
from .errors import ConfigError, FormatError
from .loss import grounding_loss
from .model import GroundingModel, ModelConfig
from .text import Vocabulary

log = logging.getLogger("groundkit.engine")

CHECKPOINT_MAGIC = b"GKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 128
    finetune_batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 40
    patience: int = 3
    seed: int = 0
    max_seconds: float = 900.0
    use_clahe: bool = True
    stop_train_acc: float | None = None  # early exit for overfit experiments
    eval_every: int = 1  # validate every k epochs
    keep_best_val: bool = True  # restore best-val weights at exit

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale preset: trains on one CPU core in minutes."""
    defaults = dict(batch_size=16, lr=1e-3, epochs=200)
    defaults.update(overrides)
    return TrainConfig(**defaults)


@dataclass
class TrainResult:
    model: GroundingModel
    history: list[dict]
    best_val_loss: float
    epochs_run: int
    global_step: int


class _SampleCache:
    """Preprocessed images, match results, and regression targets, computed
    once per dataset."""

    def __init__(self, samples, model: GroundingModel, use_clahe: bool):
        self.samples = samples
        self.images = {}
        self.matches = []
        self.targets = []
        size = model.config.image_size
        for s in samples:
            if s.image_path not in self.images:
                self.images[s.image_path] = prepare_image(
                    load_image(s.image_path), size, use_clahe
                )
            gt_norm = box_pixel_to_norm(s.gt_box_px, s.image_size)
            match = match_anchors(model.anchor_set, gt_norm)
            target = np.array(
                [encode_box(gt_norm, model.anchor_set.box(i)) for i in match.candidates],
                dtype=np.float32,
            )
            self.matches.append(match)
            self.targets.append(target)

    def __len__(self):
        return len(self.samples)

    def image(self, i):
        return self.images[self.samples[i].image_path]


def _sample_loss(model, cache, i):
    mcfg = model.config
    return lambda head: grounding_loss(
        head,
        cache.matches[i],
        cache.targets[i],
        alpha=mcfg.focal_alpha,
        gamma=mcfg.focal_gamma,
        beta=mcfg.smooth_l1_beta,
        negative_weighting=mcfg.focal_negative_weighting,
    )


def _group_by_image(cache, indices):
    groups: dict = {}
    for i in indices:
        groups.setdefault(cache.samples[i].image_path, []).append(i)
    return groups


def _run_epoch(model, cache, order, batch_size, cfg, params, global_step):
    """One pass over `order`; returns (mean loss, global_step).

    Samples sharing an image reuse one backbone pass: their losses sum into a
    single scalar so the shared subgraph is traversed once on backward."""
    losses = []
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        T.zero_grad(params)
        batch_losses = []
        for path, idxs in _group_by_image(cache, batch).items():
            pyramid = model.encode_image(cache.images[path])
            total = None
            for i in idxs:
                head = model.forward_with_pyramid(pyramid, cache.samples[i].phrase)
                lb = _sample_loss(model, cache, i)(head)
                if not np.isfinite(lb.combined):
                    raise T.NumericError(
                        f"training diverged: non-finite loss at step {global_step}"
                    )
                term = T.mul(lb.total, 1.0 / len(batch))
                total = term if total is None else T.add(total, term)
                batch_losses.append(lb.combined)
            T.backward(total)
        T.adam_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        global_step += 1
        losses.append(float(np.mean(batch_losses)))
    return float(np.mean(losses)), global_step


def _val_loss(model, cache):
    total = 0.0
    with T.no_grad():
        for path, idxs in _group_by_image(cache, range(len(cache))).items():
            pyramid = model.encode_image(cache.images[path])
            for i in idxs:
                head = model.forward_with_pyramid(pyramid, cache.samples[i].phrase)
                total += _sample_loss(model, cache, i)(head).combined
    return total / len(cache)


def train(
    config: TrainConfig,
    train_manifest,
    val_manifest,
    model: GroundingModel | None = None,
) -> TrainResult:
    """Seeded epoch loop with per-epoch validation, patience-based early stop,
    best-validation weights retained, and a wall-clock budget."""
    t_start = time.monotonic()
    train_samples = load_dataset(train_manifest)
    val_samples = load_dataset(val_manifest)
    if not train_samples:
        raise FormatError(f"no training samples in {train_manifest}")

    if model is None:
        vocab = Vocabulary.build(s.phrase for s in train_samples)
        model = GroundingModel(config.model, vocab, seed=config.seed)
    if val_samples:
        oov = model.vocab.oov_rate(s.phrase for s in val_samples)
        log.info("validation OOV rate: %.1f%%", 100 * oov)

    cache = _SampleCache(train_samples, model, config.use_clahe)
    val_cache = _SampleCache(val_samples, model, config.use_clahe) if val_samples else None
    params = model.parameters()
    rng = np.random.default_rng(config.seed)

    history: list[dict] = []
    best_val = float("inf")
    best_state = None
    stall = 0
    global_step = 0
    epochs_run = 0
    eval_cache: dict = {}

    for epoch in range(config.epochs):
        order = rng.permutation(len(cache))
        train_loss, global_step = _run_epoch(
            model, cache, order, config.batch_size, config, params, global_step
        )
        epochs_run = epoch + 1
        entry = {"step": global_step, "split": "train", "loss": train_loss, "acc": None}
        history.append(entry)

        due = (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1
        if val_cache is not None and due:
            vloss = _val_loss(model, val_cache)
            vacc = evaluate(
                model, val_samples, use_clahe=config.use_clahe, image_cache=eval_cache
            ).top1_acc
            history.append(
                {"step": global_step, "split": "val", "loss": vloss, "acc": vacc}
            )
            log.info(
                "epoch %d: train loss %.4f, val loss %.4f, val acc %.3f",
                epoch, train_loss, vloss, vacc,
            )
            if vloss < best_val - 1e-6:
                best_val = vloss
                best_state = _snapshot(params)
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    log.info("early stop: val loss flat for %d evaluations", stall)
                    break
        elif val_cache is None:
            log.info("epoch %d: train loss %.4f", epoch, train_loss)

        if config.stop_train_acc is not None and due:
            tacc = evaluate(
                model, train_samples, use_clahe=config.use_clahe, image_cache=eval_cache
            ).top1_acc
            history.append(
                {"step": global_step, "split": "train_acc", "loss": None, "acc": tacc}
            )
            log.info("epoch %d: train acc %.3f (stop at %.3f)", epoch, tacc,
                     config.stop_train_acc)
            if tacc >= config.stop_train_acc:
                log.info("target train accuracy %.3f reached", tacc)
                best_state = None  # keep current weights
                break
        if time.monotonic() - t_start > config.max_seconds:
            log.info("wall-clock budget %.0fs exhausted", config.max_seconds)
            break

    if best_state is not None and val_cache is not None and config.keep_best_val:
        _restore(params, best_state)
    return TrainResult(
        model=model,
        history=history,
        best_val_loss=best_val,
        epochs_run=epochs_run,
        global_step=global_step,
    )


def _snapshot(params):
    return {p.name: p.tensor.data.copy() for p in params}


def _restore(params, state):
    for p in params:
        p.tensor.data[...] = state[p.name]


def finetune(
    checkpoint_path,
    train_manifest,
    val_manifest,
    overrides: dict | None = None,
) -> tuple[GroundingModel, dict]:
    """Resume a checkpoint's parameters (optimizer state reset, vocabulary
    frozen; new tokens map to UNK) and train on new data at the fine-tuning
    batch size. Reports held-out accuracy before and after."""
    model, meta = load_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(meta["train_config"])
    config.batch_size = config.finetune_batch_size
    for key, value in (overrides or {}).items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown finetune override {key!r}")
        setattr(config, key, value)
    if config.model.to_dict() != model.config.to_dict():
        raise ConfigError("finetune cannot change the model architecture")

    for p in model.parameters():  # optimizer state reset
        p.adam_m[...] = 0.0
        p.adam_v[...] = 0.0
        p.step_count = 0

    val_samples = load_dataset(val_manifest)
    before = evaluate(model, val_samples, use_clahe=config.use_clahe) if val_samples else None
    oov = model.vocab.oov_rate(s.phrase for s in load_dataset(train_manifest))
    log.info("finetune OOV rate on new data: %.1f%%", 100 * oov)

    result = train(config, train_manifest, val_manifest, model=model)
    after = evaluate(model, val_samples, use_clahe=config.use_clahe) if val_samples else None
    report = {
        "before_acc": before.top1_acc if before else None,
        "after_acc": after.top1_acc if after else None,
        "history": result.history,
        "oov_rate": oov,
    }
    return model, report


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(
    model: GroundingModel,
    path,
    train_config: TrainConfig | None = None,
    epoch: int = 0,
    global_step: int = 0,
    history: list | None = None,
) -> Path:
    path = Path(path)
    blobs: list[tuple[str, np.ndarray]] = []
    for p in model.parameters():
        blobs.append((f"p:{p.name}", p.tensor.data))
        blobs.append((f"m:{p.name}", p.adam_m))
        blobs.append((f"v:{p.name}", p.adam_v))

    directory = []
    offset = 0
    payload = bytearray()
    for name, arr in blobs:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
            }
        )
        payload.extend(raw)
        offset += len(raw)

    tc = train_config if train_config is not None else TrainConfig(model=model.config)
    meta = {
        "model_config": model.config.to_dict(),
        "train_config": tc.to_dict(),
        "vocab": model.vocab.to_dict(),
        "blobs": directory,
        "step_count": model.parameters()[0].step_count if model.parameters() else 0,
        "epoch": epoch,
        "global_step": global_step,
        "history": history or [],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(bytes(payload))
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> tuple[GroundingModel, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a GKPT checkpoint")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    meta_len = struct.unpack("<I", raw[8:12])[0]
    if len(raw) < 12 + meta_len:
        raise CheckpointError(f"{path}: truncated metadata")
    meta = json.loads(raw[12 : 12 + meta_len].decode("utf-8"))
    body = raw[12 + meta_len :]

    config = ModelConfig.from_dict(meta["model_config"])
    if expect_config is not None and expect_config.to_dict() != config.to_dict():
        diff = [
            k for k, v in expect_config.to_dict().items()
            if config.to_dict().get(k) != v
        ]
        raise CheckpointError(
            f"{path}: checkpoint config incompatible with requested config "
            f"(differs in {', '.join(diff)})"
        )
    vocab = Vocabulary.from_dict(meta["vocab"])
    model = GroundingModel(config, vocab, seed=0)

    by_name = {}
    for entry in meta["blobs"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(body):
            raise CheckpointError(f"{path}: truncated blob {entry['name']}")
        chunk = body[lo:hi]
        if (zlib.crc32(chunk) & 0xFFFFFFFF) != entry["crc32"]:
            raise CheckpointError(f"{path}: CRC mismatch in blob {entry['name']}")
        by_name[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(
            entry["shape"]
        )

    step_count = int(meta.get("step_count", 0))
    for p in model.parameters():
        key = f"p:{p.name}"
        if key not in by_name:
            raise CheckpointError(f"{path}: missing parameter blob {p.name}")
        stored = by_name[key]
        if tuple(stored.shape) != tuple(p.tensor.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {p.name}: "
                f"checkpoint {tuple(stored.shape)} vs model {tuple(p.tensor.shape)}"
            )
        p.tensor.data[...] = stored
        if f"m:{p.name}" in by_name:
            p.adam_m[...] = by_name[f"m:{p.name}"]
            p.adam_v[...] = by_name[f"v:{p.name}"]
        p.step_count = step_count
    return model, meta


def write_metric_log(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
