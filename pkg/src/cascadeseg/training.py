"""End-to-end cascade training: Adam, single plateau decay, per-epoch checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from cascadeseg.augmentation import augment
from cascadeseg.cascade import CascadeConfig, CascadeModel, default_device
from cascadeseg.config import TrainConfig, dump_config
from cascadeseg.core_types import MODALITIES, REGIONS, LabelMap, ModalityStack, region_mask_from_labels
from cascadeseg.losses import cascade_step_losses
from cascadeseg.patching import sample_patch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cascadeseg-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_LOG_COLUMNS = ["iteration", "epoch", "step1", "step2", "step3", "total", "lr"]
FLAIR, T1CE = MODALITIES.index("flair"), MODALITIES.index("t1ce")


class CheckpointError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def update_learning_rate(history: Sequence[float], cfg: TrainConfig) -> float:
    """Learning rate for the next epoch given the per-epoch mean losses so far.

    The rate drops once, permanently, after ``plateau_patience_epochs``
    consecutive epochs without a relative improvement of at least
    ``plateau_min_rel_improvement`` over the best loss seen.
    """
    if not history:
        raise ValueError("loss history is empty")
    best = history[0]
    stale = 0
    for loss in history[1:]:
        if loss <= best * (1.0 - cfg.plateau_min_rel_improvement):
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience_epochs:
                return cfg.lr_after_plateau
    return cfg.lr_initial


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)


def region_targets(labels: np.ndarray) -> list[torch.Tensor]:
    """(B, X, Y, Z) label batch -> WT, TC, ET float targets shaped (B, 1, X, Y, Z)."""
    return [
        torch.from_numpy(region_mask_from_labels(labels, r).mask.astype(np.float32)).unsqueeze(1) for r in REGIONS
    ]


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: CascadeConfig
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None = None
    epoch: int = 0
    iteration: int = 0
    history: list[float] = field(default_factory=list)
    train_config: dict[str, Any] | None = None
    rng_state: dict[str, Any] | None = None

    def build_model(self) -> CascadeModel:
        model = CascadeModel(self.model_config)
        model.load_state_dict(self.model_state)
        return model


def save_checkpoint(
    path: Path | str,
    model: CascadeModel,
    optimizer: torch.optim.Optimizer | None = None,
    epoch: int = 0,
    iteration: int = 0,
    history: Sequence[float] = (),
    train_config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": {
            "levels": model.config.levels,
            "base_channels": model.config.base_channels,
            "norm": model.config.norm,
            "train_gating": model.config.train_gating,
            "infer_gating": model.config.infer_gating,
            "gate_threshold": model.config.gate_threshold,
        },
        "step_configs": {f"step{k}": getattr(model, f"step{k}").config.to_dict() for k in (1, 2, 3)},
        "model_state": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "iteration": int(iteration),
        "history": [float(h) for h in history],
        "train_config": train_config.to_dict() if train_config is not None else None,
        "rng_state": {
            "numpy": rng.bit_generator.state if rng is not None else None,
            "torch": torch.get_rng_state(),
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


_ARCH_KEYS = ("levels", "base_channels", "norm")


def load_checkpoint(path: Path | str, expected: CascadeConfig | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected`` must agree on architecture if given."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a zoo of types for truncated archives
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a cascade checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    cfg = CascadeConfig(**payload["model_config"])
    if expected is not None:
        diffs = [k for k in _ARCH_KEYS if getattr(expected, k) != getattr(cfg, k)]
        if diffs:
            detail = ", ".join(f"{k}: file={getattr(cfg, k)} expected={getattr(expected, k)}" for k in diffs)
            raise CheckpointError(f"{path}: model config mismatch ({detail})")
    return Checkpoint(
        model_config=cfg,
        model_state=payload["model_state"],
        optimizer_state=payload["optimizer_state"],
        epoch=payload["epoch"],
        iteration=payload["iteration"],
        history=list(payload["history"]),
        train_config=payload["train_config"],
        rng_state=payload["rng_state"],
    )


# -- training loop ---------------------------------------------------------------


def make_optimizer(model: CascadeModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=cfg.lr_initial, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps
    )


def _read_loss_log(path: Path, up_to_epoch: int) -> list[dict[str, str]]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [row for row in csv.DictReader(fh) if int(row["epoch"]) <= up_to_epoch]


def train_run(
    cfg: TrainConfig,
    dataset: Sequence[tuple[ModalityStack, LabelMap]],
    run_dir: Path | str,
    resume: Path | str | None = None,
) -> Path:
    """Train a cascade and write ``config.ini``, ``loss_log.csv`` and checkpoints to ``run_dir``.

    Each epoch draws one patch from every case in a shuffled order.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for stack, labels in dataset:
        if labels is None:
            raise ValueError(f"case {stack.case_id!r} has no label map")
        if stack.shape != labels.shape:
            raise ValueError(f"case {stack.case_id!r}: image shape {stack.shape} != label shape {labels.shape}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.ini")

    rng = seed_everything(cfg.seed)
    device = default_device()
    model = CascadeModel(cfg.model).to(device)
    optimizer = make_optimizer(model, cfg)
    history: list[float] = []
    start_epoch, iteration = 0, 0
    log_rows: list[dict[str, str]] = []
    if resume is not None:
        ckpt = load_checkpoint(resume, cfg.model)
        model.load_state_dict(ckpt.model_state)
        model.to(device)
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        history, start_epoch, iteration = list(ckpt.history), ckpt.epoch, ckpt.iteration
        if ckpt.rng_state:
            if ckpt.rng_state.get("numpy") is not None:
                rng.bit_generator.state = ckpt.rng_state["numpy"]
            torch.set_rng_state(ckpt.rng_state["torch"])
        log_rows = _read_loss_log(run_dir / "loss_log.csv", start_epoch)

    log_path = run_dir / "loss_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(log_rows)
        fh.flush()

        model.train()
        images_all = [s.data for s, _ in dataset]
        labels_all = [lab.labels for _, lab in dataset]
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            lr = update_learning_rate(history, cfg) if history else cfg.lr_initial
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(dataset))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                imgs, labs = [], []
                for idx in batch:
                    img, lab, _ = sample_patch(images_all[idx], labels_all[idx], cfg.patch_size, rng, cfg.foreground_prob)
                    img, lab = augment(img, lab, cfg.augment, rng)
                    imgs.append(img)
                    labs.append(lab)
                x = torch.from_numpy(np.ascontiguousarray(np.stack(imgs), dtype=np.float32)).to(device)
                targets = [t.to(device) for t in region_targets(np.stack(labs))]
                iteration += 1

                out = model(x[:, FLAIR : FLAIR + 1], x[:, T1CE : T1CE + 1], gating=cfg.model.train_gating)
                steps = cascade_step_losses(out, targets, cfg.loss.aux_weights, cfg.loss.focal)
                for k, s in enumerate(steps, start=1):
                    if not torch.isfinite(s):
                        raise TrainingDiverged(f"non-finite loss in cascade step {k} at iteration {iteration} (epoch {epoch})")
                total = sum(w * s for w, s in zip(cfg.loss.step_weights, steps))
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                optimizer.step()

                total_f = float(total.detach())
                epoch_losses.append(total_f)
                writer.writerow(
                    {
                        "iteration": iteration,
                        "epoch": epoch,
                        "step1": repr(float(steps[0].detach())),
                        "step2": repr(float(steps[1].detach())),
                        "step3": repr(float(steps[2].detach())),
                        "total": repr(total_f),
                        "lr": repr(lr),
                    }
                )
            fh.flush()
            history.append(float(np.mean(epoch_losses)))
            log.info("epoch %d/%d  loss %.5f  lr %g", epoch, cfg.epochs, history[-1], lr)
            save_checkpoint(run_dir / "last.pt", model, optimizer, epoch, iteration, history, cfg, rng)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                save_checkpoint(run_dir / f"epoch_{epoch:04d}.pt", model, optimizer, epoch, iteration, history, cfg, rng)
    if not all(math.isfinite(h) for h in history):
        raise TrainingDiverged("non-finite epoch loss")
    return run_dir


def read_loss_log(path: Path | str) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
