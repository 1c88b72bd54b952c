"""Sliding-window cascade prediction and hierarchical label fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from cascadeseg.cascade import CascadeModel
from cascadeseg.config import InferenceConfig
from cascadeseg.core_types import MODALITIES, LabelMap, ModalityStack, RegionMask, compose_labels
from cascadeseg.patching import assemble, crop, grid_patches

FLAIR, T1CE = MODALITIES.index("flair"), MODALITIES.index("t1ce")


@dataclass
class CasePrediction:
    labels: LabelMap
    p_wt: np.ndarray
    p_tc: np.ndarray
    p_et: np.ndarray

    @property
    def probabilities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.p_wt, self.p_tc, self.p_et


def binarize(prob: np.ndarray, threshold: float = 0.5, region: str = "WT") -> RegionMask:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return RegionMask(np.asarray(prob) > threshold, region)


@torch.no_grad()
def predict_probabilities(
    model: CascadeModel,
    stack: ModalityStack,
    cfg: InferenceConfig,
    gating: str | None = None,
) -> np.ndarray:
    """Assembled (3, X, Y, Z) WT/TC/ET probabilities from a sliding window.

    With ``cfg.restrict_to_support`` voxels that are zero in all four
    modalities get probability 0. Without it, a patch of pure zeros can still
    fire: instance norm stretches the zero-padding edge effects to unit scale.
    """
    shape = stack.shape
    size = tuple(min(p, n) for p, n in zip(cfg.patch_size, shape))
    stride = tuple(min(s, p) for s, p in zip(cfg.stride, size))
    corners = grid_patches(shape, size, stride)
    gating = gating or model.config.infer_gating
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    pair = stack.data[[FLAIR, T1CE]].astype(np.float32)
    patches = []
    try:
        for corner in corners:
            x = torch.from_numpy(np.ascontiguousarray(crop(pair, corner, size))).unsqueeze(0).to(device)
            out = model(x[:, 0:1], x[:, 1:2], gating=gating)
            patches.append(torch.cat([p[0] for p in out.probabilities]).cpu().numpy())
    finally:
        model.train(was_training)
    probs = assemble(patches, corners, shape)
    if cfg.restrict_to_support:
        probs *= np.any(stack.data != 0, axis=0)
    return probs


def predict_case(
    model: CascadeModel,
    stack: ModalityStack,
    cfg: InferenceConfig | None = None,
    gating: str | None = None,
) -> CasePrediction:
    cfg = cfg or InferenceConfig()
    probs = predict_probabilities(model, stack, cfg, gating)
    masks = [binarize(p, t, r) for p, t, r in zip(probs, cfg.thresholds, ("WT", "TC", "ET"))]
    labels = compose_labels(*masks, spacing=stack.spacing)
    return CasePrediction(labels, probs[0], probs[1], probs[2])
