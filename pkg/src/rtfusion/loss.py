"""Masked L1 depth loss, edge-aware smoothness and their weighted sum."""

from dataclasses import asdict, dataclass

import numpy as np

from rtfusion import tensor as T


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(f"loss weights must be >= 0, got {self.lambda1}, {self.lambda2}")

    def to_dict(self):
        return asdict(self)


def _array(x):
    return x.data if isinstance(x, T.Tensor) else np.asarray(x)


def l1_loss(d_pred, d_gt, mask):
    """Mean |pred - gt| over pixels where mask == 1."""
    gt = _array(d_gt)
    m = _array(mask)
    if gt.shape != d_pred.shape or m.shape != d_pred.shape:
        raise ValueError(f"l1_loss: shapes pred {d_pred.shape}, gt {gt.shape}, mask {m.shape} differ")
    count = float(m.sum())
    if count <= 0:
        raise ValueError("l1_loss: mask has no valid pixels")
    dt = d_pred.dtype
    diff = T.abs(T.sub(d_pred, T.Tensor(gt.astype(dt))))
    return T.scalar_mul(T.sum(T.mul(diff, m.astype(dt))), 1.0 / count)


def image_edge_weights(rgb):
    """exp(-|grad I|) for x and y forward differences, |grad I| averaged over channels."""
    img = _array(rgb)
    gx = np.abs(img[:, :, :, 1:] - img[:, :, :, :-1]).mean(axis=1, keepdims=True)
    gy = np.abs(img[:, :, 1:, :] - img[:, :, :-1, :]).mean(axis=1, keepdims=True)
    return np.exp(-gx), np.exp(-gy)


def smoothness_loss(d_pred, rgb):
    """Edge-aware smoothness, averaged over all forward-difference terms."""
    img = _array(rgb)
    if img.ndim != 4 or img.shape[0] != d_pred.shape[0] or img.shape[2:] != d_pred.shape[2:]:
        raise ValueError(f"smoothness_loss: image shape {img.shape} does not match depth {d_pred.shape}")
    wx, wy = image_edge_weights(img)
    dt = d_pred.dtype
    n, _, h, w = d_pred.shape
    terms = n * (h * (w - 1) + (h - 1) * w)
    if terms == 0:
        return T.scalar_mul(T.sum(d_pred), 0.0)
    total = None
    if w > 1:
        dx = T.sub(d_pred[:, :, :, 1:], d_pred[:, :, :, :-1])
        total = T.sum(T.mul(T.abs(dx), wx.astype(dt)))
    if h > 1:
        dy = T.sub(d_pred[:, :, 1:, :], d_pred[:, :, :-1, :])
        sy = T.sum(T.mul(T.abs(dy), wy.astype(dt)))
        total = sy if total is None else T.add(total, sy)
    return T.scalar_mul(total, 1.0 / terms)


def loss_terms(d_pred, d_gt, mask, rgb, w=None):
    """(total, l1, smooth) as Tensors."""
    w = w or LossWeights()
    l1 = l1_loss(d_pred, d_gt, mask)
    smooth = smoothness_loss(d_pred, rgb)
    total = T.add(T.scalar_mul(l1, w.lambda1), T.scalar_mul(smooth, w.lambda2))
    return total, l1, smooth


def total_loss(d_pred, d_gt, mask, rgb, w=None):
    return loss_terms(d_pred, d_gt, mask, rgb, w)[0]
