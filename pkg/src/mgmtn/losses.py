"""Attribute classification losses: BCE, focal, and equalized focal loss.

The equalized focal loss gives each attribute its own focusing factor
``gamma_j = gamma_b + gamma_v * (1 - g_j)``, where ``g_j`` tracks how balanced
the attribute's optimization currently is: an EMA of the clamped ratio of
accumulated positive-sample to negative-sample gradient magnitudes (|p - y|
for a sigmoid-BCE). Rare positives push ``g_j`` toward 0, raising ``gamma_j``
and upweighting that attribute via ``gamma_j / gamma_b``. With ``g_j == 1``
everywhere it reduces to plain focal loss with ``gamma = gamma_b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

LOSS_KINDS = ("bce", "focal", "efl")


@dataclass(frozen=True)
class EFLState:
    """Per-attribute gradient-balance estimates and hyperparameters."""

    g: np.ndarray = field(default_factory=lambda: np.ones(40))
    gamma_b: float = 2.0
    gamma_v: float = 2.0
    momentum: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "g", np.clip(np.asarray(self.g, dtype=np.float64), 0.0, 1.0))

    def gammas(self) -> np.ndarray:
        return self.gamma_b + self.gamma_v * (1.0 - self.g)


def _check_inputs(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if logits.dim() == 1:
        logits = logits[None]
    labels = torch.as_tensor(labels, device=logits.device)
    if labels.dim() == 1:
        labels = labels[None]
    if labels.shape != logits.shape:
        raise ValueError(f"labels {tuple(labels.shape)} != logits {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if not ((labels == 0) | (labels == 1)).all():
        raise ValueError("labels must be binary")
    return logits, labels.to(logits.dtype)


def _pt_terms(logits: torch.Tensor, labels: torch.Tensor):
    # numerically stable: log(pt) and (1 - pt) via logsigmoid/sigmoid
    log_pt = labels * F.logsigmoid(logits) + (1.0 - labels) * F.logsigmoid(-logits)
    one_minus_pt = labels * torch.sigmoid(-logits) + (1.0 - labels) * torch.sigmoid(logits)
    return log_pt, one_minus_pt


def bce_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    logits, labels = _check_inputs(logits, labels)
    log_pt, _ = _pt_terms(logits, labels)
    return -log_pt.mean()


def focal_loss(logits: torch.Tensor, labels, gamma: float = 2.0) -> torch.Tensor:
    logits, labels = _check_inputs(logits, labels)
    log_pt, one_minus_pt = _pt_terms(logits, labels)
    return -(one_minus_pt ** gamma * log_pt).mean()


def efl_loss(logits: torch.Tensor, labels, state: EFLState,
             update_state: bool = True) -> tuple[torch.Tensor, EFLState]:
    """Equalized focal loss over a (B, A) or (A,) batch of logits.

    Per attribute j: ``-(gamma_j / gamma_b) * (1 - pt)^gamma_j * log(pt)``
    averaged over attributes (and the batch). Returns the loss and the state
    with ``g`` advanced by one EMA step (unchanged when ``update_state`` is
    false, e.g. during evaluation or gradient checking).
    """
    logits, labels = _check_inputs(logits, labels)
    log_pt, one_minus_pt = _pt_terms(logits, labels)

    gammas = torch.as_tensor(state.gammas(), dtype=logits.dtype, device=logits.device)
    if state.gamma_b > 0:
        weight = gammas / state.gamma_b
    else:
        weight = torch.ones_like(gammas)
    loss = -(weight * one_minus_pt ** gammas * log_pt).mean()

    if not update_state:
        return loss, state
    with torch.no_grad():
        p = torch.sigmoid(logits)
        grad_mag = (p - labels).abs()
        pos = (grad_mag * labels).sum(dim=0)
        neg = (grad_mag * (1.0 - labels)).sum(dim=0)
        ratio = torch.clamp(pos / (neg + 1e-12), 0.0, 1.0).cpu().numpy().astype(np.float64)
    g_new = state.momentum * state.g + (1.0 - state.momentum) * ratio
    return loss, replace(state, g=g_new)


@dataclass
class LossConfig:
    kind: str = "efl"
    gamma_b: float = 2.0
    gamma_v: float = 2.0
    momentum: float = 0.99

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")


class AttributeLoss:
    """Stateful dispatcher over the configured loss kind."""

    def __init__(self, cfg: LossConfig, num_attributes: int = 40):
        self.cfg = cfg
        self.state = EFLState(
            g=np.ones(num_attributes), gamma_b=cfg.gamma_b,
            gamma_v=cfg.gamma_v, momentum=cfg.momentum,
        )

    def __call__(self, logits: torch.Tensor, labels, training: bool = True) -> torch.Tensor:
        if self.cfg.kind == "bce":
            return bce_loss(logits, labels)
        if self.cfg.kind == "focal":
            return focal_loss(logits, labels, gamma=self.cfg.gamma_b)
        loss, state = efl_loss(logits, labels, self.state, update_state=training)
        self.state = state
        return loss
