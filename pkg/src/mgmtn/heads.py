"""Per-group classification heads.

Each group owns a two-layer head: the first layer compresses the fused group
representation (3584 -> 512 at full scale), the second predicts that group's
attributes. Group outputs are scattered back into the canonical 40-attribute
order. Dropout is active only in training mode.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .grouping import AttributeGrouping


class GroupHeads(nn.Module):
    def __init__(self, grouping: AttributeGrouping, in_dim: int,
                 hidden: int = 512, dropout: float = 0.5):
        super().__init__()
        self.grouping = grouping
        self.in_dim = in_dim
        self.heads = nn.ModuleList(
            nn.Sequential(
                nn.Linear(in_dim, hidden),
                nn.ReLU(inplace=True),
                nn.Dropout(dropout),
                nn.Linear(hidden, group.size),
            )
            for group in grouping.groups
        )
        index = torch.zeros(len(grouping.attribute_names), dtype=torch.long)
        for group in grouping.groups:
            for slot, attr in enumerate(group.attribute_indices):
                index[attr] = slot
        self.register_buffer("slot_of_attr", index)

    def forward(self, fused: torch.Tensor, group_order=None) -> torch.Tensor:
        """Assemble (B, 40) logits from per-group fused vectors (B, G, D).

        ``group_order`` optionally reorders processing; the assembled output
        is independent of it.
        """
        if fused.shape[1] != len(self.heads):
            raise ValueError(
                f"expected {len(self.heads)} group vectors, got {fused.shape[1]}"
            )
        batch = fused.shape[0]
        logits = fused.new_zeros(batch, len(self.grouping.attribute_names))
        order = range(len(self.heads)) if group_order is None else group_order
        for gi in order:
            out = self.heads[gi](fused[:, gi])
            idx = torch.as_tensor(
                self.grouping.groups[gi].attribute_indices, device=out.device
            )
            logits[:, idx] = out
        return logits


class GlobalHead(nn.Module):
    """Baseline head: predicts all 40 attributes from the global vector alone."""

    def __init__(self, in_dim: int, num_attributes: int = 40,
                 hidden: int = 512, dropout: float = 0.5):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(dropout),
            nn.Linear(hidden, num_attributes),
        )

    def forward(self, global_vec: torch.Tensor) -> torch.Tensor:
        return self.net(global_vec)
