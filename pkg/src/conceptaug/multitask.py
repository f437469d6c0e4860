"""Auxiliary "predict the annotator's code" task trained alongside coding.

The auxiliary head reads a max-pooled representation of each annotated span,
taken either from the composed input (pre-convolution) or from the
convolution output (post-convolution). It is only used at training time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import metrics

LAMBDA_GRID = (0.001, 0.01, 0.1, 0.5, 1.0, 10.0, 50.0, 100.0, 1000.0)


@dataclass
class AuxConfig:
    head: str = "linear"  # linear | mlp
    share_point: str = "pre_convolution"  # pre_convolution | post_convolution
    weight: float = 1.0  # lambda
    hidden: int = 700

    def __post_init__(self):
        if self.head not in ("linear", "mlp"):
            raise ValueError(f"unknown auxiliary head {self.head!r}")
        if self.share_point not in ("pre_convolution", "post_convolution"):
            raise ValueError(f"unknown share point {self.share_point!r}")
        if self.weight < 0:
            raise ValueError("lambda must be non-negative")

    def to_dict(self):
        return asdict(self)


class AuxHead(nn.Module):
    def __init__(self, in_dim: int, n_concepts: int, head: str = "linear", hidden: int = 700):
        super().__init__()
        if head == "linear":
            self.net = nn.Linear(in_dim, n_concepts)
        else:
            self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, n_concepts))

    def forward(self, z):
        return self.net(z)


def build_aux_head(cfg: AuxConfig, model, n_concepts: int, seed: int = 0) -> AuxHead:
    """Head whose initialisation does not touch the global RNG stream."""
    dim = model.config.embed_dim if cfg.share_point == "pre_convolution" else model.config.conv_dim
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed * 1000 + 5)
        head = AuxHead(dim, n_concepts, cfg.head, cfg.hidden)
    return head.to(next(model.parameters()).dtype)


def span_repr(columns: torch.Tensor) -> torch.Tensor:
    """Elementwise max over the s columns (s, d) of one span."""
    if columns.shape[0] == 0:
        raise ValueError("empty span")
    return columns.max(dim=0).values


def span_reprs(rep: torch.Tensor, spans: torch.Tensor) -> torch.Tensor:
    """Max-pooled representation for every span of a batch.

    ``rep`` is (B, N, d); ``spans`` rows are (doc, start, end, target).
    """
    if len(spans) == 0:
        return rep.new_zeros((0, rep.shape[-1]))
    doc, start, end = spans[:, 0], spans[:, 1], spans[:, 2]
    width = int((end - start).max())
    offs = torch.arange(width)
    pos = (start.unsqueeze(1) + offs).clamp(max=rep.shape[1] - 1)  # S, W
    cols = rep[doc.unsqueeze(1), pos]  # S, W, d
    inside = (offs.unsqueeze(0) < (end - start).unsqueeze(1)).unsqueeze(-1)
    return cols.masked_fill(~inside, float("-inf")).max(dim=1).values


def shared_representation(out, cfg: AuxConfig) -> torch.Tensor:
    return out.x if cfg.share_point == "pre_convolution" else out.h


def aux_forward(z: torch.Tensor, head: AuxHead) -> torch.Tensor:
    return torch.softmax(head(z), dim=-1)


def coding_bce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy averaged over labels, summed over documents."""
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="none").mean(1).sum()


def aux_nll(aux_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over spans; exactly 0 for an empty batch."""
    if len(targets) == 0:
        return aux_logits.new_zeros(())
    return F.cross_entropy(aux_logits, targets, reduction="sum") / len(targets)


def joint_loss(logits, targets, aux_logits, aux_targets, weight: float):
    bce = coding_bce(logits, targets)
    nll = aux_nll(aux_logits, aux_targets) if aux_logits is not None else logits.new_zeros(())
    return bce + weight * nll, bce, nll


@torch.no_grad()
def predict_spans(model, head: AuxHead, cfg: AuxConfig, batches) -> tuple[list[int], list[int]]:
    was_training = model.training
    model.eval()
    preds, targets = [], []
    for batch in batches:
        if len(batch.spans) == 0:
            continue
        out = model(batch)
        z = span_reprs(shared_representation(out, cfg), batch.spans)
        preds.extend(head(z).argmax(-1).tolist())
        targets.extend(batch.spans[:, 3].tolist())
    model.train(was_training)
    return preds, targets


def tagging_accuracy(model, head: AuxHead, cfg: AuxConfig, batches) -> float:
    preds, targets = predict_spans(model, head, cfg, batches)
    return metrics.tagging_accuracy(preds, targets)
