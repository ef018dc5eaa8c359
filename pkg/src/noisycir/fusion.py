"""Query fusion and the soft-label contrastive objective.

A query is the MLP of the concatenated text and reference-image embeddings,
one fusion MLP per view (plain global tokens vs weight-compensated). The
per-sample loss is temperature-scaled softmax cross-entropy over in-batch
cosine similarities, and the training objective is the label-masked mean of
the two views' loss vectors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Var
from .errors import ConfigError, ShapeError

VIEW_GLOBAL = "global"
VIEW_WCB = "wcb"

FUSION_MLP = {VIEW_GLOBAL: "fuse_global", VIEW_WCB: "fuse_wcb"}

DEFAULT_TEMPERATURE = 0.07


def fuse_query(text_emb: Var, image_emb: Var, store: ParamStore, view: str) -> Var:
    """Fused multi-modal query rows: concat(text, image) -> view MLP -> (B, d)."""
    if view not in FUSION_MLP:
        raise ConfigError(f"unknown fusion view {view!r}")
    if text_emb.shape != image_emb.shape:
        raise ShapeError(f"fuse_query {text_emb.shape} vs {image_emb.shape}")
    return ad.mlp_forward(ad.concat_cols(text_emb, image_emb), store, FUSION_MLP[view])


def nce_per_sample(queries: Var, targets: Var, tau: float) -> Var:
    """Per-sample contrastive loss column (B, 1) over in-batch negatives."""
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    b = queries.shape[0]
    if b < 2:
        raise ShapeError("need a batch of at least 2 pairs")
    if targets.shape[0] != b:
        raise ShapeError("queries and targets disagree on batch size")
    sims = ad.cosine_matrix(queries, targets)
    return ad.softmax_xent_rows(sims, tau)


def soft_nce_loss(queries: Var, targets: Var, queries_wcb: Var, targets_wcb: Var,
                  labels: np.ndarray, tau: float) -> Var:
    """Label-masked mean of the two views' per-sample losses (scalar Var)."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    b = queries.shape[0]
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for batch of {b}")
    l_main = nce_per_sample(queries, targets, tau)
    l_wcb = nce_per_sample(queries_wcb, targets_wcb, tau)
    return ad.add(ad.masked_mean(l_main, labels), ad.masked_mean(l_wcb, labels))
