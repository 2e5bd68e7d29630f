"""Pinball (quantile) loss for the node and graph heads."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .model import QUANTILES


def pinball_loss(y, y_hat, quantiles=QUANTILES):
    """Mean over quantiles of max(q r, (q - 1) r) with r = y - y_hat.

    ``y`` may be a scalar or shape (k,), ``y_hat`` shape (3,) or (k, 3); the
    result has the shape of ``y``.
    """
    q = np.asarray(quantiles, dtype=float)
    r = np.asarray(y, dtype=float)[..., None] - np.asarray(y_hat, dtype=float)
    return np.maximum(q * r, (q - 1.0) * r).mean(axis=-1)


def pinball_grad(y, y_hat, quantiles=QUANTILES):
    """d pinball / d y_hat, elementwise (zero subgradient at r = 0)."""
    q = np.asarray(quantiles, dtype=float)
    r = np.asarray(y, dtype=float)[..., None] - np.asarray(y_hat, dtype=float)
    g = np.where(r > 0, -q, np.where(r < 0, 1.0 - q, 0.0))
    return g / len(q)


def total_loss(y_node_hat, y_graph_hat, y_node, y_graph, loss_mix: float = 0.5,
               quantiles=QUANTILES, with_grad: bool = False):
    """loss_mix * mean node pinball + (1 - loss_mix) * mean graph pinball over the batch."""
    if y_node is None or y_graph is None:
        raise DataError("loss needs labels for every node and graph")
    node = pinball_loss(y_node, y_node_hat, quantiles)
    graph = pinball_loss(y_graph, y_graph_hat, quantiles)
    value = loss_mix * node.mean() + (1.0 - loss_mix) * graph.mean()
    if not with_grad:
        return float(value)
    d_node = loss_mix * pinball_grad(y_node, y_node_hat, quantiles) / len(node)
    d_graph = (1.0 - loss_mix) * pinball_grad(y_graph, y_graph_hat, quantiles) / len(graph)
    return float(value), d_node, d_graph
