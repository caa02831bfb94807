"""Behavior-wise propagation, cross-behavior aggregation and the
multi-behavior contrastive loss."""
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, EncoderError
from .losses import info_nce

NORM_MODES = ("symmetric", "raw_sum")


def edge_weights(edges, num_users, num_items, norm):
    """Per-edge propagation weight for a bipartite edge list."""
    if norm not in NORM_MODES:
        raise ConfigError(f"unknown norm mode {norm!r}; expected one of {NORM_MODES}")
    if norm == "raw_sum" or len(edges) == 0:
        return np.ones(len(edges))
    du = np.bincount(edges[:, 0], minlength=num_users).astype(np.float64)
    di = np.bincount(edges[:, 1], minlength=num_items).astype(np.float64)
    return 1.0 / np.sqrt(du[edges[:, 0]] * di[edges[:, 1]])


@dataclass
class BehaviorLayerEmbeddings:
    users: list  # layer 0..L user tables
    items: list

    @property
    def depth(self):
        return len(self.users) - 1

    def readout(self):
        """Layer-mean user and item tables."""
        return ag.mean_over_set(self.users), ag.mean_over_set(self.items)


def propagate_edges(edges, user_emb, item_emb, layers, norm="symmetric"):
    """LightGCN-style propagation on an explicit ``(n, 2)`` edge list.

    Isolated nodes get zero rows at every layer above 0.
    """
    if layers < 1:
        raise ConfigError(f"propagation depth must be >= 1, got {layers}")
    I, J = user_emb.shape[0], item_emb.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = edge_weights(edges, I, J, norm)
    u, i = edges[:, 0], edges[:, 1]
    users, items = [ag.as_tensor(user_emb)], [ag.as_tensor(item_emb)]
    for _ in range(layers):
        nu = ag.spmm(items[-1], i, u, w, I)
        ni = ag.spmm(users[-1], u, i, w, J)
        users.append(nu)
        items.append(ni)
    return BehaviorLayerEmbeddings(users, items)


def propagate_behavior(graph, k, user_emb, item_emb, layers, norm="symmetric"):
    """Propagate raw embeddings over behavior ``k`` of ``graph`` for ``layers`` hops."""
    if not 0 <= k < graph.num_behaviors:
        raise EncoderError(f"behavior {k} not in graph with {graph.num_behaviors} behaviors")
    if len(graph.edges[k]) == 0:
        raise EncoderError(f"behavior {graph.behaviors[k]!r} has no edges")
    return propagate_edges(graph.edges[k], user_emb, item_emb, layers, norm)


def aggregate_side(per_behavior_layers, W, Wl, slope):
    """One side of the cross-behavior fusion.

    ``per_behavior_layers[k][l]`` is the layer-``l`` table of behavior ``k``.
    Each layer is averaged over behaviors, passed through ``sigmoid(. @ W)``,
    the layers are concatenated and mapped by ``PReLU(. @ Wl)``.
    """
    if len(per_behavior_layers) == 0:
        raise EncoderError("cross-behavior aggregation needs at least one behavior")
    depth = {len(layers) for layers in per_behavior_layers}
    if len(depth) != 1:
        raise EncoderError(f"behaviors propagated to different depths: {sorted(depth)}")
    fused = []
    for l in range(depth.pop()):
        mean = ag.mean_over_set([layers[l] for layers in per_behavior_layers])
        fused.append(ag.sigmoid(ag.matmul(mean, W)))
    return ag.prelu(ag.matmul(ag.concat(fused, axis=1), Wl), slope)


def aggregate_cross_behavior(layer_embs, params, prefix="mul"):
    """Fuse ``BehaviorLayerEmbeddings`` of all behaviors into ``(v_u, v_i)``."""
    if len(layer_embs) == 0:
        raise EncoderError("no behaviors to aggregate")
    v_u = aggregate_side([e.users for e in layer_embs], params[f"{prefix}.W_user"],
                         params[f"{prefix}.Wl_user"], params[f"{prefix}.prelu_user"])
    v_i = aggregate_side([e.items for e in layer_embs], params[f"{prefix}.W_item"],
                         params[f"{prefix}.Wl_item"], params[f"{prefix}.prelu_item"])
    return v_u, v_i


def mul_cl_loss(user_tables, target, batch, tau, include_target=False, allow_degenerate=False):
    """InfoNCE between the target behavior's user view and every other one.

    ``user_tables[k]`` is the user table under behavior ``k``; positives are
    the same user under another behavior, negatives the other batch users.
    """
    if len(user_tables) < 2 and not allow_degenerate:
        raise EncoderError("multi-behavior contrast needs at least two behaviors")
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    terms = [info_nce(user_tables[target], user_tables[k], batch, tau, allow_degenerate)
             for k in range(len(user_tables)) if include_target or k != target]
    if not terms:
        return ag.Tensor(np.zeros((1, 1)))
    out = terms[0]
    for t in terms[1:]:
        out = ag.add(out, t)
    return out
