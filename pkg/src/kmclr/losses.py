"""Loss terms shared by both modules: in-batch InfoNCE, BPR, L2 and the total."""
import numpy as np

from . import autograd as ag
from .errors import ConfigError, ContractError, DimensionError


def info_nce(anchor, other, batch, tau, allow_degenerate=False):
    """Sum over ``x`` in ``batch`` of ``-log softmax_y(cos(a_x, o_y) / tau)[x]``.

    ``anchor`` and ``other`` are full tables; rows ``batch`` of each are
    compared. The denominator runs over every batch row including ``x``.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    batch = np.asarray(batch, dtype=np.int64)
    if len(batch) < 2 and not allow_degenerate:
        raise ContractError(f"contrastive batch needs >= 2 rows, got {len(batch)}")
    if anchor.shape[1] != other.shape[1]:
        raise DimensionError(f"info_nce: widths {anchor.shape} vs {other.shape}")
    a = ag.l2_normalize_rows(ag.gather_rows(anchor, batch))
    b = ag.l2_normalize_rows(ag.gather_rows(other, batch))
    logits = ag.scale(ag.matmul(a, ag.transpose(b)), 1.0 / tau)
    positive = ag.scale(ag.rowdot(a, b), 1.0 / tau)
    return ag.total(ag.sub(ag.logsumexp_rows(logits), positive))


def bpr_loss(users, items, triples):
    """``-sum ln sigmoid(u.i_pos - u.i_neg)`` over ``(u, i_pos, i_neg)`` rows."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ContractError("empty BPR batch")
    u = ag.gather_rows(users, triples[:, 0])
    pos = ag.rowdot(u, ag.gather_rows(items, triples[:, 1]))
    neg = ag.rowdot(u, ag.gather_rows(items, triples[:, 2]))
    return ag.scale(ag.total(ag.log_sigmoid(ag.sub(pos, neg))), -1.0)


def l2_penalty(tensors):
    terms = [ag.sq_norm(t) for t in tensors]
    out = terms[0]
    for t in terms[1:]:
        out = ag.add(out, t)
    return out


def total_loss(bpr, cl, tensors, lambda_cl, lambda_reg):
    """``bpr + lambda_cl * cl + lambda_reg * ||tensors||^2``.

    ``cl`` may be ``None`` (no contrastive term) and ``tensors`` may be empty.
    """
    out = bpr
    if cl is not None and lambda_cl:
        out = ag.add(out, ag.scale(cl, lambda_cl))
    if tensors and lambda_reg:
        out = ag.add(out, ag.scale(l2_penalty(tensors), lambda_reg))
    return out
