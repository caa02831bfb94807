"""Leave-one-out top-K evaluation: HR@K, NDCG@K, sparsity buckets, reports."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)


def hr_at_k(rank, k):
    if rank < 1 or k < 1:
        raise ContractError(f"rank and K must be >= 1 (rank={rank}, K={k})")
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    if rank < 1 or k < 1:
        raise ContractError(f"rank and K must be >= 1 (rank={rank}, K={k})")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def positive_ranks(user_emb, item_emb, users, candidates):
    """1-based rank of column 0 of each candidate row under ``v_u . v_i``.

    Ties go to the lower item index; ``-1`` entries are padding. Rows with
    no candidates yield rank 0.
    """
    users = np.asarray(users, dtype=np.int64)
    cand = np.asarray(candidates, dtype=np.int64)
    valid = cand >= 0
    scores = np.einsum("nd,ncd->nc", user_emb[users], item_emb[np.where(valid, cand, 0)])
    pos_score = scores[:, :1]
    pos_item = cand[:, :1]
    ahead = (scores > pos_score) | ((scores == pos_score) & (cand < pos_item))
    ahead &= valid
    ahead[:, 0] = False
    ranks = 1 + ahead.sum(axis=1)
    ranks[~valid[:, 0]] = 0
    return ranks


@dataclass
class RankingReport:
    k: int
    hr: float
    ndcg: float
    num_users: int
    skipped: int = 0
    buckets: list = field(default_factory=list)  # dicts: label, users, hr, ndcg
    meta: dict = field(default_factory=dict)
    ranks: np.ndarray | None = None

    def records(self):
        base = {"record": "overall", "k": self.k, "hr": self.hr, "ndcg": self.ndcg,
                "users": self.num_users, "skipped": self.skipped, **self.meta}
        out = [base]
        for b in self.buckets:
            out.append({"record": "bucket", "k": self.k, **b})
        return out

    def to_ndjson(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def to_table(self):
        lines = [f"{'slice':<14}{'users':>7}{'HR@' + str(self.k):>10}{'NDCG@' + str(self.k):>10}",
                 f"{'all':<14}{self.num_users:>7}{self.hr:>10.4f}{self.ndcg:>10.4f}"]
        for b in self.buckets:
            lines.append(f"{b['label']:<14}{b['users']:>7}{b['hr']:>10.4f}{b['ndcg']:>10.4f}")
        return "\n".join(lines) + "\n"


def evaluate(user_emb, item_emb, test, candidates, k=10, buckets=None, meta=None):
    """Average HR@K / NDCG@K over test users.

    ``test`` holds ``(user, positive)`` rows aligned with ``candidates``
    (positive in column 0). Users without a positive candidate are skipped
    and counted.
    """
    test = np.asarray(test, dtype=np.int64).reshape(-1, 2)
    if len(test) and not np.array_equal(np.asarray(candidates)[:, 0], test[:, 1]):
        raise ContractError("candidate column 0 must hold the held-out positive")
    ranks = positive_ranks(user_emb, item_emb, test[:, 0], candidates) if len(test) else np.empty(0, int)
    ok = ranks >= 1
    skipped = int((~ok).sum())
    if skipped:
        log.warning("%d test users had no candidates and were skipped", skipped)
    hits = np.where(ok & (ranks <= k), 1.0, 0.0)
    gains = np.where(ok & (ranks <= k), 1.0 / np.log2(np.maximum(ranks, 1) + 1.0), 0.0)
    n = int(ok.sum())
    report = RankingReport(k, float(hits[ok].mean()) if n else 0.0,
                           float(gains[ok].mean()) if n else 0.0, n, skipped,
                           meta=dict(meta or {}), ranks=ranks)
    if buckets is not None:
        for b, label in enumerate(buckets.labels):
            m = (buckets.assignment == b) & ok
            cnt = int(m.sum())
            report.buckets.append({
                "label": label, "users": cnt,
                "hr": float(hits[m].mean()) if cnt else 0.0,
                "ndcg": float(gains[m].mean()) if cnt else 0.0,
            })
    return report
