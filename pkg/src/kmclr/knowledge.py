"""Knowledge-graph side: attentive aggregation, TransR/TATEC scoring,
consistency-guided edge sampling and the knowledge-aware contrastive loss.

Two KG views share entity indexing. The translational view (``td``) is
trained with TransR scores, the semantic view (``sm``) with TATEC scores.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import ConfigError, RelationLookupError, SamplerError
from .losses import info_nce
from .multibehavior import propagate_edges

log = logging.getLogger(__name__)

VARIANTS = {"translational": "td", "semantic": "sm"}


@dataclass
class KgView:
    variant: str
    entity: ag.Tensor
    relation: ag.Tensor
    proj: ag.Tensor
    diag: ag.Tensor | None = None

    @property
    def num_relations(self):
        return self.relation.shape[0]


def kg_view(params, variant):
    key = VARIANTS[variant]
    return KgView(variant, params[f"kg.{key}.entity"], params[f"kg.{key}.relation"],
                  params[f"kg.{key}.proj"], params["kg.sm.diag"] if key == "sm" else None)


# ------------------------------------------------------------- aggregation

def attention_weights(entity, relation, W1, b1, center, rel, nbr, num_entities):
    """Normalized per-edge attention, ``softmax`` within each center's edges."""
    hc = ag.gather_rows(entity, center)
    hr = ag.gather_rows(relation, rel)
    hn = ag.gather_rows(entity, nbr)
    score = ag.exp(ag.add_scalar(ag.sigmoid(ag.matmul(ag.concat([hc, hr, hn], axis=1), W1)), b1))
    denom = ag.gather_rows(ag.scatter_rows(score, center, num_entities), center)
    return ag.div(score, denom), hn


def kg_attention_aggregate(kg, view, params, layers=1, edges=None):
    """Entity table after ``layers`` rounds of relation-aware attention.

    Each round computes, for every entity ``i``,
    ``sigmoid((v_i + sum_e w_{i,r,e} v_e) @ W2 + b2)``. ``edges`` overrides
    the KG's neighbor edges (used for dropout subgraphs). An entity with
    no edges keeps only its self term.
    """
    if layers < 1:
        raise ConfigError(f"KG aggregation depth must be >= 1, got {layers}")
    center, rel, nbr = kg.neighbor_edges if edges is None else edges
    W1, b1 = params["kg.att_W1"], params["kg.att_b1"]
    W2, b2 = params["kg.att_W2"], params["kg.att_b2"]
    x = view.entity
    n = x.shape[0]
    for _ in range(layers):
        h = x
        if len(center):
            w, hn = attention_weights(x, view.relation, W1, b1, center, rel, nbr, n)
            h = ag.add(x, ag.scatter_rows(ag.scale_rows(hn, w), center, n))
        x = ag.sigmoid(ag.add_scalar(ag.matmul(h, W2), b2))
    return x


def kg_item_embeddings(kg, view, params, layers=1, edges=None):
    table = kg_attention_aggregate(kg, view, params, layers, edges)
    return ag.gather_rows(table, np.arange(kg.num_items))


# ----------------------------------------------------------------- scoring

def _check_relations(view, r):
    r = np.asarray(r, dtype=np.int64)
    if r.size and (r.min() < 0 or r.max() >= view.num_relations):
        raise RelationLookupError(f"relation index outside [0, {view.num_relations})")
    return r


def transr_score(h, r, t, view):
    """``-||M_r v_h + v_r - M_r v_t||^2`` per triple, as an ``(n, 1)`` column."""
    r = _check_relations(view, r)
    vh = ag.gather_rows(view.entity, h)
    vt = ag.gather_rows(view.entity, t)
    diff = ag.sub(ag.add(ag.relation_project(view.proj, r, vh), ag.gather_rows(view.relation, r)),
                  ag.relation_project(view.proj, r, vt))
    return ag.scale(ag.rowdot(diff, diff), -1.0)


def tatec_score(h, r, t, view):
    """``v_h' M_r v_t + v_h' v_r + v_t' v_r + v_h' D v_t`` per triple."""
    if view.diag is None:
        raise ConfigError("TATEC scoring needs the semantic view (diagonal D missing)")
    r = _check_relations(view, r)
    vh = ag.gather_rows(view.entity, h)
    vt = ag.gather_rows(view.entity, t)
    vr = ag.gather_rows(view.relation, r)
    bilinear = ag.rowdot(vh, ag.relation_project(view.proj, r, vt))
    out = ag.add(bilinear, ag.rowdot(vh, vr))
    out = ag.add(out, ag.rowdot(vt, vr))
    return ag.add(out, ag.rowdot(ag.scale_cols(vh, view.diag), vt))


def score(h, r, t, view):
    fn = transr_score if view.variant == "translational" else tatec_score
    return fn(h, r, t, view)


def sample_negative_tails(kg, triples, rng, max_tries=1000):
    """Uniform corrupt tails rejecting any ``(h, r, t')`` already in the KG."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E = kg.num_entities
    out = np.empty(len(triples), dtype=np.int64)
    for n, (h, r, _) in enumerate(triples):
        for _ in range(max_tries):
            cand = int(rng.integers(E))
            if not kg.contains(h, r, cand):
                out[n] = cand
                break
        else:
            taken = sum(kg.contains(h, r, e) for e in range(E))
            raise SamplerError(f"cannot corrupt ({h}, {r}, .): {taken} of {E} tails already used")
    return out


def kg_ranking_loss(view, triples, negative_tails, score_order="conventional"):
    """``sum -ln sigmoid(f(h,r,t) - f(h,r,t'))`` over a triple batch.

    ``score_order="literal"`` flips the difference to ``f(h,r,t') - f(h,r,t)``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ConfigError("empty triple batch")
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    pos = score(h, r, t, view)
    neg = score(h, r, np.asarray(negative_tails, dtype=np.int64), view)
    if score_order == "conventional":
        diff = ag.sub(pos, neg)
    elif score_order == "literal":
        diff = ag.sub(neg, pos)
    else:
        raise ConfigError(f"unknown score_order {score_order!r}")
    return ag.scale(ag.total(ag.log_sigmoid(diff)), -1.0)


# ------------------------------------------------------- consistency / views

def dropout_edges(kg, rho, rng):
    """Neighbor edges of a subgraph keeping each triple with probability ``1 - rho``."""
    keep = np.flatnonzero(rng.random(len(kg.triples)) >= rho)
    return kg.edges_for(keep)


def _cosine_rows(a, b):
    na = np.maximum(np.linalg.norm(a, axis=1), ag.EPS)
    nb = np.maximum(np.linalg.norm(b, axis=1), ag.EPS)
    return np.einsum("ij,ij->i", a / na[:, None], b / nb[:, None])


def consistency_scores(kg, view, params, rho, seeds, layers=1):
    """Per-item agreement in ``[0, 1]`` between two dropout subgraphs.

    ``c_i = (cos(g(v_i), g'(v_i)) + 1) / 2``. Items that have KG neighbors
    but lose all of them in either subgraph get the neutral value 0.5.
    """
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"dropout ratio must be in [0, 1), got {rho}")
    J = kg.num_items
    tables, isolated = [], np.zeros(J, dtype=bool)
    with ag.no_grad():
        for s in seeds:
            edges = dropout_edges(kg, rho, np.random.default_rng(s))
            tables.append(kg_item_embeddings(kg, view, params, layers, edges).value)
            has = np.zeros(J, dtype=bool)
            has[edges[0][edges[0] < J]] = True
            isolated |= ~has
    c = np.clip((_cosine_rows(tables[0], tables[1]) + 1.0) / 2.0, 0.0, 1.0)
    c[np.all(tables[0] == tables[1], axis=1)] = 1.0  # identical rows: skip cosine rounding
    center = kg.neighbor_edges[0]
    in_kg = np.zeros(J, dtype=bool)
    in_kg[center[center < J]] = True
    c[isolated & in_kg] = 0.5
    return c


def edge_sampling_probabilities(edges, user_emb, item_emb, c, a, b, scope="global"):
    """Retention probability per observed edge, affinely mapped into ``[a, b]``.

    ``P = sigmoid(v_u . v_i) * c_i`` is min-max normalized over all edges
    (``scope="global"``) or within each user's edges (``scope="user"``).
    A constant ``P`` maps to ``(a + b) / 2``.
    """
    if not 0.0 <= a <= b <= 1.0:
        raise ConfigError(f"need 0 <= a <= b <= 1, got [{a}, {b}]")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return np.empty(0)
    u, i = edges[:, 0], edges[:, 1]
    logits = np.einsum("ij,ij->i", user_emb[u], item_emb[i])
    p = ag._sigmoid(logits) * np.asarray(c)[i]
    if scope == "global":
        groups = [np.arange(len(p))]
    elif scope == "user":
        groups = np.split(np.argsort(u, kind="stable"), np.cumsum(np.bincount(u))[:-1])
    else:
        raise ConfigError(f"unknown min-max scope {scope!r}")
    out = np.empty_like(p)
    for g in groups:
        if len(g) == 0:
            continue
        lo, hi = p[g].min(), p[g].max()
        if hi > lo:
            mm = (p[g] - lo) / (hi - lo)
            out[g] = np.clip((1.0 - mm) * a + mm * b, a, b)  # rounding can leave [a, b]
        else:
            out[g] = (a + b) / 2.0
    return out


@dataclass
class ViewPair:
    edges1: np.ndarray
    edges2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    prob1: np.ndarray
    prob2: np.ndarray
    warnings: int = 0

    def save(self, out_dir, graph):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, e in (("view1_edges.tsv", self.edges1), ("view2_edges.tsv", self.edges2)):
            with (out / name).open("w", encoding="utf-8") as fh:
                for u, i in e:
                    fh.write(f"{graph.user_ids[u]}\t{graph.item_ids[i]}\t{name.split('_')[0]}\n")
        with (out / "consistency.tsv").open("w", encoding="utf-8") as fh:
            for j in range(len(self.c1)):
                fh.write(f"{graph.item_ids[j]}\t{self.c1[j]!r}\t{self.c2[j]!r}\n")


def _bernoulli_edges(edges, prob, rng, protect, label):
    warned = 0
    for attempt in range(2):
        kept = edges[rng.random(len(edges)) < prob]
        lost = np.setdiff1d(protect, kept[:, 0]) if len(protect) else protect
        if len(lost) == 0:
            return kept, warned
    log.info("%s dropped every edge of %d protected user(s) after one resample", label, len(lost))
    return kept, 1


def sample_view_pair(edges, kg, params, rho, a, b, seed, kg_layers=1, protect_users=None,
                     scope="global"):
    """Two consistency-guided edge subsets of the target interaction edges.

    The translational view's consistency ``c`` guides the first subset and
    the semantic view's ``c'`` the second. ``protect_users`` whose every
    edge is dropped trigger one resample and then a warning.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2**63 - 1, size=4)
    protect = np.unique(np.asarray(protect_users if protect_users is not None else [], dtype=np.int64))
    if len(protect):
        protect = np.intersect1d(protect, edges[:, 0])
    user_emb = params["kg.user"].value
    results = []
    for view_name, seeds in (("translational", s[:2]), ("semantic", s[2:])):
        view = kg_view(params, view_name)
        c = consistency_scores(kg, view, params, rho, seeds, kg_layers)
        with ag.no_grad():
            items = kg_item_embeddings(kg, view, params, kg_layers).value
        p = edge_sampling_probabilities(edges, user_emb, items, c, a, b, scope)
        results.append((c, p))
    (c1, p1), (c2, p2) = results
    e1, w1 = _bernoulli_edges(edges, p1, rng, protect, "view 1")
    e2, w2 = _bernoulli_edges(edges, p2, rng, protect, "view 2")
    return ViewPair(e1, e2, c1, c2, p1, p2, w1 + w2)


def view_node_embeddings(edges, user_emb, item_emb, layers, norm="symmetric"):
    """Layer-mean LightGCN embeddings on one view, stacked users-then-items."""
    users, items = propagate_edges(edges, user_emb, item_emb, layers, norm).readout()
    return ag.concat([users, items], axis=0)


def kcl_loss(nodes1, nodes2, batch, tau, allow_degenerate=False):
    """InfoNCE between the same node in two views, in-batch negatives.

    ``batch`` indexes rows of the stacked users-then-items node tables.
    """
    return info_nce(nodes1, nodes2, batch, tau, allow_degenerate)
