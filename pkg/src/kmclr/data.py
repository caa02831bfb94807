"""Interaction graphs, knowledge graphs, splits and sparsity buckets.

File formats are UTF-8, tab separated, three columns:

* interactions: ``user_id <TAB> item_id <TAB> behavior``
* knowledge graph: ``head <TAB> relation <TAB> tail``

Lines starting with ``#`` and blank lines are skipped. Ids are arbitrary
strings and are densely reindexed in order of first appearance.

In the KG file, a token of the form ``item:<item_id>`` refers to an item of
the interaction graph; every other token is a free entity. Items occupy
entity indices ``[0, num_items)`` so item and entity tables share a prefix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (ConfigError, EmptyInputError, LinkError, ParseError,
                     SchemaError, SplitError)

log = logging.getLogger(__name__)

ITEM_PREFIX = "item:"


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _csr(rows, cols, n_rows):
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return _readonly(indptr), _readonly(cols[order].astype(np.int64)), order


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    num_users: int
    num_items: int
    behaviors: tuple
    target_behavior: int
    edges: tuple  # edges[k]: (n_k, 2) int64 array of (user, item), sorted, unique
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        if not 0 <= self.target_behavior < len(self.behaviors):
            raise SchemaError(f"target behavior {self.target_behavior} outside [0, {len(self.behaviors)})")
        if len(self.edges) != len(self.behaviors):
            raise SchemaError(f"{len(self.edges)} edge sets for {len(self.behaviors)} behaviors")
        clean = []
        for k, e in enumerate(self.edges):
            e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            if len(e):
                if e[:, 0].min() < 0 or e[:, 0].max() >= self.num_users:
                    raise SchemaError(f"behavior {k}: user index out of range")
                if e[:, 1].min() < 0 or e[:, 1].max() >= self.num_items:
                    raise SchemaError(f"behavior {k}: item index out of range")
                e = np.unique(e, axis=0)
            clean.append(_readonly(e))
        object.__setattr__(self, "edges", tuple(clean))
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(i) for i in range(self.num_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.num_items)))

    @property
    def num_behaviors(self):
        return len(self.behaviors)

    @property
    def target_edges(self):
        return self.edges[self.target_behavior]

    @property
    def num_edges(self):
        return sum(len(e) for e in self.edges)

    @cached_property
    def _adjacency(self):
        adj = []
        for e in self.edges:
            u_ptr, u_nbr, _ = _csr(e[:, 0], e[:, 1], self.num_users)
            i_ptr, i_nbr, _ = _csr(e[:, 1], e[:, 0], self.num_items)
            adj.append(((u_ptr, u_nbr), (i_ptr, i_nbr)))
        return tuple(adj)

    def user_neighbors(self, k, u):
        ptr, nbr = self._adjacency[k][0]
        return nbr[ptr[u]:ptr[u + 1]]

    def item_neighbors(self, k, i):
        ptr, nbr = self._adjacency[k][1]
        return nbr[ptr[i]:ptr[i + 1]]

    def degrees(self, k):
        e = self.edges[k]
        return (np.bincount(e[:, 0], minlength=self.num_users),
                np.bincount(e[:, 1], minlength=self.num_items))

    def user_interaction_counts(self):
        counts = np.zeros(self.num_users, dtype=np.int64)
        for e in self.edges:
            counts += np.bincount(e[:, 0], minlength=self.num_users)
        return counts

    def interacted_items(self, u):
        """All items ``u`` touched under any behavior."""
        parts = [self.user_neighbors(k, u) for k in range(self.num_behaviors)]
        return np.unique(np.concatenate(parts)) if parts else np.empty(0, np.int64)

    def with_edges(self, edges):
        return InteractionGraph(self.num_users, self.num_items, self.behaviors,
                                self.target_behavior, tuple(edges), self.user_ids, self.item_ids)

    def only_target(self):
        """Single-behavior graph holding just the target edges."""
        return InteractionGraph(self.num_users, self.num_items,
                                (self.behaviors[self.target_behavior],), 0,
                                (self.target_edges,), self.user_ids, self.item_ids)

    def edge_set(self):
        """Canonical edge set in original ids."""
        return {(self.user_ids[u], self.item_ids[i], self.behaviors[k])
                for k, e in enumerate(self.edges) for u, i in e}


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    num_entities: int
    num_relations: int
    triples: np.ndarray  # (n, 3) of (head, relation, tail), unique
    num_items: int
    entity_ids: tuple = ()
    relation_ids: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if self.num_entities < self.num_items:
            raise LinkError(f"{self.num_entities} entities cannot hold {self.num_items} items")
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= self.num_entities:
                raise LinkError("triple entity index out of range")
            if t[:, 1].min() < 0 or t[:, 1].max() >= self.num_relations:
                raise LinkError("triple relation index out of range")
            t = np.unique(t, axis=0)
        object.__setattr__(self, "triples", _readonly(t))
        if not self.entity_ids:
            object.__setattr__(self, "entity_ids", tuple(
                f"{ITEM_PREFIX}{i}" if i < self.num_items else f"e{i}" for i in range(self.num_entities)))
        if not self.relation_ids:
            object.__setattr__(self, "relation_ids", tuple(f"r{i}" for i in range(self.num_relations)))

    @cached_property
    def triple_index(self):
        t = self.triples
        return frozenset(((t[:, 0] * self.num_relations + t[:, 1]) * self.num_entities + t[:, 2]).tolist())

    def contains(self, h, r, t):
        return ((int(h) * self.num_relations + int(r)) * self.num_entities + int(t)) in self.triple_index

    @cached_property
    def neighbor_edges(self):
        """Undirected relational edges as ``(center, relation, neighbor)`` arrays.

        Each triple contributes ``h <- t`` and ``t <- h``; a self-loop
        contributes once. Sorted by center so per-entity slices are contiguous.
        """
        return self.edges_for(np.arange(len(self.triples)))

    def edges_for(self, triple_rows):
        t = self.triples[triple_rows]
        loops = t[:, 0] == t[:, 2]
        center = np.concatenate([t[:, 0], t[~loops, 2]])
        rel = np.concatenate([t[:, 1], t[~loops, 1]])
        nbr = np.concatenate([t[:, 2], t[~loops, 0]])
        order = np.lexsort((nbr, rel, center))
        return center[order], rel[order], nbr[order]

    def neighbors(self, entity):
        center, rel, nbr = self.neighbor_edges
        lo, hi = np.searchsorted(center, [entity, entity + 1])
        return list(zip(rel[lo:hi].tolist(), nbr[lo:hi].tolist()))

    @property
    def num_self_loops(self):
        return int(np.sum(self.triples[:, 0] == self.triples[:, 2])) if len(self.triples) else 0


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: InteractionGraph
    test: np.ndarray  # (n_test, 2) of (user, held-out item)
    seed: int = 0

    @property
    def test_users(self):
        return self.test[:, 0]


@dataclass
class LoadReport:
    """Counts gathered while loading a file."""
    path: str
    kind: str
    stats: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"kind={self.kind}", f"path={self.path}"]
        lines += [f"{k}={v}" for k, v in self.stats.items()]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ parsing

def _rows(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3 or any(not c.strip() for c in cols):
                raise ParseError(f"expected 3 non-empty tab-separated columns, got {len(cols)}",
                                 line=lineno, path=str(path))
            yield lineno, [c.strip() for c in cols]


class _Vocab(dict):
    def index(self, key):
        idx = self.get(key)
        if idx is None:
            idx = self[key] = len(self)
        return idx

    def keys_in_order(self):
        return tuple(sorted(self, key=self.__getitem__))


def load_interactions(path, behaviors, target, report=None):
    """Read an interaction log into an :class:`InteractionGraph`.

    ``behaviors`` lists the declared behavior names in index order and
    ``target`` names (or indexes) the target behavior.
    """
    behaviors = tuple(behaviors)
    if not behaviors:
        raise SchemaError("no behaviors declared")
    if len(set(behaviors)) != len(behaviors):
        raise SchemaError(f"duplicate behavior names in {behaviors}")
    if isinstance(target, str):
        if target not in behaviors:
            raise SchemaError(f"target behavior {target!r} not in {behaviors}")
        target = behaviors.index(target)
    beh_index = {b: k for k, b in enumerate(behaviors)}
    users, items = _Vocab(), _Vocab()
    edges = [[] for _ in behaviors]
    n_rows = 0
    for lineno, (u, i, b) in _rows(path):
        k = beh_index.get(b)
        if k is None:
            raise SchemaError(f"{path}:{lineno}: unknown behavior {b!r} (declared: {', '.join(behaviors)})")
        edges[k].append((users.index(u), items.index(i)))
        n_rows += 1
    if n_rows == 0:
        raise EmptyInputError(f"{path}: no interaction rows")
    graph = InteractionGraph(len(users), len(items), behaviors, int(target),
                             tuple(np.array(e, dtype=np.int64).reshape(-1, 2) for e in edges),
                             users.keys_in_order(), items.keys_in_order())
    stats = {"rows": n_rows, "users": graph.num_users, "items": graph.num_items,
             "behaviors": graph.num_behaviors, "edges": graph.num_edges,
             "duplicates_collapsed": n_rows - graph.num_edges}
    for k, name in enumerate(behaviors):
        stats[f"edges.{name}"] = len(graph.edges[k])
    if report is not None:
        report.stats.update(stats)
    log.info("loaded %s: %s", path, stats)
    return graph


def save_interactions(graph, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, e in enumerate(graph.edges):
            for u, i in e:
                fh.write(f"{graph.user_ids[u]}\t{graph.item_ids[i]}\t{graph.behaviors[k]}\n")


def load_kg(path, graph, report=None, item_prefix=ITEM_PREFIX):
    """Read KG triples; ``item:<id>`` tokens link to ``graph``'s items."""
    item_index = {iid: j for j, iid in enumerate(graph.item_ids)}
    J = graph.num_items
    entities = _Vocab()
    for j, iid in enumerate(graph.item_ids):
        entities[f"{item_prefix}{iid}"] = j
    relations = _Vocab()
    rows = []
    for lineno, (h, r, t) in _rows(path):
        ids = []
        for tok in (h, t):
            if tok.startswith(item_prefix):
                if tok[len(item_prefix):] not in item_index:
                    raise LinkError(f"{path}:{lineno}: {tok!r} names an item absent from the interaction graph")
            ids.append(entities.index(tok))
        rows.append((ids[0], relations.index(r), ids[1]))
    if not rows:
        raise EmptyInputError(f"{path}: no triples")
    kg = KnowledgeGraph(len(entities), len(relations), np.array(rows, dtype=np.int64), J,
                        entities.keys_in_order(), relations.keys_in_order())
    stats = {"rows": len(rows), "entities": kg.num_entities, "relations": kg.num_relations,
             "triples": len(kg.triples), "duplicates_collapsed": len(rows) - len(kg.triples),
             "self_loops": kg.num_self_loops,
             "items_in_kg": int(len(np.intersect1d(kg.triples[:, [0, 2]].ravel(), np.arange(J))))}
    if report is not None:
        report.stats.update(stats)
    if stats["self_loops"]:
        log.warning("%s: %d self-loop triples kept", path, stats["self_loops"])
    return kg


def save_kg(kg, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entity_ids[h]}\t{kg.relation_ids[r]}\t{kg.entity_ids[t]}\n")


# ----------------------------------------------------------------- splitting

def split_leave_one_out(graph, seed, fraction=1.0):
    """Hold out one target interaction per eligible user.

    A user is eligible with at least two target interactions. With
    ``fraction < 1`` only that share of eligible users (at least one) is
    held out; used for the validation slice.
    """
    rng = np.random.default_rng(seed)
    tgt = graph.target_edges
    counts = np.bincount(tgt[:, 0], minlength=graph.num_users) if len(tgt) else np.zeros(graph.num_users, int)
    eligible = np.flatnonzero(counts >= 2)
    if len(eligible) == 0:
        raise SplitError("no user has two or more target interactions")
    if fraction < 1.0:
        n = max(1, int(round(fraction * len(eligible))))
        eligible = np.sort(rng.choice(eligible, size=n, replace=False))
    ptr = np.zeros(graph.num_users + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    keep = np.ones(len(tgt), dtype=bool)
    test = []
    for u in eligible:
        row = ptr[u] + rng.integers(counts[u])
        keep[row] = False
        test.append(tgt[row])
    edges = list(graph.edges)
    edges[graph.target_behavior] = tgt[keep]
    return DatasetSplit(graph.with_edges(edges), np.array(test, dtype=np.int64).reshape(-1, 2), seed)


def build_candidates(split, full_graph=None, n_negatives=99, seed=0, full_catalog=False):
    """Per-test-user candidate lists; column 0 is the held-out positive.

    Negatives exclude every item the user touched under any behavior
    (including the held-out one) and are drawn with an rng keyed on
    ``(seed, user)`` so every model variant sees the same lists. When fewer
    than ``n_negatives`` items qualify, all of them are used; rows are
    padded with ``-1``.
    """
    graph = full_graph if full_graph is not None else split.train
    J = graph.num_items
    rows = []
    for u, pos in split.test:
        seen = np.union1d(graph.interacted_items(u), [pos])
        pool = np.setdiff1d(np.arange(J), seen, assume_unique=True)
        if not full_catalog and len(pool) > n_negatives:
            rng = np.random.default_rng([int(seed), int(u)])
            pool = np.sort(rng.choice(pool, size=n_negatives, replace=False))
        rows.append(np.concatenate([[pos], pool]))
    width = max((len(r) for r in rows), default=1)
    out = np.full((len(rows), width), -1, dtype=np.int64)
    for n, r in enumerate(rows):
        out[n, :len(r)] = r
    return out


@dataclass(frozen=True)
class Buckets:
    labels: tuple
    assignment: np.ndarray  # bucket id per test row
    counts: np.ndarray  # train interactions per test row

    def members(self, b):
        return np.flatnonzero(self.assignment == b)


def sparsity_buckets(split, boundaries):
    """Assign test users to ``[b_k, b_{k+1})`` buckets of train interaction count."""
    boundaries = [int(b) for b in boundaries]
    if not boundaries:
        raise ConfigError("bucket boundaries must be non-empty")
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise ConfigError(f"bucket boundaries must be strictly increasing: {boundaries}")
    edges = [0] + boundaries if boundaries[0] > 0 else boundaries
    labels = [f"[{lo},{hi})" for lo, hi in zip(edges, edges[1:])] + [f"[{edges[-1]},inf)"]
    counts = split.train.user_interaction_counts()[split.test_users]
    assignment = np.searchsorted(np.asarray(edges[1:]), counts, side="right")
    return Buckets(tuple(labels), assignment.astype(np.int64), counts)
