"""Planted-preference multi-behavior dataset with an item knowledge graph.

Users and items are split into clusters. Each user draws target
interactions from its own cluster (a ``noise_rate`` share comes from other
clusters). Every auxiliary behavior is a noisy superset of the user's
cluster preference: it keeps the user's target items with probability
``behavior_correlation`` and adds further own-cluster items.

A ``cold_fraction`` of each cluster's items is cold: absent from every
auxiliary behavior and bought by exactly one user, so once that edge is held
out only the KG places the item. The KG links every item to a per-cluster
attribute entity and to intra-cluster neighbors, with
``1 - kg_informativeness`` of the triples rewired at random.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ITEM_PREFIX


@dataclass
class SyntheticSpec:
    num_users: int = 50
    num_items: int = 30
    num_behaviors: int = 3
    num_clusters: int = 5
    target_per_user: int = 3
    aux_per_user: int = 3
    behavior_correlation: float = 0.8
    kg_informativeness: float = 0.9
    noise_rate: float = 0.05
    cold_fraction: float = 0.34
    kg_links_per_item: int = 2
    seed: int = 0

    @property
    def behaviors(self):
        aux = ["view", "cart", "favorite", "share", "tip", "like"]
        if self.num_behaviors - 1 > len(aux):
            aux += [f"aux{k}" for k in range(len(aux), self.num_behaviors - 1)]
        return aux[:self.num_behaviors - 1] + ["buy"]

    @property
    def target(self):
        return "buy"


def generate(spec):
    """Return ``(interactions, triples, user_cluster, item_cluster)``.

    ``interactions`` rows are ``(user_id, item_id, behavior)`` strings and
    ``triples`` rows ``(head, relation, tail)`` with item tokens prefixed.
    """
    rng = np.random.default_rng(spec.seed)
    C = spec.num_clusters
    user_cluster = np.arange(spec.num_users) % C
    item_cluster = rng.permutation(np.arange(spec.num_items) % C)
    members = [np.flatnonzero(item_cluster == c) for c in range(C)]
    cold = np.zeros(spec.num_items, dtype=bool)
    for m in members:
        n_cold = int(round(spec.cold_fraction * len(m)))
        cold[rng.choice(m, size=n_cold, replace=False)] = True

    behaviors = spec.behaviors
    target = behaviors[-1]
    owner = {}  # cold item -> its single target user
    for c in range(C):
        users = np.flatnonzero(user_cluster == c)
        for n, j in enumerate(members[c][cold[members[c]]]):
            if len(users):
                owner[int(j)] = int(users[n % len(users)])
    rows = []
    for u in range(spec.num_users):
        own = members[user_cluster[u]]
        warm = own[~cold[own]]
        others = np.setdiff1d(np.arange(spec.num_items), own)
        picks = rng.choice(warm, size=min(spec.target_per_user, len(warm)), replace=False)
        tgt = set()
        for i in picks:
            if rng.random() < spec.noise_rate and len(others):
                i = rng.choice(others)
            tgt.add(int(i))
        mine = sorted(j for j, o in owner.items() if o == u)
        for i in sorted(tgt | set(mine)):
            rows.append((f"u{u}", f"i{i}", target))
        for b in behaviors[:-1]:
            aux = {i for i in tgt if not cold[i] and rng.random() < spec.behavior_correlation}
            extra = rng.choice(warm, size=min(spec.aux_per_user, len(warm)), replace=False)
            for i in extra:
                if rng.random() < spec.noise_rate and len(others):
                    i = rng.choice(others[~cold[others]]) if (~cold[others]).any() else rng.choice(others)
                aux.add(int(i))
            for i in sorted(aux):
                rows.append((f"u{u}", f"i{i}", b))

    triples = []
    for j in range(spec.num_items):
        c = item_cluster[j]
        attr_c = c if rng.random() < spec.kg_informativeness else int(rng.integers(C))
        triples.append((f"{ITEM_PREFIX}i{j}", "has_attribute", f"attr{attr_c}"))
        mates = np.setdiff1d(members[c], [j])
        for _ in range(spec.kg_links_per_item):
            if rng.random() < spec.kg_informativeness and len(mates):
                k = int(rng.choice(mates))
            else:
                k = int(rng.integers(spec.num_items))
            if k != j:
                triples.append((f"{ITEM_PREFIX}i{j}", "related_to", f"{ITEM_PREFIX}i{k}"))
    return rows, triples, user_cluster, item_cluster


def write(spec, out_dir):
    """Write ``interactions.tsv``, ``kg.tsv`` and a ready ``data.conf``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, triples, uc, ic = generate(spec)
    with (out / "interactions.tsv").open("w", encoding="utf-8") as fh:
        fh.write(f"# planted dataset seed={spec.seed} users={spec.num_users} items={spec.num_items}\n")
        for r in rows:
            fh.write("\t".join(r) + "\n")
    with (out / "kg.tsv").open("w", encoding="utf-8") as fh:
        for t in triples:
            fh.write("\t".join(t) + "\n")
    with (out / "clusters.tsv").open("w", encoding="utf-8") as fh:
        for u, c in enumerate(uc):
            fh.write(f"user\tu{u}\t{c}\n")
        for j, c in enumerate(ic):
            fh.write(f"item\ti{j}\t{c}\n")
    (out / "data.conf").write_text(
        "interactions = interactions.tsv\n"
        "kg = kg.tsv\n"
        f"behaviors = {','.join(spec.behaviors)}\n"
        f"target_behavior = {spec.target}\n"
        "# a few hundred target edges: small batches give enough steps per epoch\n"
        "batch_size = 16\n", encoding="utf-8")
    return out
