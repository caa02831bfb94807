"""Staged joint training.

Stage ``mul`` trains the multi-behavior module on BPR + MulCL, stage ``kg``
trains the knowledge module on BPR + KCL + KG ranking losses, and stage
``main`` mixes the two embedding sets with weight ``alpha`` and keeps
training the multi-behavior path (BPR and MulCL on the mixed embeddings)
with the knowledge embeddings frozen. ``normal_training`` instead optimizes
the sum of every loss jointly from scratch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .data import build_candidates, split_leave_one_out
from .errors import (ConfigError, DimensionError, DivergenceError, NonFiniteError, SamplerError,
                     SplitError)
from .evaluation import evaluate
from .knowledge import (kcl_loss, kg_item_embeddings, kg_ranking_loss, kg_view,
                        sample_negative_tails, sample_view_pair, view_node_embeddings)
from .losses import bpr_loss, total_loss
from .multibehavior import aggregate_cross_behavior, mul_cl_loss, propagate_edges
from .optim import Adam, ModelDims, init_params

log = logging.getLogger(__name__)

VARIANTS = {
    "full": {},
    "w/o-Mcl": {"disable_mcl": True},
    "w/o-Kcl": {"disable_kcl": True},
    "w/o NorT": {"normal_training": True},
}


def combine_embeddings(mul, kg, alpha):
    """``(1 - alpha) * mul + alpha * kg`` for tensors or arrays."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if tuple(mul.shape) != tuple(kg.shape):
        raise DimensionError(f"combine: shapes {mul.shape} vs {kg.shape}")
    if isinstance(mul, ag.Tensor) or isinstance(kg, ag.Tensor):
        if alpha == 0.0:
            return ag.as_tensor(mul)
        if alpha == 1.0:
            return ag.as_tensor(kg)
        return ag.add(ag.scale(mul, 1.0 - alpha), ag.scale(kg, alpha))
    if alpha == 0.0:
        return np.array(mul, dtype=np.float64)
    if alpha == 1.0:
        return np.array(kg, dtype=np.float64)
    return (1.0 - alpha) * np.asarray(mul) + alpha * np.asarray(kg)


@dataclass
class TrainResult:
    params: object
    log: list
    config: object
    user_emb: np.ndarray
    item_emb: np.ndarray
    kg_frozen: tuple | None = None
    stopped_early: dict = field(default_factory=dict)


class Model:
    """Forward passes of both modules over a fixed training graph."""

    def __init__(self, config, graph, kg):
        self.cfg = config
        self.graph = graph
        self.kg = kg
        self.mul_graph = graph.only_target() if config.disable_mcl else graph
        self.uses_kg = not config.disable_kcl
        if self.uses_kg and kg is None:
            raise ConfigError("knowledge module enabled but no KG supplied")
        self.alpha = 0.0 if config.disable_kcl else config.alpha

    # -- multi-behavior module
    def mul_forward(self, params, edges=None):
        cfg = self.cfg
        edges = self.mul_graph.edges if edges is None else edges
        layers = [propagate_edges(e, params["mul.user"], params["mul.item"], cfg.layers, cfg.norm)
                  for e in edges]
        v_u, v_i = aggregate_cross_behavior(layers, params)
        per_behavior = [ag.mean_over_set(l.users) for l in layers]
        return v_u, v_i, per_behavior

    @property
    def mul_target(self):
        return self.mul_graph.target_behavior

    # -- knowledge module
    def kg_items(self, params):
        L = self.cfg.kg_layers
        return (kg_item_embeddings(self.kg, kg_view(params, "translational"), params, L),
                kg_item_embeddings(self.kg, kg_view(params, "semantic"), params, L))

    def kg_forward(self, params, items=None):
        items_td, items_sm = items if items is not None else self.kg_items(params)
        base = ag.scale(ag.add(items_td, items_sm), 0.5)
        layers = propagate_edges(self.graph.target_edges, params["kg.user"], base,
                                 self.cfg.layers, self.cfg.norm)
        return layers.readout()

    def kcl_term(self, params, items, view_pair, nodes):
        items_td, items_sm = items
        L, norm = self.cfg.layers, self.cfg.norm
        z1 = view_node_embeddings(view_pair.edges1, params["kg.user"], items_td, L, norm)
        z2 = view_node_embeddings(view_pair.edges2, params["kg.user"], items_sm, L, norm)
        return kcl_loss(z1, z2, nodes, self.cfg.tau)

    def kg_rank_term(self, params, triples, neg_tails):
        order = self.cfg.score_order
        td = kg_ranking_loss(kg_view(params, "translational"), triples, neg_tails[0], order)
        sm = kg_ranking_loss(kg_view(params, "semantic"), triples, neg_tails[1], order)
        return ag.add(td, sm)

    # -- inference
    def embeddings(self, params, kg_frozen=None, stage="main"):
        with ag.no_grad():
            if stage == "kg":
                u, i = self.kg_forward(params)
                return u.value, i.value
            v_u, v_i, _ = self.mul_forward(params)
            if stage == "mul" or self.alpha == 0.0:
                return v_u.value, v_i.value
            if kg_frozen is None:
                ku, ki = self.kg_forward(params)
                kg_frozen = (ku.value, ki.value)
            return (combine_embeddings(v_u.value, kg_frozen[0], self.alpha),
                    combine_embeddings(v_i.value, kg_frozen[1], self.alpha))


class _NegativeSampler:
    """Uniform items the user has not interacted with under the target behavior."""

    def __init__(self, edges, num_items, rng):
        self.J = num_items
        self.keys = np.unique(edges[:, 0] * num_items + edges[:, 1])
        self.rng = rng

    def __call__(self, users):
        users = np.asarray(users, dtype=np.int64)
        neg = self.rng.integers(self.J, size=len(users))
        for _ in range(1000):
            bad = np.isin(users * self.J + neg, self.keys)
            if not bad.any():
                return neg
            neg[bad] = self.rng.integers(self.J, size=int(bad.sum()))
        raise SamplerError("could not sample negatives: some user interacted with every item")


class Trainer:
    def __init__(self, config, split, kg=None):
        self.cfg = cfg = config
        self.split = split
        seeds = np.random.SeedSequence(cfg.seed).spawn(6)
        self.rng_batch = np.random.default_rng(seeds[0])
        self.rng_neg = np.random.default_rng(seeds[1])
        self.rng_kg = np.random.default_rng(seeds[2])
        self.rng_drop = np.random.default_rng(seeds[3])
        self.view_seed = int(seeds[4].generate_state(1)[0])
        train = split.train
        self.val = None
        if cfg.val_fraction > 0:
            try:
                self.val = split_leave_one_out(train, int(seeds[5].generate_state(1)[0]), cfg.val_fraction)
            except SplitError as exc:  # no eligible users: train without validation
                log.info("no validation slice: %s", exc)
        if self.val is not None:
            self.val_cand = build_candidates(self.val, full_graph=train, n_negatives=cfg.n_negatives,
                                             seed=cfg.seed)
            train = self.val.train
        self.graph = train
        self.kg = kg
        self.model = Model(cfg, train, kg)
        dims = ModelDims(train.num_users, train.num_items,
                         kg.num_entities if kg is not None else train.num_items,
                         kg.num_relations if kg is not None else 1, cfg.dim, cfg.layers)
        self.params = init_params(dims, cfg.seed, kg_std=cfg.kg_std)
        self.opt = Adam()
        self.neg = _NegativeSampler(train.target_edges, train.num_items, self.rng_neg)
        self.log = []
        self.kg_frozen = None
        self.stopped = {}
        self.protect = split.test_users

    # ---------------------------------------------------------------- pieces
    def _batches(self):
        edges = self.graph.target_edges
        order = self.rng_batch.permutation(len(edges))
        B = self.cfg.batch_size
        for s in range(0, len(order), B):
            pos = edges[order[s:s + B]]
            yield np.column_stack([pos, self.neg(pos[:, 0])])

    def _dropped_edges(self):
        p = self.cfg.behavior_dropout
        g = self.model.mul_graph
        out = []
        for k, e in enumerate(g.edges):
            if k == g.target_behavior or p == 0 or len(e) == 0:
                out.append(e)
            else:
                out.append(e[self.rng_drop.random(len(e)) >= p])
        return out

    def _view_pair(self, epoch, stage):
        cfg = self.cfg
        seed = (self.view_seed + 7919 * epoch + (0 if stage == "kg" else 104729)) % (2**63)
        return sample_view_pair(self.graph.target_edges, self.kg, self.params, cfg.rho, cfg.a, cfg.b,
                                seed, cfg.kg_layers, self.protect, cfg.minmax_scope)

    def _kg_triples(self):
        t = self.kg.triples
        n = min(self.cfg.kg_batch_size, len(t))
        rows = t[np.sort(self.rng_kg.choice(len(t), size=n, replace=False))]
        negs = (sample_negative_tails(self.kg, rows, self.rng_kg),
                sample_negative_tails(self.kg, rows, self.rng_kg))
        return rows, negs

    @staticmethod
    def _cl_nodes(batch, num_users):
        users = np.unique(batch[:, 0])
        items = np.unique(batch[:, 1:])
        return users, np.concatenate([users, num_users + items])

    def _step(self, loss, groups):
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value}")
        ag.backward(loss)
        for module, lr in groups:
            self.opt.step(self.params.tensors(module), lr)
        self.params.zero_grad()
        return value

    def _validate(self, stage):
        if self.val is None:
            return None
        u, i = self.model.embeddings(self.params, self.kg_frozen, stage)
        return evaluate(u, i, self.val.test, self.val_cand, self.cfg.eval_k).hr

    # ---------------------------------------------------------------- stages
    def _epoch_mul(self, epoch):
        cfg, p, m = self.cfg, self.params, self.model
        use_cl = not cfg.disable_mcl and m.mul_graph.num_behaviors > 1 and cfg.lambda_cl > 0
        sums = {"loss": 0.0, "bpr": 0.0, "reg": 0.0}
        if use_cl:
            sums["mul_cl"] = 0.0
        edges = self._dropped_edges()
        for batch in self._batches():
            v_u, v_i, per_beh = m.mul_forward(p, edges)
            bpr = bpr_loss(v_u, v_i, batch)
            users, _ = self._cl_nodes(batch, self.graph.num_users)
            cl = None
            if use_cl and len(users) >= 2:
                cl = mul_cl_loss(per_beh, m.mul_target, users, cfg.tau, cfg.include_target_pair)
                sums["mul_cl"] += cl.item()
            reg_t = p.tensors("mul")
            loss = total_loss(bpr, cl, reg_t, cfg.lambda_cl, cfg.lambda_reg)
            sums["bpr"] += bpr.item()
            sums["reg"] += cfg.lambda_reg * sum(float(np.sum(t.value ** 2)) for t in reg_t)
            sums["loss"] += self._step(loss, [("mul", cfg.lr_mul)])
        return sums

    def _epoch_kg(self, epoch):
        cfg, p, m = self.cfg, self.params, self.model
        vp = self._view_pair(epoch, "kg")
        sums = {"loss": 0.0, "bpr": 0.0, "kcl": 0.0, "kg_rank": 0.0, "reg": 0.0}
        for batch in self._batches():
            items = m.kg_items(p)
            ku, ki = m.kg_forward(p, items)
            bpr = bpr_loss(ku, ki, batch)
            _, nodes = self._cl_nodes(batch, self.graph.num_users)
            cl = m.kcl_term(p, items, vp, nodes) if cfg.lambda_cl > 0 else None
            reg_t = p.tensors("kg")
            loss = total_loss(bpr, cl, reg_t, cfg.lambda_cl, cfg.lambda_reg)
            if cfg.kg_loss_weight > 0:
                rank = m.kg_rank_term(p, *self._kg_triples())
                loss = ag.add(loss, ag.scale(rank, cfg.kg_loss_weight))
                sums["kg_rank"] += rank.item()
            sums["bpr"] += bpr.item()
            sums["kcl"] += cl.item() if cl is not None else 0.0
            sums["reg"] += cfg.lambda_reg * sum(float(np.sum(t.value ** 2)) for t in reg_t)
            sums["loss"] += self._step(loss, [("kg", cfg.lr_kg)])
        sums["view_edges"] = [int(len(vp.edges1)), int(len(vp.edges2))]
        return sums

    def _epoch_main(self, epoch):
        cfg, p, m = self.cfg, self.params, self.model
        alpha = m.alpha
        use_cl = not cfg.disable_mcl and m.mul_graph.num_behaviors > 1 and cfg.lambda_cl > 0
        sums = {"loss": 0.0, "bpr": 0.0, "reg": 0.0}
        if use_cl:
            sums["mul_cl"] = 0.0
        ku = ki = None
        if alpha > 0:
            ku, ki = (ag.Tensor(x) for x in self.kg_frozen)
        edges = self._dropped_edges()
        for batch in self._batches():
            v_u, v_i, per_beh = m.mul_forward(p, edges)
            if alpha > 0:
                v_u = combine_embeddings(v_u, ku, alpha)
                v_i = combine_embeddings(v_i, ki, alpha)
                per_beh = [combine_embeddings(t, ku, alpha) for t in per_beh]
            bpr = bpr_loss(v_u, v_i, batch)
            users, _ = self._cl_nodes(batch, self.graph.num_users)
            cl = None
            if use_cl and len(users) >= 2:
                cl = mul_cl_loss(per_beh, m.mul_target, users, cfg.tau, cfg.include_target_pair)
                sums["mul_cl"] += cl.item()
            reg_t = p.tensors("mul")
            loss = total_loss(bpr, cl, reg_t, cfg.lambda_cl, cfg.lambda_reg)
            sums["bpr"] += bpr.item()
            sums["reg"] += cfg.lambda_reg * sum(float(np.sum(t.value ** 2)) for t in reg_t)
            sums["loss"] += self._step(loss, [("mul", cfg.lr_mul)])
        return sums

    def _epoch_joint(self, epoch):
        cfg, p, m = self.cfg, self.params, self.model
        alpha = m.alpha
        use_mcl = not cfg.disable_mcl and m.mul_graph.num_behaviors > 1 and cfg.lambda_cl > 0
        use_kg = m.uses_kg
        vp = self._view_pair(epoch, "joint") if use_kg else None
        keys = ["loss", "bpr", "reg"] + (["mul_cl"] if use_mcl else []) + (["kcl", "kg_rank"] if use_kg else [])
        sums = dict.fromkeys(keys, 0.0)
        modules = ["mul"] + (["kg"] if use_kg else [])
        edges = self._dropped_edges()
        for batch in self._batches():
            v_u, v_i, per_beh = m.mul_forward(p, edges)
            users, nodes = self._cl_nodes(batch, self.graph.num_users)
            cls = []
            if use_kg:
                items = m.kg_items(p)
                ku, ki = m.kg_forward(p, items)
                v_u = combine_embeddings(v_u, ku, alpha)
                v_i = combine_embeddings(v_i, ki, alpha)
                if cfg.lambda_cl > 0:
                    kcl = m.kcl_term(p, items, vp, nodes)
                    sums["kcl"] += kcl.item()
                    cls.append(kcl)
            if use_mcl and len(users) >= 2:
                mcl = mul_cl_loss(per_beh, m.mul_target, users, cfg.tau, cfg.include_target_pair)
                sums["mul_cl"] += mcl.item()
                cls.append(mcl)
            cl = cls[0] if len(cls) == 1 else (ag.add(cls[0], cls[1]) if cls else None)
            bpr = bpr_loss(v_u, v_i, batch)
            reg_t = [t for mod in modules for t in p.tensors(mod)]
            loss = total_loss(bpr, cl, reg_t, cfg.lambda_cl, cfg.lambda_reg)
            if use_kg and cfg.kg_loss_weight > 0:
                rank = m.kg_rank_term(p, *self._kg_triples())
                loss = ag.add(loss, ag.scale(rank, cfg.kg_loss_weight))
                sums["kg_rank"] += rank.item()
            sums["bpr"] += bpr.item()
            sums["reg"] += cfg.lambda_reg * sum(float(np.sum(t.value ** 2)) for t in reg_t)
            groups = [("mul", cfg.lr_mul)] + ([("kg", cfg.lr_kg)] if use_kg else [])
            sums["loss"] += self._step(loss, groups)
        return sums

    def _run_stage(self, stage, epochs, epoch_fn, eval_stage):
        patience = self.cfg.patience
        best, since = -1.0, 0
        for epoch in range(epochs):
            rec = {"stage": stage, "epoch": epoch}
            rec.update(epoch_fn(epoch))
            hr = self._validate(eval_stage)
            if hr is not None:
                rec[f"val_hr{self.cfg.eval_k}"] = hr
            self.log.append(rec)
            log.debug("%s", rec)
            if hr is None or patience == 0:
                continue
            if hr > best:
                best, since = hr, 0
            else:
                since += 1
                if since >= patience:
                    self.stopped[stage] = epoch
                    log.info("stage %s stopped early at epoch %d", stage, epoch)
                    break

    # ------------------------------------------------------------------ run
    def run(self):
        cfg, m = self.cfg, self.model
        good = self.params.state()
        try:
            if cfg.normal_training:
                self._run_stage("joint", cfg.total_epochs, self._epoch_joint, "main_live")
            else:
                self._run_stage("mul", cfg.epochs_mul, self._epoch_mul, "mul")
                good = self.params.state()
                if m.uses_kg:
                    self._run_stage("kg", cfg.epochs_kg, self._epoch_kg, "kg")
                    good = self.params.state()
                    u, i = m.embeddings(self.params, stage="kg")
                    self.kg_frozen = (u, i)
                self._run_stage("main", cfg.epochs_main, self._epoch_main, "main")
        except (DivergenceError, NonFiniteError) as exc:
            self.params.load_state(good)
            exc.result = self._result()
            raise
        return self._result()

    def _result(self):
        u, i = self.model.embeddings(self.params, self.kg_frozen, "main")
        return TrainResult(self.params, self.log, self.cfg, u, i, self.kg_frozen, dict(self.stopped))


def train(config, split, kg=None):
    """Run the configured training paradigm; returns a :class:`TrainResult`."""
    return Trainer(config, split, kg).run()
