"""Ablation tables and hyperparameter sweeps built from full train + evaluate runs."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ALPHA_GRID, DIM_GRID, LAYER_GRID, TrainConfig
from .data import build_candidates, load_interactions, load_kg, sparsity_buckets, split_leave_one_out
from .errors import ConfigError, KmclrError
from .evaluation import evaluate
from .trainer import VARIANTS, train

log = logging.getLogger(__name__)

# ablation table row order, full model last
ABLATION_ORDER = ("w/o-Mcl", "w/o-Kcl", "w/o NorT", "full")
NOISE_DROPOUT = (0.0, 0.1, 0.2, 0.3)
NOISE_A = (0.2, 0.4, 0.6, 0.8)
GRIDS = {
    "dim": (("dim", DIM_GRID),),
    "layers": (("layers", LAYER_GRID),),
    "alpha": (("alpha", ALPHA_GRID),),
    "noise": (("behavior_dropout", NOISE_DROPOUT), ("a", NOISE_A)),
}
_ALIASES = {"d": "dim", "L": "layers", "dropout": "behavior_dropout"}
_FIELDS = {f for f in TrainConfig.__dataclass_fields__}


def _finite(rec):
    """JSON has no NaN: failed metrics become null."""
    return {k: None if isinstance(v, float) and v != v else v for k, v in rec.items()}


@dataclass
class Experiment:
    """Loaded data plus the split and candidate lists shared by every run."""
    config: object
    graph: object
    kg: object
    split: object
    candidates: np.ndarray
    buckets: object = None

    @classmethod
    def from_config(cls, cfg):
        if not cfg.interactions:
            raise ConfigError("config names no interactions file")
        g = load_interactions(cfg.interactions, cfg.behavior_list, cfg.target_behavior)
        kg = load_kg(cfg.kg, g) if cfg.kg else None
        split = split_leave_one_out(g, cfg.seed)
        cand = build_candidates(split, full_graph=g, n_negatives=cfg.n_negatives, seed=cfg.seed,
                                full_catalog=cfg.full_catalog)
        return cls(cfg, g, kg, split, cand, sparsity_buckets(split, cfg.boundaries))

    def run(self, cfg=None, meta=None):
        """Train under ``cfg`` (default: the experiment's config) and evaluate."""
        cfg = cfg or self.config
        res = train(cfg, self.split, None if cfg.disable_kcl else self.kg)
        rep = evaluate(res.user_emb, res.item_emb, self.split.test, self.candidates, cfg.eval_k,
                       self.buckets, {"config": cfg.digest(), "seed": cfg.seed, **(meta or {})})
        return res, rep


# ------------------------------------------------------------------ ablation

@dataclass
class AblationTable:
    k: int
    rows: list = field(default_factory=list)  # dicts: variant, hr, ndcg, status, error

    def get(self, variant):
        for r in self.rows:
            if r["variant"] == variant:
                return r
        raise KeyError(variant)

    def margins(self):
        """``HR(full) - HR(variant)`` for every finished variant."""
        full = self.get("full")
        return {r["variant"]: full["hr"] - r["hr"] for r in self.rows
                if r["variant"] != "full" and r["status"] == "ok" and full["status"] == "ok"}

    def to_table(self):
        k = self.k
        lines = [f"{'model':<12}{'HR@' + str(k):>10}{'NDCG@' + str(k):>10}"]
        for r in self.rows:
            if r["status"] == "ok":
                lines.append(f"{r['variant']:<12}{r['hr']:>10.4f}{r['ndcg']:>10.4f}")
            else:
                lines.append(f"{r['variant']:<12}{'failed':>10}{'failed':>10}")
        return "\n".join(lines) + "\n"

    def to_tsv(self):
        out = [f"model\tHR@{self.k}\tNDCG@{self.k}"]
        for r in self.rows:
            out.append(f"{r['variant']}\t{r['hr']!r}\t{r['ndcg']!r}" if r["status"] == "ok"
                       else f"{r['variant']}\tfailed\tfailed")
        return "\n".join(out) + "\n"

    def to_ndjson(self):
        return "".join(json.dumps(_finite({"record": "ablation", "k": self.k, **r}), sort_keys=True) + "\n"
                       for r in self.rows)


def ablate(exp, variants=ABLATION_ORDER, on_run=None):
    """Train and evaluate every variant on the same split and candidates."""
    table = AblationTable(exp.config.eval_k)
    for name in variants:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
        cfg = exp.config.replace(**VARIANTS[name])
        try:
            res, rep = exp.run(cfg, {"variant": name})
        except KmclrError as exc:
            log.warning("variant %s failed: %s: %s", name, exc.kind, exc)
            table.rows.append({"variant": name, "hr": float("nan"), "ndcg": float("nan"),
                               "status": "failed", "error": f"{exc.kind}: {exc}"})
            continue
        table.rows.append({"variant": name, "hr": rep.hr, "ndcg": rep.ndcg, "status": "ok", "error": ""})
        if on_run is not None:
            on_run(name, res, rep)
    return table


# -------------------------------------------------------------------- sweeps

def parse_grid(spec):
    """``alpha`` / ``layers`` / ``dim`` / ``noise`` or explicit ``key=v1,v2[;key2=...]``."""
    spec = spec.strip()
    if spec in GRIDS:
        return GRIDS[spec]
    axes = []
    for part in spec.split(";"):
        if "=" not in part:
            raise ConfigError(f"unknown grid {spec!r}; expected one of {sorted(GRIDS)} or key=v1,v2")
        key, raw = (s.strip() for s in part.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"unknown sweep axis {key!r}")
        try:
            values = tuple(int(v) if key in ("dim", "layers") else float(v) for v in raw.split(","))
        except ValueError:
            raise ConfigError(f"bad grid values for {key}: {raw!r}") from None
        axes.append((key, values))
    return tuple(axes)


@dataclass
class SweepGrid:
    axes: tuple  # ((key, values), ...)
    k: int
    cells: dict = field(default_factory=dict)  # value tuple -> dict(hr, ndcg, status, error)

    def best(self, metric="hr"):
        ok = {c: v[metric] for c, v in self.cells.items() if v["status"] == "ok"}
        if not ok:
            return None
        return max(ok, key=lambda c: (ok[c], tuple(-x for x in c)))  # ties: smallest values

    def relative_delta(self, metric="hr"):
        """``(m - m_best) / m_best`` per finished cell; ``nan`` for failed cells."""
        b = self.best(metric)
        top = self.cells[b][metric] if b is not None else float("nan")
        out = {}
        for c, v in self.cells.items():
            if v["status"] != "ok":
                out[c] = float("nan")
            else:
                out[c] = (v[metric] - top) / top if top else 0.0
        return out

    def to_tsv(self, metric="hr"):
        """One-axis grids as a column, two-axis grids as a matrix (rows: first axis)."""
        fmt = lambda c: repr(self.cells[c][metric]) if self.cells[c]["status"] == "ok" else "failed"
        if len(self.axes) == 1:
            key, values = self.axes[0]
            return f"{key}\t{metric}\n" + "".join(f"{v}\t{fmt((v,))}\n" for v in values)
        if len(self.axes) == 2:
            (k1, v1), (k2, v2) = self.axes
            lines = [f"{k1}\\{k2}\t" + "\t".join(str(v) for v in v2)]
            for a in v1:
                lines.append(f"{a}\t" + "\t".join(fmt((a, b)) for b in v2))
            return "\n".join(lines) + "\n"
        keys = [k for k, _ in self.axes]
        return "\t".join(keys + [metric]) + "\n" + "".join(
            "\t".join(str(x) for x in c) + f"\t{fmt(c)}\n" for c in self.cells)

    def to_ndjson(self):
        keys = [k for k, _ in self.axes]
        delta = self.relative_delta("hr")
        recs = []
        for c, v in self.cells.items():
            rec = {"record": "sweep_cell", "k": self.k, **dict(zip(keys, c)), **v, "hr_rel_delta": delta[c]}
            recs.append(json.dumps(_finite(rec), sort_keys=True) + "\n")
        return "".join(recs)

    def to_table(self):
        keys = [k for k, _ in self.axes]
        delta = self.relative_delta("hr")
        head = "".join(f"{k:>18}" for k in keys)
        lines = [f"{head}{'HR@' + str(self.k):>10}{'NDCG@' + str(self.k):>10}{'dHR':>9}"]
        for c, v in self.cells.items():
            cells = "".join(f"{x:>18}" for x in c)
            if v["status"] == "ok":
                lines.append(f"{cells}{v['hr']:>10.4f}{v['ndcg']:>10.4f}{delta[c]:>+9.3f}")
            else:
                lines.append(f"{cells}{'failed':>10}{'failed':>10}{'':>9}")
        return "\n".join(lines) + "\n"


def sweep(exp, axes, on_cell=None):
    """One full train + evaluate per grid cell; failed cells are marked and skipped."""
    grid = SweepGrid(tuple(axes), exp.config.eval_k)
    keys = [k for k, _ in axes]
    for combo in itertools.product(*(values for _, values in axes)):
        changes = dict(zip(keys, combo))
        try:
            cfg = exp.config.replace(**changes)
            _, rep = exp.run(cfg, {"cell": changes})
        except KmclrError as exc:
            log.warning("sweep cell %s failed: %s: %s", changes, exc.kind, exc)
            grid.cells[combo] = {"hr": float("nan"), "ndcg": float("nan"), "status": "failed",
                                 "error": f"{exc.kind}: {exc}"}
            continue
        grid.cells[combo] = {"hr": rep.hr, "ndcg": rep.ndcg, "status": "ok", "error": ""}
        if on_cell is not None:
            on_cell(changes, rep)
    return grid
