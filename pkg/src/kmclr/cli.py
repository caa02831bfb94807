"""``kmclr`` command line: ingest, train, evaluate, ablate, sweep, gen-synthetic.

Exit codes: 0 ok, 1 user error (bad input, config, data), 2 internal error.
Failures print one ``Kind: message`` line on stderr. Log verbosity comes from
``KMCLR_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import synthetic
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import LoadReport, load_interactions, load_kg, save_interactions, save_kg
from .errors import CheckpointError, ConfigError, DivergenceError, KmclrError, UsageError
from .evaluation import evaluate
from .experiments import ABLATION_ORDER, Experiment, ablate, parse_grid, sweep
from .optim import ParameterSet
from .trainer import VARIANTS, train

log = logging.getLogger("kmclr")

CHECKPOINT = "model.ckpt"
RUN_CONF = "run.conf"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="kmclr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="flat key = value run config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        return sp

    common(sub.add_parser("ingest", help="validate and reindex data, write a load report"))
    t = common(sub.add_parser("train", help="staged training, writes checkpoint and log"))
    t.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    e = common(sub.add_parser("evaluate", help="rank held-out items with a trained checkpoint"))
    e.add_argument("--checkpoint", default=None, help=f"default: <out>/{CHECKPOINT}")
    a = common(sub.add_parser("ablate", help="train and evaluate every ablation variant"))
    a.add_argument("--variant", action="append", default=None,
                   help=f"restrict to these variants (repeatable); default: {', '.join(ABLATION_ORDER)}")
    s = common(sub.add_parser("sweep", help="grid sweep, one run per cell"))
    s.add_argument("--grid", required=True, help="alpha | layers | dim | noise | key=v1,v2[;key2=...]")
    g = common(sub.add_parser("gen-synthetic", help="write a planted-preference dataset"), config=False)
    d = synthetic.SyntheticSpec()
    g.add_argument("--users", type=int, default=d.num_users)
    g.add_argument("--items", type=int, default=d.num_items)
    g.add_argument("--behaviors", type=int, default=d.num_behaviors)
    g.add_argument("--clusters", type=int, default=d.num_clusters)
    g.add_argument("--correlation", type=float, default=d.behavior_correlation)
    g.add_argument("--kg-informativeness", type=float, default=d.kg_informativeness)
    g.add_argument("--noise", type=float, default=d.noise_rate)
    return p


# ------------------------------------------------------------------ helpers

def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _outdir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} not writable: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} not writable")
    return out


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _save_run(out, cfg, res, exp):
    """Checkpoint with id maps and final embeddings, training log, resolved config."""
    params = ParameterSet({n: res.params[n].value for n in res.params})
    params.add("out.user", res.user_emb)
    params.add("out.item", res.item_emb)
    g, kg = exp.graph, exp.kg
    ids = {"users": g.user_ids, "items": g.item_ids, "behaviors": g.behaviors}
    if kg is not None:
        ids.update(entities=kg.entity_ids, relations=kg.relation_ids)
    meta = {"config": cfg.digest(), "seed": cfg.seed, "stopped_early": res.stopped_early}
    save_checkpoint(out / CHECKPOINT, params, ids, meta)
    _write(out / "train_log.ndjson", "".join(json.dumps(r, sort_keys=True) + "\n" for r in res.log))
    cfg.save(out / RUN_CONF)


# ------------------------------------------------------------------- verbs

def cmd_ingest(args):
    cfg, out = _config(args), _outdir(args.out)
    if not cfg.interactions:
        raise ConfigError("config names no interactions file")
    rep = LoadReport(cfg.interactions, "interactions")
    g = load_interactions(cfg.interactions, cfg.behavior_list, cfg.target_behavior, rep)
    save_interactions(g, out / "interactions.tsv")
    text = rep.to_text()
    resolved = cfg.replace(interactions=str((out / "interactions.tsv").resolve()))
    if cfg.kg:
        krep = LoadReport(cfg.kg, "kg")
        kg = load_kg(cfg.kg, g, krep)
        save_kg(kg, out / "kg.tsv")
        text += "\n" + krep.to_text()
        resolved = resolved.replace(kg=str((out / "kg.tsv").resolve()))
    _write(out / "load_report.txt", text)
    resolved.save(out / RUN_CONF)
    print(text, end="")
    return 0


def cmd_train(args):
    cfg, out = _config(args), _outdir(args.out)
    cfg = cfg.replace(**VARIANTS[args.variant])
    exp = Experiment.from_config(cfg)
    try:
        res = train(cfg, exp.split, None if cfg.disable_kcl else exp.kg)
    except DivergenceError as exc:
        _save_run(out, cfg, exc.result, exp)  # last finite parameters
        raise
    _save_run(out, cfg, res, exp)
    last = res.log[-1] if res.log else {}
    print(f"trained {len(res.log)} epochs, final loss {last.get('loss', float('nan')):.6f}; "
          f"checkpoint {out / CHECKPOINT}")
    return 0


def cmd_evaluate(args):
    cfg, out = _config(args), _outdir(args.out)
    path = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    params, ids, meta = load_checkpoint(path)
    if "out.user" not in params or "out.item" not in params:
        raise CheckpointError(f"{path}: no final embeddings stored")
    exp = Experiment.from_config(cfg)
    if list(ids.get("users", [])) != list(exp.graph.user_ids) or \
            list(ids.get("items", [])) != list(exp.graph.item_ids):
        raise CheckpointError(f"{path}: id maps do not match {cfg.interactions}")
    if meta.get("config") not in (None, cfg.digest()):
        log.warning("checkpoint was trained under config %s, evaluating with %s", meta["config"], cfg.digest())
    rep = evaluate(params["out.user"].value, params["out.item"].value, exp.split.test, exp.candidates,
                   cfg.eval_k, exp.buckets, {"config": cfg.digest(), "seed": cfg.seed})
    _write(out / "report.ndjson", rep.to_ndjson())
    _write(out / "report.txt", rep.to_table())
    print(rep.to_table(), end="")
    return 0


def cmd_ablate(args):
    cfg, out = _config(args), _outdir(args.out)
    exp = Experiment.from_config(cfg)
    table = ablate(exp, tuple(args.variant) if args.variant else ABLATION_ORDER,
                   on_run=lambda name, res, rep: log.info("%s: HR=%.4f NDCG=%.4f", name, rep.hr, rep.ndcg))
    margins = table.margins()
    for name, m in margins.items():
        log.info("margin full - %s: %+.4f", name, m)
    _write(out / "ablation.tsv", table.to_tsv())
    _write(out / "ablation.ndjson", table.to_ndjson() + "".join(
        json.dumps({"record": "margin", "variant": n, "hr_margin": m}, sort_keys=True) + "\n"
        for n, m in margins.items()))
    _write(out / "ablation.txt", table.to_table())
    cfg.save(out / RUN_CONF)
    print(table.to_table(), end="")
    return 0


def cmd_sweep(args):
    cfg, out = _config(args), _outdir(args.out)
    axes = parse_grid(args.grid)
    exp = Experiment.from_config(cfg)
    grid = sweep(exp, axes, on_cell=lambda c, rep: log.info("%s: HR=%.4f", c, rep.hr))
    _write(out / "sweep_hr.tsv", grid.to_tsv("hr"))
    _write(out / "sweep_ndcg.tsv", grid.to_tsv("ndcg"))
    _write(out / "sweep.ndjson", grid.to_ndjson())
    _write(out / "sweep.txt", grid.to_table())
    cfg.save(out / RUN_CONF)
    print(grid.to_table(), end="")
    return 0


def cmd_gen_synthetic(args):
    out = _outdir(args.out)
    spec = synthetic.SyntheticSpec(num_users=args.users, num_items=args.items, num_behaviors=args.behaviors,
                                   num_clusters=args.clusters, behavior_correlation=args.correlation,
                                   kg_informativeness=args.kg_informativeness, noise_rate=args.noise,
                                   seed=0 if args.seed is None else args.seed)
    if min(spec.num_users, spec.num_items, spec.num_clusters) < 1 or spec.num_behaviors < 1:
        raise UsageError("users, items, behaviors and clusters must be positive")
    for name in ("behavior_correlation", "kg_informativeness", "noise_rate"):
        if not 0.0 <= getattr(spec, name) <= 1.0:
            raise UsageError(f"{name} must be in [0, 1]")
    synthetic.write(spec, out)
    print(f"wrote {out / 'data.conf'}")
    return 0


VERBS = {"ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate,
         "ablate": cmd_ablate, "sweep": cmd_sweep, "gen-synthetic": cmd_gen_synthetic}


def _fail(kind, msg):
    print(f"{kind}: {' '.join(str(msg).split())}", file=sys.stderr)


def main(argv=None):
    level = os.environ.get("KMCLR_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return VERBS[args.verb](args)
    except KmclrError as exc:
        _fail(exc.kind, exc)
        return 1
    except OSError as exc:
        _fail("IOError", f"{exc.filename or ''} {exc.strerror or exc}".strip())
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        _fail("InternalError", f"{type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
