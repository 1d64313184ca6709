"""Command-line entry points: ingest, train, eval, explain, baseline,
gradcheck and sweep.

Configuration is a flat ``key = value`` file with ``#`` comments; every
value is validated at parse time. Exit codes: 0 ok, 1 runtime error,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines, explain
from .data import (DataError, SchemaConfig, build_schema, load_csv, normalize,
                   split)
from .model import (Model, TrainConfig, TrainingDiverged, confusion_report,
                    evaluate, load_checkpoint, save_checkpoint, train)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    fields: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    multi_valued: list = field(default_factory=list)
    entity_column: str = "entity_id"
    label_column: str = "label"
    zscore_fields: list = field(default_factory=list)
    ratio: float = 0.7
    T: int = 5
    d: int = 8
    rank_widths: list = field(default_factory=lambda: [8, 4])
    s: int = 3
    h: int = 32
    k: int = 2
    q: float = 0.5
    lam: float = 1e-3
    lr: float = 0.001
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    epsilon: float = 1e-4
    K: int = 10

    def train_config(self):
        return TrainConfig(T=self.T, d=self.d, rank_widths=tuple(self.rank_widths),
                           s=self.s, h=self.h, k=self.k, q=self.q, lam=self.lam,
                           lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed, epsilon=self.epsilon, top_k=self.K)

    def schema_config(self):
        return SchemaConfig(fields=list(self.fields),
                            categorical=set(self.categorical),
                            multi_valued=set(self.multi_valued),
                            time_span=self.T)


_LIST_KEYS = {"fields", "categorical", "multi_valued", "zscore_fields", "rank_widths"}


def parse_config(path):
    """Parse the flat key=value config file, rejecting unknown or bad keys."""
    known = {f.name: f.type for f in dc_fields(RunConfig)}
    kwargs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "lambda":
            key = "lam"
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if key in _LIST_KEYS:
                items = [v.strip() for v in value.split(",") if v.strip()]
                kwargs[key] = [int(v) for v in items] if key == "rank_widths" else items
            elif key in ("T", "d", "s", "h", "k", "epochs", "batch_size", "seed", "K"):
                kwargs[key] = int(value)
            elif key in ("q", "lam", "lr", "ratio", "epsilon"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    cfg = RunConfig(**kwargs)
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not 0.0 < cfg.ratio < 1.0:
        raise ConfigError(f"{path}: ratio must be in (0,1), got {cfg.ratio}")
    return cfg


def _load_split(data_path, cfg):
    samples = load_csv(data_path, cfg.schema_config())
    if len(samples) < 2:
        raise DataError(f"{data_path}: need at least 2 usable entities, got {len(samples)}")
    return split(samples, cfg.ratio, cfg.seed)


def _normalize_all(samples, schema):
    return [normalize(s, schema) for s in samples]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args, cfg):
    """Convert wide per-period CSV files (one file per period, in order) to long."""
    rows = {}
    for period, path in enumerate(args.inputs):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty file")
            for col in [cfg.entity_column] + list(cfg.fields):
                if col not in reader.fieldnames:
                    raise DataError(f"{path}: missing column {col!r}")
            has_label = cfg.label_column in reader.fieldnames
            for row in reader:
                entity = row[cfg.entity_column]
                key = (entity, period)
                if key in rows:
                    raise DataError(f"duplicate (entity, period) pair {key}")
                label = row.get(cfg.label_column, "") if has_label else ""
                rows[key] = ([row[f] for f in cfg.fields], label)

    final = len(args.inputs) - 1
    entities = sorted({e for e, _ in rows})
    for e in entities:
        if (e, final) in rows and rows[(e, final)][1] == "":
            raise DataError(f"entity {e!r} has no label on its final period")

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_id", "period_index"] + list(cfg.fields) + ["label"])
        for e in entities:
            for period in range(len(args.inputs)):
                if (e, period) not in rows:
                    continue
                vals, label = rows[(e, period)]
                writer.writerow([e, period] + vals + [label if period == final else ""])
    print(f"wrote {args.out} ({len(entities)} entities, {len(rows)} rows)")
    return 0


def cmd_train(args, cfg):
    ds = _load_split(args.data, cfg)
    schema = build_schema(ds.train, cfg.schema_config())
    train_norm = _normalize_all(ds.train, schema)
    try:
        model, trace = train(train_norm, schema, cfg.train_config(), log_every=1)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(model, args.out)
    trace_path = Path(args.out).with_suffix(".trace.csv")
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_acc"])
        for epoch, loss, acc in trace:
            writer.writerow([epoch, f"{loss:.8g}", f"{acc:.6g}"])
    print(f"wrote {args.out} and {trace_path}")
    return 0


def cmd_eval(args, cfg):
    model = load_checkpoint(args.model)
    ds = _load_split(args.data, cfg)
    samples = _normalize_all(ds.train + ds.test if args.all else ds.test, model.schema)
    report = evaluate(model, samples)
    print(report.as_table())
    print("tp,fp,fn,tn,acc,err1,err2,auc")
    print(f"{report.tp},{report.fp},{report.fn},{report.tn},"
          f"{report.acc:.6g},{report.err1:.6g},{report.err2:.6g},{report.auc:.6g}")
    return 0


def cmd_explain(args, cfg):
    model = load_checkpoint(args.model)
    ds = _load_split(args.data, cfg)
    test_norm = _normalize_all(ds.test, model.schema)
    eps = model.config.epsilon
    out_dir = Path(args.out)

    if args.static:
        r1 = explain.rank1_attention_weights(model, test_norm)
        patterns = explain.backtrack_patterns(model.blocks, model.schema, eps,
                                              rank1_weights=r1)
        explain.emit_reports(patterns, {}, out_dir)
        print(f"wrote {out_dir / 'patterns.csv'}")
        return 0

    by_id = {s.entity_id: s for s in test_norm}
    by_id.update({s.entity_id: s for s in _normalize_all(ds.train, model.schema)})
    if args.entity not in by_id:
        print(f"unknown entity id {args.entity!r}", file=sys.stderr)
        return 1
    sample = by_id[args.entity]
    fwd = model.forward([sample])
    names = explain.channel_pattern_names(model.blocks, model.schema, eps)
    pred = int(fwd["y"].data[0].argmax())
    expl, E = explain.individual_explanation(
        fwd["p"].data[0], fwd["q"].data[0], fwd["r"].data[0], pred,
        model.config.top_k, pattern_names=names)
    r1 = explain.rank1_attention_weights(model, test_norm)
    patterns = explain.backtrack_patterns(model.blocks, model.schema, eps,
                                          rank1_weights=r1)
    explain.emit_reports(patterns, {args.entity: (expl, E)}, out_dir)
    print(f"wrote explanation files for {args.entity} in {out_dir}")
    return 0


def cmd_baseline(args, cfg):
    ds = _load_split(args.data, cfg)
    if args.which == "zscore":
        if len(cfg.zscore_fields) != 5:
            raise ConfigError("zscore baseline needs exactly 5 zscore_fields in config")
        zmodel = baselines.ZScoreModel()
        preds, labels = [], []
        for s in ds.test:
            x = np.array([s.steps[-1][f] for f in cfg.zscore_fields], dtype=np.float64)
            _, positive = baselines.zscore_rate(x, zmodel)
            preds.append(1 if positive else 0)
            labels.append(s.label)
        report = confusion_report(preds, labels)
    else:
        schema = build_schema(ds.train, cfg.schema_config())
        Xtr = baselines.flatten_samples(_normalize_all(ds.train, schema), schema)
        Xte = baselines.flatten_samples(_normalize_all(ds.test, schema), schema)
        ytr = np.array([s.label for s in ds.train])
        yte = np.array([s.label for s in ds.test])
        lrm = baselines.lr_train(Xtr, ytr, l1=cfg.lam, seed=cfg.seed)
        scores = baselines.lr_predict(Xte, lrm)
        report = confusion_report((scores > 0.5).astype(int), yte, scores)
    print(report.as_table())
    return 0


def cmd_gradcheck(args, cfg):
    """End-to-end gradient check on a small random model and batch."""
    from .data import gen_synthetic_interaction
    tc = cfg.train_config()
    n_fields = max(len(cfg.fields), 1) if cfg.fields else 3
    samples = gen_synthetic_interaction(4, tc.T, max(n_fields - 2, 0), seed=cfg.seed)
    sc = SchemaConfig(fields=list(samples[0].steps[0].keys()), time_span=tc.T)
    schema = build_schema(samples, sc)
    norm = _normalize_all(samples, schema)
    model = Model(schema, tc)
    from .model import objective as _objective

    def f():
        loss, _ = _objective(norm, model, tc)
        return loss

    report = ad.grad_check(f, model.params(), step=1e-4, tol=args.tol)
    print(f"max relative error: {report['max_rel_err']:.3e} (tol {report['tol']:.1e})")
    return 0 if report["ok"] else 1


def cmd_sweep(args, cfg):
    """Retrain per axis value and emit (value, acc, auc) rows."""
    values = [int(v) for v in args.values.split(",")]
    rows = []
    for v in values:
        run = RunConfig(**{**cfg.__dict__})
        if args.axis == "rank":
            # rank l means l-1 crossing blocks; reuse the leading widths
            widths = list(cfg.rank_widths)[:max(v - 1, 0)]
            while len(widths) < v - 1:
                widths.append(widths[-1] if widths else 8)
            run.rank_widths = widths
        else:
            run.T = v
        ds = _load_split(args.data, run)
        schema = build_schema(ds.train, run.schema_config())
        model, _ = train(_normalize_all(ds.train, schema), schema, run.train_config())
        report = evaluate(model, _normalize_all(ds.test, schema))
        rows.append((v, report.acc, report.auc))
        print(f"{args.axis}={v}: acc={report.acc:.4f} auc={report.auc:.4f}")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.axis, "acc", "auc"])
        for v, acc, auc_val in rows:
            writer.writerow([v, f"{acc:.6g}", f"{auc_val:.6g}"])
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="crossnet",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert wide per-period files to long format")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--all", action="store_true",
                   help="evaluate on all entities, not just the test split")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="emit static or per-entity explanations")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="explanations")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--entity")
    group.add_argument("--static", action="store_true")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("baseline", help="run a linear baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--which", choices=["zscore", "lr"], required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="retrain across rank or time-span values")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--axis", choices=["rank", "timespan"], required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
