"""Command-line pipeline: ingest, build-graph, train, eval, similar, metric-train, novelty-eval.

Every subcommand works inside one work directory::

    sessions/{view}.tsv        session files (user, view, nodes)
    sessions/item.times.tsv    start/end timestamps, line-aligned with item.tsv
    attributes/{view}.tsv      item -> attribute maps
    test.tsv                   held-out items per user (when a cutoff is set)
    graph/                     edge lists, vocabularies, link tables
    checkpoint/                embeddings, transforms, log-variances, history.csv
    eval/                      report.txt, metrics.csv
    similar.tsv                I2I similarity map
    metric/                    metric model and novelty report

Settings come from a flat ``key = value`` file (``--config``) overridden by
repeated ``--set key=value`` flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvgraph.diversity import (
    DAY,
    MetricModel,
    MetricTrainConfig,
    metric_similar,
    metric_training_pairs,
    novelty_at_k,
    read_metric_model,
    train_metric,
    write_metric_model,
)
from mvgraph.errors import ConfigError, DataError, DivergenceError
from mvgraph.evaluation import (
    EvalConfig,
    evaluate,
    similarity_map,
    topk_similar,
    write_metrics_csv,
    write_report,
    write_similarity_map,
)
from mvgraph.fileio import atomic_open
from mvgraph.graph import (
    graph_stats,
    relation_name,
    write_graph,
    write_links,
    write_vocab,
)
from mvgraph.ingest import (
    HOUR,
    YEAR,
    ParseResult,
    Schema,
    SessionRules,
    parse_events,
    read_sessions,
    write_sessions,
)
from mvgraph.movielens import read_ml100k
from mvgraph.pipeline import Corpus, build_corpus, build_graphs, build_links
from mvgraph.sampler import SamplerConfig
from mvgraph.training import (
    OptimizerConfig,
    TrainConfig,
    Trainer,
    TrainingData,
    load_checkpoint,
    save_checkpoint,
)

logger = logging.getLogger("mvgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2
PATH_KEYS = ("input", "workdir")

DEFAULTS: dict[str, str] = {
    "mode": "taobao",
    "input": "",
    "format": "tsv",  # or ml100k: input is a GroupLens ml-100k directory
    "workdir": "work",
    "views": "item,category",
    "relations": "",  # empty: item -> every other declared view
    "cutoff": "",
    "on_missing": "skip",
    # input columns
    "col.user": "user_id",
    "col.item": "item_id",
    "col.timestamp": "timestamp",
    "col.category": "category_id",
    "col.shop": "shop_id",
    "col.dwell": "dwell_ms",
    "col.rating": "rating",
    "delimiter": "tab",
    # session rules (seconds unless noted)
    "min_dwell_ms": "2000",
    "idle_split": str(HOUR),
    "merge_gap": "1800",
    "movielens_idle_split": str(YEAR),
    "max_len": "50",
    "min_rating": "3",
    # sampler
    "window": "9",
    "negatives": "10",
    "noise_power": "0.75",
    "batch_size": "2048",
    "epochs": "10",
    "inter_mode": "count",
    # optimiser / model
    "optimizer": "adam",
    "learning_rate": "0.01",
    "clip_norm": "1.0",
    "dim": "64",
    "out_dim": "",
    "weighting": "adaptive",
    "floor_var": "0.05",
    "inter_variant": "score",
    "record_every": "10",
    "max_steps": "",
    "undirected": "false",
    # evaluation
    "K": "50",
    "trigger_window": "",
    "exclude_seen": "true",
    "similar_K": "50",
    # metric model
    "metric.steps": "500",
    "metric.batch_size": "256",
    "metric.learning_rate": "0.01",
    "metric.margin": "1.0",
    "metric.window": "3",
    "metric.negatives": "1",
    "novelty.K": "10",
    "novelty.window_days": "15",
    # run
    "seed": "0",
    "threads": "1",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class PipelineConfig:
    values: dict[str, str] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def load(cls, path: str | None, overrides: Sequence[str] = ()) -> PipelineConfig:
        values = dict(DEFAULTS)
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            values.update(parse_config_text(p.read_text(encoding="utf-8"), path))
        values.update(parse_config_text("\n".join(overrides), "--set"))
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(values)
        cfg.validate()
        return cfg

    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int | None:
        v = self.values[key]
        if v == "":
            return None
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {v!r}") from None

    def get_float(self, key: str) -> float | None:
        v = self.values[key]
        if v == "":
            return None
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {v!r}") from None

    def get_bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{key} must be a boolean, got {v!r}")
        return v in ("true", "1", "yes")

    @property
    def workdir(self) -> Path:
        return Path(self.get("workdir"))

    @property
    def movielens(self) -> bool:
        return self.get("mode") == "movielens"

    @property
    def views(self) -> list[str]:
        views = [v.strip() for v in self.get("views").split(",") if v.strip()]
        if "item" not in views:
            views.insert(0, "item")
        return views

    def relations(self) -> list[tuple[str, str]]:
        views = self.views
        declared = self.get("relations").strip()
        if not declared:
            return [("item", v) for v in views if v != "item"]
        out = []
        for part in declared.split(","):
            a, _, b = part.strip().partition("-")
            if a not in views or b not in views:
                raise ConfigError(f"relation {part!r} references an undeclared view")
            if a != "item":
                raise ConfigError(f"relation {part!r}: only item -> attribute relations are supported")
            out.append((a, b))
        return out

    def validate(self) -> None:
        if self.get("mode") not in ("taobao", "movielens"):
            raise ConfigError("mode must be 'taobao' or 'movielens'")
        for v in self.views:
            if v not in ("item", "category", "shop"):
                raise ConfigError(f"unknown view {v!r}")
        self.relations()
        self.rules()
        self.train_config()
        self.eval_config()

    def schema(self) -> Schema:
        views = self.views
        delim = {"tab": "\t", "comma": ",", "space": " "}.get(self.get("delimiter"), self.get("delimiter"))
        return Schema(
            user_id=self.get("col.user"),
            item_id=self.get("col.item"),
            timestamp=self.get("col.timestamp"),
            category_id=self.get("col.category") if "category" in views else None,
            shop_id=self.get("col.shop") if "shop" in views else None,
            dwell=None if self.movielens else (self.get("col.dwell") or None),
            rating=self.get("col.rating") if self.movielens else None,
            delimiter=delim,
        )

    def rules(self) -> SessionRules:
        common = dict(
            min_dwell_ms=self.get_int("min_dwell_ms"),
            idle_split=self.get_int("idle_split"),
            merge_gap=self.get_int("merge_gap"),
            movielens_idle_split=self.get_int("movielens_idle_split"),
        )
        if self.movielens:
            return SessionRules.for_movielens(max_len=self.get_int("max_len"), min_rating=self.get_float("min_rating"), **common)
        return SessionRules(**common)

    def train_config(self) -> TrainConfig:
        sampler = SamplerConfig(
            window=self.get_int("window"),
            negatives_k=self.get_int("negatives"),
            noise_power=self.get_float("noise_power"),
            batch_size=self.get_int("batch_size"),
            epochs=self.get_int("epochs"),
            seed=self.get_int("seed"),
            inter_mode=self.get("inter_mode"),
        )
        opt = OptimizerConfig(self.get("optimizer"), self.get_float("learning_rate"), self.get_float("clip_norm"))
        return TrainConfig(
            dim=self.get_int("dim"),
            out_dim=self.get_int("out_dim"),
            sampler=sampler,
            optimizer=opt,
            weighting=self.get("weighting"),
            floor_var=self.get_float("floor_var"),
            inter_variant=self.get("inter_variant"),
            record_every=self.get_int("record_every"),
            max_steps=self.get_int("max_steps"),
            threads=self.get_int("threads"),
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.get_int("K"), self.get_int("trigger_window"), self.get_bool("exclude_seen"))

    def metric_config(self) -> MetricTrainConfig:
        return MetricTrainConfig(
            steps=self.get_int("metric.steps"),
            batch_size=self.get_int("metric.batch_size"),
            optimizer=OptimizerConfig("adam", self.get_float("metric.learning_rate")),
            seed=self.get_int("seed"),
        )


# ---------------------------------------------------------------- artifacts


def sessions_path(workdir: Path, view: str) -> Path:
    return workdir / "sessions" / f"{view}.tsv"


def require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path} (run the earlier pipeline step first)")
    return path


def load_corpus(cfg: PipelineConfig) -> Corpus:
    wd = cfg.workdir
    view_sessions = {}
    for view in cfg.views:
        with open(require(sessions_path(wd, view), f"{view} sessions"), encoding="utf-8") as fh:
            view_sessions[view] = read_sessions(fh)
    times = wd / "sessions" / "item.times.tsv"
    if times.exists():
        rows = times.read_text(encoding="utf-8").splitlines()
        if len(rows) != len(view_sessions["item"]):
            raise DataError("item.times.tsv is not line-aligned with item.tsv")
        for s, row in zip(view_sessions["item"], rows):
            s.start_ts, s.end_ts = (int(x) for x in row.split("\t"))
    attributes = {}
    for view in cfg.views:
        if view == "item":
            continue
        amap = {}
        for line in require(wd / "attributes" / f"{view}.tsv", f"{view} attributes").read_text("utf-8").splitlines():
            item, attr = line.split("\t")
            amap[item] = attr
        attributes[view] = amap
    test: dict[str, list[str]] = {}
    test_path = wd / "test.tsv"
    if test_path.exists():
        for line in test_path.read_text(encoding="utf-8").splitlines():
            user, items = line.split("\t")
            test[user] = items.split(",")
    return Corpus(view_sessions, attributes, test)


def load_training_data(cfg: PipelineConfig, corpus: Corpus) -> TrainingData:
    graphs = build_graphs(corpus, cfg.get_bool("undirected"))
    links = build_links(corpus, graphs)
    wanted = {relation_name(a, b) for a, b in cfg.relations()}
    links = {name: lk for name, lk in links.items() if name in wanted}
    return TrainingData.from_sessions(corpus.view_sessions, graphs, links)


def load_model(cfg: PipelineConfig):
    ckpt = cfg.workdir / "checkpoint"
    require(ckpt / "meta.json", "checkpoint")
    return load_checkpoint(ckpt)


# ---------------------------------------------------------------- commands


def read_input(cfg: PipelineConfig) -> ParseResult:
    src = Path(cfg.get("input"))
    fmt = cfg.get("format")
    if fmt == "ml100k":
        if not cfg.get("input") or not src.is_dir():
            raise ConfigError(f"MovieLens directory not found: {src}")
        result = ParseResult()
        for e in read_ml100k(src):
            result.events.setdefault(e.user_id, []).append(e)
        for evs in result.events.values():
            evs.sort(key=lambda e: e.timestamp)
        return result
    if fmt != "tsv":
        raise ConfigError(f"unknown input format {fmt!r}")
    if not cfg.get("input") or not src.is_file():
        raise ConfigError(f"input log not found: {src}")
    with open(src, "rb") as fh:
        return parse_events(fh, cfg.schema())


def cmd_ingest(cfg: PipelineConfig) -> int:
    parsed = read_input(cfg)
    events = [e for u in sorted(parsed.events) for e in parsed.events[u]]
    corpus = build_corpus(
        events, cfg.rules(), cfg.views, cfg.get_int("cutoff"), on_missing=cfg.get("on_missing")
    )
    wd = cfg.workdir
    for view in cfg.views:
        with atomic_open(sessions_path(wd, view)) as fh:
            write_sessions(fh, corpus.view_sessions[view])
    with atomic_open(wd / "sessions" / "item.times.tsv") as fh:
        for s in corpus.item_sessions:
            fh.write(f"{s.start_ts}\t{s.end_ts}\n")
    for view, amap in corpus.attributes.items():
        with atomic_open(wd / "attributes" / f"{view}.tsv") as fh:
            for item in sorted(amap):
                fh.write(f"{item}\t{amap[item]}\n")
    if cfg.get_int("cutoff") is not None:
        with atomic_open(wd / "test.tsv") as fh:
            for user in sorted(corpus.test_items):
                fh.write(f"{user}\t{','.join(corpus.test_items[user])}\n")
    summary = {
        "events": parsed.n_events,
        "skipped_rows": parsed.skipped,
        "users": len(parsed.events),
        "sessions": {v: len(s) for v, s in corpus.view_sessions.items()},
        "missing_attributes": corpus.missing,
        "test_users": len(corpus.test_items),
    }
    with atomic_open(wd / "ingest.json") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"events={summary['events']} skipped={summary['skipped_rows']} users={summary['users']}")
    for view, n in summary["sessions"].items():
        print(f"sessions[{view}]={n}")
    return EXIT_OK


def cmd_build_graph(cfg: PipelineConfig) -> int:
    corpus = load_corpus(cfg)
    data = load_training_data(cfg, corpus)
    out = cfg.workdir / "graph"
    for view, g in data.graphs.items():
        with atomic_open(out / f"{view}.edges.tsv") as fh:
            write_graph(fh, g)
        with atomic_open(out / f"{view}.vocab.tsv") as fh:
            write_vocab(fh, g)
        print(f"{view}: " + " ".join(f"{k}={v}" for k, v in graph_stats(g).items()))
    for name, lk in data.links.items():
        with atomic_open(out / f"links.{name}.tsv") as fh:
            write_links(fh, lk, data.graphs[lk.from_view].vocab, data.graphs[lk.to_view].vocab)
        print(f"{name}: links={len(lk)}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig) -> int:
    corpus = load_corpus(cfg)
    data = load_training_data(cfg, corpus)
    trainer = Trainer(data, cfg.train_config(), seed=cfg.get_int("seed"))
    # paths are left out so identical runs in different directories stay byte-identical
    settings = {k: v for k, v in sorted(cfg.values.items()) if k not in PATH_KEYS}
    extra = {"seed": cfg.get_int("seed"), "config": settings}
    try:
        model = trainer.run()
    except DivergenceError as err:
        state = err.state or trainer.model
        save_checkpoint(state, cfg.workdir / "checkpoint", extra=extra | {"diverged": str(err)})
        raise
    save_checkpoint(model, cfg.workdir / "checkpoint", extra=extra)
    print(f"trained {len(trainer.tasks)} tasks for {model.step} steps")
    for task, u in model.uncertainties.items():
        print(f"{task}: sigma2={u.sigma2:.4f} weight={u.weight:.4f}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    corpus = load_corpus(cfg)
    if not corpus.test_items:
        raise ConfigError("no held-out test items; ingest with a cutoff first")
    model = load_model(cfg)
    table = model.tables["item"]
    result = evaluate(table.input_vecs, table.ids, corpus.test_items, corpus.histories(), cfg.eval_config())
    out = cfg.workdir / "eval"
    name = "multi-view" if model.transforms else "single-view"
    with atomic_open(out / "report.txt") as fh:
        write_report(fh, result, name)
    with atomic_open(out / "metrics.csv") as fh:
        write_metrics_csv(fh, result)
    sys.stdout.write((out / "report.txt").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_similar(cfg: PipelineConfig) -> int:
    model = load_model(cfg)
    table = model.tables["item"]
    K = cfg.get_int("similar_K")
    if K is None or K < 1:
        raise ConfigError("similar_K must be >= 1")
    with atomic_open(cfg.workdir / "similar.tsv") as fh:
        write_similarity_map(fh, table.ids, similarity_map(table.input_vecs, K))
    print(f"wrote {len(table.ids)} similarity lists (K={K})")
    return EXIT_OK


def metric_inputs(cfg: PipelineConfig, model, corpus: Corpus):
    rel = relation_name("item", "category")
    if rel not in model.transforms:
        raise ConfigError("the metric model needs an item-category alignment in the checkpoint")
    table = model.tables["item"]
    amap = corpus.attributes.get("category")
    if amap is None:
        raise ConfigError("the metric model needs the category view")
    missing = [i for i in table.ids if i not in amap]
    if missing:
        raise DataError(f"{len(missing)} checkpoint items have no category (first: {missing[0]!r})")
    cat_index: dict[str, int] = {}
    item_category = np.array([cat_index.setdefault(amap[i], len(cat_index)) for i in table.ids])
    e_i = table.input_vecs
    e_ic = model.relational(rel, e_i)
    return table, amap, item_category, e_i, e_ic


def cmd_metric_train(cfg: PipelineConfig) -> int:
    corpus = load_corpus(cfg)
    model = load_model(cfg)
    table, _, item_category, e_i, e_ic = metric_inputs(cfg, model, corpus)
    index = {n: i for i, n in enumerate(table.ids)}
    sessions = [np.array([index[n] for n in s.nodes if n in index]) for s in corpus.item_sessions]
    rng = np.random.default_rng(cfg.get_int("seed"))
    pairs = metric_training_pairs(
        sessions, item_category, cfg.get_int("metric.window"), len(table.ids), rng, cfg.get_int("metric.negatives")
    )
    if len(pairs) == 0:
        raise DataError("no cross-category co-occurrences to train the metric model on")
    init = MetricModel.identity(e_i.shape[1], e_ic.shape[1], cfg.get_float("metric.margin"))
    metric, history = train_metric(init, e_i, e_ic, pairs, cfg.metric_config())
    out = cfg.workdir / "metric"
    with atomic_open(out / "model.txt") as fh:
        write_metric_model(fh, metric)
    with atomic_open(out / "loss.csv") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(history, 1):
            fh.write(f"{step},{loss!r}\n")
    print(f"pairs={len(pairs)} positives={int(pairs.y.sum())} final_loss={history[-1] if history else float('nan'):.6f}")
    return EXIT_OK


def cmd_novelty_eval(cfg: PipelineConfig) -> int:
    corpus = load_corpus(cfg)
    model = load_model(cfg)
    table, amap, _, e_i, e_ic = metric_inputs(cfg, model, corpus)
    with open(require(cfg.workdir / "metric" / "model.txt", "metric model"), encoding="utf-8") as fh:
        metric = read_metric_model(fh)
    K = cfg.get_int("novelty.K")
    index = {n: i for i, n in enumerate(table.ids)}
    as_of = max((s.end_ts for s in corpus.item_sessions), default=0) + 1
    horizon = as_of - cfg.get_float("novelty.window_days") * DAY
    recent: dict[str, set[str]] = {}
    last_trigger: dict[str, int] = {}
    for s in corpus.item_sessions:
        known = [index[n] for n in s.nodes if n in index]
        if known:
            last_trigger[s.user_id] = known[-1]
        if s.end_ts >= horizon:
            recent.setdefault(s.user_id, set()).update(amap[n] for n in s.nodes if n in amap)
    users = sorted(corpus.test_items) if corpus.test_items else sorted(last_trigger)
    raw, reranked = {}, {}
    for user in users:
        trig = last_trigger.get(user)
        if trig is None:
            continue
        raw[user] = [table.ids[i] for i, _ in topk_similar(e_i[trig], e_i, K, (trig,))]
        reranked[user] = [table.ids[i] for i, _ in metric_similar(metric, e_i, e_ic, trig, K)]
    item_cat = {i: amap[i] for i in table.ids}
    n_raw = novelty_at_k(raw, recent, item_cat)
    n_metric = novelty_at_k(reranked, recent, item_cat)
    with atomic_open(cfg.workdir / "metric" / "novelty.csv") as fh:
        fh.write("ranking,novelty,K,N\n")
        fh.write(f"raw,{n_raw!r},{K},{len(raw)}\n")
        fh.write(f"metric,{n_metric!r},{K},{len(reranked)}\n")
    print(f"novelty@{K}: raw={n_raw:.4f} metric={n_metric:.4f} users={len(raw)}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "similar": cmd_similar,
    "metric-train": cmd_metric_train,
    "novelty-eval": cmd_novelty_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvgraph", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    parser.add_argument("--workdir", help="shorthand for --set workdir=DIR")
    parser.add_argument("--input", help="shorthand for --set input=PATH")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.set)
    for key in ("workdir", "input", "seed", "threads"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = PipelineConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
