import json
from dataclasses import replace

import pytest

from mvgraph.cli import PipelineConfig, main, parse_config_text
from mvgraph.errors import ConfigError
from mvgraph.synthetic import PlantedCorpus, write_log

CORPUS = PlantedCorpus(n_categories=3, items_per_category=10, n_users=40, sessions_per_user=3, session_len=5)
FAST = ["--set", "epochs=2", "--set", "batch_size=128", "--set", "dim=8", "--set", "K=5", "--set", "window=3"]


@pytest.fixture
def log(tmp_path):
    path = tmp_path / "log.tsv"
    with open(path, "w") as fh:
        write_log(fh, CORPUS.generate(3), with_shop=False)
    return path


def run(cmd, workdir, log=None, *extra):
    argv = [cmd, "--workdir", str(workdir), "--set", f"cutoff={CORPUS.holdout_cutoff()}", *FAST, *extra]
    if log is not None:
        argv += ["--input", str(log)]
    return main(argv)


def pipeline(workdir, log, *extra):
    for cmd in ("ingest", "train", "eval"):
        assert run(cmd, workdir, log, *extra) == 0, cmd


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig.load(None)
        tc = cfg.train_config()
        assert (tc.sampler.batch_size, tc.sampler.epochs, tc.sampler.negatives_k) == (2048, 10, 10)
        assert (tc.optimizer.learning_rate, tc.optimizer.clip_norm, tc.sampler.window) == (0.01, 1.0, 9)
        assert (tc.dim, tc.floor_var) == (64, 0.05)

    def test_file_and_override(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("# comment\ndim = 32\nepochs=3\n")
        cfg = PipelineConfig.load(str(p), ["epochs=5"])
        assert cfg.train_config().dim == 32 and cfg.train_config().sampler.epochs == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            PipelineConfig.load(None, ["dimension=3"])

    def test_bad_line(self):
        with pytest.raises(ConfigError):
            parse_config_text("just words")

    def test_relation_must_reference_declared_views(self):
        with pytest.raises(ConfigError):
            PipelineConfig.load(None, ["views=item,category", "relations=item-shop"])


def test_happy_path(tmp_path, log, capsys):
    wd = tmp_path / "w"
    pipeline(wd, log)
    summary = json.loads((wd / "ingest.json").read_text())
    assert summary["users"] == CORPUS.n_users and summary["skipped_rows"] == 0
    assert (wd / "sessions" / "category.tsv").exists()
    meta = json.loads((wd / "checkpoint" / "meta.json").read_text())
    assert sorted(meta["transforms"]) == ["I-C"]
    rows = (wd / "eval" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "metric,value,K,N" and len(rows) == 5
    assert "HitRate@5" in capsys.readouterr().out


def test_missing_input_leaves_nothing(tmp_path):
    wd = tmp_path / "w"
    assert run("ingest", wd, tmp_path / "nope.tsv") == 1
    assert not wd.exists() or not any(wd.rglob("*"))


def test_train_before_ingest_is_config_error(tmp_path):
    assert run("train", tmp_path / "w") == 1


def test_schema_error_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("user\titem\n1\t2\n")
    assert run("ingest", tmp_path / "w", bad) == 1


def test_rerun_is_byte_identical(tmp_path, log):
    a, b = tmp_path / "a", tmp_path / "b"
    pipeline(a, log)
    pipeline(b, log)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_three_views(tmp_path):
    log = tmp_path / "log3.tsv"
    events = [replace(e, shop_id=f"s{int(e.item_id.split('_')[1]) % 4}") for e in CORPUS.generate(1)]
    with open(log, "w") as fh:
        write_log(fh, events, with_shop=True)
    wd = tmp_path / "w"
    extra = ("--set", "views=item,category,shop")
    assert run("ingest", wd, log, *extra) == 0
    assert run("train", wd, None, *extra) == 0
    meta = json.loads((wd / "checkpoint" / "meta.json").read_text())
    assert sorted(meta["views"]) == ["category", "item", "shop"]
    assert sorted(meta["transforms"]) == ["I-C", "I-S"]
    assert len(meta["log_var"]) == 5


def test_single_view(tmp_path, log):
    wd = tmp_path / "w"
    extra = ("--set", "views=item")
    assert run("ingest", wd, log, *extra) == 0
    assert run("train", wd, None, *extra) == 0
    meta = json.loads((wd / "checkpoint" / "meta.json").read_text())
    assert meta["views"] == ["item"] and meta["transforms"] == {}


def test_similarity_map(tmp_path, log):
    wd = tmp_path / "w"
    assert run("ingest", wd, log) == 0
    assert run("train", wd) == 0
    assert run("similar", wd, None, "--set", "similar_K=4") == 0
    lines = (wd / "similar.tsv").read_text().splitlines()
    assert len(lines) == CORPUS.n_categories * CORPUS.items_per_category
    for line in lines:
        trig, cands = line.split("\t")
        pairs = [c.rsplit(":", 1) for c in cands.split(",")]
        assert len(pairs) <= 4 and trig not in [p[0] for p in pairs]
        scores = [float(p[1]) for p in pairs]
        assert scores == sorted(scores, reverse=True)


def test_metric_and_novelty(tmp_path, log):
    wd = tmp_path / "w"
    assert run("ingest", wd, log) == 0
    assert run("train", wd) == 0
    assert run("metric-train", wd, None, "--set", "metric.steps=20") == 0
    assert run("novelty-eval", wd) == 0
    rows = (wd / "metric" / "novelty.csv").read_text().splitlines()
    assert rows[0] == "ranking,novelty,K,N" and [r.split(",")[0] for r in rows[1:]] == ["raw", "metric"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, log):
    wd = tmp_path / "w"
    assert run("ingest", wd, log) == 0
    assert run("train", wd, None, "--set", "optimizer=sgd", "--set", "learning_rate=1e300", "--set", "clip_norm=1e300") == 2
    assert (wd / "checkpoint" / "meta.json").exists()


def test_memorisation_near_ceiling(tmp_path):
    # five groups of three items; each user replays their group's session before and after the cutoff
    lines = ["user_id\titem_id\tcategory_id\ttimestamp\tdwell_ms"]
    for u in range(30):
        group = [f"g{u % 5}_{j}" for j in range(3)]
        ts = 0
        for _ in range(7):
            for item in group:
                lines.append(f"u{u}\t{item}\tc{u % 5}\t{ts}\t5000")
                ts += 10
            ts += 7200
    log = tmp_path / "mem.tsv"
    log.write_text("\n".join(lines) + "\n")
    wd = tmp_path / "w"
    common = ["--workdir", str(wd), *FAST, "--set", "views=item", "--set", "cutoff=40000",
              "--set", "exclude_seen=false", "--set", "epochs=40", "--set", "K=3"]
    assert main(["ingest", "--input", str(log), *common]) == 0
    assert main(["train", *common]) == 0
    assert main(["eval", *common]) == 0
    metrics = dict(r.split(",")[:2] for r in (wd / "eval" / "metrics.csv").read_text().splitlines()[1:])
    assert float(metrics["HitRate"]) == 1.0
    assert float(metrics["Recall"]) >= 0.9
