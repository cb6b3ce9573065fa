"""Run-directory orchestration: experiments, resume, metrics recomputation, demo."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .backend import BackendError, MockBackend, ParseStats, RemoteBackend, Transcript, stable_hash
from .config import ConfigError, RunConfig, load_snapshot, save_snapshot, validate_paths
from .corpus import (
    CorpusError,
    Passage,
    Qrels,
    RankedList,
    Topic,
    filter_judged_topics,
    load_passages,
    load_qrels,
    load_run,
    load_topics,
    truncate_top_k,
)
from .experiment import (
    CachedBackend,
    PairedSerps,
    enumerate_pairs,
    pairs_from_dict,
    pairs_to_dict,
    run_listwise,
    run_pairwise,
)
from .metrics import TopicMetrics, collection_metrics, listwise_topic_metrics, topic_reversal_counts
from .protocol import ParseError, template_digest
from .report import write_report

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
LISTWISE = "listwise"
PAIRWISE = "pairwise"


@dataclass
class Inputs:
    topics: dict[str, Topic]
    runs: dict[str, RankedList]
    qrels: Qrels
    passages: dict[str, Passage]


def load_inputs(cfg: RunConfig) -> Inputs:
    validate_paths(cfg)
    p = cfg.paths
    topics = load_topics(p.topics)
    qrels = load_qrels(p.qrels, max_grade=cfg.experiment.max_grade)
    runs = filter_judged_topics(load_run(p.runs), qrels)
    missing = sorted(set(runs) - set(topics))
    if missing:
        raise CorpusError(f"run topics without query text: {', '.join(missing[:5])}")
    runs = {tid: truncate_top_k(r, cfg.experiment.top_k) for tid, r in runs.items()}
    return Inputs(topics, runs, qrels, load_passages(p.passages))


def config_hash(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    # where results are written never changes them
    d["paths"].pop("output", None)
    d["experiment"].pop("workers", None)
    return stable_hash(d)[:16]


def backend_identity(cfg: RunConfig) -> dict:
    b = cfg.backend
    return b.remote_config().identity() if b.kind == "remote" else MockBackend(b.mock_spec()).identity()


def make_backend(cfg: RunConfig, transcript: Transcript | None, inner=None) -> CachedBackend:
    if inner is None:
        b = cfg.backend
        inner = RemoteBackend(b.remote_config(), transcript=transcript) if b.kind == "remote" else MockBackend(b.mock_spec())
    return CachedBackend(inner, transcript)


def _write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", "utf-8")
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(path.read_text("utf-8"))


def _topic_file(run_dir: Path, stage: str, tid: str) -> Path:
    sub = "serps" if stage == LISTWISE else "pairs"
    return run_dir / sub / f"{tid}.json"


def pending_work(run_dir, cfg: RunConfig, topic_ids) -> dict[str, list[str]]:
    """stage -> topic ids that still lack a valid result file."""
    run_dir = Path(run_dir)
    stages = [s for s, on in ((LISTWISE, cfg.experiment.listwise), (PAIRWISE, cfg.experiment.pairwise)) if on]
    out = {}
    for stage in stages:
        todo = []
        for tid in sorted(topic_ids):
            path = _topic_file(run_dir, stage, tid)
            try:
                _read_json(path)
            except FileNotFoundError:
                todo.append(tid)
            except (OSError, ValueError):
                logger.warning("corrupt result file %s; topic will be rerun", path)
                todo.append(tid)
        out[stage] = todo
    return out


@dataclass
class RunOutcome:
    run_dir: Path
    backend_calls: int
    completed: dict[str, list[str]] = field(default_factory=dict)
    failed: dict[str, dict[str, str]] = field(default_factory=dict)
    metrics: dict | None = None


def _run_topic(stage: str, tid: str, cfg: RunConfig, inputs: Inputs, backend, run_dir: Path) -> None:
    topic = inputs.topics[tid]
    sched = cfg.schedule.date_schedule()
    mode = cfg.experiment.parse_mode
    if stage == LISTWISE:
        paired = run_listwise(backend, topic, inputs.runs[tid], inputs.passages, sched, cfg.window, mode)
        _write_json(_topic_file(run_dir, stage, tid), paired.to_dict())
    else:
        exp = cfg.experiment
        pairs = enumerate_pairs(inputs.qrels, tid, exp.level_map, exp.pair_cap, exp.seed, available=inputs.passages)
        stats = ParseStats()
        trials = run_pairwise(backend, topic, pairs, inputs.passages, cfg.schedule.old_year,
                              cfg.schedule.fresh_year, sched, mode, stats)
        _write_json(_topic_file(run_dir, stage, tid), pairs_to_dict(tid, trials, stats.to_dict()))


def run_experiment(cfg: RunConfig, run_dir, *, inner_backend=None, resume: bool = False) -> RunOutcome:
    """Execute (or continue) the configured experiments in `run_dir`."""
    run_dir = Path(run_dir)
    snapshot = run_dir / "config.snapshot"
    if snapshot.exists():
        previous = load_snapshot(snapshot)
        if config_hash(previous) != config_hash(cfg):
            if resume:
                cfg = previous
            else:
                raise ConfigError("--output", f"{run_dir} holds a run with a different configuration; pick another --output or delete it")
    (run_dir / "serps").mkdir(parents=True, exist_ok=True)
    (run_dir / "pairs").mkdir(parents=True, exist_ok=True)
    save_snapshot(cfg, snapshot)

    inputs = load_inputs(cfg)
    transcript = Transcript(run_dir / "transcripts.jsonl")
    backend = make_backend(cfg, transcript, inner_backend)
    todo = pending_work(run_dir, cfg, inputs.runs)
    if any(todo.values()):
        backend.check_credentials()
    logger.info("pending work: %s (cached responses: %d)", {k: len(v) for k, v in todo.items()}, len(backend))

    jobs = [(stage, tid) for stage, tids in todo.items() for tid in tids]
    failed: dict[str, dict[str, str]] = {}
    completed: dict[str, list[str]] = {}

    def work(job):
        stage, tid = job
        try:
            _run_topic(stage, tid, cfg, inputs, backend, run_dir)
            return stage, tid, None
        except (BackendError, ParseError, CorpusError) as exc:
            logger.error("%s topic %s failed: %s", stage, tid, exc)
            return stage, tid, f"{type(exc).__name__}: {exc}"

    pool = ThreadPoolExecutor(max_workers=cfg.experiment.workers)
    try:
        futures = [pool.submit(work, job) for job in jobs]
        for fut in futures:
            stage, tid, err = fut.result()
            if err is None:
                completed.setdefault(stage, []).append(tid)
            else:
                failed.setdefault(stage, {})[tid] = err
    except BaseException:
        # Ctrl-C or a crash: drop queued topics; finished ones are already on disk
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown()
    _write_json(run_dir / "failures.json", {"schema_version": 1, "failures": failed})
    outcome = RunOutcome(run_dir, backend.calls, completed, failed)
    outcome.metrics = compute_metrics(run_dir)
    write_report([outcome.metrics], run_dir, title=f"Recency-bias audit: {outcome.metrics['collection']['model']}")
    return outcome


def resume_run(run_dir, *, inner_backend=None) -> RunOutcome:
    run_dir = Path(run_dir)
    snapshot = run_dir / "config.snapshot"
    if not snapshot.exists():
        raise ConfigError("run_dir", f"{run_dir} has no config.snapshot")
    return run_experiment(load_snapshot(snapshot), run_dir, inner_backend=inner_backend, resume=True)


def _load_results(run_dir: Path):
    serps = {}
    for path in sorted((run_dir / "serps").glob("*.json")):
        paired = PairedSerps.from_dict(_read_json(path))
        serps[paired.topic_id] = paired
    trials, pair_stats = [], {}
    for path in sorted((run_dir / "pairs").glob("*.json")):
        doc = _read_json(path)
        trials.extend(pairs_from_dict(doc))
        pair_stats[doc["topic_id"]] = doc.get("parse_stats", {})
    return serps, trials, pair_stats


def compute_metrics(run_dir) -> dict:
    """Recompute metrics.json from persisted SERPs and trials; no backend access."""
    run_dir = Path(run_dir)
    cfg = load_snapshot(run_dir / "config.snapshot")
    serps, trials, pair_stats = _load_results(run_dir)
    failures_path = run_dir / "failures.json"
    failures = _read_json(failures_path)["failures"] if failures_path.exists() else {}

    ks = list(cfg.experiment.ks)
    topics: dict[str, TopicMetrics] = {}
    for tid, paired in serps.items():
        topics[tid] = listwise_topic_metrics(paired, ks)
    for tid, per_level in topic_reversal_counts(trials).items():
        base = topics.get(tid, TopicMetrics(tid))
        topics[tid] = dataclasses.replace(base, rr_by_level=per_level)

    stats = ParseStats()
    for paired in serps.values():
        stats.merge(ParseStats(**paired.parse_stats))
    for ps in pair_stats.values():
        stats.merge(ParseStats(**ps))

    cm = collection_metrics(
        cfg.backend.display_name, cfg.collection, topics, trials, ks,
        excluded_topics={stage: list(t) for stage, t in failures.items()},
    )
    doc = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "provenance": {
            "config_hash": config_hash(cfg),
            "template_version": template_digest(),
            "backend": backend_identity(cfg),
            "window": dataclasses.asdict(cfg.window),
            "schedule": dataclasses.asdict(cfg.schedule),
        },
        "collection": cm.to_dict(),
        "topics": {tid: topics[tid].to_dict() for tid in sorted(topics)},
        "parse_stats": stats.to_dict(),
        "failures": failures,
    }
    _write_json(run_dir / "metrics.json", doc)
    return doc


def report_runs(run_dirs, out_dir) -> Path:
    docs = []
    for d in run_dirs:
        path = Path(d) / "metrics.json"
        if not path.exists():
            raise ConfigError("run_dir", f"{d} has no metrics.json; run `metrics` first")
        docs.append(_read_json(path))
    return write_report(docs, out_dir)


# -- bundled demo --------------------------------------------------------------

DEMO_NOISE = 2.0

DEMO_LISTWISE = [
    ("identity", {"kind": "identity"}),
    ("lexical_overlap", {"kind": "lexical_overlap"}),
    ("recency_greedy-0.0", {"kind": "recency_greedy", "lam": 0.0, "noise": DEMO_NOISE}),
    ("recency_greedy-0.25", {"kind": "recency_greedy", "lam": 0.25, "noise": DEMO_NOISE}),
    ("recency_greedy-0.5", {"kind": "recency_greedy", "lam": 0.5, "noise": DEMO_NOISE}),
    ("recency_greedy-1.0", {"kind": "recency_greedy", "lam": 1.0, "noise": DEMO_NOISE}),
]

DEMO_PAIRWISE = [
    ("date_blind", {"kind": "date_blind"}),
    ("fresh_preferring", {"kind": "fresh_preferring"}),
    ("random", {"kind": "random"}),
    ("recency_greedy-0.75", {"kind": "recency_greedy", "lam": 0.75}),
]


def demo_data_dir() -> Path:
    return Path(str(resources.files(__package__).joinpath("data", "demo")))


def demo_config(name: str, backend: dict, *, listwise: bool, pairwise: bool, seed: int = 0,
                workers: int = 2) -> RunConfig:
    from .config import config_from_dict

    data = demo_data_dir()
    b = dict(backend)
    b.setdefault("seed", seed)
    b.setdefault("label", name)
    return config_from_dict({
        "collection": "demo",
        "paths": {
            "runs": str(data / "run.bm25.trec"),
            "qrels": str(data / "qrels.txt"),
            "passages": str(data / "passages.tsv"),
            "topics": str(data / "topics.tsv"),
        },
        "backend": b,
        "experiment": {"listwise": listwise, "pairwise": pairwise, "seed": seed, "workers": workers},
    })


def run_demo(out_dir, *, seed: int = 0, workers: int = 2, strict: bool = False) -> list[RunOutcome]:
    out_dir = Path(out_dir)
    outcomes = []
    plans = [(n, b, True, False) for n, b in DEMO_LISTWISE] + [(n, b, False, True) for n, b in DEMO_PAIRWISE]
    for name, backend, lw, pw in plans:
        cfg = demo_config(name, backend, listwise=lw, pairwise=pw, seed=seed, workers=workers)
        if strict:
            cfg.experiment.parse_mode = "strict"
        outcomes.append(run_experiment(cfg, out_dir / "runs" / name))
    write_report([o.metrics for o in outcomes], out_dir, title="Recency-bias audit: synthetic demo collection")
    return outcomes
