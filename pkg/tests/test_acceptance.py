"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are written
straight to the terminal even when output capture is on.
"""

import csv
import json
import random
import statistics
import time
import xml.etree.ElementTree as ET

import pytest
from scipy import stats as sps

import oracles
from recency_audit.corpus import Passage, RankedList
from recency_audit.experiment import PairedSerps
from recency_audit.injection import assigned_year, inject_listwise, inject_pairwise
from recency_audit.metrics import (
    aars,
    alrs,
    kendall_tau,
    rank_shifts,
    year_shift_groups,
    year_shift_topk,
)
from recency_audit.protocol import REPAIR, STRICT, parse_ranking, render_ranking
from recency_audit.report import emit_tau_plot, render_markdown
from recency_audit.runner import demo_config, resume_run, run_demo, run_experiment
from recency_audit.stats import ZeroVariance, t_test_one_sample

from test_report import synthetic_metrics
from test_runner import Interrupting


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    start = time.perf_counter()
    run_demo(out, seed=0, workers=2)
    elapsed = time.perf_counter() - start
    docs = {p.parent.name: json.loads(p.read_text()) for p in (out / "runs").glob("*/metrics.json")}
    return out, docs, elapsed


def _ids(n):
    return [f"p{i:03d}" for i in range(1, n + 1)]


def _paired(before, after):
    return PairedSerps("t", RankedList.from_ids("t", before), RankedList.from_ids("t", after),
                       oracles.years_for(before))


def test_01_metric_oracle_equivalence(verdict):
    rng = random.Random(1)
    start = time.perf_counter()
    mismatches = []
    for trial in range(1000):
        n = rng.randint(3, 100)
        before = _ids(n)
        after = before[:]
        rng.shuffle(after)
        p = _paired(before, after)
        sh = rank_shifts(before, after)
        years = p.years
        checks = [
            aars(sh) == float(oracles.aars(before, after)),
            alrs(sh) == oracles.alrs(before, after),
            abs(kendall_tau(before, after) - float(oracles.tau(before, after))) <= 1e-12,
        ]
        checks += [year_shift_topk(p, k) == float(oracles.ys_topk(before, after, years, k))
                   for k in (10, 20, 30, 50) if k <= n]
        if n >= 10:
            checks.append(year_shift_groups(p) == [float(x) for x in oracles.ysg(before, after, years)])
        if not all(checks):
            mismatches.append(trial)
    elapsed = time.perf_counter() - start
    verdict(1, "metric-oracle equivalence on 1,000 permutations",
            not mismatches and elapsed < 10, f"{len(mismatches)} mismatches, {elapsed:.2f}s")


def test_02_closed_form_reversal(verdict):
    before = _ids(100)
    p = _paired(before, before[::-1])
    sh = rank_shifts(p.before, p.after)
    got = (aars(sh), alrs(sh), kendall_tau(p.before, p.after), year_shift_topk(p, 10), year_shift_groups(p))
    want = (50, 99, -1, 90, [90, 70, 50, 30, 10, -10, -30, -50, -70, -90])
    verdict(2, "closed-form full reversal, N=100", got == want, f"got {got[:4]}")


def test_03_year_conservation(verdict):
    rng = random.Random(3)
    worst_groups = worst_k100 = 0.0
    identity_ok = True
    for _ in range(1000):
        before = _ids(100)
        after = before[:]
        rng.shuffle(after)
        p = _paired(before, after)
        groups = year_shift_groups(p)
        worst_groups = max(worst_groups, abs(sum(10 * g for g in groups)))
        worst_k100 = max(worst_k100, abs(year_shift_topk(p, 100)))
        identity_ok &= groups[0] == year_shift_topk(p, 10)
    ok = worst_groups <= 1e-9 and worst_k100 <= 1e-9 and identity_ok
    verdict(3, "year conservation and first group equals top-10", ok,
            f"max |sum| {worst_groups:.1e}, max |YS100| {worst_k100:.1e}")


def test_04_injection_schedule(verdict):
    passages = {pid: Passage(pid, f"text {pid}") for pid in _ids(100)}
    injected = inject_listwise(RankedList.from_ids("t", _ids(100)), passages)
    a, b = Passage("a", "alpha"), Passage("b", "beta")
    old, fresh = inject_pairwise(b, a)  # b won round 1
    checks = [
        assigned_year(1, 100) == 1926 and assigned_year(99, 100) == 2024 and assigned_year(100, 100) == 2025,
        injected[0].rendered_text.startswith("Published on 1926/01/01. "),
        injected[98].rendered_text.startswith("Published on 2024/01/01. "),
        injected[99].rendered_text.startswith("Published on 2025/01/01. "),
        all(ip.rendered_text.startswith(f"Published on {ip.year:04d}/01/01. ") for ip in injected),
        (old.id, old.rendered_text) == ("b", "Published on 1980/01/01. beta"),
        (fresh.id, fresh.rendered_text) == ("a", "Published on 2025/01/01. alpha"),
    ]
    verdict(4, "injection schedule fidelity", all(checks), f"{sum(checks)}/{len(checks)} checks")


def test_05_bias_direction_recovery(demo_run, verdict):
    _, docs, elapsed = demo_run
    rows = {}
    for lam in ("0.0", "0.25", "0.5", "1.0"):
        s = docs[f"recency_greedy-{lam}"]["collection"]["m_ys_topk"]["10"]
        rows[float(lam)] = (s["value"], s["p"])
    positive = all(rows[l][0] > 0 and rows[l][1] is not None and rows[l][1] < 0.05 for l in (0.25, 0.5, 1.0))
    monotone = rows[0.25][0] <= rows[0.5][0] <= rows[1.0][0]
    zero = rows[0.0][0] == 0
    detail = ", ".join(f"λ={l}: {v:.3f} (p={p if p is None else round(p, 4)})" for l, (v, p) in rows.items())
    verdict(5, "bias-direction recovery on the demo collection",
            positive and monotone and zero and elapsed < 30, f"{detail}; demo {elapsed:.1f}s")


def test_06_pairwise_extremes(demo_run, verdict):
    _, docs, _ = demo_run

    def pooled(name):
        c = docs[name]["collection"]
        return c["rr"]["All"]["mean"]["value"], c["pairs_evaluated"]

    fresh, _ = pooled("fresh_preferring")
    blind, _ = pooled("date_blind")
    coin, n = pooled("random")
    ok = fresh == 1.0 and blind == 0.0 and abs(coin - 0.5) <= 0.05 and n >= 400
    verdict(6, "pairwise reversal-rate extremes", ok,
            f"fresh {fresh:.4f}, blind {blind:.4f}, random {coin:.4f} over {n} trials")


def _fuzz_text(rng, n):
    parts = []
    for _ in range(rng.randint(0, 14)):
        r = rng.random()
        if r < 0.45:
            parts.append(f"[{rng.randint(-2, n + 3)}]")
        elif r < 0.55:
            parts.append(f"[ {rng.randint(0, n + 1)} ]")
        else:
            parts.append(rng.choice([" > ", ">", " ", "\n", "[", "]", "[]", "Ranking:", "x", "٣", ",", "[[", "]]"]))
    return "".join(parts)


def test_07_parser_robustness(verdict):
    rng = random.Random(7)
    failures = 0
    exercised = 0
    for n in (2, 10):
        for _ in range(10_000):
            text = _fuzz_text(rng, n)
            expected = oracles.repair_ranking(text, n)
            if expected is None:
                continue
            exercised += 1
            got = parse_ranking(text, n, REPAIR)
            if sorted(got) != list(range(1, n + 1)) or got != expected:
                failures += 1
        for _ in range(10_000):
            perm = list(range(1, n + 1))
            rng.shuffle(perm)
            text = render_ranking(perm)
            if parse_ranking(text, n, STRICT) != tuple(perm) or parse_ranking(text, n, REPAIR) != tuple(perm):
                failures += 1
    verdict(7, "parser robustness under fuzzing", failures == 0 and exercised > 5000,
            f"{failures} failures, {exercised} fuzzed strings with a valid id")


def test_08_t_test(verdict):
    res = t_test_one_sample([1, 2, 3, 4, 5], 0.0)
    ref = sps.ttest_1samp([1, 2, 3, 4, 5], 0.0)
    try:
        t_test_one_sample([3.0, 3.0, 3.0], 3.0)
        raised = False
    except ZeroVariance:
        raised = True
    ok = round(res.statistic, 4) == 4.2426 and res.df == 4 and abs(res.pvalue - ref.pvalue) < 1e-3 and raised
    verdict(8, "one-sample t-test", ok, f"t={res.statistic:.4f}, df={res.df}, p={res.pvalue:.4f}")


def _files(root, names):
    return {p.relative_to(root).as_posix(): p.read_bytes() for name in names for p in sorted(root.rglob(name))}


def test_09_determinism_and_resume(tmp_path, verdict):
    run_demo(tmp_path / "a", seed=0, workers=2)
    run_demo(tmp_path / "b", seed=0, workers=4)
    names = ("metrics.json", "tables.md", "tables.csv", "tables.json")
    same_demo = _files(tmp_path / "a", names) == _files(tmp_path / "b", names)

    cfg = demo_config("mixed", {"kind": "recency_greedy", "lam": 0.5, "noise": 2.0},
                      listwise=True, pairwise=True, workers=1)
    full = Interrupting(cfg.backend.mock_spec())
    run_experiment(cfg, tmp_path / "full", inner_backend=full)
    first = Interrupting(cfg.backend.mock_spec(), stop_at=full.calls // 2)
    try:
        run_experiment(cfg, tmp_path / "cut", inner_backend=first)
        interrupted = False
    except KeyboardInterrupt:
        interrupted = True
    second = Interrupting(cfg.backend.mock_spec())
    resume_run(tmp_path / "cut", inner_backend=second)
    names = ("metrics.json", "*.md", "*.csv", "*.svg", "serps/*.json", "pairs/*.json")
    same_resume = _files(tmp_path / "cut", names) == _files(tmp_path / "full", names)
    no_dupes = first.calls + second.calls == full.calls
    verdict(9, "determinism and interrupt/resume", same_demo and interrupted and same_resume and no_dupes,
            f"calls {first.calls}+{second.calls} vs {full.calls}")


def test_10_report_fidelity(tmp_path, verdict):
    md = render_markdown(synthetic_metrics())
    blocks = {b.split("\n")[0]: b for b in md.split("### ")[1:]}
    heads = {title.split(".")[0]: b.split("\n\n")[1].split("\n")[0] for title, b in blocks.items()}
    checks = [
        heads["Table 1"] == "| Model | DL21 mAARS | DL21 ALRS_all | DL22 mAARS | DL22 ALRS_all |",
        heads["Table 2"] == "| Model | Collection | K=10 | K=20 | K=30 | K=50 |",
        heads["Table 3"].count("|") == 13 and "| 1–10 |" in heads["Table 3"] and "| 91–100 |" in heads["Table 3"],
        heads["Table 4"] == "| Model | Collection | Relevance | Mean RR | Max RR |",
        "| gpt-4 | 3.1416\\* | 60† |" in md,
        "| **+7.123\\*** |" in md and "| -0.987\\* |" in md,
        "| 0.1235\\* | 0.5000 |" in md,
    ]
    taus = {"m1": {f"t{i}": i / 10 for i in range(7)}, "m2": {f"t{i}": -i / 20 for i in range(5)}}
    emit_tau_plot(taus, tmp_path / "tau.svg", tmp_path / "tau.csv")
    root = ET.parse(tmp_path / "tau.svg").getroot()
    boxes = [g for g in root.iter("{http://www.w3.org/2000/svg}g") if g.get("class") == "box"]
    rows = list(csv.DictReader(open(tmp_path / "tau.csv")))
    checks += [
        root.tag == "{http://www.w3.org/2000/svg}svg" and len(boxes) == 2,
        float(boxes[0].get("data-median")) == statistics.median(taus["m1"].values()),
        sorted((r["model"], r["topic"]) for r in rows) == sorted((m, t) for m in taus for t in taus[m]),
    ]
    verdict(10, "report tables and tau plot fidelity", all(checks), f"{sum(checks)}/{len(checks)} checks")
