import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import make_passages, make_ranked
from recency_audit.backend import BackendConfig, MockBackend, MockSpec, RemoteBackend, Transcript
from recency_audit.corpus import Passage, Qrels, Topic
from recency_audit.experiment import (
    CachedBackend,
    PairedSerps,
    PairTrial,
    WindowPlan,
    check_level_map,
    enumerate_pairs,
    pairs_from_dict,
    pairs_to_dict,
    run_listwise,
    run_pairwise,
    slide_rerank,
)
from recency_audit.metrics import listwise_topic_metrics, year_shift_topk
from recency_audit.protocol import plain_passage

TOPIC = Topic("t1", "topic words")


def _ids(items):
    return [plain_passage(p).id for p in items]


@given(st.integers(2, 130), st.integers(2, 20).flatmap(lambda w: st.tuples(st.just(w), st.integers(1, w))))
def test_spans_match_oracle_and_cover_everything(n, ws):
    w, s = ws
    spans = WindowPlan(w, s).spans(n)
    assert [a for a, _ in spans] == oracles.window_starts(n, w, s)
    assert spans[-1][0] == 0
    covered = set()
    for a, b in spans:
        assert b - a == min(w, n)
        covered.update(range(a, b))
    assert covered == set(range(n))


def test_default_spans_for_hundred():
    spans = WindowPlan().spans(100)
    assert spans[0] == (90, 100) and spans[-1] == (0, 10) and len(spans) == 19


def test_plan_validation():
    for kw in ({"window": 1}, {"stride": 0}, {"window": 4, "stride": 5}, {"direction": "top_down"}, {"passes": 0}):
        with pytest.raises(ValueError):
            WindowPlan(**kw)


def test_identity_backend_keeps_order():
    passages = make_passages(37)
    items = list(passages.values())
    assert slide_rerank(MockBackend(MockSpec("identity")), TOPIC, items) == items


def test_reverse_backend_single_window():
    passages = make_passages(12)
    items = list(passages.values())
    out = slide_rerank(MockBackend(MockSpec("reverse")), TOPIC, items, WindowPlan(window=12, stride=12))
    assert out == items[::-1]


_kinds = st.sampled_from(["identity", "reverse", "lexical_overlap", "date_blind", "random"])


@given(_kinds, st.integers(1, 60), st.integers(2, 12).flatmap(lambda w: st.tuples(st.just(w), st.integers(1, w))))
def test_slide_rerank_is_a_permutation(kind, n, ws):
    passages = make_passages(n)
    items = list(passages.values())
    out = slide_rerank(MockBackend(MockSpec(kind)), TOPIC, items, WindowPlan(*ws))
    assert sorted(_ids(out)) == sorted(passages)


def test_run_listwise_identity():
    passages = make_passages(100)
    paired = run_listwise(MockBackend(MockSpec("identity")), TOPIC, make_ranked(passages), passages)
    assert paired.before.ids == paired.after.ids == sorted(passages)
    m = listwise_topic_metrics(paired)
    assert m.aars == 0 and m.tau == 1


def test_run_listwise_reverse_closed_form():
    passages = make_passages(20)
    paired = run_listwise(MockBackend(MockSpec("reverse")), TOPIC, make_ranked(passages), passages,
                          plan=WindowPlan(20, 20))
    assert paired.after.ids == paired.before.ids[::-1]
    rb, ra = paired.before.rank_of(), paired.after.rank_of()
    assert all(ra[p] - rb[p] == 21 - 2 * rb[p] for p in rb)


def test_recency_lambda_zero_is_noop():
    passages = make_passages(100)
    paired = run_listwise(MockBackend(MockSpec("recency_greedy", lam=0.0, noise=2.0)), TOPIC,
                          make_ranked(passages), passages)
    assert paired.after.ids == paired.before.ids


def test_recency_lambda_one_matches_window_simulation():
    passages = make_passages(100)
    paired = run_listwise(MockBackend(MockSpec("recency_greedy", lam=1.0)), TOPIC, make_ranked(passages), passages)
    # undated first pass: every score ties, so `before` keeps the baseline order
    assert paired.before.ids == sorted(passages)
    years = oracles.years_for(paired.before.ids)
    expected = oracles.simulate_sort_windows(paired.before.ids, key=years.get)
    assert paired.after.ids == expected
    assert paired.after.ids[0] == paired.before.ids[-1]
    ys10 = year_shift_topk(paired, 10)
    assert ys10 > 0
    assert ys10 == float(oracles.ys_topk(paired.before.ids, expected, years, 10))


def test_paired_years_increase_with_before_rank():
    passages = make_passages(30)
    paired = run_listwise(MockBackend(MockSpec("lexical_overlap")), TOPIC, make_ranked(passages), passages)
    ys = [paired.years[p] for p in paired.before.ids]
    assert ys == sorted(ys) and len(set(ys)) == 30


def test_paired_serps_roundtrip_and_schema():
    passages = make_passages(12)
    paired = run_listwise(MockBackend(MockSpec("reverse")), TOPIC, make_ranked(passages), passages)
    d = paired.to_dict()
    assert PairedSerps.from_dict(d) == paired
    with pytest.raises(ValueError):
        PairedSerps.from_dict({**d, "schema_version": 99})


def test_enumerate_pairs():
    qrels = Qrels({("t", "d3"): 1, ("t", "d1"): 1, ("t", "d2"): 1, ("t", "x"): 2, ("t", "y"): 3, ("t", "z"): 3})
    assert enumerate_pairs(qrels, "t") == [(1, "d1", "d2"), (1, "d1", "d3"), (1, "d2", "d3")]
    many = Qrels({("t", f"p{i}"): 0 for i in range(10)})
    assert len(enumerate_pairs(many, "t")) == 45
    capped = enumerate_pairs(many, "t", cap=7, seed=3)
    assert len(capped) == 7 and capped == enumerate_pairs(many, "t", cap=7, seed=3)
    assert capped == sorted(capped)
    with pytest.raises(ValueError):
        check_level_map({1: 0, 2: 0})


def test_enumerate_skips_missing_passages():
    qrels = Qrels({("t", "a"): 0, ("t", "b"): 0, ("t", "c"): 0})
    assert enumerate_pairs(qrels, "t", available={"a": 1, "b": 1}) == [(0, "a", "b")]


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(0, 3), max_size=12))
def test_pairs_never_mix_grades(grades):
    qrels = Qrels({("t", pid): g for pid, g in grades.items()})
    for level, a, b in enumerate_pairs(qrels, "t", {0: 0, 1: 1, 2: 2, 3: 3}):
        assert grades[a] == grades[b] == level and a < b


def _store(ids):
    return {i: Passage(i, f"content {i}") for i in ids}


def test_pairwise_extremes():
    store = _store(["a", "b", "c"])
    pairs = [(1, "a", "b"), (1, "a", "c"), (1, "b", "c")]
    blind = run_pairwise(MockBackend(MockSpec("date_blind")), TOPIC, pairs, store)
    assert not any(t.reversed for t in blind)
    fresh = run_pairwise(MockBackend(MockSpec("fresh_preferring")), TOPIC, pairs, store)
    assert all(t.reversed for t in fresh)


class _Scripted:
    """Answers pairwise prompts from a script keyed on (a_id, round)."""

    def __init__(self, script):
        self.script = script

    def respond_pairwise(self, prompt, attempt=0):
        rnd = 2 if "Published on" in prompt.user else 1
        return self.script[(prompt.a_id, rnd)]


def test_mixed_fixture_one_flip():
    store = _store(["a", "b", "c", "d", "e"])
    pairs = [(0, "a", "e"), (0, "b", "e"), (0, "c", "e"), (0, "d", "e")]
    script = {("a", 1): "A", ("a", 2): "A", ("b", 1): "B", ("b", 2): "B",
              ("c", 1): "A", ("c", 2): "B", ("d", 1): "B", ("d", 2): "B"}
    trials = run_pairwise(_Scripted(script), TOPIC, pairs, store)
    assert sum(t.reversed for t in trials) == 1
    assert [t.a_id for t in trials if t.reversed] == ["c"]


def test_unparseable_pair_is_excluded():
    store = _store(["a", "b"])
    trials = run_pairwise(_Scripted({("a", 1): "no idea"}), TOPIC, [(0, "a", "b")], store)
    assert trials[0].excluded and not trials[0].reversed


def test_pairs_roundtrip():
    trials = [PairTrial("t", 1, "a", "b", "A", "B"), PairTrial("t", 1, "a", "c", None, None, excluded=True)]
    assert pairs_from_dict(pairs_to_dict("t", trials)) == trials


class _Counting:
    def __init__(self, spec):
        self.mock = MockBackend(spec)
        self.calls = 0

    def identity(self):
        return self.mock.identity()

    def check_credentials(self):
        pass

    def respond_listwise(self, prompt, attempt=0):
        self.calls += 1
        return self.mock.respond_listwise(prompt, attempt)


def test_cache_replays_from_transcript(tmp_path):
    passages = make_passages(30)
    tr = Transcript(tmp_path / "t.jsonl")
    inner = _Counting(MockSpec("reverse"))
    first = run_listwise(CachedBackend(inner, tr), TOPIC, make_ranked(passages), passages)
    n = inner.calls
    assert n > 0
    inner2 = _Counting(MockSpec("reverse"))
    cached = CachedBackend(inner2, Transcript(tmp_path / "t.jsonl"))
    again = run_listwise(cached, TOPIC, make_ranked(passages), passages)
    assert again == first and inner2.calls == 0 and cached.calls == 0


class _FixedRemote(RemoteBackend):
    """Remote identity, canned answers, no network."""

    def __init__(self, config):
        super().__init__(config)
        self.calls = 0

    def respond_listwise(self, prompt, attempt=0):
        self.calls += 1
        return "[1] > [2]"


def test_cache_misses_when_temperature_changes(tmp_path):
    passages = make_passages(2)
    path = tmp_path / "t.jsonl"
    warm = _FixedRemote(BackendConfig(temperature=0.0))
    run_listwise(CachedBackend(warm, Transcript(path)), TOPIC, make_ranked(passages), passages)
    same = _FixedRemote(BackendConfig(temperature=0.0, timeout=3))
    run_listwise(CachedBackend(same, Transcript(path)), TOPIC, make_ranked(passages), passages)
    hotter = _FixedRemote(BackendConfig(temperature=0.7))
    run_listwise(CachedBackend(hotter, Transcript(path)), TOPIC, make_ranked(passages), passages)
    assert warm.calls == 2 and same.calls == 0 and hotter.calls == 2
