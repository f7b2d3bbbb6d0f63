import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgraph.errors import ConfigError, DataError
from mvgraph.ingest import (
    HOUR,
    Event,
    Schema,
    Session,
    SessionRules,
    clean_events,
    collect_attributes,
    derive_view_sessions,
    merge_sessions,
    parse_events,
    read_sessions,
    sessionize_user,
    split_sessions,
    time_split,
    write_sessions,
)

MIN = 60
HEADER = "user_id\titem_id\tcategory_id\ttimestamp\tdwell_ms\n"


def ev(item, ts, dwell=5000, user="u", cat=None, rating=None):
    return Event(user, item, ts, category_id=cat, dwell=dwell, rating=rating)


def sess(nodes, start, end, user="u", view="item"):
    return Session(user, view, list(nodes), start, end)


class TestParseEvents:
    def test_empty_input(self):
        res = parse_events(io.StringIO(""))
        assert res.events == {} and res.skipped == 0

    def test_sorts_per_user(self):
        src = HEADER + "u1\tA\tC1\t30\t3000\nu1\tB\tC1\t10\t3000\nu1\tC\tC2\t20\t3000\n"
        res = parse_events(io.StringIO(src))
        assert list(res.events) == ["u1"]
        assert [e.timestamp for e in res.events["u1"]] == [10, 20, 30]
        assert [e.item_id for e in res.events["u1"]] == ["B", "C", "A"]

    def test_bad_timestamp_skipped(self):
        rows = [f"u1\tI{i}\tC\t{i}\t3000\n" for i in range(5)]
        rows[2] = "u1\tI2\tC\tnoon\t3000\n"
        res = parse_events(io.StringIO(HEADER + "".join(rows)))
        assert res.n_events == 4 and res.skipped == 1

    def test_missing_column_is_config_error(self):
        with pytest.raises(ConfigError, match="dwell_ms"):
            parse_events(io.StringIO("user_id\titem_id\tcategory_id\ttimestamp\n"))

    def test_bytes_and_custom_columns(self):
        schema = Schema(user_id="uid", item_id="movie", timestamp="ts", category_id="tag", dwell=None,
                        rating="rating", delimiter=",")
        raw = b"uid,movie,tag,ts,rating\n1,m1,drama,5,4.5\n1,m2,comedy,3,2\n"
        res = parse_events(io.BytesIO(raw), schema)
        assert [(e.item_id, e.rating) for e in res.events["1"]] == [("m2", 2.0), ("m1", 4.5)]

    def test_negative_values_and_short_rows_skipped(self):
        src = HEADER + "u\tA\tC\t-1\t3000\nu\tB\tC\t5\n u\tD\tC\t7\t-2\nu\tE\tC\t9\t3000\n"
        res = parse_events(io.StringIO(src))
        assert res.n_events == 1 and res.skipped == 3


class TestCleanEvents:
    def test_dwell_filter(self):
        events = [ev("a", 1, 1500), ev("b", 2, 2500), ev("c", 3, 1999)]
        assert [e.item_id for e in clean_events(events, SessionRules())] == ["b"]

    def test_identity_when_all_long(self):
        events = [ev("a", 1, 2000), ev("b", 2, 9000)]
        assert clean_events(events, SessionRules()) == events

    def test_missing_dwell_kept(self):
        events = [ev("a", 1, None), ev("b", 2, 100)]
        assert [e.item_id for e in clean_events(events, SessionRules())] == ["a"]

    def test_movielens_ratings(self):
        events = [ev("a", 1, rating=2), ev("b", 2, rating=3), ev("c", 3, rating=5)]
        kept = clean_events(events, SessionRules.for_movielens())
        assert [e.rating for e in kept] == [3, 5]


class TestSplitSessions:
    def test_idle_gap(self):
        events = [ev("a", 0), ev("b", 10 * MIN), ev("c", 10 * MIN + 2 * HOUR)]
        out = split_sessions(events, SessionRules())
        assert [s.nodes for s in out] == [["a", "b"], ["c"]]

    def test_exact_hour_gap_splits(self):
        out = split_sessions([ev("a", 0), ev("b", HOUR)], SessionRules())
        assert len(out) == 2

    def test_movielens_max_len(self):
        events = [ev(f"m{i}", i * 100) for i in range(120)]
        out = split_sessions(events, SessionRules.for_movielens())
        assert [len(s) for s in out] == [50, 50, 20]

    def test_duplicates_collapsed(self):
        out = split_sessions([ev("A", 0), ev("A", 5), ev("B", 9)], SessionRules())
        assert out[0].nodes == ["A", "B"]
        assert (out[0].start_ts, out[0].end_ts) == (0, 9)

    def test_app_boundaries(self):
        events = [ev("a", 0), ev("b", 60), ev("c", 120)]
        out = split_sessions(events, SessionRules(), boundaries=[100])
        assert [s.nodes for s in out] == [["a", "b"], ["c"]]

    def test_empty(self):
        assert split_sessions([], SessionRules()) == []


class TestMergeSessions:
    def test_short_gap_merges(self):
        out = merge_sessions([sess("ab", 0, 60), sess("cd", 60 + 20 * MIN, 2000)], SessionRules())
        assert [s.nodes for s in out] == [list("abcd")]
        assert (out[0].start_ts, out[0].end_ts) == (0, 2000)

    def test_long_gap_kept(self):
        a, b = sess("ab", 0, 60), sess("cd", 60 + 45 * MIN, 5000)
        assert [s.nodes for s in merge_sessions([a, b], SessionRules())] == [list("ab"), list("cd")]

    def test_seam_duplicate(self):
        out = merge_sessions([sess("xA", 0, 60), sess("AB", 60 + 10 * MIN, 1000)], SessionRules())
        assert out[0].nodes == ["x", "A", "B"]

    def test_chain_merges_left_to_right(self):
        ss = [sess("a", 0, 0), sess("b", 20 * MIN, 20 * MIN), sess("c", 40 * MIN, 40 * MIN)]
        out = merge_sessions(ss, SessionRules())
        assert [s.nodes for s in out] == [["a", "b", "c"]]


class TestDeriveViews:
    def test_category_projection(self):
        out = derive_view_sessions([sess(["I1", "I2", "I3"], 0, 9)], {"category": {"I1": "C2", "I2": "C2", "I3": "C1"}})
        assert out.sessions["category"][0].nodes == ["C2", "C1"]
        assert out.sessions["item"][0].nodes == ["I1", "I2", "I3"]

    def test_singleton(self):
        out = derive_view_sessions([sess(["I1"], 0, 0)], {"category": {"I1": "C"}})
        assert out.sessions["category"][0].nodes == ["C"]

    def test_injective_shop_map(self):
        out = derive_view_sessions([sess(["I4", "I5"], 0, 1)], {"shop": {"I4": "S1", "I5": "S2"}})
        assert out.sessions["shop"][0].nodes == ["S1", "S2"]

    def test_missing_skip_and_fatal(self):
        item_sessions = [sess(["I1", "I9", "I2"], 0, 1)]
        links = {"category": {"I1": "C1", "I2": "C2"}}
        out = derive_view_sessions(item_sessions, links)
        assert out.missing == 1 and out.sessions["category"][0].nodes == ["C1", "C2"]
        with pytest.raises(DataError):
            derive_view_sessions(item_sessions, links, on_missing="fatal")


def test_collect_attributes_conflict():
    with pytest.raises(DataError):
        collect_attributes([ev("I1", 0, cat="C1"), ev("I1", 5, cat="C2")], "category")


def test_rules_validation():
    with pytest.raises(ConfigError):
        SessionRules(merge_gap=4000, idle_split=3600)
    with pytest.raises(ConfigError):
        SessionRules(min_dwell_ms=0)


def test_time_split():
    events = {"u": [ev("a", 1), ev("b", 5), ev("c", 9)], "v": [ev("d", 10, user="v")]}
    train, test = time_split(events, 6)
    assert [e.item_id for e in train["u"]] == ["a", "b"]
    assert [e.item_id for e in test["u"]] == ["c"] and "v" not in train


def test_session_file_roundtrip():
    buf = io.StringIO()
    write_sessions(buf, [sess(["a", "b"], 0, 1, user="u1", view="category")])
    assert buf.getvalue() == "u1\tcategory\ta,b\n"
    back = read_sessions(io.StringIO(buf.getvalue()))
    assert back[0].nodes == ["a", "b"] and back[0].view == "category"


# --- properties -----------------------------------------------------------

event_lists = st.lists(
    st.tuples(
        st.sampled_from("ABCD"),
        st.integers(0, 3 * HOUR),
        st.one_of(st.none(), st.integers(0, 6000)),
    ),
    max_size=40,
)


def _events(raw):
    ts = 0
    out = []
    for item, gap, dwell in raw:
        ts += gap
        out.append(ev(item, ts, dwell, cat=item.lower()))
    return out


@settings(max_examples=200, deadline=None)
@given(event_lists)
def test_no_consecutive_duplicates_and_merge_idempotent(raw):
    rules = SessionRules()
    sessions = sessionize_user(_events(raw), rules)
    for s in sessions:
        assert s.nodes and all(a != b for a, b in zip(s.nodes, s.nodes[1:]))
        assert s.start_ts <= s.end_ts
    for a, b in zip(sessions, sessions[1:]):
        assert a.end_ts <= b.start_ts
    again = merge_sessions(sessions, rules)
    assert [(s.nodes, s.start_ts, s.end_ts) for s in again] == [(s.nodes, s.start_ts, s.end_ts) for s in sessions]


@settings(max_examples=200, deadline=None)
@given(event_lists)
def test_derived_sessions_no_longer_than_source(raw):
    events = _events(raw)
    sessions = sessionize_user(events, SessionRules())
    derived = derive_view_sessions(sessions, {"category": collect_attributes(events, "category")})
    for item_s, cat_s in zip(sessions, derived.sessions["category"]):
        assert len(cat_s) <= len(item_s)
        assert all(a != b for a, b in zip(cat_s.nodes, cat_s.nodes[1:]))


@settings(max_examples=200, deadline=None)
@given(event_lists)
def test_clean_is_order_preserving_subsequence(raw):
    events = _events(raw)
    kept = clean_events(events, SessionRules())
    it = iter(events)
    assert all(any(k is e for e in it) for k in kept)
