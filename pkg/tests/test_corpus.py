import json
import random
from collections import Counter
from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from extremism_eleven.corpus import (DEFAULT_MIN_DATE, FilterConfig, JoiningRule, Post, RecordError,
                                     activity_filter, apply_filters, assign_random_t0, build_timeline,
                                     drop_reason, group_by_user, iter_jsonl, parse_post_record, read_posts,
                                     utc_month, write_posts, write_timelines)
from conftest import DAY, make_post


def ts(y, m, d=1):
    return int(datetime(y, m, d, tzinfo=timezone.utc).timestamp())


def line(**kw):
    rec = {"id": "a", "user": "u", "forum": "f", "created_utc": ts(2015, 1), "text": "one two"}
    rec.update(kw)
    return json.dumps(rec)


def test_parse_minimal_record():
    p = parse_post_record(line(lang="en", extra="ignored"))
    assert p == Post("a", "u", "f", ts(2015, 1), "one two", "en")


@pytest.mark.parametrize("bad, msg", [
    ("{not json", "malformed"),
    ("[1, 2]", "not a JSON object"),
    (json.dumps({"id": "a", "user": "u"}), "missing"),
    (line(created_utc="2015"), "created_utc"),
    (line(created_utc=1.5), "created_utc"),
    (line(created_utc=True), "created_utc"),
    (line(text="   "), "text"),
    (line(id=""), "id"),
    (line(lang=3), "lang"),
])
def test_parse_rejects(bad, msg):
    with pytest.raises(RecordError, match=msg):
        parse_post_record(bad, 7)


def test_record_error_carries_line_number():
    with pytest.raises(RecordError) as err:
        list(iter_jsonl([line(), "", "{"]))
    assert err.value.line_no == 3


def test_duplicate_ids_rejected():
    with pytest.raises(RecordError, match="duplicate"):
        list(iter_jsonl([line(), line()]))


def test_lenient_mode_collects_errors():
    errors = []
    posts = list(iter_jsonl([line(), "{", line(id="b"), line()], lenient=True, errors=errors))
    assert [p.id for p in posts] == ["a", "b"]
    assert [e.line_no for e in errors] == [2, 4]


def test_write_read_round_trip(tmp_path):
    posts = [make_post("x", text="héllo wörld " * 6, lang="en"), make_post("y", ts=1_600_000_000)]
    write_posts(tmp_path / "p.jsonl", posts)
    assert read_posts(tmp_path / "p.jsonl") == posts


def test_filters_word_count_boundary():
    cfg = FilterConfig()
    nine = make_post("a", text=" ".join("w" * 9))
    ten = make_post("b", text=" ".join("w" * 10))
    assert drop_reason(nine, cfg) == "word_count"
    assert drop_reason(ten, cfg) is None


def test_filters_date_boundary():
    cfg = FilterConfig()
    assert drop_reason(make_post("a", ts=DEFAULT_MIN_DATE - 1), cfg) == "date"
    assert drop_reason(make_post("a", ts=DEFAULT_MIN_DATE), cfg) is None
    assert DEFAULT_MIN_DATE == ts(2010, 1, 1)


def test_filters_lang_and_forum():
    cfg = FilterConfig(forum_allowlist={"keep"})
    assert drop_reason(make_post("a", forum="keep", lang="de"), cfg) == "lang"
    assert drop_reason(make_post("a", forum="keep", lang=None), cfg) is None
    assert drop_reason(make_post("a", forum="other", lang="en"), cfg) == "forum"


def test_apply_filters_tallies_first_reason():
    drops = Counter()
    posts = [make_post("a", text="short", ts=1), make_post("b"), make_post("c", lang="fr")]
    kept = list(apply_filters(posts, FilterConfig(), drops))
    assert [p.id for p in kept] == ["b"]
    assert drops == Counter(word_count=1, lang=1)


def test_utc_month():
    assert utc_month(ts(2016, 3, 31)) - utc_month(ts(2016, 1, 1)) == 2


def test_activity_filter_consecutive_months():
    # active in Jan, Feb, Apr, Jun: any 3-month window holds at most 2 active months
    posts = {"u": [make_post(str(i), ts=ts(2016, m, 5)) for i, m in enumerate([1, 2, 4, 6])]}
    assert activity_filter(posts, 4, 2, 3) == {"u"}
    assert activity_filter(posts, 4, 3, 3) == set()
    assert activity_filter(posts, 5) == set()
    assert activity_filter(posts, 4, 4, 6) == {"u"}
    with pytest.raises(ValueError):
        activity_filter(posts, 1, 5, 3)


def test_joiner_t0_is_first_target_post():
    posts = [make_post("1", forum="a", ts=100), make_post("3", forum="T", ts=300),
             make_post("2", forum="b", ts=200), make_post("4", forum="T", ts=400)]
    tl = build_timeline(posts, JoiningRule({"T"}, "joiner"))
    assert tl.t0 == 300
    assert [p.id for p in tl.posts] == ["1", "2", "3", "4"]


def test_joiner_without_target_has_no_t0():
    tl = build_timeline([make_post("1", forum="a")], JoiningRule({"T"}, "joiner"))
    assert tl.t0 is None


def test_control_t0_first_new_forum():
    posts = [make_post("1", forum="a", ts=100), make_post("2", forum="a", ts=200),
             make_post("3", forum="b", ts=300), make_post("4", forum="c", ts=400)]
    assert build_timeline(posts, JoiningRule(set(), "control")).t0 == 300
    single = [make_post("1", forum="a", ts=100), make_post("2", forum="a", ts=200)]
    assert build_timeline(single, JoiningRule(set(), "control")).t0 == 100


def test_timeline_rejects_mixed_users():
    with pytest.raises(ValueError):
        build_timeline([make_post("1", user="a"), make_post("2", user="b")], JoiningRule())


def test_assign_random_t0_uses_a_post_time():
    posts = [make_post(str(i), ts=1000 + i * DAY) for i in range(20)]
    tl = build_timeline(posts, JoiningRule(set(), "control"))
    new = assign_random_t0(tl, random.Random(3))
    assert new.t0 in {p.created_utc for p in posts}
    assert new.posts == tl.posts


def test_write_timelines(tmp_path):
    tl = build_timeline([make_post("1", forum="T")], JoiningRule({"T"}))
    write_timelines(tmp_path / "t.json", [tl])
    assert json.loads((tmp_path / "t.json").read_text()) == [
        {"user": "u", "cohort": "joiner", "t0": tl.t0, "post_ids": ["1"]}]


@given(st.lists(st.tuples(st.integers(1, 10**9), st.sampled_from("abcT")), min_size=1, max_size=30))
def test_timeline_sorted_and_t0_is_a_post_time(items):
    posts = [make_post(f"p{i}", ts=t, forum=f) for i, (t, f) in enumerate(items)]
    for cohort in ("joiner", "control"):
        tl = build_timeline(posts, JoiningRule({"T"}, cohort))
        times = [p.created_utc for p in tl.posts]
        assert times == sorted(times)
        if tl.t0 is not None:
            assert tl.t0 in times
        if cohort == "joiner":
            assert (tl.t0 is None) == all(f != "T" for _, f in items)


@given(st.lists(st.integers(0, 3), max_size=40))
def test_group_by_user_partitions(users):
    posts = [make_post(f"p{i}", user=str(u)) for i, u in enumerate(users)]
    groups = group_by_user(posts)
    assert sum(len(v) for v in groups.values()) == len(posts)
    assert all(p.user == u for u, ps in groups.items() for p in ps)
