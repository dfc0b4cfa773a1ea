"""Post ingestion, filtering, and per-user timelines."""

from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from .artifacts import atomic_write_text
from .text import word_count

DEFAULT_MIN_DATE = int(datetime(2010, 1, 1, tzinfo=timezone.utc).timestamp())

REQUIRED_FIELDS = ("id", "user", "forum", "created_utc", "text")


class RecordError(ValueError):
    """A JSONL line that could not be turned into a Post."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Post:
    id: str
    user: str
    forum: str
    created_utc: int
    text: str
    lang: Optional[str] = None

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "user": self.user,
            "forum": self.forum,
            "created_utc": self.created_utc,
            "text": self.text,
        }
        if self.lang is not None:
            rec["lang"] = self.lang
        return rec


@dataclass(frozen=True)
class FilterConfig:
    min_words: int = 10
    min_date: int = DEFAULT_MIN_DATE
    require_lang: Optional[str] = "en"
    forum_allowlist: Optional[frozenset] = None

    def __post_init__(self):
        if self.min_words < 1:
            raise ValueError("min_words must be >= 1")
        if self.min_date < 0:
            raise ValueError("min_date must be >= 0")
        if self.forum_allowlist is not None and not isinstance(self.forum_allowlist, frozenset):
            object.__setattr__(self, "forum_allowlist", frozenset(self.forum_allowlist))


@dataclass(frozen=True)
class UserTimeline:
    user: str
    posts: tuple
    t0: Optional[int]
    cohort: str

    def to_record(self) -> dict:
        return {
            "user": self.user,
            "cohort": self.cohort,
            "t0": self.t0,
            "post_ids": [p.id for p in self.posts],
        }


@dataclass(frozen=True)
class JoiningRule:
    """How T0 is found: first target-forum post (joiner) or first new forum (control)."""

    target_forums: frozenset = field(default_factory=frozenset)
    cohort: str = "joiner"

    def __post_init__(self):
        if self.cohort not in ("joiner", "control"):
            raise ValueError(f"unknown cohort {self.cohort!r}")
        object.__setattr__(self, "target_forums", frozenset(self.target_forums))


def parse_post_record(line: str, line_no: Optional[int] = None) -> Post:
    """Parse one JSONL line into a :class:`Post`; unknown keys are ignored."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"malformed JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise RecordError("record is not a JSON object", line_no)
    missing = [k for k in REQUIRED_FIELDS if k not in obj]
    if missing:
        raise RecordError(f"missing required field(s): {', '.join(missing)}", line_no)

    pid, user, forum, ts, text = (obj[k] for k in REQUIRED_FIELDS)
    if not isinstance(pid, str) or not pid:
        raise RecordError("id must be a non-empty string", line_no)
    if not isinstance(text, str) or not text.strip():
        raise RecordError("text must be a non-empty string", line_no)
    if isinstance(ts, bool) or not isinstance(ts, (int, float)) or int(ts) != ts or ts <= 0:
        raise RecordError("created_utc must be a positive integer", line_no)
    lang = obj.get("lang")
    if lang is not None and not isinstance(lang, str):
        raise RecordError("lang must be a string", line_no)
    return Post(id=pid, user=str(user), forum=str(forum), created_utc=int(ts), text=text, lang=lang)


def iter_jsonl(lines: Iterable[str], lenient: bool = False,
               errors: Optional[list] = None) -> Iterator[Post]:
    """Yield posts from JSONL lines, checking id uniqueness.

    In lenient mode bad records are appended to ``errors`` and skipped;
    otherwise the first bad record raises :class:`RecordError`.
    """
    seen = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            post = parse_post_record(line, line_no)
            if post.id in seen:
                raise RecordError(f"duplicate post id {post.id!r}", line_no)
        except RecordError as exc:
            if not lenient:
                raise
            if errors is not None:
                errors.append(exc)
            continue
        seen.add(post.id)
        yield post


def read_posts(path, lenient: bool = False, errors: Optional[list] = None) -> list[Post]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_jsonl(fh, lenient=lenient, errors=errors))


def write_posts(path, posts: Iterable[Post]) -> None:
    lines = (json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) + "\n" for p in posts)
    atomic_write_text(path, "".join(lines))


def drop_reason(post: Post, cfg: FilterConfig) -> Optional[str]:
    if word_count(post.text) < cfg.min_words:
        return "word_count"
    if post.created_utc < cfg.min_date:
        return "date"
    if cfg.require_lang is not None and post.lang is not None and post.lang != cfg.require_lang:
        return "lang"
    if cfg.forum_allowlist is not None and post.forum not in cfg.forum_allowlist:
        return "forum"
    return None


def apply_filters(posts: Iterable[Post], cfg: FilterConfig,
                  drops: Optional[Counter] = None) -> Iterator[Post]:
    """Yield the posts that pass every filter, in input order.

    Dropped posts are tallied into ``drops`` by their first failing reason.
    Untagged posts pass the language check.
    """
    for post in posts:
        reason = drop_reason(post, cfg)
        if reason is None:
            yield post
        elif drops is not None:
            drops[reason] += 1


def utc_month(ts: int) -> int:
    """Months since year 0 for the UTC calendar month containing ``ts``."""
    d = datetime.fromtimestamp(ts, tz=timezone.utc)
    return d.year * 12 + (d.month - 1)


def group_by_user(posts: Iterable[Post]) -> dict[str, list[Post]]:
    out: dict[str, list[Post]] = defaultdict(list)
    for post in posts:
        out[post.user].append(post)
    return dict(out)


def activity_filter(posts_by_user: Mapping[str, Sequence[Post]], min_posts: int,
                    min_active_months: int = 0, window_months: int = 0) -> set[str]:
    """Users with at least ``min_posts`` posts and enough active months.

    A user is active enough when some run of ``window_months`` consecutive
    UTC calendar months contains at least ``min_active_months`` months with
    a post. ``min_active_months=0`` disables the month condition.
    """
    if not window_months >= min_active_months >= 0:
        raise ValueError("need window_months >= min_active_months >= 0")
    keep = set()
    for user, posts in posts_by_user.items():
        if len(posts) < min_posts:
            continue
        if min_active_months == 0:
            keep.add(user)
            continue
        months = sorted({utc_month(p.created_utc) for p in posts})
        lo = 0
        for hi, m in enumerate(months):
            while months[lo] <= m - window_months:
                lo += 1
            if hi - lo + 1 >= min_active_months:
                keep.add(user)
                break
    return keep


def _sort_key(post: Post):
    return (post.created_utc, post.id)


def build_timeline(posts: Sequence[Post], rule: JoiningRule) -> UserTimeline:
    """Sort a user's posts and locate the joining time ``t0``."""
    if not posts:
        raise ValueError("cannot build a timeline from no posts")
    users = {p.user for p in posts}
    if len(users) != 1:
        raise ValueError(f"posts span {len(users)} users")
    ordered = tuple(sorted(posts, key=_sort_key))

    t0 = None
    if rule.cohort == "joiner":
        for p in ordered:
            if p.forum in rule.target_forums:
                t0 = p.created_utc
                break
    else:
        seen = set()
        for idx, p in enumerate(ordered):
            if idx > 0 and p.forum not in seen and p.forum not in rule.target_forums:
                t0 = p.created_utc
                break
            seen.add(p.forum)
        if t0 is None:
            t0 = ordered[0].created_utc
    return UserTimeline(user=ordered[0].user, posts=ordered, t0=t0, cohort=rule.cohort)


def assign_random_t0(timeline: UserTimeline, rng: random.Random) -> UserTimeline:
    """Replace ``t0`` with the timestamp of a randomly chosen post of the user."""
    t0 = rng.choice(timeline.posts).created_utc
    return UserTimeline(user=timeline.user, posts=timeline.posts, t0=t0, cohort=timeline.cohort)


def write_timelines(path, timelines: Iterable[UserTimeline]) -> None:
    text = json.dumps([t.to_record() for t in timelines], ensure_ascii=False, indent=1, sort_keys=True)
    atomic_write_text(path, text + "\n")
