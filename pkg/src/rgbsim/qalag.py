"""Q&A dump mining: answer timelines and lag distributions.

Parses the row-oriented XML of a Stack-Exchange-style data dump (Posts.xml
and Votes.xml), reconstructs per-question answer timelines with dated score
trajectories, and measures how long questions wait for their first answer,
for their eventual best answer, and for that best answer to take (and keep)
the top display rank.

Parsing is a single streaming pass per file: memory scales with the
retained questions and answers, never with file size.
"""

from __future__ import annotations

import bisect
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime
from typing import IO, Iterable, Optional, Union

Source = Union[str, IO[bytes]]

SECONDS_PER_DAY = 86400.0

# dump vote kinds: 2 = upvote, 3 = downvote; everything else is ignored
_VOTE_DELTA = {"2": 1, "3": -1}


@dataclass(frozen=True)
class PostRecord:
    id: int
    post_type: str  # "question" | "answer"
    parent_id: Optional[int]
    creation_time: datetime
    final_score: int
    accepted_answer_id: Optional[int] = None


@dataclass(frozen=True)
class VoteEvent:
    post_id: int
    vote_type: str  # "up" | "down"
    creation_time: datetime


@dataclass
class AnswerTimeline:
    id: int
    creation_time: datetime
    final_score: int
    # step function of the reconstructed score: parallel, time-sorted arrays
    step_times: list[datetime] = field(default_factory=list)
    step_scores: list[int] = field(default_factory=list)

    def score_at(self, when: datetime) -> int:
        """Reconstructed score holding at ``when`` (right-continuous)."""
        i = bisect.bisect_right(self.step_times, when)
        return self.step_scores[i - 1] if i else 0


@dataclass
class QuestionTimeline:
    id: int
    creation_time: datetime
    accepted_answer_id: Optional[int]
    answers: list[AnswerTimeline] = field(default_factory=list)

    def best_answer(self) -> Optional[AnswerTimeline]:
        """Highest final dump score; ties go to the earliest answer."""
        if not self.answers:
            return None
        return min(self.answers, key=lambda a: (-a.final_score, a.creation_time))


@dataclass
class QaIndex:
    questions: dict[int, QuestionTimeline]
    counters: dict[str, int]


@dataclass(frozen=True)
class LagStats:
    """Per-question lags in days; fields are None when not measurable."""

    question_id: int
    time_to_first_answer: Optional[float]
    time_to_best_posted: Optional[float]
    time_to_best_emerged: Optional[float]
    emergence_after_posting: Optional[float]


@dataclass(frozen=True)
class CcdfSeries:
    """Empirical survival function evaluated at each distinct sample value."""

    values: tuple[float, ...]
    survival: tuple[float, ...]

    def median(self) -> Optional[float]:
        """Smallest value whose survival is at most one half."""
        for v, s in zip(self.values, self.survival):
            if s <= 0.5:
                return v
        return None


def _iter_rows(source: Source) -> Iterable[dict]:
    """Stream the attribute dicts of ``<row .../>`` elements.

    Rows are detached from the document root as soon as they are consumed,
    keeping the parse buffer bounded regardless of file size. The yielded
    dict is only valid until the next iteration step.
    """
    context = ET.iterparse(source, events=("start", "end"))
    root = None
    for event, elem in context:
        if event == "start":
            if root is None:
                root = elem
            continue
        if elem.tag == "row":
            yield elem.attrib
            elem.clear()
            if root is not None:
                root.clear()


def _parse_time(text: str) -> datetime:
    return datetime.fromisoformat(text)


def build_qa_index(posts: Source) -> QaIndex:
    """Single-pass join of questions and answers from a Posts stream.

    Malformed rows (missing attributes, unparseable timestamps) are skipped
    and counted; answers whose question never appears are dropped at the
    end of the pass, and other post types (wiki, tag info, ...) are ignored.
    """
    questions: dict[int, QuestionTimeline] = {}
    orphans: dict[int, list[AnswerTimeline]] = {}
    counters = {
        "posts_rows": 0,
        "questions": 0,
        "answers": 0,
        "other_post_types": 0,
        "malformed_posts": 0,
        "dangling_answers": 0,
    }
    for row in _iter_rows(posts):
        counters["posts_rows"] += 1
        try:
            post_type = row["PostTypeId"]
            if post_type == "1":
                qid = int(row["Id"])
                created = _parse_time(row["CreationDate"])
                accepted = row.get("AcceptedAnswerId")
                questions[qid] = QuestionTimeline(
                    id=qid,
                    creation_time=created,
                    accepted_answer_id=int(accepted) if accepted else None,
                )
                counters["questions"] += 1
                if qid in orphans:
                    questions[qid].answers.extend(orphans.pop(qid))
            elif post_type == "2":
                answer = AnswerTimeline(
                    id=int(row["Id"]),
                    creation_time=_parse_time(row["CreationDate"]),
                    final_score=int(row["Score"]),
                )
                parent = int(row["ParentId"])
                counters["answers"] += 1
                if parent in questions:
                    questions[parent].answers.append(answer)
                else:
                    orphans.setdefault(parent, []).append(answer)
            else:
                counters["other_post_types"] += 1
        except (KeyError, ValueError):
            counters["malformed_posts"] += 1
    counters["dangling_answers"] = sum(len(v) for v in orphans.values())
    counters["answers"] -= counters["dangling_answers"]
    return QaIndex(questions=questions, counters=counters)


def attach_votes(index: QaIndex, votes: Source) -> QaIndex:
    """Attach cumulative score trajectories reconstructed from up/downvotes.

    Votes carry date granularity; same-day votes net out into a single
    step. Votes referencing posts outside the index are skipped and
    counted. The final reconstructed score can differ from the dump's
    Score field (which reflects vote kinds we ignore); the mismatch count
    is reported under ``score_mismatches``.
    """
    answer_by_id: dict[int, AnswerTimeline] = {}
    for q in index.questions.values():
        for a in q.answers:
            answer_by_id[a.id] = a

    deltas: dict[int, dict[datetime, int]] = {}
    index.counters.setdefault("votes_rows", 0)
    index.counters.setdefault("votes_used", 0)
    index.counters.setdefault("votes_unknown_post", 0)
    index.counters.setdefault("votes_other_types", 0)
    index.counters.setdefault("malformed_votes", 0)
    for row in _iter_rows(votes):
        index.counters["votes_rows"] += 1
        try:
            delta = _VOTE_DELTA.get(row["VoteTypeId"])
            if delta is None:
                index.counters["votes_other_types"] += 1
                continue
            post_id = int(row["PostId"])
            if post_id not in answer_by_id:
                index.counters["votes_unknown_post"] += 1
                continue
            day = _parse_time(row["CreationDate"])
            per_day = deltas.setdefault(post_id, {})
            per_day[day] = per_day.get(day, 0) + delta
            index.counters["votes_used"] += 1
        except (KeyError, ValueError):
            index.counters["malformed_votes"] += 1

    mismatches = 0
    for aid, answer in answer_by_id.items():
        answer.step_times = []
        answer.step_scores = []
        score = 0
        for day in sorted(deltas.get(aid, ())):
            net = deltas[aid][day]
            if net == 0:
                continue
            score += net
            answer.step_times.append(day)
            answer.step_scores.append(score)
        if score != answer.final_score:
            mismatches += 1
    index.counters["score_mismatches"] = mismatches
    return index


def _days(delta) -> float:
    return delta.total_seconds() / SECONDS_PER_DAY


def lag_statistics(timeline: QuestionTimeline, strict: bool = False) -> Optional[LagStats]:
    """The four per-question lags, in days from the question's posting.

    The best answer is the one with the highest final dump score (earliest
    creation breaks ties). Its emergence time is the start of the suffix on
    which its reconstructed score stays >= every competing answer's score
    (strictly greater with ``strict=True``), never earlier than its own
    posting; competitors only count once posted. Returns None for
    questions without answers; the emergence fields are None when the dump
    score and the vote record disagree so badly that no such suffix exists.
    """
    answers = timeline.answers
    if not answers:
        return None
    best = timeline.best_answer()
    assert best is not None
    first_created = min(a.creation_time for a in answers)
    others = [a for a in answers if a is not best]

    # candidate change points: answer arrivals and score steps
    events = {best.creation_time}
    for a in answers:
        events.add(a.creation_time)
        events.update(a.step_times)
    points = sorted(t for t in events if t >= best.creation_time)

    def dominant_at(t: datetime) -> bool:
        sb = best.score_at(t)
        for other in others:
            if other.creation_time > t:
                continue
            so = other.score_at(t)
            if (so >= sb) if strict else (so > sb):
                return False
        return True

    emerged: Optional[datetime] = None
    for t in reversed(points):
        if dominant_at(t):
            emerged = t
        else:
            break

    return LagStats(
        question_id=timeline.id,
        time_to_first_answer=_days(first_created - timeline.creation_time),
        time_to_best_posted=_days(best.creation_time - timeline.creation_time),
        time_to_best_emerged=(
            _days(emerged - timeline.creation_time) if emerged else None
        ),
        emergence_after_posting=(
            _days(emerged - best.creation_time) if emerged else None
        ),
    )


def all_lag_statistics(index: QaIndex, strict: bool = False) -> list[LagStats]:
    out = []
    for qid in sorted(index.questions):
        stats = lag_statistics(index.questions[qid], strict=strict)
        if stats is not None:
            out.append(stats)
    return out


def ccdf(samples: Iterable[float]) -> CcdfSeries:
    """Survival function P(X > t) evaluated at each distinct sample value."""
    data = sorted(samples)
    n = len(data)
    if n == 0:
        return CcdfSeries(values=(), survival=())
    values = []
    survival = []
    i = 0
    while i < n:
        v = data[i]
        j = i
        while j < n and data[j] == v:
            j += 1
        values.append(float(v))
        survival.append((n - j) / n)
        i = j
    return CcdfSeries(values=tuple(values), survival=tuple(survival))
