import io
import random
import tracemalloc
from datetime import datetime, timedelta

import pytest

from rgbsim import qalag

EPOCH = datetime(2020, 1, 1)


def _ts(days: float) -> str:
    return (EPOCH + timedelta(days=days)).isoformat(timespec="milliseconds")


def posts_xml(rows: list[str]) -> io.BytesIO:
    body = "\n".join(rows)
    return io.BytesIO(f'<?xml version="1.0"?>\n<posts>\n{body}\n</posts>\n'.encode())


def votes_xml(rows: list[str]) -> io.BytesIO:
    body = "\n".join(rows)
    return io.BytesIO(f'<?xml version="1.0"?>\n<votes>\n{body}\n</votes>\n'.encode())


def question(qid: int, day: float, accepted: int | None = None) -> str:
    acc = f' AcceptedAnswerId="{accepted}"' if accepted else ""
    return (f'  <row Id="{qid}" PostTypeId="1" CreationDate="{_ts(day)}" '
            f'Score="0"{acc} />')


def answer(aid: int, parent: int, day: float, score: int) -> str:
    return (f'  <row Id="{aid}" PostTypeId="2" ParentId="{parent}" '
            f'CreationDate="{_ts(day)}" Score="{score}" />')


def vote(post_id: int, day: float, kind: str) -> str:
    type_id = {"up": 2, "down": 3}[kind]
    return (f'  <row Id="{random.randrange(10**6)}" PostId="{post_id}" '
            f'VoteTypeId="{type_id}" CreationDate="{_ts(day)}" />')


# -- index construction -----------------------------------------------------------


def test_build_index_joins_questions_and_answers():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), question(2, 1.0),
        answer(10, 1, 0.5, 1), answer(11, 1, 0.8, 0), answer(12, 2, 1.5, 2),
    ]))
    assert set(index.questions) == {1, 2}
    assert len(index.questions[1].answers) == 2
    assert len(index.questions[2].answers) == 1
    assert index.counters["questions"] == 2
    assert index.counters["answers"] == 3
    assert index.counters["dangling_answers"] == 0


def test_dangling_answers_are_dropped_and_counted():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 0.5, 0), answer(11, 99, 0.5, 0),
    ]))
    assert index.counters["dangling_answers"] == 1
    assert index.counters["answers"] == 1


def test_question_without_answers_contributes_no_lag_sample():
    index = qalag.build_qa_index(posts_xml([question(1, 0.0)]))
    qalag.attach_votes(index, votes_xml([]))
    assert 1 in index.questions
    assert qalag.lag_statistics(index.questions[1]) is None
    assert qalag.all_lag_statistics(index) == []


def test_malformed_rows_are_skipped_and_counted():
    rows = [
        question(1, 0.0),
        '  <row Id="7" PostTypeId="2" CreationDate="not-a-date" ParentId="1" Score="0" />',
        '  <row PostTypeId="1" />',
        '  <row Id="8" PostTypeId="99" CreationDate="2020-01-01T00:00:00" />',
    ]
    index = qalag.build_qa_index(posts_xml(rows))
    assert index.counters["malformed_posts"] == 2
    assert index.counters["other_post_types"] == 1


def test_answers_seen_before_their_question_still_join():
    index = qalag.build_qa_index(posts_xml([
        answer(10, 1, 0.5, 0), question(1, 0.0),
    ]))
    assert len(index.questions[1].answers) == 1
    assert index.counters["dangling_answers"] == 0


# -- vote attachment ----------------------------------------------------------------


def test_attach_votes_builds_cumulative_steps():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0),
        answer(10, 1, 1.0, 1), answer(11, 1, 3.0, 2),
    ]))
    qalag.attach_votes(index, votes_xml([
        vote(10, 2.0, "up"), vote(11, 4.0, "up"), vote(11, 5.0, "up"),
    ]))
    a1, a2 = sorted(index.questions[1].answers, key=lambda a: a.id)
    assert a1.score_at(EPOCH + timedelta(days=1.5)) == 0
    assert a1.score_at(EPOCH + timedelta(days=2.0)) == 1
    assert a2.score_at(EPOCH + timedelta(days=4.5)) == 1
    assert a2.score_at(EPOCH + timedelta(days=5.0)) == 2
    assert index.counters["score_mismatches"] == 0


def test_votes_without_votes_leave_zero_trajectories():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 1.0, 0),
    ]))
    qalag.attach_votes(index, votes_xml([]))
    (a,) = index.questions[1].answers
    assert a.step_times == []
    assert a.score_at(EPOCH + timedelta(days=100)) == 0


def test_same_day_up_and_down_votes_cancel():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 1.0, 0),
    ]))
    qalag.attach_votes(index, votes_xml([
        vote(10, 2.0, "down"), vote(10, 2.0, "up"),
    ]))
    (a,) = index.questions[1].answers
    assert a.step_times == []  # net zero produces no step


def test_unknown_post_votes_and_other_types_counted():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 1.0, 0),
    ]))
    rows = [vote(999, 2.0, "up"),
            f'  <row Id="5" PostId="10" VoteTypeId="5" CreationDate="{_ts(2)}" />']
    qalag.attach_votes(index, votes_xml(rows))
    assert index.counters["votes_unknown_post"] == 1
    assert index.counters["votes_other_types"] == 1


def test_score_mismatch_counter():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 1.0, 5),  # dump says 5, votes say 1
    ]))
    qalag.attach_votes(index, votes_xml([vote(10, 2.0, "up")]))
    assert index.counters["score_mismatches"] == 1


# -- lag statistics -------------------------------------------------------------------


def worked_example_index():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0),
        answer(10, 1, 1.0, 1),   # first answer, one upvote at day 2
        answer(11, 1, 3.0, 2),   # eventual best, upvotes at days 4 and 5
    ]))
    qalag.attach_votes(index, votes_xml([
        vote(10, 2.0, "up"), vote(11, 4.0, "up"), vote(11, 5.0, "up"),
    ]))
    return index


def test_worked_two_answer_example():
    stats = qalag.lag_statistics(worked_example_index().questions[1])
    assert stats.time_to_first_answer == pytest.approx(1.0)
    assert stats.time_to_best_posted == pytest.approx(3.0)
    assert stats.time_to_best_emerged == pytest.approx(4.0)
    assert stats.emergence_after_posting == pytest.approx(1.0)


def test_worked_example_strict_emergence_waits_for_the_lead():
    stats = qalag.lag_statistics(worked_example_index().questions[1], strict=True)
    # under strict dominance the day-4 tie does not count
    assert stats.time_to_best_emerged == pytest.approx(5.0)
    assert stats.emergence_after_posting == pytest.approx(2.0)


def test_single_answer_emerges_at_its_creation():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 2.5, 0),
    ]))
    qalag.attach_votes(index, votes_xml([]))
    stats = qalag.lag_statistics(index.questions[1])
    assert stats.time_to_first_answer == pytest.approx(2.5)
    assert stats.time_to_best_posted == pytest.approx(2.5)
    assert stats.time_to_best_emerged == pytest.approx(2.5)
    assert stats.emergence_after_posting == 0.0


def test_zero_vote_tie_goes_to_the_earlier_answer():
    index = qalag.build_qa_index(posts_xml([
        question(1, 0.0), answer(10, 1, 1.0, 0), answer(11, 1, 2.0, 0),
    ]))
    qalag.attach_votes(index, votes_xml([]))
    timeline = index.questions[1]
    assert timeline.best_answer().id == 10
    stats = qalag.lag_statistics(timeline)
    assert stats.time_to_best_posted == pytest.approx(1.0)
    assert stats.time_to_best_emerged == pytest.approx(1.0)


def synthetic_question(rng: random.Random, qid: int):
    """Random question with consistent vote history and final scores."""
    q_day = rng.uniform(0, 10)
    posts = [question(qid, q_day)]
    votes = []
    n_answers = rng.randint(1, 5)
    for a in range(n_answers):
        aid = qid * 100 + a
        a_day = q_day + rng.uniform(0.01, 30)
        n_votes = rng.randint(0, 6)
        score = 0
        for _ in range(n_votes):
            kind = "up" if rng.random() < 0.8 else "down"
            score += 1 if kind == "up" else -1
            votes.append(vote(aid, a_day + rng.uniform(0, 100), kind))
        posts.append(answer(aid, qid, a_day, score))
    return posts, votes


def test_lag_invariant_chain_on_random_questions():
    rng = random.Random(4242)
    posts, votes = [], []
    for qid in range(1, 120):
        p, v = synthetic_question(rng, qid)
        posts.extend(p)
        votes.extend(v)
    index = qalag.build_qa_index(posts_xml(posts))
    qalag.attach_votes(index, votes_xml(votes))
    stats = qalag.all_lag_statistics(index)
    assert len(stats) == 119
    for s in stats:
        assert s.time_to_first_answer is not None
        assert s.time_to_best_posted >= s.time_to_first_answer - 1e-12
        assert s.time_to_best_emerged is not None, s
        assert s.time_to_best_emerged >= s.time_to_best_posted - 1e-12
        assert s.emergence_after_posting == pytest.approx(
            s.time_to_best_emerged - s.time_to_best_posted)
        assert s.emergence_after_posting >= 0.0


def test_emergence_matches_forward_scan_oracle():
    """Emergence agrees with a forward scan over every score change point.

    Scores are piecewise constant, so evaluating dominance at each change
    point (plus a fine background grid) is exact. The forward scan is an
    independent formulation of the same definition: the start of the final
    streak of dominant points.
    """
    rng = random.Random(99)
    posts, votes = [], []
    for qid in range(1, 60):
        p, v = synthetic_question(rng, qid)
        posts.extend(p)
        votes.extend(v)
    index = qalag.build_qa_index(posts_xml(posts))
    qalag.attach_votes(index, votes_xml(votes))
    for qid, timeline in index.questions.items():
        stats = qalag.lag_statistics(timeline)
        best = timeline.best_answer()
        others = [a for a in timeline.answers if a is not best]
        points = {best.creation_time}
        for a in timeline.answers:
            points.add(a.creation_time)
            points.update(a.step_times)
        horizon = max(points) + timedelta(days=1)
        grid = sorted(p for p in points if p >= best.creation_time)
        grid += [best.creation_time + timedelta(hours=6 * i)
                 for i in range(int((horizon - best.creation_time).days * 4 + 8))]
        grid = sorted(set(grid))
        emerged = None
        for t in grid:
            sb = best.score_at(t)
            ok = all(a.score_at(t) <= sb for a in others if a.creation_time <= t)
            if ok and emerged is None:
                emerged = t
            elif not ok:
                emerged = None
        assert emerged is not None
        expected = (emerged - timeline.creation_time).total_seconds() / 86400.0
        assert stats.time_to_best_emerged == pytest.approx(expected, abs=1e-9)


# -- survival function -----------------------------------------------------------------


def test_ccdf_worked_example():
    series = qalag.ccdf([1, 2, 2, 5])
    assert series.values == (1.0, 2.0, 5.0)
    assert series.survival == (0.75, 0.25, 0.0)
    assert series.median() == 2.0


def test_ccdf_degenerate_inputs():
    assert qalag.ccdf([]) == qalag.CcdfSeries(values=(), survival=())
    series = qalag.ccdf([3.0, 3.0, 3.0])
    assert series.values == (3.0,)
    assert series.survival == (0.0,)


def test_ccdf_matches_quadratic_recount():
    rng = random.Random(7)
    samples = [rng.expovariate(0.1) for _ in range(500)] + [1.0] * 5
    series = qalag.ccdf(samples)
    n = len(samples)
    for v, s in zip(series.values, series.survival):
        recount = sum(1 for x in samples if x > v) / n
        assert s == pytest.approx(recount, abs=1e-15)
    assert all(a < b for a, b in zip(series.values, series.values[1:]))
    assert all(a >= b for a, b in zip(series.survival, series.survival[1:]))


# -- streaming memory ------------------------------------------------------------------


def test_streaming_parse_memory_is_bounded_by_retained_rows(tmp_path):
    # 100k rows, almost all filtered out: peak memory must track the
    # retained records, not the file size
    path = tmp_path / "Posts.xml"
    with open(path, "w") as fh:
        fh.write('<?xml version="1.0"?>\n<posts>\n')
        for i in range(100_000):
            if i % 1000 == 0:
                fh.write(question(i + 1, 0.0) + "\n")
            else:
                fh.write(f'  <row Id="{i + 10**7}" PostTypeId="5" '
                         f'CreationDate="{_ts(0)}" Junk="{"x" * 64}" />\n')
        fh.write("</posts>\n")
    size = path.stat().st_size
    assert size > 10 * 2**20  # the fixture is meaningfully large

    tracemalloc.start()
    index = qalag.build_qa_index(str(path))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert index.counters["questions"] == 100
    assert peak < size / 2
