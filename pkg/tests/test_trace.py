import pytest

from starcache.config import RunConfig
from starcache.core import Rng
from starcache.trace import (EventKind, PROFILES, TraceEvent, TraceParseError,
                             format_trace, parse_trace, replay, synth_trace)


def _hier(model="sa-lru", **kw):
    cfg = RunConfig(model=model, **kw).validate()
    return cfg.build_hierarchy(Rng(3).fork("trace-test"))


def test_parse_basics():
    events = parse_trace(
        "# warmup\n"
        "L 0x1000\n"
        "S 2000 1\n"
        "DOMAIN_SWITCH 3\n"
        "SPEC_BEGIN\n"
        "L 0x3000\n"
        "SPEC_END squash\n")
    kinds = [e.kind for e in events]
    assert kinds == [EventKind.COMMENT, EventKind.LOAD, EventKind.STORE,
                     EventKind.DOMAIN_SWITCH, EventKind.SPEC_BEGIN,
                     EventKind.LOAD, EventKind.SPEC_END]
    assert events[1].addr == 0x1000 and events[1].domain is None
    assert events[2].addr == 0x2000 and events[2].domain == 1
    assert events[3].domain == 3
    assert events[6].commit is False
    assert [e.line_no for e in events] == [1, 2, 3, 4, 5, 6, 7]


def test_parse_blank_lines_skipped():
    assert parse_trace("\n\n  \nL 0x40\n") and len(parse_trace("\n\nL 0x40\n")) == 1


@pytest.mark.parametrize("text,line,fragment", [
    ("L zz", 1, "bad address"),
    ("L 0x1000000000000", 1, "48-bit"),
    ("L 0x1000 x", 1, "bad domain"),
    ("L 0x1000 255", 1, "out of range"),
    ("L 0x1000 1 2", 1, "expected"),
    ("L\n", 1, "expected"),
    ("SPEC_BEGIN now", 1, "no arguments"),
    ("SPEC_BEGIN\nSPEC_BEGIN", 2, "line 1"),
    ("SPEC_END commit", 1, "without SPEC_BEGIN"),
    ("SPEC_BEGIN\nSPEC_END maybe", 2, "commit|squash"),
    ("L 0x40\nSPEC_BEGIN\nL 0x80", 2, "never closed"),
    ("DOMAIN_SWITCH", 1, "expected"),
    ("JUMP 0x40", 1, "unknown directive"),
])
def test_parse_errors(text, line, fragment):
    with pytest.raises(TraceParseError) as info:
        parse_trace(text)
    assert info.value.line_no == line
    assert fragment in str(info.value)


def test_format_parse_round_trip():
    rng = Rng(11)
    for profile in PROFILES:
        events = synth_trace(profile, 200, seed=rng.next_u64() % 1000)
        back = parse_trace(format_trace(events))
        assert len(back) == len(events)
        for a, b in zip(events, back):
            assert (a.kind, a.addr, a.domain, a.commit) == \
                   (b.kind, b.addr, b.domain, b.commit)


def test_replay_counts_and_identity():
    hier = _hier()
    stats = replay(parse_trace(
        "L 0x1000\n"
        "L 0x1000\n"
        "S 0x2000\n"
        "SPEC_BEGIN\n"
        "L 0x3000\n"
        "SPEC_END squash\n"
        "L 0x4000\n"), hier)
    assert stats.loads == 4 and stats.stores == 1
    assert stats.l1_hits == 1
    assert stats.l1_hits + stats.l1_miss_l2 + stats.l1_miss_mem == stats.loads
    assert stats.loads_squashed == 1
    assert stats.squashed_load_fraction == 0.25


def test_replay_domain_switch_applies():
    hier = _hier("star-farr")
    replay(parse_trace("DOMAIN_SWITCH 2\nL 0x5000\nL 0x6000 4\n"), hier)
    assert hier.l1.find(0x5000, 2) is not None
    assert hier.l1.find(0x6000, 4) is not None
    assert hier.l1.find(0x5000, 0) is None


def test_replay_squash_scrubs_on_hardened():
    hier = _hier("star-news")
    stats = replay(parse_trace(
        "SPEC_BEGIN\nL 0x7000\nSPEC_END squash\nL 0x7000\n"), hier)
    assert stats.sfill_inv_sent == 1
    assert stats.l1_hits == 0          # the reload cannot profit from wrong path


def test_replay_squash_leaves_hit_on_baseline():
    hier = _hier("sa-lru")
    stats = replay(parse_trace(
        "SPEC_BEGIN\nL 0x7000\nSPEC_END squash\nL 0x7000\n"), hier)
    assert stats.l1_hits == 1


def test_synth_rejects_bad_input():
    with pytest.raises(ValueError):
        synth_trace("zigzag", 100, 1)
    with pytest.raises(ValueError):
        synth_trace("uniform-random", 0, 1)


def test_synth_deterministic_per_seed():
    a = synth_trace("spec-mix", 500, seed=9)
    b = synth_trace("spec-mix", 500, seed=9)
    c = synth_trace("spec-mix", 500, seed=10)
    assert format_trace(a) == format_trace(b)
    assert format_trace(a) != format_trace(c)


def test_synth_event_budget_counts_memory_ops():
    for profile in PROFILES:
        events = synth_trace(profile, 300, seed=4)
        ops = sum(1 for e in events
                  if e.kind in (EventKind.LOAD, EventKind.STORE))
        assert 300 <= ops <= 308    # windows may overshoot by one width


def test_pointer_chase_is_a_cycle():
    n = 64
    events = synth_trace("pointer-chase", n, seed=5, footprint_lines=n)
    addrs = [e.addr for e in events if e.kind is EventKind.LOAD]
    assert len(set(addrs)) == n     # one full lap, no reuse


def test_conflict_heavy_pair_structure():
    events = [e for e in synth_trace("conflict-heavy", 400, seed=6)
              if e.kind is not EventKind.COMMENT]
    assert len(events) % 4 == 0
    for i in range(0, len(events), 4):
        first, begin, second, end = events[i:i + 4]
        assert first.kind is EventKind.LOAD
        assert begin.kind is EventKind.SPEC_BEGIN
        assert second.kind is EventKind.LOAD
        assert end.kind is EventKind.SPEC_END and end.commit
        assert (first.addr ^ second.addr).bit_count() == 1
        bit = (first.addr ^ second.addr).bit_length() - 1
        assert bit in (15, 17, 19, 21)


def test_spec_mix_squash_fraction_tracks_probability():
    hier = _hier()
    stats = replay(synth_trace("spec-mix", 20_000, seed=7, p_squash=0.25), hier)
    assert abs(stats.squashed_load_fraction - 0.25) < 0.02
    assert stats.loads_squashed > 0


def test_replay_debug_checks_run_clean():
    hier = _hier("star-news", debug_checks=True)
    replay(synth_trace("spec-mix", 3_000, seed=8, footprint_lines=512), hier)


def test_stats_field_list_matches_dict():
    hier = _hier()
    stats = replay(synth_trace("uniform-random", 100, seed=9), hier)
    d = stats.as_dict()
    assert tuple(d) == stats.FIELDS
