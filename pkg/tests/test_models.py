import pytest

from starcache.core import CacheGeometry, Rng
from starcache.models import (AccessKind, FarrCache, NewsCache, Op,
                              SetAssocLru, SFillAction)


class _Lower:
    """Flat 100-cycle backing store recording traffic."""

    def __init__(self):
        self.fetches = []
        self.writebacks = []

    def fetch(self, addr, domain, spec_bit):
        self.fetches.append((addr, domain, spec_bit))
        return bytes(64), 3, 100

    def writeback(self, base, domain, data):
        self.writebacks.append((base, domain, bytes(data)))


def _lru(sets=4, assoc=2, **kw):
    return SetAssocLru(CacheGeometry(64, sets * assoc, assoc), 1, _Lower(),
                       **kw)


def _farr(lines=8, seed=5, **kw):
    return FarrCache(CacheGeometry(64, lines, lines), 1, _Lower(),
                     Rng(seed), **kw)


def _news(lines=8, k=2, seed=5, **kw):
    return NewsCache(CacheGeometry(64, lines, lines, k), 1, _Lower(),
                     Rng(seed), **kw)


def _set_stride(cache):
    return 64 * cache.geom.set_count


# -- set-associative LRU --

def test_lru_hit_and_miss_latencies():
    c = _lru()
    out = c.access(Op.LOAD, 0x1000, 0, 0)
    assert out.kind is AccessKind.MISS_FILLED
    assert out.latency == 101        # own cycle + stub fetch
    assert out.source_level == 3
    out = c.access(Op.LOAD, 0x1000, 0, 0)
    assert out.kind is AccessKind.HIT
    assert out.latency == 1
    assert out.source_level == 1


def test_lru_eviction_order():
    c = _lru(sets=4, assoc=2)
    stride = _set_stride(c)
    a, b, d = 0x1000, 0x1000 + stride, 0x1000 + 2 * stride   # same set
    c.access(Op.LOAD, a, 0, 0)
    c.access(Op.LOAD, b, 0, 0)
    c.access(Op.LOAD, a, 0, 0)          # a becomes MRU
    out = c.access(Op.LOAD, d, 0, 0)    # evicts b, the LRU
    assert out.victim_evicted == b
    assert c.find(a) is not None
    assert c.find(b) is None
    assert c.find(d) is not None


def test_lru_hits_ignore_domain_and_keep_owner():
    c = _lru()
    c.access(Op.LOAD, 0x2000, 1, 0)
    out = c.access(Op.LOAD, 0x2000, 2, 0)
    assert out.kind is AccessKind.HIT
    assert c.find(0x2000).domain == 1    # the line is not retagged


def test_lru_nonspec_touch_clears_spec_bit():
    c = _lru()
    c.access(Op.LOAD, 0x3000, 0, 1)
    assert c.find(0x3000).spec_bit == 1
    c.access(Op.LOAD, 0x3000, 0, 1)      # spec hit leaves it set
    assert c.find(0x3000).spec_bit == 1
    c.access(Op.LOAD, 0x3000, 0, 0)
    assert c.find(0x3000).spec_bit == 0


def test_lru_store_sets_dirty_and_writes_byte():
    c = _lru()
    c.access(Op.STORE, 0x4007, 0, 0, 0xAB)
    rec = c.find(0x4000)
    assert rec.dirty == 1
    assert rec.spec_bit == 0
    assert rec.data[7] == 0xAB


def test_lru_dirty_eviction_writes_back():
    c = _lru(sets=1, assoc=2)
    stride = _set_stride(c)
    c.access(Op.STORE, 0x5001, 0, 0, 0x11)
    c.access(Op.LOAD, 0x5000 + stride, 0, 0)
    c.access(Op.LOAD, 0x5000 + 2 * stride, 0, 0)   # evicts the dirty line
    wb = c.lower.writebacks
    assert len(wb) == 1
    assert wb[0][0] == 0x5000
    assert wb[0][2][1] == 0x11


def test_lru_flush_line_domain_filter():
    c = _lru()
    c.access(Op.LOAD, 0x6000, 1, 0)
    assert c.flush_line(0x6000, 2, True) is None     # wrong domain
    assert c.find(0x6000) is not None
    assert c.flush_line(0x6000, 2, False) is not None
    assert c.find(0x6000) is None


def test_lru_on_evict_callback():
    seen = []
    c = _lru(sets=1, assoc=1)
    c.on_evict = seen.append
    stride = _set_stride(c)
    c.access(Op.LOAD, 0x7000, 0, 0)
    c.access(Op.LOAD, 0x7000 + stride, 0, 0)
    assert seen == [0x7000]


# -- fully associative random replacement --

def test_farr_domain_gated_hits():
    c = _farr()
    c.access(Op.LOAD, 0x1000, 1, 0)
    out = c.access(Op.LOAD, 0x1000, 2, 0)
    assert out.kind is AccessKind.MISS_FILLED    # no cross-domain hit
    # both domains now hold private copies of the same base
    assert c.find(0x1000, 1) is not None
    assert c.find(0x1000, 2) is not None
    assert c.access(Op.LOAD, 0x1000, 1, 0).kind is AccessKind.HIT


def test_farr_fills_invalid_slots_before_evicting():
    c = _farr(lines=8)
    for i in range(8):
        out = c.access(Op.LOAD, 0x1000 + 64 * i, 0, 0)
        assert out.victim_evicted is None
    out = c.access(Op.LOAD, 0x9000, 0, 0)
    assert out.victim_evicted is not None


def test_farr_random_victims_spread():
    c = _farr(lines=8, seed=3)
    for i in range(8):
        c.access(Op.LOAD, 0x1000 + 64 * i, 0, 0)
    victims = set()
    for j in range(60):
        out = c.access(Op.LOAD, 0x20000 + 64 * j, 0, 0)
        victims.add(out.victim_evicted)
    assert len(victims) > 20     # not stuck on one slot


def test_farr_deterministic_victim_hook():
    c = _farr(lines=4, deterministic_victim=True)
    for i in range(4):
        c.access(Op.LOAD, 0x1000 + 64 * i, 0, 0)
    out = c.access(Op.LOAD, 0x2000, 0, 0)
    assert out.victim_evicted == 0x1000   # always the first valid slot


def test_farr_spec_bit_rules():
    c = _farr()
    c.access(Op.LOAD, 0x3000, 0, 1)
    assert c.find(0x3000, 0).spec_bit == 1
    c.access(Op.LOAD, 0x3000, 0, 0)
    assert c.find(0x3000, 0).spec_bit == 0


def test_farr_flush_is_domain_keyed():
    c = _farr()
    c.access(Op.LOAD, 0x4000, 1, 0)
    assert c.flush_line(0x4000, 2, True) is None
    assert c.flush_line(0x4000, 1, True) is not None
    assert c.find(0x4000, 1) is None


# -- randomized mapping --

def test_news_basic_hit_miss():
    c = _news()
    assert c.access(Op.LOAD, 0x1000, 0, 0).kind is AccessKind.MISS_FILLED
    assert c.access(Op.LOAD, 0x1000, 0, 0).kind is AccessKind.HIT
    assert c.access(Op.LOAD, 0x1000, 1, 0).kind is AccessKind.MISS_FILLED


def test_news_nonspec_conflict_replaces_in_place():
    c = _news(lines=8, k=2)
    # same (domain, index), different tag: flip a bit above the index
    conflict_bit = c.geom.offset_bits + c.geom.index_bits
    a = 0x1000
    b = a ^ (1 << conflict_bit)
    c.access(Op.LOAD, a, 0, 0)
    before = len(list(c.valid_lines()))
    out = c.access(Op.LOAD, b, 0, 0)
    assert out.kind is AccessKind.MISS_FILLED
    assert out.victim_evicted == a
    assert c.find(a, 0) is None
    assert c.find(b, 0) is not None
    assert len(list(c.valid_lines())) == before    # in place, no growth


def test_news_spec_conflict_forwards_without_fill():
    c = _news(lines=8, k=2)
    conflict_bit = c.geom.offset_bits + c.geom.index_bits
    a = 0x1000
    b = a ^ (1 << conflict_bit)
    c.access(Op.LOAD, a, 0, 0)
    out = c.access(Op.LOAD, b, 0, 1)
    assert out.kind is AccessKind.MISS_FORWARD_NOFILL
    assert out.source_level == 3       # data still came from below
    assert c.tagmiss_forward_nofill == 1
    assert c.find(b, 0) is None        # left no trace of itself
    # exactly one random eviction happened (a was the only valid line)
    assert out.victim_evicted == a


def test_news_fill_on_spec_tagmiss_hook():
    c = _news(lines=8, k=2, fill_on_spec_tagmiss=True)
    conflict_bit = c.geom.offset_bits + c.geom.index_bits
    a = 0x1000
    b = a ^ (1 << conflict_bit)
    c.access(Op.LOAD, a, 0, 0)
    out = c.access(Op.LOAD, b, 0, 1)
    assert out.kind is AccessKind.MISS_FILLED
    assert c.tagmiss_forward_nofill == 0
    assert c.find(b, 0) is not None


def test_news_spec_mapping_miss_fills():
    c = _news()
    out = c.access(Op.LOAD, 0x2000, 0, 1)
    assert out.kind is AccessKind.MISS_FILLED
    assert c.find(0x2000, 0).spec_bit == 1


def test_news_mapping_one_line_per_key():
    c = _news(lines=8, k=2, seed=9)
    rng = Rng(40)
    for _ in range(300):
        c.access(Op.LOAD, 64 * rng.choose(4096), rng.choose(3), 0)
        keys = [(rec.domain, rec.index) for rec in c.valid_lines()]
        assert len(keys) == len(set(keys))
        assert len(keys) <= 8


def test_news_dirty_conflict_writes_back():
    c = _news(lines=8, k=2)
    conflict_bit = c.geom.offset_bits + c.geom.index_bits
    a = 0x1000
    c.access(Op.STORE, a + 3, 0, 0, 0x7E)
    c.access(Op.LOAD, a ^ (1 << conflict_bit), 0, 0)
    wb = c.lower.writebacks
    assert len(wb) == 1 and wb[0][0] == a and wb[0][2][3] == 0x7E


# -- squash invalidation handling --

def _filled(cache, addr, spec):
    cache.access(Op.LOAD, addr, 0, spec)
    return cache


def test_sfill_nonspec_line_drops_and_counts():
    for make in (lambda: _lru(secure_inval=True, level=2), _farr, _news):
        c = _filled(make(), 0x1000, 0)
        assert c.handle_sfill_inv(0x1000, 0, 3) is SFillAction.DROP
        assert c.find(0x1000, 0) is not None
        assert c.inval_dropped_case_i == 1


def test_sfill_spec_line_invalidated_then_propagates_by_source():
    for make in (lambda: _lru(secure_inval=True, level=2), _farr, _news):
        c = _filled(make(), 0x1000, 1)
        level = c.level
        action = c.handle_sfill_inv(0x1000, 0, 3)
        assert c.find(0x1000, 0) is None
        assert action is (SFillAction.PROPAGATE if 3 > level
                          else SFillAction.DROP)
        assert c.inval_dropped_case_i == 0


def test_sfill_absent_propagates_only_deeper():
    c = _farr()
    assert c.handle_sfill_inv(0x1000, 0, 2) is SFillAction.PROPAGATE
    assert c.handle_sfill_inv(0x1000, 0, 3) is SFillAction.PROPAGATE
    c2 = _lru(secure_inval=True, level=2)
    assert c2.handle_sfill_inv(0x1000, 0, 2) is SFillAction.DROP
    assert c2.handle_sfill_inv(0x1000, 0, 3) is SFillAction.PROPAGATE


def test_sfill_conventional_cache_ignores_message():
    c = _filled(_lru(secure_inval=False), 0x1000, 1)
    assert c.handle_sfill_inv(0x1000, 0, 3) is SFillAction.DROP
    assert c.find(0x1000) is not None


def test_sfill_wrong_domain_treated_as_absent():
    c = _farr()
    c.access(Op.LOAD, 0x1000, 1, 1)
    assert c.handle_sfill_inv(0x1000, 0, 3) is SFillAction.PROPAGATE
    assert c.find(0x1000, 1) is not None


def test_lru_rejects_extra_index_bits():
    with pytest.raises(ValueError):
        SetAssocLru(CacheGeometry(64, 8, 2, 2), 1, _Lower())
