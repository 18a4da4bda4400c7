"""Two-level inclusive write-back hierarchy.

L1 is one of the three cache models; L2 is always a conventional
set-associative LRU cache.  Latency is additive along the path that
served an access: an L1 hit costs l1_hit_cycles, an L2 hit adds
l2_hit_cycles, a memory fetch adds memory_cycles on top of both.

Inclusion is by address: any address valid in L1 is also valid in L2
(the forward-without-fill outcome leaves lines that exist only in L2,
which inclusion permits).  An L2 eviction recalls every L1 copy of that
address.  Squash-time invalidation requests travel strictly downward
and produce no response; level n forwards one to level n+1 only when
the squashed load's data came from below level n.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from .core import CacheGeometry, FlatMemory, Rng
from .models import (AccessKind, AccessOutcome, FarrCache, MemoryRequest,
                     NewsCache, Op, SetAssocLru, SFillAction)


@dataclass(slots=True)
class MemoryResponse:
    """What the execution engine keeps about a finished access."""
    latency: int
    source_level: int


@dataclass(slots=True)
class SFillInvRequest:
    """One-way invalidation sent when a speculative load is squashed.

    source_level is where the squashed load's data came from; loads
    served by an L1 hit are filtered out before a request is built.
    """
    addr: int
    domain: int
    source_level: int

    def __post_init__(self):
        if self.source_level not in (2, 3):
            raise ValueError(
                f"invalidation carries source level 2 or 3, got {self.source_level}")


class Mshr:
    """Miss status holding registers.

    Entries are keyed by (line base, domain); a request merges into an
    in-flight entry only when both match, so one domain can never ride
    another domain's pending miss.  When all entries are busy the next
    miss waits stall_penalty cycles for the oldest entry to retire.
    """

    def __init__(self, capacity: int = 16, stall_penalty: int = 1):
        if capacity < 1:
            raise ValueError("MSHR needs at least one entry")
        self.capacity = capacity
        self.stall_penalty = stall_penalty
        self.pending: OrderedDict[tuple[int, int], int] = OrderedDict()
        self.merges = 0
        self.stalls = 0

    def begin(self, base: int, domain: int) -> tuple[bool, int]:
        key = (base, domain)
        if key in self.pending:
            self.pending[key] += 1
            self.merges += 1
            return True, 0
        stall = 0
        if len(self.pending) >= self.capacity:
            self.stalls += 1
            stall = self.stall_penalty
            self.pending.popitem(last=False)    # oldest retires while we wait
        self.pending[key] = 1
        return False, stall

    def end(self, base: int, domain: int) -> None:
        key = (base, domain)
        n = self.pending.get(key)
        if n is None:
            raise KeyError(f"no pending miss for {key}")
        if n == 1:
            del self.pending[key]
        else:
            self.pending[key] = n - 1


class _MemoryPort:
    """Bottom of the stack: line fetches and write-backs against flat
    memory."""

    __slots__ = ("memory", "cycles")

    def __init__(self, memory: FlatMemory, cycles: int):
        self.memory = memory
        self.cycles = cycles

    def fetch(self, addr: int, domain: int, spec_bit: int):
        return self.memory.read_line(addr), 3, self.cycles

    def writeback(self, base: int, domain: int, data) -> None:
        self.memory.write_line(base, data)


class _L2Port:
    """L1's view of the rest of the hierarchy."""

    __slots__ = ("l2", "mshr", "line_mask")

    def __init__(self, l2: SetAssocLru, mshr: Mshr, line_size: int):
        self.l2 = l2
        self.mshr = mshr
        self.line_mask = ~(line_size - 1)

    def fetch(self, addr: int, domain: int, spec_bit: int):
        base = addr & self.line_mask
        merged, stall = self.mshr.begin(base, domain)
        out = self.l2.access(Op.LOAD, addr, domain, spec_bit)
        self.mshr.end(base, domain)
        rec = self.l2.find(addr)
        source = 2 if out.kind is AccessKind.HIT else 3
        return rec.data, source, out.latency + stall

    def writeback(self, base: int, domain: int, data) -> None:
        rec = self.l2.find(base)
        assert rec is not None, "write-back target missing from L2"
        rec.data[:] = data
        rec.dirty = 1


class Hierarchy:
    """One simulated core's view of memory: L1 + L2 + flat backing store."""

    def __init__(self, model: str, l1_geometry: CacheGeometry,
                 l2_geometry: CacheGeometry, rng: Rng,
                 l1_hit_cycles: int = 1, l2_hit_cycles: int = 12,
                 memory_cycles: int = 100, mshr_entries: int = 16,
                 debug_checks: bool = False,
                 farr_deterministic_victim: bool = False,
                 news_fill_on_spec_tagmiss: bool = False):
        for name, lat in (("l1_hit_cycles", l1_hit_cycles),
                          ("l2_hit_cycles", l2_hit_cycles),
                          ("memory_cycles", memory_cycles)):
            if lat < 1:
                raise ValueError(f"{name} must be at least 1, got {lat}")
        if l1_geometry.line_size != l2_geometry.line_size:
            raise ValueError("levels must share one line size")
        self.model = model
        self.rng = rng
        self.debug_checks = debug_checks
        self.memory = FlatMemory(l1_geometry.line_size)
        self.mshr = Mshr(mshr_entries)
        self._line_mask = ~(l1_geometry.line_size - 1)

        self.l2 = SetAssocLru(l2_geometry, l2_hit_cycles,
                              _MemoryPort(self.memory, memory_cycles),
                              secure_inval=(model != "sa-lru"), level=2)
        self.l2.on_evict = self._back_invalidate
        port = _L2Port(self.l2, self.mshr, l1_geometry.line_size)
        if model == "sa-lru":
            self.l1 = SetAssocLru(l1_geometry, l1_hit_cycles, port,
                                  secure_inval=False, level=1)
        elif model == "star-farr":
            self.l1 = FarrCache(l1_geometry, l1_hit_cycles, port, rng, level=1,
                                deterministic_victim=farr_deterministic_victim)
        elif model == "star-news":
            self.l1 = NewsCache(l1_geometry, l1_hit_cycles, port, rng, level=1,
                                fill_on_spec_tagmiss=news_fill_on_spec_tagmiss)
        else:
            raise ValueError(f"unknown model {model!r}")

        self._store_seq = 0
        self.loads = 0
        self.stores = 0
        self.l1_hits = 0
        self.l1_miss_l2 = 0
        self.l1_miss_mem = 0
        self.flushes = 0
        self.sfill_inv_sent = 0

    # -- statistics helpers --
    @property
    def sfill_inv_dropped_case_i(self) -> int:
        return self.l1.inval_dropped_case_i + self.l2.inval_dropped_case_i

    @property
    def tagmiss_forward_nofill(self) -> int:
        return getattr(self.l1, "tagmiss_forward_nofill", 0)

    def _tally(self, out: AccessOutcome) -> None:
        if out.kind is AccessKind.HIT:
            self.l1_hits += 1
        elif out.source_level == 2:
            self.l1_miss_l2 += 1
        else:
            self.l1_miss_mem += 1

    # -- the architectural operations --
    def load(self, addr: int, domain: int, spec_bit: int = 0) -> AccessOutcome:
        self.loads += 1
        out = self.l1.access(Op.LOAD, addr, domain, spec_bit)
        self._tally(out)
        if self.debug_checks:
            self.check_invariants()
        return out

    def store(self, addr: int, domain: int,
              value: int | None = None) -> AccessOutcome:
        """Stores are architectural: they issue at commit, never
        speculatively.  With no explicit value a deterministic token
        (running store count modulo 256) is written so write-back paths
        stay checkable against a flat reference."""
        self.stores += 1
        if value is None:
            value = self._store_seq
            self._store_seq = (self._store_seq + 1) & 0xFF
        # hit/miss tallies cover loads only, so hits + misses = loads holds
        out = self.l1.access(Op.STORE, addr, domain, 0, value & 0xFF)
        if self.debug_checks:
            self.check_invariants()
        return out

    def access(self, req: MemoryRequest) -> AccessOutcome:
        if req.op is Op.LOAD:
            return self.load(req.addr, req.domain, req.spec_bit)
        if req.op is Op.STORE:
            if req.spec_bit:
                raise ValueError("stores never issue speculatively")
            return self.store(req.addr, req.domain)
        flushed = self.flush(req.addr, req.domain)
        return AccessOutcome(AccessKind.HIT if flushed else AccessKind.MISS_FILLED,
                             0, 1 if flushed else 3)

    def flush(self, addr: int, domain: int) -> bool:
        """Invalidate addr's line, writing dirty data back to memory.

        The conventional baseline flushes whatever copy is resident, as
        a flush instruction would.  The hardened models only honour the
        caller's own domain; lines other domains own stay put."""
        self.flushes += 1
        own_only = self.model != "sa-lru"
        l1rec = self.l1.flush_line(addr, domain, own_only)
        l2rec = self.l2.flush_line(addr, domain, own_only)
        if l1rec is not None and l1rec.dirty:
            self.memory.write_line(l1rec.base, l1rec.data)
            # keep any cross-domain L2 copy coherent with memory
            stale = self.l2.find(addr)
            if stale is not None:
                stale.data[:] = l1rec.data
                stale.dirty = 0
        elif l2rec is not None and l2rec.dirty:
            self.memory.write_line(l2rec.base, l2rec.data)
        if self.debug_checks:
            self.check_invariants()
        return l1rec is not None or l2rec is not None

    def sfill_inv(self, req: SFillInvRequest) -> None:
        """Deliver a squash invalidation; fire-and-forget for the
        issuer."""
        self.sfill_inv_sent += 1
        action = self.l1.handle_sfill_inv(req.addr, req.domain, req.source_level)
        if action is SFillAction.PROPAGATE:
            # beyond L2 sits stateless memory, so L2's own forward
            # decision has nowhere to go
            self.l2.handle_sfill_inv(req.addr, req.domain, req.source_level)
        if self.debug_checks:
            self.check_invariants()

    def _back_invalidate(self, base: int) -> None:
        # L2 lost the address; no L1 copy of it may survive.  A dirty
        # L1 copy skips the (gone) L2 line and lands in memory.
        for rec in [r for r in self.l1.valid_lines() if r.base == base]:
            self.l1.flush_line(rec.base, rec.domain, True)
            if rec.dirty:
                self.memory.write_line(rec.base, rec.data)

    def drain(self) -> None:
        """Write every dirty line back and empty both levels."""
        for rec in list(self.l1.valid_lines()):
            self.l1.flush_line(rec.base, rec.domain, True)
            if rec.dirty:
                l2rec = self.l2.find(rec.base)
                assert l2rec is not None, "inclusion broken during drain"
                l2rec.data[:] = rec.data
                l2rec.dirty = 1
        for rec in list(self.l2.valid_lines()):
            self.l2.invalidate(rec.base)
            if rec.dirty:
                self.memory.write_line(rec.base, rec.data)

    def check_invariants(self) -> None:
        l1_lines = list(self.l1.valid_lines())
        for rec in l1_lines:
            assert self.l2.contains_addr(rec.base), \
                f"L1 line 0x{rec.base:x} missing from L2"
            assert not (rec.spec_bit and rec.dirty), \
                f"speculative line 0x{rec.base:x} is dirty"
        for rec in self.l2.valid_lines():
            assert not (rec.spec_bit and rec.dirty), \
                f"speculative L2 line 0x{rec.base:x} is dirty"
        if isinstance(self.l1, NewsCache):
            seen = set()
            for (dom, idx), slot in self.l1._map.items():
                rec = self.l1._slots[slot]
                assert rec is not None and rec.domain == dom and rec.index == idx, \
                    "mapping entry points at the wrong line"
                assert slot not in seen
                seen.add(slot)
            valid = sum(1 for r in self.l1._slots if r is not None)
            assert len(self.l1._map) == valid, "mapping entry per valid line"
