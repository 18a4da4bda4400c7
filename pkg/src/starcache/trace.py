"""Memory trace format, synthesizers, and the replayer.

Line grammar (whitespace separated, '#' starts a comment):

    L <hexaddr> [domain]     load
    S <hexaddr> [domain]     store
    SPEC_BEGIN               open a speculation window (depth 1)
    SPEC_END commit|squash   close it, committing or squashing
    DOMAIN_SWITCH <id>       default domain for lines that omit one

Addresses are hex (0x prefix optional) and must fit in 48 bits.  Loads
and stores inside a SPEC_BEGIN/SPEC_END pair issue behind an unresolved
barrier, so the loads run speculatively; SPEC_END squash throws the
window away, SPEC_END commit retires it.  Windows do not nest.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .core import ADDRESS_LIMIT, DOMAIN_NONE, Rng
from .engine import SpecEngine
from .hierarchy import Hierarchy


class EventKind(enum.Enum):
    LOAD = "L"
    STORE = "S"
    SPEC_BEGIN = "SPEC_BEGIN"
    SPEC_END = "SPEC_END"
    DOMAIN_SWITCH = "DOMAIN_SWITCH"
    COMMENT = "#"


@dataclass(slots=True)
class TraceEvent:
    kind: EventKind
    addr: int | None = None
    domain: int | None = None
    commit: bool = True          # SPEC_END disposition
    text: str = ""               # comment payload
    line_no: int = 0


class TraceParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _parse_domain(tok: str, line_no: int) -> int:
    try:
        dom = int(tok, 10)
    except ValueError:
        raise TraceParseError(line_no, f"bad domain {tok!r}") from None
    if not 0 <= dom < DOMAIN_NONE:
        raise TraceParseError(line_no, f"domain {dom} out of range")
    return dom


def parse_trace(text: str) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    open_window_line = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            events.append(TraceEvent(EventKind.COMMENT, text=line[1:].strip(),
                                     line_no=line_no))
            continue
        toks = line.split()
        op = toks[0]
        if op in ("L", "S"):
            if len(toks) not in (2, 3):
                raise TraceParseError(line_no, f"expected '{op} <hexaddr> [domain]'")
            try:
                addr = int(toks[1], 16)
            except ValueError:
                raise TraceParseError(line_no, f"bad address {toks[1]!r}") from None
            if not 0 <= addr < ADDRESS_LIMIT:
                raise TraceParseError(
                    line_no, f"address 0x{addr:x} outside the 48-bit space")
            domain = _parse_domain(toks[2], line_no) if len(toks) == 3 else None
            kind = EventKind.LOAD if op == "L" else EventKind.STORE
            events.append(TraceEvent(kind, addr=addr, domain=domain,
                                     line_no=line_no))
        elif op == "SPEC_BEGIN":
            if len(toks) != 1:
                raise TraceParseError(line_no, "SPEC_BEGIN takes no arguments")
            if open_window_line is not None:
                raise TraceParseError(
                    line_no,
                    f"SPEC_BEGIN inside the window opened at line {open_window_line}")
            open_window_line = line_no
            events.append(TraceEvent(EventKind.SPEC_BEGIN, line_no=line_no))
        elif op == "SPEC_END":
            if len(toks) != 2 or toks[1] not in ("commit", "squash"):
                raise TraceParseError(line_no, "expected 'SPEC_END commit|squash'")
            if open_window_line is None:
                raise TraceParseError(line_no, "SPEC_END without SPEC_BEGIN")
            open_window_line = None
            events.append(TraceEvent(EventKind.SPEC_END,
                                     commit=(toks[1] == "commit"),
                                     line_no=line_no))
        elif op == "DOMAIN_SWITCH":
            if len(toks) != 2:
                raise TraceParseError(line_no, "expected 'DOMAIN_SWITCH <id>'")
            events.append(TraceEvent(EventKind.DOMAIN_SWITCH,
                                     domain=_parse_domain(toks[1], line_no),
                                     line_no=line_no))
        else:
            raise TraceParseError(line_no, f"unknown directive {op!r}")
    if open_window_line is not None:
        raise TraceParseError(open_window_line, "SPEC_BEGIN never closed")
    return events


def format_trace(events: list[TraceEvent]) -> str:
    out = []
    for ev in events:
        if ev.kind in (EventKind.LOAD, EventKind.STORE):
            dom = "" if ev.domain is None else f" {ev.domain}"
            out.append(f"{ev.kind.value} 0x{ev.addr:x}{dom}")
        elif ev.kind is EventKind.SPEC_BEGIN:
            out.append("SPEC_BEGIN")
        elif ev.kind is EventKind.SPEC_END:
            out.append(f"SPEC_END {'commit' if ev.commit else 'squash'}")
        elif ev.kind is EventKind.DOMAIN_SWITCH:
            out.append(f"DOMAIN_SWITCH {ev.domain}")
        else:
            out.append(f"# {ev.text}")
    return "\n".join(out) + "\n"


@dataclass(slots=True)
class ReplayStats:
    """Counter snapshot after a replay.

    l1_hits + l1_miss_l2 + l1_miss_mem always equals loads.
    """
    loads: int = 0
    stores: int = 0
    l1_hits: int = 0
    l1_miss_l2: int = 0
    l1_miss_mem: int = 0
    sfill_inv_sent: int = 0
    sfill_inv_dropped_case_i: int = 0
    tagmiss_forward_nofill: int = 0
    loads_squashed: int = 0
    squashed_load_fraction: float = 0.0

    FIELDS = ("loads", "stores", "l1_hits", "l1_miss_l2", "l1_miss_mem",
              "sfill_inv_sent", "sfill_inv_dropped_case_i",
              "tagmiss_forward_nofill", "loads_squashed",
              "squashed_load_fraction")

    def check(self) -> None:
        assert self.l1_hits + self.l1_miss_l2 + self.l1_miss_mem == self.loads

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


def replay(events: list[TraceEvent], hier: Hierarchy,
           engine: SpecEngine | None = None) -> ReplayStats:
    """Run a parsed trace against a hierarchy.

    Operations outside speculation windows commit as they go; inside a
    window they stack up behind the barrier until SPEC_END picks
    commit or squash.
    """
    if engine is None:
        engine = SpecEngine(hier)
    current_domain = 0
    barrier = None
    for ev in events:
        k = ev.kind
        if k is EventKind.LOAD:
            dom = current_domain if ev.domain is None else ev.domain
            entry = engine.issue_load(ev.addr, dom)
            if barrier is None:
                engine.resolve_to(entry.id)
        elif k is EventKind.STORE:
            dom = current_domain if ev.domain is None else ev.domain
            entry = engine.issue_store(ev.addr, dom)
            if barrier is None:
                engine.resolve_to(entry.id)
        elif k is EventKind.SPEC_BEGIN:
            barrier = engine.issue_barrier()
        elif k is EventKind.SPEC_END:
            if ev.commit:
                engine.commit_all()
            else:
                engine.squash_from(barrier.id)
            barrier = None
        elif k is EventKind.DOMAIN_SWITCH:
            current_domain = ev.domain
    engine.commit_all()

    loads = hier.loads
    stats = ReplayStats(
        loads=loads,
        stores=hier.stores,
        l1_hits=hier.l1_hits,
        l1_miss_l2=hier.l1_miss_l2,
        l1_miss_mem=hier.l1_miss_mem,
        sfill_inv_sent=hier.sfill_inv_sent,
        sfill_inv_dropped_case_i=hier.sfill_inv_dropped_case_i,
        tagmiss_forward_nofill=hier.tagmiss_forward_nofill,
        loads_squashed=engine.loads_squashed,
        squashed_load_fraction=(engine.loads_squashed / loads) if loads else 0.0,
    )
    stats.check()
    if hier.debug_checks:
        hier.check_invariants()
    return stats


# -- synthetic workloads --

PROFILES = ("uniform-random", "pointer-chase", "conflict-heavy", "spec-mix")

_SYNTH_BASE = 0x40_0000

# conflict-heavy flips one tag bit per pair.  With 512 lines the
# mapping index covers address bits 6..14, so every flip below sits in
# the tag at k=0 and each 2-bit index widening absorbs the next flip
# bit, retiring that weight share of the tag conflicts (70.4% at k=2,
# then 91.5%, then 97.3%)
_CONFLICT_BITS = (15, 17, 19, 21)
_CONFLICT_WEIGHTS = (0.704, 0.211, 0.058, 0.027)


def synth_trace(profile: str, events: int, seed: int,
                p_squash: float = 0.1, store_fraction: float = 0.1,
                footprint_lines: int = 4096, domains: int = 1) -> list[TraceEvent]:
    """Generate a deterministic synthetic trace.

    `events` bounds the number of loads/stores emitted; structural
    directives (SPEC_BEGIN/SPEC_END) come on top.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; pick one of {PROFILES}")
    if events < 1:
        raise ValueError("need at least one event")
    rng = Rng(seed)
    out: list[TraceEvent] = [TraceEvent(EventKind.COMMENT,
                                        text=f"synth {profile} seed={seed}")]

    def line_addr(i: int) -> int:
        return _SYNTH_BASE + i * 64

    if profile == "uniform-random":
        for _ in range(events):
            addr = line_addr(rng.choose(footprint_lines))
            dom = rng.choose(domains) if domains > 1 else 0
            kind = (EventKind.STORE if rng.chance(store_fraction)
                    else EventKind.LOAD)
            out.append(TraceEvent(kind, addr=addr, domain=dom))

    elif profile == "pointer-chase":
        # single random cycle over the footprint (Sattolo), so one lap
        # touches every line exactly once: no reuse, misses back to back
        perm = list(range(footprint_lines))
        for i in range(footprint_lines - 1, 0, -1):
            j = rng.choose(i)
            perm[i], perm[j] = perm[j], perm[i]
        at = 0
        for _ in range(events):
            out.append(TraceEvent(EventKind.LOAD, addr=line_addr(at), domain=0))
            at = perm[at]

    elif profile == "conflict-heavy":
        # pairs (A, A^bit): the partner load runs speculatively and,
        # when the flipped bit still falls above the index field, lands
        # on the resident line's mapping entry with the wrong tag
        emitted = 0
        while emitted < events:
            a = line_addr(rng.choose(256))
            r = rng.next_u64() / 18446744073709551616.0
            bit = _CONFLICT_BITS[-1]
            acc = 0.0
            for b, w in zip(_CONFLICT_BITS, _CONFLICT_WEIGHTS):
                acc += w
                if r < acc:
                    bit = b
                    break
            out.append(TraceEvent(EventKind.LOAD, addr=a, domain=0))
            out.append(TraceEvent(EventKind.SPEC_BEGIN))
            out.append(TraceEvent(EventKind.LOAD, addr=a ^ (1 << bit), domain=0))
            out.append(TraceEvent(EventKind.SPEC_END, commit=True))
            emitted += 2

    else:   # spec-mix
        emitted = 0
        while emitted < events:
            width = 2 + rng.choose(7)
            squash = rng.chance(p_squash)
            out.append(TraceEvent(EventKind.SPEC_BEGIN))
            for _ in range(width):
                addr = line_addr(rng.choose(footprint_lines))
                out.append(TraceEvent(EventKind.LOAD, addr=addr, domain=0))
            out.append(TraceEvent(EventKind.SPEC_END, commit=not squash))
            emitted += width

    return out
