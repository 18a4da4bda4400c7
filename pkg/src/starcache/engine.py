"""Simplified speculative execution engine.

A window of in-flight instructions stands in for a reorder buffer.
Loads execute the moment they issue; a load issues speculatively
whenever any older window entry has not finished executing (an
unresolved branch barrier, or a store, which only executes at commit).
There is no cycle-accurate pipeline: mispredictions are explicit
directives from a harness or trace, delivered as squash_from on the
barrier that opened the wrong path.

Squashing walks the discarded entries in program order.  Each executed
load either rides out the squash (its data came from an L1 hit, so the
fill revealed nothing new) or triggers a one-way downward invalidation
carrying the level its data came from.  The issuer never waits for
those invalidations; execution resumes as soon as they are sent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .hierarchy import Hierarchy, MemoryResponse, SFillInvRequest


class EntryKind(enum.Enum):
    LOAD = "load"
    STORE = "store"
    BARRIER = "barrier"


@dataclass(slots=True)
class WindowEntry:
    id: int
    kind: EntryKind
    addr: int | None
    domain: int | None
    executed: bool
    spec_bit: int = 0
    response: MemoryResponse | None = None
    squashed: bool = False


@dataclass(slots=True)
class SquashReport:
    """Disposition of every load discarded by one squash.

    loads_squashed always equals the sum of the three outcome counts.
    """
    loads_squashed: int = 0
    sfill_inv_sent: int = 0
    skipped_l1hit: int = 0
    skipped_unexecuted: int = 0

    def check(self) -> None:
        assert self.loads_squashed == (self.sfill_inv_sent + self.skipped_l1hit
                                       + self.skipped_unexecuted)


class WindowFullError(RuntimeError):
    pass


class SpecEngine:
    """Issue window over one memory hierarchy."""

    def __init__(self, hier: Hierarchy, capacity: int = 64,
                 clear_specbit_on_commit: bool = False):
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.hier = hier
        self.capacity = capacity
        self.clear_specbit_on_commit = clear_specbit_on_commit
        self.window: list[WindowEntry] = []
        self._next_id = 0
        self._unexecuted = 0
        self.loads_issued = 0
        self.loads_squashed = 0
        self.squashes = 0

    # -- bookkeeping --
    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _make_room(self) -> None:
        """Eagerly commit the resolved head of a full window.  A barrier
        at the head stays put: its fate is the caller's directive, so a
        window full up to one is a driver bug."""
        while self.window and len(self.window) >= self.capacity:
            if self.window[0].kind is EntryKind.BARRIER:
                raise WindowFullError(
                    "window full behind an unresolved barrier; squash or commit first")
            self._commit_head()

    def _commit_head(self) -> WindowEntry:
        entry = self.window.pop(0)
        if entry.kind is EntryKind.STORE:
            # stores execute only now, at commit, architecturally
            self.hier.store(entry.addr, entry.domain)
            entry.executed = True
            self._unexecuted -= 1
        elif entry.kind is EntryKind.BARRIER:
            entry.executed = True
            self._unexecuted -= 1
        elif self.clear_specbit_on_commit and entry.spec_bit:
            rec = self.hier.l1.find(entry.addr, entry.domain)
            if rec is not None:
                rec.spec_bit = 0
        return entry

    # -- issue --
    def issue_load(self, addr: int, domain: int) -> WindowEntry:
        self._make_room()
        spec = 1 if self._unexecuted else 0
        out = self.hier.load(addr, domain, spec)
        entry = WindowEntry(self._take_id(), EntryKind.LOAD, addr, domain,
                            True, spec,
                            MemoryResponse(out.latency, out.source_level))
        self.window.append(entry)
        self.loads_issued += 1
        return entry

    def issue_store(self, addr: int, domain: int) -> WindowEntry:
        self._make_room()
        entry = WindowEntry(self._take_id(), EntryKind.STORE, addr, domain, False)
        self.window.append(entry)
        self._unexecuted += 1
        return entry

    def issue_barrier(self) -> WindowEntry:
        """An unresolved older instruction (think: a branch whose
        outcome is pending).  Everything issued behind it is
        speculative until squash_from or resolve_to settles it."""
        self._make_room()
        entry = WindowEntry(self._take_id(), EntryKind.BARRIER, None, None, False)
        self.window.append(entry)
        self._unexecuted += 1
        return entry

    # -- resolution --
    def _position(self, entry_id: int) -> int:
        for i, e in enumerate(self.window):
            if e.id == entry_id:
                return i
        raise KeyError(f"entry {entry_id} not in window")

    def resolve_to(self, entry_id: int) -> None:
        """Commit every entry up to and including entry_id, in order.
        Barriers resolve (prediction was right) and stores execute as
        they commit."""
        pos = self._position(entry_id)
        for _ in range(pos + 1):
            self._commit_head()

    def commit_all(self) -> None:
        if self.window:
            self.resolve_to(self.window[-1].id)

    def squash_from(self, entry_id: int) -> SquashReport:
        """Discard entry_id and everything younger; the wrong path.

        Executed loads are examined in program order: an L1-hit load is
        skipped (its line was resident already), any other executed load
        sends one invalidation stamped with its data's source level.
        """
        pos = self._position(entry_id)
        doomed = self.window[pos:]
        del self.window[pos:]
        self.squashes += 1
        report = SquashReport()
        for entry in doomed:
            entry.squashed = True
            if not entry.executed:
                self._unexecuted -= 1
            if entry.kind is not EntryKind.LOAD:
                continue
            report.loads_squashed += 1
            self.loads_squashed += 1
            if not entry.executed:
                report.skipped_unexecuted += 1
            elif entry.response.source_level == 1:
                report.skipped_l1hit += 1
            else:
                self.hier.sfill_inv(SFillInvRequest(
                    entry.addr, entry.domain, entry.response.source_level))
                report.sfill_inv_sent += 1
        report.check()
        return report
