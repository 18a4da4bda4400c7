"""Attacker-side measurement bookkeeping and recovery statistics.

An ObservationMatrix accumulates timing measurements cell by cell
(row: the secret or input byte value; column: probed block, set, or
prime position) together with a per-trial decision histogram.  The
leakage score is the plug-in mutual information of that decision
histogram; its significance is judged against a label-shuffling noise
floor computed from the same trials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ObservationMatrix:
    """Mean-latency heatmap plus per-trial decision counts."""

    __slots__ = ("rows", "cols", "lat_sum", "lat_cnt", "dec_cnt",
                 "row_label", "col_label")

    def __init__(self, rows: int, cols: int,
                 row_label: str = "value", col_label: str = "position"):
        if rows < 1 or cols < 1:
            raise ValueError("matrix needs at least one row and column")
        self.rows = rows
        self.cols = cols
        self.row_label = row_label
        self.col_label = col_label
        self.lat_sum = np.zeros((rows, cols), dtype=np.float64)
        self.lat_cnt = np.zeros((rows, cols), dtype=np.int64)
        self.dec_cnt = np.zeros((rows, cols), dtype=np.int64)

    def record(self, row: int, latencies, decision: int | None = None) -> None:
        """Fold one trial's measurement vector into the given row."""
        vec = np.asarray(latencies, dtype=np.float64)
        if vec.shape != (self.cols,):
            raise ValueError(f"expected {self.cols} latencies, got {vec.shape}")
        self.lat_sum[row] += vec
        self.lat_cnt[row] += 1
        if decision is not None:
            self.dec_cnt[row, decision] += 1

    @property
    def trials(self) -> int:
        return int(self.dec_cnt.sum())

    def mean_latency(self) -> np.ndarray:
        out = np.zeros_like(self.lat_sum)
        np.divide(self.lat_sum, self.lat_cnt, out=out, where=self.lat_cnt > 0)
        return out

    def folded(self, cols: int) -> "ObservationMatrix":
        """Group columns by position modulo `cols` (summing latencies).

        This is how an attacker who assumes a conventional set layout
        reads a positional probe: position p is charged to set p % cols.
        """
        if self.cols % cols:
            raise ValueError(f"{self.cols} columns do not fold into {cols}")
        m = ObservationMatrix(self.rows, cols, self.row_label, self.col_label)
        shape = (self.rows, self.cols // cols, cols)
        m.lat_sum = self.lat_sum.reshape(shape).sum(axis=1)
        m.lat_cnt = self.lat_cnt.reshape(shape).max(axis=1)
        m.dec_cnt = self.dec_cnt[:, :cols].copy()
        return m

    def write_csv(self, path: str, header_items=()) -> None:
        """Long-form CSV: row,col,mean_latency,trials; zero-trial cells
        are skipped."""
        mean = self.mean_latency()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for key, val in header_items:
                fh.write(f"# {key}={val}\n")
            fh.write(f"{self.row_label},{self.col_label},mean_latency,trials\n")
            for r in range(self.rows):
                row_cnt = self.lat_cnt[r]
                if not row_cnt.any():
                    continue
                for c in range(self.cols):
                    n = row_cnt[c]
                    if n == 0:
                        continue
                    fh.write(f"{r},{c},{mean[r, c]:.6f},{n}\n")


def mi_bits(counts: np.ndarray) -> float:
    """Plug-in mutual information (bits) of a contingency table."""
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    pr = p.sum(axis=1, keepdims=True)
    pc = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = p[nz] / (pr @ pc)[nz]
    return float(np.sum(p[nz] * np.log2(ratio)))


MIN_SCORE_TRIALS = 1 << 10


def leakage_score(m: ObservationMatrix) -> float:
    """Mutual information between row value and per-trial decision."""
    n = m.trials
    if n < MIN_SCORE_TRIALS:
        raise ValueError(
            f"leakage score needs at least {MIN_SCORE_TRIALS} decisions, have {n}")
    return mi_bits(m.dec_cnt)


def noise_floor(m: ObservationMatrix, permutations: int = 100,
                seed: int = 0x5EED) -> float:
    """Largest score obtainable with the row labels shuffled.

    Shuffling breaks any real row/decision association while keeping
    both marginals, so the returned maximum tracks the small-sample
    bias a plug-in estimate carries even on independent data.
    """
    counts = m.dec_cnt
    n = int(counts.sum())
    if n == 0 or permutations < 1:
        return 0.0
    rows_idx, cols_idx = np.nonzero(counts)
    reps = counts[rows_idx, cols_idx]
    rows_flat = np.repeat(rows_idx, reps)
    cols_flat = np.repeat(cols_idx, reps)
    gen = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    ncols = m.cols
    for _ in range(permutations):
        shuffled = gen.permutation(rows_flat)
        table = np.bincount(shuffled * ncols + cols_flat,
                            minlength=m.rows * ncols)
        worst = max(worst, mi_bits(table.reshape(m.rows, ncols)))
    return worst


NIBBLE_VALUES = 16


@dataclass(slots=True)
class RecoveryResult:
    """Per-key-byte recovered high nibble with its vote share."""
    nibbles: list
    shares: list

    @property
    def complete(self) -> bool:
        return all(n is not None for n in self.nibbles)

    def as_text(self) -> list[str]:
        out = []
        for j, (n, s) in enumerate(zip(self.nibbles, self.shares)):
            shown = "NONE" if n is None else f"0x{n:x}"
            out.append(f"byte {j:2d}: {shown} (vote share {s:.3f})")
        return out

    def as_summary(self) -> dict:
        return {
            "nibbles": ["NONE" if n is None else n for n in self.nibbles],
            "vote_shares": [round(s, 6) for s in self.shares],
        }


def recover_nibble(m: ObservationMatrix, mode: str, table_lo: int,
                   vote_threshold: float = 0.5,
                   fold_to: int | None = None) -> tuple[int | None, float]:
    """Vote a key nibble out of one byte position's latency heatmap.

    Each populated row v picks its extreme column c inside the 16-line
    table window starting at table_lo; since the victim touches line
    (v XOR key) >> 4, the row votes for c XOR (v >> 4).  The winning
    nibble must carry at least vote_threshold of the votes.
    """
    if mode not in ("dip", "peak"):
        raise ValueError("mode is 'dip' or 'peak'")
    if fold_to is not None and m.cols != fold_to:
        m = m.folded(fold_to)
    mean = m.mean_latency()
    votes = np.zeros(NIBBLE_VALUES, dtype=np.int64)
    for v in range(m.rows):
        if not m.lat_cnt[v].any():
            continue
        window = mean[v, table_lo:table_lo + NIBBLE_VALUES]
        c = int(np.argmin(window) if mode == "dip" else np.argmax(window))
        votes[c ^ (v >> 4)] += 1
    total = int(votes.sum())
    if total == 0:
        return None, 0.0
    best = int(np.argmax(votes))
    share = votes[best] / total
    if share < vote_threshold:
        return None, share
    return best, share


def extreme_with_margin(values: np.ndarray, mode: str) -> tuple[int, float]:
    """Extreme column and how far it stands from the mean of the rest."""
    if mode == "dip":
        c = int(np.argmin(values))
    else:
        c = int(np.argmax(values))
    rest = np.delete(values, c)
    if rest.size == 0:
        return c, 0.0
    margin = float(rest.mean() - values[c]) if mode == "dip" \
        else float(values[c] - rest.mean())
    return c, margin


def recover_byte(values: np.ndarray, mode: str,
                 threshold: float) -> tuple[int | None, float]:
    """Pick the significant extreme column as the recovered byte."""
    c, margin = extreme_with_margin(values, mode)
    if margin < threshold:
        return None, margin
    return c, margin
