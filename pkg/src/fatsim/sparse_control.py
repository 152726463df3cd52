"""Sparse addition control: ternary weight codes, zero skipping and the three-stage dot product."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from fatsim.ledger import CostLedger
from fatsim.memory_array import ArrayError, Cma, Field


class WeightError(ValueError):
    """Raised for weights outside the ternary (or binary) alphabet."""


@dataclass(frozen=True)
class TernaryWeightCode:
    sign: int
    data: int

    def __post_init__(self) -> None:
        if (self.sign, self.data) not in _DECODE:
            raise WeightError(f"illegal weight code ({self.sign}, {self.data})")

    @property
    def value(self) -> int:
        return _DECODE[(self.sign, self.data)]

    @property
    def activates(self) -> bool:
        return self.data == 1


_DECODE = {(0, 1): 1, (0, 0): 0, (1, 1): -1}
_ENCODE = {v: k for k, v in _DECODE.items()}


def encode_weight(w: int) -> TernaryWeightCode:
    if isinstance(w, bool) or w not in _ENCODE:
        raise WeightError(f"ternary weight must be -1, 0 or +1, got {w!r}")
    return TernaryWeightCode(*_ENCODE[int(w)])


def extend_binary_weight(w: int) -> TernaryWeightCode:
    """BWN fallback: a 1-bit weight widened to the 2-bit code (never the zero code)."""
    if w not in (-1, 1):
        raise WeightError(f"binary weight must be -1 or +1, got {w!r}")
    return encode_weight(w)


@dataclass
class WeightRegisterFile:
    codes: list[TernaryWeightCode] = field(default_factory=list)
    capacity: int = 32

    def __post_init__(self) -> None:
        if len(self.codes) > self.capacity:
            raise WeightError(f"{len(self.codes)} weights exceed register capacity {self.capacity}")

    @classmethod
    def from_values(cls, values: Sequence[int], capacity: int = 32, binary: bool = False) -> WeightRegisterFile:
        enc = extend_binary_weight if binary else encode_weight
        return cls([enc(int(v)) for v in values], capacity)

    def values(self) -> list[int]:
        return [c.value for c in self.codes]

    def __len__(self) -> int:
        return len(self.codes)


@dataclass
class DotProductStats:
    row_activations: int = 0
    add_passes: int = 0
    sub_passes: int = 0
    copy_passes: int = 0
    clear_passes: int = 0
    skipped_rows: int = 0
    operand_rows: int = 0
    reg_loads: int = 0


@dataclass(frozen=True)
class TraceRecord:
    stage: int
    rows: tuple[int, ...]
    op: str


class Trace(list):
    """Ordered activation trace; ``rows`` lists operand indices read by each pass."""

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"stage": r.stage, "rows": list(r.rows), "op": r.op}) + "\n" for r in self)

    @classmethod
    def from_jsonl(cls, text: str) -> Trace:
        out = cls()
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                out.append(TraceRecord(d["stage"], tuple(d["rows"]), d["op"]))
        return out


class AccumulatorPool:
    """Hands out accumulator fields. Least-used free position wins; ties go round robin."""

    def __init__(self, positions: Sequence[Field]):
        if len(positions) < 3:
            raise ArrayError("a dot product needs at least three accumulator positions")
        self.positions = list(positions)
        self.uses = [0] * len(self.positions)
        self._busy: set[int] = set()
        self._cursor = 0

    def acquire(self) -> Field:
        n = len(self.positions)
        best = None
        for k in range(n):
            idx = (self._cursor + k) % n
            if idx in self._busy:
                continue
            if best is None or self.uses[idx] < self.uses[best]:
                best = idx
        if best is None:
            raise ArrayError("accumulator pool exhausted")
        self._busy.add(best)
        self.uses[best] += 1
        self._cursor = (best + 1) % n
        return self.positions[best]

    def release(self, f: Field) -> None:
        self._busy.discard(self.positions.index(f))

    def release_all(self) -> None:
        self._busy.clear()


def fixed_pool(array: Cma) -> AccumulatorPool:
    """Three accumulators parked at the top of the data rows."""
    g = array.geometry
    base = g.rows - 3 * g.acc_bits
    return AccumulatorPool([Field(base + k * g.acc_bits, g.acc_bits) for k in range(3)])


def _as_codes(weights) -> list[TernaryWeightCode]:
    if isinstance(weights, WeightRegisterFile):
        return list(weights.codes)
    out = []
    for w in weights:
        out.append(w if isinstance(w, TernaryWeightCode) else encode_weight(int(w)))
    return out


class _Accumulator:
    """Left-fold of one sign group into a chain of pool fields."""

    def __init__(self, array: Cma, pool: AccumulatorPool, width: int, mask: int, stage: int, stats, trace):
        self.array, self.pool, self.width, self.mask = array, pool, width, mask
        self.stage, self.stats, self.trace = stage, stats, trace
        self.current: Field | None = None
        self.pending: tuple[int, Field] | None = None

    def push(self, idx: int, operand: Field) -> None:
        if self.current is None and self.pending is None:
            self.pending = (idx, operand)
            return
        dest = self.pool.acquire()
        if self.pending is not None:
            j, first = self.pending
            self.pending = None
            self.array.vector_add(first, operand, dest, self.width, self.mask)
            rows: tuple[int, ...] = (j, idx)
        else:
            self.array.vector_add(self.current, operand, dest, self.width, self.mask)
            self.pool.release(self.current)
            rows = (idx,)
        self.current = dest
        self.stats.add_passes += 1
        self._log(rows, "add")

    def finish(self) -> Field | None:
        if self.pending is not None:
            j, only = self.pending
            self.pending = None
            dest = self.pool.acquire()
            self.array.copy_operand(only, dest, self.width, self.mask)
            self.current = dest
            self.stats.copy_passes += 1
            self._log((j,), "copy")
        return self.current

    def _log(self, rows, op) -> None:
        if self.trace is not None:
            self.trace.append(TraceRecord(self.stage, rows, op))


def sparse_dot_product(
    weights,
    operands: Sequence[Field],
    array: Cma,
    mask=None,
    pool: AccumulatorPool | None = None,
    trace: Trace | None = None,
    capacity: int = 32,
) -> tuple[Field, DotProductStats]:
    """Column-parallel ternary dot product with zero skipping.

    Stage 1 folds the +1 rows into P, stage 2 folds the -1 rows into M and
    stage 3 computes P - M once. Weight vectors longer than the register file
    are streamed through it in chunks; P and M carry across chunks.
    Returns the signed result field and pass statistics.
    """
    codes = _as_codes(weights)
    if len(codes) != len(operands):
        raise WeightError(f"{len(codes)} weights for {len(operands)} operand rows")
    if capacity < 1:
        raise WeightError("register capacity must be positive")
    g = array.geometry
    width = g.acc_bits
    m = array.mask(mask)
    pool = pool or fixed_pool(array)
    pool.release_all()
    stats = DotProductStats()
    start = array.ledger.row_activations
    plus = _Accumulator(array, pool, width, m, 1, stats, trace)
    minus = _Accumulator(array, pool, width, m, 2, stats, trace)

    for lo in range(0, len(codes), capacity):
        regs = WeightRegisterFile(codes[lo:lo + capacity], capacity)
        stats.reg_loads += len(regs)
        array.ledger.reg_loads += len(regs)
        for k, code in enumerate(regs.codes):
            if code.value == 1:
                plus.push(lo + k, operands[lo + k])
        for k, code in enumerate(regs.codes):
            if code.value == -1:
                minus.push(lo + k, operands[lo + k])
        stats.skipped_rows += sum(1 for c in regs.codes if not c.activates)
    stats.operand_rows = len(codes) - stats.skipped_rows

    p_acc = plus.finish()
    m_acc = minus.finish()
    if m_acc is None:
        if p_acc is None:
            p_acc = pool.acquire()
            array.clear_field(p_acc, width, m)
            stats.clear_passes += 1
            if trace is not None:
                trace.append(TraceRecord(3, (), "clear"))
        result = p_acc
    else:
        scratch = pool.acquire()
        lhs = p_acc if p_acc is not None else array.zeros_field(width)
        # (NOT M) goes to scratch; M's slot is then free to take the result.
        pool.release(m_acc)
        dest = pool.acquire()
        array.vector_sub(lhs, m_acc, dest, width, scratch, m)
        pool.release(scratch)
        if p_acc is not None:
            pool.release(p_acc)
        stats.sub_passes += 1
        if trace is not None:
            trace.append(TraceRecord(3, (), "sub"))
        result = dest
    stats.row_activations = array.ledger.row_activations - start
    return Field(result.base_row, width, signed=True), stats


def reduce_across_cmas(partials, ledger: CostLedger | None = None):
    """Sum partial results from distinct CMAs in ascending index order.

    Partials may be scalars or equal-length arrays (one lane per column).
    """
    partials = list(partials)
    if not partials:
        return 0
    total = np.asarray(partials[0], dtype=np.int64).copy()
    for p in partials[1:]:
        total = total + np.asarray(p, dtype=np.int64)
    if ledger is not None:
        ledger.reduce_ops += (len(partials) - 1) * int(total.size)
    return int(total) if total.ndim == 0 else total


def reference_dot(weights: Sequence[int], values: Sequence[int]) -> int:
    return int(sum(int(w) * int(x) for w, x in zip(weights, values)))

