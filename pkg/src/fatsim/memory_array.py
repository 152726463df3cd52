"""One computing memory array (CMA): a bit grid with column-parallel bit-serial arithmetic.

Each row is held as a Python int used as a bit plane: bit ``c`` is the cell in
column ``c``. Operands live down a column, LSB at the lowest row of their slot.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from fatsim import sa_logic as sa
from fatsim.ledger import CostLedger


class ArrayError(ValueError):
    """Raised for out-of-range slots, overflowing values or illegal row use."""


@dataclass(frozen=True)
class CmaGeometry:
    rows: int = 512
    cols: int = 256
    operand_bits: int = 8
    acc_bits: int = 16

    def __post_init__(self) -> None:
        if min(self.rows, self.cols, self.operand_bits, self.acc_bits) < 1:
            raise ArrayError("geometry fields must be positive")
        if self.operand_bits > self.acc_bits:
            raise ArrayError("operand_bits must not exceed acc_bits")
        if self.rows < self.acc_bits:
            raise ArrayError("array too short to hold one accumulator")

    @property
    def ones_row(self) -> int:
        return self.rows

    @property
    def zeros_row(self) -> int:
        return self.rows + 1

    @property
    def physical_rows(self) -> int:
        return self.rows + 2

    @property
    def full_mask(self) -> int:
        return (1 << self.cols) - 1


@dataclass(frozen=True)
class Field:
    """A slot family: the same rows in every enabled column."""

    base_row: int
    bits: int
    signed: bool = False

    @property
    def rows(self) -> range:
        return range(self.base_row, self.base_row + self.bits)

    def overlaps(self, other: Field) -> bool:
        return self.base_row < other.base_row + other.bits and other.base_row < self.base_row + self.bits


@dataclass(frozen=True)
class OperandSlot:
    col: int
    base_row: int
    bits: int
    signed: bool = False

    @property
    def field(self) -> Field:
        return Field(self.base_row, self.bits, self.signed)


Mask = int | Iterable[int] | None


def value_range(bits: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def _plane_bits(plane: int, cols: int) -> np.ndarray:
    raw = plane.to_bytes((cols + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:cols]


class Cma:
    """A single computing memory array with its own sense amplifiers and counters."""

    def __init__(self, geometry: CmaGeometry | None = None, allow_inplace: bool = False):
        self.geometry = geometry or CmaGeometry()
        self.allow_inplace = allow_inplace
        g = self.geometry
        self._planes = [0] * g.physical_rows
        self._planes[g.ones_row] = g.full_mask
        self._writes: list[Counter] = [Counter() for _ in range(g.physical_rows)]
        self.ledger = CostLedger()
        self.sa = sa.SAState()

    # ---- helpers -------------------------------------------------------

    def mask(self, mask: Mask = None) -> int:
        g = self.geometry
        if mask is None:
            return g.full_mask
        if isinstance(mask, int):
            if mask < 0 or mask > g.full_mask:
                raise ArrayError("column mask outside the array")
            return mask
        out = 0
        for c in mask:
            if not 0 <= c < g.cols:
                raise ArrayError(f"column {c} outside the array")
            out |= 1 << c
        return out

    def _is_const(self, f: Field) -> bool:
        return f.base_row in (self.geometry.ones_row, self.geometry.zeros_row)

    def _check_field(self, f: Field, source: bool = False) -> None:
        if source and self._is_const(f):
            return
        if f.bits < 1 or f.base_row < 0 or f.base_row + f.bits > self.geometry.rows:
            raise ArrayError(f"slot rows {f.base_row}..{f.base_row + f.bits - 1} outside data rows")

    def _source_row(self, f: Field, i: int) -> int:
        if self._is_const(f):
            return f.base_row
        if i < f.bits:
            return f.base_row + i
        # Zero-extend via the constant row, sign-extend by re-reading the top bit.
        return f.base_row + f.bits - 1 if f.signed else self.geometry.zeros_row

    def _store(self, row: int, value: int, mask: int) -> None:
        if row >= self.geometry.rows:
            raise ArrayError("constant rows are read-only")
        self._planes[row] = (self._planes[row] & ~mask) | (value & mask)
        self._writes[row][mask] += 1

    def _check_dest(self, dest: Field, width: int, *sources: Field) -> None:
        self._check_field(dest)
        for s in sources:
            self._check_field(s, source=True)
        if width < 1 or width > self.geometry.acc_bits:
            raise ArrayError(f"width {width} outside 1..{self.geometry.acc_bits}")
        if dest.bits < width:
            raise ArrayError("destination narrower than the operation width")
        target = Field(dest.base_row, width)
        if not self.allow_inplace and any(target.overlaps(s) for s in sources):
            raise ArrayError("destination overlaps a source within one pass")

    def _activate(self, mask: int) -> None:
        self.ledger.record_activation(mask.bit_count())

    # ---- scalar plumbing -----------------------------------------------

    def write_operand(self, slot: OperandSlot, value: int) -> None:
        self.write_field(slot.field, {slot.col: value})

    def read_operand(self, slot: OperandSlot) -> int:
        return int(self.read_field(slot.field, 1 << self._col(slot.col))[slot.col])

    def _col(self, col: int) -> int:
        if not 0 <= col < self.geometry.cols:
            raise ArrayError(f"column {col} outside the array")
        return col

    def write_field(self, f: Field, values) -> None:
        """Load host values into a slot family.

        ``values`` is either a mapping column -> value or a sequence with one
        entry per column (``None`` entries are left untouched).
        """
        self._check_field(f)
        items = values.items() if isinstance(values, dict) else enumerate(values)
        lo, hi = value_range(f.bits, f.signed)
        planes = [0] * f.bits
        mask = 0
        for col, v in items:
            if v is None:
                continue
            v = int(v)
            self._col(col)
            if not lo <= v <= hi:
                raise ArrayError(f"value {v} does not fit {f.bits} bits")
            v &= (1 << f.bits) - 1
            bit = 1 << col
            mask |= bit
            for i in range(f.bits):
                if (v >> i) & 1:
                    planes[i] |= bit
        if not mask:
            return
        for i, p in enumerate(planes):
            self._store(f.base_row + i, p, mask)
        self.ledger.cell_writes += f.bits * mask.bit_count()

    def read_field(self, f: Field, mask: Mask = None) -> np.ndarray:
        """Read a slot family into a host array (zeros outside the mask)."""
        self._check_field(f)
        m = self.mask(mask)
        cols = self.geometry.cols
        out = np.zeros(cols, dtype=np.int64)
        for i in range(f.bits):
            out |= _plane_bits(self._planes[f.base_row + i] & m, cols).astype(np.int64) << i
        if f.signed:
            top = 1 << (f.bits - 1)
            out = np.where(out & top, out - (1 << f.bits), out)
        self.ledger.cell_reads += f.bits * m.bit_count()
        return out

    # ---- in-array operations -------------------------------------------

    def rowpair_bool(self, op: str, row_a: int, row_b: int | None, dest: int, mask: Mask = None) -> None:
        op = op.upper()
        if op not in ("AND", "OR", "XOR", "NAND", "NOT", "READ"):
            raise ArrayError(f"unsupported row operation {op}")
        g = self.geometry
        if op == "NOT":
            row_b = g.ones_row
        elif op == "READ":
            row_b = g.zeros_row
        for r in (row_a, row_b, dest):
            if r is None or not 0 <= r < g.physical_rows:
                raise ArrayError(f"row {r} outside the array")
        if dest >= g.rows:
            raise ArrayError("constant rows are read-only")
        if (op != "READ" and row_a == row_b) or dest in (row_a, row_b):
            raise ArrayError("rows must be distinct within one activation")
        m = self.mask(mask)
        out = sa.evaluate(self._planes[row_a], self._planes[row_b], sa.CONFIGS[op], 0, g.full_mask)
        self._activate(m)
        self._store(dest, out, m)

    def _serial_add(self, a: Field, b: Field, dest: Field, width: int, m: int, carry_in: int) -> None:
        ones = self.geometry.full_mask
        self.sa.reset(ones if carry_in else 0)
        for i in range(width):
            s = sa.step_add(self._planes[self._source_row(a, i)], self._planes[self._source_row(b, i)], self.sa, ones)
            self._activate(m)
            self._store(dest.base_row + i, s, m)

    def vector_add(self, a: Field, b: Field, dest: Field, width: int, mask: Mask = None, carry_in: int = 0) -> None:
        """dest = (a + b + carry_in) mod 2**width in every enabled column."""
        self._check_dest(dest, width, a, b)
        self._serial_add(a, b, dest, width, self.mask(mask), carry_in)

    def vector_sub(self, a: Field, b: Field, dest: Field, width: int, scratch: Field, mask: Mask = None) -> None:
        """dest = (a - b) mod 2**width: NOT b into ``scratch``, then add with carry 1."""
        self._check_dest(scratch, width, b)
        self._check_dest(dest, width, a, scratch)
        if scratch.overlaps(a):
            raise ArrayError("scratch overlaps the minuend")
        m = self.mask(mask)
        for i in range(width):
            self.rowpair_bool("NOT", self._source_row(b, i), None, scratch.base_row + i, m)
        self._serial_add(a, Field(scratch.base_row, width), dest, width, m, 1)

    def negate(self, b: Field, dest: Field, width: int, scratch: Field, mask: Mask = None) -> None:
        """dest = -b, computed as 0 - b against the zeros row."""
        self.vector_sub(self.zeros_field(width), b, dest, width, scratch, mask)

    def copy_operand(self, src: Field, dest: Field, width: int, mask: Mask = None) -> None:
        """Copy (and zero/sign-extend) via XOR with the zeros row."""
        self._check_dest(dest, width, src)
        m = self.mask(mask)
        zeros = self.geometry.zeros_row
        for i in range(width):
            row = self._source_row(src, i)
            if row == zeros:
                self.rowpair_bool("READ", row, None, dest.base_row + i, m)
            else:
                self.rowpair_bool("XOR", row, zeros, dest.base_row + i, m)

    def clear_field(self, dest: Field, width: int, mask: Mask = None) -> None:
        """Write zeros with one read-of-zeros pass."""
        self._check_dest(dest, width)
        m = self.mask(mask)
        for i in range(width):
            self.rowpair_bool("READ", self.geometry.zeros_row, None, dest.base_row + i, m)

    def zeros_field(self, bits: int = 1) -> Field:
        """A source field whose every bit reads the all-zeros row."""
        return Field(self.geometry.zeros_row, bits)

    # ---- inspection ----------------------------------------------------

    def plane(self, row: int) -> int:
        return self._planes[row]

    def constants_intact(self) -> bool:
        g = self.geometry
        return self._planes[g.ones_row] == g.full_mask and self._planes[g.zeros_row] == 0

    def wear(self) -> np.ndarray:
        """Per-cell write counts, shape (physical_rows, cols)."""
        g = self.geometry
        out = np.zeros((g.physical_rows, g.cols), dtype=np.int64)
        for r, counter in enumerate(self._writes):
            for m, n in counter.items():
                out[r] += _plane_bits(m, g.cols).astype(np.int64) * n
        return out

    def snapshot(self) -> bytes:
        """Row-major, bit-packed, little-endian within bytes, constant rows included."""
        g = self.geometry
        grid = np.stack([_plane_bits(p, g.cols) for p in self._planes])
        return np.packbits(grid.reshape(-1), bitorder="little").tobytes()

    def restore(self, blob: bytes) -> None:
        g = self.geometry
        n = g.physical_rows * g.cols
        if len(blob) != (n + 7) // 8:
            raise ArrayError("snapshot size does not match geometry")
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little")[:n]
        grid = bits.reshape(g.physical_rows, g.cols)
        planes = [int.from_bytes(np.packbits(row, bitorder="little").tobytes(), "little") for row in grid]
        if planes[g.ones_row] != g.full_mask or planes[g.zeros_row] != 0:
            raise ArrayError("snapshot corrupts the constant rows")
        self._planes = planes
