"""Event counters shared by the functional simulator and the cost model."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class CostLedger:
    """Monotonic event counters.

    ``critical_row_activations`` tracks the longest serial chain of row
    activations. It adds up under :meth:`then` (serial composition) and takes
    the max under :meth:`merge` (parallel composition). Every other counter
    adds up under both.
    """

    row_activations: int = 0
    critical_row_activations: int = 0
    sa_cycles: int = 0
    cell_writes: int = 0
    cell_reads: int = 0
    reg_loads: int = 0
    reduce_ops: int = 0
    dpu_ops: int = 0
    element_adds: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"negative counter {f.name}")

    def record_activation(self, columns: int, writes: int | None = None) -> None:
        self.row_activations += 1
        self.critical_row_activations += 1
        self.sa_cycles += columns
        self.cell_reads += 2 * columns
        self.cell_writes += columns if writes is None else writes

    def _combine(self, other: CostLedger, parallel: bool) -> CostLedger:
        out = {}
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if f.name == "critical_row_activations" and parallel:
                out[f.name] = max(a, b)
            else:
                out[f.name] = a + b
        return CostLedger(**out)

    def merge(self, other: CostLedger) -> CostLedger:
        """Combine ledgers of work that ran concurrently (e.g. different CMAs)."""
        return self._combine(other, parallel=True)

    def then(self, other: CostLedger) -> CostLedger:
        """Combine ledgers of work that ran back to back."""
        return self._combine(other, parallel=False)

    def absorb(self, other: CostLedger, parallel: bool = False) -> None:
        merged = self._combine(other, parallel)
        for f in fields(self):
            setattr(self, f.name, getattr(merged, f.name))

    def is_empty(self) -> bool:
        return all(getattr(self, f.name) == 0 for f in fields(self))

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}
