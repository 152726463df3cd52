"""Bit-accurate simulator and cost model for a sparse ternary in-memory accelerator."""

from fatsim.ledger import CostLedger

__all__ = ["CostLedger"]
__version__ = "0.1.0"
