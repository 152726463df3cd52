"""Behavioral sense amplifier: two-cell sensing, signal combination, carry latch.

Every function works on plain bits and also on packed bit planes (one Python
int per row, one bit per column). Pass ``ones`` as the all-columns mask when
operating on packed planes so that logical NOT stays inside the array width.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class ConfigError(ValueError):
    """Raised for a sense-amplifier configuration outside the legal table."""


class Port(Enum):
    AND = (0, 0)
    OR = (0, 1)
    XOR = (1, 0)
    SUM = (1, 1)


@dataclass(frozen=True)
class SAConfig:
    en_read: int
    en_and: int
    en_or: int
    sel1: int
    sel2: int

    def __post_init__(self) -> None:
        key = (self.en_read, self.en_and, self.en_or, self.sel1, self.sel2)
        if key not in _LEGAL:
            raise ConfigError(f"illegal sense amplifier configuration {key}")

    @property
    def port(self) -> Port:
        return Port((self.sel1, self.sel2))

    @property
    def name(self) -> str:
        return _LEGAL[(self.en_read, self.en_and, self.en_or, self.sel1, self.sel2)]


# (en_read, en_and, en_or, sel1, sel2) -> operation name. NOT and XOR share
# one configuration; NOT is XOR against the all-ones row.
_LEGAL = {
    (1, 0, 0, 0, 1): "READ",
    (0, 1, 1, 1, 0): "XOR",
    (0, 1, 0, 0, 0): "AND",
    (0, 1, 0, 1, 0): "NAND",
    (0, 0, 1, 0, 1): "OR",
    (0, 1, 1, 1, 1): "ADD",
}

READ = SAConfig(1, 0, 0, 0, 1)
NOT = SAConfig(0, 1, 1, 1, 0)
AND = SAConfig(0, 1, 0, 0, 0)
NAND = SAConfig(0, 1, 0, 1, 0)
OR = SAConfig(0, 0, 1, 0, 1)
XOR = SAConfig(0, 1, 1, 1, 0)
ADD = SAConfig(0, 1, 1, 1, 1)

CONFIGS = {"READ": READ, "NOT": NOT, "AND": AND, "NAND": NAND, "OR": OR, "XOR": XOR, "ADD": ADD}


@dataclass(frozen=True)
class ComparatorOutputs:
    and_sig: int
    or_sig: int
    nor_sig: int


@dataclass
class SAState:
    """Carry latch of one sense amplifier (or a packed plane of them)."""

    carry_latch: int = 0
    cycles: int = 0

    def reset(self, carry_in: int = 0) -> None:
        self.carry_latch = carry_in


def sense_pair(a: int, b: int, cfg: SAConfig, ones: int = 1) -> ComparatorOutputs:
    """Classify the sensed level of cells ``a`` and ``b`` against the enabled references.

    A disabled OR comparator saturates high, so its NOR output is held at 0.
    That is what lets the NAND configuration reuse the XOR port. READ senses
    only ``a``.
    """
    and_sig = a & b if cfg.en_and else 0
    if cfg.en_read:
        or_sig = a
    elif cfg.en_or:
        or_sig = a | b
    else:
        or_sig = ones
    return ComparatorOutputs(and_sig, or_sig, or_sig ^ ones)


def combine(c: ComparatorOutputs, carry_in: int, ones: int = 1) -> tuple[int, int, int]:
    """Return ``(xor, sum, cout)`` from comparator outputs and the carry input."""
    xor = (c.and_sig | c.nor_sig) ^ ones
    total = xor ^ carry_in
    cout = (c.or_sig & carry_in) | c.and_sig
    return xor, total, cout


def select(cfg: SAConfig, and_sig: int, or_sig: int, xor: int, total: int) -> int:
    port = cfg.port
    if port is Port.AND:
        return and_sig
    if port is Port.OR:
        return or_sig
    if port is Port.XOR:
        return xor
    return total


def evaluate(a: int, b: int, cfg: SAConfig, carry_in: int = 0, ones: int = 1) -> int:
    """One full SA evaluation: sense, combine, select."""
    c = sense_pair(a, b, cfg, ones)
    xor, total, _ = combine(c, carry_in, ones)
    return select(cfg, c.and_sig, c.or_sig, xor, total)


def step_add(a: int, b: int, state: SAState, ones: int = 1) -> int:
    """One bit-serial addition step: emit the sum bit and latch the carry."""
    c = sense_pair(a, b, ADD, ones)
    _, total, cout = combine(c, state.carry_latch, ones)
    state.carry_latch = cout
    state.cycles += 1
    return total
