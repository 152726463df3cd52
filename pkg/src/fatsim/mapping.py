"""Img2Col lowering, the five mapping schemes, grid schedules and wear accounting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from math import ceil

import numpy as np


class PlanError(ValueError):
    """Raised for invalid shapes or scheme/shape combinations."""


class MapScheme(str, Enum):
    DIRECT_OS = "direct-os"
    OS = "img2col-os"
    IS = "img2col-is"
    WS = "img2col-ws"
    CS = "img2col-cs"

    @classmethod
    def parse(cls, text: str | MapScheme) -> MapScheme:
        if isinstance(text, MapScheme):
            return text
        key = text.lower().strip()
        for s in cls:
            if key in (s.value, s.name.lower(), s.value.replace("img2col-", "")):
                return s
        raise PlanError(f"unknown mapping scheme {text!r}")


@dataclass(frozen=True)
class ConvShape:
    n: int
    c: int
    h: int
    w: int
    kn: int
    kh: int
    kw: int
    s: int = 1
    p: int = 0

    def __post_init__(self) -> None:
        for name in ("n", "c", "h", "w", "kn", "kh", "kw", "s"):
            if getattr(self, name) < 1:
                raise PlanError(f"{name} must be >= 1")
        if self.p < 0:
            raise PlanError("padding must be >= 0")
        for size, k in ((self.h, self.kh), (self.w, self.kw)):
            # Trailing rows that do not fill a full stride are dropped (floor).
            if size + 2 * self.p - k < 0:
                raise PlanError(f"kernel {k} larger than padded input {size + 2 * self.p}")

    @property
    def oh(self) -> int:
        return (self.h + 2 * self.p - self.kh) // self.s + 1

    @property
    def ow(self) -> int:
        return (self.w + 2 * self.p - self.kw) // self.s + 1

    @property
    def i(self) -> int:
        return self.oh * self.ow

    @property
    def j(self) -> int:
        return self.c * self.kh * self.kw

    @property
    def ni(self) -> int:
        return self.n * self.i


RESNET18_LAYER10 = ConvShape(n=5, c=128, h=28, w=28, kn=256, kh=3, kw=3, s=2, p=1)


@dataclass(frozen=True)
class Img2ColLayout:
    i: int
    j: int
    ax: np.ndarray  # (j, n*i)
    aw: np.ndarray | None  # (kn, j)
    gather: np.ndarray  # (j, n*i) flat indices into the padded input


def _gather_indices(shape: ConvShape) -> np.ndarray:
    hp, wp = shape.h + 2 * shape.p, shape.w + 2 * shape.p
    c, kh, kw = np.meshgrid(np.arange(shape.c), np.arange(shape.kh), np.arange(shape.kw), indexing="ij")
    oh, ow = np.meshgrid(np.arange(shape.oh), np.arange(shape.ow), indexing="ij")
    rows = oh.reshape(1, -1) * shape.s + kh.reshape(-1, 1)
    cols = ow.reshape(1, -1) * shape.s + kw.reshape(-1, 1)
    per_image = (c.reshape(-1, 1) * hp + rows) * wp + cols  # (j, i)
    img = np.arange(shape.n) * shape.c * hp * wp
    return (per_image[:, None, :] + img[None, :, None]).reshape(shape.j, shape.ni)


def img2col(x: np.ndarray, shape: ConvShape, w: np.ndarray | None = None) -> Img2ColLayout:
    """Lower a convolution input (N, C, H, W) to the (J, N*I) activation matrix."""
    x = np.asarray(x)
    if x.shape != (shape.n, shape.c, shape.h, shape.w):
        raise PlanError(f"input shape {x.shape} does not match {shape}")
    p = shape.p
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    gather = _gather_indices(shape)
    aw = None
    if w is not None:
        w = np.asarray(w)
        if w.shape != (shape.kn, shape.c, shape.kh, shape.kw):
            raise PlanError(f"weight shape {w.shape} does not match {shape}")
        aw = w.reshape(shape.kn, shape.j)
    return Img2ColLayout(shape.i, shape.j, padded.reshape(-1)[gather], aw, gather)


@dataclass(frozen=True)
class HwConfig:
    num_cmas: int = 4096
    mw: int = 256
    rows: int = 512
    operand_bits: int = 8
    acc_bits: int = 16
    weight_regs: int = 32
    unroll_l: int = 1
    mh: int | None = None
    # Which CMA count the CS cost path replicates over: "is" uses the
    # ceil(J/MH)*ceil(NI/MW) footprint, "verbatim" the occupied-CMAs formula.
    cs_footprint: str = "is"

    def __post_init__(self) -> None:
        if self.mh is None:
            object.__setattr__(self, "mh", self.rows // self.operand_bits)
        for name in ("num_cmas", "mw", "rows", "operand_bits", "acc_bits", "weight_regs", "unroll_l", "mh"):
            if getattr(self, name) < 1:
                raise PlanError(f"{name} must be >= 1")
        if self.cs_footprint not in ("is", "verbatim"):
            raise PlanError("cs_footprint must be 'is' or 'verbatim'")

    @property
    def mh_eff(self) -> int:
        return max(self.mh // 2, 1)

    @property
    def total_registers(self) -> int:
        return self.num_cmas * self.weight_regs


@dataclass(frozen=True)
class Assignment:
    cma: int
    j_block: int
    q_block: int
    filters: tuple[int, ...]


@dataclass(frozen=True)
class GridStep:
    index: int
    assignments: tuple[Assignment, ...]


@dataclass
class MappingPlan:
    scheme: MapScheme
    x_data_per_load: int
    x_load_times: int
    w_data_per_load: int
    w_load_times: int
    parallel_cols: int
    occupied_cmas: int
    computing_time_units: int
    rounds: int  # dot-product rounds per CMA
    seq_adds: int  # sequential additions per round
    reduce_steps: int  # partial-sum accumulations per round
    footprint_cmas: int  # distinct CMAs holding one copy of the working set
    rows_per_fill: int
    weights_per_cma: int
    utilization: float
    block_height: int
    j_blocks: int
    q_blocks: int
    schedule: list[GridStep] = field(default_factory=list)

    @property
    def replication(self) -> float:
        return self.num_cmas / self.footprint_cmas

    num_cmas: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return json.dumps(d, sort_keys=True)

    def covered_pairs(self) -> list[tuple[int, int, int]]:
        return [(a.j_block, a.q_block, f) for st in self.schedule for a in st.assignments for f in a.filters]


def _assignments(scheme: MapScheme, jb: int, qb: int, kn: int, hw: HwConfig) -> list[tuple[int, int, tuple[int, ...]]]:
    # J varies fastest so a column block's partial sums complete together.
    if scheme in (MapScheme.IS, MapScheme.CS):
        groups = min(hw.unroll_l, kn)
        size = ceil(kn / groups)
        out = []
        for q in range(qb):
            for j in range(jb):
                for g in range(groups):
                    filt = tuple(range(g * size, min(kn, (g + 1) * size)))
                    if filt:
                        out.append((j, q, filt))
        return out
    if scheme is MapScheme.WS:
        return [(j, q, (k,)) for k in range(kn) for q in range(qb) for j in range(jb)]
    if scheme is MapScheme.OS:
        return [(j, q, (k,)) for q in range(qb) for k in range(kn) for j in range(jb)]
    return []


def grid_steps(items: list, num_cmas: int) -> list[GridStep]:
    steps = []
    for s, lo in enumerate(range(0, len(items), num_cmas)):
        chunk = items[lo:lo + num_cmas]
        steps.append(GridStep(s, tuple(Assignment(c, j, q, f) for c, (j, q, f) in enumerate(chunk))))
    return steps


def cs_schedule(shape: ConvShape, hw: HwConfig) -> list[GridStep]:
    jb = ceil(shape.j / hw.mh_eff)
    qb = ceil(shape.ni / hw.mw)
    return grid_steps(_assignments(MapScheme.CS, jb, qb, shape.kn, hw), hw.num_cmas)


def plan(scheme, shape: ConvShape, hw: HwConfig | None = None, with_schedule: bool = True) -> MappingPlan:
    """Fill the load/parallelism/occupancy/time fields of one mapping scheme."""
    scheme = MapScheme.parse(scheme)
    hw = hw or HwConfig()
    mh, mw, L = hw.mh, hw.mw, hw.unroll_l
    n, c, kn, kh, kw = shape.n, shape.c, shape.kn, shape.kh, shape.kw
    i, j, ni, hwsz = shape.i, shape.j, shape.ni, shape.h * shape.w
    rows = mh * hw.operand_bits
    j_blk, q_blk = ceil(j / mh), ceil(ni / mw)
    if scheme is MapScheme.DIRECT_OS:
        outer = ceil(c / mh)
        f = dict(
            x_data_per_load=kn * n * mh * mw, x_load_times=outer * ceil(hwsz / mw),
            w_data_per_load=kn * n * mh, w_load_times=outer * kh * ceil(hwsz / mw) * kw,
            parallel_cols=min(ceil(mw / shape.s), ceil(hwsz / shape.s)), occupied_cmas=kn * n,
            rounds=outer * ceil(hwsz / mw) * kh * kw, seq_adds=mh, reduce_steps=outer,
            footprint_cmas=kn * n, rows_per_fill=rows, weights_per_cma=mh,
            utilization=hwsz / (ceil(hwsz / mw) * mw),
        )
        jb, qb = outer, ceil(hwsz / mw)
    elif scheme in (MapScheme.OS, MapScheme.WS):
        loads = j_blk * ceil(i / mw)
        f = dict(parallel_cols=min(mw, i), seq_adds=mh, reduce_steps=j_blk, rows_per_fill=rows,
                 weights_per_cma=mh, utilization=i / (ceil(i / mw) * mw))
        if scheme is MapScheme.OS:
            f.update(x_data_per_load=kn * n * mh * mw, x_load_times=loads, w_data_per_load=kn * n * mh,
                     w_load_times=loads, occupied_cmas=kn * n, rounds=loads, footprint_cmas=kn * n)
        else:
            f.update(x_data_per_load=kn * j * mw, x_load_times=n * ceil(i / mw), w_data_per_load=kn * j,
                     w_load_times=1, occupied_cmas=j_blk * kn, rounds=n * ceil(i / mw), footprint_cmas=j_blk * kn)
        jb, qb = j_blk, q_blk
    elif scheme is MapScheme.IS:
        f = dict(
            x_data_per_load=ni * j, x_load_times=1, w_data_per_load=q_blk * j, w_load_times=kn,
            parallel_cols=min(mw, ni), occupied_cmas=j_blk * q_blk, rounds=kn, seq_adds=mh,
            reduce_steps=j_blk, footprint_cmas=j_blk * q_blk, rows_per_fill=rows, weights_per_cma=mh,
            utilization=ni / (q_blk * mw) * mh / (mh + 1),
        )
        jb, qb = j_blk, q_blk
    else:
        me = hw.mh_eff
        verbatim = ceil(2 * j / mh) * q_blk * L
        f = dict(
            x_data_per_load=L * ni * j, x_load_times=1, w_data_per_load=L * q_blk * j,
            w_load_times=ceil(kn / L), parallel_cols=min(mw, ni), occupied_cmas=verbatim,
            rounds=ceil(kn / L), seq_adds=me, reduce_steps=ceil(2 * j / mh),
            footprint_cmas=(j_blk * q_blk * L) if hw.cs_footprint == "is" else verbatim,
            rows_per_fill=me * hw.operand_bits, weights_per_cma=me,
            utilization=ni / (q_blk * mw) * me / (mh + 1),
        )
        jb, qb = ceil(j / me), q_blk
    f["computing_time_units"] = f["rounds"] * (f["seq_adds"] + f["reduce_steps"])
    p = MappingPlan(scheme=scheme, block_height=me if scheme is MapScheme.CS else mh, j_blocks=jb,
                    q_blocks=qb, num_cmas=hw.num_cmas, **f)
    if scheme is not MapScheme.DIRECT_OS:
        if j > hw.total_registers * max(1, ceil(jb * qb / hw.num_cmas)) * p.block_height:
            raise PlanError("weight vector exceeds register capacity across the schedule")
        if with_schedule:
            p.schedule = grid_steps(_assignments(scheme, jb, qb, kn, hw), hw.num_cmas)
    return p


def with_block_height(hw: HwConfig, mh: int) -> HwConfig:
    return replace(hw, mh=mh)


# ---- wear accounting ------------------------------------------------------


@dataclass
class WearLedger:
    writes_per_cell: np.ndarray

    @property
    def max_single_cell(self) -> int:
        return int(self.writes_per_cell.max()) if self.writes_per_cell.size else 0

    @property
    def total(self) -> int:
        return int(self.writes_per_cell.sum())

    def add(self, other: WearLedger) -> WearLedger:
        return WearLedger(self.writes_per_cell + other.writes_per_cell)

    @classmethod
    def from_cmas(cls, cmas) -> WearLedger:
        grids = [c.wear() for c in cmas]
        return cls(np.stack(grids) if grids else np.zeros((0, 0, 0), dtype=np.int64))


def accumulation_wear(n_dot_products: int, steps_per_dp: int, slots: int, rotate: bool) -> WearLedger:
    """Operand-height accumulator writes per reserved slot.

    Each accumulation step writes the running sum once. With rotation the
    destination walks round robin over ``slots`` reserved intervals and keeps
    walking across dot products; without it every write lands on one row.
    """
    counts = np.zeros(slots if rotate else 1, dtype=np.int64)
    cursor = 0
    for _ in range(n_dot_products):
        for _ in range(steps_per_dp):
            counts[cursor] += 1
            if rotate:
                cursor = (cursor + 1) % slots
    return WearLedger(counts.reshape(-1, 1))


def scheme_wear(scheme, n_dot_products: int, hw: HwConfig | None = None) -> WearLedger:
    hw = hw or HwConfig()
    if MapScheme.parse(scheme) is MapScheme.CS:
        return accumulation_wear(n_dot_products, hw.mh_eff, hw.mh_eff, rotate=True)
    return accumulation_wear(n_dot_products, hw.mh, 1, rotate=False)


def wear_report(ledger: WearLedger, baseline_ledger: WearLedger) -> float:
    if ledger.total == 0 or baseline_ledger.total == 0:
        raise PlanError("wear ledgers are empty")
    return baseline_ledger.max_single_cell / ledger.max_single_cell


# ---- reserved-interval layout ---------------------------------------------


@dataclass(frozen=True)
class IntervalLayout:
    operand_rows: tuple[int, ...]  # base row of each operand slot
    interval_rows: tuple[int, ...]  # base row of each reserved interval slot
    accumulators: tuple[int, ...]  # base row of each accumulator (adjacent interval pairs)
    operand_bits: int
    acc_bits: int


def layout_with_intervals(sub_array_height: int, hw: HwConfig | None = None) -> IntervalLayout:
    """Interleave operand slots with equal-height reserved intervals.

    The column is cut into groups of ``k`` operand slots followed by ``k``
    interval slots, where ``k`` intervals together hold one accumulator.
    """
    hw = hw or HwConfig()
    ob, ab = hw.operand_bits, hw.acc_bits
    k = ceil(ab / ob)
    group = 2 * k * ob
    n_groups = hw.rows // group
    capacity = n_groups * k
    if sub_array_height > capacity:
        raise PlanError(f"sub-array height {sub_array_height} exceeds interval layout capacity {capacity}")
    ops, ints, accs = [], [], []
    for g in range(n_groups):
        base = g * group
        ops.extend(base + t * ob for t in range(k))
        ints.extend(base + (k + t) * ob for t in range(k))
        accs.append(base + k * ob)
    return IntervalLayout(tuple(ops[:sub_array_height]), tuple(ints), tuple(accs), ob, ab)


def interval_capacity(hw: HwConfig) -> int:
    k = ceil(hw.acc_bits / hw.operand_bits)
    return (hw.rows // (2 * k * hw.operand_bits)) * k


def fixed_capacity(hw: HwConfig) -> int:
    return (hw.rows - 3 * hw.acc_bits) // hw.operand_bits
