"""Latency and energy for the bit-serial addition schemes and for whole mapped layers."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from importlib import resources
from math import ceil
from pathlib import Path

from fatsim.ledger import CostLedger
from fatsim.mapping import ConvShape, HwConfig, MapScheme, MappingPlan, plan, scheme_wear, wear_report


class CostError(ValueError):
    """Raised for unknown schemes, bad parameters or mismatched ledgers."""


class AddScheme(str, Enum):
    FAT = "FAT"
    STTCIM = "STT-CiM"
    PARAPIM = "ParaPIM"
    GRAPHS = "GraphS"

    @classmethod
    def parse(cls, text: str | AddScheme) -> AddScheme:
        if isinstance(text, AddScheme):
            return text
        key = text.lower().replace("-", "").replace("_", "")
        for s in cls:
            if key == s.value.lower().replace("-", "") or key == s.name.lower():
                return s
        raise CostError(f"unknown addition scheme {text!r}")


@dataclass(frozen=True)
class AddTiming:
    """Per-bit components of one addition scheme, in ns.

    ``t_carry`` is sensing time spent on a separate carry evaluation;
    ``t_carry_write`` is a carry write-back to cells (zero for FAT).
    """

    t_read: float
    t_sum: float
    t_carry: float
    t_write: float
    t_carry_write: float = 0.0

    @property
    def bit_step(self) -> float:
        return self.t_read + self.t_sum + self.t_carry + self.t_write + self.t_carry_write

    @property
    def bit_cp(self) -> float:
        return self.t_read + self.t_sum + self.t_carry


@dataclass
class TimingParams:
    schemes: dict[str, AddTiming]
    t_row_write: float  # one operand row written across a CMA
    t_weight_load: float  # one 2-bit weight over the register bus
    load_parallel_cmas: int  # CMAs whose rows can be filled concurrently
    t_compute_unit: float  # one sequential add or accumulate step of the planner model
    t_reduce: float
    t_dpu_per_elem: float
    sum_write_overlap: float = 0.0  # fraction of t_write hidden behind the next bit's sensing

    def __post_init__(self) -> None:
        for name, t in self.schemes.items():
            AddScheme.parse(name)
            if min(asdict(t).values()) < 0:
                raise CostError(f"negative timing for {name}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v < 0:
                raise CostError(f"negative {f.name}")
        if not 0 <= self.sum_write_overlap <= 1:
            raise CostError("sum_write_overlap must be in [0, 1]")

    def timing(self, scheme) -> AddTiming:
        s = AddScheme.parse(scheme)
        try:
            return self.schemes[s.value]
        except KeyError:
            raise CostError(f"no timing calibrated for {s.value}") from None

    def bit_step(self, scheme) -> float:
        t = self.timing(scheme)
        return t.bit_step - self.sum_write_overlap * t.t_write


@dataclass
class EnergyParams:
    e_sa_power: float  # FAT sense-amp energy per column per ns of bit-serial step
    power_ratio: dict[str, float]  # SA power relative to FAT
    e_cell_write: float
    e_cell_read: float
    e_reg_load: float
    e_reduce: float
    e_dpu: float
    e_element_add: float  # one planner-level element addition
    p_static: float  # per ns of layer time

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v.values() if isinstance(v, dict) else [v]
            if any(x < 0 for x in vals):
                raise CostError(f"negative {f.name}")

    def sa_cycle(self, scheme, timing: TimingParams) -> float:
        s = AddScheme.parse(scheme)
        return self.e_sa_power * self.power_ratio.get(s.value, 1.0) * timing.bit_step(s)


@dataclass
class Calibration:
    timing: TimingParams
    energy: EnergyParams
    source: str = "<default>"

    @classmethod
    def from_dict(cls, d: dict, source: str = "<dict>") -> Calibration:
        try:
            t = dict(d["timing"])
            t["schemes"] = {k: AddTiming(**v) for k, v in t["schemes"].items()}
            return cls(TimingParams(**t), EnergyParams(**d["energy"]), source)
        except (KeyError, TypeError) as exc:
            raise CostError(f"malformed calibration: {exc}") from exc

    def to_dict(self) -> dict:
        return {"timing": asdict(self.timing), "energy": asdict(self.energy)}


def load_calibration(path: str | os.PathLike | None = None) -> Calibration:
    """Load calibration JSON; ``FAT_CALIBRATION`` overrides the packaged default."""
    path = path or os.environ.get("FAT_CALIBRATION")
    try:
        if path:
            text, source = Path(path).read_text(), str(path)
        else:
            text = resources.files("fatsim").joinpath("data/calibration.json").read_text()
            source = "<default>"
        return Calibration.from_dict(json.loads(text), source)
    except (OSError, json.JSONDecodeError) as exc:
        raise CostError(f"cannot read calibration {path}: {exc}") from exc


# ---- addition latency -----------------------------------------------------


def scalar_add_latency(scheme, n_bits: int, timing: TimingParams | None = None) -> float:
    timing = timing or load_calibration().timing
    if n_bits < 1:
        raise CostError("n_bits must be >= 1")
    s = AddScheme.parse(scheme)
    t = timing.timing(s)
    if s is AddScheme.STTCIM:
        return t.t_read + (n_bits - 1) * t.t_carry + t.t_sum + t.t_write
    return n_bits * timing.bit_step(s)


def scalar_add_cp(scheme, n_bits: int, timing: TimingParams | None = None) -> float:
    timing = timing or load_calibration().timing
    s = AddScheme.parse(scheme)
    t = timing.timing(s)
    if s is AddScheme.STTCIM:
        return t.t_read + (n_bits - 1) * t.t_carry + t.t_sum
    return n_bits * t.bit_cp


def vector_add_latency(scheme, n_bits: int, length: int | None = None, available_cols: int = 256,
                       timing: TimingParams | None = None) -> float:
    """Latency of an element-wise vector add.

    Bit-serial schemes run all columns at once; the column-parallel STT-CiM
    adder needs ``n_bits`` back-to-back scalar adds for the same vector.
    """
    length = available_cols if length is None else length
    if length < 1 or available_cols < 1:
        raise CostError("length and available_cols must be >= 1")
    occ = ceil(length / available_cols)
    s = AddScheme.parse(scheme)
    scalar = scalar_add_latency(s, n_bits, timing)
    return scalar * (n_bits if s is AddScheme.STTCIM else 1) * occ


def vector_add_cp(scheme, n_bits: int, timing: TimingParams | None = None) -> float:
    s = AddScheme.parse(scheme)
    cp = scalar_add_cp(s, n_bits, timing)
    return cp * n_bits if s is AddScheme.STTCIM else cp


def addition_latency_table(timing: TimingParams | None = None) -> list[dict]:
    """Rows of scalar/vector CP and latency at 8 and 16 bits for all schemes."""
    rows = []
    for s in AddScheme:
        for bits in (8, 16):
            rows.append({
                "scheme": s.value, "bits": bits,
                "scalar_cp_ns": scalar_add_cp(s, bits, timing),
                "scalar_ns": scalar_add_latency(s, bits, timing),
                "vector_cp_ns": vector_add_cp(s, bits, timing),
                "vector_ns": vector_add_latency(s, bits, timing=timing),
            })
    return rows


# ---- sparsity curve -------------------------------------------------------


def base_addition_speedup(timing: TimingParams) -> float:
    return vector_add_latency(AddScheme.PARAPIM, 8, timing=timing) / vector_add_latency(AddScheme.FAT, 8, timing=timing)


def power_efficiency(energy: EnergyParams) -> float:
    return energy.power_ratio[AddScheme.PARAPIM.value] / energy.power_ratio.get(AddScheme.FAT.value, 1.0)


def sparsity_speedup(avg_sparsity: float, cal: Calibration | None = None) -> tuple[float, float]:
    """Closed-form (speedup, energy efficiency) over a dense ParaPIM baseline."""
    if not 0 <= avg_sparsity < 1:
        raise CostError("sparsity must be in [0, 1)")
    cal = cal or load_calibration()
    base = base_addition_speedup(cal.timing)
    return base / (1 - avg_sparsity), base * power_efficiency(cal.energy) / (1 - avg_sparsity)


# ---- layer level ----------------------------------------------------------


@dataclass
class LayerCost:
    time_ns: float
    energy: float
    phases: dict[str, float] = field(default_factory=dict)
    energy_phases: dict[str, float] = field(default_factory=dict)


def plan_ledger(p: MappingPlan, shape: ConvShape, hw: HwConfig) -> CostLedger:
    """Event counts implied by a plan, for cost-model-only evaluation."""
    broadcast = p.replication if p.scheme in (MapScheme.IS, MapScheme.CS) else 1.0
    fills = p.x_load_times * p.footprint_cmas * p.rows_per_fill * hw.mw * broadcast
    return CostLedger(
        cell_writes=round(fills),
        reg_loads=p.w_load_times * p.footprint_cmas * p.weights_per_cma,
        reduce_ops=p.rounds * p.reduce_steps * p.footprint_cmas * hw.mw,
        element_adds=shape.n * shape.kn * shape.i * shape.j,
    )


def loading_time(p: MappingPlan, timing: TimingParams) -> tuple[float, float]:
    fill = p.rows_per_fill * timing.t_row_write
    x = p.x_load_times * max(fill, p.footprint_cmas * fill / timing.load_parallel_cmas)
    w = p.w_load_times * p.footprint_cmas * p.weights_per_cma * timing.t_weight_load
    return x, w


def layer_cost(ledger: CostLedger, p: MappingPlan | None, cal: Calibration | None = None) -> LayerCost:
    """Time and energy of one layer.

    Loading time comes from the plan. Compute time comes from the ledger's
    critical row activations when the ledger was produced by the functional
    simulator, otherwise from the plan's computing-time units spread over the
    replicated CMAs.
    """
    cal = cal or load_calibration()
    t, e = cal.timing, cal.energy
    if p is None:
        if not ledger.is_empty():
            raise CostError("a non-empty ledger needs its mapping plan")
        return LayerCost(0.0, 0.0)
    if ledger.critical_row_activations > ledger.row_activations:
        raise CostError("ledger is inconsistent")
    functional = ledger.row_activations > 0
    if not functional and ledger.element_adds == 0 and not ledger.is_empty():
        raise CostError("ledger does not match the plan: no compute recorded")
    x, w = loading_time(p, t)
    if functional:
        compute = ledger.critical_row_activations * t.bit_step(AddScheme.FAT)
    else:
        compute = p.computing_time_units * t.t_compute_unit / p.replication
    phases = {
        "x_load": x, "w_load": w, "compute": compute,
        # The planner's computing-time units already include partial-sum accumulation.
        "reduce": ledger.reduce_ops * t.t_reduce if functional else 0.0,
        "dpu": ledger.dpu_ops * t.t_dpu_per_elem,
    }
    total = sum(phases.values())
    ep = {
        "sa": ledger.sa_cycles * e.sa_cycle(AddScheme.FAT, t),
        "element_adds": ledger.element_adds * e.e_element_add,
        "cell_write": ledger.cell_writes * e.e_cell_write,
        "cell_read": ledger.cell_reads * e.e_cell_read,
        "reg_load": ledger.reg_loads * e.e_reg_load,
        "reduce": ledger.reduce_ops * e.e_reduce,
        "dpu": ledger.dpu_ops * e.e_dpu,
        "static": total * e.p_static,
    }
    return LayerCost(total, sum(ep.values()), phases, ep)


def compare_mappings(shape: ConvShape, hw: HwConfig | None = None, cal: Calibration | None = None) -> list[dict]:
    """One row per mapping scheme, relative to Direct-OS."""
    hw = hw or HwConfig()
    cal = cal or load_calibration()
    rows = []
    for s in MapScheme:
        p = plan(s, shape, hw, with_schedule=False)
        cost = layer_cost(plan_ledger(p, shape, hw), p, cal)
        x, w = cost.phases["x_load"], cost.phases["w_load"]
        rows.append({
            "scheme": s.value, "cmas": hw.num_cmas, "occupied_cmas": p.occupied_cmas,
            "x_load_ns": x, "x_writes": p.x_load_times * p.x_data_per_load,
            "w_load_ns": w, "w_writes": p.w_load_times * p.w_data_per_load,
            "parallel_cols": p.parallel_cols, "utilization": p.utilization,
            "time_ns": cost.time_ns, "energy": cost.energy,
            "max_cell_write": 0.0,
        })
    base_t, base_e = rows[0]["time_ns"], rows[0]["energy"]
    cs_wear = scheme_wear(MapScheme.CS, shape.kn, hw)
    for r in rows:
        r["speedup"] = base_t / r["time_ns"]
        r["energy_ratio"] = r["energy"] / base_e
        r["max_cell_write"] = wear_report(cs_wear, scheme_wear(r["scheme"], shape.kn, hw))
    return rows


def simulate_sparsity(avg_sparsity: float, cal: Calibration | None = None, j: int = 200, cols: int = 16,
                      seed: int = 0) -> tuple[float, float]:
    """(speedup, energy efficiency) measured by running a synthetic dot product.

    FAT runs the ternary weights with zero skipping. The baseline runs the same
    column workload densely (every row activated, as in binary-weight mode)
    at ParaPIM's per-bit step time and SA power.
    """
    import numpy as np

    from fatsim.memory_array import Cma, CmaGeometry, Field
    from fatsim.sparse_control import sparse_dot_product

    if not 0 <= avg_sparsity < 1:
        raise CostError("sparsity must be in [0, 1)")
    cal = cal or load_calibration()
    rng = np.random.default_rng(seed)
    nnz = round((1 - avg_sparsity) * j)
    w = np.zeros(j, dtype=np.int64)
    w[:nnz] = np.where(np.arange(nnz) % 2 == 0, 1, -1)
    rng.shuffle(w)
    x = rng.integers(0, 256, (j, cols))
    geom = CmaGeometry(rows=8 * j + 48, cols=cols)

    def run(weights):
        cma = Cma(geom)
        ops = [Field(8 * k, 8) for k in range(j)]
        for k, f in enumerate(ops):
            cma.write_field(f, x[k])
        start = cma.ledger.as_dict()
        res, _ = sparse_dot_product(weights, ops, cma, capacity=j)
        if not np.array_equal(cma.read_field(res), weights @ x):
            raise CostError("simulated dot product disagrees with the reference")
        end = cma.ledger.as_dict()
        return end["row_activations"] - start["row_activations"], end["sa_cycles"] - start["sa_cycles"]

    fat_acts, fat_cycles = run(w)
    dense = np.where(w == 0, 1, w)
    base_acts, base_cycles = run(dense)
    t, e = cal.timing, cal.energy
    speed = base_acts * t.bit_step(AddScheme.PARAPIM) / (fat_acts * t.bit_step(AddScheme.FAT))
    eff = base_cycles * e.sa_cycle(AddScheme.PARAPIM, t) / (fat_cycles * e.sa_cycle(AddScheme.FAT, t))
    return speed, eff
