"""Acceptance criteria. Each test records one PASS/FAIL line (shown in the pytest summary)."""

import itertools
import random
import time
from math import ceil

import numpy as np

from fatsim import sa_logic as sa
from fatsim.cost_model import (
    AddScheme,
    compare_mappings,
    load_calibration,
    scalar_add_cp,
    scalar_add_latency,
    simulate_sparsity,
    sparsity_speedup,
    vector_add_cp,
    vector_add_latency,
)
from fatsim.inference import random_toy_model, reference_network, run_network
from fatsim.mapping import (
    RESNET18_LAYER10,
    HwConfig,
    MapScheme,
    accumulation_wear,
    layout_with_intervals,
    plan,
    wear_report,
)
from fatsim.memory_array import Cma, CmaGeometry, Field
from fatsim.sparse_control import AccumulatorPool, Trace, sparse_dot_product

# Pinned tolerances.
LATENCY_REL = 0.005
ORDER_REL = 0.02
SPARSITY_CLOSED_REL = 0.01
SPARSITY_SIM_REL = 0.02
MAPPING_REL = 0.05
UTIL_ABS_PCT = 0.01  # percentage points; reference values are truncated to two decimals
RANDOM_ARITH_CASES = 10_000
RANDOM_DOT_CASES = 10_000
E2E_SEEDS = 100


def test_c1_truth_tables(verdict):
    t0 = time.perf_counter()
    ok = True
    for a, b, cin in itertools.product((0, 1), repeat=3):
        _, s, cout = sa.combine(sa.sense_pair(a, b, sa.ADD), cin)
        ok &= (s, cout) == ((a + b + cin) & 1, (a + b + cin) >> 1)
        st = sa.SAState(cin)
        ok &= sa.step_add(a, b, st) == s and st.carry_latch == cout
    table = {
        "READ": lambda a, b: a, "NOT": lambda a, b: 1 - a, "AND": lambda a, b: a & b,
        "NAND": lambda a, b: 1 - (a & b), "OR": lambda a, b: a | b, "XOR": lambda a, b: a ^ b,
        "ADD": lambda a, b: a ^ b,
    }
    for name, f in table.items():
        for a, b in itertools.product((0, 1), repeat=2):
            bb = 1 if name == "NOT" else b
            ok &= sa.evaluate(a, bb, sa.CONFIGS[name]) == f(a, bb)
    elapsed = time.perf_counter() - t0
    verdict(1, "full-adder and Boolean truth tables", ok and elapsed < 1.0, f"{elapsed * 1e3:.1f} ms")


def _arith_batch(xs, ys, width):
    cols = len(xs)
    cma = Cma(CmaGeometry(rows=96, cols=cols, operand_bits=8, acc_bits=16))
    a, b = Field(0, width), Field(16, width)
    cma.write_field(a, xs)
    cma.write_field(b, ys)
    cma.vector_add(a, b, Field(32, width), width)
    cma.vector_sub(a, b, Field(48, width), width, scratch=Field(64, width))
    mod = 1 << width
    add_ok = all(int(v) == (x + y) % mod for v, x, y in zip(cma.read_field(Field(32, width)), xs, ys))
    sub_ok = all(int(v) == (x - y) % mod for v, x, y in zip(cma.read_field(Field(48, width)), xs, ys))
    return add_ok and sub_ok and cma.constants_intact()


def test_c2_arithmetic_oracle(verdict):
    t0 = time.perf_counter()
    ok, cases = True, 0
    for width in range(1, 7):
        pairs = list(itertools.product(range(1 << width), repeat=2))
        for lo in range(0, len(pairs), 256):
            chunk = pairs[lo:lo + 256]
            ok &= _arith_batch([p[0] for p in chunk], [p[1] for p in chunk], width)
            cases += len(chunk)
    rng = random.Random(2)
    for width in (8, 16):
        done = 0
        while done < RANDOM_ARITH_CASES:
            xs = [rng.randrange(1 << width) for _ in range(256)]
            ys = [rng.randrange(1 << width) for _ in range(256)]
            ok &= _arith_batch(xs, ys, width)
            done += 256
        cases += done
    elapsed = time.perf_counter() - t0
    verdict(2, "vector add/sub equal integer arithmetic", ok and elapsed < 10,
            f"{cases} cases per op, {elapsed:.2f} s")


def test_c3_sparse_dot_product(verdict):
    rng = np.random.default_rng(3)
    cols = 64
    ok, cases, leaks = True, 0, 0
    forced = ["p0", "m0", "pm0"]
    trial = 0
    while cases < RANDOM_DOT_CASES:
        n = int(rng.integers(1, 41))
        w = rng.integers(-1, 2, n)
        kind = forced[trial] if trial < len(forced) else None
        if kind == "p0":
            w = np.where(w == 1, -1, w)
        elif kind == "m0":
            w = np.where(w == -1, 1, w)
        elif kind == "pm0":
            w = np.zeros(n, dtype=np.int64)
        x = rng.integers(0, 256, (n, cols))
        cma = Cma(CmaGeometry(rows=8 * n + 48, cols=cols))
        ops = [Field(8 * k, 8) for k in range(n)]
        for k, f in enumerate(ops):
            cma.write_field(f, x[k])
        trace = Trace()
        res, stats = sparse_dot_product(w, ops, cma, trace=trace)
        ok &= np.array_equal(cma.read_field(res), w @ x)
        zero_rows = set(np.flatnonzero(w == 0).tolist())
        leaks += len(zero_rows & {r for rec in trace for r in rec.rows})
        ok &= stats.skipped_rows == len(zero_rows)
        cases += cols
        trial += 1
    verdict(3, "sparse dot product equals the ternary oracle", ok and leaks == 0,
            f"{cases} weight/activation pairs, {trial} weight vectors, zero-row activations {leaks}")


LATENCY_REFERENCE = {
    # scheme: (scalar CP, scalar, vector CP 8, vector 8, vector CP 16, vector 16)
    "STT-CiM": (0.41, 8.91, 3.26, 71.26, 10.85, 146.85),
    "ParaPIM": (2.47, 138.47, 2.47, 138.47, 4.95, 276.95),
    "GraphS": (1.18, 137.18, 1.18, 137.18, 2.36, 274.36),
    "FAT": (1.13, 69.13, 1.13, 69.13, 2.26, 138.26),
}


def test_c4_addition_latency_table(verdict):
    t0 = time.perf_counter()
    t = load_calibration().timing
    worst_lat, worst_cp = 0.0, 0.0
    for s, ref in LATENCY_REFERENCE.items():
        got = (scalar_add_cp(s, 8, t), scalar_add_latency(s, 8, t), vector_add_cp(s, 8, t),
               vector_add_latency(s, 8, timing=t), vector_add_cp(s, 16, t), vector_add_latency(s, 16, timing=t))
        errs = [abs(g / r - 1) for g, r in zip(got, ref)]
        worst_lat = max(worst_lat, errs[1], errs[3], errs[5])
        worst_cp = max(worst_cp, errs[0], errs[2], errs[4])
    elapsed = time.perf_counter() - t0
    ok = worst_lat <= LATENCY_REL and worst_cp <= LATENCY_REL and elapsed < 1
    verdict(4, "addition latency table", ok,
            f"worst latency error {worst_lat:.3%}, worst CP error {worst_cp:.3%} (all 24 cells)")


def test_c5_32bit_ordering(verdict):
    lat = {s: vector_add_latency(s, 32) for s in AddScheme}
    fat = lat[AddScheme.FAT]
    ratios = {s.value: lat[s] / fat for s in (AddScheme.STTCIM, AddScheme.GRAPHS, AddScheme.PARAPIM)}
    target = {"STT-CiM": 1.12, "GraphS": 1.98, "ParaPIM": 2.00}
    ok = all(abs(ratios[k] / v - 1) <= ORDER_REL for k, v in target.items())
    ok &= fat < lat[AddScheme.STTCIM] < lat[AddScheme.GRAPHS] < lat[AddScheme.PARAPIM]
    verdict(5, "32-bit vector add ordering", ok, ", ".join(f"{k} {v:.3f}x" for k, v in ratios.items()))


def test_c6_sparsity_curve(verdict):
    t0 = time.perf_counter()
    target = {0.0: (2.00, 2.44), 0.4: (3.34, 4.06), 0.6: (5.01, 6.09), 0.8: (10.02, 12.19)}
    ok, parts = True, []
    for s, (sp, ee) in target.items():
        c = sparsity_speedup(s)
        m = simulate_sparsity(s)
        ok &= abs(c[0] / sp - 1) <= SPARSITY_CLOSED_REL and abs(c[1] / ee - 1) <= SPARSITY_CLOSED_REL
        ok &= abs(m[0] / sp - 1) <= SPARSITY_SIM_REL and abs(m[1] / ee - 1) <= SPARSITY_SIM_REL
        parts.append(f"s={s}: {c[0]:.2f}/{c[1]:.2f} closed, {m[0]:.2f}/{m[1]:.2f} sim")
    elapsed = time.perf_counter() - t0
    verdict(6, "sparsity speedup and energy efficiency", ok and elapsed < 30, "; ".join(parts))


def test_c7_layer10_mapping(verdict):
    t0 = time.perf_counter()
    rows = {r["scheme"]: r for r in compare_mappings(RESNET18_LAYER10)}
    order = [s.value for s in MapScheme]
    cols = [rows[s]["parallel_cols"] for s in order]
    util = [rows[s]["utilization"] * 100 for s in order]
    speed = [rows[s]["speedup"] for s in order]
    eratio = [rows[s]["energy_ratio"] for s in order]
    wear = [rows[s]["max_cell_write"] for s in order]
    ok = cols == [128, 196, 256, 196, 256]
    ok &= all(abs(u - r) <= UTIL_ABS_PCT for u, r in zip(util, [76.56, 76.56, 94.23, 76.56, 47.11]))
    ok &= all(abs(a / b - 1) <= MAPPING_REL for a, b in zip(speed, [1.00, 1.17, 4.88, 1.18, 6.86]))
    ok &= all(abs(a / b - 1) <= MAPPING_REL for a, b in zip(eratio, [1.000, 1.643, 0.568, 1.643, 0.570]))
    ok &= wear == [64, 64, 64, 64, 1]
    elapsed = time.perf_counter() - t0
    verdict(7, "layer-10 mapping comparison", ok and elapsed < 60,
            "speedup " + "/".join(f"{v:.2f}" for v in speed) + ", energy ratio "
            + "/".join(f"{v:.3f}" for v in eratio) + ", utilization "
            + "/".join(f"{v:.2f}" for v in util) + ", max write " + "/".join(f"{v:g}x" for v in wear))


def test_c8_end_to_end(verdict):
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(E2E_SEEDS):
        model, x = random_toy_model(seed, c_in=int(1 + seed % 8), c_mid=8, c_out=int(1 + seed % 4))
        y, a = reference_network(model, x)
        for scheme in ("img2col-is", "img2col-cs"):
            r = run_network(model, x, scheme=scheme)
            mismatches += not (np.array_equal(r.outputs, y) and np.array_equal(r.activations, a))
    elapsed = time.perf_counter() - t0
    verdict(8, "toy network bit-exact under IS and CS", mismatches == 0 and elapsed < 120,
            f"{E2E_SEEDS} seeds x 2 schemes, {mismatches} mismatches, {elapsed:.1f} s")


def test_c9_wear_leveling(verdict):
    hw = HwConfig()
    n_dp, slots = 32, hw.mh_eff
    cs = accumulation_wear(n_dp, hw.mh_eff, slots, rotate=True)
    base = accumulation_wear(n_dp, hw.mh, 1, rotate=False)
    bound = ceil(cs.total / slots) + 1
    ok = cs.max_single_cell <= bound and base.max_single_cell >= 32 * cs.max_single_cell

    # Same bound on the functional array: rotating 16-bit accumulators over the interval layout.
    lay = layout_with_intervals(slots, hw)
    cma = Cma(CmaGeometry())
    ops = [Field(r, 8) for r in lay.operand_rows]
    rng = np.random.default_rng(9)
    for f in ops:
        cma.write_field(f, rng.integers(0, 256, 256))
    pool = AccumulatorPool([Field(r, 16) for r in lay.accumulators])
    before = cma.wear()
    for _ in range(n_dp):
        sparse_dot_product(rng.integers(-1, 2, slots), ops, cma, pool=pool)
    grown = (cma.wear() - before)[:, 0]
    per_interval = np.array([grown[r:r + 8].max() for r in lay.interval_rows])
    f_bound = ceil(per_interval.sum() / len(per_interval)) + 1
    ok &= per_interval.max() <= f_bound
    verdict(9, "reserved-interval wear leveling", ok,
            f"CS max {cs.max_single_cell} <= {bound}, fixed row {base.max_single_cell} "
            f"({wear_report(cs, base):.0f}x); functional interval max {per_interval.max()} <= {f_bound}")
