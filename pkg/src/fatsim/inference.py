"""End-to-end ternary network execution on simulated CMAs, plus integer reference oracles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fatsim import tensor_io
from fatsim.ledger import CostLedger
from fatsim.mapping import (
    ConvShape,
    HwConfig,
    MappingPlan,
    MapScheme,
    PlanError,
    WearLedger,
    fixed_capacity,
    img2col,
    interval_capacity,
    layout_with_intervals,
    plan,
)
from fatsim.memory_array import Cma, CmaGeometry, Field
from fatsim.sparse_control import (
    AccumulatorPool,
    Trace,
    encode_weight,
    extend_binary_weight,
    fixed_pool,
    reduce_across_cmas,
    sparse_dot_product,
)


class ModelError(ValueError):
    """Raised for malformed or unsupported model files."""


# ---- layers ---------------------------------------------------------------


@dataclass
class BatchNorm:
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ModelError("batchnorm mean/var must be equal-length vectors")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))) or np.any(self.var < 0):
            raise ModelError("batchnorm parameters must be finite with var >= 0")
        if self.eps < 0 or (self.eps == 0 and np.any(self.var == 0)):
            raise ModelError("batchnorm denominator must be positive")


@dataclass
class ConvLayer:
    weights: np.ndarray  # (kn, c, kh, kw) ternary
    stride: int = 1
    padding: int = 0
    requant_scale: float = 1.0
    binary: bool = False
    relu: bool = False
    bn: BatchNorm | None = None
    fc: bool = False

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.int64)
        if self.weights.ndim != 4:
            raise ModelError("conv weights must be (kn, c, kh, kw)")
        allowed = (-1, 1) if self.binary else (-1, 0, 1)
        if not np.isin(self.weights, allowed).all():
            raise ModelError(f"weights must be in {allowed}")
        if self.requant_scale <= 0:
            raise ModelError("requant_scale must be positive")

    def shape_for(self, x_shape) -> ConvShape:
        n, c, h, w = x_shape
        kn, wc, kh, kw = self.weights.shape
        if wc != c:
            raise ModelError(f"layer expects {wc} channels, got {c}")
        return ConvShape(n, c, h, w, kn, kh, kw, self.stride, self.padding)


@dataclass
class TwnModel:
    layers: list[ConvLayer]
    activation_bits: int = 8
    input_shape: tuple[int, ...] | None = None


@dataclass
class QuantizedActivations:
    values: np.ndarray
    scale: float


# ---- model files ----------------------------------------------------------


def _weights(spec: dict, base: Path) -> np.ndarray:
    if "weights" in spec:
        return np.asarray(spec["weights"], dtype=np.int64)
    if "weights_blob" in spec:
        return tensor_io.load(base / spec["weights_blob"]).astype(np.int64)
    raise ModelError("layer has no weights")


def model_from_dict(d: dict, base: str | Path = ".") -> TwnModel:
    """Build a model from its JSON form.

    ``conv``/``fc`` layers may be followed by ``batchnorm`` and ``relu``
    entries; those fold into the preceding layer's DPU stage, which always
    applies batchnorm before ReLU.
    """
    base = Path(base)
    layers: list[ConvLayer] = []
    try:
        for spec in d["layers"]:
            kind = spec["type"]
            if any(k in spec for k in ("bias", "biases")):
                raise ModelError("bias terms are not supported")
            if kind in ("conv", "fc"):
                w = _weights(spec, base)
                if kind == "fc":
                    if w.ndim != 2:
                        raise ModelError("fc weights must be (out, in)")
                    w = w.reshape(*w.shape, 1, 1)
                layers.append(ConvLayer(
                    w, stride=int(spec.get("stride", 1)), padding=int(spec.get("padding", 0)),
                    requant_scale=float(spec.get("requant_scale", 1.0)), binary=bool(spec.get("binary", False)),
                    fc=kind == "fc",
                ))
            elif kind == "relu":
                if not layers:
                    raise ModelError("relu before any conv/fc layer")
                layers[-1].relu = True
            elif kind == "batchnorm":
                if not layers:
                    raise ModelError("batchnorm before any conv/fc layer")
                layers[-1].bn = BatchNorm(spec["mean"], spec["var"], float(spec.get("eps", 1e-5)))
            else:
                raise ModelError(f"unknown layer type {kind!r}")
        shape = tuple(d["input_shape"]) if "input_shape" in d else None
        return TwnModel(layers, int(d.get("activation_bits", 8)), shape)
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model: {exc}") from exc


def load_model(path: str | Path) -> TwnModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot parse model {path}: {exc}") from exc
    return model_from_dict(d, path.parent)


def model_to_dict(model: TwnModel) -> dict:
    out = []
    for layer in model.layers:
        w = layer.weights[:, :, 0, 0] if layer.fc else layer.weights
        out.append({"type": "fc" if layer.fc else "conv", "weights": w.tolist(), "stride": layer.stride,
                    "padding": layer.padding, "requant_scale": layer.requant_scale, "binary": layer.binary})
        if layer.bn is not None:
            out.append({"type": "batchnorm", "mean": layer.bn.mean.tolist(), "var": layer.bn.var.tolist(),
                        "eps": layer.bn.eps})
        if layer.relu:
            out.append({"type": "relu"})
    d = {"activation_bits": model.activation_bits, "layers": out}
    if model.input_shape:
        d["input_shape"] = list(model.input_shape)
    return d


# ---- element-wise pieces ----------------------------------------------------


def ternarize(w, th_low: float, th_high: float) -> np.ndarray:
    if th_low >= th_high:
        raise ModelError("th_low must be below th_high")
    w = np.asarray(w, dtype=np.float64)
    return np.where(w > th_high, 1, np.where(w < th_low, -1, 0)).astype(np.int64)


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def dpu_apply(y, relu: bool = False, bn: BatchNorm | None = None, requant_scale: float = 1.0, bits: int = 8,
              ledger: CostLedger | None = None) -> QuantizedActivations:
    """Batchnorm (channel axis 1), then ReLU, then requantize to unsigned ``bits``."""
    if requant_scale <= 0:
        raise ModelError("requant_scale must be positive")
    v = np.asarray(y, dtype=np.float64)
    if bn is not None:
        shape = [1] * v.ndim
        shape[1 if v.ndim > 1 else 0] = -1
        v = (v - bn.mean.reshape(shape)) / np.sqrt(bn.var.reshape(shape) + bn.eps)
    if relu:
        v = np.maximum(v, 0.0)
    q = np.clip(round_half_away(v / requant_scale), 0, (1 << bits) - 1).astype(np.int64)
    if ledger is not None:
        ledger.dpu_ops += int(q.size)
    return QuantizedActivations(q, requant_scale)


def reference_convolution(x, w, shape: ConvShape) -> np.ndarray:
    """Direct integer convolution: loop over output positions and kernel offsets."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if x.shape != (shape.n, shape.c, shape.h, shape.w) or w.shape != (shape.kn, shape.c, shape.kh, shape.kw):
        raise PlanError("tensor shapes do not match the layer shape")
    p, s = shape.p, shape.s
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((shape.n, shape.kn, shape.oh, shape.ow), dtype=np.int64)
    for oh in range(shape.oh):
        for ow in range(shape.ow):
            for dh in range(shape.kh):
                for dw in range(shape.kw):
                    out[:, :, oh, ow] += xp[:, :, oh * s + dh, ow * s + dw] @ w[:, :, dh, dw].T
    return out


def reference_network(model: TwnModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Chained oracle: returns (last pre-DPU output, last quantized activations)."""
    a = _as_input(x, model)
    y = a
    for layer in model.layers:
        y = reference_convolution(a, layer.weights, layer.shape_for(a.shape))
        a = dpu_apply(y, layer.relu, layer.bn, layer.requant_scale, model.activation_bits).values
    return y, a


def _as_input(x, model: TwnModel) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64)
    if a.ndim == 2:
        a = a.reshape(*a.shape, 1, 1)
    if a.min(initial=0) < 0 or a.max(initial=0) >= 1 << model.activation_bits:
        raise ModelError("input activations out of range")
    return a


# ---- functional execution -------------------------------------------------


@dataclass
class LayerResult:
    outputs: np.ndarray
    activations: QuantizedActivations
    ledger: CostLedger
    plan: MappingPlan
    wear: WearLedger
    operand_row_activations: int = 0
    traces: list[Trace] = field(default_factory=list)


def functional_hw(scheme: MapScheme, hw: HwConfig) -> HwConfig:
    """Block height the functional layout actually supports for ``scheme``."""
    if scheme is MapScheme.CS:
        return replace(hw, mh=2 * interval_capacity(hw))
    return replace(hw, mh=fixed_capacity(hw))


class _CmaSlot:
    def __init__(self, geom: CmaGeometry, scheme: MapScheme, hw: HwConfig):
        self.cma = Cma(geom)
        self.resident: tuple[int, int] | None = None
        if scheme is MapScheme.CS:
            lay = layout_with_intervals(interval_capacity(hw), hw)
            self.operands = [Field(r, hw.operand_bits) for r in lay.operand_rows]
            self.pool = AccumulatorPool([Field(r, hw.acc_bits) for r in lay.accumulators])
        else:
            self.operands = [Field(hw.operand_bits * k, hw.operand_bits) for k in range(fixed_capacity(hw))]
            self.pool = fixed_pool(self.cma)


def run_layer(layer: ConvLayer, x, hw: HwConfig | None = None, scheme="img2col-cs",
              record_trace: bool = False, activation_bits: int = 8) -> LayerResult:
    """Execute one conv/fc layer on simulated CMAs and apply the DPU."""
    scheme = MapScheme.parse(scheme)
    if scheme is MapScheme.DIRECT_OS:
        raise PlanError("direct-os is a cost-model-only scheme")
    hw = hw or HwConfig()
    x = np.asarray(x, dtype=np.int64)
    if x.ndim == 2:
        x = x.reshape(*x.shape, 1, 1)
    shape = layer.shape_for(x.shape)
    run_hw = functional_hw(scheme, hw)
    p = plan(scheme, shape, run_hw)
    lay = img2col(x, shape, layer.weights)
    enc = extend_binary_weight if layer.binary else encode_weight
    codes = np.vectorize(enc, otypes=[object])(lay.aw)
    geom = CmaGeometry(rows=hw.rows, cols=hw.mw, operand_bits=hw.operand_bits, acc_bits=hw.acc_bits)
    bh, mw = p.block_height, hw.mw
    slots: dict[int, _CmaSlot] = {}
    partials: dict[tuple[int, int], dict[int, np.ndarray]] = {}
    total = CostLedger()
    operand_acts = 0
    traces: list[Trace] = []
    reload_each = scheme in (MapScheme.OS, MapScheme.WS)

    for step in p.schedule:
        before = {cid: s.cma.ledger.as_dict() for cid, s in slots.items()}
        for a in step.assignments:
            slot = slots.get(a.cma)
            if slot is None:
                slot = slots[a.cma] = _CmaSlot(geom, scheme, run_hw)
                before[a.cma] = slot.cma.ledger.as_dict()
            j0, j1 = a.j_block * bh, min(shape.j, (a.j_block + 1) * bh)
            q0, q1 = a.q_block * mw, min(shape.ni, (a.q_block + 1) * mw)
            ops = slot.operands[: j1 - j0]
            if reload_each or slot.resident != (a.j_block, a.q_block):
                for k, f in enumerate(ops):
                    slot.cma.write_field(f, lay.ax[j0 + k, q0:q1])
                slot.resident = (a.j_block, a.q_block)
            mask = (1 << (q1 - q0)) - 1
            for kn in a.filters:
                trace = Trace() if record_trace else None
                res, stats = sparse_dot_product(list(codes[kn, j0:j1]), ops, slot.cma, mask, slot.pool,
                                                trace, capacity=hw.weight_regs)
                operand_acts += stats.operand_rows
                if trace is not None:
                    traces.append(trace)
                partials.setdefault((kn, a.q_block), {})[a.j_block] = slot.cma.read_field(res, mask)[: q1 - q0]
        step_ledger = CostLedger()
        for cid, s in slots.items():
            prev = before.get(cid)
            if prev is None:
                continue
            now = s.cma.ledger.as_dict()
            step_ledger = step_ledger.merge(CostLedger(**{k: now[k] - prev[k] for k in now}))
        total = total.then(step_ledger)

    y = np.zeros((shape.kn, shape.ni), dtype=np.int64)
    reduce_ledger = CostLedger()
    for (kn, qb), parts in sorted(partials.items()):
        q0 = qb * mw
        vec = reduce_across_cmas([parts[j] for j in sorted(parts)], reduce_ledger)
        y[kn, q0:q0 + len(vec)] = vec
    total = total.then(reduce_ledger)
    out = y.reshape(shape.kn, shape.n, shape.oh, shape.ow).transpose(1, 0, 2, 3)
    dpu_ledger = CostLedger()
    q = dpu_apply(out, layer.relu, layer.bn, layer.requant_scale, activation_bits, dpu_ledger)
    total = total.then(dpu_ledger)
    wear = WearLedger.from_cmas([slots[c].cma for c in sorted(slots)])
    return LayerResult(out, q, total, p, wear, operand_acts, traces)


@dataclass
class NetworkResult:
    outputs: np.ndarray
    activations: np.ndarray
    ledger: CostLedger
    layers: list[LayerResult]

    def report(self) -> dict:
        return {
            "layers": [
                {"index": k, "scheme": r.plan.scheme.value, "output_shape": list(r.outputs.shape),
                 "ledger": r.ledger.as_dict(), "operand_row_activations": r.operand_row_activations,
                 "max_single_cell_write": r.wear.max_single_cell, "steps": len(r.plan.schedule)}
                for k, r in enumerate(self.layers)
            ],
            "total": self.ledger.as_dict(),
        }


def run_network(model: TwnModel, x, hw: HwConfig | None = None, scheme="img2col-cs",
                record_trace: bool = False) -> NetworkResult:
    a = _as_input(x, model)
    total = CostLedger()
    results = []
    y = a
    for layer in model.layers:
        r = run_layer(layer, a, hw, scheme, record_trace, model.activation_bits)
        results.append(r)
        total = total.then(r.ledger)
        y, a = r.outputs, r.activations.values
    return NetworkResult(y, a, total, results)


def random_toy_model(seed: int, c_in: int = 3, c_mid: int = 8, c_out: int = 4, sparsity: float | None = None,
                     size: int = 8) -> tuple[TwnModel, np.ndarray]:
    """conv3x3 (pad 1) -> BN + ReLU -> conv1x1 on an 8x8 input."""
    rng = np.random.default_rng(seed)

    def weights(shape):
        if sparsity is None:
            return rng.integers(-1, 2, shape)
        w = rng.choice([-1, 1], shape)
        return np.where(rng.random(shape) < sparsity, 0, w)

    bn = BatchNorm(rng.normal(0, 100, c_mid), rng.uniform(2e5, 6e5, c_mid), 1e-5)
    l1 = ConvLayer(weights((c_mid, c_in, 3, 3)), 1, 1, requant_scale=1 / 64, relu=True, bn=bn)
    l2 = ConvLayer(weights((c_out, c_mid, 1, 1)), 1, 0, requant_scale=1.0)
    x = rng.integers(0, 256, (1, c_in, size, size))
    return TwnModel([l1, l2], 8, x.shape), x
