import json

import numpy as np
import pytest

from fatsim import tensor_io
from fatsim.inference import (
    BatchNorm,
    ConvLayer,
    ModelError,
    TwnModel,
    dpu_apply,
    load_model,
    model_to_dict,
    random_toy_model,
    reference_convolution,
    reference_network,
    run_layer,
    run_network,
    ternarize,
)
from fatsim.mapping import ConvShape, HwConfig, PlanError

SMALL = HwConfig(num_cmas=64, mw=32, rows=160)


def test_ternarize():
    assert ternarize([0.7, 0.0, -0.5, -0.6], -0.5, 0.5).tolist() == [1, 0, 0, -1]
    with pytest.raises(ModelError):
        ternarize([0.0], 0.5, 0.5)


def test_dpu_examples():
    assert dpu_apply(np.array([[-3]]), relu=True).values.tolist() == [[0]]
    bn = BatchNorm([10.0], [1.0], 0.0)
    q = dpu_apply(np.array([[12, 15]]).reshape(1, 1, 2), bn=bn, requant_scale=1.0)
    assert q.values.ravel().tolist() == [2, 5]
    assert dpu_apply(np.array([2.5, 3.5, 300])).values.tolist() == [3, 4, 255]
    with pytest.raises(ModelError):
        dpu_apply(np.array([1]), requant_scale=0)


def test_dpu_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    y = rng.integers(-2000, 2000, (2, 3, 4, 4))
    bn = BatchNorm(rng.normal(0, 50, 3), rng.uniform(10, 500, 3), 1e-3)
    q = dpu_apply(y, relu=True, bn=bn, requant_scale=0.25).values
    for idx in np.ndindex(y.shape):
        c = idx[1]
        v = max((y[idx] - bn.mean[c]) / np.sqrt(bn.var[c] + bn.eps), 0.0) / 0.25
        assert q[idx] == min(int(np.floor(v + 0.5)), 255)


def test_reference_convolution_examples():
    shape = ConvShape(1, 1, 5, 5, 1, 3, 3, 1, 1)
    x = np.zeros((1, 1, 5, 5), dtype=np.int64)
    x[0, 0, 2, 2] = 1
    w = np.arange(9).reshape(1, 1, 3, 3) - 4
    y = reference_convolution(x, w, shape)
    assert np.array_equal(y[0, 0, 1:4, 1:4], np.flip(w[0, 0]))
    ones = ConvShape(1, 3, 4, 4, 1, 3, 3)
    assert reference_convolution(np.ones((1, 3, 4, 4)), np.ones((1, 3, 3, 3)), ones)[0, 0, 0, 0] == 27
    with pytest.raises(PlanError):
        reference_convolution(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)), ones)


def test_selection_weight():
    x = np.random.default_rng(0).integers(0, 256, (1, 3, 4, 4))
    w = np.zeros((1, 3, 1, 1), dtype=np.int64)
    w[0, 1] = 1
    r = run_layer(ConvLayer(w), x, SMALL, "img2col-is")
    assert np.array_equal(r.outputs[0, 0], x[0, 1])


def test_all_zero_layer():
    x = np.random.default_rng(1).integers(0, 256, (1, 2, 4, 4))
    r = run_layer(ConvLayer(np.zeros((2, 2, 3, 3), dtype=np.int64), padding=1), x, SMALL, "img2col-cs")
    assert not r.outputs.any()
    assert r.operand_row_activations == 0


@pytest.mark.parametrize("scheme", ["img2col-os", "img2col-is", "img2col-ws", "img2col-cs"])
def test_two_layer_bit_exact(scheme):
    model, x = random_toy_model(7)
    y, a = reference_network(model, x)
    res = run_network(model, x, scheme=scheme)
    assert np.array_equal(res.outputs, y) and np.array_equal(res.activations, a)


def test_split_j_across_cmas_and_steps():
    # J = 8*9 = 72 does not fit one block and 3 CMAs force several grid steps.
    rng = np.random.default_rng(3)
    layer = ConvLayer(rng.integers(-1, 2, (3, 8, 3, 3)), padding=1)
    x = rng.integers(0, 256, (2, 8, 5, 5))
    shape = layer.shape_for(x.shape)
    for scheme in ("img2col-is", "img2col-cs"):
        r = run_layer(layer, x, HwConfig(num_cmas=3, mw=16, rows=160), scheme)
        assert len(r.plan.schedule) > 1
        assert np.array_equal(r.outputs, reference_convolution(x, layer.weights, shape))
        assert r.ledger.reduce_ops > 0


def test_layer10_scaled_instance():
    rng = np.random.default_rng(10)
    layer = ConvLayer(rng.integers(-1, 2, (4, 8, 3, 3)), stride=2, padding=1)
    x = rng.integers(0, 256, (1, 8, 28, 28))
    r = run_layer(layer, x, HwConfig(num_cmas=16), "img2col-cs")
    assert np.array_equal(r.outputs, reference_convolution(x, layer.weights, layer.shape_for(x.shape)))


def test_direct_os_rejected():
    model, x = random_toy_model(0)
    with pytest.raises(PlanError):
        run_layer(model.layers[0], x, scheme="direct-os")


@pytest.mark.parametrize("scheme", ["img2col-is", "img2col-cs"])
def test_activation_write_once(scheme):
    model, x = random_toy_model(2)
    r = run_layer(model.layers[0], x, HwConfig(), scheme)
    n_ops = r.plan.block_height
    if scheme == "img2col-cs":
        from fatsim.mapping import layout_with_intervals

        rows = [rr + b for rr in layout_with_intervals(n_ops).operand_rows[:27] for b in range(8)]
    else:
        rows = list(range(27 * 8))
    operand = r.wear.writes_per_cell[:, rows, :64]
    assert operand.max() == 1 and operand.min() == 1


def test_bwn_equivalence():
    rng = np.random.default_rng(4)
    w = rng.choice([-1, 1], (3, 2, 3, 3))
    x = rng.integers(0, 256, (1, 2, 6, 6))
    a = run_layer(ConvLayer(w, padding=1, binary=True), x, SMALL, "img2col-cs")
    b = run_layer(ConvLayer(w, padding=1), x, SMALL, "img2col-cs")
    assert np.array_equal(a.outputs, b.outputs)
    assert a.ledger.row_activations == b.ledger.row_activations
    with pytest.raises(ModelError):
        ConvLayer(np.zeros((1, 1, 1, 1)), binary=True)


def test_sparsity_scales_activations():
    acts = {}
    for s in (0.0, 0.5):
        model, x = random_toy_model(11, sparsity=s)
        acts[s] = sum(r.operand_row_activations for r in run_network(model, x, scheme="img2col-is").layers)
    assert acts[0.5] / acts[0.0] == pytest.approx(0.5, abs=0.1)


def test_operand_activation_law():
    model, x = random_toy_model(12, sparsity=0.3)
    r = run_layer(model.layers[0], x, HwConfig(), "img2col-cs")
    nnz = int(np.count_nonzero(model.layers[0].weights))
    # Every nonzero weight activates its operand row once per column block.
    assert r.operand_row_activations == nnz * r.plan.q_blocks


def test_model_file_roundtrip(tmp_path):
    model, x = random_toy_model(3)
    d = model_to_dict(model)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(d))
    again = load_model(path)
    assert np.array_equal(reference_network(again, x)[1], reference_network(model, x)[1])
    d["layers"][0].pop("weights")
    d["layers"][0]["weights_blob"] = "w.fatb"
    tensor_io.save(tmp_path / "w.fatb", model.layers[0].weights.astype(np.int8))
    path.write_text(json.dumps(d))
    assert np.array_equal(load_model(path).layers[0].weights, model.layers[0].weights)


def test_model_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ModelError):
        load_model(bad)
    bad.write_text(json.dumps({"layers": [{"type": "conv", "weights": [[[[1]]]], "bias": [0]}]}))
    with pytest.raises(ModelError):
        load_model(bad)
    bad.write_text(json.dumps({"layers": [{"type": "conv", "weights": [[[[2]]]]}]}))
    with pytest.raises(ModelError):
        load_model(bad)


def test_fc_lowering():
    rng = np.random.default_rng(2)
    w = rng.integers(-1, 2, (5, 12))
    x = rng.integers(0, 256, (3, 12))
    from fatsim.inference import model_from_dict

    m = model_from_dict({"layers": [{"type": "fc", "weights": w.tolist()}]})
    r = run_network(m, x, SMALL, "img2col-is")
    assert np.array_equal(r.outputs[:, :, 0, 0], x @ w.T)


def test_blob_roundtrip_and_errors():
    a = np.arange(24, dtype=np.int16).reshape(2, 3, 4) - 5
    blob = tensor_io.dumps(a)
    assert blob[:4] == b"FATB"
    assert np.array_equal(tensor_io.loads(blob), a)
    with pytest.raises(tensor_io.BlobError):
        tensor_io.loads(b"XXXX" + blob[4:])
    with pytest.raises(tensor_io.BlobError):
        tensor_io.loads(blob[:-1])
