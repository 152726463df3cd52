import itertools

import pytest
from hypothesis import given, strategies as st

from fatsim import sa_logic as sa


def test_sense_pair_add_levels():
    assert sa.sense_pair(1, 1, sa.ADD) == sa.ComparatorOutputs(1, 1, 0)
    assert sa.sense_pair(0, 0, sa.ADD) == sa.ComparatorOutputs(0, 0, 1)
    assert sa.sense_pair(0, 1, sa.ADD) == sa.ComparatorOutputs(0, 1, 0)


def test_illegal_config_rejected():
    with pytest.raises(sa.ConfigError):
        sa.SAConfig(1, 1, 1, 1, 1)
    with pytest.raises(sa.ConfigError):
        sa.SAConfig(0, 0, 0, 0, 0)


def test_full_adder_table():
    for a, b, cin in itertools.product((0, 1), repeat=3):
        _, s, cout = sa.combine(sa.sense_pair(a, b, sa.ADD), cin)
        assert s + 2 * cout == a + b + cin


def test_combine_examples():
    assert sa.combine(sa.sense_pair(1, 1, sa.ADD), 0)[1:] == (0, 1)
    assert sa.combine(sa.sense_pair(1, 0, sa.ADD), 1)[1:] == (0, 1)
    assert sa.combine(sa.sense_pair(0, 0, sa.ADD), 0)[1:] == (0, 0)


def test_not_via_ones_row():
    for a in (0, 1):
        assert sa.evaluate(a, 1, sa.NOT) == 1 - a


def test_nand_path():
    for a, b in itertools.product((0, 1), repeat=2):
        c = sa.sense_pair(a, b, sa.NAND)
        assert c.nor_sig == 0
        assert sa.evaluate(a, b, sa.NAND) == 1 - (a & b)


@pytest.mark.parametrize("name", ["READ", "NOT", "AND", "NAND", "OR", "XOR", "ADD"])
def test_comparator_invariants(name):
    cfg = sa.CONFIGS[name]
    for a, b in itertools.product((0, 1), repeat=2):
        c = sa.sense_pair(a, b, cfg)
        assert c.nor_sig == 1 - c.or_sig
        assert c.and_sig <= c.or_sig


def test_boolean_ops():
    ops = {"AND": lambda a, b: a & b, "OR": lambda a, b: a | b, "XOR": lambda a, b: a ^ b}
    for name, f in ops.items():
        for a, b in itertools.product((0, 1), repeat=2):
            assert sa.evaluate(a, b, sa.CONFIGS[name]) == f(a, b)
    assert sa.evaluate(1, 0, sa.READ) == 1
    assert sa.evaluate(0, 1, sa.READ) == 0


def test_select_ports():
    assert sa.select(sa.READ, 0, 1, 0, 0) == 1
    assert sa.select(sa.ADD, 1, 1, 1, 0) == 0
    assert sa.select(sa.AND, 1, 0, 0, 0) == 1


@given(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))
def test_select_is_projection(x, y, z, w):
    assert sa.select(sa.ADD, x, y, z, 0) == sa.select(sa.ADD, 1 - x, 1 - y, 1 - z, 0) == 0
    assert sa.select(sa.AND, 1, x, y, z) == 1
    assert sa.select(sa.XOR, x, y, w, z) == w


def test_step_add_examples():
    st_ = sa.SAState(1)
    assert sa.step_add(1, 1, st_) == 1 and st_.carry_latch == 1
    st_ = sa.SAState(1)
    assert sa.step_add(0, 0, st_) == 1 and st_.carry_latch == 0
    st_ = sa.SAState()
    bits = [sa.step_add((5 >> i) & 1, (3 >> i) & 1, st_) for i in range(4)]
    assert bits == [0, 0, 0, 1]
    assert st_.cycles == 4


@given(st.integers(0, 2**40 - 1), st.integers(0, 2**40 - 1), st.integers(0, 1))
def test_packed_planes_match_per_column(a, b, cin):
    ones = 2**40 - 1
    carry = ones if cin else 0
    c = sa.sense_pair(a, b, sa.ADD, ones)
    _, s, cout = sa.combine(c, carry, ones)
    for col in range(40):
        ab, bb = (a >> col) & 1, (b >> col) & 1
        total = ab + bb + cin
        assert (s >> col) & 1 == total & 1
        assert (cout >> col) & 1 == total >> 1
