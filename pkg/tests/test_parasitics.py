import io

import numpy as np
import pytest
import scipy.io

from xbarsec.crossbar import CrossbarArray, attach_permutor, ideal_mvm, program_weights
from xbarsec.device import MemristorParams, tech_node_params
from xbarsec.parasitics import (
    RESIDUAL_TOL,
    build_network,
    column_currents,
    estimate_delay,
    estimate_power,
    matrix_market_text,
    simulate,
    solve_network,
    source_currents,
)
from xbarsec.permutor import generate_key
from xbarsec.watermark import embed_watermark, make_watermark

N45 = tech_node_params("45nm")
WIDE = MemristorParams(g_on=1e-3, g_off=1e-9, g_leak=1e-12)


def rand_array(rng, m, n, node=N45):
    return program_weights(rng.uniform(size=(m, n)), node)


def test_one_by_one_series_circuit():
    a = program_weights(np.ones((1, 1)))
    net = build_network(a)
    assert net.n_internal == 2 and len(net.resistance) == 3
    sol = solve_network(net, [0.2])
    i = column_currents(net, sol)[0, 0]
    assert i == pytest.approx(0.2 / 12501, rel=1e-12)
    assert round(i * 1e6, 1) == 16.0
    p = estimate_power(net, sol, a)[0]
    assert p == pytest.approx(0.2 * 0.2 / 12501, rel=1e-12)
    assert round(p * 1e6, 1) == 3.2


def test_network_sizes():
    net = build_network(program_weights(np.zeros((2, 2))))
    assert net.n_internal == 8
    # 4 cells, 2 wordline + 2 bitline segments, 2 drivers, 2 sense
    assert len(net.resistance) == 12
    a = program_weights(np.zeros((256, 128)))
    a = embed_watermark(a, make_watermark(256, 0, cols=128))
    assert build_network(a).n_internal == 66_560


def test_zero_inputs_give_zero_voltages():
    a = rand_array(np.random.default_rng(0), 6, 5)
    net = build_network(a)
    sol = solve_network(net, np.zeros(6))
    assert np.all(sol.voltages == 0)
    res = simulate(a, np.zeros(6))
    assert np.all(res.column_currents == 0) and res.power == 0


def test_zero_parasitics_match_ideal_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m, n = rng.integers(1, 17, size=2)
        a = rand_array(rng, m, n, N45.ideal())
        v = rng.uniform(0, 0.2, size=m)
        got = simulate(a, v).column_currents
        # the access transistor folds into each cell's conductance
        adjusted = CrossbarArray(1.0 / (1.0 / a.conductances + N45.r_access), m, n, N45.ideal(), WIDE)
        want = ideal_mvm(adjusted, v)
        np.testing.assert_allclose(got, want, rtol=1e-9)


def test_zero_parasitic_node_voltages():
    a = rand_array(np.random.default_rng(2), 3, 4, N45.ideal())
    v = np.array([0.05, 0.1, 0.2])
    sol = solve_network(build_network(a), v)
    w = sol.voltages[0, :12].reshape(3, 4)
    b = sol.voltages[0, 12:]
    np.testing.assert_allclose(w, np.repeat(v[:, None], 4, axis=1), atol=1e-15)
    np.testing.assert_allclose(b, 0, atol=1e-15)


def test_residual_and_voltage_bounds():
    rng = np.random.default_rng(3)
    a = embed_watermark(attach_permutor(rand_array(rng, 40, 20), generate_key(40, 1)),
                        make_watermark(40, 1, cols=20))
    v = rng.uniform(0, 0.2, size=(4, 40))
    sol = solve_network(build_network(a), v)
    assert sol.residual <= RESIDUAL_TOL
    assert sol.voltages.min() >= 0 and sol.voltages.max() <= v.max() + 1e-15


def test_stamp_matrix_symmetric():
    a = rand_array(np.random.default_rng(4), 5, 7)
    A = build_network(a).stamp_matrix
    assert abs(A - A.T).max() == 0


def test_conservation():
    rng = np.random.default_rng(5)
    for m, n in [(1, 1), (7, 3), (30, 12)]:
        net = build_network(rand_array(rng, m, n))
        sol = solve_network(net, rng.uniform(0, 0.2, size=(3, m)))
        np.testing.assert_allclose(source_currents(net, sol).sum(axis=1),
                                   column_currents(net, sol).sum(axis=1), rtol=1e-9)


def test_monotone_in_wire_resistance():
    rng = np.random.default_rng(6)
    w = rng.uniform(size=(12, 9))
    v = rng.uniform(0, 0.2, size=12)
    prev = None
    for r in [1e-3, 0.5, 2.5, 10, 50, 200]:
        cur = simulate(program_weights(w, N45.replace(r_wire=r)), v).column_currents
        if prev is not None:
            assert np.all(cur <= prev * (1 + 1e-12))
        prev = cur


@pytest.mark.parametrize("node", ["45nm", "22nm", "7nm"])
def test_security_signs(node):
    tn = tech_node_params(node)
    rng = np.random.default_rng(7)
    plain = rand_array(rng, 10, 10, tn)
    v = rng.uniform(0, tn.v_read, size=(4, 10))
    secured = {
        "permutor": attach_permutor(plain, generate_key(10, 3)),
        "watermark": embed_watermark(plain, make_watermark(10, 3, node=tn, cols=10)),
    }
    secured["both"] = embed_watermark(secured["permutor"], make_watermark(10, 3, node=tn, cols=10))
    base = simulate(plain, v)
    for name, arr in secured.items():
        res = simulate(arr, v)
        assert np.all(res.data_currents <= base.column_currents * (1 + 1e-12)), name
        assert res.delay > base.delay, name
    # extra columns only add load and peripheral power
    assert simulate(secured["watermark"], v).power >= base.power


def test_determinism():
    rng = np.random.default_rng(8)
    a = attach_permutor(rand_array(rng, 20, 6), generate_key(20, 9))
    v = rng.uniform(0, 0.2, size=(2, 20))
    r1, r2 = simulate(a, v), simulate(a, v)
    assert r1.column_currents.tobytes() == r2.column_currents.tobytes()
    assert (r1.delay, r1.power) == (r2.delay, r2.power)


def test_delay_examples():
    a = program_weights(np.ones((1, 1)))
    assert estimate_delay(a) == pytest.approx(2.501e-12, rel=1e-12)
    assert estimate_delay(program_weights(np.ones((4, 4)), N45.replace(c_wire=0.0))) == 0.0
    for m, n in [(1, 1), (10, 10), (256, 128)]:
        plain = program_weights(np.zeros((m, n)))
        assert estimate_delay(attach_permutor(plain, generate_key(m, 0))) > estimate_delay(plain)


def test_peripheral_power_count():
    a = program_weights(np.zeros((128, 4)))
    v = np.zeros(128)
    secured = attach_permutor(a, generate_key(128, 0))
    assert simulate(secured, v).power == pytest.approx(380 * N45.p_switch, rel=1e-12)
    wm = embed_watermark(a, make_watermark(128, 0, cols=4))
    assert simulate(wm, v).power == pytest.approx(2 * N45.p_wm_col, rel=1e-12)


def test_matrix_market_dump():
    a = rand_array(np.random.default_rng(9), 3, 3)
    text = matrix_market_text(a)
    assert text.startswith("%%MatrixMarket matrix coordinate real")
    A = scipy.io.mmread(io.StringIO(text))
    assert abs(A.tocsc() - build_network(a).stamp_matrix).max() < 1e-12


def test_input_length_checked():
    net = build_network(program_weights(np.zeros((3, 3))))
    with pytest.raises(ValueError):
        solve_network(net, np.zeros(4))

