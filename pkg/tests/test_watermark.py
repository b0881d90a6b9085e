import numpy as np
import pytest

from xbarsec.crossbar import attach_permutor, ideal_mvm, program_weights
from xbarsec.device import DEFAULT_DEVICE
from xbarsec.permutor import generate_key
from xbarsec.watermark import (
    WatermarkError,
    WatermarkSpec,
    camouflage_stats,
    check_array,
    embed_watermark,
    ks_critical,
    make_watermark,
    measure_probes,
    sign_watermark,
    tamper_cell,
    verify_watermark,
)


def marked(m, n, seed, placement="end", key=False):
    a = program_weights(np.random.default_rng([seed, m, n]).uniform(size=(m, n)))
    if key:
        a = attach_permutor(a, generate_key(m, seed))
    return embed_watermark(a, make_watermark(m, seed, placement, cols=n))


def test_spec_shape_and_determinism():
    s1, s2 = make_watermark(10, 5, cols=10), make_watermark(10, 5, cols=10)
    assert s1.column_indices == (10, 11)
    assert s1.probe_count == 4 and s1.signature.shape == (4, 2)
    assert np.array_equal(s1.pattern, s2.pattern) and np.array_equal(s1.probe_inputs, s2.probe_inputs)
    assert s1.pattern.min() >= DEFAULT_DEVICE.g_off and s1.pattern.max() <= DEFAULT_DEVICE.g_on
    assert s1.probe_inputs.min() >= 0 and s1.probe_inputs.max() <= 0.2
    assert make_watermark(10, 5, "begin", cols=10).column_indices == (0, 1)


def test_interleaved_placement():
    idx = make_watermark(10, 9, "interleaved", cols=10).column_indices
    assert len(set(idx)) == 2 and all(0 <= c <= 11 for c in idx)
    assert idx == make_watermark(10, 9, "interleaved", cols=10).column_indices
    seen = {make_watermark(10, s, "interleaved", cols=10).column_indices for s in range(20)}
    assert len(seen) > 1
    with pytest.raises(ValueError):
        make_watermark(10, 9, "diagonal", cols=10)


def test_every_row_is_probed():
    spec = make_watermark(256, 1, cols=128)
    assert np.all((spec.probe_inputs > 0).sum(axis=0) == 1)


def test_embed_layout_and_errors():
    a = program_weights(np.random.default_rng(0).uniform(size=(10, 10)))
    spec = make_watermark(10, 0, cols=10)
    m = embed_watermark(a, spec)
    assert m.conductances.shape == (10, 12) and m.wm_cols == 2
    assert np.array_equal(m.conductances[:, 10:], spec.pattern)
    with pytest.raises(WatermarkError):
        embed_watermark(m, spec)
    with pytest.raises(ValueError, match="rows"):
        embed_watermark(program_weights(np.zeros((9, 10))), spec)


@pytest.mark.parametrize("placement", ["end", "begin", "interleaved"])
def test_embedding_leaves_data_currents(placement):
    rng = np.random.default_rng(1)
    for seed in range(10):
        a = program_weights(rng.uniform(size=(12, 7)))
        m = embed_watermark(a, make_watermark(12, seed, placement, cols=7))
        v = rng.uniform(0, 0.2, size=(3, 12))
        np.testing.assert_allclose(ideal_mvm(m, v)[:, m.data_indices], ideal_mvm(a, v), rtol=1e-12)


def test_round_trip_no_false_positives():
    rng = np.random.default_rng(2)
    for i in range(100):
        m, n = (int(x) for x in rng.integers(1, 65, size=2))
        arr = marked(m, n, i, ("end", "begin", "interleaved")[i % 3], key=bool(i % 2))
        rep = check_array(arr)
        assert rep.passed and rep.worst_deviation < 1e-12


def test_exact_signature_passes():
    spec = make_watermark(6, 1, cols=3)
    measured = np.zeros((spec.probe_count, 5))
    measured[:, [3, 4]] = spec.signature
    rep = verify_watermark(measured, spec)
    assert rep.passed and rep.worst_deviation == 0.0


def test_verify_shape_errors():
    spec = make_watermark(6, 1, cols=3)
    with pytest.raises(ValueError):
        verify_watermark(np.zeros((spec.probe_count + 1, 5)), spec)
    with pytest.raises(ValueError):
        verify_watermark(np.zeros((spec.probe_count, 4)), spec)


def test_tamper_exhaustive_small():
    for seed in range(20):
        arr = marked(10, 10, seed, key=bool(seed % 2))
        for r in range(10):
            for c in range(2):
                rep = check_array(tamper_cell(arr, r, c))
                assert not rep.passed and rep.worst_deviation > 0.02, (seed, r, c)


def test_tamper_sampled_large():
    arr = marked(256, 128, 3, key=True)
    rng = np.random.default_rng(3)
    for r in rng.choice(256, size=40, replace=False):
        for c in range(2):
            assert not check_array(tamper_cell(arr, int(r), c)).passed


def test_tamper_moves_across_window():
    arr = marked(4, 2, 0)
    col = arr.wm_indices[0]
    before = arr.conductances[0, col]
    after = tamper_cell(arr, 0, 0).conductances[0, col]
    mid = 0.5 * (DEFAULT_DEVICE.g_on + DEFAULT_DEVICE.g_off)
    assert after == (DEFAULT_DEVICE.g_off if before >= mid else DEFAULT_DEVICE.g_on)


def test_parasitic_measurement_needs_matching_backend():
    arr = marked(32, 16, 4)
    rep = verify_watermark(measure_probes(arr, backend="parasitic"), arr.watermark)
    assert not rep.passed
    signed = sign_watermark(arr, "parasitic")
    assert signed.backend == "parasitic"
    assert check_array(arr, signed).passed
    assert not check_array(tamper_cell(arr, 5, 1), signed).passed


def test_serialized_spec_regenerates():
    spec = make_watermark(20, 77, "interleaved", cols=8, tolerance=0.05)
    back = WatermarkSpec.from_dict(spec.to_dict())
    assert back.column_indices == spec.column_indices
    assert np.array_equal(back.signature, spec.signature)
    bad = dict(spec.to_dict(), probe_count=99)
    with pytest.raises(ValueError):
        WatermarkSpec.from_dict(bad)


def test_camouflage_passes_most_seeds():
    passes = 0
    for seed in range(100):
        arr = marked(128, 10, seed)
        k = min(32, arr.rows)
        passes += camouflage_stats(arr, probe_count=32, seed=seed) < ks_critical(2 * k, 10 * k)
    assert passes >= 90


def test_camouflage_small_array_capped_probes():
    passes = sum(
        camouflage_stats(marked(10, 10, s), probe_count=32, seed=s) < ks_critical(20, 100)
        for s in range(100)
    )
    assert passes >= 90


def test_camouflage_extremes():
    a = program_weights(np.random.default_rng(5).uniform(size=(64, 10)) * 0.9)
    spec = make_watermark(64, 0, cols=10)
    loud = WatermarkSpec(**{**spec.__dict__, "pattern": np.full((64, 2), DEFAULT_DEVICE.g_on)})
    assert camouflage_stats(embed_watermark(a, loud)) > 0.9
    same = program_weights(np.full((64, 10), 0.5))
    twin = WatermarkSpec(**{**spec.__dict__, "pattern": same.conductances[:, :2].copy()})
    assert camouflage_stats(embed_watermark(same, twin)) == 0.0


def test_camouflage_requires_watermark():
    with pytest.raises(WatermarkError):
        camouflage_stats(program_weights(np.zeros((3, 3))))
