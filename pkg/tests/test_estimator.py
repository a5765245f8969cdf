import numpy as np
import pytest

from gridfault.errors import ObservabilityError
from gridfault.estimator import (MeasurementLayout, build_estimator_bank,
                                 build_measurement_model, covariance_from_vector,
                                 injected_current_estimates, numeric_rank, read_stream,
                                 state_to_phasors, wls, write_stream, zero_sequence_magnitude)
from gridfault.network import balanced, line_admittance, split_line
from gridfault.placement import add_split_bus
from gridfault.simulator import NoiseSpec, Scenario, generate_frames

from support import chain, gaussian_solve, monitored_random_tree


def exact_frame(net):
    frames = generate_frames(Scenario(net, None, 0, 1, NoiseSpec.zero()))
    return frames[0]


def test_full_monitoring_selector_is_identity():
    net = chain(4).with_monitoring(range(1, 5))
    m = build_measurement_model(net)
    np.testing.assert_array_equal(m.H_V, np.eye(24))
    assert numeric_rank(m.H) == 24


def test_h_i_rows_are_admittance_rows():
    net = chain(3).with_monitoring({1, 3})
    m = build_measurement_model(net)
    Y = line_admittance(net)
    G, B = Y.real, Y.imag
    rows = [0, 1, 2, 6, 7, 8]
    np.testing.assert_allclose(m.H_I, np.vstack([np.hstack([G[rows], -B[rows]]),
                                                np.hstack([B[rows], G[rows]])]))


def test_two_bus_one_meter():
    # V1 and I1 fix V2 through the line, so one meter suffices here
    m = build_measurement_model(chain(2).with_monitoring({1}))
    assert m.D == 12 and m.N == 12
    assert numeric_rank(m.H) == 12


def test_three_bus_one_meter_is_rank_deficient():
    m = build_measurement_model(chain(3).with_monitoring({1}))
    assert numeric_rank(m.H) < m.N


def test_fictitious_rows_get_epsilon():
    net = chain(5).with_monitoring({1, 2, 4, 5})
    split, _ = add_split_bus(net, 3)
    m = build_measurement_model(split, epsilon=1e-12)
    rows = m.layout.pseudo_rows()
    assert rows.size == 6
    np.testing.assert_array_equal(np.diag(m.R)[rows], 1e-12)


def test_wls_identity():
    net = chain(2).with_monitoring({1, 2})
    m = build_measurement_model(net)
    z = np.random.default_rng(0).normal(size=m.D)
    res = wls(m, z)
    x_ref, w_ref = gaussian_solve(m.H, m.R, z)
    np.testing.assert_allclose(res.x_hat, x_ref, rtol=1e-9, atol=1e-9)
    assert abs(res.wmr - w_ref) < 1e-8


def test_wls_recovers_exact_state(rng):
    for _ in range(5):
        net = monitored_random_tree(int(rng.integers(3, 12)), rng)
        m = build_measurement_model(net)
        x = rng.normal(size=m.N) * 1000
        res = wls(m, m.H @ x)
        assert np.linalg.norm(res.x_hat - x) <= 1e-8 * np.linalg.norm(x)
        assert res.wmr < 1e-8 * np.linalg.norm(x)


def test_duplicated_rows_same_estimate(rng):
    net = monitored_random_tree(7, rng)
    m = build_measurement_model(net)
    z = m.H @ rng.normal(size=m.N) + rng.normal(size=m.D)
    H2 = np.vstack([m.H, m.H])
    R2 = np.eye(2 * m.D)
    x2, _ = gaussian_solve(H2, R2, np.concatenate([z, z]))
    np.testing.assert_allclose(wls(m, z).x_hat, x2, rtol=1e-8, atol=1e-8)


def test_wls_is_optimal(rng):
    net = monitored_random_tree(8, rng)
    m = build_measurement_model(net)
    z = m.H @ rng.normal(size=m.N) + rng.normal(size=m.D)
    x = wls(m, z).x_hat

    def cost(v):
        r = z - m.H @ v
        return r @ np.linalg.solve(m.R, r)

    base = cost(x)
    for _ in range(20):
        assert cost(x + 1e-3 * rng.normal(size=m.N)) >= base - 1e-9


def test_wmr_invariant_under_row_permutation(rng):
    net = monitored_random_tree(8, rng)
    m = build_measurement_model(net)
    z = m.H @ rng.normal(size=m.N) + rng.normal(size=m.D)
    P = rng.permutation(m.D)
    _, w_perm = gaussian_solve(m.H[P], m.R[np.ix_(P, P)], z[P])
    assert abs(wls(m, z).wmr - w_perm) < 1e-8 * max(1.0, w_perm)


def test_rank_deficient_model_raises():
    m = build_measurement_model(chain(3).with_monitoring({1}))
    with pytest.raises(ObservabilityError):
        wls(m, np.zeros(m.D))


def test_zero_sequence_magnitudes():
    currents = np.array([balanced(10 + 5j), [3, 0, 0]])
    assert zero_sequence_magnitude(currents, 1) < 1e-12
    assert abs(zero_sequence_magnitude(currents, 2) - 1.0) < 1e-12
    with pytest.raises(IndexError):
        zero_sequence_magnitude(currents, 3)


def test_current_estimates_match_nodal_product(rng):
    net = monitored_random_tree(9, rng)
    m = build_measurement_model(net)
    x = rng.normal(size=m.N)
    V = x[:3 * net.n] + 1j * x[3 * net.n:]
    direct = (line_admittance(net) @ V).reshape(net.n, 3)
    np.testing.assert_allclose(injected_current_estimates(m, x), direct, atol=1e-10)
    zI = m.H_I @ x
    ni = m.layout.ni
    est = (zI[:ni] + 1j * zI[ni:]).reshape(-1, 3)
    np.testing.assert_allclose(est, direct[[b - 1 for b in m.layout.i_buses]], atol=1e-10)


def test_bank_sizes(bench_solid):
    net = chain(4).with_monitoring(range(1, 5))
    assert build_estimator_bank(net).size == 4
    single = chain(5).with_monitoring({1, 3, 5})
    assert build_estimator_bank(single).size == 2
    bench, _ = bench_solid
    assert build_estimator_bank(bench).size == 17


def test_split_voltage_equals_source_bus():
    net = chain(6).with_monitoring({1, 2, 4, 6})
    split, _ = add_split_bus(net, 4)
    fr = exact_frame(split)
    m = build_measurement_model(split)
    res = wls(m, m.layout.vector(fr))
    V = state_to_phasors(res.x_hat, split.n)
    assert np.abs(V[split.n - 1] - V[3]).max() <= 1e-6 * np.abs(V[3]).max()


def test_noiseless_frames_fit_exactly(rng):
    net = monitored_random_tree(10, rng)
    fr = exact_frame(net)
    bank = build_estimator_bank(net)
    out = bank.evaluate(bank.layout.vector(fr))
    scale = np.linalg.norm(bank.layout.vector(fr))
    assert out.wmr.max() < 1e-8 * scale


def test_dense_and_sparse_banks_agree(rng):
    net = monitored_random_tree(12, rng)
    fr = exact_frame(net)
    noise = NoiseSpec()
    dense = build_estimator_bank(net, noise=noise, reference_frame=fr)
    sparse = dense.with_covariance(dense.R, method="sparse")
    Z = dense.layout.vector(fr)[:, None] * (1 + 1e-3 * rng.normal(size=(dense.layout.D, 4)))
    a, b = dense.evaluate(Z), sparse.evaluate(Z)
    np.testing.assert_allclose(a.wmr, b.wmr, rtol=1e-6)
    np.testing.assert_allclose(a.zero_seq, b.zero_seq, rtol=1e-6, atol=1e-9)


def test_refit_uses_covariance_at_new_point(rng):
    net = monitored_random_tree(8, rng)
    fr = exact_frame(net)
    bank = build_estimator_bank(net, noise=NoiseSpec(), reference_frame=fr)
    z = bank.layout.vector(fr) * 1.01
    assert bank.drift(z) > 0
    refit = bank.refit(z)
    np.testing.assert_allclose(refit.R, covariance_from_vector(bank.layout, z, NoiseSpec()))


def test_stream_roundtrip(tmp_path, rng):
    net = monitored_random_tree(6, rng).with_monitoring({1, 3, 5, 6}, {2})
    frames = generate_frames(Scenario(net, None, 0, 3, NoiseSpec(seed=4)))
    path = tmp_path / "s.csv"
    write_stream(frames, path)
    back = read_stream(path)
    assert [f.t for f in back] == [0, 1, 2]
    layout = MeasurementLayout(net)
    for a, b in zip(frames, back):
        np.testing.assert_allclose(layout.vector(a), layout.vector(b), rtol=1e-14, atol=1e-12)
    header = path.read_text().splitlines()[0]
    assert header == "t,bus,phase,Vmag,Vang,Imag,Iang"
    voltage_only_rows = [r for r in path.read_text().splitlines()[1:] if r.split(",")[1] == "2"]
    assert voltage_only_rows and all(r.endswith(",,") for r in voltage_only_rows)


def test_cluster_residual_identity_small(rng):
    from gridfault.observability import compute_ufc

    for _ in range(3):
        net = monitored_random_tree(10, rng)
        ufc = compute_ufc(net)
        models = {ln.id: build_measurement_model(split_line(net, ln.id, 0.5))
                  for ln in net.closed_lines}
        Z = rng.normal(size=(models[1].D, 20))
        for cluster in ufc.clusters:
            ws = [models[k].solver.solve(Z)[1] for k in cluster]
            for w in ws[1:]:
                assert np.all(np.abs(w - ws[0]) <= 1e-8 * np.maximum(1.0, ws[0]))
