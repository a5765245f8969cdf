import json

import numpy as np
import pytest

from gridfault.errors import DomainError, SingularLineError, TopologyError
from gridfault.network import (CLOSED, OPEN, Bus, Grounding, Line, NetworkModel, Source,
                               build_admittance, fork_buses, kron_reduce, line_admittance,
                               load_network, network_from_dict, network_to_dict, save_network,
                               sequence_to_phase, split_line, tuned_petersen_reactance)

from support import chain, fortescue, random_tree, star, VPH


def two_bus(z1, z0, b1=0.0, b0=0.0):
    buses = (Bus(1, is_slack=True, source=Source(VPH, 0.1j)), Bus(2))
    return NetworkModel(buses, (Line(1, 1, 2, z1, z0, b1, b0),))


def test_two_bus_pure_reactance_blocks():
    Y = line_admittance(two_bus(1j, 1j))
    np.testing.assert_allclose(Y[:3, :3], -1j * np.eye(3), atol=1e-14)
    np.testing.assert_allclose(Y[:3, 3:], 1j * np.eye(3), atol=1e-14)
    np.testing.assert_allclose(Y[3:, 3:], -1j * np.eye(3), atol=1e-14)


def test_unequal_sequences_couple_phases():
    z1, z0 = 0.2 + 0.3j, 0.7 + 1.1j
    Y = line_admittance(two_bus(z1, z0))
    y0, y1 = 1 / z0, 1 / z1
    F = fortescue()
    expected = F @ np.diag([y0, y1, y1]) @ np.linalg.inv(F)
    np.testing.assert_allclose(Y[:3, :3], expected, atol=1e-12)
    off = Y[0, 1]
    assert abs(off - (y0 - y1) / 3) < 1e-12
    assert np.allclose(Y[:3, :3][~np.eye(3, dtype=bool)], off)


def test_petersen_block_is_zero_sequence_only():
    X = 123.0
    net = chain(3).with_grounding(1, Grounding.petersen(X))
    Y = build_admittance(net, source=False)
    Yl = line_admittance(net)
    np.testing.assert_allclose(Y[:3, :3] - Yl[:3, :3], np.ones((3, 3)) / (3j * X), atol=1e-14)


def test_sequence_to_phase_balanced_is_diagonal():
    np.testing.assert_allclose(sequence_to_phase(2.0, 2.0), 2 * np.eye(3), atol=1e-14)


def test_admittance_symmetric_and_row_sums(rng):
    for _ in range(5):
        net = random_tree(int(rng.integers(3, 15)), rng)
        Y = build_admittance(net)
        assert np.abs(Y - Y.T).max() < 1e-12 * np.abs(Y).max()
        # with a common voltage on all buses only the shunt paths draw current
        Yl = line_admittance(net)
        ones = np.tile(np.eye(3), (net.n, 1))
        per_bus = (Yl @ ones).reshape(net.n, 3, 3)
        for b in range(1, net.n + 1):
            expected = sum(ln.half_shunt_block() for ln in net.incident_lines(b))
            np.testing.assert_allclose(per_bus[b - 1], expected, atol=1e-12)


def test_split_halves_impedance():
    net = two_bus(2 + 2j, 6 + 6j)
    s = split_line(net, 1, 0.5)
    assert (s.n, s.m) == (3, 2)
    assert s.line(1).z1 == 1 + 1j and s.line(2).z1 == 1 + 1j
    assert s.line(1).to_bus == 3 and s.line(2).ends == (3, 2)
    assert 3 not in s.monitored and 3 not in s.injections


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
def test_split_rejects_boundary_fractions(p):
    with pytest.raises(DomainError):
        split_line(chain(3), 1, p)


def test_split_then_kron_recovers_y(rng):
    for _ in range(50):
        net = random_tree(int(rng.integers(2, 12)), rng)
        Y = build_admittance(net)
        k = int(rng.integers(1, net.m + 1))
        p = float(rng.uniform(0.01, 0.99))
        R = kron_reduce(build_admittance(split_line(net, k, p)), [net.n + 1])
        assert np.abs(R - Y).max() <= 1e-10 * np.abs(Y).max()


def test_degrees_and_forks():
    c = chain(3)
    assert [c.degree(b) for b in (1, 2, 3)] == [1, 2, 1]
    s = star(3)
    assert fork_buses(s) == {1}


def test_topology_errors():
    buses = (Bus(1, is_slack=True), Bus(2), Bus(3))
    with pytest.raises(TopologyError):
        NetworkModel(buses, (Line(1, 1, 2, 1j, 1j),))
    loop = (Line(1, 1, 2, 1j, 1j), Line(2, 2, 3, 1j, 1j), Line(3, 3, 1, 1j, 1j))
    with pytest.raises(TopologyError):
        NetworkModel(buses, loop)
    with pytest.raises(SingularLineError):
        NetworkModel(buses[:2], (Line(1, 1, 2, 0j, 1j),))
    with pytest.raises(TopologyError):
        NetworkModel((Bus(1), Bus(2)), (Line(1, 1, 2, 1j, 1j),))


def test_open_line_excluded_until_closed():
    buses = (Bus(1, is_slack=True), Bus(2), Bus(3))
    lines = (Line(1, 1, 2, 1j, 1j), Line(2, 2, 3, 1j, 1j), Line(3, 1, 3, 2j, 2j, status=OPEN))
    net = NetworkModel(buses, lines)
    Y = line_admittance(net)
    assert np.all(Y[0:3, 6:9] == 0)
    moved = net.with_line_status({2: OPEN, 3: CLOSED})
    assert np.any(line_admittance(moved)[0:3, 6:9] != 0)


def test_petersen_auto_tuning_resonates():
    net = chain(6)
    x = tuned_petersen_reactance(net)
    assert abs(1 / x - net.total_zero_sequence_susceptance()) < 1e-12


def test_json_roundtrip(tmp_path, rng):
    net = random_tree(9, rng).with_monitoring({1, 3, 5}, {7})
    path = tmp_path / "net.json"
    save_network(net, path)
    back = load_network(path)
    assert json.loads(path.read_text())["format"] == "gridfault-net/1"
    np.testing.assert_allclose(build_admittance(back), build_admittance(net))
    assert back.monitored == net.monitored and back.voltage_only == net.voltage_only
    for b in net.injections:
        np.testing.assert_allclose(back.injections[b], net.injections[b])


def test_json_auto_petersen():
    data = network_to_dict(chain(4))
    data["buses"][0]["grounding"] = {"kind": "petersen", "reactance": "auto"}
    net = network_from_dict(data)
    g = net.bus(1).grounding
    assert g.kind == "petersen"
    assert abs(g.reactance - tuned_petersen_reactance(net)) < 1e-9
