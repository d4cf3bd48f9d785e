"""Statevector simulator tests: gates, expectations, batching, trajectories."""

import math

import numpy as np
import pytest

from qccnn.sim import (
    Circuit,
    GateOp,
    MidMeasure,
    Statevector,
    apply_gate,
    bind_inputs,
    expectation_z,
    run_deferred,
    run_deferred_batch,
    run_trajectories,
)

from oracles import circuit_unitary, gate_unitary, random_circuit, z_expectations_oracle

SQRT2_INV = 1 / math.sqrt(2)


# ---------------------------------------------------------------------------
# single gates
# ---------------------------------------------------------------------------


def test_hadamard_on_zero():
    state = apply_gate(Statevector.zero(1), GateOp("H", (0,)))
    np.testing.assert_allclose(state.amplitudes, [SQRT2_INV, SQRT2_INV], atol=1e-15)


def test_rx_pi_on_zero():
    state = apply_gate(Statevector.zero(1), GateOp("RX", (0,), angle=math.pi))
    np.testing.assert_allclose(state.amplitudes, [0, -1j], atol=1e-15)


def test_cnot_flips_target_when_control_set():
    # little-endian: qubit 0 is the least significant bit
    state = Statevector.zero(2)
    state = apply_gate(state, GateOp("X", (0,)))  # |01> = index 1
    state = apply_gate(state, GateOp("CNOT", (0, 1)))  # -> |11> = index 3
    np.testing.assert_allclose(state.amplitudes, [0, 0, 0, 1], atol=1e-15)


def test_rzz_matches_composite_on_basis_states():
    # RZZ(phi) must equal CNOT . RZ(phi) . CNOT as a 4x4 matrix
    rng = np.random.default_rng(3)
    for phi in rng.uniform(-2 * math.pi, 2 * math.pi, 5):
        composite = (
            gate_unitary("CNOT", (0, 1), 2)
            @ gate_unitary("RZ", (1,), 2, phi)
            @ gate_unitary("CNOT", (0, 1), 2)
        )
        expected_diag = np.diag(
            [np.exp(-1j * phi / 2), np.exp(1j * phi / 2), np.exp(1j * phi / 2), np.exp(-1j * phi / 2)]
        )
        np.testing.assert_allclose(composite, expected_diag, atol=1e-12)
        for basis in range(4):
            amps = np.zeros(4, dtype=complex)
            amps[basis] = 1.0
            got = apply_gate(Statevector(2, amps), GateOp("RZZ", (0, 1), angle=float(phi)))
            np.testing.assert_allclose(got.amplitudes, composite[:, basis], atol=1e-12)


@pytest.mark.parametrize("kind", ["RX", "RY", "RZ", "CRX", "CRY", "CRZ", "CNOT", "CY", "CZ", "H", "X"])
def test_every_gate_matches_dense_matrix(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    n = 3
    targets = (1,) if kind in ("H", "X", "RX", "RY", "RZ") else (2, 0)
    theta = float(rng.uniform(-math.pi, math.pi))
    needs_angle = kind in ("RX", "RY", "RZ", "CRX", "CRY", "CRZ")
    gate = GateOp(kind, targets, angle=theta) if needs_angle else GateOp(kind, targets)
    amps = rng.normal(size=8) + 1j * rng.normal(size=8)
    amps /= np.linalg.norm(amps)
    got = apply_gate(Statevector(n, amps), gate).amplitudes
    want = gate_unitary(kind, targets, n, theta if needs_angle else None) @ amps
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_apply_gate_rejects_bad_target_and_missing_param():
    state = Statevector.zero(2)
    with pytest.raises(ValueError, match="out of range"):
        apply_gate(state, GateOp("H", (2,)))
    with pytest.raises(ValueError, match="missing parameter"):
        apply_gate(state, GateOp("RX", (0,), param_slot=0), params=())
    with pytest.raises(ValueError, match="unbound"):
        apply_gate(state, GateOp("RZ", (0,), input_idx=(0,)))


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------


def test_expectation_z_basis_states():
    assert expectation_z(Statevector.zero(1), 0) == 1.0
    one = apply_gate(Statevector.zero(1), GateOp("X", (0,)))
    assert expectation_z(one, 0) == -1.0
    plus = apply_gate(Statevector.zero(1), GateOp("H", (0,)))
    assert abs(expectation_z(plus, 0)) < 1e-15


def test_expectation_z_rejects_out_of_range():
    with pytest.raises(ValueError):
        expectation_z(Statevector.zero(1), 1)


# ---------------------------------------------------------------------------
# circuit validation
# ---------------------------------------------------------------------------


def test_circuit_rejects_unreferenced_slot():
    with pytest.raises(ValueError, match="never referenced"):
        Circuit(1, (GateOp("RX", (0,), param_slot=0),), num_params=2, readout=(0,))


def test_circuit_rejects_condition_before_measure():
    ops = (GateOp("RX", (0,), param_slot=0, condition=0), MidMeasure(1, 0))
    with pytest.raises(ValueError, match="before it is assigned"):
        Circuit(2, ops, num_params=1, readout=(0,))


def test_circuit_rejects_duplicate_classical_bit():
    ops = (MidMeasure(0, 0), MidMeasure(1, 0))
    with pytest.raises(ValueError, match="assigned twice"):
        Circuit(2, ops, readout=(1,))


def test_gateop_rejects_bad_arity_and_angle_sources():
    with pytest.raises(ValueError):
        GateOp("H", (0, 1))
    with pytest.raises(ValueError):
        GateOp("CNOT", (1, 1))
    with pytest.raises(ValueError):
        GateOp("RX", (0,))  # no angle source
    with pytest.raises(ValueError):
        GateOp("RX", (0,), param_slot=0, angle=0.1)  # two sources
    with pytest.raises(ValueError):
        GateOp("H", (0,), angle=0.1)


# ---------------------------------------------------------------------------
# deterministic execution
# ---------------------------------------------------------------------------


def test_run_deferred_rx_readout():
    circuit = Circuit(1, (GateOp("RX", (0,), param_slot=0),), num_params=1, readout=(0,))
    np.testing.assert_allclose(run_deferred(circuit, [0.0]), [1.0], atol=1e-15)
    np.testing.assert_allclose(run_deferred(circuit, [math.pi / 2]), [0.0], atol=1e-15)
    np.testing.assert_allclose(run_deferred(circuit, [1.1]), [math.cos(1.1)], atol=1e-14)


def test_run_deferred_param_length_checked():
    circuit = Circuit(1, (GateOp("RX", (0,), param_slot=0),), num_params=1, readout=(0,))
    with pytest.raises(ValueError, match="parameters"):
        run_deferred(circuit, [0.1, 0.2])


def test_random_circuits_match_dense_oracle():
    rng = np.random.default_rng(11)
    for _ in range(40):
        circuit = random_circuit(rng, num_qubits=4, depth=int(rng.integers(5, 30)))
        params = rng.uniform(-math.pi, math.pi, circuit.num_params)
        got = run_deferred(circuit, params)
        want = z_expectations_oracle(circuit, params)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_norm_preserved_by_random_deep_circuits():
    rng = np.random.default_rng(12)
    for _ in range(10):
        circuit = random_circuit(rng, num_qubits=5, depth=50)
        params = rng.uniform(-math.pi, math.pi, circuit.num_params)
        state = Statevector.zero(5)
        for op in circuit.ops:
            state = apply_gate(state, op, params)
            assert abs(state.norm() - 1.0) < 1e-12


def test_inputs_resolved_like_baked_constants():
    rng = np.random.default_rng(13)
    ops = (
        GateOp("H", (0,)),
        GateOp("RZ", (0,), input_idx=(0,)),
        GateOp("H", (1,)),
        GateOp("RZ", (1,), input_idx=(0, 1)),
        GateOp("RX", (0,), param_slot=0),
    )
    circuit = Circuit(2, ops, num_params=1, num_inputs=2, readout=(0, 1))
    for _ in range(5):
        x = rng.uniform(-1, 1, 2)
        theta = rng.uniform(-math.pi, math.pi, 1)
        via_inputs = run_deferred(circuit, theta, x)
        via_baked = run_deferred(bind_inputs(circuit, x), theta)
        np.testing.assert_allclose(via_inputs, via_baked, atol=1e-14)
        np.testing.assert_allclose(via_inputs, z_expectations_oracle(circuit, theta, x), atol=1e-12)


def test_inputs_outside_range_rejected():
    circuit = Circuit(
        1, (GateOp("H", (0,)), GateOp("RZ", (0,), input_idx=(0,))), num_inputs=1, readout=(0,)
    )
    with pytest.raises(ValueError, match="normalized"):
        run_deferred(circuit, [], [1.5])
    with pytest.raises(ValueError, match="requires"):
        run_deferred(circuit, [])


def test_batch_rows_match_single_runs():
    rng = np.random.default_rng(14)
    ops = tuple(
        [GateOp("H", (q,)) for q in range(3)]
        + [GateOp("RZ", (q,), input_idx=(q,)) for q in range(3)]
        + [GateOp("RX", (q,), param_slot=q) for q in range(3)]
        + [GateOp("CNOT", (0, 1)), GateOp("CNOT", (1, 2))]
    )
    circuit = Circuit(3, ops, num_params=3, num_inputs=3, readout=(0, 1, 2))
    params = rng.uniform(-math.pi, math.pi, 3)
    xs = rng.uniform(-1, 1, (17, 3))
    batch = run_deferred_batch(circuit, params, xs)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(batch[i], run_deferred(circuit, params, x), atol=1e-14)


def test_deterministic_repeat_calls_bit_identical():
    rng = np.random.default_rng(15)
    circuit = random_circuit(rng, num_qubits=4, depth=25)
    params = rng.uniform(-math.pi, math.pi, circuit.num_params)
    first = run_deferred(circuit, params)
    second = run_deferred(circuit, params)
    assert np.array_equal(first, second)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _measure_plus_circuit():
    ops = (GateOp("H", (0,)), MidMeasure(0, 0))
    return Circuit(1, ops, readout=(0,))


def test_trajectory_no_measurement_single_shot_is_exact():
    circuit = Circuit(1, (GateOp("RX", (0,), param_slot=0),), num_params=1, readout=(0,))
    result = run_trajectories(circuit, [1.3], shots=1, seed=0)
    np.testing.assert_allclose(result.estimates, [math.cos(1.3)], atol=1e-14)


def test_trajectory_outcome_frequency_within_binomial_band():
    # measuring H|0> gives outcome 1 with probability 1/2
    result = run_trajectories(_measure_plus_circuit(), [], shots=100_000, seed=7)
    freq = result.outcomes[:, 0].mean()
    assert 0.494 <= freq <= 0.506  # 3 sigma band around 0.5 at 1e5 shots


def test_trajectory_rejects_zero_shots():
    with pytest.raises(ValueError):
        run_trajectories(_measure_plus_circuit(), [], shots=0, seed=0)


def test_trajectory_deterministic_given_seed():
    circuit = _measure_plus_circuit()
    a = run_trajectories(circuit, [], shots=500, seed=3)
    b = run_trajectories(circuit, [], shots=500, seed=3)
    assert np.array_equal(a.outcomes, b.outcomes)
    assert np.array_equal(a.shot_values, b.shot_values)


def test_trajectory_conditioned_gate_applies_per_outcome():
    # measure q0 of |+>; when 1, flip q1 via conditioned rotation RX(pi)
    ops = (
        GateOp("H", (0,)),
        MidMeasure(0, 0),
        GateOp("RX", (1,), angle=math.pi, condition=0),
    )
    circuit = Circuit(2, ops, readout=(1,))
    result = run_trajectories(circuit, [], shots=4000, seed=1)
    flipped = result.outcomes[:, 0] == 1
    np.testing.assert_allclose(result.shot_values[flipped, 0], -1.0, atol=1e-12)
    np.testing.assert_allclose(result.shot_values[~flipped, 0], 1.0, atol=1e-12)
