import math
import numpy as np
import pytest

from qamplify.helper import NumericError, SchemaError
from qamplify.qsim import (
    CNOT_MATRIX, Gate, SELWeights, StateVector, amplitude_embed, apply_gate,
    class_probabilities, expectation_z, param_shift_grad,
    quantum_layer_forward, ry_matrix, rot_matrix, run_circuit, sel_circuit)

I2 = np.eye(2)
Z = np.diag([1.0, -1.0])
# control qubit 1, target qubit 0: swaps |01> and |11>
CNOT_10 = np.eye(4)[[0, 3, 2, 1]]


def random_gate(rng, n):
    kind = rng.choice(['RY', 'RZ', 'ROT', 'CNOT', 'CZ'])
    if kind in ('CNOT', 'CZ'):
        a, b = rng.choice(n, size=2, replace=False)
        return Gate(kind, (a, b))
    q = int(rng.integers(n))
    n_angles = 3 if kind == 'ROT' else 1
    return Gate(kind, (q,), rng.uniform(-2 * math.pi, 2 * math.pi, n_angles))


def dense_layer_oracle(x, angles):
    ''' 2-qubit SEL expectations as an explicit 4x4 matrix chain. '''
    psi = np.zeros(4, dtype=complex)
    psi[:len(x)] = x
    psi /= np.linalg.norm(psi)
    for layer in angles:
        u = np.kron(rot_matrix(*layer[0]), I2)
        u = np.kron(I2, rot_matrix(*layer[1])) @ u
        u = CNOT_10 @ CNOT_MATRIX @ u
        psi = u @ psi
    return np.array([np.vdot(psi, np.kron(Z, I2) @ psi).real,
                     np.vdot(psi, np.kron(I2, Z) @ psi).real])


def test_statevector_validation():
    with pytest.raises(SchemaError):
        StateVector([1, 0, 0])
    with pytest.raises(NumericError):
        StateVector([1, 1])
    state = StateVector.zero(2)
    assert state.n_qubits == 2
    assert state.label(2) == '|10>'
    with pytest.raises(ValueError):
        state.amplitudes[0] = 0


def test_ry_pi_flips_zero_to_one():
    state = apply_gate(StateVector.zero(1), Gate.ry(0, math.pi))
    assert np.allclose(state.amplitudes, [0, 1], atol=1e-12)


def test_cnot_flips_target_when_control_set():
    state = StateVector([0, 0, 1, 0])  # |10>
    out = apply_gate(state, Gate.cnot(0, 1))
    assert np.allclose(out.amplitudes, [0, 0, 0, 1])
    out = apply_gate(StateVector([0, 1, 0, 0]), Gate.cnot(0, 1))
    assert np.allclose(out.amplitudes, [0, 1, 0, 0])


def test_gate_rejects_bad_arguments():
    with pytest.raises(SchemaError):
        Gate('CNOT', (1, 1))
    with pytest.raises(SchemaError):
        Gate('H', (0,))
    with pytest.raises(NumericError):
        Gate.ry(0, float('nan'))
    with pytest.raises(SchemaError):
        apply_gate(StateVector.zero(2), Gate.ry(2, 0.1))


def test_gate_unitaries():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(2, 5))
        u = random_gate(rng, n).unitary(n)
        assert np.allclose(u.conj().T @ u, np.eye(2 ** n), rtol=0, atol=1e-12)


def test_unitary_matches_kron_layout():
    g = Gate.ry(1, 0.7)
    assert np.allclose(g.unitary(2), np.kron(I2, ry_matrix(0.7)))
    assert np.allclose(Gate.cnot(1, 0).unitary(2), CNOT_10)


def test_random_sequences_preserve_norm():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 4)) + 1
        state = StateVector.zero(n)
        for _ in range(int(rng.integers(1, 6))):
            state = apply_gate(state, random_gate(rng, n))
        assert abs(np.sum(state.probabilities()) - 1) < 1e-9


def test_amplitude_embed():
    state = amplitude_embed([3, 4], 2)
    assert np.array_equal(state.amplitudes, [0.6, 0.8, 0, 0])
    assert np.allclose(amplitude_embed([1, 1, 1, 1], 2).amplitudes, 0.5)
    with pytest.raises(NumericError):
        amplitude_embed([0, 0, 0, 0], 2)
    with pytest.raises(SchemaError):
        amplitude_embed([1, 2, 3, 4, 5], 2)


def test_amplitude_embed_random_vectors():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x = rng.normal(size=4)
        amps = amplitude_embed(x, 2).amplitudes
        assert np.allclose(amps.real, x / np.linalg.norm(x), atol=1e-12)
        assert np.all(amps.imag == 0)


def test_expectation_and_probabilities():
    state = StateVector.zero(2)
    assert expectation_z(state, 0) == 1
    assert class_probabilities(1.0) == (1.0, 0.0)
    assert class_probabilities(-1.0) == (0.0, 1.0)
    assert class_probabilities(0.0) == (0.5, 0.5)
    with pytest.raises(NumericError):
        class_probabilities(1.5)
    with pytest.raises(SchemaError):
        expectation_z(state, 2)


def test_zero_weights_leave_basis_state():
    expect = quantum_layer_forward([1, 0, 0, 0], SELWeights.zeros(1, 2))
    assert np.allclose(expect, [1, 1])
    expect = quantum_layer_forward([1, 1, 1, 1], SELWeights.zeros(1, 2))
    assert np.allclose(expect, [0, 0], atol=1e-12)


def test_cz_and_rz_phases():
    one_one = StateVector([0, 0, 0, 1])
    assert np.allclose(apply_gate(one_one, Gate.cz(0, 1)).amplitudes,
                       [0, 0, 0, -1])
    psi = 0.7
    out = apply_gate(StateVector.zero(1), Gate.rz(0, psi))
    assert np.allclose(out.amplitudes, [np.exp(-0.5j * psi), 0])


def test_zero_weights_ring_moves_one_zero_to_zero_one():
    one_zero = StateVector([0, 0, 1, 0])
    assert expectation_z(one_zero, 0) == pytest.approx(-1)
    assert expectation_z(one_zero, 1) == pytest.approx(1)
    out = sel_circuit(one_zero, SELWeights.zeros(1, 2))
    assert np.allclose(out.amplitudes, [0, 1, 0, 0])
    expect = quantum_layer_forward([0, 0, 1, 0], SELWeights.zeros(1, 2))
    assert np.allclose(expect, [1, -1])


def test_sel_gate_order():
    gates = SELWeights.zeros(1, 3).gates()
    assert [g.kind for g in gates] == ['ROT'] * 3 + ['CNOT'] * 3
    assert [g.qubits for g in gates[3:]] == [(0, 1), (1, 2), (2, 0)]
    assert [g.kind for g in SELWeights.zeros(2, 1).gates()] == ['ROT'] * 2


def test_sel_circuit_matches_gate_list():
    rng = np.random.default_rng(5)
    weights = SELWeights.random(2, 3, rng)
    state = amplitude_embed(rng.normal(size=8), 3)
    manual = state
    for gate in weights.gates():
        manual = apply_gate(manual, gate)
    assert np.allclose(sel_circuit(state, weights).amplitudes,
                       manual.amplitudes, atol=1e-12)


def test_quantum_layer_matches_matrix_chain():
    rng = np.random.default_rng(11)
    for _ in range(100):
        weights = SELWeights.random(int(rng.integers(1, 3)), 2, rng)
        x = rng.normal(size=4)
        assert np.allclose(quantum_layer_forward(x, weights),
                           dense_layer_oracle(x, weights.angles),
                           rtol=0, atol=1e-10)


def test_param_shift_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(100):
        weights = SELWeights.random(1, 2, rng)
        x = rng.normal(size=4)
        qubit = int(rng.integers(2))
        grad = param_shift_grad(x, weights, qubit)
        assert grad.shape == (1, 2, 3)
        for idx in np.ndindex(weights.angles.shape):
            plus = weights.angles.copy()
            plus[idx] += h
            minus = weights.angles.copy()
            minus[idx] -= h
            fd = (quantum_layer_forward(x, SELWeights(plus))[qubit]
                  - quantum_layer_forward(x, SELWeights(minus))[qubit]) / (2 * h)
            assert abs(grad[idx] - fd) < 1e-6


def test_param_shift_single_ry_angle():
    weights = SELWeights([[[0.0, math.pi / 3, 0.0]]])
    grad = param_shift_grad([1, 0], weights, 0)
    assert grad.shape == (1, 1, 3)
    assert grad[0, 0, 1] == pytest.approx(-0.86602540, abs=1e-8)
    assert np.allclose(grad[0, 0, [0, 2]], 0, atol=1e-12)


def test_pre_rotation_changes_expectations():
    weights = SELWeights.zeros(1, 2)
    plain = quantum_layer_forward([1, 0, 0, 0], weights)
    rotated = quantum_layer_forward([1, 0, 0, 0], weights, pre_rotation=True)
    assert np.allclose(plain, [1, 1])
    # RY(pi/2) on both qubits: |0> -> |+>, CNOT ring keeps <Z> at 0
    assert np.allclose(rotated, [0, 0], atol=1e-12)
    embedded, final = run_circuit([1, 0, 0, 0], weights, pre_rotation=True)
    assert np.allclose(embedded.amplitudes, [1, 0, 0, 0])
    assert np.allclose(final.probabilities(), 0.25)


def test_sel_weights_round_trip_and_shape_check():
    weights = SELWeights.random(2, 2, np.random.default_rng(0))
    assert SELWeights.from_dict(weights.to_dict()) == weights
    assert weights.n_params == 12
    with pytest.raises(SchemaError):
        SELWeights(np.zeros((1, 2)))
    with pytest.raises(SchemaError):
        SELWeights.from_dict({'angles': np.zeros((1, 2, 3)).tolist(),
                              'n_qubits': 3})
