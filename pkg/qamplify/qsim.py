#!/usr/bin/env python3
'''
Exact dense statevector simulation of small variational circuits.

Usage: `amplitude_embed()` a feature vector, run `sel_circuit()` with a set
       of `SELWeights`, then read `expectation_z()` per qubit. The *_batch
       helpers evaluate many samples at once (leading batch axis).

Qubit 0 is the most significant bit of the basis index: |q0 q1> sits at
index 2*q0 + q1. ROT(a, b, c) = RZ(c) . RY(b) . RZ(a), RZ(a) applied first.
'''
import math
import numpy as np
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple
from .helper import NumericError, SchemaError

NORM_TOL = 1e-9
SHIFT = math.pi / 2

# kind -> (number of qubits, number of angles)
GATE_KINDS = {
    'RY': (1, 1),
    'RZ': (1, 1),
    'ROT': (1, 3),
    'CNOT': (2, 0),
    'CZ': (2, 0),
}


def ry_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz_matrix(psi: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * psi), 0], [0, np.exp(0.5j * psi)]],
                    dtype=complex)


def rot_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    return rz_matrix(gamma) @ ry_matrix(beta) @ rz_matrix(alpha)


# row/col index = 2 * first_qubit + second_qubit (control first for CNOT)
CNOT_MATRIX = np.array([[1, 0, 0, 0],
                        [0, 1, 0, 0],
                        [0, 0, 0, 1],
                        [0, 0, 1, 0]], dtype=complex)
CZ_MATRIX = np.diag([1, 1, 1, -1]).astype(complex)


class StateVector:
    ''' Immutable, normalized amplitudes of an n-qubit register. '''

    def __init__(self, amplitudes: Sequence[complex]) -> None:
        amps = np.array(amplitudes, dtype=complex).ravel()
        n_qubits = amps.size.bit_length() - 1
        if amps.size < 2 or amps.size != 2 ** n_qubits:
            raise SchemaError(
                'Amplitude count must be 2^n, got {}'.format(amps.size))
        if not np.all(np.isfinite(amps)):
            raise NumericError('Non-finite amplitude')
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise NumericError('Statevector not normalized: {}'.format(norm))
        amps.flags.writeable = False
        self.n_qubits = n_qubits
        self.amplitudes = amps

    @staticmethod
    def zero(n_qubits: int) -> 'StateVector':
        ''' The |0...0> register. '''
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[0] = 1
        return StateVector(amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def label(self, index: int) -> str:
        ''' Basis label, e.g., index 2 on two qubits -> "|10>" '''
        return '|{}>'.format(format(index, '0{}b'.format(self.n_qubits)))

    def rows(self) -> List[Tuple[int, str, float, float, float]]:
        ''' (index, basis-label, re, im, prob) per basis state. '''
        probs = self.probabilities()
        return [(i, self.label(i), float(a.real), float(a.imag),
                 float(probs[i])) for i, a in enumerate(self.amplitudes)]

    def __str__(self) -> str:
        return '\n'.join('{:>3} {} {: .10f} {: .10f} {:.10f}'.format(*row)
                         for row in self.rows())


class Gate:
    '''
    A single gate. `qubits` holds 1 index (RY, RZ, ROT) or 2 (CNOT, CZ).
    For CNOT the first index is the control.
    '''

    def __init__(
        self,
        kind: str,
        qubits: Sequence[int],
        angles: Sequence[float] = ()
    ) -> None:
        kind = kind.upper()
        if kind not in GATE_KINDS:
            raise SchemaError('Unknown gate kind "{}"'.format(kind))
        n_qubits, n_angles = GATE_KINDS[kind]
        qubits = tuple(int(q) for q in qubits)
        angles = tuple(float(a) for a in angles)
        if len(qubits) != n_qubits or len(set(qubits)) != n_qubits \
                or min(qubits) < 0:
            raise SchemaError('{} needs {} distinct qubit indices, got {}'
                              .format(kind, n_qubits, qubits))
        if len(angles) != n_angles:
            raise SchemaError('{} needs {} angles, got {}'.format(
                kind, n_angles, len(angles)))
        if not all(math.isfinite(a) for a in angles):
            raise NumericError('Non-finite angle in {}{}'.format(kind, angles))
        self.kind = kind
        self.qubits = qubits
        self.angles = angles

    @staticmethod
    def ry(qubit: int, phi: float) -> 'Gate':
        return Gate('RY', (qubit,), (phi,))

    @staticmethod
    def rz(qubit: int, psi: float) -> 'Gate':
        return Gate('RZ', (qubit,), (psi,))

    @staticmethod
    def rot(qubit: int, alpha: float, beta: float, gamma: float) -> 'Gate':
        return Gate('ROT', (qubit,), (alpha, beta, gamma))

    @staticmethod
    def cnot(control: int, target: int) -> 'Gate':
        return Gate('CNOT', (control, target))

    @staticmethod
    def cz(a: int, b: int) -> 'Gate':
        return Gate('CZ', (a, b))

    def matrix(self) -> np.ndarray:
        ''' Local 2x2 or 4x4 unitary. '''
        if self.kind == 'RY':
            return ry_matrix(*self.angles)
        if self.kind == 'RZ':
            return rz_matrix(*self.angles)
        if self.kind == 'ROT':
            return rot_matrix(*self.angles)
        return CNOT_MATRIX if self.kind == 'CNOT' else CZ_MATRIX

    def unitary(self, n_qubits: int) -> np.ndarray:
        ''' Matrix expanded to the full 2^n register. '''
        self.check(n_qubits)
        eye = np.eye(2 ** n_qubits, dtype=complex)
        # apply to every basis vector (rows), columns of U are the images
        return _apply_matrix(eye, self.matrix(), self.qubits, n_qubits).T

    def check(self, n_qubits: int) -> None:
        if max(self.qubits) >= n_qubits:
            raise SchemaError('Qubit index {} out of range for {} qubits'
                              .format(max(self.qubits), n_qubits))

    def __repr__(self) -> str:
        args = ', '.join('{:.6g}'.format(a) for a in self.angles)
        return '{}{}{}'.format(self.kind, list(self.qubits),
                               '({})'.format(args) if args else '')


class SELWeights:
    ''' Rotation angles of the strongly-entangling ansatz, shape (L, n, 3). '''

    def __init__(self, angles: Any) -> None:
        arr = np.array(angles, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 \
                or arr.shape[1] < 1:
            raise SchemaError(
                'SEL angles must have shape (L, n, 3), got {}'.format(
                    arr.shape))
        if not np.all(np.isfinite(arr)):
            raise NumericError('Non-finite SEL angle')
        arr.flags.writeable = False
        self.layers, self.n_qubits = arr.shape[0], arr.shape[1]
        self.angles = arr

    @property
    def n_params(self) -> int:
        return 3 * self.n_qubits * self.layers

    @staticmethod
    def zeros(layers: int, n_qubits: int) -> 'SELWeights':
        return SELWeights(np.zeros((layers, n_qubits, 3)))

    @staticmethod
    def random(
        layers: int,
        n_qubits: int,
        rng: np.random.Generator
    ) -> 'SELWeights':
        ''' Uniform angles in [0, pi]. '''
        return SELWeights(rng.uniform(0, math.pi, size=(layers, n_qubits, 3)))

    def gates(self) -> List[Gate]:
        '''
        Per layer: ROT on every qubit, then a CNOT ring q -> (q+1) mod n.
        A single qubit has no ring.
        '''
        n = self.n_qubits
        result = []  # type: List[Gate]
        for layer in self.angles:
            result.extend(Gate.rot(q, *layer[q]) for q in range(n))
            if n > 1:
                result.extend(Gate.cnot(q, (q + 1) % n) for q in range(n))
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {'n_qubits': self.n_qubits, 'layers': self.layers,
                'angles': self.angles.tolist()}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'SELWeights':
        try:
            weights = SELWeights(data['angles'])
        except KeyError as e:
            raise SchemaError('SEL weights missing key {}'.format(e))
        for key, val in (('n_qubits', weights.n_qubits),
                         ('layers', weights.layers)):
            if key in data and int(data[key]) != val:
                raise SchemaError('SEL weights: {}={} does not match angles '
                                  'shape {}'.format(key, data[key],
                                                    weights.angles.shape))
        return weights

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SELWeights) \
            and np.array_equal(self.angles, other.angles)


class PredictionProbabilities(NamedTuple):
    p_not_backorder: float
    p_backorder: float


# Batched kernels. `amps` always has shape (batch, 2^n).

def _apply_matrix(
    amps: np.ndarray,
    matrix: np.ndarray,
    qubits: Sequence[int],
    n_qubits: int
) -> np.ndarray:
    k = len(qubits)
    tensor = amps.reshape((amps.shape[0],) + (2,) * n_qubits)
    axes = [q + 1 for q in qubits]
    gate = matrix.reshape((2,) * (2 * k))
    out = np.tensordot(tensor, gate, axes=(axes, list(range(k, 2 * k))))
    # tensordot appends the gate's output axes; move them back in place
    out = np.moveaxis(out, list(range(out.ndim - k, out.ndim)), axes)
    return out.reshape(amps.shape[0], -1)


def _sel_batch(
    amps: np.ndarray,
    angles: np.ndarray,
    n_qubits: int
) -> np.ndarray:
    for layer in angles:
        for q in range(n_qubits):
            amps = _apply_matrix(amps, rot_matrix(*layer[q]), (q,), n_qubits)
        if n_qubits > 1:
            for q in range(n_qubits):
                amps = _apply_matrix(amps, CNOT_MATRIX,
                                     (q, (q + 1) % n_qubits), n_qubits)
    return amps


def _expectations_batch(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    probs = (np.abs(amps) ** 2).reshape((amps.shape[0],) + (2,) * n_qubits)
    result = np.empty((amps.shape[0], n_qubits))
    for q in range(n_qubits):
        others = tuple(a + 1 for a in range(n_qubits) if a != q)
        marginal = probs.sum(axis=others) if others else probs
        result[:, q] = marginal[:, 0] - marginal[:, 1]
    return result


def embed_batch(
    inputs: np.ndarray,
    n_qubits: int,
    *, pre_rotation: bool = False
) -> np.ndarray:
    ''' Amplitude-embed every row of `inputs`; zero rows raise. '''
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2:
        raise SchemaError('Expected a 2-D batch, got shape {}'.format(x.shape))
    dim = 2 ** n_qubits
    if x.shape[1] > dim:
        raise SchemaError('{} features do not fit into {} qubits'.format(
            x.shape[1], n_qubits))
    if not np.all(np.isfinite(x)):
        raise NumericError('Non-finite embedding input')
    padded = np.zeros((x.shape[0], dim))
    padded[:, :x.shape[1]] = x
    norms = np.linalg.norm(padded, axis=1)
    if np.any(norms == 0):
        raise NumericError('Cannot embed an all-zero vector (norm undefined)')
    amps = (padded / norms[:, None]).astype(complex)
    if pre_rotation:
        for q in range(n_qubits):
            amps = _apply_matrix(amps, ry_matrix(math.pi / 2), (q,), n_qubits)
    return amps


def quantum_layer_batch(
    inputs: np.ndarray,
    weights: SELWeights,
    *, pre_rotation: bool = False
) -> np.ndarray:
    ''' Pauli-Z expectations, shape (batch, n_qubits). '''
    n = weights.n_qubits
    _check_input_width(inputs, n)
    amps = embed_batch(inputs, n, pre_rotation=pre_rotation)
    return _expectations_batch(_sel_batch(amps, weights.angles, n), n)


def param_shift_jacobian(
    inputs: np.ndarray,
    weights: SELWeights,
    *, pre_rotation: bool = False
) -> np.ndarray:
    '''
    d<Z_q>/d(theta) for every sample, output qubit and rotation angle.
    Shape (batch, n_qubits, L, n_qubits, 3).
    '''
    n = weights.n_qubits
    _check_input_width(inputs, n)
    amps = embed_batch(inputs, n, pre_rotation=pre_rotation)
    shape = weights.angles.shape
    flat = weights.angles.ravel()
    jac = np.empty((amps.shape[0], n, flat.size))
    for k in range(flat.size):
        shifted = flat.copy()
        shifted[k] += SHIFT
        e_plus = _expectations_batch(_sel_batch(
            amps, shifted.reshape(shape), n), n)
        shifted[k] -= 2 * SHIFT
        e_minus = _expectations_batch(_sel_batch(
            amps, shifted.reshape(shape), n), n)
        jac[:, :, k] = (e_plus - e_minus) / 2
    return jac.reshape((amps.shape[0], n) + shape)


def _check_input_width(inputs: np.ndarray, n_qubits: int) -> None:
    width = np.shape(inputs)[-1]
    if width != 2 ** n_qubits:
        raise SchemaError('Quantum layer expects {} inputs, got {}'.format(
            2 ** n_qubits, width))


# Single-sample operations

def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    ''' U|psi> with U the gate expanded to the full register. '''
    gate.check(state.n_qubits)
    amps = _apply_matrix(state.amplitudes[None, :], gate.matrix(),
                         gate.qubits, state.n_qubits)
    return StateVector(amps[0])


def amplitude_embed(features: Sequence[float], n_qubits: int) -> StateVector:
    ''' Zero-pad to 2^n entries and divide by the Euclidean norm. '''
    x = np.asarray(features, dtype=float).ravel()
    return StateVector(embed_batch(x[None, :], n_qubits)[0])


def sel_circuit(state: StateVector, weights: SELWeights) -> StateVector:
    ''' Apply all strongly-entangling layers to `state`. '''
    if weights.n_qubits != state.n_qubits:
        raise SchemaError('SEL weights for {} qubits, state has {}'.format(
            weights.n_qubits, state.n_qubits))
    amps = _sel_batch(state.amplitudes[None, :], weights.angles,
                      state.n_qubits)
    return StateVector(amps[0])


def expectation_z(state: StateVector, qubit: int) -> float:
    ''' <Z> on `qubit`: +1 weight where its bit is 0, -1 where it is 1. '''
    if not 0 <= qubit < state.n_qubits:
        raise SchemaError('Qubit index {} out of range for {} qubits'.format(
            qubit, state.n_qubits))
    return float(_expectations_batch(state.amplitudes[None, :],
                                     state.n_qubits)[0, qubit])


def class_probabilities(expectation: float) -> PredictionProbabilities:
    ''' Map <Z> in [-1, 1] linearly onto (p_not_backorder, p_backorder). '''
    if not math.isfinite(expectation) \
            or abs(expectation) > 1 + NORM_TOL:
        raise NumericError('Expectation {} outside [-1, 1]'.format(
            expectation))
    p_not = (min(1.0, max(-1.0, expectation)) + 1) / 2
    return PredictionProbabilities(p_not, 1 - p_not)


def quantum_layer_forward(
    inputs: Sequence[float],
    weights: SELWeights,
    *, pre_rotation: bool = False
) -> np.ndarray:
    ''' Embed, run SEL, return <Z> for qubits 0..n-1. '''
    x = np.asarray(inputs, dtype=float).ravel()
    return quantum_layer_batch(x[None, :], weights,
                               pre_rotation=pre_rotation)[0]


def param_shift_grad(
    inputs: Sequence[float],
    weights: SELWeights,
    qubit: int,
    *, pre_rotation: bool = False
) -> np.ndarray:
    '''
    Gradient of <Z_qubit> w.r.t. every SEL angle by the parameter-shift rule
    [f(theta + pi/2) - f(theta - pi/2)] / 2. Shape (L, n, 3).
    '''
    if not 0 <= qubit < weights.n_qubits:
        raise SchemaError('Qubit index {} out of range for {} qubits'.format(
            qubit, weights.n_qubits))
    x = np.asarray(inputs, dtype=float).ravel()
    return param_shift_jacobian(x[None, :], weights,
                                pre_rotation=pre_rotation)[0, qubit]


def run_circuit(
    inputs: Sequence[float],
    weights: SELWeights,
    *, pre_rotation: bool = False
) -> Tuple[StateVector, StateVector]:
    ''' (embedded state, state after SEL) for inspection. '''
    embedded = amplitude_embed(inputs, weights.n_qubits)
    state = embedded
    if pre_rotation:
        for q in range(weights.n_qubits):
            state = apply_gate(state, Gate.ry(q, math.pi / 2))
    return embedded, sel_circuit(state, weights)


def circuit_gates(
    weights: SELWeights,
    *, pre_rotation: bool = False
) -> List[Gate]:
    pre = [Gate.ry(q, math.pi / 2) for q in range(weights.n_qubits)] \
        if pre_rotation else []  # type: List[Gate]
    return pre + weights.gates()


def describe(weights: SELWeights, *, pre_rotation: bool = False) -> str:
    ''' One gate per line. '''
    return '\n'.join(repr(g) for g in circuit_gates(
        weights, pre_rotation=pre_rotation))


