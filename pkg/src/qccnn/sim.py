"""Dense statevector simulation of small parameterized quantum circuits.

Qubit ordering is little-endian throughout: qubit 0 is the least significant
bit of a basis-state index, so basis state ``b`` assigns qubit ``q`` the
value ``(b >> q) & 1``.

A :class:`Circuit` is an immutable template.  Rotation angles are resolved at
execution time from one of three sources: a trainable parameter slot, a
product of circuit inputs (scaled by pi), or a baked-in constant.
Mid-circuit measurements and classically conditioned gates execute either
exactly, by rewriting conditioned rotations to controlled rotations
(:func:`defer_measurements` / :func:`run_deferred`), or stochastically shot
by shot (:func:`run_trajectories`).

All execution entry points accept a batch of evaluations at once; rows of
the batch are independent simulations whose results are returned in order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_QUBITS = 8

SINGLE_QUBIT_KINDS = frozenset({"H", "X", "RX", "RY", "RZ"})
TWO_QUBIT_KINDS = frozenset({"RZZ", "CNOT", "CY", "CZ", "CRX", "CRY", "CRZ"})
ROTATION_KINDS = frozenset({"RX", "RY", "RZ", "RZZ", "CRX", "CRY", "CRZ"})
GATE_KINDS = SINGLE_QUBIT_KINDS | TWO_QUBIT_KINDS

# Deferred-measurement rewrite of a conditioned rotation.
_CONTROLLED_FORM = {"RX": "CRX", "RY": "CRY", "RZ": "CRZ"}

# Gates diagonal in the computational basis commute with a Z measurement on
# every qubit they touch, so they may follow a mid-circuit measurement.
_Z_DIAGONAL_KINDS = frozenset({"RZ", "RZZ", "CZ", "CRZ"})

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_MIN_BRANCH_PROB = 1e-15


@dataclass(frozen=True)
class GateOp:
    """One gate application.

    For rotation kinds exactly one angle source must be set: `param_slot`
    (trainable parameter index), `input_idx` (angle = pi times the product
    of the indexed circuit inputs) or `angle` (constant, radians).
    `condition` names a classical bit; the gate applies only when that
    recorded measurement outcome is 1.
    """

    kind: str
    targets: tuple[int, ...]
    param_slot: int | None = None
    input_idx: tuple[int, ...] | None = None
    angle: float | None = None
    condition: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in SINGLE_QUBIT_KINDS else 2
        if len(self.targets) != arity:
            raise ValueError(f"{self.kind} takes {arity} target(s), got {self.targets}")
        if arity == 2 and self.targets[0] == self.targets[1]:
            raise ValueError(f"{self.kind} targets must be distinct, got {self.targets}")
        sources = sum(s is not None for s in (self.param_slot, self.input_idx, self.angle))
        if self.kind in ROTATION_KINDS:
            if sources != 1:
                raise ValueError(f"{self.kind} needs exactly one angle source, got {sources}")
        elif sources:
            raise ValueError(f"{self.kind} takes no angle")


@dataclass(frozen=True)
class MidMeasure:
    """Computational-basis measurement of one qubit into a classical bit."""

    qubit: int
    classical_bit: int


@dataclass(frozen=True)
class Circuit:
    """Ordered gate program with trainable parameter and input slots.

    `readout` lists the qubits whose Pauli-Z expectations the run functions
    return, in order.
    """

    num_qubits: int
    ops: tuple
    num_params: int = 0
    num_inputs: int = 0
    readout: tuple[int, ...] = ()

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ValueError(f"num_qubits must be 1..{MAX_QUBITS}, got {self.num_qubits}")
        seen_slots = set()
        seen_bits = set()
        for op in self.ops:
            if isinstance(op, MidMeasure):
                self._check_qubit(op.qubit)
                if op.classical_bit in seen_bits:
                    raise ValueError(f"classical bit {op.classical_bit} assigned twice")
                seen_bits.add(op.classical_bit)
                continue
            if not isinstance(op, GateOp):
                raise ValueError(f"unsupported op {op!r}")
            for q in op.targets:
                self._check_qubit(q)
            if op.param_slot is not None:
                if not 0 <= op.param_slot < self.num_params:
                    raise ValueError(f"parameter slot {op.param_slot} out of range")
                seen_slots.add(op.param_slot)
            if op.input_idx is not None:
                for i in op.input_idx:
                    if not 0 <= i < self.num_inputs:
                        raise ValueError(f"input index {i} out of range")
            if op.condition is not None and op.condition not in seen_bits:
                raise ValueError(f"condition on classical bit {op.condition} before it is assigned")
        if seen_slots != set(range(self.num_params)):
            missing = sorted(set(range(self.num_params)) - seen_slots)
            raise ValueError(f"parameter slots never referenced: {missing}")
        for q in self.readout:
            self._check_qubit(q)

    def _check_qubit(self, q: int):
        if not 0 <= q < self.num_qubits:
            raise ValueError(f"qubit {q} out of range for {self.num_qubits}-qubit circuit")

    @property
    def num_midmeasures(self) -> int:
        return sum(isinstance(op, MidMeasure) for op in self.ops)


@dataclass
class Statevector:
    """Dense complex amplitude vector of an n-qubit register."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ValueError(
                f"amplitude vector must have length {1 << self.num_qubits}, "
                f"got shape {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, num_qubits: int) -> "Statevector":
        """All-zeros basis state |0...0>."""
        amps = np.zeros(1 << num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class TrajectoryResult:
    """Shot-resolved output of :func:`run_trajectories`.

    `shot_values[s, j]` is the analytic Z expectation of readout qubit j on
    the collapsed final state of shot s; `estimates` is its mean over shots.
    `outcomes[s, b]` records classical bit b of shot s.
    """

    estimates: np.ndarray
    shot_values: np.ndarray
    outcomes: np.ndarray


# ---------------------------------------------------------------------------
# index caches (little-endian bit arithmetic)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _pair_indices(n: int, q: int):
    idx = np.arange(1 << n)
    i0 = idx[(idx >> q) & 1 == 0]
    i1 = i0 | (1 << q)
    i0.setflags(write=False)
    i1.setflags(write=False)
    return i0, i1


@lru_cache(maxsize=None)
def _controlled_pair_indices(n: int, control: int, target: int):
    idx = np.arange(1 << n)
    mask = ((idx >> control) & 1 == 1) & ((idx >> target) & 1 == 0)
    i10 = idx[mask]
    i11 = i10 | (1 << target)
    i10.setflags(write=False)
    i11.setflags(write=False)
    return i10, i11


@lru_cache(maxsize=None)
def _z_signs(n: int, q: int) -> np.ndarray:
    idx = np.arange(1 << n)
    signs = np.where((idx >> q) & 1 == 0, 1.0, -1.0)
    signs.setflags(write=False)
    return signs


@lru_cache(maxsize=None)
def _parity_signs(n: int, a: int, b: int) -> np.ndarray:
    # +1 where qubits a and b agree, -1 where they differ.
    idx = np.arange(1 << n)
    signs = np.where(((idx >> a) ^ (idx >> b)) & 1 == 0, 1.0, -1.0)
    signs.setflags(write=False)
    return signs


# ---------------------------------------------------------------------------
# gate kernels
# ---------------------------------------------------------------------------


def _half_angle(theta):
    """cos/sin of theta/2, shaped to broadcast over batch rows."""
    t = np.multiply(theta, 0.5)
    c, s = np.cos(t), np.sin(t)
    if np.ndim(c) == 1:
        c = c[:, None]
        s = s[:, None]
    return c, s


def _apply_kind(state: np.ndarray, n: int, kind: str, targets: tuple, theta=None):
    """Apply one gate in place to `state` of shape (rows, 2**n).

    `theta` is a scalar or a length-`rows` vector for rotation kinds.
    """
    if kind == "H":
        i0, i1 = _pair_indices(n, targets[0])
        a, b = state[:, i0], state[:, i1]
        state[:, i0] = (a + b) * _INV_SQRT2
        state[:, i1] = (a - b) * _INV_SQRT2
    elif kind == "X":
        i0, i1 = _pair_indices(n, targets[0])
        a = state[:, i0]
        state[:, i0] = state[:, i1]
        state[:, i1] = a
    elif kind == "RX":
        i0, i1 = _pair_indices(n, targets[0])
        c, s = _half_angle(theta)
        a, b = state[:, i0], state[:, i1]
        state[:, i0] = c * a - 1j * s * b
        state[:, i1] = c * b - 1j * s * a
    elif kind == "RY":
        i0, i1 = _pair_indices(n, targets[0])
        c, s = _half_angle(theta)
        a, b = state[:, i0], state[:, i1]
        state[:, i0] = c * a - s * b
        state[:, i1] = c * b + s * a
    elif kind == "RZ":
        i0, i1 = _pair_indices(n, targets[0])
        c, s = _half_angle(theta)
        state[:, i0] *= c - 1j * s
        state[:, i1] *= c + 1j * s
    elif kind == "RZZ":
        signs = _parity_signs(n, *targets)
        t = np.multiply(theta, 0.5)
        if np.ndim(t) == 1:
            t = t[:, None]
        state *= np.exp(-1j * t * signs)
    elif kind == "CNOT":
        i10, i11 = _controlled_pair_indices(n, *targets)
        a = state[:, i10]
        state[:, i10] = state[:, i11]
        state[:, i11] = a
    elif kind == "CY":
        i10, i11 = _controlled_pair_indices(n, *targets)
        a, b = state[:, i10], state[:, i11]
        state[:, i10] = -1j * b
        state[:, i11] = 1j * a
    elif kind == "CZ":
        _, i11 = _controlled_pair_indices(n, *targets)
        state[:, i11] *= -1.0
    elif kind == "CRX":
        i10, i11 = _controlled_pair_indices(n, *targets)
        c, s = _half_angle(theta)
        a, b = state[:, i10], state[:, i11]
        state[:, i10] = c * a - 1j * s * b
        state[:, i11] = c * b - 1j * s * a
    elif kind == "CRY":
        i10, i11 = _controlled_pair_indices(n, *targets)
        c, s = _half_angle(theta)
        a, b = state[:, i10], state[:, i11]
        state[:, i10] = c * a - s * b
        state[:, i11] = c * b + s * a
    elif kind == "CRZ":
        i10, i11 = _controlled_pair_indices(n, *targets)
        c, s = _half_angle(theta)
        state[:, i10] *= c - 1j * s
        state[:, i11] *= c + 1j * s
    else:  # pragma: no cover - GateOp validation makes this unreachable
        raise ValueError(f"unknown gate kind {kind!r}")


def _resolve_angle(op: GateOp, params: np.ndarray, inputs, shift=None):
    """Angle for one rotation op: scalar, or per-row vector for 2-D inputs."""
    if op.param_slot is not None:
        base = params[op.param_slot]
        return base if shift is None else base + shift
    if op.input_idx is not None:
        if inputs is None:
            raise ValueError("circuit has input-dependent angles; inputs are required")
        prod = inputs[..., op.input_idx[0]]
        for i in op.input_idx[1:]:
            prod = prod * inputs[..., i]
        return np.pi * prod
    return op.angle


def _check_params(circuit: Circuit, params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.num_params,):
        raise ValueError(
            f"circuit takes {circuit.num_params} parameters, got shape {params.shape}"
        )
    return params


def _check_inputs(circuit: Circuit, inputs):
    if circuit.num_inputs == 0:
        if inputs is not None and np.size(inputs):
            raise ValueError("circuit takes no inputs")
        return None
    if inputs is None:
        raise ValueError(f"circuit requires {circuit.num_inputs} inputs")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[-1] != circuit.num_inputs:
        raise ValueError(
            f"circuit takes {circuit.num_inputs} inputs, got shape {inputs.shape}"
        )
    if inputs.ndim not in (1, 2):
        raise ValueError("inputs must be a vector or a batch of vectors")
    if np.any(np.abs(inputs) > 1.0 + 1e-12):
        raise ValueError("inputs must be normalized to [-1, 1]")
    return inputs


# ---------------------------------------------------------------------------
# public single-state operations
# ---------------------------------------------------------------------------


def apply_gate(state: Statevector, gate: GateOp, params=()) -> Statevector:
    """Apply one gate to a statevector, returning a new statevector.

    Rotation gates draw their angle from `params[gate.param_slot]` or from
    the baked-in constant.  Input-dependent and conditioned gates cannot be
    applied in isolation.
    """
    n = state.num_qubits
    for q in gate.targets:
        if not 0 <= q < n:
            raise ValueError(f"target {q} out of range for {n}-qubit state")
    if gate.condition is not None:
        raise ValueError("conditioned gate needs a measurement record; use run_trajectories")
    theta = None
    if gate.kind in ROTATION_KINDS:
        if gate.param_slot is not None:
            params = np.asarray(params, dtype=float)
            if gate.param_slot >= params.size:
                raise ValueError(f"missing parameter for slot {gate.param_slot}")
            theta = float(params[gate.param_slot])
        elif gate.angle is not None:
            theta = float(gate.angle)
        else:
            raise ValueError("gate angle depends on unbound inputs; bind_inputs first")
    amps = state.amplitudes.copy()
    _apply_kind(amps.reshape(1, -1), n, gate.kind, gate.targets, theta)
    return Statevector(n, amps)


def expectation_z(state: Statevector, qubit: int) -> float:
    """Pauli-Z expectation of one qubit, in [-1, 1]."""
    if not 0 <= qubit < state.num_qubits:
        raise ValueError(f"qubit {qubit} out of range for {state.num_qubits}-qubit state")
    return float(state.probabilities() @ _z_signs(state.num_qubits, qubit))


def bind_inputs(circuit: Circuit, x) -> Circuit:
    """Bake input-dependent angles into constants, returning a closed circuit."""
    x = np.asarray(x, dtype=float)
    if x.shape != (circuit.num_inputs,):
        raise ValueError(f"expected {circuit.num_inputs} inputs, got shape {x.shape}")
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("inputs must be normalized to [-1, 1]")
    new_ops = []
    for op in circuit.ops:
        if isinstance(op, GateOp) and op.input_idx is not None:
            angle = math.pi * float(np.prod(x[list(op.input_idx)]))
            op = GateOp(op.kind, op.targets, angle=angle, condition=op.condition)
        new_ops.append(op)
    return Circuit(circuit.num_qubits, tuple(new_ops), circuit.num_params, 0, circuit.readout)


def param_ops(circuit: Circuit) -> tuple:
    """Parameterized gate occurrences in op order.

    The deferred rewrite maps these one-to-one (conditioned rotations become
    controlled rotations in place), so positions are stable across
    :func:`defer_measurements`.
    """
    return tuple(
        op for op in circuit.ops if isinstance(op, GateOp) and op.param_slot is not None
    )


# ---------------------------------------------------------------------------
# deferred-measurement rewriting
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def defer_measurements(circuit: Circuit) -> Circuit:
    """Rewrite mid-circuit measurements into controlled gates.

    Each gate conditioned on a recorded bit becomes the corresponding
    controlled gate with the measured qubit as quantum control.  Final
    readout expectations equal the outcome-averaged conditional expectations
    of the original circuit.  Circuits without measurements are returned
    unchanged.
    """
    if not any(isinstance(op, MidMeasure) for op in circuit.ops):
        if any(op.condition is not None for op in circuit.ops):
            raise ValueError("conditioned gate without any mid-circuit measurement")
        return circuit

    qubit_of_bit: dict[int, int] = {}
    measured: set[int] = set()
    new_ops = []
    for op in circuit.ops:
        if isinstance(op, MidMeasure):
            if op.qubit in measured:
                raise ValueError(f"qubit {op.qubit} measured twice; not supported")
            qubit_of_bit[op.classical_bit] = op.qubit
            measured.add(op.qubit)
            continue
        if op.condition is not None:
            control = qubit_of_bit[op.condition]
            new_kind = _CONTROLLED_FORM.get(op.kind)
            if new_kind is None:
                raise ValueError(
                    f"conditioned {op.kind} cannot be deferred; only RX/RY/RZ can"
                )
            target = op.targets[0]
            if target == control:
                raise ValueError(f"conditioned gate targets its own measured qubit {target}")
            if target in measured:
                raise ValueError(
                    f"conditioned gate targets already-measured qubit {target}"
                )
            new_ops.append(
                GateOp(
                    new_kind,
                    (control, target),
                    param_slot=op.param_slot,
                    input_idx=op.input_idx,
                    angle=op.angle,
                )
            )
            continue
        if measured and _touches_measured(op, measured):
            raise ValueError(
                f"{op.kind} on {op.targets} reuses a measured qubit; outside the"
                " deferred-measurement-valid class"
            )
        new_ops.append(op)
    return Circuit(
        circuit.num_qubits,
        tuple(new_ops),
        circuit.num_params,
        circuit.num_inputs,
        circuit.readout,
    )


def _touches_measured(op: GateOp, measured: set) -> bool:
    """True if `op` acts non-diagonally on an already-measured qubit."""
    if op.kind in _Z_DIAGONAL_KINDS:
        return False
    if op.kind in ("CNOT", "CY", "CRX", "CRY"):
        return op.targets[1] in measured  # control-only use commutes
    return op.targets[0] in measured


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def run_deferred_batch(circuit: Circuit, params, inputs=None, param_shifts=None) -> np.ndarray:
    """Exact Z expectations for a batch of independent evaluations.

    `inputs` may be one vector (shared by all rows) or a (rows, num_inputs)
    matrix.  `param_shifts`, when given, is a (rows, n_param_ops) matrix of
    per-row angle offsets added to the parameterized gate occurrences in op
    order (the parameter-shift rule's evaluation grid).  Returns an array of
    shape (rows, len(readout)).
    """
    circuit = defer_measurements(circuit)
    params = _check_params(circuit, params)
    inputs = _check_inputs(circuit, inputs)

    n_param_ops = len(param_ops(circuit))
    rows = 1
    if inputs is not None and inputs.ndim == 2:
        rows = inputs.shape[0]
    if param_shifts is not None:
        param_shifts = np.asarray(param_shifts, dtype=float)
        if param_shifts.ndim != 2 or param_shifts.shape[1] != n_param_ops:
            raise ValueError(
                f"param_shifts must have shape (rows, {n_param_ops}),"
                f" got {param_shifts.shape}"
            )
        if inputs is not None and inputs.ndim == 2 and param_shifts.shape[0] != rows:
            raise ValueError("inputs and param_shifts row counts differ")
        rows = param_shifts.shape[0] if rows == 1 else rows

    n = circuit.num_qubits
    state = np.zeros((rows, 1 << n), dtype=complex)
    state[:, 0] = 1.0

    pos = 0
    for op in circuit.ops:
        theta = None
        if op.kind in ROTATION_KINDS:
            shift = None
            if op.param_slot is not None and param_shifts is not None:
                shift = param_shifts[:, pos]
            theta = _resolve_angle(op, params, inputs, shift)
            if op.param_slot is not None:
                pos += 1
        _apply_kind(state, n, op.kind, op.targets, theta)

    probs = state.real**2 + state.imag**2
    out = np.empty((rows, len(circuit.readout)))
    for j, q in enumerate(circuit.readout):
        out[:, j] = probs @ _z_signs(n, q)
    return out


def run_deferred(circuit: Circuit, params, inputs=None) -> np.ndarray:
    """Deterministic exact execution: one Z expectation per readout qubit."""
    return run_deferred_batch(circuit, params, inputs)[0]


def run_trajectories(
    circuit: Circuit, params, shots: int, seed: int, inputs=None
) -> TrajectoryResult:
    """Stochastic execution sampling every mid-circuit measurement.

    Each shot collapses measured qubits by the Born rule, applies conditioned
    gates according to its recorded bits, and contributes the analytic Z
    expectation of its final state per readout qubit.  Deterministic for a
    fixed (circuit, params, seed).
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    params = _check_params(circuit, params)
    inputs = _check_inputs(circuit, inputs)
    if inputs is not None and inputs.ndim != 1:
        raise ValueError("run_trajectories takes a single input vector")

    rng = np.random.default_rng(seed)
    n = circuit.num_qubits
    state = np.zeros((shots, 1 << n), dtype=complex)
    state[:, 0] = 1.0
    n_bits = max(
        (op.classical_bit for op in circuit.ops if isinstance(op, MidMeasure)), default=-1
    ) + 1
    bits = np.zeros((shots, n_bits), dtype=np.uint8)

    for op in circuit.ops:
        if isinstance(op, MidMeasure):
            i0, i1 = _pair_indices(n, op.qubit)
            block = state[:, i1]
            p1 = (block.real**2 + block.imag**2).sum(axis=1)
            outcome = rng.random(shots) < p1
            chosen = np.where(outcome, p1, 1.0 - p1)
            if np.any(chosen < _MIN_BRANCH_PROB):
                raise ArithmeticError(
                    f"collapse onto (near-)zero-probability branch at qubit {op.qubit}"
                )
            state[np.ix_(outcome, i0)] = 0.0
            state[np.ix_(~outcome, i1)] = 0.0
            state /= np.sqrt(chosen)[:, None]
            bits[:, op.classical_bit] = outcome
            continue
        theta = None
        if op.kind in ROTATION_KINDS:
            theta = _resolve_angle(op, params, inputs, None)
        if op.condition is None:
            _apply_kind(state, n, op.kind, op.targets, theta)
        else:
            mask = bits[:, op.condition] == 1
            if np.any(mask):
                sub = state[mask]
                _apply_kind(sub, n, op.kind, op.targets, theta)
                state[mask] = sub

    probs = state.real**2 + state.imag**2
    shot_values = np.empty((shots, len(circuit.readout)))
    for j, q in enumerate(circuit.readout):
        shot_values[:, j] = probs @ _z_signs(n, q)
    return TrajectoryResult(shot_values.mean(axis=0), shot_values, bits)
