"""Truncated-oscillator-basis representation of many-particle observables.

Each particle is a mode with a mass, a basis frequency omega (an arbitrary
basis parameter, not dynamics -- default 1) and a truncation dimension d.
Position and momentum are the standard tridiagonal ladder combinations; the
only truncation artifact is the known defect of [X, P] confined to the top
basis level, so "occupation of the top level" is a precise validity gate.

Tensor-product operators use the convention that mode 0 is the
slowest-varying factor of the composite index, i.e. ``embed(op, 0, ...)`` is
the leading Kronecker factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .ccr_algebra import NCPolynomial

DEFAULT_AMPLITUDE_CAP = 2**20
HERMITIAN_TOLERANCE = 1e-12
COHERENT_GATE = 1e-6


class ExcessiveTruncationError(RuntimeError):
    """A state puts too much probability on a mode's top basis level."""


class DimensionCapError(ValueError):
    """A requested composite dimension exceeds the configured amplitude cap."""


def _check_cap(mode_dims, max_amplitudes):
    total = 1
    for d in mode_dims:
        total *= d
    if total > max_amplitudes:
        raise DimensionCapError(
            f"composite dimension {total} exceeds the cap of {max_amplitudes} amplitudes"
        )
    return total


@dataclass(frozen=True)
class ModeSpec:
    """One oscillator mode: physical mass, basis frequency, truncation, hbar."""

    mass: float
    omega: float = 1.0
    dim: int = 16
    hbar: float = 1.0

    def __post_init__(self):
        if self.mass <= 0 or self.omega <= 0 or self.hbar <= 0:
            raise ValueError("mass, omega and hbar must be positive")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")


class SparseOperator:
    """Sparse complex matrix on a tensor product of modes."""

    __slots__ = ("mode_dims", "matrix", "hermitian")

    def __init__(self, mode_dims, matrix, hermitian=False):
        mode_dims = tuple(int(d) for d in mode_dims)
        matrix = sp.csr_matrix(matrix, dtype=np.complex128)
        total = math.prod(mode_dims)
        if matrix.shape != (total, total):
            raise ValueError(f"matrix shape {matrix.shape} does not match dims {mode_dims}")
        if hermitian:
            defect = (matrix - matrix.getH())
            if defect.nnz and abs(defect).max() > HERMITIAN_TOLERANCE:
                raise ValueError("operator marked Hermitian is not (within 1e-12)")
        object.__setattr__(self, "mode_dims", mode_dims)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "hermitian", bool(hermitian))

    def __setattr__(self, name, value):
        raise AttributeError("SparseOperator is immutable")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def _check_dims(self, other):
        if self.mode_dims != other.mode_dims:
            raise ValueError("operators act on different mode layouts")

    def __add__(self, other):
        self._check_dims(other)
        return SparseOperator(
            self.mode_dims, self.matrix + other.matrix,
            hermitian=self.hermitian and other.hermitian,
        )

    def __sub__(self, other):
        self._check_dims(other)
        return SparseOperator(
            self.mode_dims, self.matrix - other.matrix,
            hermitian=self.hermitian and other.hermitian,
        )

    def __mul__(self, scalar):
        if not isinstance(scalar, (int, float, complex)):
            return NotImplemented
        herm = self.hermitian and complex(scalar).imag == 0
        return SparseOperator(self.mode_dims, self.matrix * scalar, hermitian=herm)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __neg__(self):
        return self * (-1)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            self._check_dims(other)
            return SparseOperator(self.mode_dims, self.matrix @ other.matrix)
        return NotImplemented

    def dagger(self):
        return SparseOperator(self.mode_dims, self.matrix.getH(), hermitian=self.hermitian)

    def apply(self, psi: "StateVector") -> np.ndarray:
        if psi.mode_dims != self.mode_dims:
            raise ValueError("state and operator act on different mode layouts")
        return self.matrix @ psi.amplitudes

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def __repr__(self):
        return f"<SparseOperator dims={self.mode_dims} nnz={self.matrix.nnz}>"


def commutator_op(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    return a @ b - b @ a


class StateVector:
    """Dense normalized amplitude vector on a tensor product of modes."""

    __slots__ = ("mode_dims", "amplitudes")

    def __init__(self, mode_dims, amplitudes):
        mode_dims = tuple(int(d) for d in mode_dims)
        amplitudes = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        if amplitudes.size != math.prod(mode_dims):
            raise ValueError("amplitude count does not match mode dimensions")
        nrm = float(np.linalg.norm(amplitudes))
        # loose sanity check only; evolution gates enforce the tight 1e-8 drift bound
        if not abs(nrm - 1.0) <= 1e-6:  # NaN-safe comparison
            raise ValueError(f"state is not normalized (norm {nrm})")
        object.__setattr__(self, "mode_dims", mode_dims)
        object.__setattr__(self, "amplitudes", amplitudes)

    def __setattr__(self, name, value):
        raise AttributeError("StateVector is immutable")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def __repr__(self):
        return f"<StateVector dims={self.mode_dims} norm={self.norm():.12f}>"


# ---------------------------------------------------------------------------
# Single-mode operators
# ---------------------------------------------------------------------------


def ladder(d: int) -> SparseOperator:
    """Lowering operator on a d-level mode: a|n> = sqrt(n)|n-1>."""
    if d < 2:
        raise ValueError("dim must be at least 2")
    data = np.sqrt(np.arange(1, d))
    return SparseOperator((d,), sp.diags(data, offsets=1))


def position_op(mode: ModeSpec) -> SparseOperator:
    """X = sqrt(hbar/2 m omega) (a + a†); Hermitian, tridiagonal."""
    a = ladder(mode.dim).matrix
    scale = math.sqrt(mode.hbar / (2.0 * mode.mass * mode.omega))
    return SparseOperator((mode.dim,), scale * (a + a.getH()), hermitian=True)


def momentum_op(mode: ModeSpec) -> SparseOperator:
    """P = i sqrt(m hbar omega / 2) (a† - a); Hermitian, tridiagonal."""
    a = ladder(mode.dim).matrix
    scale = math.sqrt(mode.mass * mode.hbar * mode.omega / 2.0)
    return SparseOperator((mode.dim,), 1j * scale * (a.getH() - a), hermitian=True)


def identity_op(mode_dims) -> SparseOperator:
    total = math.prod(tuple(mode_dims))
    return SparseOperator(tuple(mode_dims), sp.identity(total, format="csr"), hermitian=True)


# ---------------------------------------------------------------------------
# Tensor embedding and CM observables
# ---------------------------------------------------------------------------


def embed(op: SparseOperator, mode_index: int, system,
          max_amplitudes: int = DEFAULT_AMPLITUDE_CAP) -> SparseOperator:
    """Extend a single-mode operator by identities on every other mode."""
    dims = tuple(m.dim for m in system)
    if not 0 <= mode_index < len(dims):
        raise ValueError(f"mode index {mode_index} out of range")
    if op.mode_dims != (dims[mode_index],):
        raise ValueError("operator dimension does not match the target mode")
    _check_cap(dims, max_amplitudes)
    left = math.prod(dims[:mode_index])
    right = math.prod(dims[mode_index + 1:])
    matrix = op.matrix
    if left > 1:
        matrix = sp.kron(sp.identity(left), matrix, format="csr")
    if right > 1:
        matrix = sp.kron(matrix, sp.identity(right), format="csr")
    return SparseOperator(dims, matrix, hermitian=op.hermitian)


def cm_operators_numeric(system, max_amplitudes: int = DEFAULT_AMPLITUDE_CAP):
    """(X_CM, V_CM, P_TOT) on the tensor product of the given modes."""
    system = list(system)
    if not system:
        raise ValueError("need at least one mode")
    total_mass = sum(m.mass for m in system)
    dims = tuple(m.dim for m in system)
    size = _check_cap(dims, max_amplitudes)
    x_sum = sp.csr_matrix((size, size), dtype=np.complex128)
    p_sum = sp.csr_matrix((size, size), dtype=np.complex128)
    for k, mode in enumerate(system):
        x_sum = x_sum + (mode.mass / total_mass) * embed(position_op(mode), k, system).matrix
        p_sum = p_sum + embed(momentum_op(mode), k, system).matrix
    x_cm = SparseOperator(dims, x_sum, hermitian=True)
    p_tot = SparseOperator(dims, p_sum, hermitian=True)
    v_cm = SparseOperator(dims, p_sum / total_mass, hermitian=True)
    return x_cm, v_cm, p_tot


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


def basis_state(d: int, n: int = 0) -> StateVector:
    amps = np.zeros(d, dtype=np.complex128)
    amps[n] = 1.0
    return StateVector((d,), amps)


def coherent_state(mode: ModeSpec, x0: float, p0: float) -> StateVector:
    """Minimal-uncertainty state with <X> = x0 and <P> = p0, renormalized.

    alpha = sqrt(m omega / 2 hbar) x0 + i p0 / sqrt(2 m hbar omega).  Raises
    ExcessiveTruncationError when the truncated state keeps more than 1e-6
    of its probability on the top basis level.
    """
    alpha = (
        math.sqrt(mode.mass * mode.omega / (2.0 * mode.hbar)) * x0
        + 1j * p0 / math.sqrt(2.0 * mode.mass * mode.hbar * mode.omega)
    )
    n = np.arange(mode.dim)
    if alpha == 0:
        amps = np.zeros(mode.dim, dtype=np.complex128)
        amps[0] = 1.0
    else:
        # work in log magnitude to survive large |alpha| without overflow
        log_mag = n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1.0)
        log_mag -= log_mag.max()
        amps = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
        amps /= np.linalg.norm(amps)
    top_weight = float(abs(amps[-1]) ** 2)
    if top_weight >= COHERENT_GATE:
        raise ExcessiveTruncationError(
            f"coherent state (|alpha|^2 = {abs(alpha) ** 2:.3g}) keeps weight "
            f"{top_weight:.3g} on the top of a {mode.dim}-level basis"
        )
    return StateVector((mode.dim,), amps)


def product_state(states, max_amplitudes: int = DEFAULT_AMPLITUDE_CAP) -> StateVector:
    """Tensor product of per-mode states, normalized."""
    states = list(states)
    if not states:
        raise ValueError("need at least one factor")
    dims = tuple(d for s in states for d in s.mode_dims)
    _check_cap(dims, max_amplitudes)
    amps = states[0].amplitudes
    for s in states[1:]:
        amps = np.kron(amps, s.amplitudes)
    amps = amps / np.linalg.norm(amps)
    return StateVector(dims, amps)


def ground_product(system) -> StateVector:
    """|0,...,0> on the given modes."""
    return product_state([basis_state(m.dim) for m in system])


def coherent_product(system, x0s, p0s) -> StateVector:
    return product_state(
        [coherent_state(m, x, p) for m, x, p in zip(system, x0s, p0s, strict=True)]
    )


# ---------------------------------------------------------------------------
# Expectations and validity gates
# ---------------------------------------------------------------------------


def expectation(op: SparseOperator, psi: StateVector) -> complex:
    return complex(np.vdot(psi.amplitudes, op.apply(psi)))


def variance(op: SparseOperator, psi: StateVector) -> float:
    """<op^2> - <op>^2 for a Hermitian operator, computed as ||(op - <op>)psi||^2."""
    if not op.hermitian:
        raise ValueError("variance requires a Hermitian operator")
    applied = op.apply(psi)
    mean = np.vdot(psi.amplitudes, applied)
    centered = applied - mean * psi.amplitudes
    return float(np.real(np.vdot(centered, centered)))


def uncertainty_product(a: SparseOperator, b: SparseOperator, psi: StateVector) -> float:
    return math.sqrt(variance(a, psi)) * math.sqrt(variance(b, psi))


def truncation_weight(psi: StateVector) -> float:
    """Maximum over modes of the probability of that mode's top basis level."""
    probs = np.abs(psi.amplitudes.reshape(psi.mode_dims)) ** 2
    worst = 0.0
    for axis, d in enumerate(psi.mode_dims):
        marginal = probs.sum(axis=tuple(i for i in range(len(psi.mode_dims)) if i != axis))
        worst = max(worst, float(marginal[d - 1]))
    return worst


def _gate_check(psi, gate):
    weight = truncation_weight(psi)
    if weight > gate:
        raise ExcessiveTruncationError(
            f"truncation weight {weight:.3g} exceeds the gate {gate:.3g}"
        )
    return weight


def commutator_expectation(psi: StateVector, system, gate: float = 1e-12,
                           ops=None) -> complex:
    """<psi|[X_CM, V_CM]|psi>; equals i*hbar/(N*mbar) on gate-compliant states."""
    _gate_check(psi, gate)
    x_cm, v_cm, _ = ops if ops is not None else cm_operators_numeric(system)
    xv = np.vdot(x_cm.apply(psi), v_cm.apply(psi))  # <X psi|V psi> = <psi|X V|psi>
    return complex(xv - np.conjugate(xv))


def factorization_residual(psi: StateVector, system, gate: float = 1e-12,
                           ops=None) -> float:
    """|<X_CM V_CM> - <X_CM><V_CM>| -- the ordering cost of factorizing expectations."""
    _gate_check(psi, gate)
    x_cm, v_cm, _ = ops if ops is not None else cm_operators_numeric(system)
    x_psi = x_cm.apply(psi)
    v_psi = v_cm.apply(psi)
    xv = np.vdot(x_psi, v_psi)
    x_mean = np.vdot(psi.amplitudes, x_psi)
    v_mean = np.vdot(psi.amplitudes, v_psi)
    return float(abs(xv - x_mean * v_mean))


@dataclass(frozen=True)
class ExpectationRecord:
    """CM observables of one state: means, widths, commutator and gates."""

    x_cm: float
    v_cm: float
    dx: float
    dv: float
    commutator_expectation: complex
    factorization_residual: float
    truncation_weight: float


def cm_expectation_record(psi: StateVector, system, ops=None) -> ExpectationRecord:
    x_cm, v_cm, _ = ops if ops is not None else cm_operators_numeric(system)
    x_psi = x_cm.apply(psi)
    v_psi = v_cm.apply(psi)
    x_mean = np.vdot(psi.amplitudes, x_psi)
    v_mean = np.vdot(psi.amplitudes, v_psi)
    dx2 = np.real(np.vdot(x_psi - x_mean * psi.amplitudes, x_psi - x_mean * psi.amplitudes))
    dv2 = np.real(np.vdot(v_psi - v_mean * psi.amplitudes, v_psi - v_mean * psi.amplitudes))
    xv = np.vdot(x_psi, v_psi)
    return ExpectationRecord(
        x_cm=float(np.real(x_mean)),
        v_cm=float(np.real(v_mean)),
        dx=math.sqrt(max(float(dx2), 0.0)),
        dv=math.sqrt(max(float(dv2), 0.0)),
        commutator_expectation=complex(xv - np.conjugate(xv)),
        factorization_residual=float(abs(xv - x_mean * v_mean)),
        truncation_weight=truncation_weight(psi),
    )


# ---------------------------------------------------------------------------
# Bridge to the symbolic algebra (matrix oracle)
# ---------------------------------------------------------------------------


def cm_pair_ops(eps: float, dim: int, omega: float = 1.0, hbar: float = 1.0):
    """Single-mode (X, V) matrices with [X, V] = i*hbar*eps away from the top level.

    Realized as a mode of mass 1/eps with V = eps * P, exactly the effective
    center-of-mass mode of total mass 1/eps.
    """
    mode = ModeSpec(mass=1.0 / eps, omega=omega, dim=dim, hbar=hbar)
    x = position_op(mode)
    v = momentum_op(mode) * eps
    return x, v


def nc_matrix(poly: NCPolynomial, pair_ops, hbar: float, eps: float,
              mode_dims=None) -> SparseOperator:
    """Numeric evaluation of a normal-ordered polynomial.

    ``pair_ops[k]`` supplies the (X_k, V_k) matrices, all on the same mode
    layout; hbar and eps substitute the formal exponents.  Term order follows
    the normal-ordered representation, so this is the faithful matrix image
    of the symbolic element.
    """
    pair_ops = list(pair_ops)
    if len(pair_ops) != poly.algebra.n_pairs:
        raise ValueError("need one (X, V) operator pair per algebra pair")
    if mode_dims is None:
        mode_dims = pair_ops[0][0].mode_dims
    size = math.prod(mode_dims)
    total = sp.csr_matrix((size, size), dtype=np.complex128)
    for mono, coeff in poly.terms.items():
        scalar = coeff.to_complex() * hbar**mono.hbar_exp * eps**mono.eps_exp
        term = sp.identity(size, format="csr", dtype=np.complex128)
        for k, x_exp, v_exp in mono.pairs:
            x_op, v_op = pair_ops[k]
            for _ in range(x_exp):
                term = term @ x_op.matrix
            for _ in range(v_exp):
                term = term @ v_op.matrix
        total = total + scalar * term
    return SparseOperator(mode_dims, total)
