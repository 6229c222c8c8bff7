"""Time evolution of center-of-mass observables, quantum and classical.

Quantum propagation runs in the Schrodinger picture (expectations are
identical to the Heisenberg-picture statement, which is recovered through
:func:`ehrenfest_residual`): exact eigendecomposition for total dimensions up
to 2048, classic fixed-step 4th-order integration above that.  Norm drift is
measured, never corrected -- silent renormalization would hide integrator
failure.  The classical twin integrates Hamilton's equations
xdot = p/M, pdot = -U'(x) with the same 4th-order stepper.

When the Hamiltonian depends only on CM variables the CM sector factorizes
exactly, so ``effective_cm_system`` (a single mode of mass N*mbar) carries
the identical CM dynamics at a fraction of the tensor-product cost; this is
the intended track for large-N scaling runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .hilbert_rep import (
    DEFAULT_AMPLITUDE_CAP,
    ExcessiveTruncationError,
    ExpectationRecord,
    ModeSpec,
    SparseOperator,
    StateVector,
    cm_expectation_record,
    cm_operators_numeric,
    coherent_state,
    embed,
    expectation,
    position_op,
    truncation_weight,
)

EIG_DIMENSION_LIMIT = 2048
NORM_DRIFT_LIMIT = 1e-8
EVOLUTION_GATE = 1e-6


class NormDriftError(RuntimeError):
    """The propagated state's norm drifted beyond the accepted bound."""


class TimeGridMismatchError(ValueError):
    """Two trajectories were compared on different sample times."""


@dataclass(frozen=True)
class PolynomialPotential:
    """Polynomial U(x) with finite support, degree -> coefficient.

    Coefficients may be exact rationals or floats; evaluation preserves
    exactness when both the coefficients and the argument are rational.
    """

    terms: tuple

    def __post_init__(self):
        clean = {}
        for degree, coeff in self.terms:
            if degree < 0 or degree != int(degree):
                raise ValueError("degrees must be nonnegative integers")
            if coeff != 0:
                clean[int(degree)] = clean.get(int(degree), 0) + coeff
        object.__setattr__(
            self, "terms", tuple(sorted((k, c) for k, c in clean.items() if c != 0))
        )

    @classmethod
    def from_coeffs(cls, coeffs) -> "PolynomialPotential":
        return cls(terms=tuple(coeffs.items()))

    @classmethod
    def zero(cls) -> "PolynomialPotential":
        return cls(terms=())

    @property
    def coeffs(self) -> dict:
        return dict(self.terms)

    @property
    def degree(self) -> int:
        return max((k for k, _ in self.terms), default=0)

    @property
    def is_quadratic(self) -> bool:
        return self.degree <= 2

    def evaluate(self, x):
        return sum(c * x**k for k, c in self.terms) if self.terms else 0 * x

    def derivative(self) -> "PolynomialPotential":
        return PolynomialPotential(
            terms=tuple((k - 1, k * c) for k, c in self.terms if k >= 1)
        )


@dataclass(frozen=True)
class HamiltonianSpec:
    """H = P_TOT^2 / 2M + U(X_CM), optionally plus a relative trap.

    ``internal_trap_omega`` adds sum_i (m_i omega^2 / 2) (X_i - X_CM)^2,
    confining the relative motion without touching the CM sector.  Without
    it H commutes with every function of P_TOT... and of X_CM only when U
    vanishes.
    """

    modes: tuple
    potential: PolynomialPotential
    internal_trap_omega: float | None = None

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("need at least one mode")
        hbars = {m.hbar for m in modes}
        if len(hbars) != 1:
            raise ValueError("all modes must share the same hbar")
        if self.internal_trap_omega is not None and self.internal_trap_omega <= 0:
            raise ValueError("internal_trap_omega must be positive when set")
        object.__setattr__(self, "modes", modes)

    @property
    def total_mass(self) -> float:
        return sum(m.mass for m in self.modes)

    @property
    def hbar(self) -> float:
        return self.modes[0].hbar


def build_hamiltonian(spec: HamiltonianSpec,
                      max_amplitudes: int = DEFAULT_AMPLITUDE_CAP) -> SparseOperator:
    """Assemble the Hamiltonian matrix; Hermitian within 1e-12 by construction."""
    x_cm, _, p_tot = cm_operators_numeric(spec.modes, max_amplitudes=max_amplitudes)
    total_mass = spec.total_mass
    h = (p_tot.matrix @ p_tot.matrix) / (2.0 * total_mass)
    if spec.potential.terms:
        power = sp.identity(x_cm.dim, format="csr", dtype=np.complex128)
        powers = {0: power}
        for k in range(1, spec.potential.degree + 1):
            power = power @ x_cm.matrix
            powers[k] = power
        for k, c in spec.potential.terms:
            h = h + float(c) * powers[k]
    if spec.internal_trap_omega is not None:
        w2 = spec.internal_trap_omega**2
        for i, mode in enumerate(spec.modes):
            rel = embed(position_op(mode), i, spec.modes).matrix - x_cm.matrix
            h = h + (0.5 * mode.mass * w2) * (rel @ rel)
    h = (h + h.getH()) * 0.5  # scrub rounding asymmetry from the sparse products
    return SparseOperator(x_cm.mode_dims, h, hermitian=True)


@dataclass(frozen=True)
class ClassicalState:
    x: float
    p: float


def _step_count(t_final: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError("t_final must be an integer multiple of dt")
    return n


def evolve_classical(potential: PolynomialPotential, total_mass: float,
                     x0: float, p0: float, t_final: float, dt: float):
    """Integrate Hamilton's equations with classic 4th-order steps.

    Returns ``[(t, ClassicalState), ...]`` including t = 0 and t = t_final;
    when t_final is not a whole number of steps the last step is shortened.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    force = potential.derivative()
    inv_m = 1.0 / total_mass

    def rhs(x, p):
        return p * inv_m, -float(force.evaluate(x))

    def rk4_step(x, p, h):
        dx1, dp1 = rhs(x, p)
        dx2, dp2 = rhs(x + 0.5 * h * dx1, p + 0.5 * h * dp1)
        dx3, dp3 = rhs(x + 0.5 * h * dx2, p + 0.5 * h * dp2)
        dx4, dp4 = rhs(x + h * dx3, p + h * dp3)
        return (
            x + h / 6.0 * (dx1 + 2.0 * dx2 + 2.0 * dx3 + dx4),
            p + h / 6.0 * (dp1 + 2.0 * dp2 + 2.0 * dp3 + dp4),
        )

    n_full = int(round(t_final / dt))
    if abs(n_full * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        n_full = int(t_final / dt)
    out = [(0.0, ClassicalState(float(x0), float(p0)))]
    x, p = float(x0), float(p0)
    for k in range(n_full):
        x, p = rk4_step(x, p, dt)
        out.append(((k + 1) * dt, ClassicalState(x, p)))
    remainder = t_final - n_full * dt
    if remainder > 1e-12 * max(1.0, abs(t_final)):
        x, p = rk4_step(x, p, remainder)
        out.append((t_final, ClassicalState(x, p)))
    return out


@dataclass(frozen=True)
class Trajectory:
    """Sampled quantum run: times, CM records, energy/norm bookkeeping, states."""

    times: tuple
    records: tuple
    energies: tuple
    norms: tuple
    states: tuple
    hbar: float
    total_mass: float

    @property
    def x_cm(self) -> np.ndarray:
        return np.array([r.x_cm for r in self.records])

    @property
    def v_cm(self) -> np.ndarray:
        return np.array([r.v_cm for r in self.records])

    @property
    def dx(self) -> np.ndarray:
        return np.array([r.dx for r in self.records])

    @property
    def dv(self) -> np.ndarray:
        return np.array([r.dv for r in self.records])

    @property
    def norm_drift(self) -> float:
        return max(abs(n - 1.0) for n in self.norms)

    @property
    def energy_drift(self) -> float:
        """Maximum relative drift of <H> over the run."""
        e0 = self.energies[0]
        scale = max(abs(e0), 1e-30)
        return max(abs(e - e0) for e in self.energies) / scale


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV serialization: fixed header, 12 significant digits, LF endings."""
    lines = ["t,x_cm,v_cm,dx,dv,energy,norm,trunc_weight"]
    for t, r, e, n in zip(traj.times, traj.records, traj.energies, traj.norms):
        fields = (t, r.x_cm, r.v_cm, r.dx, r.dv, e, n, r.truncation_weight)
        lines.append(",".join(f"{v:.12g}" for v in fields))
    return "\n".join(lines) + "\n"


def evolve_quantum(psi0: StateVector, spec: HamiltonianSpec, t_final: float,
                   dt: float, sample_stride: int = 1, method: str | None = None,
                   gate: float = EVOLUTION_GATE, hamiltonian: SparseOperator | None = None,
                   max_amplitudes: int = DEFAULT_AMPLITUDE_CAP) -> Trajectory:
    """Propagate psi0 under the given Hamiltonian, sampling CM observables.

    Samples are taken every ``sample_stride`` steps of size dt (t_final must
    be a multiple of ``sample_stride * dt``).  ``method`` forces "eig" or
    "rk4"; by default eigendecomposition is used up to total dimension 2048.
    Raises ExcessiveTruncationError when a sample exceeds the truncation gate
    and NormDriftError when |norm - 1| reaches 1e-8 (never renormalizes).
    """
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    n_steps = _step_count(t_final, dt)
    if n_steps % sample_stride:
        raise ValueError("t_final/dt must be a multiple of sample_stride")
    h = hamiltonian if hamiltonian is not None else build_hamiltonian(
        spec, max_amplitudes=max_amplitudes
    )
    ops = cm_operators_numeric(spec.modes, max_amplitudes=max_amplitudes)
    if psi0.mode_dims != h.mode_dims:
        raise ValueError("initial state does not match the Hamiltonian's modes")
    if method is None:
        method = "eig" if h.dim <= EIG_DIMENSION_LIMIT else "rk4"
    if method not in ("eig", "rk4"):
        raise ValueError("method must be 'eig' or 'rk4'")

    hbar = spec.hbar
    sample_times = [k * dt for k in range(0, n_steps + 1, sample_stride)]

    if method == "eig":
        evals, evecs = scipy.linalg.eigh(h.to_dense())
        coeffs = evecs.conj().T @ psi0.amplitudes
        sampled = [
            evecs @ (np.exp(-1j * evals * t / hbar) * coeffs) for t in sample_times
        ]
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            generator = h.matrix * (-1j / hbar)
            psi = psi0.amplitudes.copy()
            sampled = [psi.copy()]
            for k in range(n_steps):
                k1 = generator @ psi
                k2 = generator @ (psi + 0.5 * dt * k1)
                k3 = generator @ (psi + 0.5 * dt * k2)
                k4 = generator @ (psi + dt * k3)
                psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if (k + 1) % sample_stride == 0:
                    sampled.append(psi.copy())

    states, records, energies, norms = [], [], [], []
    for t, raw in zip(sample_times, sampled):
        nrm = float(np.linalg.norm(raw))
        if not abs(nrm - 1.0) < NORM_DRIFT_LIMIT:  # NaN-safe comparison
            raise NormDriftError(f"norm drifted to {nrm} at t = {t}")
        state = StateVector(psi0.mode_dims, raw)
        weight = truncation_weight(state)
        if weight > gate:
            raise ExcessiveTruncationError(
                f"truncation weight {weight:.3g} exceeds the gate {gate:.3g} at t = {t}"
            )
        states.append(state)
        records.append(cm_expectation_record(state, spec.modes, ops=ops))
        energies.append(float(expectation(h, state).real))
        norms.append(nrm)

    return Trajectory(
        times=tuple(sample_times),
        records=tuple(records),
        energies=tuple(energies),
        norms=tuple(norms),
        states=tuple(states),
        hbar=hbar,
        total_mass=spec.total_mass,
    )


@dataclass(frozen=True)
class EhrenfestReport:
    """Worst central-difference violation of d<f>/dt = <[f, H]>/(i hbar)."""

    max_residual: float
    sample_spacing: float
    order_constant: float  # max_residual / spacing^2, the measured curvature scale


def ehrenfest_residual(traj: Trajectory, h: SparseOperator,
                       observable: SparseOperator) -> EhrenfestReport:
    if len(traj.times) < 3:
        raise ValueError("need at least three samples")
    spacings = np.diff(traj.times)
    if np.ptp(spacings) > 1e-9 * max(spacings):
        raise ValueError("samples must be uniformly spaced")
    delta = float(spacings[0])
    means = [expectation(observable, s).real for s in traj.states]
    commutator_rate = [
        (expectation_product(observable, h, s) / (1j * traj.hbar)).real
        for s in traj.states
    ]
    worst = 0.0
    for k in range(1, len(means) - 1):
        lhs = (means[k + 1] - means[k - 1]) / (2.0 * delta)
        worst = max(worst, abs(lhs - commutator_rate[k]))
    return EhrenfestReport(
        max_residual=worst,
        sample_spacing=delta,
        order_constant=worst / delta**2 if delta > 0 else 0.0,
    )


def expectation_product(a: SparseOperator, b: SparseOperator, psi: StateVector) -> complex:
    """<psi|[a, b]|psi> without forming the commutator matrix."""
    a_psi = a.apply(psi)
    b_psi = b.apply(psi)
    if a.hermitian and b.hermitian:
        ab = np.vdot(a_psi, b_psi)
        return complex(ab - np.conjugate(ab))
    return complex(
        np.vdot(psi.amplitudes, a.matrix @ b_psi) - np.vdot(psi.amplitudes, b.matrix @ a_psi)
    )


@dataclass(frozen=True)
class DeviationReport:
    """Quantum-expectation vs classical-trajectory distances."""

    max_x_deviation: float
    max_v_deviation: float
    final_x_deviation: float
    final_v_deviation: float


def compare_trajectories(traj: Trajectory, classical) -> DeviationReport:
    """Deviations |<X_CM>(t) - x_c(t)| and |<V_CM>(t) - p_c(t)/M| on shared times.

    The classical list may be sampled more finely; every quantum sample time
    must appear in it (within 1e-9) or TimeGridMismatchError is raised.
    """
    inv_m = 1.0 / traj.total_mass
    idx = 0
    dx_list, dv_list = [], []
    for t, rec in zip(traj.times, traj.records):
        while idx < len(classical) and classical[idx][0] < t - 1e-9:
            idx += 1
        if idx >= len(classical) or abs(classical[idx][0] - t) > 1e-9:
            raise TimeGridMismatchError(f"no classical sample at t = {t}")
        state = classical[idx][1]
        dx_list.append(abs(rec.x_cm - state.x))
        dv_list.append(abs(rec.v_cm - state.p * inv_m))
    return DeviationReport(
        max_x_deviation=max(dx_list),
        max_v_deviation=max(dv_list),
        final_x_deviation=dx_list[-1],
        final_v_deviation=dv_list[-1],
    )


def effective_cm_system(n: int, mbar: float, basis_omega: float = 1.0,
                        dim: int = 64, hbar: float = 1.0):
    """Single mode of mass N*mbar: the exact CM sector for CM-only Hamiltonians."""
    if n < 1:
        raise ValueError("need at least one particle")
    return [ModeSpec(mass=n * float(mbar), omega=basis_omega, dim=dim, hbar=hbar)]


def free_width_analytic(n: int, mbar: float, t: float, omega: float = 1.0,
                        hbar: float = 1.0) -> float:
    """Free-packet width of the mass-N*mbar ground Gaussian: dx(t)^2 = dx0^2 + (dv0 t)^2."""
    total_mass = n * mbar
    return math.sqrt(hbar / (2.0 * total_mass * omega) * (1.0 + (omega * t) ** 2))


def gaussian_spreading(n: int, mbar: float, t: float, omega: float = 1.0,
                       dim: int = 64, hbar: float = 1.0) -> float:
    """Measured free-evolution width Dx_CM(t) of the effective CM ground packet."""
    modes = effective_cm_system(n, mbar, basis_omega=omega, dim=dim, hbar=hbar)
    psi0 = coherent_state(modes[0], 0.0, 0.0)
    spec = HamiltonianSpec(modes=tuple(modes), potential=PolynomialPotential.zero())
    if t == 0:
        return cm_expectation_record(psi0, modes).dx
    traj = evolve_quantum(psi0, spec, t_final=t, dt=t, sample_stride=1)
    return traj.records[-1].dx
