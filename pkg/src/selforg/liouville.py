"""Joint-space Hamiltonian and the dissipative evolution generator.

Everything is expressed in recoil units: energies and rates in units of the
recoil frequency, times in inverse recoils, hbar = 1.  The Hamiltonian in the
frame rotating at the pump frequency is

    H = -delta_c a+a + c+ K c + eta (a + a+) c+ C_M c
        + (u0/2) a+a c+ (1 + C_2M) c

and the field decays at rate 2*kappa through the single jump operator
sqrt(2*kappa) a:

    drho/dt = -i [H, rho] + kappa (2 a rho a+ - a+a rho - rho a+a).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import expm

from .modes import BasisSet, COSINE, ModeIndex, SINE, Statistics
from .operators import (
    JointOperators,
    JointSpace,
    bilinear_many_body,
    joint_operators,
)


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of one run (recoil units)."""

    N: int
    statistics: Statistics
    n_c: int
    n_ph: int
    M: int
    eta: float
    delta_c: float
    u0: float
    kappa: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.n_c < 1:
            raise ValueError(f"n_c must be >= 1, got {self.n_c}")
        if self.n_ph < 1:
            raise ValueError(f"n_ph must be >= 1, got {self.n_ph}")
        if not 1 <= self.M <= self.n_c:
            raise ValueError(f"need 1 <= M <= n_c, got M={self.M}, n_c={self.n_c}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")

    @property
    def delta_ratio(self) -> float:
        return 1.0 / self.M


def shifted_detuning(params: SystemParams) -> float:
    """Detuning measured from the mean dispersive shift, delta_c - N*u0/2.

    A labeling convention for reports and phase-diagram axes only; it never
    enters the dynamics.
    """
    return params.delta_c - params.N * params.u0 / 2.0


@dataclass(eq=False)
class Liouvillian:
    """Precompiled generator of the dissipative joint-space evolution."""

    params: SystemParams
    space: JointSpace
    hamiltonian: sparse.csr_matrix
    jump: sparse.csr_matrix           # sqrt(2 kappa) a
    kappa: float
    ops: JointOperators
    # H - i*kappa*a+a and its adjoint; with these the master equation needs
    # only four sparse-dense products per application.
    _h_eff: sparse.csr_matrix = None
    _h_eff_adj: sparse.csr_matrix = None

    @property
    def dim(self) -> int:
        return self.space.dim


def build_hamiltonian(params: SystemParams, space: JointSpace) -> Liouvillian:
    """Assemble H and the decay channel for the given parameters and space.

    The constituent operators are cached per space, so sweeping scalar
    parameters rebuilds only the weighted sum.
    """
    basis = space.particle_basis
    if basis.mode_set.statistics is not params.statistics:
        raise ValueError("parameter/basis statistics mismatch")
    if basis.mode_set.n_c != params.n_c or basis.mode_set.M != params.M:
        raise ValueError(
            f"parameter/basis cutoff mismatch: params (n_c={params.n_c}, "
            f"M={params.M}) vs basis (n_c={basis.mode_set.n_c}, M={basis.mode_set.M})"
        )
    if space.n_ph != params.n_ph:
        raise ValueError("parameter/space photon cutoff mismatch")
    ops = joint_operators(space)
    H = (
        -params.delta_c * ops.photon_number
        + ops.kinetic
        + params.eta * ops.pump_interaction
        + 0.5 * params.u0 * ops.lattice_interaction
    ).tocsr()
    H.sum_duplicates()
    H.sort_indices()
    herm_defect = abs(H - H.conj().T)
    if herm_defect.nnz and herm_defect.max() > 1e-12:
        raise AssertionError("assembled Hamiltonian is not Hermitian")
    n_op = (ops.creator @ ops.annihilator).tocsr()
    h_eff = (H - 1j * params.kappa * n_op).tocsr()
    liou = Liouvillian(
        params=params,
        space=space,
        hamiltonian=H,
        jump=np.sqrt(2.0 * params.kappa) * ops.annihilator,
        kappa=params.kappa,
        ops=ops,
    )
    liou._h_eff = h_eff
    liou._h_eff_adj = h_eff.conj().T.tocsr()
    return liou


def apply_lindblad_rhs(liou: Liouvillian, rho: np.ndarray) -> np.ndarray:
    """Right-hand side of the master equation for a (not necessarily
    Hermitian) joint-space matrix.

    Uses -i(H_eff rho - rho H_eff+) + 2 kappa a rho a+ with
    H_eff = H - i kappa a+a, which equals the commutator-plus-dissipator form.
    """
    a = liou.ops.annihilator
    sandwich = (a @ rho) @ liou.ops.creator
    return (
        -1j * (liou._h_eff @ rho - rho @ liou._h_eff_adj)
        + 2.0 * liou.kappa * sandwich
    )


def superoperator_matrix(liou: Liouvillian, limit: int = 4096) -> np.ndarray:
    """Dense column-stacked matrix L with vec(drho/dt) = L vec(rho).

    Column stacking: vec(A rho B) = (B^T kron A) vec(rho).  Guarded by a size
    limit on dim^2 since the output is dense.
    """
    dim = liou.dim
    if dim * dim > limit:
        raise ValueError(
            f"superoperator would be {dim * dim}x{dim * dim}; limit is {limit}"
        )
    ident = sparse.identity(dim, format="csr", dtype=complex)
    H = liou.hamiltonian
    a = liou.ops.annihilator
    n_op = (liou.ops.creator @ liou.ops.annihilator).tocsr()
    k = liou.kappa
    L = (
        -1j * (sparse.kron(ident, H) - sparse.kron(H.T, ident))
        + 2.0 * k * sparse.kron(a.conj(), a)
        - k * sparse.kron(ident, n_op)
        - k * sparse.kron(n_op.T, ident)
    )
    return np.asarray(L.todense())


# ---------------------------------------------------------------------------
# The discrete symmetry of the generator: translating the particles by half a
# pump wavelength flips the sign of the pump coupling, which is compensated by
# the photon parity flip a -> -a.


def translation_symmetry_unitary(basis: BasisSet) -> np.ndarray:
    """Many-body unitary of the half-wavelength translation x -> x + pi/k.

    Each standing-wave pair (cos_j, sin_j) rotates by the angle j*pi/M; the
    constant mode is untouched.  For bosons (no sine branch) the rotation must
    be diagonal, which restricts the exact symmetry to M = 1 where the phase
    is (-1)^j per mode.
    """
    ms = basis.mode_set
    size = ms.size
    if ms.statistics is Statistics.BOSON:
        if ms.M != 1:
            raise ValueError(
                "half-wavelength translation closes on the cosine-only mode "
                "set only for M = 1"
            )
        phases = np.array(
            [sum(j * n for (j, _), n in zip(ms.modes, occ)) % 2 for occ in basis.states]
        )
        return np.diag(np.where(phases, -1.0, 1.0)).astype(complex)
    gen = np.zeros((size, size))
    for j in range(1, ms.n_c + 1):
        phi = j * np.pi / ms.M
        pc = ms.position(ModeIndex(j, COSINE))
        ps = ms.position(ModeIndex(j, SINE))
        # expm of [[0, phi], [-phi, 0]] = [[cos, sin], [-sin, cos]]: maps
        # cos_j -> cos(phi) cos_j - sin(phi) sin_j, as the translation does.
        gen[pc, ps] = phi
        gen[ps, pc] = -phi
    many = bilinear_many_body(gen, basis)
    return expm(np.asarray(many.todense()))


def parity_symmetry(space: JointSpace) -> np.ndarray:
    """Joint unitary (half-wavelength translation) x (photon parity)."""
    u = translation_symmetry_unitary(space.particle_basis)
    ph = np.diag([(-1.0) ** n for n in range(space.photon_dim)])
    return np.kron(u, ph)
