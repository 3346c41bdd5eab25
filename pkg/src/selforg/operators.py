"""Single-particle coupling matrices and their second-quantized many-body lifts.

All many-body operators are sparse CSR matrices in canonical form (sorted
indices, duplicates summed), which makes their triplet representation
deterministic and dump-able.  The joint atom-field space is ordered particle
index outer, photon number inner: joint = particle*(n_ph+1) + photon.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from .modes import (
    BasisSet,
    COSINE,
    ModeIndex,
    ModeSet,
    SINE,
    Statistics,
)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def kinetic_matrix(mode_set: ModeSet, delta_ratio: float) -> np.ndarray:
    """Diagonal single-particle kinetic energies (delta_ratio * j)^2 in recoils.

    delta_ratio = dk/k must equal 1/M of the mode set; a mismatch is a
    parameter error, not something to silently reconcile.
    """
    if abs(delta_ratio * mode_set.M - 1.0) > 1e-12:
        raise ValueError(
            f"delta_ratio={delta_ratio!r} inconsistent with mode set M={mode_set.M}"
        )
    diag = [(delta_ratio * j) ** 2 for j, _ in mode_set.modes]
    return np.diag(diag)


def coupling_matrix(mode_set: ModeSet, order: int) -> np.ndarray:
    """Mode-space matrix of the cos(order*dk*x) density coupling.

    The constant mode couples to the cosine mode at j=order with weight
    1/sqrt(2); modes of equal parity couple with weight 1/2 when |j-k| = order,
    and when j+k = order (j,k >= 1) with weight +1/2 (cosine) or -1/2 (sine).
    Entries involving modes beyond the cutoff are simply absent.
    """
    if order < 1:
        raise ValueError(f"coupling order must be >= 1, got {order}")
    m = mode_set.size
    C = np.zeros((m, m))
    partner = ModeIndex(order, COSINE)
    if mode_set.has(partner):
        zero = mode_set.position(ModeIndex(0, COSINE))
        p = mode_set.position(partner)
        C[zero, p] = C[p, zero] = _INV_SQRT2
    modes = mode_set.modes
    for p, (j, par) in enumerate(modes):
        if j < 1:
            continue
        for q, (k, par2) in enumerate(modes):
            if k < 1 or par2 != par:
                continue
            val = 0.0
            if abs(j - k) == order:
                val += 0.5
            if j + k == order:
                val += 0.5 * par
            if val:
                C[p, q] = val
    return C


def bilinear_many_body(A: np.ndarray, basis: BasisSet) -> sparse.csr_matrix:
    """Matrix of sum_jk A[j,k] c+_j c_k on the Fock basis.

    Bosonic elements carry sqrt(n_k)*sqrt(n_j+1); fermionic elements carry the
    sign from sequentially annihilating at k then creating at j with the
    canonical mode order (equivalently, the parity of the occupation count
    strictly between the two modes).  Matrix elements leaving the basis span
    (possible only on restricted bases) are dropped: the result is the
    compression of the operator to the basis, which is exactly what
    expectation values on that subspace need.
    """
    A = np.asarray(A)
    m = basis.mode_set.size
    if A.shape != (m, m):
        raise ValueError(f"matrix shape {A.shape} does not match {m} modes")
    fermionic = basis.mode_set.statistics is Statistics.FERMION
    jj, kk = np.nonzero(A)
    entries = [(int(j), int(k), complex(A[j, k])) for j, k in zip(jj, kk)]
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for col, occ in enumerate(basis.states):
        for j, k, a_jk in entries:
            nk = occ[k]
            if nk == 0:
                continue
            if fermionic:
                if j != k and occ[j] == 1:
                    continue
                sign = -1.0 if sum(occ[:k]) % 2 else 1.0
                mid = list(occ)
                mid[k] = 0
                if sum(mid[:j]) % 2:
                    sign = -sign
                mid[j] = 1
                amp = a_jk * sign
                key = tuple(mid)
            else:
                mid = list(occ)
                mid[k] -= 1
                amp = a_jk * np.sqrt(nk) * np.sqrt(mid[j] + 1)
                mid[j] += 1
                key = tuple(mid)
            row = basis.index.get(key)
            if row is None:
                continue
            rows.append(row)
            cols.append(col)
            vals.append(amp)
    dim = basis.size
    out = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(dim, dim), dtype=complex
    ).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


class PhotonOp(Enum):
    ANNIHILATE = "annihilate"
    CREATE = "create"
    NUMBER = "number"


def photon_operator(kind: PhotonOp, n_ph: int) -> sparse.csr_matrix:
    """Truncated single-mode field operator on Fock levels 0..n_ph."""
    if n_ph < 1:
        raise ValueError(f"photon cutoff must be >= 1, got {n_ph}")
    dim = n_ph + 1
    if kind is PhotonOp.NUMBER:
        return sparse.diags(np.arange(dim, dtype=float), format="csr", dtype=complex)
    amp = np.sqrt(np.arange(1, dim))
    a = sparse.diags(amp, offsets=1, shape=(dim, dim), format="csr", dtype=complex)
    if kind is PhotonOp.ANNIHILATE:
        return a
    return a.conj().T.tocsr()


@dataclass(eq=False)
class JointSpace:
    """Tensor product of a particle Fock basis with the photon ladder."""

    particle_basis: BasisSet
    n_ph: int

    def __post_init__(self):
        if self.n_ph < 1:
            raise ValueError(f"photon cutoff must be >= 1, got {self.n_ph}")

    @property
    def particle_dim(self) -> int:
        return self.particle_basis.size

    @property
    def photon_dim(self) -> int:
        return self.n_ph + 1

    @property
    def dim(self) -> int:
        return self.particle_dim * self.photon_dim


class Sector(Enum):
    PARTICLE = "particle"
    PHOTON = "photon"


def embed_joint(op, sector: Sector, space: JointSpace) -> sparse.csr_matrix:
    """Lift a sector operator to the joint space (particle outer, photon inner)."""
    op = sparse.csr_matrix(op)
    if sector is Sector.PARTICLE:
        if op.shape != (space.particle_dim,) * 2:
            raise ValueError(
                f"particle operator shape {op.shape} != dim {space.particle_dim}"
            )
        out = sparse.kron(op, sparse.identity(space.photon_dim), format="csr")
    else:
        if op.shape != (space.photon_dim,) * 2:
            raise ValueError(
                f"photon operator shape {op.shape} != dim {space.photon_dim}"
            )
        out = sparse.kron(sparse.identity(space.particle_dim), op, format="csr")
    out = out.astype(complex)
    out.sum_duplicates()
    out.sort_indices()
    return out


def expect(op, rho: np.ndarray) -> complex:
    """tr(op @ rho) without forming the product matrix."""
    if sparse.issparse(op):
        return complex(op.multiply(rho.T).sum())
    return complex(np.sum(np.asarray(op) * np.asarray(rho).T))


def dump_operator(op, path) -> None:
    """Write deterministic 'row,col,re,im' triplets, 17 significant digits."""
    op = sparse.csr_matrix(op)
    op.sum_duplicates()
    op.sort_indices()
    coo = op.tocoo()
    with open(path, "w", newline="\n") as fh:
        fh.write("row,col,re,im\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{v.real:.17g},{v.imag:.17g}\n")


# ---------------------------------------------------------------------------
# Cached per-basis / per-space operator bundles.  Builds are pure functions of
# the basis, so the caches key on object identity and hold everything a sweep
# needs to reuse across points (only scalar prefactors change between points).

@dataclass(eq=False)
class ParticleOperators:
    kinetic: sparse.csr_matrix          # c+ K c, K at dk/k = 1/M
    pump_coupling: sparse.csr_matrix    # c+ C_M c
    lattice_coupling: sparse.csr_matrix # c+ C_2M c
    group_numbers: tuple[sparse.csr_matrix, ...]  # aligned with groups.labels


_particle_cache: "weakref.WeakKeyDictionary[BasisSet, ParticleOperators]" = (
    weakref.WeakKeyDictionary()
)
_momentum_cache: "weakref.WeakKeyDictionary[BasisSet, dict]" = (
    weakref.WeakKeyDictionary()
)


def particle_operators(basis: BasisSet) -> ParticleOperators:
    ops = _particle_cache.get(basis)
    if ops is not None:
        return ops
    ms = basis.mode_set
    kin = bilinear_many_body(kinetic_matrix(ms, 1.0 / ms.M), basis)
    pump = bilinear_many_body(coupling_matrix(ms, ms.M), basis)
    lattice = bilinear_many_body(coupling_matrix(ms, 2 * ms.M), basis)
    sig = np.asarray(basis.signatures, dtype=float)
    group_ops = tuple(
        sparse.diags(sig[:, g], format="csr", dtype=complex)
        for g in range(basis.groups.count)
    )
    ops = ParticleOperators(kin, pump, lattice, group_ops)
    _particle_cache[basis] = ops
    return ops


def momentum_number_operators(basis: BasisSet) -> dict[int, sparse.csr_matrix]:
    """Number operators of the plane-wave levels p = m*dk, keyed by m.

    Built from the (cosine -/+ i sine)/sqrt(2) combinations; for bosons the
    sine branch is absent and each |m| >= 1 level takes half the cosine-mode
    occupancy.
    """
    ops = _momentum_cache.get(basis)
    if ops is not None:
        return ops
    ms = basis.mode_set
    size = ms.size
    ops = {}
    for m in range(-ms.n_c, ms.n_c + 1):
        j = abs(m)
        A = np.zeros((size, size), dtype=complex)
        pc = ms.position(ModeIndex(j, COSINE))
        if j == 0:
            A[pc, pc] = 1.0
        elif ms.statistics is Statistics.BOSON:
            A[pc, pc] = 0.5
        else:
            ps = ms.position(ModeIndex(j, SINE))
            s = 1.0 if m > 0 else -1.0
            A[pc, pc] = 0.5
            A[ps, ps] = 0.5
            A[pc, ps] = -0.5j * s
            A[ps, pc] = 0.5j * s
        ops[m] = bilinear_many_body(A, basis)
    _momentum_cache[basis] = ops
    return ops


@dataclass(eq=False)
class JointOperators:
    """Joint-space constants reused by the generator and by observables."""

    space: JointSpace
    annihilator: sparse.csr_matrix
    creator: sparse.csr_matrix
    photon_number: sparse.csr_matrix
    kinetic: sparse.csr_matrix
    pump_coupling: sparse.csr_matrix      # (c+ C_M c) x 1
    pump_interaction: sparse.csr_matrix   # (c+ C_M c) x (a + a+)
    lattice_interaction: sparse.csr_matrix  # (c+ (1 + C_2M) c) x a+a
    top_photon_projector: sparse.csr_matrix
    top_mode_number: sparse.csr_matrix


_joint_cache: "weakref.WeakKeyDictionary[JointSpace, JointOperators]" = (
    weakref.WeakKeyDictionary()
)


def joint_operators(space: JointSpace) -> JointOperators:
    ops = _joint_cache.get(space)
    if ops is not None:
        return ops
    basis = space.particle_basis
    pops = particle_operators(basis)
    a_ph = photon_operator(PhotonOp.ANNIHILATE, space.n_ph)
    n_ph_op = photon_operator(PhotonOp.NUMBER, space.n_ph)
    a = embed_joint(a_ph, Sector.PHOTON, space)
    x_ph = a_ph + a_ph.conj().T

    def kron(p_op, ph_op):
        out = sparse.kron(sparse.csr_matrix(p_op), sparse.csr_matrix(ph_op),
                          format="csr").astype(complex)
        out.sum_duplicates()
        out.sort_indices()
        return out

    ident_p = sparse.identity(space.particle_dim, format="csr")
    ident_ph = sparse.identity(space.photon_dim, format="csr")
    n_total = basis.n_particles
    lattice_particle = (
        n_total * ident_p + pops.lattice_coupling
    )
    top_proj = sparse.csr_matrix(
        (np.ones(1), (np.array([space.n_ph]), np.array([space.n_ph]))),
        shape=(space.photon_dim,) * 2,
    )
    ms = basis.mode_set
    edge = np.zeros((ms.size, ms.size))
    for par in (COSINE, SINE):
        mode = ModeIndex(ms.n_c, par)
        if ms.has(mode):
            p = ms.position(mode)
            edge[p, p] = 1.0
    top_modes = bilinear_many_body(edge, basis)
    ops = JointOperators(
        space=space,
        annihilator=a,
        creator=a.conj().T.tocsr(),
        photon_number=kron(ident_p, n_ph_op),
        kinetic=kron(pops.kinetic, ident_ph),
        pump_coupling=kron(pops.pump_coupling, ident_ph),
        pump_interaction=kron(pops.pump_coupling, x_ph),
        lattice_interaction=kron(lattice_particle, n_ph_op),
        top_photon_projector=kron(ident_p, top_proj),
        top_mode_number=kron(top_modes, ident_ph),
    )
    _joint_cache[space] = ops
    return ops
