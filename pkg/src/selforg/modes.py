"""Single-particle modes, many-body Fock bases, and symmetry-sector bookkeeping.

Motion along the cavity axis is expanded in one constant mode plus standing-wave
cosine/sine modes on a momentum grid of spacing dk = k/M, truncated at mode
number n_c.  Many-body states are occupation vectors over that mode list.  The
pump and lattice couplings only connect modes inside fixed residue classes of
the momentum number modulo M ("groups"), so the per-group particle numbers are
conserved and the Fock space splits into invariant blocks labelled by the tuple
of group occupations (a state's "signature").  Restricting the basis to the
signatures actually populated by the initial state is what makes the joint
atom-field density matrix tractable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from math import comb
from typing import Iterable, NamedTuple

import numpy as np

COSINE = 1
SINE = -1

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class Statistics(Enum):
    BOSON = "boson"
    FERMION = "fermion"


class InitialKind(Enum):
    BEC = "bec"
    FERMI_SEA = "fermi_sea"


class TopShellPolicy(Enum):
    """Tie-break for a partially filled degenerate +/-m momentum shell."""

    PLUS_FIRST = "plus_first"
    MINUS_FIRST = "minus_first"
    SYMMETRIC_MIXTURE = "symmetric_mixture"


class ModeIndex(NamedTuple):
    j: int
    parity: int  # +1 cosine, -1 sine


class GroupLabel(NamedTuple):
    l: int
    parity: int


class GroupConstructionError(RuntimeError):
    """Residue-rule groups disagree with the coupling-graph components."""


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Ordered mode list for one cutoff / statistics / grid choice.

    Canonical order: (0,+), (1,+), ..., (n_c,+), (1,-), ..., (n_c,-).
    Bosons prepared in the zero-momentum condensate never populate sine
    modes, so the sine branch is dropped entirely for Boson statistics.
    M = k/dk is the cavity wavenumber in units of the momentum grid.
    """

    n_c: int
    M: int
    statistics: Statistics
    modes: tuple[ModeIndex, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "_pos", {mode: i for i, mode in enumerate(self.modes)}
        )

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def delta_ratio(self) -> float:
        """Momentum grid spacing over cavity wavenumber, dk/k = 1/M."""
        return 1.0 / self.M

    def position(self, mode: ModeIndex) -> int:
        return self._pos[mode]

    def has(self, mode: ModeIndex) -> bool:
        return mode in self._pos


def enumerate_modes(n_c: int, statistics: Statistics, M: int) -> ModeSet:
    """Build the canonical truncated mode list.

    Parameters
    ----------
    n_c : highest retained momentum number (>= 1).
    statistics : Boson (cosine branch only) or Fermion (both branches).
    M : cavity wavenumber in units of the momentum grid, 1 <= M <= n_c.
    """
    if n_c < 1:
        raise ValueError(f"mode cutoff n_c must be >= 1, got {n_c}")
    if not 1 <= M <= n_c:
        raise ValueError(
            f"need 1 <= M <= n_c, got M={M}, n_c={n_c} "
            "(the pump partner mode of the constant mode must be retained)"
        )
    modes = [ModeIndex(j, COSINE) for j in range(n_c + 1)]
    if statistics is Statistics.FERMION:
        modes.extend(ModeIndex(j, SINE) for j in range(1, n_c + 1))
    return ModeSet(n_c=n_c, M=M, statistics=statistics, modes=tuple(modes))


@dataclass(eq=False)
class ModeGroups:
    """Partition of a ModeSet into coupling-connected groups.

    labels are ordered cosine groups first (ascending l), then sine groups;
    members holds mode positions into the ModeSet; group_of maps a mode
    position to its index in labels.
    """

    mode_set: ModeSet
    labels: tuple[GroupLabel, ...]
    members: dict[GroupLabel, tuple[int, ...]]
    group_of: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.labels)

    def signature_of(self, occupations: Iterable[int]) -> tuple[int, ...]:
        counts = [0] * len(self.labels)
        for pos, n in enumerate(occupations):
            if n:
                counts[self.group_of[pos]] += n
        return tuple(counts)


def _coupling_edges(mode_set: ModeSet) -> list[tuple[int, int]]:
    # Edges of the graph whose connected components the residue groups must
    # reproduce: nonzero off-diagonal couplings at momentum transfer M (pump)
    # and 2M (lattice), including the constant-mode partner terms.
    edges = []
    modes = mode_set.modes
    for p, (j, par) in enumerate(modes):
        for q in range(p + 1, len(modes)):
            j2, par2 = modes[q]
            if par != par2:
                continue
            for order in (mode_set.M, 2 * mode_set.M):
                if abs(j - j2) == order:
                    edges.append((p, q))
                elif j >= 1 and j2 >= 1 and j + j2 == order:
                    edges.append((p, q))
                elif {j, j2} == {0, order}:
                    edges.append((p, q))
    return edges


def _connected_components(n: int, edges: list[tuple[int, int]]) -> set[frozenset]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, set] = {}
    for i in range(n):
        comps.setdefault(find(i), set()).add(i)
    return {frozenset(c) for c in comps.values()}


def mode_groups(mode_set: ModeSet) -> ModeGroups:
    """Partition modes into conserved groups (residue classes of j mod M).

    Modes (j, parity) and (j', parity) share a group iff j mod M equals
    l or M - l where l <= floor(M/2) labels the group.  The construction is
    validated against the actual coupling connectivity; a mismatch raises
    GroupConstructionError since it would falsify every restricted-basis
    computation downstream.
    """
    M = mode_set.M
    label_of_mode: list[GroupLabel] = []
    for j, par in mode_set.modes:
        r = j % M
        label_of_mode.append(GroupLabel(min(r, M - r), par))

    labels: list[GroupLabel] = []
    for par in (COSINE, SINE):
        for l in range(M // 2 + 1):
            lab = GroupLabel(l, par)
            if lab in label_of_mode:
                labels.append(lab)
    members = {
        lab: tuple(p for p, lb in enumerate(label_of_mode) if lb == lab)
        for lab in labels
    }
    label_index = {lab: i for i, lab in enumerate(labels)}
    group_of = tuple(label_index[lb] for lb in label_of_mode)

    partition = {frozenset(v) for v in members.values()}
    components = _connected_components(mode_set.size, _coupling_edges(mode_set))
    if partition != components:
        raise GroupConstructionError(
            f"residue groups {partition} != coupling components {components} "
            f"for n_c={mode_set.n_c}, M={M}, {mode_set.statistics}"
        )
    return ModeGroups(
        mode_set=mode_set, labels=tuple(labels), members=members, group_of=group_of
    )


@dataclass(eq=False)
class BasisSet:
    """Lexicographically ordered many-body occupation basis at fixed N."""

    mode_set: ModeSet
    groups: ModeGroups
    states: tuple[tuple[int, ...], ...]
    index: dict[tuple[int, ...], int]
    signatures: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def n_particles(self) -> int:
        return sum(self.states[0])

    def signature_set(self) -> set[tuple[int, ...]]:
        return set(self.signatures)

    def dump(self, path) -> None:
        """Write one occupation vector per line, comma-separated integers."""
        with open(path, "w", newline="\n") as fh:
            for occ in self.states:
                fh.write(",".join(str(n) for n in occ) + "\n")


def enumerate_fock_basis(mode_set: ModeSet, n_particles: int) -> BasisSet:
    """All N-particle occupation vectors on the mode list, lexicographic order.

    Counts are the usual multichoose(|modes|, N) for bosons and C(|modes|, N)
    for fermions; over-filling a fermionic mode list is rejected.
    """
    if n_particles < 1:
        raise ValueError(f"particle number must be >= 1, got {n_particles}")
    m = mode_set.size
    states: list[tuple[int, ...]] = []
    if mode_set.statistics is Statistics.FERMION:
        if n_particles > m:
            raise ValueError(
                f"over-filled: {n_particles} fermions do not fit in {m} modes"
            )
        for filled in itertools.combinations(range(m), n_particles):
            v = [0] * m
            for p in filled:
                v[p] = 1
            states.append(tuple(v))
    else:
        for combo in itertools.combinations_with_replacement(range(m), n_particles):
            v = [0] * m
            for p in combo:
                v[p] += 1
            states.append(tuple(v))
    states.sort()
    groups = mode_groups(mode_set)
    signatures = tuple(groups.signature_of(s) for s in states)
    index = {s: i for i, s in enumerate(states)}
    return BasisSet(
        mode_set=mode_set,
        groups=groups,
        states=tuple(states),
        index=index,
        signatures=signatures,
    )


def basis_size_formula(mode_set: ModeSet, n_particles: int) -> int:
    m = mode_set.size
    if mode_set.statistics is Statistics.FERMION:
        return comb(m, n_particles)
    return comb(m + n_particles - 1, n_particles)


def restrict_basis(basis: BasisSet, signatures: Iterable[tuple[int, ...]]) -> BasisSet:
    """Sub-basis of the states whose signature lies in the given set.

    Ordering is inherited from the parent basis.  Signatures absent from the
    parent basis, or an empty result, are errors.
    """
    wanted = {tuple(s) for s in signatures}
    present = set(basis.signatures)
    missing = wanted - present
    if missing:
        raise ValueError(f"signatures not present in basis: {sorted(missing)}")
    keep = [i for i, sig in enumerate(basis.signatures) if sig in wanted]
    if not keep:
        raise ValueError("restriction produced an empty subspace")
    states = tuple(basis.states[i] for i in keep)
    return BasisSet(
        mode_set=basis.mode_set,
        groups=basis.groups,
        states=states,
        index={s: i for i, s in enumerate(states)},
        signatures=tuple(basis.signatures[i] for i in keep),
    )


# ---------------------------------------------------------------------------
# Initial states


def _plane_wave_creation(mode_set: ModeSet, m: int) -> dict[int, complex]:
    """Creation-operator coefficients of the plane wave at momentum m*dk.

    The momentum eigenstates are the (cosine -/+ i sine)/sqrt(2) combinations
    of equal j, so the corresponding creation operator is
    (c+_cos + i*sign(m)*c+_sin)/sqrt(2); the constant mode is m = 0.
    """
    j = abs(m)
    if j == 0:
        return {mode_set.position(ModeIndex(0, COSINE)): 1.0 + 0j}
    if j > mode_set.n_c:
        raise ValueError(
            f"momentum number {m} outside mode cutoff n_c={mode_set.n_c}"
        )
    pc = mode_set.position(ModeIndex(j, COSINE))
    ps = mode_set.position(ModeIndex(j, SINE))
    s = 1j if m > 0 else -1j
    return {pc: _INV_SQRT2 + 0j, ps: s * _INV_SQRT2}


def _apply_fermi_creation(
    components: dict[tuple[int, ...], complex], coeffs: dict[int, complex]
) -> dict[tuple[int, ...], complex]:
    out: dict[tuple[int, ...], complex] = {}
    for occ, amp in components.items():
        for pos, c in coeffs.items():
            if occ[pos]:
                continue
            sign = -1.0 if sum(occ[:pos]) % 2 else 1.0
            new = list(occ)
            new[pos] = 1
            key = tuple(new)
            out[key] = out.get(key, 0.0) + amp * c * sign
    return {k: v for k, v in out.items() if abs(v) > 1e-15}


def _fermi_sea_fillings(n_particles: int) -> tuple[list[int], int | None]:
    """Momentum numbers filled in order of |m|; returns (full list, top shell).

    The top shell is the |m| holding a single leftover particle, or None if
    every started shell is complete.
    """
    filled: list[int] = [0]
    remaining = n_particles - 1
    shell = 1
    while remaining >= 2:
        filled.extend([shell, -shell])
        remaining -= 2
        shell += 1
    return filled, (shell if remaining == 1 else None)


def fermi_sea_components(
    mode_set: ModeSet,
    n_particles: int,
    top_shell_policy: TopShellPolicy = TopShellPolicy.SYMMETRIC_MIXTURE,
) -> list[tuple[float, dict[tuple[int, ...], complex]]]:
    """Weighted Fock expansions of the zero-temperature sea state(s).

    Plane-wave levels p = m*dk are filled in order of |m| (kinetic energy
    (m/M)^2 recoils), complete +/-m pairs first; one leftover particle on the
    degenerate top shell is placed per the policy.  Returns a list of
    (probability, {occupation: amplitude}) pure-state expansions.
    """
    if mode_set.statistics is not Statistics.FERMION:
        raise ValueError("a Fermi sea requires Fermion statistics")
    filled, top = _fermi_sea_fillings(n_particles)
    plans: list[tuple[float, list[int]]] = []
    if top is None:
        plans.append((1.0, filled))
    elif top_shell_policy is TopShellPolicy.PLUS_FIRST:
        plans.append((1.0, filled + [top]))
    elif top_shell_policy is TopShellPolicy.MINUS_FIRST:
        plans.append((1.0, filled + [-top]))
    else:
        plans.append((0.5, filled + [top]))
        plans.append((0.5, filled + [-top]))

    out = []
    for weight, momenta in plans:
        vacuum = tuple([0] * mode_set.size)
        components = {vacuum: 1.0 + 0j}
        for m in momenta:
            components = _apply_fermi_creation(
                components, _plane_wave_creation(mode_set, m)
            )
        norm = np.sqrt(sum(abs(a) ** 2 for a in components.values()))
        components = {k: v / norm for k, v in components.items()}
        out.append((weight, components))
    return out


def initial_signatures(
    mode_set: ModeSet,
    n_particles: int,
    kind: InitialKind,
    top_shell_policy: TopShellPolicy = TopShellPolicy.SYMMETRIC_MIXTURE,
) -> set[tuple[int, ...]]:
    """Signatures populated by the requested initial state (cheap, no basis)."""
    groups = mode_groups(mode_set)
    if kind is InitialKind.BEC:
        if mode_set.statistics is not Statistics.BOSON:
            raise ValueError("a condensate initial state requires Boson statistics")
        occ = [0] * mode_set.size
        occ[mode_set.position(ModeIndex(0, COSINE))] = n_particles
        return {groups.signature_of(occ)}
    sigs: set[tuple[int, ...]] = set()
    for _, components in fermi_sea_components(mode_set, n_particles, top_shell_policy):
        for occ in components:
            sigs.add(groups.signature_of(occ))
    return sigs


def initial_state(
    basis: BasisSet,
    kind: InitialKind,
    top_shell_policy: TopShellPolicy = TopShellPolicy.SYMMETRIC_MIXTURE,
) -> np.ndarray:
    """Particle-sector density matrix of the requested initial state.

    BEC: all N particles in the constant mode (pure).  FermiSea: plane-wave
    levels filled in order of |m|; a half-filled degenerate top shell is
    resolved by the policy (SymmetricMixture gives the even mixture of the
    two fillings).  The basis must contain every Fock component.
    """
    mode_set = basis.mode_set
    n = basis.n_particles
    dim = basis.size
    rho = np.zeros((dim, dim), dtype=complex)
    if kind is InitialKind.BEC:
        if mode_set.statistics is not Statistics.BOSON:
            raise ValueError("a condensate initial state requires Boson statistics")
        occ = [0] * mode_set.size
        occ[mode_set.position(ModeIndex(0, COSINE))] = n
        key = tuple(occ)
        if key not in basis.index:
            raise ValueError("basis does not contain the condensate state")
        i = basis.index[key]
        rho[i, i] = 1.0
        return rho
    if kind is not InitialKind.FERMI_SEA:
        raise ValueError(f"unknown initial state kind {kind!r}")
    for weight, components in fermi_sea_components(mode_set, n, top_shell_policy):
        vec = np.zeros(dim, dtype=complex)
        for occ, amp in components.items():
            if occ not in basis.index:
                raise ValueError(
                    "basis does not contain a Fock component of the sea state; "
                    "restrict only to the signatures reported by initial_signatures"
                )
            vec[basis.index[occ]] = amp
        rho += weight * np.outer(vec, vec.conj())
    return rho
