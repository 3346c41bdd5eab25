"""Mode enumeration, conserved groups, Fock bases, and initial states."""

import numpy as np
import pytest

from selforg.modes import (
    COSINE,
    SINE,
    BasisSet,
    GroupLabel,
    InitialKind,
    ModeIndex,
    Statistics,
    TopShellPolicy,
    basis_size_formula,
    enumerate_fock_basis,
    enumerate_modes,
    fermi_sea_components,
    initial_signatures,
    initial_state,
    mode_groups,
    restrict_basis,
)


# ---------------------------------------------------------------------------
# Mode lists.


def test_boson_mode_count_and_order():
    ms = enumerate_modes(5, Statistics.BOSON, 1)
    assert ms.size == 6
    assert ms.modes == tuple(ModeIndex(j, COSINE) for j in range(6))


def test_fermion_mode_count_and_order():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    assert ms.size == 13
    expected = tuple(ModeIndex(j, COSINE) for j in range(7)) + tuple(
        ModeIndex(j, SINE) for j in range(1, 7)
    )
    assert ms.modes == expected


def test_small_mode_counts():
    assert enumerate_modes(2, Statistics.BOSON, 1).size == 3
    assert enumerate_modes(2, Statistics.FERMION, 1).size == 5


def test_mode_set_rejects_bad_cutoffs():
    with pytest.raises(ValueError):
        enumerate_modes(0, Statistics.BOSON, 1)
    with pytest.raises(ValueError):
        enumerate_modes(3, Statistics.BOSON, 4)  # M > n_c
    with pytest.raises(ValueError):
        enumerate_modes(3, Statistics.BOSON, 0)


def test_delta_ratio_is_inverse_order():
    assert enumerate_modes(6, Statistics.FERMION, 4).delta_ratio == 0.25
    assert enumerate_modes(3, Statistics.BOSON, 1).delta_ratio == 1.0


def test_position_lookup_roundtrip():
    ms = enumerate_modes(4, Statistics.FERMION, 2)
    for i, mode in enumerate(ms.modes):
        assert ms.position(mode) == i
    assert ms.has(ModeIndex(4, SINE))
    assert not ms.has(ModeIndex(5, COSINE))
    assert not ms.has(ModeIndex(0, SINE))


# ---------------------------------------------------------------------------
# Conserved groups.


def test_fermion_groups_order_four():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    groups = mode_groups(ms)
    members = {
        label: {ms.modes[i] for i in idxs}
        for label, idxs in zip(groups.labels, groups.members)
    }
    assert members[GroupLabel(0, COSINE)] == {ModeIndex(0, COSINE), ModeIndex(4, COSINE)}
    assert members[GroupLabel(1, COSINE)] == {
        ModeIndex(1, COSINE), ModeIndex(3, COSINE), ModeIndex(5, COSINE)
    }
    assert members[GroupLabel(2, COSINE)] == {ModeIndex(2, COSINE), ModeIndex(6, COSINE)}
    assert members[GroupLabel(0, SINE)] == {ModeIndex(4, SINE)}
    assert members[GroupLabel(1, SINE)] == {
        ModeIndex(1, SINE), ModeIndex(3, SINE), ModeIndex(5, SINE)
    }
    assert members[GroupLabel(2, SINE)] == {ModeIndex(2, SINE), ModeIndex(6, SINE)}
    assert groups.count == 6


def test_boson_groups_order_two():
    ms = enumerate_modes(4, Statistics.BOSON, 2)
    groups = mode_groups(ms)
    members = [
        sorted(ms.modes[i].j for i in idxs) for idxs in groups.members
    ]
    assert members == [[0, 2, 4], [1, 3]]


def test_boson_single_group_order_one():
    ms = enumerate_modes(5, Statistics.BOSON, 1)
    groups = mode_groups(ms)
    assert groups.count == 1
    assert len(groups.members[0]) == ms.size


@pytest.mark.parametrize("statistics", [Statistics.BOSON, Statistics.FERMION])
@pytest.mark.parametrize("n_c", [1, 2, 3, 5, 8, 12])
def test_groups_partition_modes(statistics, n_c):
    for order in range(1, min(n_c, 6) + 1):
        ms = enumerate_modes(n_c, statistics, order)
        groups = mode_groups(ms)
        seen = sorted(i for idxs in groups.members for i in idxs)
        assert seen == list(range(ms.size))
        for pos, g in enumerate(groups.group_of):
            assert pos in groups.members[g]


@pytest.mark.parametrize("statistics", [Statistics.BOSON, Statistics.FERMION])
def test_groups_are_invariant_under_couplings(statistics):
    # every nonzero entry of the kinetic and both coupling matrices stays
    # inside one group: the group occupation numbers are conserved
    from selforg.operators import coupling_matrix, kinetic_matrix

    for n_c, order in [(4, 1), (4, 2), (6, 3), (6, 4), (8, 4)]:
        ms = enumerate_modes(n_c, statistics, order)
        groups = mode_groups(ms)
        for mat in (
            kinetic_matrix(ms, 1.0 / order),
            coupling_matrix(ms, order),
            coupling_matrix(ms, 2 * order),
        ):
            for p, q in zip(*np.nonzero(mat)):
                assert groups.group_of[p] == groups.group_of[q]


# ---------------------------------------------------------------------------
# Fock bases and signature restriction.


def test_fermion_basis_example_size():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    basis = enumerate_fock_basis(ms, 4)
    assert basis.size == 715
    assert basis_size_formula(ms, 4) == 715


def test_boson_basis_sizes():
    ms = enumerate_modes(3, Statistics.BOSON, 1)
    basis = enumerate_fock_basis(ms, 2)
    assert basis.size == 10  # multichoose(4, 2)
    assert basis_size_formula(ms, 2) == 10
    ms12 = enumerate_modes(12, Statistics.BOSON, 4)
    assert basis_size_formula(ms12, 2) == 91


def test_basis_index_roundtrip_and_occupancy():
    ms = enumerate_modes(3, Statistics.FERMION, 1)
    basis = enumerate_fock_basis(ms, 3)
    for i, occ in enumerate(basis.states):
        assert basis.index[occ] == i
        assert sum(occ) == 3
        assert all(n in (0, 1) for n in occ)


def test_restriction_to_sea_signatures():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    basis = enumerate_fock_basis(ms, 4)
    sigs = initial_signatures(ms, 4, InitialKind.FERMI_SEA)
    assert len(sigs) == 2
    sub = restrict_basis(basis, sigs)
    assert sub.size == 72
    # each signature block factorizes over groups: 2 * 3 * 2 * 3 = 36
    from collections import Counter

    per_sig = Counter(sub.signatures)
    assert sorted(per_sig.values()) == [36, 36]


def test_restrict_preserves_order_and_reindexes():
    ms = enumerate_modes(4, Statistics.BOSON, 2)
    basis = enumerate_fock_basis(ms, 2)
    sig = basis.signatures[0]
    sub = restrict_basis(basis, [sig])
    positions = [basis.index[occ] for occ in sub.states]
    assert positions == sorted(positions)
    for i, occ in enumerate(sub.states):
        assert sub.index[occ] == i
        assert sub.signatures[i] == sig


def test_restrict_rejects_unknown_signature():
    ms = enumerate_modes(2, Statistics.BOSON, 1)
    basis = enumerate_fock_basis(ms, 1)
    with pytest.raises(ValueError):
        restrict_basis(basis, [(99, 99)])


def test_signature_blocks_partition_basis():
    for statistics, n_particles in [(Statistics.BOSON, 3), (Statistics.FERMION, 3)]:
        ms = enumerate_modes(4, statistics, 2)
        basis = enumerate_fock_basis(ms, n_particles)
        total = 0
        for sig in basis.signature_set():
            total += restrict_basis(basis, [sig]).size
        assert total == basis.size


def test_overfilled_fermion_basis_rejected():
    ms = enumerate_modes(1, Statistics.FERMION, 1)  # 3 modes
    with pytest.raises(ValueError):
        enumerate_fock_basis(ms, 4)


# ---------------------------------------------------------------------------
# Fermi seas and initial states.


def test_sea_single_particle():
    ms = enumerate_modes(2, Statistics.FERMION, 1)
    comps = fermi_sea_components(ms, 1, TopShellPolicy.SYMMETRIC_MIXTURE)
    assert len(comps) == 1
    weight, parts = comps[0]
    assert weight == pytest.approx(1.0)
    occ, amp = next(iter(parts.items()))
    assert abs(amp) == pytest.approx(1.0)
    pos0 = ms.position(ModeIndex(0, COSINE))
    assert occ[pos0] == 1 and sum(occ) == 1


def test_sea_closed_shell_is_single_determinant():
    # five particles fill m = 0, +-1, +-2 completely: one pure component
    ms = enumerate_modes(4, Statistics.FERMION, 2)
    for policy in TopShellPolicy:
        comps = fermi_sea_components(ms, 5, policy)
        assert len(comps) == 1
        weight, parts = comps[0]
        assert weight == pytest.approx(1.0)
        norm = sum(abs(a) ** 2 for a in parts.values())
        assert norm == pytest.approx(1.0, abs=1e-12)


def test_sea_open_shell_policies_differ():
    ms = enumerate_modes(3, Statistics.FERMION, 1)
    plus = fermi_sea_components(ms, 2, TopShellPolicy.PLUS_FIRST)
    minus = fermi_sea_components(ms, 2, TopShellPolicy.MINUS_FIRST)
    mix = fermi_sea_components(ms, 2, TopShellPolicy.SYMMETRIC_MIXTURE)
    assert len(plus) == 1 and len(minus) == 1 and len(mix) == 2
    assert [w for w, _ in mix] == pytest.approx([0.5, 0.5])
    # plus and minus fillings are distinct states
    def vec(parts):
        return {occ: amp for occ, amp in parts.items()}

    overlap = 0.0
    v1, v2 = vec(plus[0][1]), vec(minus[0][1])
    for occ, amp in v1.items():
        overlap += np.conj(amp) * v2.get(occ, 0.0)
    # m=+1 and m=-1 each occupy {cos_1, sin_1} with opposite relative phase
    assert abs(overlap) < 1.0 - 1e-9


def test_sea_components_are_normalized():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    comps = fermi_sea_components(ms, 4, TopShellPolicy.SYMMETRIC_MIXTURE)
    assert sum(w for w, _ in comps) == pytest.approx(1.0)
    for _, parts in comps:
        assert sum(abs(a) ** 2 for a in parts.values()) == pytest.approx(1.0)


def test_sea_signatures_match_example():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    groups = mode_groups(ms)
    label_pos = {label: i for i, label in enumerate(groups.labels)}
    sigs = initial_signatures(ms, 4, InitialKind.FERMI_SEA)

    def sig_from_counts(counts):
        out = [0] * groups.count
        for label, n in counts.items():
            out[label_pos[label]] = n
        return tuple(out)

    sig_a = sig_from_counts({
        GroupLabel(0, COSINE): 1, GroupLabel(1, COSINE): 1,
        GroupLabel(2, COSINE): 1, GroupLabel(1, SINE): 1,
    })
    sig_b = sig_from_counts({
        GroupLabel(0, COSINE): 1, GroupLabel(1, COSINE): 1,
        GroupLabel(1, SINE): 1, GroupLabel(2, SINE): 1,
    })
    assert sigs == {sig_a, sig_b}


def test_bec_state_is_pure_condensate():
    ms = enumerate_modes(3, Statistics.BOSON, 1)
    basis = enumerate_fock_basis(ms, 3)
    rho = initial_state(basis, InitialKind.BEC)
    assert np.trace(rho).real == pytest.approx(1.0)
    occ = [0] * ms.size
    occ[ms.position(ModeIndex(0, COSINE))] = 3
    i = basis.index[tuple(occ)]
    assert rho[i, i].real == pytest.approx(1.0)
    assert np.count_nonzero(rho) == 1


def test_bec_requires_bosons():
    ms = enumerate_modes(2, Statistics.FERMION, 1)
    basis = enumerate_fock_basis(ms, 2)
    with pytest.raises(ValueError):
        initial_state(basis, InitialKind.BEC)


@pytest.mark.parametrize("n_particles", [1, 2, 3, 4, 5])
def test_sea_state_is_valid_density_matrix(n_particles):
    ms = enumerate_modes(4, Statistics.FERMION, 2)
    basis = enumerate_fock_basis(ms, n_particles)
    rho = initial_state(basis, InitialKind.FERMI_SEA)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-12
    eig = np.linalg.eigvalsh(rho)
    assert eig.min() > -1e-12
    # support stays inside the advertised signatures
    sigs = initial_signatures(ms, n_particles, InitialKind.FERMI_SEA)
    support = {
        basis.signatures[i]
        for i in range(basis.size)
        if abs(rho[i, i]) > 1e-15
    }
    assert support <= sigs


def test_sea_state_on_restricted_basis_matches_projection():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    full = enumerate_fock_basis(ms, 4)
    sigs = initial_signatures(ms, 4, InitialKind.FERMI_SEA)
    sub = restrict_basis(full, sigs)
    rho_full = initial_state(full, InitialKind.FERMI_SEA)
    rho_sub = initial_state(sub, InitialKind.FERMI_SEA)
    keep = [full.index[occ] for occ in sub.states]
    assert np.allclose(rho_sub, rho_full[np.ix_(keep, keep)], atol=1e-14)
    assert np.trace(rho_sub).real == pytest.approx(1.0, abs=1e-12)


def test_sea_state_open_shell_mixture_rank():
    ms = enumerate_modes(3, Statistics.FERMION, 1)
    basis = enumerate_fock_basis(ms, 2)
    rho = initial_state(basis, InitialKind.FERMI_SEA,
                        TopShellPolicy.SYMMETRIC_MIXTURE)
    eig = np.linalg.eigvalsh(rho)
    assert (eig > 1e-9).sum() == 2
    assert eig.max() == pytest.approx(0.5, abs=1e-12)


def test_missing_component_raises():
    ms = enumerate_modes(6, Statistics.FERMION, 4)
    full = enumerate_fock_basis(ms, 4)
    sigs = sorted(initial_signatures(ms, 4, InitialKind.FERMI_SEA))
    sub = restrict_basis(full, [sigs[0]])  # drop one of the two sea blocks
    with pytest.raises(ValueError):
        initial_state(sub, InitialKind.FERMI_SEA)


def test_basis_dump_format(tmp_path):
    ms = enumerate_modes(2, Statistics.BOSON, 1)
    basis = enumerate_fock_basis(ms, 2)
    path = tmp_path / "basis.csv"
    basis.dump(path)
    raw = path.read_bytes().decode()
    assert "\r" not in raw
    lines = raw.strip().split("\n")
    assert len(lines) == basis.size
    assert tuple(int(x) for x in lines[0].split(",")) == basis.states[0]
