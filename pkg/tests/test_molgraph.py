import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sugarpath.molgraph import (
    Atom,
    Bond,
    DisconnectedGraphError,
    MolGraph,
    RingClosureError,
    SmilesSyntaxError,
    UnsupportedFeatureError,
    ValenceError,
    canonical_smiles,
    canonicalize,
    morgan_fingerprint,
    parse_smiles,
    write_smiles,
)

from conftest import FRUCTOSE, HMF
from helpers import molecules, nx_isomorphic, reference_fingerprint


def test_water():
    m = parse_smiles("O")
    assert m.n_atoms == 1
    assert m.atoms[0] == Atom("O", 0, 2)
    assert write_smiles(m) == "O"


def test_hydronium():
    m = parse_smiles("[OH3+]")
    assert m.atoms[0] == Atom("O", 1, 3)
    assert m.charge == 1
    assert write_smiles(m) == "[OH3+]"


def test_fructose_formula():
    m = parse_smiles(FRUCTOSE)
    assert m.formula() == {"C": 6, "O": 6, "H": 12}
    assert sum(b.order == 2 for b in m.bonds) == 1


def test_hmf_kekule_formula():
    m = parse_smiles(HMF)
    assert m.formula_string() == "C6H6O3"
    assert len(m.ring_atoms) == 5


@pytest.mark.parametrize("text", ["OCc1ccc(C=O)o1", "C[C@H](O)C", "C/C=C/C", "CC#C", "C.O", "CN", "[13CH4]"])
def test_unsupported(text):
    with pytest.raises(UnsupportedFeatureError):
        parse_smiles(text)


@pytest.mark.parametrize("text", ["", "C(", "C)", "C==C", "(C)", "C=", "[C", "C()C", "[OH++]"])
def test_syntax_errors(text):
    with pytest.raises(SmilesSyntaxError) as info:
        parse_smiles(text)
    assert info.value.position >= 0


def test_ring_closure_unmatched():
    with pytest.raises(RingClosureError):
        parse_smiles("C1CC")


def test_valence_error_names_atom():
    with pytest.raises(ValenceError) as info:
        parse_smiles("CO(C)C")
    assert info.value.atom_index == 1


def test_double_charge_unsupported():
    with pytest.raises(UnsupportedFeatureError):
        parse_smiles("[O+2]")


def test_percent_ring_labels():
    assert canonical_smiles(parse_smiles("C%12CCCO%12")) == canonical_smiles(parse_smiles("C1CCCO1"))


def test_canonical_reordering():
    # same open-chain fructose written from the other end
    a = canonicalize(parse_smiles(FRUCTOSE))
    b = canonicalize(parse_smiles("C(O)C(O)C(O)C(O)C(=O)CO"))
    assert a == b


def test_water_vs_hydronium():
    assert canonicalize(parse_smiles("O")) != canonicalize(parse_smiles("[OH3+]"))


def test_disconnected_rejected():
    m = MolGraph([Atom("O", 0, 2), Atom("O", 0, 2)])
    with pytest.raises(DisconnectedGraphError):
        canonicalize(m)


def test_fructose_permutations_one_form():
    m = parse_smiles(FRUCTOSE)
    rng = np.random.default_rng(7)
    forms = {canonical_smiles(m.permute(rng.permutation(m.n_atoms).tolist())) for _ in range(200)}
    assert len(forms) == 1


@settings(max_examples=150, deadline=None)
@given(molecules())
def test_round_trip(mol):
    if not mol.is_connected():
        return
    again = parse_smiles(write_smiles(mol))
    assert nx_isomorphic(mol, again)


@settings(max_examples=150, deadline=None)
@given(molecules(), st.randoms(use_true_random=False))
def test_canonical_permutation_invariant(mol, rnd):
    perm = list(range(mol.n_atoms))
    rnd.shuffle(perm)
    assert canonical_smiles(mol) == canonical_smiles(mol.permute(perm))


@settings(max_examples=150, deadline=None)
@given(molecules(max_atoms=7), molecules(max_atoms=7))
def test_canonical_iff_isomorphic(a, b):
    assert (canonical_smiles(a) == canonical_smiles(b)) == nx_isomorphic(a, b)


@settings(max_examples=100, deadline=None)
@given(molecules(max_atoms=7))
def test_canonical_detects_small_edits(mol):
    # flip one hydrogen/charge pair on an oxygen, if any: a different molecule
    for i, a in enumerate(mol.atoms):
        if a.element == "O" and a.formal_charge == 0 and mol.bond_order_sum(i) <= 2:
            atoms = list(mol.atoms)
            atoms[i] = Atom("O", 1, a.implicit_h + 1)
            other = MolGraph(atoms, mol.bonds)
            assert canonical_smiles(other) != canonical_smiles(mol)
            return


def test_fingerprint_single_atom():
    fp = morgan_fingerprint(parse_smiles("O"), radius=0, n_bits=8)
    assert fp.sum() == 1
    assert len(fp) == 8


def test_fingerprint_invariance_and_difference():
    m = parse_smiles(FRUCTOSE)
    perm = list(reversed(range(m.n_atoms)))
    assert np.array_equal(morgan_fingerprint(m), morgan_fingerprint(m.permute(perm)))
    assert not np.array_equal(morgan_fingerprint(m), morgan_fingerprint(parse_smiles(HMF)))


def test_fingerprint_read_only():
    fp = morgan_fingerprint(parse_smiles("CO"))
    with pytest.raises(ValueError):
        fp[0] = 1


@settings(max_examples=100, deadline=None)
@given(molecules(), st.integers(0, 3), st.integers(1, 2048))
def test_fingerprint_matches_reference(mol, radius, n_bits):
    fp = morgan_fingerprint(mol, radius, n_bits)
    assert len(fp) == n_bits
    assert set(np.flatnonzero(fp).tolist()) == reference_fingerprint(mol, radius, n_bits)


@settings(max_examples=50, deadline=None)
@given(molecules(), molecules())
def test_or_fold_popcount(a, b):
    fa, fb = morgan_fingerprint(a), morgan_fingerprint(b)
    both = fa | fb
    assert max(fa.sum(), fb.sum()) <= both.sum() <= fa.sum() + fb.sum()


def test_valence_checked_on_construction():
    with pytest.raises(ValenceError):
        MolGraph([Atom("O", 0, 2), Atom("C", 0, 3)], [Bond(0, 1, 1)])


def test_bond_pair_unique():
    with pytest.raises(ValueError):
        MolGraph([Atom("C", 0, 2), Atom("C", 0, 2)], [Bond(0, 1, 1), Bond(1, 0, 1)])
