import pytest

from sugarpath import network, rules
from sugarpath.molgraph import canonical_smiles, parse_smiles
from sugarpath.network import Reaction, ReactionNetwork, Species

FRUCTOSE = "OCC(=O)C(O)C(O)C(O)CO"
HMF = "OCC1=CC=C(C=O)O1"
WATER = "O"
HYDRONIUM = "[OH3+]"


def toy_network(smiles, edges, initial=(0,), goal=()):
    """Hand-made network: ``edges`` are (src, dst) species index pairs.

    Template ids are t00, t01, ... in edge order, site key is the reactant.
    """
    species = []
    for i, s in enumerate(smiles):
        mol = parse_smiles(s)
        species.append(Species(i, canonical_smiles(mol), mol.charge, mol.formula_string()))
    reactions = [
        Reaction(k, f"t{k:02d}", species[a].canonical, (a,), (b,), (), ())
        for k, (a, b) in enumerate(edges)
    ]
    return ReactionNetwork(species, reactions, tuple(initial), tuple(goal), {"catalog": "0" * 16})


@pytest.fixture(scope="session")
def catalog():
    return rules.load_catalog()


@pytest.fixture(scope="session")
def fructose_net(catalog):
    init = [parse_smiles(s) for s in (FRUCTOSE, WATER, HYDRONIUM)]
    return network.expand(init, catalog, goal=parse_smiles(HMF))


@pytest.fixture(scope="session")
def reversed_net(fructose_net):
    return network.reverse(fructose_net)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
