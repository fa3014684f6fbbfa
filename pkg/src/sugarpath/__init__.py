"""Reaction-network generation, an episodic MDP over it, and a recurrent PPO
agent that learns shortest synthesis paths (fructose to HMF by default)."""

from .molgraph import MolGraph, canonical_smiles, morgan_fingerprint, parse_smiles, write_smiles
from .network import ReactionNetwork, SpeciesFilter, expand
from .env import EnvConfig, ReactionEnv, make_env
from .rules import load_catalog

__version__ = "0.1.0"

FRUCTOSE = "OCC(=O)C(O)C(O)C(O)CO"
HMF = "O=CC1=CC=C(CO)O1"
