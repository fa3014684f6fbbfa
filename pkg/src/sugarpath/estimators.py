"""scikit-learn style wrappers around the fingerprint featurizer and the agents.

``X`` for the agents is a ReactionEnv (or a list holding one); ``predict``
returns the greedy action-index path from the env's start state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import agent
from .env import GOAL, ReactionEnv
from .molgraph import MolGraph, morgan_fingerprint, parse_smiles


class MorganFingerprinter(TransformerMixin, BaseEstimator):
    """SMILES strings (or MolGraphs) -> (n, n_bits) uint8 matrix."""

    def __init__(self, radius: int = 2, n_bits: int = 1000):
        self.radius = radius
        self.n_bits = n_bits

    def fit(self, X, y=None):
        if self.radius < 0 or self.n_bits < 1:
            raise ValueError("radius must be >= 0 and n_bits >= 1")
        self.n_features_out_ = self.n_bits
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        rows = []
        for item in X:
            mol = item if isinstance(item, MolGraph) else parse_smiles(str(item))
            rows.append(morgan_fingerprint(mol, self.radius, self.n_bits))
        return np.array(rows, dtype=np.uint8).reshape(len(rows), self.n_bits)


def _env_of(X) -> ReactionEnv:
    if isinstance(X, ReactionEnv):
        return X
    if isinstance(X, (list, tuple)) and len(X) == 1 and isinstance(X[0], ReactionEnv):
        return X[0]
    raise TypeError("X must be a ReactionEnv")


class RecurrentPPOAgent(BaseEstimator):
    def __init__(self, budget: int = 50_000, seed: int = 0, hidden: int = 128, embed: int = 64,
                 score_hidden: int = 64, lr: float = 3e-4, batch_episodes: int = 32,
                 target_length: int | None = None):
        self.budget = budget
        self.seed = seed
        self.hidden = hidden
        self.embed = embed
        self.score_hidden = score_hidden
        self.lr = lr
        self.batch_episodes = batch_episodes
        self.target_length = target_length

    def fit(self, X, y=None):
        env = _env_of(X)
        cfg = agent.PPOConfig(embed=self.embed, hidden=self.hidden, score_hidden=self.score_hidden,
                              lr=self.lr, batch_episodes=self.batch_episodes)
        stop = agent.greedy_converged(env, self.target_length) if self.target_length else None
        res = agent.train(env, budget=self.budget, seed=self.seed, cfg=cfg, stop=stop)
        self.params_ = res.params
        self.log_ = res.log
        self.best_len_ = res.best_len
        return self

    def predict(self, X) -> list[int]:
        check_is_fitted(self, "params_")
        _, actions, _ = agent.greedy_rollout(_env_of(X), self.params_)
        return actions

    def score(self, X, y=None) -> float:
        """1 + 1/T for a goal-reaching greedy rollout, else -1."""
        check_is_fitted(self, "params_")
        final, _, _ = agent.greedy_rollout(_env_of(X), self.params_)
        return final.reward if final.outcome == GOAL else -1.0


class TabularQAgent(BaseEstimator):
    def __init__(self, episodes: int = 5000, seed: int = 0, alpha: float = 0.5, gamma: float = 0.99,
                 epsilon: float = 0.2):
        self.episodes = episodes
        self.seed = seed
        self.alpha = alpha
        self.gamma = gamma
        self.epsilon = epsilon

    def fit(self, X, y=None):
        self.q_, self.log_ = agent.tabular_q(_env_of(X), self.episodes, self.seed, self.alpha,
                                             self.gamma, self.epsilon)
        return self

    def predict(self, X) -> list[int]:
        if not hasattr(self, "q_"):
            raise NotFittedError("TabularQAgent is not fitted")
        env = _env_of(X)
        state, _, legal = env.reset()
        actions = []
        while not state.done:
            q = self.q_.get((state.key, state.t))
            a = int(np.argmax(q)) if q is not None else 0
            state, _, _, _ = env.step(state, a)
            actions.append(a)
        return actions
