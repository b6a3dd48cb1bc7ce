"""Shared constructors for tests that need hand-made policies."""

import numpy as np

from cacc_marl import a2c, nn


def constant_learners(action: int, count: int = 4) -> list:
    """Learners whose greedy and sampled action is (almost surely) ``action``."""
    out = []
    for _ in range(count):
        actor = np.zeros(nn.ACTOR.n_params)
        nn.unflatten(actor, nn.ACTOR)[-1][1][action] = 50.0
        out.append(a2c.AgentLearner(actor, np.zeros(nn.CRITIC.n_params)))
    return out
