"""
Shared fixtures: random membership graphs.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph_core import ingest_memberships

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')


def random_edges(seed, num_groups, num_users, density):
    """Every group gets at least one member."""
    rng = np.random.default_rng(seed)
    edges = []
    for g in range(num_groups):
        members = np.flatnonzero(rng.random(num_users) < density)
        if members.size == 0:
            members = [int(rng.integers(num_users))]
        edges.extend((f"g{g:03d}", f"u{u}") for u in members)
    return edges


@pytest.fixture
def graph_factory():
    def make(seed=0, num_groups=10, num_users=100, density=0.2):
        return ingest_memberships(random_edges(seed, num_groups, num_users, density))
    return make


@pytest.fixture
def small_graph():
    edges = [
        ('g1', 'alice'), ('g1', 'bob'), ('g1', 'carol'),
        ('g2', 'bob'), ('g2', 'carol'), ('g2', 'dave'),
        ('g3', 'dave'), ('g3', 'erin'),
        ('g4', 'alice'), ('g4', 'erin'), ('g4', 'frank'),
    ]
    return ingest_memberships(edges)
