"""Tests for k-means client clustering."""

import numpy as np
import pytest
from memwall.cluster import (
    cluster_clients,
    distinct_profiles,
    initial_centers,
    least_capable,
    profile_features,
)
from memwall.exceptions import SelectionError
from memwall.models import OpKind
from memwall.selector import ClientProfile

from tests.oracles import lloyd, partition


def client(cid, mem, conv_time):
    return ClientProfile(cid, mem, {OpKind.CONV: conv_time, OpKind.RELU: conv_time / 4})


def blobs():
    """Three well separated groups of (memory, speed)."""
    rng = np.random.default_rng(0)
    clients = []
    centers = [(1_000, 2.0), (5_000, 1.0), (9_000, 0.5)]
    for group, (mem, conv_time) in enumerate(centers):
        for i in range(6):
            cid = group * 6 + i
            clients.append(
                client(cid, mem + int(rng.integers(0, 200)), conv_time * rng.uniform(0.95, 1.05))
            )
    return clients


class TestLeastCapable:
    """Tests for cluster representatives."""

    def test_lowest_memory_wins(self):
        """The member with the smallest budget represents the cluster."""
        members = [client(1, 500, 1.0), client(2, 300, 0.1), client(3, 900, 5.0)]
        assert least_capable(members).client_id == 2

    def test_speed_breaks_memory_ties(self):
        """Equal budgets fall back to the slower client."""
        members = [client(1, 500, 1.0), client(2, 500, 2.0)]
        assert least_capable(members).client_id == 2

    def test_id_breaks_full_ties(self):
        """Identical profiles fall back to the lower id."""
        members = [client(5, 500, 1.0), client(3, 500, 1.0)]
        assert least_capable(members).client_id == 3


class TestFeatures:
    """Tests for feature scaling and seeding."""

    def test_features_are_scaled(self):
        """Each column spans [0, 1]."""
        features = profile_features(blobs())
        assert features.shape == (18, 2)
        assert features.min(axis=0).tolist() == [0.0, 0.0]
        assert features.max(axis=0) == pytest.approx([1.0, 1.0])

    def test_initial_centers_are_distinct_rows(self):
        """Seeds are distinct feature rows chosen reproducibly."""
        features = profile_features(blobs())
        first = initial_centers(features, 3, seed=4)
        assert len(np.unique(first, axis=0)) == 3
        assert np.array_equal(first, initial_centers(features, 3, seed=4))
        rows = {tuple(row) for row in features}
        assert all(tuple(row) in rows for row in first)

    def test_too_few_distinct_profiles(self):
        """Duplicated profiles limit the number of clusters."""
        clients = [client(i, 500, 1.0) for i in range(4)] + [client(9, 800, 1.0)]
        assert distinct_profiles(clients) == 2
        with pytest.raises(SelectionError):
            cluster_clients(clients, 3)


class TestClusterClients:
    """Tests for cluster_clients."""

    def test_matches_plain_lloyd(self):
        """The partition equals plain Lloyd iteration from the same seeds."""
        clients = blobs()
        for seed in range(5):
            assignment = cluster_clients(clients, 3, seed=seed)
            features = profile_features(clients)
            labels = lloyd(features, initial_centers(features, 3, seed=seed))
            expected = partition(labels, [c.client_id for c in clients])
            assert {frozenset(m) for m in assignment.members} == expected

    def test_every_client_assigned_once(self):
        """Clusters partition the clients and are ordered by lowest member."""
        assignment = cluster_clients(blobs(), 3, seed=1)
        ids = [cid for members in assignment.members for cid in members]
        assert sorted(ids) == list(range(18))
        firsts = [members[0] for members in assignment.members]
        assert firsts == sorted(firsts)
        assert len(assignment) == 3

    def test_representatives_are_least_capable(self):
        """Each representative is the weakest member of its cluster."""
        clients = blobs()
        by_id = {c.client_id: c for c in clients}
        assignment = cluster_clients(clients, 3, seed=2)
        for members, rep in zip(assignment.members, assignment.representatives):
            assert rep == least_capable([by_id[cid] for cid in members]).client_id
            assert assignment.cluster_of(rep) == assignment.members.index(members)

    def test_input_order_irrelevant(self):
        """Shuffling the clients leaves the result unchanged."""
        clients = blobs()
        shuffled = [clients[i] for i in np.random.default_rng(9).permutation(len(clients))]
        assert cluster_clients(clients, 3, seed=7) == cluster_clients(shuffled, 3, seed=7)

    def test_invalid_k(self):
        """k must be between one and the number of clients."""
        with pytest.raises(SelectionError):
            cluster_clients(blobs(), 0)
        with pytest.raises(SelectionError):
            cluster_clients(blobs()[:2], 3)

    def test_unknown_client(self):
        """Looking up a client outside every cluster raises KeyError."""
        assignment = cluster_clients(blobs(), 2)
        with pytest.raises(KeyError):
            assignment.cluster_of(99)
