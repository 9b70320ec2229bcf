"""k-means grouping of clients by memory budget and computing utility."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from sklearn.cluster import KMeans
from sklearn.preprocessing import MinMaxScaler

from memwall.exceptions import SelectionError
from memwall.models import OpKind
from memwall.selector import ClientProfile, comp_stat

logger = logging.getLogger(__name__)

MAX_ITER = 300


@dataclass(frozen=True)
class ClusterAssignment:
    """Clusters ordered by their lowest member id.

    ``representatives[i]`` is the least capable member of ``members[i]``: lowest memory budget,
    then lowest computing utility, then lowest id.
    """

    members: tuple[tuple[int, ...], ...]
    representatives: tuple[int, ...]
    centers: npt.NDArray[np.float64] = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.members)

    def cluster_of(self, client_id: int) -> int:
        for index, ids in enumerate(self.members):
            if client_id in ids:
                return index
        raise KeyError(client_id)


def least_capable(
    profiles: Sequence[ClientProfile], required_kinds: Iterable[OpKind] | None = None
) -> ClientProfile:
    """Lowest memory budget, then lowest computing utility, then lowest id."""
    kinds = None if required_kinds is None else list(required_kinds)
    return min(profiles, key=lambda p: (p.mem_budget, comp_stat(p.op_times, kinds), p.client_id))


def profile_features(
    profiles: Sequence[ClientProfile], required_kinds: Iterable[OpKind] | None = None
) -> npt.NDArray[np.float64]:
    """Rows of ``(mem_budget, comp_stat)`` scaled to [0, 1] per column."""
    kinds = None if required_kinds is None else list(required_kinds)
    raw = np.array(
        [[float(p.mem_budget), comp_stat(p.op_times, kinds)] for p in profiles], dtype=np.float64
    )
    scaled: npt.NDArray[np.float64] = MinMaxScaler().fit_transform(raw)
    return scaled


def initial_centers(
    features: npt.NDArray[np.float64], k: int, seed: int = 0
) -> npt.NDArray[np.float64]:
    """``k`` distinct feature rows picked with a seeded generator.

    Raises:
        SelectionError: If there are fewer than ``k`` distinct rows.
    """
    distinct = np.unique(features, axis=0)
    if k > len(distinct):
        raise SelectionError(f"cannot form {k} clusters from {len(distinct)} distinct profiles")
    picked = np.random.default_rng(seed).choice(len(distinct), size=k, replace=False)
    centers: npt.NDArray[np.float64] = distinct[np.sort(picked)]
    return centers


def cluster_clients(
    profiles: Sequence[ClientProfile],
    k: int,
    seed: int = 0,
    required_kinds: Iterable[OpKind] | None = None,
) -> ClusterAssignment:
    """Partition clients into ``k`` clusters with Lloyd's k-means.

    Features are min-max normalized ``(mem_budget, comp_stat)``; initial centers come from
    :func:`initial_centers`, so the result depends only on the profiles and the seed.

    Raises:
        SelectionError: If ``k`` exceeds the number of clients or of distinct profiles.
    """
    if k < 1 or k > len(profiles):
        raise SelectionError(f"cannot form {k} clusters from {len(profiles)} clients")
    ordered = sorted(profiles, key=lambda p: p.client_id)
    kinds = None if required_kinds is None else list(required_kinds)
    features = profile_features(ordered, kinds)
    model = KMeans(
        n_clusters=k,
        init=initial_centers(features, k, seed),
        n_init=1,
        max_iter=MAX_ITER,
        tol=0.0,
        algorithm="lloyd",
    ).fit(features)

    grouped: dict[int, list[ClientProfile]] = {}
    for profile, label in zip(ordered, model.labels_):
        grouped.setdefault(int(label), []).append(profile)
    clusters = sorted(grouped.values(), key=lambda members: members[0].client_id)

    assignment = ClusterAssignment(
        members=tuple(tuple(p.client_id for p in members) for members in clusters),
        representatives=tuple(least_capable(members, kinds).client_id for members in clusters),
        centers=np.asarray(model.cluster_centers_, dtype=np.float64),
    )
    logger.debug("clustered %d clients into %d groups", len(ordered), len(assignment))
    return assignment


def distinct_profiles(
    profiles: Sequence[ClientProfile], required_kinds: Iterable[OpKind] | None = None
) -> int:
    """Number of distinct clustering feature rows; the largest usable ``k``."""
    if not profiles:
        return 0
    return len(np.unique(profile_features(profiles, required_kinds), axis=0))
