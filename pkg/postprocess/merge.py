"""
Rectangle grouping: O(n^2) similarity clustering of candidate boxes
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from detector.types import VehicleBox
from exceptions import ConfigurationError


@dataclass(frozen=True)
class MergeParams:
    """
    Attributes:
        eps: Relative corner tolerance
        min_group: Clusters with fewer members are dropped
    """

    eps: float = 0.2
    min_group: int = 2

    def __post_init__(self):
        if self.eps < 0:
            raise ConfigurationError(f"merge eps must be >= 0, got {self.eps}")
        if self.min_group < 1:
            raise ConfigurationError(f"merge min_group must be >= 1, got {self.min_group}")


def similarity_matrix(coords: np.ndarray, eps: float) -> np.ndarray:
    """
    Pairwise similarity of (n, 4) rects

    Two rects are similar when every corner coordinate differs by at most
    eps times the mean of their average width and average height.
    """
    widths = coords[:, 2] - coords[:, 0]
    heights = coords[:, 3] - coords[:, 1]
    side = (widths[:, np.newaxis] + widths[np.newaxis, :] + heights[:, np.newaxis] + heights[np.newaxis, :]) / 4.0
    delta = eps * side
    diffs = np.abs(coords[:, np.newaxis, :] - coords[np.newaxis, :, :])
    return np.all(diffs <= delta[:, :, np.newaxis], axis=2)


def cluster_labels(similar: np.ndarray) -> np.ndarray:
    """Connected components of a boolean adjacency, labelled by their smallest member"""
    _, labels = connected_components(csr_matrix(similar), directed=False)
    first = {}
    for index, label in enumerate(labels):
        first.setdefault(label, len(first))
    return np.array([first[label] for label in labels], dtype=np.int64)


def merge_groups(coords: np.ndarray, eps: float) -> np.ndarray:
    """
    Group labels that are stable under re-merging

    Starts from the similarity closure of ``coords`` and keeps joining groups
    whose mean rects are similar until no two group means are. Labels follow
    the first member of each group.
    """
    groups = cluster_labels(similarity_matrix(coords, eps))
    while True:
        count = int(groups.max()) + 1
        means = np.array([coords[groups == g].mean(axis=0) for g in range(count)])
        joined = cluster_labels(similarity_matrix(means, eps))
        if int(joined.max()) + 1 == count:
            return groups
        groups = joined[groups]


def merge_boxes(boxes: Sequence[VehicleBox], params: MergeParams = MergeParams()) -> List[VehicleBox]:
    """
    Group similar boxes and replace every large enough group by its mean

    Groups are merged to a fixed point, so no two outputs are similar and
    merging the output again with min_group 1 returns it unchanged.

    Args:
        boxes: Candidate boxes
        params: Similarity tolerance and minimum group size

    Returns:
        Merged boxes ordered by the first member of each group; coordinates
        and depth are group means, score is the group maximum
    """
    if not boxes:
        return []
    coords = np.array([box.rect for box in boxes], dtype=np.float64)
    depths = np.array([box.depth for box in boxes], dtype=np.float64)
    scores = np.array([box.score for box in boxes], dtype=np.float64)

    labels = merge_groups(coords, params.eps)
    merged: List[VehicleBox] = []
    for label in range(int(labels.max()) + 1):
        members = labels == label
        if np.count_nonzero(members) < params.min_group:
            continue
        x1, y1, x2, y2 = coords[members].mean(axis=0)
        merged.append(VehicleBox(
            float(x1), float(y1), float(x2), float(y2),
            depth=float(depths[members].mean()),
            score=float(scores[members].max()),
        ))
    return merged
