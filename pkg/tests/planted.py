"""Fixture generator: field matrices with known clusters and noise counts.

Plants fully-1 blocks on chosen label sets and a chosen number of noise
cells at (cluster label, unused label) positions, so the greedy scan must
recover exactly the planted structure and the per-filter noise equals the
planted count by construction.
"""

from __future__ import annotations

import numpy as np


def planted_matrix(
    label_count: int, clusters: list[list[int]], noise_count: int
) -> np.ndarray:
    matrix = np.zeros((label_count, label_count), dtype=np.float32)
    cluster_labels = sorted({label for part in clusters for label in part})
    for part in clusters:
        matrix[np.ix_(part, part)] = 1.0
    free = [j for j in range(label_count) if j not in cluster_labels]
    cells = [(i, j) for i in cluster_labels for j in free]
    if noise_count > len(cells):
        raise ValueError(f"cannot place {noise_count} noise cells, only {len(cells)} slots")
    for i, j in cells[:noise_count]:
        matrix[i, j] = 0.5
    return matrix


def table_row_layer(label_count: int = 100) -> list[np.ndarray]:
    """Ten filters whose aggregate statistics are exactly (16.3, 2.6, 2.0).

    Six filters carry three size-2 clusters, four carry two; noise counts
    sum to 163. Mean noise 16.3, mean clusters per filter 26/10 = 2.6,
    pooled mean cluster size 52/26 = 2.0.
    """
    matrices = []
    noise_counts = [17, 17, 17, 16, 16, 16, 16, 16, 16, 16]
    for index, noise in enumerate(noise_counts):
        cluster_count = 3 if index < 6 else 2
        clusters = [[2 * c, 2 * c + 1] for c in range(cluster_count)]
        matrices.append(planted_matrix(label_count, clusters, noise))
    return matrices
