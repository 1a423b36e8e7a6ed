"""Independent reference computations used as test oracles.

These stay deliberately naive and separate from the package code paths they
check.
"""

import numpy as np


def star_discrepancy_grid(points: np.ndarray, grid: int = 64) -> float:
    """Grid-box estimate of the star discrepancy of 2-D points in [0,1]^2.

    Scans anchored boxes [0,a) x [0,b) with a, b on a regular grid and
    returns the largest |empirical fraction - box volume|.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=grid, range=[[0, 1], [0, 1]])
    cum = hist.cumsum(axis=0).cumsum(axis=1) / n
    edges = np.arange(1, grid + 1) / grid
    volumes = np.outer(edges, edges)
    return float(np.abs(cum - volumes).max())


def hand_radical_inverse(index: int, base: int) -> float:
    """Digit-by-digit radical inverse, written as it would be done on paper."""
    digits = []
    n = index
    while n > 0:
        digits.append(n % base)
        n //= base
    return sum(d * base ** -(i + 1) for i, d in enumerate(digits))


def first_pc_eigh(matrix: np.ndarray) -> np.ndarray:
    """First principal component via a dense eigensolver on the covariance."""
    centered = matrix - matrix.mean(axis=0)
    cov = centered.T @ centered
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    pc = eigenvectors[:, np.argmax(eigenvalues)]
    if pc[np.argmax(np.abs(pc))] < 0:
        pc = -pc
    return pc


def brute_force_combo_counts(rows: list[dict], columns: list[str], max_k: int) -> dict:
    """Count every value assignment over subsets of ``columns`` up to max_k
    by scanning all rows for each candidate, the slow direct way."""
    from itertools import combinations

    counts = {}
    seen_assignments = set()
    for row in rows:
        for k in range(1, max_k + 1):
            for cols in combinations(columns, k):
                seen_assignments.add(tuple((c, row[c]) for c in cols))
    for assignment in seen_assignments:
        count = 0
        for row in rows:
            if all(row[c] == v for c, v in assignment):
                count += 1
        counts[assignment] = count
    return counts
