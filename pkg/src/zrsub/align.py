"""Dynamic time warping over frame sequences.

Steps (1,0), (0,1), (1,1) with unit weights; the normalized cost divides the
accumulated frame distance by the number of cells on the path. When
several paths reach the minimal total, the shortest one is kept, so the
normalized cost is well defined on exact ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numba
import numpy as np

from .corpus import PairEntry


@dataclass(frozen=True)
class DtwResult:
    path: list[tuple[int, int]]
    total_cost: float
    normalized_cost: float


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 1.0
    return float(1.0 - np.dot(x, y) / (nx * ny))


def cosine_distance_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    zx, zy = nx == 0, ny == 0
    nx[zx] = 1.0
    ny[zy] = 1.0
    D = 1.0 - (X / nx[:, None]) @ (Y / ny[:, None]).T
    D[zx, :] = 1.0
    D[:, zy] = 1.0
    return D


def euclidean_distance_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d2 = (X ** 2).sum(1)[:, None] + (Y ** 2).sum(1)[None, :] - 2 * X @ Y.T
    return np.sqrt(np.maximum(d2, 0.0))


DISTANCES: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "cosine": cosine_distance_matrix,
    "euclidean": euclidean_distance_matrix,
}


@numba.njit(cache=True)
def _accumulate(D, band):
    n, m = D.shape
    acc = np.full((n, m), np.inf)
    length = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if band >= 0 and abs(i * (m - 1) - j * (n - 1)) > band * max(n - 1, m - 1):
                continue
            if i == 0 and j == 0:
                acc[0, 0] = D[0, 0]
                length[0, 0] = 1
                continue
            best = np.inf
            blen = 0
            # among equal totals the shorter path wins; then diagonal, vertical, horizontal
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
                blen = length[i - 1, j - 1]
            if i > 0:
                a, l = acc[i - 1, j], length[i - 1, j]
                if a < best or (a == best and l < blen):
                    best, blen = a, l
            if j > 0:
                a, l = acc[i, j - 1], length[i, j - 1]
                if a < best or (a == best and l < blen):
                    best, blen = a, l
            acc[i, j] = best + D[i, j]
            length[i, j] = blen + 1
    return acc, length


@numba.njit(cache=True)
def _normalized_cost(D):
    acc, length = _accumulate(D, -1)
    n, m = D.shape
    return acc[n - 1, m - 1] / length[n - 1, m - 1]


def _backtrack(acc: np.ndarray, length: np.ndarray) -> list[tuple[int, int]]:
    """Retrace the choices made by ``_accumulate`` (same ordering of candidates)."""
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], length[i - 1, j - 1], 0, (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], length[i - 1, j], 1, (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], length[i, j - 1], 2, (i, j - 1)))
        *_, (i, j) = min(candidates)
        path.append((i, j))
    return path[::-1]


def dtw_matrix(D: np.ndarray, band: float | None = None) -> DtwResult:
    """DTW over a precomputed frame distance matrix.

    ``band`` is an optional Sakoe-Chiba half-width as a fraction of the
    longer sequence, measured around the corner-to-corner diagonal.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] < 1 or D.shape[1] < 1:
        raise ValueError("DTW needs two non-empty sequences")
    acc, length = _accumulate(D, -1.0 if band is None else float(band))
    if not np.isfinite(acc[-1, -1]):
        raise ValueError("no admissible path inside the band")
    path = _backtrack(acc, length)
    total = float(sum(D[i, j] for i, j in path))
    return DtwResult(path, total, total / len(path))


def dtw(X, Y, distance: str | Callable = "cosine", band: float | None = None) -> DtwResult:
    X = getattr(X, "data", X)
    Y = getattr(Y, "data", Y)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("DTW needs two non-empty sequences")
    fn = DISTANCES[distance] if isinstance(distance, str) else distance
    return dtw_matrix(fn(np.asarray(X), np.asarray(Y)), band)


def dtw_cost(X: np.ndarray, Y: np.ndarray, distance: str = "cosine") -> float:
    """Normalized DTW cost only; the fast path used by the evaluations."""
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("DTW needs two non-empty sequences")
    return float(_normalized_cost(np.ascontiguousarray(DISTANCES[distance](X, Y))))


def align_frame_pairs(pairs: Iterable[PairEntry], store, distance: str = "cosine") -> tuple[np.ndarray, np.ndarray]:
    """Frame couples along each pair's DTW path, emitted in both directions.

    Returns ``(inputs, targets)`` arrays of equal shape.
    """
    inputs, targets = [], []
    for pair in pairs:
        A = store.segment(pair.a.utterance, pair.a.start, pair.a.end)
        B = store.segment(pair.b.utterance, pair.b.start, pair.b.end)
        path = np.array(dtw(A, B, distance).path)
        a, b = A[path[:, 0]], B[path[:, 1]]
        inputs += [a, b]
        targets += [b, a]
    if not inputs:
        dim = store.dim if len(store) else 0
        return np.zeros((0, dim)), np.zeros((0, dim))
    return np.concatenate(inputs), np.concatenate(targets)


def write_path_csv(path: Path | str, result: DtwResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j\n")
        for i, j in result.path:
            fh.write(f"{i},{j}\n")
