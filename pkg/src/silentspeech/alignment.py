"""Latent-space dynamic time warping.

Aligns a vocalized latent sequence onto a silent utterance's time base so
that per-frame pairings and class labels become available for the silent
condition. The alignment path is discrete and treated as a constant:
gradients flow through the selected columns, never through path choice.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections.abc import Sequence

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor
from .losses import LatentBatch

__all__ = [
    "WarpPath",
    "WarpedSequence",
    "distance_matrix",
    "dtw_align",
    "warp",
    "silent_pairing",
]


@dataclass(frozen=True)
class WarpPath:
    """Monotone alignment path between two sequences.

    Pairs run from (0, 0) to (T1-1, T2-1) with steps in
    {(1, 0), (0, 1), (1, 1)}; every index of both sequences is visited.
    """

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a warp path cannot be empty")
        if self.pairs[0] != (0, 0):
            raise ValueError("warp path must start at (0, 0)")
        for (a0, b0), (a1, b1) in zip(self.pairs, self.pairs[1:]):
            if (a1 - a0, b1 - b0) not in {(1, 0), (0, 1), (1, 1)}:
                raise ValueError(f"invalid step ({a0},{b0}) -> ({a1},{b1})")

    def validate_for(self, t1: int, t2: int) -> None:
        if self.pairs[-1] != (t1 - 1, t2 - 1):
            raise ValueError(f"warp path must end at ({t1 - 1}, {t2 - 1}), ends at {self.pairs[-1]}")


@dataclass
class WarpedSequence:
    """A vocalized sequence resampled onto the silent time base.

    Column t of ``embeddings`` is a column of the source sequence; the
    label at t belongs to that same source column.
    """

    embeddings: Tensor  # F x T1
    labels: list
    source_columns: list[int]  # chosen source column per output frame


def distance_matrix(z1, z2) -> np.ndarray:
    """Pairwise Euclidean distances between the columns of two F x T arrays."""
    a = np.asarray(z1.data if isinstance(z1, Tensor) else z1, dtype=np.float64)
    b = np.asarray(z2.data if isinstance(z2, Tensor) else z2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("inputs must be F x T matrices")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"feature dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    sq = (a * a).sum(axis=0)[:, None] + (b * b).sum(axis=0)[None, :] - 2.0 * (a.T @ b)
    return np.sqrt(np.maximum(sq, 0.0))


def dtw_align(distances: np.ndarray) -> tuple[WarpPath, float]:
    """Minimum-cost monotone path through a distance matrix.

    Steps are {(1, 0), (0, 1), (1, 1)} with no slope constraint. Ties are
    broken deterministically: diagonal first, then (0, 1), then (1, 0).
    """
    D = np.asarray(distances, dtype=np.float64)
    if D.ndim != 2 or D.size == 0:
        raise ValueError("distance matrix must be a nonempty 2-D array")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix must be finite")
    t1, t2 = D.shape
    acc = np.full((t1 + 1, t2 + 1), np.inf)
    acc[0, 0] = 0.0
    for a in range(1, t1 + 1):
        for b in range(1, t2 + 1):
            acc[a, b] = D[a - 1, b - 1] + min(acc[a - 1, b - 1], acc[a, b - 1], acc[a - 1, b])

    pairs = [(t1 - 1, t2 - 1)]
    a, b = t1, t2
    while (a, b) != (1, 1):
        # preference order: diagonal, then (0,1) i.e. left, then (1,0) i.e. up
        candidates = (
            (acc[a - 1, b - 1], (a - 1, b - 1)),
            (acc[a, b - 1], (a, b - 1)),
            (acc[a - 1, b], (a - 1, b)),
        )
        best = min(c[0] for c in candidates)
        for value, (na, nb) in candidates:
            if value == best:
                a, b = na, nb
                break
        pairs.append((a - 1, b - 1))
    pairs.reverse()
    return WarpPath(tuple(pairs)), float(acc[t1, t2])


def warp(z2, labels: Sequence, path: WarpPath, t1: int) -> WarpedSequence:
    """Resample a vocalized sequence onto the silent time base.

    For each silent frame the column of the LAST path pair with that first
    coordinate is kept, so each output frame carries a single hard label.
    """
    z2 = as_tensor(z2)
    t2 = z2.shape[1]
    if len(labels) != t2:
        raise ValueError(f"labels must have length {t2}, got {len(labels)}")
    path.validate_for(t1, t2)
    chosen = [0] * t1
    for a, b in path.pairs:
        chosen[a] = b  # later pairs overwrite: the last b per a wins
    warped = z2[:, np.asarray(chosen)]
    return WarpedSequence(warped, [labels[b] for b in chosen], chosen)


def silent_pairing(
    silent_latents,
    vocal_latents,
    vocal_labels: Sequence,
    utterance_id=0,
    vocal_modality: str = "audio",
) -> LatentBatch:
    """Pair silent frames with warped vocalized frames via latent DTW.

    Returns a batch fragment holding the silent columns followed by the
    warped vocalized columns, with the cross-modal pairing installed and
    the warped labels attached to both halves. The warp source defaults to
    the vocalized audio latents; pass ``vocal_modality="emg"`` to align
    against vocalized EMG latents instead (the warped columns are then
    tagged "emg_parallel" so the pairing still joins distinct streams).
    """
    silent_latents = as_tensor(silent_latents)
    vocal_latents = as_tensor(vocal_latents)
    t1 = silent_latents.shape[1]
    D = distance_matrix(silent_latents, vocal_latents)
    path, _ = dtw_align(D)
    warped = warp(vocal_latents, list(vocal_labels), path, t1)

    from .autodiff import concat  # local import to avoid cycle at module load

    embeddings = concat([silent_latents, warped.embeddings], axis=1)
    pairing = [t1 + t for t in range(t1)] + [t for t in range(t1)]
    warped_tag = "emg_parallel" if vocal_modality == "emg" else vocal_modality
    return LatentBatch(
        embeddings=embeddings,
        modality=["emg"] * t1 + [warped_tag] * t1,
        utterance_id=[utterance_id] * (2 * t1),
        timestep=list(range(t1)) * 2,
        class_label=list(warped.labels) * 2,
        pairing=pairing,
    )
