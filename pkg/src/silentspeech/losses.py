"""Training objectives: cross-modal and supervised-temporal contrastive
losses over a batch of latent embeddings, CTC, and their weighted sum.

All losses are differentiable through :mod:`silentspeech.autodiff` and are
plain functions of their inputs.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    COSINE_EPS,
    Tensor,
    as_tensor,
    concat,
    log_softmax,
    logsumexp,
    stack,
)

__all__ = [
    "LatentBatch",
    "LossWeights",
    "LossConfig",
    "PairingError",
    "MissingLabelError",
    "InfeasibleLabelError",
    "pairwise_sim",
    "crosscon",
    "suptcon",
    "ctc_loss",
    "combined_loss",
]

NEG_INF = -1.0e30


class PairingError(ValueError):
    """A column required a cross-modal partner but none was defined."""


class MissingLabelError(ValueError):
    """A column required a class label but none was defined."""


class InfeasibleLabelError(ValueError):
    """The label cannot be emitted within the available frames."""


@dataclass
class LatentBatch:
    """Concatenated latent embeddings with per-column annotations.

    ``embeddings`` is F x L (one column per latent frame). ``pairing[i]``
    gives the column of the other modality recorded at the same utterance
    and timestep, or None. The pairing is an involution where defined.
    """

    embeddings: Tensor
    modality: list[str]
    utterance_id: list
    timestep: list[int]
    class_label: list | None = None
    pairing: list[int | None] | None = None

    def __post_init__(self):
        self.embeddings = as_tensor(self.embeddings)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be an F x L matrix")
        L = self.num_columns
        for name in ("modality", "utterance_id", "timestep"):
            if len(getattr(self, name)) != L:
                raise ValueError(f"{name} must have one entry per column ({L})")
        if self.class_label is not None and len(self.class_label) != L:
            raise ValueError("class_label must have one entry per column")
        if self.pairing is not None:
            if len(self.pairing) != L:
                raise ValueError("pairing must have one entry per column")
            for i, j in enumerate(self.pairing):
                if j is None:
                    continue
                if self.pairing[j] != i:
                    raise PairingError(f"pairing is not an involution at column {i}")
                if self.modality[j] == self.modality[i]:
                    raise PairingError(f"columns {i},{j} are paired within one modality")

    @property
    def num_columns(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class LossWeights:
    """Nonnegative weights for the four loss components."""

    emg: float = 1.0
    audio: float = 1.0
    cross: float = 0.0
    sup: float = 0.0

    def __post_init__(self):
        for name in ("emg", "audio", "cross", "sup"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossConfig:
    """Shared loss knobs: contrastive temperature and the CTC blank index."""

    tau: float = 0.1
    ctc_blank_index: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def _similarity_matrix(batch: LatentBatch, tau: float) -> tuple[Tensor, Tensor]:
    """Cosine matrix C and similarity matrix S = exp(C / tau), both L x L."""
    Z = batch.embeddings
    if not np.all(np.isfinite(Z.data)):
        raise FloatingPointError("latent embeddings contain non-finite values")
    gram = Z.T @ Z
    norms = (Z * Z).sum(axis=0).sqrt()
    L = batch.num_columns
    outer = norms.reshape(L, 1) @ norms.reshape(1, L)
    cos = gram / (outer + COSINE_EPS)
    sim = (cos / tau).exp()
    return cos, sim


def pairwise_sim(batch: LatentBatch, tau: float = 0.1) -> Tensor:
    """Matrix of exp(cos(z_i, z_j) / tau) over all column pairs."""
    _, sim = _similarity_matrix(batch, tau)
    return sim


def crosscon(batch: LatentBatch, tau: float = 0.1) -> Tensor:
    """Cross-modal contrastive loss over paired columns.

    Every column must have a partner in the other modality; each of the L
    columns poses one classification problem whose positive is its partner
    and whose distractors are all other columns (both modalities):

        loss = (1/L) sum_i -log( sim(z_i, z_pair(i)) / sum_{j != i} sim(z_i, z_j) )
    """
    if batch.pairing is None or any(j is None for j in batch.pairing):
        missing = (
            [i for i, j in enumerate(batch.pairing) if j is None] if batch.pairing else "all"
        )
        raise PairingError(f"crosscon requires a partner for every column; missing: {missing}")
    L = batch.num_columns
    _, sim = _similarity_matrix(batch, tau)
    pos_mask = np.zeros((L, L))
    pos_mask[np.arange(L), np.asarray(batch.pairing)] = 1.0
    off_diag = 1.0 - np.eye(L)
    numerator = (sim * pos_mask).sum(axis=1)
    denominator = (sim * off_diag).sum(axis=1)
    return (denominator.log() - numerator.log()).mean()


def suptcon(batch: LatentBatch, tau: float = 0.1) -> Tensor:
    """Supervised temporal contrastive loss over class-labelled columns.

    The positive set p(i) holds every other column sharing i's class label,
    across modalities and utterances. Averaging over positives happens
    outside the log; columns with empty p(i) contribute zero but still
    count in the 1/L normalizer.
    """
    if batch.class_label is None or any(c is None for c in batch.class_label):
        raise MissingLabelError("suptcon requires a class label on every column")
    L = batch.num_columns
    labels = np.asarray(batch.class_label)
    pos_mask = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(pos_mask, 0.0)
    counts = pos_mask.sum(axis=1)
    if not np.any(counts > 0):
        raise MissingLabelError("suptcon requires at least one nonempty positive set")
    off_diag = 1.0 - np.eye(L)

    cos, sim = _similarity_matrix(batch, tau)
    log_sim = cos / tau  # log sim(z_i, z_q) without the round trip through exp
    pos_term = (log_sim * pos_mask).sum(axis=1) / np.maximum(counts, 1.0)
    log_denominator = (sim * off_diag).sum(axis=1).log()
    active = (counts > 0).astype(float)
    per_column = (log_denominator - pos_term) * active
    return per_column.sum() / float(L)


def _ctc_min_frames(label: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def ctc_loss(logits, label: Sequence[int], blank: int) -> Tensor:
    """Negative log-probability of a label under per-frame softmax, summed
    over all blank-augmented alignments (forward algorithm in log space).
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError("logits must be a T x K matrix")
    T, K = logits.shape
    label = list(label)
    if not (0 <= blank < K):
        raise ValueError(f"blank index {blank} outside [0, {K})")
    if any(not (0 <= s < K) or s == blank for s in label):
        raise ValueError("label symbols must be valid non-blank class indices")
    if T < _ctc_min_frames(label):
        raise InfeasibleLabelError(
            f"label of {len(label)} symbols (min frames {_ctc_min_frames(label)}) "
            f"cannot fit in {T} frames"
        )

    log_probs = log_softmax(logits, axis=1)
    ext = [blank]
    for s in label:
        ext.extend((s, blank))
    ext = np.asarray(ext)
    S = ext.size

    # alpha_0: only states 0 (blank) and 1 (first symbol) are reachable
    start_mask = np.full(S, NEG_INF)
    start_mask[0] = 0.0
    if S > 1:
        start_mask[1] = 0.0
    # skip transition s-2 -> s allowed only onto a symbol different from ext[s-2]
    skip_mask = np.full(S, NEG_INF)
    for s in range(2, S):
        if ext[s] != blank and ext[s] != ext[s - 2]:
            skip_mask[s] = 0.0

    neg1 = Tensor([NEG_INF])
    neg2 = Tensor([NEG_INF, NEG_INF])
    alpha = log_probs[0][ext] + start_mask
    for t in range(1, T):
        stay = alpha
        step = concat([neg1, alpha[: S - 1]]) if S > 1 else alpha + NEG_INF
        skip = (concat([neg2, alpha[: S - 2]]) if S > 2 else alpha + NEG_INF) + skip_mask
        alpha = logsumexp(stack([stay, step, skip], axis=0), axis=0) + log_probs[t][ext]

    tail = alpha[[S - 2, S - 1]] if S > 1 else alpha[[0]]
    total = logsumexp(tail)
    if total.item() <= NEG_INF / 2:
        raise InfeasibleLabelError("no feasible alignment has nonzero probability")
    return -total


def combined_loss(
    emg_ctc=None,
    audio_ctc=None,
    cross=None,
    sup=None,
    weights: LossWeights | None = None,
):
    """Weighted sum of the four components.

    Each component may be a value or a zero-argument callable; callables
    are only invoked when their weight is nonzero, so disabled components
    are never computed.
    """
    if weights is None:
        weights = LossWeights()
    parts = []
    for value, weight, name in (
        (emg_ctc, weights.emg, "emg_ctc"),
        (audio_ctc, weights.audio, "audio_ctc"),
        (cross, weights.cross, "cross"),
        (sup, weights.sup, "sup"),
    ):
        if weight == 0.0:
            continue
        if callable(value):
            value = value()
        if value is None:
            raise ValueError(f"component {name} has weight {weight} but no value")
        value = as_tensor(value)
        if not np.all(np.isfinite(value.data)):
            raise FloatingPointError(f"component {name} is not finite")
        parts.append(value * weight)
    if not parts:
        return Tensor(0.0)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total
