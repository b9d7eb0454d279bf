"""Greedy class-weighted bin packing for minibatch construction.

Variable-length items are packed into bins under a total-length cap while
a seeded sampler targets per-class proportions. Every bin is forced to
contain at least one item of each required class; a per-class debt
counter compensates the proportions for those forced additions. A second
phase first-fits leftovers into existing bins until a run of consecutive
failures, and whatever remains is discarded and reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections.abc import Iterator, Sequence

import numpy as np

__all__ = [
    "CLASS_SILENT",
    "CLASS_VOCAL",
    "CLASS_AUDIO",
    "DEFAULT_PROPORTIONS",
    "PackingItem",
    "PackingConfig",
    "Bin",
    "PackReport",
    "balanced_proportions",
    "pack",
    "epoch_stream",
]

CLASS_SILENT = "GaddySilent"
CLASS_VOCAL = "GaddyVocal"
CLASS_AUDIO = "LibriSpeech"

# Per-class sampling shares for (silent, vocalized, audio-only) used by
# default; silent examples are scarce, audio-only examples abundant.
DEFAULT_PROPORTIONS = {CLASS_SILENT: 0.112, CLASS_VOCAL: 0.388, CLASS_AUDIO: 0.5}

# Alternative split that equalizes expected EMG and audio-only utterance
# counts per batch; its published figures sum to 0.999 and are
# renormalized on use.
BALANCED_PROPORTIONS = {CLASS_SILENT: 0.183, CLASS_VOCAL: 0.633, CLASS_AUDIO: 0.183}


def balanced_proportions() -> dict[str, float]:
    """EMG/audio-balanced class shares (renormalized to sum to 1)."""
    total = sum(BALANCED_PROPORTIONS.values())
    return {k: v / total for k, v in BALANCED_PROPORTIONS.items()}


@dataclass(frozen=True)
class PackingItem:
    """One packable example: corpus index, length in timesteps, class tag."""

    index: int
    length: int
    class_tag: str

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"item {self.index} has nonpositive length {self.length}")


@dataclass
class PackingConfig:
    """Packing knobs: length cap, class shares, hard constraints, RNG seed."""

    max_len: int = 128_000
    proportions: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PROPORTIONS))
    required_classes: tuple[str, ...] = (CLASS_SILENT,)
    failure_threshold: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.max_len <= 0:
            raise ValueError("max_len must be positive")
        if self.failure_threshold <= 0:
            raise ValueError("failure_threshold must be positive")
        total = sum(self.proportions.values())
        if any(p < 0 for p in self.proportions.values()):
            raise ValueError("proportions must be nonnegative")
        if abs(total - 1.0) > 1e-3:
            raise ValueError(f"proportions must sum to ~1, got {total}")
        # renormalize exactly; published presets may sum to 0.999
        self.proportions = {k: v / total for k, v in sorted(self.proportions.items())}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PackingConfig":
        """Build from config-file keys: max_len, proportions, required_classes, seed."""
        kwargs = {}
        if "max_len" in mapping:
            kwargs["max_len"] = int(mapping["max_len"])
        if "proportions" in mapping:
            value = mapping["proportions"]
            if isinstance(value, str):
                parts = [float(x) for x in value.split(",")]
                order = (CLASS_SILENT, CLASS_VOCAL, CLASS_AUDIO)
                value = dict(zip(order, parts))
            kwargs["proportions"] = dict(value)
        if "required_classes" in mapping:
            value = mapping["required_classes"]
            if isinstance(value, str):
                value = tuple(x.strip() for x in value.split(",") if x.strip())
            kwargs["required_classes"] = tuple(value)
        if "failure_threshold" in mapping:
            kwargs["failure_threshold"] = int(mapping["failure_threshold"])
        if "seed" in mapping:
            kwargs["seed"] = int(mapping["seed"])
        return cls(**kwargs)


@dataclass
class Bin:
    """Ordered item indices plus their cached length sum."""

    items: list[int] = field(default_factory=list)
    total_length: int = 0

    def add(self, item: PackingItem) -> None:
        self.items.append(item.index)
        self.total_length += item.length


@dataclass
class PackReport:
    """What did not make it into bins, and why."""

    discarded: list[int] = field(default_factory=list)
    rejected_too_long: list[int] = field(default_factory=list)
    dropped_incomplete_bins: list[int] = field(default_factory=list)


class ConfigurationError(ValueError):
    """The item population cannot satisfy the packing configuration."""


def _first_fit(bins: list[Bin], item: PackingItem, max_len: int) -> bool:
    for b in bins:
        if b.total_length + item.length <= max_len:
            b.add(item)
            return True
    return False


def pack(
    items: Sequence[PackingItem],
    config: PackingConfig,
    rng: np.random.Generator | None = None,
) -> tuple[list[Bin], PackReport]:
    """Pack items into bins. Deterministic for a given config seed.

    Overlong items are rejected up front. Phase 1 samples classes by the
    configured proportions while all classes still have items, opening a
    new bin when first-fit fails and immediately adding one item of every
    missing required class (incrementing that class's debt, which is paid
    back by skipping later draws). Phase 2 renormalizes the proportions
    over nonempty classes and first-fits leftovers into existing bins
    until ``failure_threshold`` consecutive failures. Leftovers are
    discarded and reported.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    report = PackReport()

    classes = sorted(config.proportions)
    queues: dict[str, list[PackingItem]] = {c: [] for c in classes}
    for item in items:
        if item.class_tag not in queues:
            raise ConfigurationError(f"item {item.index} has unknown class {item.class_tag!r}")
        if item.length > config.max_len:
            report.rejected_too_long.append(item.index)
            continue
        queues[item.class_tag].append(item)

    for cls in config.required_classes:
        if cls not in queues or not queues[cls]:
            raise ConfigurationError(f"required class {cls!r} has no items")

    # shuffle each class queue; pop() takes from the end
    for cls in classes:
        rng.shuffle(queues[cls])

    probs = np.array([config.proportions[c] for c in classes])
    debt = {c: 0 for c in classes}
    bins: list[Bin] = []
    deficient: set[int] = set()

    # phase 1: proportional sampling while every class has items
    while all(queues[c] for c in classes):
        c = classes[rng.choice(len(classes), p=probs)]
        if debt[c] > 0:
            debt[c] -= 1
            continue
        item = queues[c].pop()
        if _first_fit(bins, item, config.max_len):
            continue
        new_bin = Bin()
        new_bin.add(item)
        bins.append(new_bin)
        present = {item.class_tag}
        for req in config.required_classes:
            if req in present:
                continue
            added = False
            for k in range(len(queues[req]) - 1, -1, -1):
                candidate = queues[req][k]
                if new_bin.total_length + candidate.length <= config.max_len:
                    del queues[req][k]
                    new_bin.add(candidate)
                    debt[req] += 1
                    added = True
                    break
            if not added:
                # nothing of the required class fits: the bin cannot satisfy
                # its constraints and is dropped at emission
                deficient.add(len(bins) - 1)

    # phase 2: first-fit leftovers into existing bins
    failures = 0
    while failures < config.failure_threshold and any(queues[c] for c in classes):
        live = [c for c in classes if queues[c]]
        p_live = np.array([config.proportions[c] for c in live])
        p_live = p_live / p_live.sum()
        c = live[rng.choice(len(live), p=p_live)]
        item = queues[c].pop()
        if _first_fit(bins, item, config.max_len):
            failures = 0
        else:
            queues[c].insert(0, item)  # back of the queue; pop() takes the end
            failures += 1

    for c in classes:
        report.discarded.extend(item.index for item in queues[c])

    if deficient:
        kept = []
        for i, b in enumerate(bins):
            if i in deficient:
                report.dropped_incomplete_bins.extend(b.items)
                report.discarded.extend(b.items)
            else:
                kept.append(b)
        bins = kept
    return bins, report


def epoch_stream(
    items: Sequence[PackingItem],
    config: PackingConfig,
    num_epochs: int | None = None,
) -> Iterator[list[Bin]]:
    """Yield one list of bins per epoch, reshuffled with a per-epoch seed.

    The per-epoch generator is derived from (config.seed, epoch), so the
    whole stream is reproducible and every consumer sharing a seed sees
    the same sequence of bins.
    """
    epoch = 0
    while num_epochs is None or epoch < num_epochs:
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch)))
        bins, _ = pack(items, config, rng=rng)
        yield bins
        epoch += 1
