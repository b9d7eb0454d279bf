"""Synthetic paired-modality corpus.

Each utterance draws a latent phoneme-frame source (one embedding per
10 ms frame, labels = alphabet letters plus silence) and emits noisy
observations through per-modality mixing matrices. Silent variants reuse
the same source with a random monotone time warp and keep only the EMG
observation, alongside the parallel vocalized recording they align to.
Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass, field

import numpy as np

from .sampler import CLASS_AUDIO, CLASS_SILENT, CLASS_VOCAL, PackingItem

__all__ = [
    "ParallelRecording",
    "Utterance",
    "SyntheticCorpusConfig",
    "Corpus",
    "generate_corpus",
    "save_corpus",
    "load_corpus",
    "collapse_frame_labels",
]


@dataclass
class ParallelRecording:
    """The vocalized reading attached to a silent utterance."""

    emg: np.ndarray
    audio: np.ndarray
    frame_labels: list[int]


@dataclass
class Utterance:
    """One example: per-modality signals, text label, frame labels, class.

    Vocalized examples carry both signals time-aligned; silent examples
    carry EMG only plus their parallel vocalized recording; audio-only
    examples carry just the audio signal.
    """

    id: str
    class_tag: str
    text: str
    emg: np.ndarray | None = None
    audio: np.ndarray | None = None
    frame_labels: list[int] | None = None
    parallel: ParallelRecording | None = None

    def __post_init__(self):
        if self.class_tag == CLASS_VOCAL:
            if self.emg is None or self.audio is None:
                raise ValueError(f"{self.id}: vocalized utterances need both signals")
            if self.emg.shape[1] != self.audio.shape[1]:
                raise ValueError(f"{self.id}: vocalized signals must be time-aligned")
        elif self.class_tag == CLASS_SILENT:
            if self.emg is None or self.audio is not None or self.parallel is None:
                raise ValueError(f"{self.id}: silent utterances need EMG and a parallel recording")
        elif self.class_tag == CLASS_AUDIO:
            if self.audio is None or self.emg is not None:
                raise ValueError(f"{self.id}: audio-only utterances need just the audio signal")
        else:
            raise ValueError(f"{self.id}: unknown class {self.class_tag!r}")

    @property
    def num_frames(self) -> int:
        signal = self.emg if self.emg is not None else self.audio
        return signal.shape[1]

    def packing_length(self) -> int:
        """Latent columns this example contributes to a contrastive batch."""
        length = self.num_frames
        if self.class_tag == CLASS_VOCAL:
            length *= 2  # both modalities enter the batch
        elif self.class_tag == CLASS_SILENT:
            length += self.parallel.audio.shape[1]
        return length


@dataclass
class SyntheticCorpusConfig:
    alphabet_size: int = 5
    num_words: int = 10
    word_len: tuple[int, int] = (2, 4)
    words_per_utt: tuple[int, int] = (2, 4)
    char_duration: tuple[int, int] = (2, 4)
    word_gap: tuple[int, int] = (1, 2)
    silence_pad: tuple[int, int] = (0, 0)
    source_dim: int = 6
    emg_dim: int = 8
    audio_dim: int = 8
    source_jitter: float = 0.05
    emg_noise: float = 0.15
    audio_noise: float = 0.05
    # systematic articulation shift of the silent condition: silent EMG is
    # observed through a perturbed mixing map, not just a time warp
    silent_mix_shift: float = 0.0
    # silent TRAIN utterances draw from this many vocabulary words (None =
    # all), limiting the letter coverage of silent CTC supervision the way
    # a small silent recording session would
    silent_word_pool: int | None = None
    warp_range: tuple[float, float] = (0.6, 1.6)
    train_counts: dict[str, int] = field(
        default_factory=lambda: {CLASS_SILENT: 8, CLASS_VOCAL: 24, CLASS_AUDIO: 40}
    )
    val_counts: dict[str, int] = field(
        default_factory=lambda: {CLASS_SILENT: 8, CLASS_VOCAL: 8, CLASS_AUDIO: 8}
    )
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.alphabet_size <= 26):
            raise ValueError("alphabet_size must be in [1, 26]")
        lo, hi = self.warp_range
        if lo <= 0 or hi < lo:
            raise ValueError("warp_range must satisfy 0 < lo <= hi")

    @property
    def letters(self) -> str:
        return string.ascii_lowercase[: self.alphabet_size]

    @property
    def silence_class(self) -> int:
        return self.alphabet_size

    @property
    def num_label_classes(self) -> int:
        return self.alphabet_size + 1  # letters + silence

    @property
    def token_ids(self) -> dict[str, int]:
        ids = {ch: i for i, ch in enumerate(self.letters)}
        ids[" "] = self.alphabet_size
        return ids

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self.letters) + (" ", "_")  # "_" marks the blank slot

    @property
    def blank_index(self) -> int:
        return self.alphabet_size + 1

    @property
    def num_classes(self) -> int:
        return self.alphabet_size + 2  # letters + space + blank


@dataclass
class Corpus:
    config: SyntheticCorpusConfig
    vocabulary: list[str]
    train: list[Utterance]
    val: list[Utterance]

    def packing_items(self, split: str = "train") -> list[PackingItem]:
        utterances = self.train if split == "train" else self.val
        return [
            PackingItem(index=i, length=u.packing_length(), class_tag=u.class_tag)
            for i, u in enumerate(utterances)
        ]


def collapse_frame_labels(frame_labels, silence_class: int) -> list[int]:
    """Collapse consecutive repeats, then drop silence frames."""
    out: list[int] = []
    prev = None
    for label in frame_labels:
        if label != prev:
            out.append(int(label))
        prev = label
    return [c for c in out if c != silence_class]


def _make_vocabulary(cfg: SyntheticCorpusConfig, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen = set()
    letters = cfg.letters
    while len(words) < cfg.num_words:
        length = int(rng.integers(cfg.word_len[0], cfg.word_len[1] + 1))
        chars = [letters[int(rng.integers(len(letters)))]]
        while len(chars) < length:
            c = letters[int(rng.integers(len(letters)))]
            if c != chars[-1]:  # no adjacent repeats, keeps frame labels collapsible
                chars.append(c)
        word = "".join(chars)
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _frame_plan(
    cfg: SyntheticCorpusConfig, text: str, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """(class_id, duration) segments covering the utterance, silence padded."""
    sil = cfg.silence_class
    ids = cfg.token_ids
    plan: list[tuple[int, int]] = []

    def pad(bounds):
        return int(rng.integers(bounds[0], bounds[1] + 1))

    plan.append((sil, pad(cfg.silence_pad)))
    for w, word in enumerate(text.split(" ")):
        if w > 0:
            plan.append((sil, pad(cfg.word_gap)))
        for ch in word:
            plan.append((ids[ch], pad(cfg.char_duration)))
    plan.append((sil, pad(cfg.silence_pad)))
    return plan


def _render_source(
    plan: list[tuple[int, int]],
    embeddings: np.ndarray,
    jitter: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[int]]:
    labels: list[int] = []
    for class_id, duration in plan:
        labels.extend([class_id] * duration)
    source = embeddings[:, labels].copy()
    if jitter > 0:
        source += jitter * rng.normal(size=source.shape)
    return source, labels


def _observe(mix: np.ndarray, source: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    obs = mix @ source
    if noise > 0:
        obs += noise * rng.normal(size=obs.shape)
    return obs


def _warp_plan(
    plan: list[tuple[int, int]], cfg: SyntheticCorpusConfig, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Monotone time warp: rescale each segment, keeping at least 1 frame."""
    lo, hi = cfg.warp_range
    warped = []
    for class_id, duration in plan:
        factor = float(rng.uniform(lo, hi))
        warped.append((class_id, max(1, int(round(duration * factor)))))
    return warped


def generate_corpus(cfg: SyntheticCorpusConfig) -> Corpus:
    """Draw the vocabulary, mixing maps, and all utterances for one seed."""
    rng = np.random.default_rng(cfg.seed)
    vocabulary = _make_vocabulary(cfg, rng)
    embeddings = rng.normal(size=(cfg.source_dim, cfg.num_label_classes))
    emg_mix = rng.normal(size=(cfg.emg_dim, cfg.source_dim)) / np.sqrt(cfg.source_dim)
    audio_mix = rng.normal(size=(cfg.audio_dim, cfg.source_dim)) / np.sqrt(cfg.source_dim)
    silent_mix = emg_mix + cfg.silent_mix_shift * rng.normal(
        size=(cfg.emg_dim, cfg.source_dim)
    ) / np.sqrt(cfg.source_dim)

    def draw_text(pool: int | None = None) -> str:
        words = vocabulary if pool is None else vocabulary[:pool]
        n = int(rng.integers(cfg.words_per_utt[0], cfg.words_per_utt[1] + 1))
        return " ".join(words[int(rng.integers(len(words)))] for _ in range(n))

    def make_vocal(uid: str) -> Utterance:
        text = draw_text()
        plan = _frame_plan(cfg, text, rng)
        source, labels = _render_source(plan, embeddings, cfg.source_jitter, rng)
        return Utterance(
            id=uid,
            class_tag=CLASS_VOCAL,
            text=text,
            emg=_observe(emg_mix, source, cfg.emg_noise, rng),
            audio=_observe(audio_mix, source, cfg.audio_noise, rng),
            frame_labels=labels,
        )

    def make_silent(uid: str, pool: int | None = None) -> Utterance:
        text = draw_text(pool)
        plan = _frame_plan(cfg, text, rng)
        vocal_source, vocal_labels = _render_source(plan, embeddings, cfg.source_jitter, rng)
        parallel = ParallelRecording(
            emg=_observe(emg_mix, vocal_source, cfg.emg_noise, rng),
            audio=_observe(audio_mix, vocal_source, cfg.audio_noise, rng),
            frame_labels=vocal_labels,
        )
        silent_plan = _warp_plan(plan, cfg, rng)
        silent_source, silent_labels = _render_source(
            silent_plan, embeddings, cfg.source_jitter, rng
        )
        return Utterance(
            id=uid,
            class_tag=CLASS_SILENT,
            text=text,
            emg=_observe(silent_mix, silent_source, cfg.emg_noise, rng),
            frame_labels=silent_labels,
            parallel=parallel,
        )

    def make_audio(uid: str) -> Utterance:
        text = draw_text()
        plan = _frame_plan(cfg, text, rng)
        source, labels = _render_source(plan, embeddings, cfg.source_jitter, rng)
        return Utterance(
            id=uid,
            class_tag=CLASS_AUDIO,
            text=text,
            audio=_observe(audio_mix, source, cfg.audio_noise, rng),
            frame_labels=labels,
        )

    makers = {CLASS_SILENT: make_silent, CLASS_VOCAL: make_vocal, CLASS_AUDIO: make_audio}
    short = {CLASS_SILENT: "silent", CLASS_VOCAL: "vocal", CLASS_AUDIO: "audio"}

    train: list[Utterance] = []
    for tag in (CLASS_SILENT, CLASS_VOCAL, CLASS_AUDIO):
        for i in range(cfg.train_counts.get(tag, 0)):
            uid = f"{short[tag]}-{i:03d}"
            if tag == CLASS_SILENT:
                train.append(make_silent(uid, cfg.silent_word_pool))
            else:
                train.append(makers[tag](uid))
    val: list[Utterance] = []
    for tag in (CLASS_SILENT, CLASS_VOCAL, CLASS_AUDIO):
        for i in range(cfg.val_counts.get(tag, 0)):
            val.append(makers[tag](f"val-{short[tag]}-{i:03d}"))
    return Corpus(config=cfg, vocabulary=vocabulary, train=train, val=val)


def save_corpus(corpus: Corpus, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    manifest = {
        "config": asdict(corpus.config),
        "vocabulary": corpus.vocabulary,
        "splits": {},
    }
    for split_name, utterances in (("train", corpus.train), ("val", corpus.val)):
        entries = []
        for i, u in enumerate(utterances):
            key = f"{split_name}_{i}"
            entry = {"id": u.id, "class_tag": u.class_tag, "text": u.text, "key": key}
            if u.emg is not None:
                arrays[f"{key}_emg"] = u.emg
            if u.audio is not None:
                arrays[f"{key}_audio"] = u.audio
            if u.frame_labels is not None:
                arrays[f"{key}_labels"] = np.asarray(u.frame_labels, dtype=np.int64)
            if u.parallel is not None:
                arrays[f"{key}_par_emg"] = u.parallel.emg
                arrays[f"{key}_par_audio"] = u.parallel.audio
                arrays[f"{key}_par_labels"] = np.asarray(u.parallel.frame_labels, dtype=np.int64)
            entries.append(entry)
        manifest["splits"][split_name] = entries
    np.savez(path, __manifest__=np.array(json.dumps(manifest)), **arrays)


def load_corpus(path) -> Corpus:
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["__manifest__"]))
        cfg_dict = manifest["config"]
        for name in ("word_len", "words_per_utt", "char_duration", "word_gap",
                     "silence_pad", "warp_range"):
            cfg_dict[name] = tuple(cfg_dict[name])
        cfg = SyntheticCorpusConfig(**cfg_dict)
        splits: dict[str, list[Utterance]] = {}
        for split_name, entries in manifest["splits"].items():
            utterances = []
            for entry in entries:
                key = entry["key"]
                parallel = None
                if f"{key}_par_emg" in data:
                    parallel = ParallelRecording(
                        emg=data[f"{key}_par_emg"],
                        audio=data[f"{key}_par_audio"],
                        frame_labels=[int(x) for x in data[f"{key}_par_labels"]],
                    )
                utterances.append(
                    Utterance(
                        id=entry["id"],
                        class_tag=entry["class_tag"],
                        text=entry["text"],
                        emg=data[f"{key}_emg"] if f"{key}_emg" in data else None,
                        audio=data[f"{key}_audio"] if f"{key}_audio" in data else None,
                        frame_labels=(
                            [int(x) for x in data[f"{key}_labels"]]
                            if f"{key}_labels" in data
                            else None
                        ),
                        parallel=parallel,
                    )
                )
            splits[split_name] = utterances
    return Corpus(config=cfg, vocabulary=manifest["vocabulary"], train=splits["train"], val=splits["val"])
