"""CTC decoding: greedy collapse and prefix beam search with optional
shallow n-gram fusion, plus the N-best list container and its
line-oriented serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections.abc import Mapping, Sequence

import numpy as np

from .lm import ArpaNGram

__all__ = [
    "DecodeConfig",
    "NBestEntry",
    "NBestList",
    "greedy_ctc_decode",
    "beam_search",
    "write_nbest_file",
    "read_nbest_file",
]

NEG = float("-inf")


def _logaddexp(a: float, b: float) -> float:
    # scalar log(exp(a) + exp(b)); math-based, ~10x faster than numpy here
    if a < b:
        a, b = b, a
    if b == NEG:
        return a
    return a + math.log1p(math.exp(b - a))


@dataclass
class DecodeConfig:
    """Beam search knobs.

    ``symbols`` maps class index to emitted character (the blank
    position's entry is ignored); words are delimited by the space
    character. The combined score is
    ``acoustic + lm_weight * lm + word_bonus * words``.
    """

    symbols: tuple[str, ...]
    blank_index: int
    beam_width: int = 150
    lm_weight: float = 1.0
    word_bonus: float = 0.5

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if not (0 <= self.blank_index < len(self.symbols)):
            raise ValueError("blank_index outside the symbol table")


@dataclass(frozen=True)
class NBestEntry:
    transcript: str
    acoustic: float
    lm: float
    combined: float


@dataclass
class NBestList:
    """Ranked candidate transcripts, best first."""

    entries: list[NBestEntry]
    source: str = "beam_search"

    def __post_init__(self):
        if not self.entries:
            raise ValueError("an N-best list cannot be empty")
        scores = [e.combined for e in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("entries must be sorted by descending combined score")
        transcripts = [e.transcript for e in self.entries]
        if len(set(transcripts)) != len(transcripts):
            raise ValueError("transcripts must be unique")

    def transcripts(self) -> list[str]:
        return [e.transcript for e in self.entries]

    def to_lines(self) -> list[str]:
        return [
            f"{rank}\t{e.combined!r}\t{e.acoustic!r}\t{e.lm!r}\t{e.transcript}"
            for rank, e in enumerate(self.entries, start=1)
        ]

    @classmethod
    def from_lines(cls, lines: Sequence[str], source: str = "beam_search") -> "NBestList":
        entries = []
        for line in lines:
            rank, combined, acoustic, lm, transcript = line.rstrip("\n").split("\t", 4)
            entries.append(
                NBestEntry(
                    transcript=transcript,
                    acoustic=float(acoustic),
                    lm=float(lm),
                    combined=float(combined),
                )
            )
        return cls(entries=entries, source=source)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def greedy_ctc_decode(logits, blank: int, symbols: Sequence[str]) -> str:
    """Per-frame argmax, collapse repeats, drop blanks."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be T x K")
    best = logits.argmax(axis=1)
    out = []
    prev = -1
    for cls in best:
        if cls != prev and cls != blank:
            out.append(symbols[cls])
        prev = cls
    return "".join(out)


class _Prefix:
    """Interned beam prefix: transcript plus word-level LM bookkeeping.

    Nodes are unique per emitted class sequence (children are cached on
    their parent), so dict lookups hash by identity and prefix merging
    stays exact.
    """

    __slots__ = ("last", "transcript", "words", "cur_word", "lm_nat", "children")

    def __init__(self, last: int, transcript: str, words: tuple[str, ...],
                 cur_word: str, lm_nat: float):
        self.last = last
        self.transcript = transcript
        self.words = words
        self.cur_word = cur_word
        self.lm_nat = lm_nat
        self.children: dict[int, "_Prefix"] = {}


def beam_search(
    logits,
    lm: ArpaNGram | None,
    config: DecodeConfig,
    k: int,
) -> NBestList:
    """CTC prefix beam search with word-boundary LM fusion.

    Prefixes are merged exactly, so with a beam at least as wide as the
    number of distinct prefixes the search is exhaustive. The language
    model scores each word as it completes (at space emission and at
    termination); ties are broken lexicographically by transcript.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("logits must be a nonempty T x K matrix")
    if k < 1 or k > config.beam_width:
        raise ValueError(f"k must be in [1, beam_width={config.beam_width}]")
    T, K = logits.shape
    if len(config.symbols) != K:
        raise ValueError(f"symbol table has {len(config.symbols)} entries, logits have {K}")
    lp = _log_softmax(logits)
    frames = lp.tolist()  # plain float lists: much faster scalar access
    blank = config.blank_index
    alpha, beta = config.lm_weight, config.word_bonus
    symbols = config.symbols

    def lm_word(word: str, context: tuple[str, ...]) -> float:
        if lm is None:
            return 0.0
        return lm.logprob_nat(word, context)

    def child_of(node: _Prefix, cls: int) -> _Prefix:
        child = node.children.get(cls)
        if child is None:
            char = symbols[cls]
            if char == " ":
                if node.cur_word:
                    gain = lm_word(node.cur_word, node.words)
                    child = _Prefix(cls, node.transcript + char,
                                    node.words + (node.cur_word,), "", node.lm_nat + gain)
                else:
                    child = _Prefix(cls, node.transcript + char,
                                    node.words, "", node.lm_nat)
            else:
                child = _Prefix(cls, node.transcript + char,
                                node.words, node.cur_word + char, node.lm_nat)
            node.children[cls] = child
        return child

    root = _Prefix(-1, "", (), "", 0.0)
    beams: dict[_Prefix, list[float]] = {root: [0.0, NEG]}  # [log P_blank, log P_nonblank]
    nonblank = [cls for cls in range(K) if cls != blank]

    for t in range(T):
        frame = frames[t]
        p_blank = frame[blank]
        nxt: dict[_Prefix, list[float]] = {}

        for node, (pb, pnb) in beams.items():
            total = _logaddexp(pb, pnb)
            b = nxt.get(node)
            if b is None:
                b = [NEG, NEG]
                nxt[node] = b
            b[0] = _logaddexp(b[0], total + p_blank)
            last = node.last
            for cls in nonblank:
                p_cls = frame[cls]
                child = child_of(node, cls)
                eb = nxt.get(child)
                if eb is None:
                    eb = [NEG, NEG]
                    nxt[child] = eb
                if cls == last:
                    b[1] = _logaddexp(b[1], pnb + p_cls)
                    eb[1] = _logaddexp(eb[1], pb + p_cls)
                else:
                    eb[1] = _logaddexp(eb[1], total + p_cls)

        ranked = sorted(
            nxt.items(),
            key=lambda kv: (
                -(_logaddexp(kv[1][0], kv[1][1])
                  + alpha * kv[0].lm_nat + beta * len(kv[0].words)),
                kv[0].transcript,
            ),
        )
        beams = dict(ranked[: config.beam_width])

    finals = []
    for node, (pb, pnb) in beams.items():
        acoustic = _logaddexp(pb, pnb)
        lm_nat = node.lm_nat
        words = len(node.words)
        if node.cur_word:
            lm_nat += lm_word(node.cur_word, node.words)
            words += 1
        combined = acoustic + alpha * lm_nat + beta * words
        finals.append(NBestEntry(node.transcript, acoustic, lm_nat, combined))
    finals.sort(key=lambda e: (-e.combined, e.transcript))
    return NBestList(entries=finals[:k], source="beam_search")


def write_nbest_file(path, lists: Mapping[str, NBestList]) -> None:
    """One block per utterance: a '# utterance<TAB>id' header then the
    ranked candidate lines, blocks separated by blank lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, nbest in lists.items():
            fh.write(f"# utterance\t{utt_id}\n")
            for line in nbest.to_lines():
                fh.write(line + "\n")
            fh.write("\n")


def read_nbest_file(path) -> dict[str, NBestList]:
    out: dict[str, NBestList] = {}
    current_id = None
    current_lines: list[str] = []

    def flush():
        if current_id is not None and current_lines:
            out[current_id] = NBestList.from_lines(current_lines)

    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# utterance\t"):
                flush()
                current_id = line.split("\t", 1)[1]
                current_lines = []
            elif line.strip():
                current_lines.append(line)
    flush()
    return out
