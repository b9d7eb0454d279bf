"""ARPA backoff n-gram language model: parsing and scoring.

Scores are base-10 logarithms as stored in the file format; use
:meth:`ArpaNGram.logprob_nat` where natural-log scores are needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections.abc import Iterable, Sequence

__all__ = ["ArpaNGram", "ArpaParseError", "load_arpa", "load_arpa_file"]

LOG10 = math.log(10.0)


class ArpaParseError(ValueError):
    """Malformed ARPA input; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ArpaNGram:
    """Backoff n-gram model keyed by token tuples.

    ``probs`` and ``backoffs`` map n-gram tuples to base-10 log values.
    Unknown words fall back to the ``<unk>`` entry when present, else to
    ``unk_floor``.
    """

    order: int
    probs: dict[tuple[str, ...], float]
    backoffs: dict[tuple[str, ...], float]
    vocabulary: set[str] = field(default_factory=set)
    unk_floor: float = -10.0

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        """Backoff score log10 P(word | context)."""
        context = tuple(context)[max(0, len(context) - (self.order - 1)) :]
        return self._score(context, word)

    def _score(self, context: tuple[str, ...], word: str) -> float:
        ngram = context + (word,)
        if ngram in self.probs:
            return self.probs[ngram]
        if context:
            backoff = self.backoffs.get(context, 0.0)
            return backoff + self._score(context[1:], word)
        if ("<unk>",) in self.probs:
            return self.probs[("<unk>",)]
        return self.unk_floor

    def logprob_nat(self, word: str, context: Sequence[str] = ()) -> float:
        return self.logprob(word, context) * LOG10

    def sentence_logprob(self, words: Sequence[str], bos: bool = True) -> float:
        """Sum of per-word conditional scores, log10.

        With ``bos`` and an ``<s>`` entry in the vocabulary, the first
        word is conditioned on the start token. No end-of-sentence term
        is added.
        """
        history: list[str] = ["<s>"] if bos and "<s>" in self.vocabulary else []
        total = 0.0
        for w in words:
            total += self.logprob(w, history)
            history.append(w)
        return total


def load_arpa(lines: Iterable[str]) -> ArpaNGram:
    """Parse an ARPA model from an iterable of text lines.

    Validates the declared n-gram counts, that probabilities are
    nonpositive, and that every higher-order n-gram's prefix exists at
    the order below.
    """
    declared: dict[int, int] = {}
    probs: dict[tuple[str, ...], float] = {}
    backoffs: dict[tuple[str, ...], float] = {}
    seen_counts: dict[int, int] = {}
    state = "preamble"
    current = 0
    ended = False

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        text = line.strip()
        if state == "preamble":
            if not text:
                continue
            if text == "\\data\\":
                state = "data"
                continue
            raise ArpaParseError(r"expected \data\ header", lineno)
        if text == "\\end\\":
            ended = True
            state = "done"
            continue
        if state == "done":
            if text:
                raise ArpaParseError(r"content after \end\ marker", lineno)
            continue
        if state == "data":
            if not text:
                continue
            if text.startswith("ngram "):
                try:
                    spec, count = text[len("ngram ") :].split("=")
                    declared[int(spec)] = int(count)
                except ValueError:
                    raise ArpaParseError(f"bad count declaration {text!r}", lineno) from None
                continue
            state = "grams"
            # falls through to section handling below
        if state == "grams" and text.endswith("-grams:") and text.startswith("\\"):
            try:
                current = int(text[1 : -len("-grams:")])
            except ValueError:
                raise ArpaParseError(f"bad section header {text!r}", lineno) from None
            if current not in declared:
                raise ArpaParseError(f"section \\{current}-grams: was not declared", lineno)
            seen_counts.setdefault(current, 0)
            continue
        if state == "grams":
            if not text:
                continue
            if current == 0:
                raise ArpaParseError("entry outside any n-gram section", lineno)
            fields = text.split()
            if len(fields) < current + 1 or len(fields) > current + 2:
                raise ArpaParseError(
                    f"expected {current}-gram entry with optional backoff, got {text!r}", lineno
                )
            try:
                logp = float(fields[0])
            except ValueError:
                raise ArpaParseError(f"bad log-probability {fields[0]!r}", lineno) from None
            if logp > 0:
                raise ArpaParseError(f"log10 probability must be <= 0, got {logp}", lineno)
            tokens = tuple(fields[1 : current + 1])
            probs[tokens] = logp
            if len(fields) == current + 2:
                try:
                    backoffs[tokens] = float(fields[current + 1])
                except ValueError:
                    raise ArpaParseError(f"bad backoff weight {fields[-1]!r}", lineno) from None
            seen_counts[current] = seen_counts[current] + 1
            continue

    if not ended:
        raise ArpaParseError(r"missing \end\ marker", 0)
    if not declared:
        raise ArpaParseError(r"missing \data\ counts", 0)
    for n, count in declared.items():
        if seen_counts.get(n, 0) != count:
            raise ArpaParseError(
                f"declared {count} {n}-grams but found {seen_counts.get(n, 0)}", 0
            )
    order = max(declared)
    for ngram in probs:
        if len(ngram) > 1 and ngram[:-1] not in probs:
            raise ArpaParseError(
                f"{len(ngram)}-gram {' '.join(ngram)!r} lacks its order-{len(ngram) - 1} prefix", 0
            )
    vocabulary = {g[0] for g in probs if len(g) == 1}
    return ArpaNGram(order=order, probs=probs, backoffs=backoffs, vocabulary=vocabulary)


def load_arpa_file(path) -> ArpaNGram:
    with open(path, "r", encoding="utf-8") as fh:
        return load_arpa(fh)
