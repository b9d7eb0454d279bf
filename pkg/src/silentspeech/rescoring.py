"""LLM-based N-best rescoring: prompt construction, chat clients with
deterministic mocks, response parsing with noncompliance handling,
ensemble candidate assembly, and fine-tune dataset export.

Every prompt variant renders bit-stably: an instruction paragraph, a
newline, then one candidate per line (most to least likely, duplicates
preserved, no numbering, no trailing whitespace).
"""

from __future__ import annotations

import json
import os
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoding import NBestList
from .metrics import wer

__all__ = [
    "CandidateSet",
    "PromptTemplate",
    "RescoreResult",
    "RescorePolicy",
    "build_prompt",
    "split_prompt",
    "parse_response",
    "normalize_transcript",
    "IdentityMockClient",
    "OracleMockClient",
    "ScriptedMockClient",
    "HttpChatClient",
    "rescore",
    "rescored_wer",
    "ensemble_candidates",
    "export_finetune_dataset",
    "write_finetune_jsonl",
]

TRANSCRIPT_CUE = "TRANSCRIPT: "

DIRECT_INSTRUCTION = (
    "Your task is to perform automatic speech recognition. Below are multiple candidate "
    "transcriptions, listed from most likely to least likely. Choose the transcription "
    "that is most accurate, ensuring it is contextually and grammatically correct. Focus "
    "on key differences in the options that change the meaning or correctness. Avoid "
    "selections with repetitive or nonsensical phrases. In cases of ambiguity, select the "
    "option that is most coherent and contextually sound. Respond with the chosen "
    "transcription only, without any introductory text."
)

CHAIN_OF_REASONING_INSTRUCTION = (
    "Your task is to perform automatic speech recognition. Below are multiple candidate "
    "transcriptions, listed from most likely to least likely. Begin your response with a "
    "Chain of Reasoning, explaining your analysis and decision-making process in choosing "
    "the most accurate transcription. After your analysis, clearly indicate your final "
    "choice with the cue 'TRANSCRIPT: '. Ensure the transcription you choose is "
    "contextually and grammatically correct. Focus on key differences in the options that "
    "change the meaning or correctness. Avoid selections with repetitive or nonsensical "
    "phrases. In cases of ambiguity, select the option that is most coherent and "
    "contextually sound. Respond first with your reasoning, followed by 'TRANSCRIPT: ' "
    "and then the chosen transcription."
)

NLL_INSTRUCTION = (
    "Your task is automatic speech recognition. Below are the candidate transcriptions "
    "along with their negative log-likelihood from a CTC beam search. Respond with the "
    "correct transcription, without any introductory text."
)

_VARIANT_TEXT = {
    "direct": DIRECT_INSTRUCTION,
    "ensemble": DIRECT_INSTRUCTION,  # same wording; candidates come from an ensemble
    "chain_of_reasoning": CHAIN_OF_REASONING_INSTRUCTION,
    "nll_annotated": NLL_INSTRUCTION,
}


@dataclass
class CandidateSet:
    """Ordered candidate transcripts for one utterance (best first)."""

    utterance_id: str
    candidates: list[str]
    provenance: str = "beam_search"
    nlls: list[float] | None = None

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"{self.utterance_id}: need at least one candidate")
        if self.nlls is not None and len(self.nlls) != len(self.candidates):
            raise ValueError(f"{self.utterance_id}: one NLL per candidate required")


@dataclass(frozen=True)
class PromptTemplate:
    """One of the four prompt formats; rendering is bit-exact."""

    variant: str

    def __post_init__(self):
        if self.variant not in _VARIANT_TEXT:
            raise ValueError(
                f"unknown variant {self.variant!r}; choose from {sorted(_VARIANT_TEXT)}"
            )

    @property
    def instruction(self) -> str:
        return _VARIANT_TEXT[self.variant]

    @property
    def uses_cue(self) -> bool:
        return self.variant == "chain_of_reasoning"


def build_prompt(template: PromptTemplate, candidates: CandidateSet | list[str]) -> str:
    """Instruction paragraph plus one candidate per line, in order."""
    if isinstance(candidates, CandidateSet):
        lines = candidates.candidates
        nlls = candidates.nlls
    else:
        lines = list(candidates)
        nlls = None
    if not lines:
        raise ValueError("cannot build a prompt without candidates")
    if template.variant == "nll_annotated":
        if nlls is None:
            raise ValueError("nll_annotated prompts require per-candidate NLLs")
        lines = [f"{text}\tNLL: {nll:.4f}" for text, nll in zip(lines, nlls)]
    return template.instruction + "\n" + "\n".join(lines)


def split_prompt(template: PromptTemplate, prompt: str) -> list[str]:
    """Recover the candidate lines from a rendered prompt."""
    body = prompt.split("\n")
    if body[0] != template.instruction:
        raise ValueError("prompt does not start with this template's instruction")
    lines = body[1:]
    if template.variant == "nll_annotated":
        lines = [line.rsplit("\tNLL: ", 1)[0] for line in lines]
    return lines


def normalize_transcript(text: str) -> str:
    """Scoring normalization: trim, lowercase, drop terminal punctuation."""
    out = text.strip().lower()
    while out and out[-1] in ".!?":
        out = out[:-1].rstrip()
    return out


def parse_response(template: PromptTemplate, raw_text: str) -> str | None:
    """Extract the chosen transcript; None flags noncompliance.

    Chain-of-reasoning responses must contain the 'TRANSCRIPT: ' cue (the
    text after its last occurrence is the choice); the other variants use
    the whole response. Empty responses are noncompliant.
    """
    if template.uses_cue:
        cue = TRANSCRIPT_CUE.strip()
        if cue not in raw_text:
            return None
        tail = raw_text.rsplit(cue, 1)[1].lstrip(": ").strip()
        tail = tail.split("\n")[0]
        return normalize_transcript(tail) or None
    return normalize_transcript(raw_text) or None


# -- clients ---------------------------------------------------------------


class IdentityMockClient:
    """Always answers with the first candidate line."""

    def __init__(self, template: PromptTemplate):
        self.template = template

    def complete(self, prompt: str, utterance_id: str | None = None) -> str:
        first = split_prompt(self.template, prompt)[0]
        if self.template.uses_cue:
            return f"The first option is most plausible. {TRANSCRIPT_CUE}{first}"
        return first


class OracleMockClient:
    """Answers with the candidate closest to a hidden reference (min WER).

    Ties keep the earlier (more likely) candidate, so the choice is
    deterministic and never worse than the top candidate.
    """

    def __init__(self, template: PromptTemplate, references: dict[str, str]):
        self.template = template
        self.references = references

    def complete(self, prompt: str, utterance_id: str | None = None) -> str:
        candidates = split_prompt(self.template, prompt)
        reference = self.references[utterance_id]
        best = min(
            range(len(candidates)),
            key=lambda i: (wer(normalize_transcript(candidates[i]), normalize_transcript(reference)), i),
        )
        answer = candidates[best]
        if self.template.uses_cue:
            return f"Comparing the options against context. {TRANSCRIPT_CUE}{answer}"
        return answer


class ScriptedMockClient:
    """Returns scripted responses keyed by utterance id (for tests)."""

    def __init__(self, responses: dict[str, str], default: str = ""):
        self.responses = responses
        self.default = default

    def complete(self, prompt: str, utterance_id: str | None = None) -> str:
        return self.responses.get(utterance_id, self.default)


class HttpChatClient:
    """Chat-completion client: JSON over HTTPS, key from the environment.

    Requests carry a messages array (optional system role plus the prompt
    as the user message), the model name, and the sampling temperature
    (default 0 for reproducibility).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.0,
        api_key_env: str = "CHAT_API_KEY",
        system_message: str | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.api_key_env = api_key_env
        self.system_message = system_message
        self.timeout = timeout

    def complete(self, prompt: str, utterance_id: str | None = None) -> str:
        messages = []
        if self.system_message:
            messages.append({"role": "system", "content": self.system_message})
        messages.append({"role": "user", "content": prompt})
        payload = json.dumps(
            {"model": self.model, "temperature": self.temperature, "messages": messages}
        ).encode()
        key = os.environ.get(self.api_key_env, "")
        request = urllib.request.Request(
            f"{self.base_url}/chat/completions",
            data=payload,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {key}",
            },
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            body = json.loads(response.read().decode())
        return body["choices"][0]["message"]["content"]


# -- rescoring -------------------------------------------------------------


@dataclass
class RescoreResult:
    """Outcome for one utterance: a transcript or a noncompliance flag."""

    utterance_id: str
    transcript: str | None
    noncompliant: bool
    raw_response: str
    latency: float
    model: str = "mock"
    temperature: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if (self.transcript is None) == (not self.noncompliant) and self.error is None:
            raise ValueError("exactly one of transcript/noncompliance must be set")


@dataclass
class RescorePolicy:
    max_retries: int = 2
    fallback: str = "top1"  # what the included-WER figure uses for noncompliance
    max_in_flight: int = 4
    model: str = "mock"
    temperature: float = 0.0


def rescore(
    candidate_sets: list[CandidateSet],
    client,
    template: PromptTemplate,
    policy: RescorePolicy | None = None,
) -> list[RescoreResult]:
    """One request per utterance; results ordered by utterance id.

    Transport failures retry up to the policy limit, then record a
    per-utterance error (treated as noncompliant downstream) and the run
    continues.
    """
    policy = policy or RescorePolicy()
    ordered = sorted(candidate_sets, key=lambda cs: cs.utterance_id)

    def one(cs: CandidateSet) -> RescoreResult:
        prompt = build_prompt(template, cs)
        start = time.monotonic()
        last_error: Exception | None = None
        for _ in range(policy.max_retries + 1):
            try:
                raw = client.complete(prompt, utterance_id=cs.utterance_id)
                break
            except Exception as exc:  # transport errors: retry, then record
                last_error = exc
        else:
            return RescoreResult(
                utterance_id=cs.utterance_id,
                transcript=None,
                noncompliant=True,
                raw_response="",
                latency=time.monotonic() - start,
                model=policy.model,
                temperature=policy.temperature,
                error=str(last_error),
            )
        transcript = parse_response(template, raw)
        return RescoreResult(
            utterance_id=cs.utterance_id,
            transcript=transcript,
            noncompliant=transcript is None,
            raw_response=raw,
            latency=time.monotonic() - start,
            model=policy.model,
            temperature=policy.temperature,
        )

    if policy.max_in_flight > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=policy.max_in_flight) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(cs) for cs in ordered]
    return results


def rescored_wer(
    results: list[RescoreResult],
    references: dict[str, str],
    candidate_sets: list[CandidateSet],
    policy: RescorePolicy | None = None,
) -> dict[str, float | int]:
    """WER of the rescored output, with and without noncompliant items.

    The included figure substitutes the policy fallback (top-1 candidate)
    for noncompliant utterances; the excluded figure simply drops them.
    """
    policy = policy or RescorePolicy()
    top1 = {cs.utterance_id: cs.candidates[0] for cs in candidate_sets}
    included, excluded = [], []
    noncompliant = 0
    for result in results:
        reference = normalize_transcript(references[result.utterance_id])
        if result.noncompliant:
            noncompliant += 1
            if policy.fallback == "top1":
                included.append(wer(normalize_transcript(top1[result.utterance_id]), reference))
        else:
            rate = wer(result.transcript, reference)
            included.append(rate)
            excluded.append(rate)
    return {
        "wer_included": float(np.mean(included)) if included else float("nan"),
        "wer_excluded": float(np.mean(excluded)) if excluded else float("nan"),
        "noncompliant": noncompliant,
        "scored": len(excluded),
        "total": len(results),
    }


def ensemble_candidates(
    per_model_nbest: list[NBestList],
    mode: str = "top1",
    utterance_id: str = "",
    limit: int | None = None,
) -> CandidateSet:
    """Merge N-best lists from an ensemble of models into one candidate list.

    ``top1`` takes each model's best transcript in model order; ``round_robin``
    interleaves by rank then model order. Duplicates are preserved.
    """
    if not per_model_nbest:
        raise ValueError("need at least one model's N-best list")
    if mode == "top1":
        lines = [nb.entries[0].transcript for nb in per_model_nbest]
    elif mode == "round_robin":
        lines = []
        depth = max(len(nb.entries) for nb in per_model_nbest)
        for rank in range(depth):
            for nb in per_model_nbest:
                if rank < len(nb.entries):
                    lines.append(nb.entries[rank].transcript)
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    if limit is not None:
        lines = lines[:limit]
    return CandidateSet(
        utterance_id=utterance_id,
        candidates=lines,
        provenance=f"ensemble_{mode}_{len(per_model_nbest)}",
    )


@dataclass
class FinetuneExport:
    records: list[dict]
    holdout_ids: list[str]
    skipped: list[str] = field(default_factory=list)


def export_finetune_dataset(
    candidate_sets: list[CandidateSet],
    references: dict[str, str],
    template: PromptTemplate,
    train_fraction: float = 0.5,
    seed: int = 0,
) -> FinetuneExport:
    """Chat-format fine-tune records for a seeded half of the utterances.

    Each record holds the rendered prompt as the user message and the
    reference transcript as the assistant message. Utterances without a
    reference are skipped and reported; the other half's ids are returned
    for held-out evaluation.
    """
    ordered = sorted(candidate_sets, key=lambda cs: cs.utterance_id)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ordered))
    cut = int(round(len(ordered) * train_fraction))
    train_idx = sorted(order[:cut].tolist())
    holdout_idx = sorted(order[cut:].tolist())

    records, skipped = [], []
    for i in train_idx:
        cs = ordered[i]
        if cs.utterance_id not in references:
            skipped.append(cs.utterance_id)
            continue
        records.append(
            {
                "messages": [
                    {"role": "user", "content": build_prompt(template, cs)},
                    {"role": "assistant", "content": references[cs.utterance_id]},
                ]
            }
        )
    return FinetuneExport(
        records=records,
        holdout_ids=[ordered[i].utterance_id for i in holdout_idx],
        skipped=skipped,
    )


def write_finetune_jsonl(export: FinetuneExport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in export.records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
