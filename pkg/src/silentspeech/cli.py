"""Command-line entry points for the pipeline stages.

Subcommands: ``generate`` (synthetic corpus), ``train`` (one or more
variants/seeds), ``decode`` (checkpoint -> N-best lists), ``rescore``
(N-best lists through a chat client), and ``report`` (metrics CSV ->
summary tables).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .corpus import SyntheticCorpusConfig, generate_corpus, load_corpus, save_corpus
from .decoding import DecodeConfig, beam_search, read_nbest_file, write_nbest_file
from .experiment import (
    ExperimentConfig,
    MetricsRecord,
    parse_config_file,
    rank_correlation,
    read_metrics_csv,
    report,
    run_experiment,
)
from .lm import load_arpa_file
from .metrics import wer
from .model import SpeechModel
from .rescoring import (
    CandidateSet,
    HttpChatClient,
    IdentityMockClient,
    PromptTemplate,
    RescorePolicy,
    rescore,
    rescored_wer,
)


def _cmd_generate(args) -> int:
    cfg = SyntheticCorpusConfig(seed=args.seed)
    corpus = generate_corpus(cfg)
    save_corpus(corpus, args.out)
    print(f"wrote corpus with {len(corpus.train)} train / {len(corpus.val)} val utterances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    mapping = parse_config_file(args.config) if args.config else {}
    if args.variant:
        mapping["variants"] = args.variant
    if args.seed is not None:
        mapping["seeds"] = str(args.seed)
    if args.corpus:
        mapping["corpus_path"] = args.corpus
    if args.out:
        mapping["out_dir"] = args.out
    config = ExperimentConfig.from_mapping(mapping)
    records = run_experiment(config)
    for r in records[-len(config.seeds) :]:
        print(f"{r.run_id} epoch {r.epoch}: silent WER {r.wer_silent:.3f}")
    if config.out_dir:
        print(f"metrics written to {Path(config.out_dir) / 'metrics.csv'}")
    return 0


def _cmd_decode(args) -> int:
    model = SpeechModel.load(args.checkpoint)
    corpus = load_corpus(args.corpus)
    lm = load_arpa_file(args.lm) if args.lm else None
    corpus_cfg = corpus.config
    decode_cfg = DecodeConfig(
        symbols=corpus_cfg.symbols,
        blank_index=corpus_cfg.blank_index,
        beam_width=args.beam,
        lm_weight=args.lm_weight if lm else 0.0,
        word_bonus=args.word_bonus,
    )
    condition = {"silent": ("emg", "GaddySilent"), "vocal": ("emg", "GaddyVocal"),
                 "audio": ("audio", "LibriSpeech")}[args.condition]
    modality, class_tag = condition
    lists = {}
    rates = []
    for utt in corpus.val:
        if utt.class_tag != class_tag:
            continue
        signal = utt.emg if modality == "emg" else utt.audio
        logits = model.decode_logits(model.encode(modality, signal)).data
        nbest = beam_search(logits, lm, decode_cfg, k=args.nbest)
        lists[utt.id] = nbest
        rates.append(wer(nbest.entries[0].transcript, utt.text))
    write_nbest_file(args.nbest_out, lists)
    print(f"decoded {len(lists)} utterances (condition={args.condition}, beam={args.beam}); "
          f"top-1 WER {float(np.mean(rates)):.3f}; wrote {args.nbest_out}")
    return 0


def _cmd_rescore(args) -> int:
    nbest = read_nbest_file(args.nbest)
    template = PromptTemplate(args.template)
    candidate_sets = [
        CandidateSet(utterance_id=utt_id, candidates=nb.transcripts(), provenance=nb.source)
        for utt_id, nb in nbest.items()
    ]
    if args.client == "mock":
        client = IdentityMockClient(template)
        policy = RescorePolicy(model="identity-mock")
    else:
        client = HttpChatClient(base_url=args.base_url, model=args.model)
        policy = RescorePolicy(model=args.model)
    results = rescore(candidate_sets, client, template, policy)
    chosen = {r.utterance_id: (r.transcript if not r.noncompliant else "<noncompliant>") for r in results}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(chosen, fh, indent=2, sort_keys=True)
        print(f"wrote {len(chosen)} rescored transcripts to {args.out}")
    else:
        for utt_id in sorted(chosen):
            print(f"{utt_id}\t{chosen[utt_id]}")
    if args.refs:
        corpus = load_corpus(args.refs)
        references = {u.id: u.text for u in corpus.train + corpus.val}
        stats = rescored_wer(results, references, candidate_sets, policy)
        print(f"WER included {stats['wer_included']:.3f} / excluded {stats['wer_excluded']:.3f} "
              f"({stats['noncompliant']} noncompliant of {stats['total']})")
    return 0


def _cmd_report(args) -> int:
    records: list[MetricsRecord] = []
    for path in args.runs:
        records.extend(read_metrics_csv(path))
    summary = report(records)
    for variant, stats in summary["summary"].items():
        line = ", ".join(f"{k}={v:.3f}" for k, v in sorted(stats.items()))
        print(f"{variant}: {line}")
    if args.csv:
        from .experiment import write_metrics_csv

        write_metrics_csv(records, args.csv)
        print(f"merged metrics written to {args.csv}")
    if args.spearman:
        col_x, col_y = args.spearman.split(",")
        rho, p = rank_correlation(records, col_x.strip(), col_y.strip())
        print(f"spearman({col_x.strip()}, {col_y.strip()}): rho={rho:.4f} p={p:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="silentspeech", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic paired-modality corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train loss variants and record metrics")
    p.add_argument("--config", help="key = value experiment config file")
    p.add_argument("--variant", help="comma-separated variant names")
    p.add_argument("--seed", type=int, help="single training seed")
    p.add_argument("--corpus", help="corpus .npz from `generate`")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("decode", help="beam-search decode a checkpoint into N-best lists")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--condition", choices=("silent", "vocal", "audio"), default="silent")
    p.add_argument("--beam", type=int, default=150)
    p.add_argument("--lm", help="ARPA language model file")
    p.add_argument("--lm-weight", type=float, default=1.0)
    p.add_argument("--word-bonus", type=float, default=0.5)
    p.add_argument("--nbest", type=int, default=10)
    p.add_argument("--nbest-out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("rescore", help="rescore N-best lists with a chat client")
    p.add_argument("--nbest", required=True)
    p.add_argument("--template", default="direct",
                   choices=("direct", "ensemble", "chain_of_reasoning", "nll_annotated"))
    p.add_argument("--client", choices=("mock", "live"), default="mock")
    p.add_argument("--base-url", default="https://api.openai.com/v1")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--out")
    p.add_argument("--refs", help="corpus .npz providing reference transcripts")
    p.set_defaults(func=_cmd_rescore)

    p = sub.add_parser("report", help="summarize metrics CSVs")
    p.add_argument("--runs", nargs="+", required=True, help="metrics.csv paths")
    p.add_argument("--csv", help="write the merged records here")
    p.add_argument("--spearman", help="two record columns, e.g. 'wer_silent,val_ctc_silent'")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
