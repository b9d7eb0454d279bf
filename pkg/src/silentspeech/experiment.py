"""Experiment orchestration: training loop variants, per-condition
evaluation, metrics records with CSV round-tripping, and summaries.

Loss-weight variants (the contrastive-mediation flag is carried in the
variant name; ``*_dtw`` variants align silent items against their
parallel vocalized recording in latent space):

========================  =====  ======  =====  ====
variant                    emg   audio   cross  sup
========================  =====  ======  =====  ====
audio                       0      1       0     0
emg                         1      0       0     0
emg_audio                   1      1       0     0
suptcon                     1      1       0     0.1
crosscon                    1      1       1     0
crosscon_suptcon            1      1       1     0.1
========================  =====  ======  =====  ====
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path

import numpy as np

from .corpus import Corpus, SyntheticCorpusConfig, Utterance, generate_corpus, load_corpus
from .decoding import DecodeConfig, beam_search
from .losses import LossWeights, ctc_loss
from .metrics import spearman_rho, wer
from .model import AdaptiveOptimizer, ModelConfig, SpeechModel, TrainConfig, train_step
from .sampler import CLASS_AUDIO, CLASS_SILENT, CLASS_VOCAL, PackingConfig, epoch_stream

__all__ = [
    "VARIANTS",
    "variant_settings",
    "MetricsRecord",
    "ExperimentConfig",
    "evaluate",
    "run_experiment",
    "write_metrics_csv",
    "read_metrics_csv",
    "report",
    "parse_config_file",
]

_BASE_VARIANTS: dict[str, LossWeights] = {
    "audio": LossWeights(emg=0.0, audio=1.0, cross=0.0, sup=0.0),
    "emg": LossWeights(emg=1.0, audio=0.0, cross=0.0, sup=0.0),
    "emg_audio": LossWeights(emg=1.0, audio=1.0, cross=0.0, sup=0.0),
    "suptcon": LossWeights(emg=1.0, audio=1.0, cross=0.0, sup=0.1),
    "crosscon": LossWeights(emg=1.0, audio=1.0, cross=1.0, sup=0.0),
    "crosscon_suptcon": LossWeights(emg=1.0, audio=1.0, cross=1.0, sup=0.1),
}

VARIANTS: tuple[str, ...] = tuple(_BASE_VARIANTS) + tuple(
    f"{name}_dtw" for name in _BASE_VARIANTS if "con" in name
)


def variant_settings(variant: str) -> tuple[LossWeights, bool]:
    """Map a variant name to its loss weights and DTW-mediation flag."""
    use_dtw = variant.endswith("_dtw")
    base = variant[: -len("_dtw")] if use_dtw else variant
    if base not in _BASE_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; available: {', '.join(VARIANTS)}")
    return _BASE_VARIANTS[base], use_dtw


# CSV column order is the file contract; keep in sync with MetricsRecord.
METRICS_HEADER = (
    "run_id",
    "variant",
    "seed",
    "epoch",
    "loss_total",
    "loss_emg_ctc",
    "loss_audio_ctc",
    "loss_cross",
    "loss_sup",
    "wer_silent",
    "wer_vocal",
    "wer_audio",
    "val_ctc_silent",
    "val_ctc_vocal",
    "val_ctc_audio",
)


@dataclass
class MetricsRecord:
    """One evaluation snapshot of one run (append-only, one per epoch)."""

    run_id: str
    variant: str
    seed: int
    epoch: int
    loss_total: float | None = None
    loss_emg_ctc: float | None = None
    loss_audio_ctc: float | None = None
    loss_cross: float | None = None
    loss_sup: float | None = None
    wer_silent: float | None = None
    wer_vocal: float | None = None
    wer_audio: float | None = None
    val_ctc_silent: float | None = None
    val_ctc_vocal: float | None = None
    val_ctc_audio: float | None = None
    wall_time: float | None = None  # reported separately, never in the metrics CSV

    def row(self) -> list[str]:
        out = []
        for name in METRICS_HEADER:
            value = getattr(self, name)
            out.append("" if value is None else (repr(value) if isinstance(value, float) else str(value)))
        return out


@dataclass
class ExperimentConfig:
    corpus_path: str | None = None
    corpus_seed: int = 0
    variants: tuple[str, ...] = ("emg", "emg_audio", "crosscon_dtw")
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 12
    eval_every: int = 4
    sampler_max_len: int = 600
    sampler_seed: int = 0
    failure_threshold: int = 50
    learning_rate: float = 0.01
    lr_gamma: float = 1.0  # per-epoch multiplicative learning-rate decay
    rms_decay: float = 0.9
    tau: float = 0.1
    dtw_source: str = "audio"
    latent_features: int = 12
    num_blocks: int = 2
    block_hidden: int = 12
    decoder_hidden: int = 24
    beam_width: int = 150
    out_dir: str | None = None

    def model_config(self, corpus: Corpus) -> ModelConfig:
        cfg = corpus.config
        return ModelConfig(
            emg_features=cfg.emg_dim,
            audio_features=cfg.audio_dim,
            latent_features=self.latent_features,
            num_blocks=self.num_blocks,
            block_hidden=self.block_hidden,
            decoder_hidden=self.decoder_hidden,
            num_classes=cfg.num_classes,
            blank_index=cfg.blank_index,
        )

    def train_config(self, use_dtw: bool) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            rms_decay=self.rms_decay,
            tau=self.tau,
            use_dtw=use_dtw,
            dtw_source=self.dtw_source,
        )

    def packing_config(self) -> PackingConfig:
        return PackingConfig(
            max_len=self.sampler_max_len,
            required_classes=(CLASS_SILENT,),
            failure_threshold=self.failure_threshold,
            seed=self.sampler_seed,
        )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name: f.type for f in dataclass_fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise KeyError(f"unknown experiment config key {key!r}")
            current = getattr(cls(), key)
            if isinstance(current, tuple):
                parts = [p.strip() for p in str(raw).split(",") if p.strip()]
                elem = int if key == "seeds" else str
                kwargs[key] = tuple(elem(p) for p in parts)
            elif isinstance(current, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw if raw != "" else None
        return cls(**kwargs)


def parse_config_file(path) -> dict:
    """Line-oriented ``key = value`` config; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


_CONDITIONS = (
    ("silent", CLASS_SILENT, "emg"),
    ("vocal", CLASS_VOCAL, "emg"),
    ("audio", CLASS_AUDIO, "audio"),
)


def evaluate(model: SpeechModel, corpus: Corpus, beam_width: int = 150) -> dict[str, float]:
    """Mean WER and CTC loss per validation condition.

    Conditions follow the data layout: silent utterances decode from EMG,
    vocalized utterances from EMG, audio-only utterances from audio.
    Evaluation never mutates parameters (verified by checksum).
    """
    before = model.state_checksum()
    corpus_cfg = corpus.config
    decode_cfg = DecodeConfig(
        symbols=corpus_cfg.symbols,
        blank_index=corpus_cfg.blank_index,
        beam_width=beam_width,
        lm_weight=0.0,
        word_bonus=0.0,
    )
    token_ids = corpus_cfg.token_ids
    out: dict[str, float] = {}
    for name, class_tag, modality in _CONDITIONS:
        utterances = [u for u in corpus.val if u.class_tag == class_tag]
        if not utterances:
            continue
        wers, ctcs = [], []
        for utt in utterances:
            signal = utt.emg if modality == "emg" else utt.audio
            logits = model.decode_logits(model.encode(modality, signal))
            best = beam_search(logits.data, None, decode_cfg, k=1).entries[0].transcript
            wers.append(wer(best, utt.text))
            label = [token_ids[ch] for ch in utt.text]
            ctcs.append(ctc_loss(logits, label, corpus_cfg.blank_index).item())
        out[f"wer_{name}"] = float(np.mean(wers))
        out[f"val_ctc_{name}"] = float(np.mean(ctcs))
    if model.state_checksum() != before:
        raise RuntimeError("evaluation mutated model parameters")
    return out


def _load_corpus(config: ExperimentConfig) -> Corpus:
    if config.corpus_path:
        return load_corpus(config.corpus_path)
    return generate_corpus(SyntheticCorpusConfig(seed=config.corpus_seed))


def run_experiment(
    config: ExperimentConfig,
    corpus: Corpus | None = None,
    check_bins: bool = False,
) -> list[MetricsRecord]:
    """Train every configured (variant, seed) run and record metrics.

    All runs share the sampler seed, so each model sees the same sequence
    of minibatches. Metrics are written to ``out_dir/metrics.csv`` (wall
    times go to a separate ``timings.csv``) and each run's final model to
    ``out_dir/<run_id>.npz``.
    """
    corpus = corpus or _load_corpus(config)
    token_ids = corpus.config.token_ids
    items = corpus.packing_items("train")
    packing = config.packing_config()
    records: list[MetricsRecord] = []

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    for variant in config.variants:
        weights, use_dtw = variant_settings(variant)
        train_cfg = config.train_config(use_dtw)
        for seed in config.seeds:
            run_id = f"{variant}-s{seed}"
            start = time.monotonic()
            model = SpeechModel(config.model_config(corpus), seed=seed)
            optimizer = AdaptiveOptimizer(
                learning_rate=config.learning_rate, decay=config.rms_decay
            )
            stream = epoch_stream(items, packing, num_epochs=config.epochs)
            for epoch, bins in enumerate(stream, start=1):
                optimizer.learning_rate = config.learning_rate * config.lr_gamma ** (epoch - 1)
                sums: dict[str, float] = {}
                count = 0
                for b in bins:
                    batch = [corpus.train[i] for i in b.items]
                    if check_bins:
                        _assert_bin_valid(batch, b, packing)
                    metrics = train_step(model, batch, weights, train_cfg, optimizer, token_ids)
                    for key, value in metrics.items():
                        sums[key] = sums.get(key, 0.0) + value
                    count += 1
                means = {k: v / count for k, v in sums.items()} if count else {}
                if epoch % config.eval_every == 0 or epoch == config.epochs:
                    val = evaluate(model, corpus, beam_width=config.beam_width)
                    records.append(
                        MetricsRecord(
                            run_id=run_id,
                            variant=variant,
                            seed=seed,
                            epoch=epoch,
                            loss_total=means.get("total"),
                            loss_emg_ctc=means.get("emg_ctc"),
                            loss_audio_ctc=means.get("audio_ctc"),
                            loss_cross=means.get("cross"),
                            loss_sup=means.get("sup"),
                            wall_time=time.monotonic() - start,
                            **val,
                        )
                    )
            if out_dir:
                model.save(out_dir / f"{run_id}.npz")

    if out_dir:
        write_metrics_csv(records, out_dir / "metrics.csv")
        with open(out_dir / "timings.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run_id", "epoch", "wall_time_s"])
            for r in records:
                writer.writerow([r.run_id, r.epoch, f"{r.wall_time:.3f}"])
    return records


def _assert_bin_valid(batch: list[Utterance], b, packing: PackingConfig) -> None:
    total = sum(u.packing_length() for u in batch)
    assert total <= packing.max_len, f"bin exceeds cap: {total} > {packing.max_len}"
    tags = {u.class_tag for u in batch}
    for required in packing.required_classes:
        assert required in tags, f"bin lacks required class {required}"


def write_metrics_csv(records: list[MetricsRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for record in records:
            writer.writerow(record.row())


def read_metrics_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        for row in reader:
            values: dict = dict(zip(METRICS_HEADER, row))
            kwargs = {
                "run_id": values["run_id"],
                "variant": values["variant"],
                "seed": int(values["seed"]),
                "epoch": int(values["epoch"]),
            }
            for name in METRICS_HEADER[4:]:
                kwargs[name] = float(values[name]) if values[name] else None
            records.append(MetricsRecord(**kwargs))
    return records


def report(records: list[MetricsRecord]) -> dict:
    """Summaries for humans and plots.

    Returns per-variant WER statistics (mean/min of each run's final and
    best epochs across seeds) plus per-run WER-vs-epoch and CTC-vs-epoch
    series, so the divergence between the two curves stays visible.
    """
    if not records:
        raise ValueError("need at least one record")
    by_run: dict[str, list[MetricsRecord]] = {}
    for r in records:
        by_run.setdefault(r.run_id, []).append(r)
    for run_records in by_run.values():
        run_records.sort(key=lambda r: r.epoch)

    variants: dict[str, list[str]] = {}
    for run_id, run_records in by_run.items():
        variants.setdefault(run_records[0].variant, []).append(run_id)

    summary = {}
    for variant, run_ids in sorted(variants.items()):
        stats: dict[str, float] = {}
        for metric in ("wer_silent", "wer_vocal", "wer_audio"):
            finals, bests = [], []
            for run_id in sorted(run_ids):
                values = [getattr(r, metric) for r in by_run[run_id] if getattr(r, metric) is not None]
                if values:
                    finals.append(values[-1])
                    bests.append(min(values))
            if finals:
                stats[f"{metric}_final_mean"] = float(np.mean(finals))
                stats[f"{metric}_best_mean"] = float(np.mean(bests))
                stats[f"{metric}_best_min"] = float(min(bests))
        summary[variant] = stats

    series = {
        run_id: {
            "epoch": [r.epoch for r in run_records],
            "wer_silent": [r.wer_silent for r in run_records],
            "wer_vocal": [r.wer_vocal for r in run_records],
            "wer_audio": [r.wer_audio for r in run_records],
            "val_ctc_silent": [r.val_ctc_silent for r in run_records],
            "val_ctc_vocal": [r.val_ctc_vocal for r in run_records],
            "val_ctc_audio": [r.val_ctc_audio for r in run_records],
        }
        for run_id, run_records in sorted(by_run.items())
    }
    return {"summary": summary, "series": series}


def rank_correlation(records: list[MetricsRecord], column_x: str, column_y: str) -> tuple[float, float]:
    """Spearman rho between two metric columns over the given records."""
    xs = [getattr(r, column_x) for r in records]
    ys = [getattr(r, column_y) for r in records]
    if any(v is None for v in xs + ys):
        raise ValueError("records are missing values in the requested columns")
    return spearman_rho(xs, ys)
