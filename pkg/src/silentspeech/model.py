"""Toy-scale two-encoder network with a shared decoder.

Each modality has its own residual encoder into a common latent space;
one decoder maps latents to per-frame letter logits regardless of which
encoder produced them. Residual blocks are scaled by (1/sqrt(2))^l for
block number l (1-based) and use GeLU activations. Stride is 1, so the
latent sequence keeps the input frame count.

``train_step`` assembles the per-dataset losses for one minibatch:

* silent items: CTC on silent EMG, plus DTW-mediated contrastive terms
  against the parallel vocalized recording;
* vocalized items: CTC on both modalities, plus directly-paired
  contrastive terms;
* audio-only items: CTC on audio and class-labelled contrastive terms.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import DimensionError, GradientTape, Tensor, concat, gelu
from .losses import (
    LatentBatch,
    LossWeights,
    combined_loss,
    crosscon,
    ctc_loss,
    suptcon,
)
from .alignment import silent_pairing
from .sampler import CLASS_AUDIO, CLASS_SILENT, CLASS_VOCAL

__all__ = [
    "EncoderConfig",
    "ModelConfig",
    "TrainConfig",
    "SpeechModel",
    "AdaptiveOptimizer",
    "TrainingDivergedError",
    "train_step",
]

RESIDUAL_DECAY = 1.0 / np.sqrt(2.0)
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite; names the offending component."""


@dataclass
class EncoderConfig:
    """Sizes for one modality encoder; one latent column per 10 ms frame."""

    input_features: int
    latent_features: int = 16
    num_blocks: int = 2
    block_hidden: int = 16

    def __post_init__(self):
        if self.latent_features < 1 or self.num_blocks < 1:
            raise ValueError("latent_features and num_blocks must be >= 1")


@dataclass
class ModelConfig:
    emg_features: int = 8
    audio_features: int = 8
    latent_features: int = 16
    num_blocks: int = 2
    block_hidden: int = 16
    decoder_hidden: int = 32
    num_classes: int = 8  # letters + space + blank
    blank_index: int = 7

    def encoder(self, modality: str) -> EncoderConfig:
        inputs = {"emg": self.emg_features, "audio": self.audio_features}
        return EncoderConfig(
            input_features=inputs[modality],
            latent_features=self.latent_features,
            num_blocks=self.num_blocks,
            block_hidden=self.block_hidden,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    tau: float = 0.1
    use_dtw: bool = True
    dtw_source: str = "audio"  # warp vocalized audio (default) or "emg"
    check_bins: bool = False


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SpeechModel:
    """Parameter container plus the encode/decode forward passes."""

    MODALITIES = ("emg", "audio")

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.config = config
        self.seed = seed
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(config, seed)

    @staticmethod
    def _init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
        rng = np.random.default_rng(seed)
        F = config.latent_features
        H = config.block_hidden
        params: dict[str, np.ndarray] = {}
        for modality in SpeechModel.MODALITIES:
            enc = config.encoder(modality)
            params[f"{modality}.in.w"] = _uniform_fan_in(rng, enc.input_features, (F, enc.input_features))
            params[f"{modality}.in.b"] = np.zeros((F, 1))
            for block in range(1, enc.num_blocks + 1):
                params[f"{modality}.block{block}.w1"] = _uniform_fan_in(rng, F, (H, F))
                params[f"{modality}.block{block}.b1"] = np.zeros((H, 1))
                params[f"{modality}.block{block}.w2"] = _uniform_fan_in(rng, H, (F, H))
                params[f"{modality}.block{block}.b2"] = np.zeros((F, 1))
        D = config.decoder_hidden
        K = config.num_classes
        params["dec.ln.gain"] = np.ones((F, 1))
        params["dec.ln.bias"] = np.zeros((F, 1))
        params["dec.w1"] = _uniform_fan_in(rng, F, (D, F))
        params["dec.b1"] = np.zeros((D, 1))
        params["dec.w2"] = _uniform_fan_in(rng, D, (K, D))
        params["dec.b2"] = np.zeros((K, 1))
        return {name: Tensor(value, requires_grad=True) for name, value in params.items()}

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def encode(self, modality: str, signal) -> Tensor:
        """Encoder forward pass: (input_features x T) -> (latent x T)."""
        if modality not in self.MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        x = signal if isinstance(signal, Tensor) else Tensor(signal)
        enc = self.config.encoder(modality)
        if x.ndim != 2 or x.shape[0] != enc.input_features:
            raise DimensionError(
                f"{modality} signal must be {enc.input_features} x T, got {x.shape}"
            )
        p = self.params
        x = p[f"{modality}.in.w"] @ x + p[f"{modality}.in.b"]
        for block in range(1, enc.num_blocks + 1):
            h = gelu(p[f"{modality}.block{block}.w1"] @ x + p[f"{modality}.block{block}.b1"])
            h = p[f"{modality}.block{block}.w2"] @ h + p[f"{modality}.block{block}.b2"]
            x = h * (RESIDUAL_DECAY**block) + x
        return x

    def decode_logits(self, latent) -> Tensor:
        """Shared decoder: (latent x T) -> (T x num_classes) letter logits."""
        x = latent if isinstance(latent, Tensor) else Tensor(latent)
        p = self.params
        mu = x.mean(axis=0, keepdims=True)
        var = ((x - mu) * (x - mu)).mean(axis=0, keepdims=True)
        xn = (x - mu) / (var + 1e-5).sqrt()
        xn = xn * p["dec.ln.gain"] + p["dec.ln.bias"]
        h = gelu(p["dec.w1"] @ xn + p["dec.b1"])
        return (p["dec.w2"] @ h + p["dec.b2"]).T

    # -- persistence -------------------------------------------------------

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self.config), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        arrays = {name: t.data for name, t in self.params.items()}
        np.savez(
            path,
            __version__=np.array(CHECKPOINT_VERSION),
            __config__=np.array(json.dumps(asdict(self.config), sort_keys=True)),
            __config_hash__=np.array(self.config_hash()),
            __seed__=np.array(self.seed),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "SpeechModel":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            config = ModelConfig(**json.loads(str(data["__config__"])))
            stored_hash = str(data["__config_hash__"])
            seed = int(data["__seed__"])
            params = {
                name: Tensor(data[name], requires_grad=True)
                for name in data.files
                if not name.startswith("__")
            }
        model = cls(config, seed=seed, params=params)
        if model.config_hash() != stored_hash:
            raise ValueError("checkpoint config hash mismatch")
        return model

    def state_checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.parameter_names():
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()


class AdaptiveOptimizer:
    """Momentum-free adaptive step: divide by a running RMS of gradients."""

    def __init__(self, learning_rate: float = 0.05, decay: float = 0.9, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.decay = decay
        self.eps = eps
        self.sq_avg: dict[str, np.ndarray] = {}

    def step(self, model: SpeechModel, grads: dict[str, np.ndarray]) -> None:
        for name in model.parameter_names():
            g = grads.get(name)
            if g is None:
                continue
            sq = self.sq_avg.get(name)
            if sq is None:
                sq = np.zeros_like(g)
            sq = self.decay * sq + (1.0 - self.decay) * g * g
            self.sq_avg[name] = sq
            new_value = model.params[name].data - self.learning_rate * g / (np.sqrt(sq) + self.eps)
            model.params[name] = Tensor(new_value, requires_grad=True)


def _encode_text(text: str, symbols: dict[str, int]) -> list[int]:
    return [symbols[ch] for ch in text]


@dataclass
class _BatchParts:
    """Forward-pass artifacts for one minibatch."""

    emg_ctc: list[Tensor] = field(default_factory=list)
    audio_ctc: list[Tensor] = field(default_factory=list)
    cross_columns: list[LatentBatch] = field(default_factory=list)
    sup_columns: list[LatentBatch] = field(default_factory=list)


def _merge_fragments(fragments: list[LatentBatch]) -> LatentBatch:
    embeddings = concat([f.embeddings for f in fragments], axis=1)
    modality: list[str] = []
    utterance_id: list = []
    timestep: list[int] = []
    class_label: list = []
    pairing: list[int | None] = []
    offset = 0
    for f in fragments:
        modality.extend(f.modality)
        utterance_id.extend(f.utterance_id)
        timestep.extend(f.timestep)
        class_label.extend(f.class_label if f.class_label is not None else [None] * f.num_columns)
        if f.pairing is None:
            pairing.extend([None] * f.num_columns)
        else:
            pairing.extend(None if j is None else j + offset for j in f.pairing)
        offset += f.num_columns
    return LatentBatch(
        embeddings=embeddings,
        modality=modality,
        utterance_id=utterance_id,
        timestep=timestep,
        class_label=class_label,
        pairing=pairing,
    )


def _mean(parts: list[Tensor]) -> Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total / float(len(parts))


def forward_batch(
    model: SpeechModel,
    utterances,
    weights: LossWeights,
    cfg: TrainConfig,
    token_ids: dict[str, int],
) -> tuple[Tensor, dict[str, float]]:
    """Compute the weighted minibatch loss and its component values.

    ``token_ids`` maps transcript characters (including space) to CTC
    class indices. Components with zero weight are never computed.
    """
    need_cross = weights.cross != 0.0
    need_sup = weights.sup != 0.0
    parts = _BatchParts()
    blank = model.config.blank_index

    for utt in utterances:
        label = _encode_text(utt.text, token_ids)
        if utt.class_tag == CLASS_VOCAL:
            emg_latent = model.encode("emg", utt.emg) if (weights.emg or need_cross or need_sup) else None
            audio_latent = model.encode("audio", utt.audio) if (weights.audio or need_cross or need_sup) else None
            if weights.emg:
                parts.emg_ctc.append(ctc_loss(model.decode_logits(emg_latent), label, blank))
            if weights.audio:
                parts.audio_ctc.append(ctc_loss(model.decode_logits(audio_latent), label, blank))
            if need_cross or need_sup:
                T = emg_latent.shape[1]
                fragment = LatentBatch(
                    embeddings=concat([emg_latent, audio_latent], axis=1),
                    modality=["emg"] * T + ["audio"] * T,
                    utterance_id=[utt.id] * (2 * T),
                    timestep=list(range(T)) * 2,
                    class_label=list(utt.frame_labels) * 2,
                    pairing=[T + t for t in range(T)] + list(range(T)),
                )
                if need_cross:
                    parts.cross_columns.append(fragment)
                if need_sup:
                    parts.sup_columns.append(fragment)
        elif utt.class_tag == CLASS_SILENT:
            silent_latent = model.encode("emg", utt.emg) if (weights.emg or need_cross or need_sup) else None
            if weights.emg:
                parts.emg_ctc.append(ctc_loss(model.decode_logits(silent_latent), label, blank))
            if cfg.use_dtw and (need_cross or need_sup):
                parallel = utt.parallel
                if cfg.dtw_source == "emg":
                    vocal_latent = model.encode("emg", parallel.emg)
                else:
                    vocal_latent = model.encode("audio", parallel.audio)
                fragment = silent_pairing(
                    silent_latent,
                    vocal_latent,
                    parallel.frame_labels,
                    utterance_id=utt.id,
                    vocal_modality=cfg.dtw_source,
                )
                if need_cross:
                    parts.cross_columns.append(fragment)
                if need_sup:
                    parts.sup_columns.append(fragment)
        elif utt.class_tag == CLASS_AUDIO:
            audio_latent = model.encode("audio", utt.audio) if (weights.audio or need_sup) else None
            if weights.audio:
                parts.audio_ctc.append(ctc_loss(model.decode_logits(audio_latent), label, blank))
            if need_sup:
                T = audio_latent.shape[1]
                parts.sup_columns.append(
                    LatentBatch(
                        embeddings=audio_latent,
                        modality=["audio"] * T,
                        utterance_id=[utt.id] * T,
                        timestep=list(range(T)),
                        class_label=list(utt.frame_labels),
                        pairing=None,
                    )
                )
        else:
            raise ValueError(f"unknown class tag {utt.class_tag!r}")

    components: dict[str, Tensor | None] = {
        "emg_ctc": _mean(parts.emg_ctc) if parts.emg_ctc else None,
        "audio_ctc": _mean(parts.audio_ctc) if parts.audio_ctc else None,
        "cross": crosscon(_merge_fragments(parts.cross_columns), cfg.tau)
        if parts.cross_columns
        else None,
        "sup": suptcon(_merge_fragments(parts.sup_columns), cfg.tau)
        if parts.sup_columns
        else None,
    }

    metrics: dict[str, float] = {}
    for name, value in components.items():
        if value is None:
            continue
        v = value.item()
        if not np.isfinite(v):
            raise TrainingDivergedError(f"loss component {name!r} is not finite: {v}")
        metrics[name] = v

    effective = LossWeights(
        emg=weights.emg if components["emg_ctc"] is not None else 0.0,
        audio=weights.audio if components["audio_ctc"] is not None else 0.0,
        cross=weights.cross if components["cross"] is not None else 0.0,
        sup=weights.sup if components["sup"] is not None else 0.0,
    )
    total = combined_loss(
        emg_ctc=components["emg_ctc"],
        audio_ctc=components["audio_ctc"],
        cross=components["cross"],
        sup=components["sup"],
        weights=effective,
    )
    metrics["total"] = total.item()
    return total, metrics


def train_step(
    model: SpeechModel,
    utterances,
    weights: LossWeights,
    cfg: TrainConfig,
    optimizer: AdaptiveOptimizer,
    token_ids: dict[str, int],
) -> dict[str, float]:
    """One forward/backward pass and optimizer update over a minibatch."""
    total, metrics = forward_batch(model, utterances, weights, cfg, token_ids)
    if not np.isfinite(total.item()):
        raise TrainingDivergedError(f"total loss is not finite: {total.item()}")
    tape = GradientTape(total)
    tape.backward()
    grads = {name: tape.gradient(tensor) for name, tensor in model.params.items()}
    optimizer.step(model, grads)
    for name in model.parameter_names():
        if not np.all(np.isfinite(model.params[name].data)):
            raise TrainingDivergedError(f"parameter {name!r} became non-finite after update")
    return metrics
