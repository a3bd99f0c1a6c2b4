"""End-to-end model: frozen-capable dual encoders, fusion stack, heads.

The forward pipeline for one tracklet is

    pad -> per-frame encode -> temporal average -> [F_v, F_t] ->
    fusion blocks -> per-attribute heads -> logits

Batched variants process (batch, t, h, w, 3) clips in one tape pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .fusion import (ClassificationHeads, FusedSequence, FusionConfig,
                     FusionStack, TokenProjector, classify)
from .params import ParameterSet, load_checkpoint, read_checkpoint_arrays, save_checkpoint
from .schema import AttributeSchema
from .tensor import Tensor, concat, expand_leading, reshape, tensor_mean
from .text import TextConfig, TextEncoder, build_vocab, attribute_sentences, token_matrix
from .vision import VisionEncoder, VitConfig, pad_to_square

ENCODER_PREFIXES = ("vision.", "text.")


@dataclass(frozen=True)
class ModelConfig:
    vit: VitConfig = field(default_factory=VitConfig)
    text: TextConfig = field(default_factory=TextConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    use_fusion: bool = True

    def __post_init__(self):
        if not (self.vit.dim == self.text.dim == self.fusion.dim):
            raise DataError(
                f"token dims disagree: vision {self.vit.dim}, text {self.text.dim}, "
                f"fusion {self.fusion.dim}")


def paper_scale_config() -> ModelConfig:
    """The full-scale geometry (224px, 16px patches, 512-dim tokens).

    Depth is kept shallow: this configuration exists for shape smoke
    tests, not training.
    """
    return ModelConfig(
        vit=VitConfig(image_size=224, patch_size=16, dim=512, depth=1, heads=8),
        text=TextConfig(dim=512, blocks=1, heads=8, max_len=16),
        fusion=FusionConfig(dim=512, heads=8, blocks=1),
    )


class VideoAttributeModel:
    """Bundles parameters, tokenized prompts and the three sub-networks."""

    def __init__(self, config: ModelConfig, schema: AttributeSchema,
                 seed: int = 0, dtype=np.float32):
        if config.fusion.n_classes is not None and config.fusion.n_classes != schema.n_classes:
            raise DataError(
                f"fusion config declares {config.fusion.n_classes} classes, "
                f"schema has {schema.n_classes}")
        self.config = config
        self.schema = schema
        self.dtype = dtype
        self.params = ParameterSet()
        self.vocab = build_vocab(attribute_sentences(schema), config.text.max_len)
        self.token_ids = token_matrix(schema, self.vocab)

        def rng(k):
            return np.random.default_rng([seed, k])

        self.vision = VisionEncoder(self.params, config.vit, rng(1), dtype)
        self.text = TextEncoder(self.params, config.text, self.vocab.size, rng(2), dtype)
        if config.use_fusion:
            self.fusion = FusionStack(self.params, config.fusion, rng(3), dtype)
        else:
            self.fusion = TokenProjector(self.params, config.fusion.dim, rng(3), dtype)
        self.heads = ClassificationHeads(self.params, schema.n_classes,
                                         config.fusion.dim, rng(4), dtype)

    # -- geometry ---------------------------------------------------------

    @property
    def n_visual_tokens(self) -> int:
        return self.config.vit.n_tokens

    @property
    def n_classes(self) -> int:
        return self.schema.n_classes

    # -- forward paths ------------------------------------------------------

    def pad_clip(self, frames: np.ndarray) -> np.ndarray:
        """Raw frames (t, h, w, 3) -> padded (t, s, s, 3) in model dtype."""
        s = self.config.vit.image_size
        frames = np.asarray(frames, dtype=self.dtype)
        return np.stack([pad_to_square(f, s) for f in frames])

    def visual_features(self, frames: np.ndarray) -> Tensor:
        """One tracklet's raw frames (t, h, w, 3) -> averaged tokens (n_v, d)."""
        tokens = self.vision.encode(self.pad_clip(frames))
        return tensor_mean(tokens, axis=0)

    def visual_features_batch(self, clips: np.ndarray) -> Tensor:
        """Clips (b, t, h, w, 3) -> averaged tokens (b, n_v, d)."""
        b, t = clips.shape[:2]
        padded = np.stack([self.pad_clip(c) for c in clips])
        s = self.config.vit.image_size
        tokens = self.vision.encode(padded.reshape(b * t, s, s, 3))
        tokens = reshape(tokens, (b, t) + tokens.shape[1:])
        return tensor_mean(tokens, axis=1)

    def text_features(self) -> Tensor:
        """Text tokens (n_classes, d); depends only on schema and parameters."""
        return self.text.encode(self.token_ids)

    def fuse_classify(self, visual: Tensor, text: Tensor,
                      collect_attn: list | None = None) -> Tensor:
        """visual (b, n_v, d) or (n_v, d) + text (m, d) -> logits (b, m) or (m,)."""
        squeeze = visual.ndim == 2
        if squeeze:
            visual = reshape(visual, (1,) + visual.shape)
        b = visual.shape[0]
        text_b = expand_leading(text, b)
        fused_tokens = concat([visual, text_b], axis=1)
        fused_tokens = self.fusion(fused_tokens, collect_attn)
        fused = FusedSequence(fused_tokens, self.n_visual_tokens)
        logits = classify(fused, self.heads)
        if squeeze:
            logits = reshape(logits, (self.n_classes,))
        return logits

    def logits_for_clip(self, frames: np.ndarray) -> Tensor:
        """Full pipeline for one tracklet's raw frames -> logits (n_classes,)."""
        return self.fuse_classify(self.visual_features(frames), self.text_features())

    def logits_batch(self, clips: np.ndarray) -> Tensor:
        return self.fuse_classify(self.visual_features_batch(clips), self.text_features())

    # -- parameter policy ---------------------------------------------------

    def set_freeze(self, freeze_encoders: bool) -> None:
        """Freeze (or unfreeze) both encoder parameter sets."""
        for prefix in ENCODER_PREFIXES:
            self.params.set_trainable_prefix(prefix, not freeze_encoders)

    def encoder_parameters(self):
        return [p for p in self.params if p.name.startswith(ENCODER_PREFIXES)]

    def zero_fusion_residuals(self) -> None:
        """Zero the fusion blocks' output projections (identity-map configuration)."""
        self.fusion.zero_residual_projections()

    def save(self, path) -> None:
        save_checkpoint(self.params, path)

    def load(self, path) -> None:
        load_checkpoint(self.params, path)


def checkpoint_uses_fusion(path) -> bool:
    """Detect the variant from parameter names stored in a checkpoint."""
    names = read_checkpoint_arrays(path).keys()
    return not any(n.startswith("nofusion.") for n in names)


# -- model config file ----------------------------------------------------


def _parse_kv_sections(path) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = sections.setdefault(name, {})
            continue
        if "=" not in line or current is None:
            raise DataError(f"{path}:{lineno}: expected [section] or 'key = value'")
        key, _, value = line.partition("=")
        current[key.strip()] = value.strip()
    return sections


def load_model_config(path, use_fusion: bool = True) -> ModelConfig:
    """Read architecture settings from a sectioned key=value file.

    Missing sections or keys fall back to the built-in desk-scale
    defaults.
    """
    sections = _parse_kv_sections(path)

    def get(section, key, default):
        try:
            return type(default)(sections.get(section, {}).get(key, default))
        except ValueError:
            raise DataError(f"{path}: bad value for {section}.{key}") from None

    vit = VitConfig(
        image_size=get("vision", "image_size", 32),
        patch_size=get("vision", "patch_size", 8),
        dim=get("vision", "dim", 64),
        depth=get("vision", "depth", 2),
        heads=get("vision", "heads", 4),
        mlp_ratio=get("vision", "mlp_ratio", 4),
    )
    text = TextConfig(
        dim=get("text", "dim", vit.dim),
        blocks=get("text", "blocks", 2),
        heads=get("text", "heads", 4),
        max_len=get("text", "max_len", 16),
        mlp_ratio=get("text", "mlp_ratio", 4),
    )
    fusion = FusionConfig(
        dim=get("fusion", "dim", vit.dim),
        heads=get("fusion", "heads", 4),
        blocks=get("fusion", "blocks", 2),
        mlp_ratio=get("fusion", "mlp_ratio", 4),
    )
    return ModelConfig(vit=vit, text=text, fusion=fusion, use_fusion=use_fusion)
