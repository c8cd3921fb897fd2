"""The grounding network: multi-modal fusion of pyramid features with the
phrase encoding and normalized cell centers, the per-anchor prediction head,
and end-to-end top-1 inference."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from . import text as textmod
from .anchors import (
    AnchorSet,
    AnchorSpec,
    Box,
    box_norm_to_pixel,
    decode_box,
    generate_grid,
)
from .errors import ConfigError
from .tensor import LSTMParams, Parameter, Tensor
from .text import PhraseEncoding, TransformerParams, Vocabulary
from .vision import Backbone, FeaturePyramid, ImageTensor


@dataclass
class ModelConfig:
    image_size: int = 128
    d_w: int = 64
    c_v: int = 64
    strides: tuple[int, ...] = (8, 16, 32)
    encoder: str = "bilstm"  # or "transformer"
    heads: int = 4
    head_hidden: int = 128  # 0 = single linear map per location
    head_shared: bool = True
    anchor_scales: tuple[float, ...] = (1.0, 2.0 ** (1.0 / 3.0), 2.0 ** (2.0 / 3.0))
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    anchor_base: float = 1.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    focal_negative_weighting: bool = True
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        self.anchor_scales = tuple(float(s) for s in self.anchor_scales)
        self.anchor_ratios = tuple(float(r) for r in self.anchor_ratios)
        if self.encoder not in ("bilstm", "transformer"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "bilstm" and self.d_w % 2 != 0:
            raise ConfigError("bilstm encoder needs an even d_w")
        if self.encoder == "transformer" and self.d_w % self.heads != 0:
            raise ConfigError("transformer encoder needs d_w divisible by heads")

    @property
    def anchor_spec(self) -> AnchorSpec:
        return AnchorSpec(self.anchor_scales, self.anchor_ratios, self.anchor_base)

    @property
    def fused_channels(self) -> int:
        return self.c_v + self.d_w + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class HeadOutput:
    logits: Tensor  # (N,)
    regs: Tensor  # (N, 4)


@dataclass
class Grounding:
    box_norm: Box
    box_px: Box
    score: float
    anchor_index: int


def full_scale_config() -> ModelConfig:
    """Full-scale preset: 320 px input, 300-wide embeddings (no pretrained
    weights ship with it, so expect to bring serious training time)."""
    return ModelConfig(image_size=320, d_w=300, c_v=256, encoder="bilstm")


class GroundingModel:
    """All trainable state plus the forward passes, addressable by name for
    checkpointing."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}

        d_w = config.d_w
        self.embedding = self._add(
            Parameter(
                "embed.table",
                Tensor(rng.normal(0.0, 0.1, size=(vocab.size, d_w)).astype(np.float32)),
            )
        )
        if config.encoder == "bilstm":
            d_h = d_w // 2
            self.lstm_fwd = self._lstm_params(rng, "text.fwd", d_w, d_h)
            self.lstm_bwd = self._lstm_params(rng, "text.bwd", d_w, d_h)
        else:
            self.trm = self._transformer_params(rng, "text.trm", d_w, 2 * d_w)

        self.backbone = Backbone(
            config.image_size, config.c_v, config.strides, rng=rng
        )
        for p in self.backbone.params.values():
            self._add(p)

        c_m = config.fused_channels
        n_out = config.anchor_spec.per_cell * 5
        n_heads = 1 if config.head_shared else len(config.strides)
        self.heads = []
        for i in range(n_heads):
            tag = "head" if config.head_shared else f"head.l{i}"
            if config.head_hidden > 0:
                w1 = self._add(self._conv1x1(rng, f"{tag}.w1", config.head_hidden, c_m))
                b1 = self._add(Parameter(f"{tag}.b1", Tensor.zeros((config.head_hidden,))))
                in2 = config.head_hidden
            else:
                w1 = b1 = None
                in2 = c_m
            w2 = self._add(self._conv1x1(rng, f"{tag}.w2", n_out, in2))
            b2_init = np.zeros(n_out, dtype=np.float32)
            # foreground prior: start scores near p=0.01 so the focal term is calm
            b2_init[0::5] = -np.log(99.0)
            b2 = self._add(Parameter(f"{tag}.b2", Tensor(b2_init)))
            self.heads.append((w1, b1, w2, b2))

        self.anchor_set = AnchorSet(self.backbone.grid_sizes(), config.anchor_spec)
        self._center_maps = [
            _center_channels(n) for n in self.backbone.grid_sizes()
        ]

    # -- parameter plumbing ---------------------------------------------------

    def _add(self, p: Parameter) -> Parameter:
        if p.name in self.params:
            raise ConfigError(f"duplicate parameter name {p.name}")
        self.params[p.name] = p
        return p

    def _conv1x1(self, rng, name, c_out, c_in):
        w = rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_out, c_in, 1, 1))
        return Parameter(name, Tensor(w.astype(np.float32)))

    def _lstm_params(self, rng, prefix, d_in, d_h):
        k = 1.0 / np.sqrt(d_h)
        mk = lambda shape: Tensor(rng.uniform(-k, k, size=shape).astype(np.float32))
        w_ih = self._add(Parameter(f"{prefix}.w_ih", mk((4 * d_h, d_in))))
        w_hh = self._add(Parameter(f"{prefix}.w_hh", mk((4 * d_h, d_h))))
        bias = self._add(Parameter(f"{prefix}.b", Tensor.zeros((4 * d_h,))))
        return LSTMParams(w_ih.tensor, w_hh.tensor, bias.tensor)

    def _transformer_params(self, rng, prefix, d, d_ff):
        def lin(name, shape):
            bound = np.sqrt(6.0 / sum(shape))
            t = Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32))
            return self._add(Parameter(f"{prefix}.{name}", t)).tensor

        def vec(name, size, value=0.0):
            t = Tensor(np.full(size, value, dtype=np.float32))
            return self._add(Parameter(f"{prefix}.{name}", t)).tensor

        return TransformerParams(
            wq=lin("wq", (d, d)), wk=lin("wk", (d, d)), wv=lin("wv", (d, d)),
            wo=lin("wo", (d, d)),
            bq=vec("bq", d), bk=vec("bk", d), bv=vec("bv", d), bo=vec("bo", d),
            ln1_g=vec("ln1.g", d, 1.0), ln1_b=vec("ln1.b", d),
            ln2_g=vec("ln2.g", d, 1.0), ln2_b=vec("ln2.b", d),
            ff_w1=lin("ff.w1", (d, d_ff)), ff_b1=vec("ff.b1", d_ff),
            ff_w2=lin("ff.w2", (d_ff, d)), ff_b2=vec("ff.b2", d),
        )

    def parameters(self) -> list[Parameter]:
        return [self.params[k] for k in sorted(self.params)]

    # -- forward passes ---------------------------------------------------------

    def encode_phrase(self, phrase: str) -> PhraseEncoding:
        tokens = textmod.tokenize(phrase)
        ids = self.vocab.encode(tokens)
        embedded = textmod.embed_ids(ids, self.embedding)
        if self.config.encoder == "bilstm":
            return textmod.bilstm_encode(embedded, self.lstm_fwd, self.lstm_bwd)
        return textmod.transformer_encode(embedded, self.trm, heads=self.config.heads)

    def fuse(self, pyramid: FeaturePyramid, phrase: PhraseEncoding) -> list[Tensor]:
        if phrase.vector.shape != (self.config.d_w,):
            raise ConfigError(
                f"phrase width {phrase.vector.shape} != ({self.config.d_w},)"
            )
        fused = []
        for level, centers in zip(pyramid.levels, self._center_maps):
            c_v, n, _ = level.shape
            tiled = T.reshape(phrase.vector, (self.config.d_w, 1, 1)).broadcast_to(
                (self.config.d_w, n, n)
            )
            fused.append(T.concat([level, tiled, Tensor(centers)], axis=0))
        return fused

    def predict(self, fused: list[Tensor]) -> HeadOutput:
        per_cell = self.config.anchor_spec.per_cell
        flats = []
        for j, fm in enumerate(fused):
            w1, b1, w2, b2 = self.heads[0 if self.config.head_shared else j]
            x = fm
            if w1 is not None:
                x = T.relu(_conv1x1_biased(x, w1, b1))
            out = _conv1x1_biased(x, w2, b2)  # (9*5, n, n)
            n = out.shape[1]
            per_anchor = T.reshape(out, (per_cell, 5, n, n))
            per_anchor = T.transpose(per_anchor, (2, 3, 0, 1))  # (n, n, 9, 5)
            flats.append(T.reshape(per_anchor, (n * n * per_cell, 5)))
        allout = T.concat(flats, axis=0)
        if allout.shape[0] != len(self.anchor_set):
            raise ConfigError(
                f"head emitted {allout.shape[0]} anchors, expected {len(self.anchor_set)}"
            )
        return HeadOutput(
            logits=T.getitem(allout, (slice(None), 0)),
            regs=T.getitem(allout, (slice(None), slice(1, 5))),
        )

    def encode_image(self, image: ImageTensor) -> FeaturePyramid:
        """Backbone pass alone; reusable across phrases on the same image."""
        return self.backbone.forward(image)

    def forward_with_pyramid(self, pyramid: FeaturePyramid, phrase: str) -> HeadOutput:
        enc = self.encode_phrase(phrase)
        return self.predict(self.fuse(pyramid, enc))

    def forward(self, image: ImageTensor, phrase: str) -> HeadOutput:
        return self.forward_with_pyramid(self.encode_image(image), phrase)

    def _top1_from_head(self, head: HeadOutput, source_size) -> Grounding:
        scores = _sigmoid_np(head.logits.data)
        idx = int(np.argmax(scores))  # ties resolve to the lowest flat index
        box_norm = decode_box(head.regs.data[idx], self.anchor_set.box(idx))
        return Grounding(
            box_norm=box_norm,
            box_px=box_norm_to_pixel(box_norm, source_size),
            score=float(scores[idx]),
            anchor_index=idx,
        )

    def infer_top1(self, image: ImageTensor, phrase: str) -> Grounding:
        with T.no_grad():
            return self._top1_from_head(self.forward(image, phrase), image.source_size)

    def infer_top1_with_pyramid(
        self, pyramid: FeaturePyramid, source_size, phrase: str
    ) -> Grounding:
        with T.no_grad():
            return self._top1_from_head(
                self.forward_with_pyramid(pyramid, phrase), source_size
            )


def _conv1x1_biased(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return T.conv2d(x, w.tensor, stride=1, padding=0, bias=b.tensor)


def _center_channels(n: int) -> np.ndarray:
    """Two (n, n) planes of cell-center coordinates mapped from (-1,1) to (0,1)."""
    centers = generate_grid(n)  # (n*n, 2) row-major (cx, cy)
    cx = (centers[:, 0].reshape(n, n) + 1.0) * 0.5
    cy = (centers[:, 1].reshape(n, n) + 1.0) * 0.5
    return np.stack([cx, cy]).astype(np.float32)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
