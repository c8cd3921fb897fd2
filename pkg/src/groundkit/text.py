"""Phrase processing: tokenization, vocabulary, embedding, and the two
sequence encoders (bi-directional LSTM and a single transformer layer).

Both encoders compress a (T, d_w) embedded phrase into one d_w vector so the
fusion stage never branches on which encoder produced it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, EmptyPhraseError, FormatError
from .tensor import LSTMParams, Parameter, Tensor

MAX_PHRASE_TOKENS = 50
PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_CLEAN = re.compile(r"[^a-z0-9\s]+")


def tokenize(phrase: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace, cap at 50 tokens."""
    cleaned = _CLEAN.sub(" ", phrase.strip().lower())
    tokens = cleaned.split()
    if not tokens:
        raise EmptyPhraseError(f"phrase {phrase!r} is empty after cleaning")
    return tokens[:MAX_PHRASE_TOKENS]


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(
        default_factory=lambda: {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    )

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @classmethod
    def build(cls, phrases) -> "Vocabulary":
        """Vocabulary from an iterable of raw phrases; id order is deterministic
        (sorted tokens after the reserved entries)."""
        seen = set()
        for phrase in phrases:
            seen.update(tokenize(phrase))
        vocab = cls()
        for tok in sorted(seen):
            vocab.token_to_id.setdefault(tok, len(vocab.token_to_id))
        return vocab

    def encode(self, tokens) -> np.ndarray:
        return np.array(
            [self.token_to_id.get(t, UNK_ID) for t in tokens], dtype=np.int64
        )

    def oov_rate(self, phrases) -> float:
        total = unknown = 0
        for phrase in phrases:
            for tok in tokenize(phrase):
                total += 1
                unknown += tok not in self.token_to_id
        return unknown / total if total else 0.0

    def to_dict(self) -> dict[str, int]:
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "Vocabulary":
        if d.get(PAD_TOKEN) != PAD_ID or d.get(UNK_TOKEN) != UNK_ID:
            raise FormatError("vocabulary is missing reserved pad/unk entries")
        ids = sorted(d.values())
        if ids != list(range(len(ids))):
            raise FormatError("vocabulary ids are not dense")
        return cls(token_to_id=dict(d))


@dataclass
class PhraseEncoding:
    vector: Tensor  # (d_w,)
    token_count: int


def embed_ids(token_ids: np.ndarray, table: Parameter) -> Tensor:
    """Row lookup -> (T, d_w); differentiable w.r.t. the table."""
    return T.index_rows(table.tensor, token_ids)


def embed(tokens, vocab: Vocabulary, table: Parameter) -> Tensor:
    """Embed a token list; unseen tokens take the UNK row."""
    return embed_ids(vocab.encode(tokens), table)


def load_pretrained_vectors(path, vocab: Vocabulary, table: Parameter) -> float:
    """Overwrite table rows from a whitespace text file (token then d_w floats
    per line); returns the fraction of vocabulary tokens covered."""
    d_w = table.tensor.shape[1]
    covered = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            tok, values = parts[0], parts[1:]
            if len(values) != d_w:
                raise FormatError(
                    f"line {lineno}: expected {d_w} values for {tok!r}, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError as e:
                raise FormatError(f"line {lineno}: malformed float ({e})") from None
            idx = vocab.token_to_id.get(tok)
            if idx is not None:
                table.tensor.data[idx] = vec
                covered += 1
    return covered / max(1, vocab.size - 2)


# ---------------------------------------------------------------------------
# bi-directional LSTM encoder
# ---------------------------------------------------------------------------


def valid_length(token_ids: np.ndarray) -> int:
    nz = np.flatnonzero(token_ids != PAD_ID)
    return int(nz[-1]) + 1 if nz.size else 0


def bilstm_encode(
    embedded: Tensor,
    forward_cell: LSTMParams,
    backward_cell: LSTMParams,
    valid: int | None = None,
) -> PhraseEncoding:
    """Concat of the forward state after the last non-pad step and the backward
    state after reaching step 1. Each direction runs at width d_w/2; pads are
    never processed, so padding cannot change the encoding."""
    t_total, d_w = embedded.shape
    if d_w % 2 != 0:
        raise ConfigError(f"bilstm needs an even embedding width, got {d_w}")
    d_h = d_w // 2
    if forward_cell.hidden_size() != d_h or backward_cell.hidden_size() != d_h:
        raise ConfigError(
            f"bilstm cells must have hidden width {d_h}, got "
            f"{forward_cell.hidden_size()}/{backward_cell.hidden_size()}"
        )
    t_eff = t_total if valid is None else min(valid, t_total)
    if t_eff < 1:
        raise EmptyPhraseError("bilstm_encode: no non-pad tokens")

    h = c = Tensor.zeros((d_h,))
    for t in range(t_eff):
        h, c = T.lstm_step(T.getitem(embedded, t), h, c, forward_cell)
    h_fwd = h

    h = c = Tensor.zeros((d_h,))
    for t in range(t_eff - 1, -1, -1):
        h, c = T.lstm_step(T.getitem(embedded, t), h, c, backward_cell)
    h_bwd = h

    vec = T.concat([h_fwd, h_bwd], axis=0)
    return PhraseEncoding(vector=vec, token_count=t_eff)


# ---------------------------------------------------------------------------
# single-layer transformer encoder
# ---------------------------------------------------------------------------


@dataclass
class TransformerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor  # all (d_w, d_w)
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor  # (d_w,)
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ff_w1: Tensor  # (d_w, d_ff)
    ff_b1: Tensor
    ff_w2: Tensor  # (d_ff, d_w)
    ff_b2: Tensor


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((t, d), dtype=np.float32)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def transformer_encode(
    embedded: Tensor,
    params: TransformerParams,
    valid: int | None = None,
    heads: int = 4,
    use_positions: bool = True,
    return_attention: bool = False,
):
    """One encoder layer (multi-head self-attention + feed-forward, residual +
    layer norm, sinusoidal positions) followed by mean pooling over the non-pad
    positions."""
    t_total, d_w = embedded.shape
    if d_w % heads != 0:
        raise ConfigError(f"embedding width {d_w} not divisible by {heads} heads")
    d_k = d_w // heads
    t_eff = t_total if valid is None else min(valid, t_total)
    if t_eff < 1:
        raise EmptyPhraseError("transformer_encode: no non-pad tokens")

    x = T.getitem(embedded, slice(0, t_eff))
    if use_positions:
        x = T.add(x, Tensor(sinusoidal_positions(t_eff, d_w)))

    q = _linear(x, params.wq, params.bq)
    k = _linear(x, params.wk, params.bk)
    v = _linear(x, params.wv, params.bv)

    ctx_heads = []
    attn_maps = []
    scale = 1.0 / np.sqrt(d_k)
    for h in range(heads):
        cols = slice(h * d_k, (h + 1) * d_k)
        qh = T.getitem(q, (slice(None), cols))
        kh = T.getitem(k, (slice(None), cols))
        vh = T.getitem(v, (slice(None), cols))
        scores = T.mul(T.matmul(qh, T.transpose(kh, (1, 0))), scale)
        attn = T.softmax(scores, axis=-1)
        attn_maps.append(attn)
        ctx_heads.append(T.matmul(attn, vh))
    ctx = T.concat(ctx_heads, axis=1)
    attended = _linear(ctx, params.wo, params.bo)

    h1 = T.layer_norm(T.add(x, attended), params.ln1_g, params.ln1_b)
    ff = _linear(T.relu(_linear(h1, params.ff_w1, params.ff_b1)), params.ff_w2, params.ff_b2)
    h2 = T.layer_norm(T.add(h1, ff), params.ln2_g, params.ln2_b)

    pooled = T.tmean(h2, axis=0)
    enc = PhraseEncoding(vector=pooled, token_count=t_eff)
    if return_attention:
        return enc, attn_maps
    return enc
