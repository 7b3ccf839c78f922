"""Sequence encoders: shared item embedding table, three interchangeable
backbones (causal self-attention, GRU, spectral-filter MLP), and dot-product
scoring against the full item table.

All backbones consume a left-padded (batch, max_len, dim) embedding block and
return one vector per user, read at the last (always non-pad) position.
Positions in the attention backbone are indexed by distance from the sequence
end, so the amount of left padding never changes the result.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field

from .compute import ops
from .compute.ops import ComplexSpectrum
from .compute.recurrent import GruParams, gru_sequence_batched, init_gru_params
from .compute.rng import RngState
from .compute.tensor import Tensor, no_grad

# Finite stand-in for minus infinity; keeps score tensors finite while being
# unreachable by any real dot product at this scale.
SCORE_SENTINEL = -1e30


def init_embedding_table(n_items: int, dim: int, rng: RngState, dtype="f") -> Tensor:
    """(n_items+1, dim) table; row 0 is the padding row and stays zero."""
    bound = 1.0 / dim ** 0.5
    table = Tensor.rand_uniform((n_items + 1, dim), -bound, bound, rng, dtype,
                                requires_grad=True)
    for j in range(dim):
        table.data[j] = 0.0
    return table


def embed_sequence(ids, ids_shape, table: Tensor) -> Tensor:
    """Gather item vectors; the pad id 0 yields zero vectors."""
    return ops.embedding(ids, ids_shape, table)


def _dense_init(shape, rng, dtype, bound=None):
    fan_in = shape[0]
    bound = bound if bound is not None else 1.0 / fan_in ** 0.5
    return Tensor.rand_uniform(shape, -bound, bound, rng, dtype, requires_grad=True)


def _affine(dim, dtype):
    return (Tensor.full((dim,), 1.0, dtype, requires_grad=True),
            Tensor.zeros((dim,), dtype, requires_grad=True))


def _check_lengths(lengths):
    for i, n in enumerate(lengths):
        if n <= 0:
            raise ValueError(f"empty sequence at row {i}")


def _last_position_index(B, L):
    return array("q", [L - 1] * B)


# ---------------------------------------------------------------------------
# transformer backbone
# ---------------------------------------------------------------------------

@dataclass
class AttentionBlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    def named(self, prefix):
        for f in ("wq", "wk", "wv", "wo", "ln1_gamma", "ln1_beta", "ff_w1",
                  "ff_b1", "ff_w2", "ff_b2", "ln2_gamma", "ln2_beta"):
            yield f"{prefix}.{f}", getattr(self, f)


@dataclass
class TransformerParams:
    """Causal self-attention encoder. The positional table is indexed by
    distance from the sequence end (0 = most recent)."""

    pos: Tensor
    blocks: list
    n_heads: int
    dropout: float

    @property
    def max_len(self):
        return self.pos.shape[0]

    @property
    def dim(self):
        return self.pos.shape[1]

    def named(self, prefix="bb"):
        yield f"{prefix}.pos", self.pos
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.block{i}")


def init_transformer_params(max_len: int, dim: int, n_blocks: int = 2,
                            n_heads: int = 2, ff_mult: int = 4,
                            dropout: float = 0.2, rng: RngState | None = None,
                            dtype="f") -> TransformerParams:
    if dim % n_heads != 0:
        raise ValueError(f"dim {dim} not divisible by {n_heads} heads")
    blocks = []
    for _ in range(n_blocks):
        g1, b1 = _affine(dim, dtype)
        g2, b2 = _affine(dim, dtype)
        blocks.append(AttentionBlockParams(
            wq=_dense_init((dim, dim), rng, dtype),
            wk=_dense_init((dim, dim), rng, dtype),
            wv=_dense_init((dim, dim), rng, dtype),
            wo=_dense_init((dim, dim), rng, dtype),
            ln1_gamma=g1, ln1_beta=b1,
            ff_w1=_dense_init((dim, ff_mult * dim), rng, dtype),
            ff_b1=Tensor.zeros((ff_mult * dim,), dtype, requires_grad=True),
            ff_w2=_dense_init((ff_mult * dim, dim), rng, dtype),
            ff_b2=Tensor.zeros((dim,), dtype, requires_grad=True),
            ln2_gamma=g2, ln2_beta=b2,
        ))
    bound = 1.0 / dim ** 0.5
    pos = Tensor.rand_uniform((max_len, dim), -bound, bound, rng, dtype,
                              requires_grad=True)
    return TransformerParams(pos=pos, blocks=blocks, n_heads=n_heads,
                             dropout=dropout)


def causal_attention_mask(lengths, L):
    """(B, L, L) mask: query i may see key j when j <= i and j is a real
    (non-pad) slot. Pad queries see only themselves, so no row is empty; their
    outputs are never read and never reach valid positions."""
    rows = []
    for n in lengths:
        first = L - n
        for i in range(L):
            if i < first:
                rows.append(bytes(i) + b"\x01" + bytes(L - 1 - i))
            else:
                rows.append(bytes(first) + b"\x01" * (i - first + 1) + bytes(L - 1 - i))
    return array("b", b"".join(rows))


def _multi_head_attention(q_in, k_in, v_in, mask, n_heads, wq, wk, wv, wo):
    B, Lq, d = q_in.shape
    Lk = k_in.shape[1]
    dh = d // n_heads
    q = ops.reshape(ops.matmul(ops.reshape(q_in, (B * Lq, d)), wq), (B, Lq, d))
    k = ops.reshape(ops.matmul(ops.reshape(k_in, (B * Lk, d)), wk), (B, Lk, d))
    v = ops.reshape(ops.matmul(ops.reshape(v_in, (B * Lk, d)), wv), (B, Lk, d))
    heads = []
    for h in range(n_heads):
        qh = ops.slice_lastdim(q, h * dh, dh)
        kh = ops.slice_lastdim(k, h * dh, dh)
        vh = ops.slice_lastdim(v, h * dh, dh)
        scores = ops.scale(ops.matmul(qh, kh, trans_b=True), 1.0 / dh ** 0.5)
        weights = ops.masked_softmax(scores, mask)
        heads.append(ops.matmul(weights, vh))
    ctx = heads[0]
    for h in heads[1:]:
        ctx = ops.concat_lastdim(ctx, h)
    return ops.reshape(ops.matmul(ops.reshape(ctx, (B * Lq, d)), wo), (B, Lq, d))


def encode_transformer(E: Tensor, lengths, params: TransformerParams,
                       training: bool = False, rng: RngState | None = None) -> Tensor:
    _check_lengths(lengths)
    B, L, d = E.shape
    if L > params.max_len:
        raise ValueError(f"sequence buffer {L} exceeds positional table "
                         f"{params.max_len}")
    # Distance-from-end positions; identical no matter how much left padding.
    pos_ids = array("q", [L - 1 - i for i in range(L)] * B)
    x = ops.add(E, ops.embedding(pos_ids, (B, L), params.pos))
    x = ops.dropout(x, params.dropout, training, rng)
    mask = causal_attention_mask(lengths, L)
    for blk in params.blocks:
        att = _multi_head_attention(x, x, x, mask, params.n_heads,
                                    blk.wq, blk.wk, blk.wv, blk.wo)
        x = ops.layer_norm(ops.add(x, ops.dropout(att, params.dropout, training, rng)),
                           blk.ln1_gamma, blk.ln1_beta)
        flat = ops.reshape(x, (B * L, d))
        ff = ops.dense(ops.relu(ops.dense(flat, blk.ff_w1, blk.ff_b1)),
                       blk.ff_w2, blk.ff_b2)
        ff = ops.reshape(ff, (B, L, d))
        x = ops.layer_norm(ops.add(x, ops.dropout(ff, params.dropout, training, rng)),
                           blk.ln2_gamma, blk.ln2_beta)
    return ops.gather_positions(x, _last_position_index(B, L))


# ---------------------------------------------------------------------------
# GRU backbone
# ---------------------------------------------------------------------------

@dataclass
class GruBackboneParams:
    gru: GruParams
    dropout: float

    @property
    def dim(self):
        return self.gru.hidden_dim

    def named(self, prefix="bb"):
        yield from self.gru.named(f"{prefix}.gru")


def init_gru_backbone_params(dim: int, dropout: float = 0.2,
                             rng: RngState | None = None, dtype="f") -> GruBackboneParams:
    return GruBackboneParams(gru=init_gru_params(dim, dim, rng, dtype),
                             dropout=dropout)


def encode_gru(E: Tensor, lengths, params: GruBackboneParams,
               training: bool = False, rng: RngState | None = None) -> Tensor:
    _check_lengths(lengths)
    B, L, d = E.shape
    valid = array("b", bytes(B * L))
    for b, n in enumerate(lengths):
        for s in range(L - n, L):
            valid[b * L + s] = 1
    x = ops.dropout(E, params.dropout, training, rng)
    _, final = gru_sequence_batched(x, Tensor.zeros((B, d), E.dtype), params.gru,
                                    valid_mask=valid)
    return final


# ---------------------------------------------------------------------------
# spectral-filter MLP backbone
# ---------------------------------------------------------------------------

@dataclass
class FilterBlockParams:
    w_re: Tensor
    w_im: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ff_w1: Tensor | None
    ff_b1: Tensor | None
    ff_w2: Tensor | None
    ff_b2: Tensor | None
    ln2_gamma: Tensor | None
    ln2_beta: Tensor | None

    def named(self, prefix):
        for f in ("w_re", "w_im", "ln1_gamma", "ln1_beta", "ff_w1", "ff_b1",
                  "ff_w2", "ff_b2", "ln2_gamma", "ln2_beta"):
            t = getattr(self, f)
            if t is not None:
                yield f"{prefix}.{f}", t


@dataclass
class FilterMlpParams:
    """Per block: learnable complex filter applied along the position axis,
    residual + normalization, then an optional pointwise feed-forward stage.

    The filter operates on the whole fixed-length buffer, so left padding is
    part of its input signal by construction.
    """

    blocks: list
    max_len: int
    dropout: float

    @property
    def dim(self):
        return self.blocks[0].w_re.shape[1]

    def named(self, prefix="bb"):
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.block{i}")


def init_filter_mlp_params(max_len: int, dim: int, n_blocks: int = 2,
                           ff_mult: int = 4, dropout: float = 0.2,
                           rng: RngState | None = None, dtype="f",
                           use_ff: bool = True) -> FilterMlpParams:
    H = max_len // 2 + 1
    blocks = []
    for _ in range(n_blocks):
        g1, b1 = _affine(dim, dtype)
        blk = FilterBlockParams(
            # Identity-start filter: a pass-through until trained.
            w_re=Tensor.full((H, dim), 1.0, dtype, requires_grad=True),
            w_im=Tensor.zeros((H, dim), dtype, requires_grad=True),
            ln1_gamma=g1, ln1_beta=b1,
            ff_w1=None, ff_b1=None, ff_w2=None, ff_b2=None,
            ln2_gamma=None, ln2_beta=None,
        )
        if use_ff:
            g2, b2 = _affine(dim, dtype)
            blk.ff_w1 = _dense_init((dim, ff_mult * dim), rng, dtype)
            blk.ff_b1 = Tensor.zeros((ff_mult * dim,), dtype, requires_grad=True)
            blk.ff_w2 = _dense_init((ff_mult * dim, dim), rng, dtype)
            blk.ff_b2 = Tensor.zeros((dim,), dtype, requires_grad=True)
            blk.ln2_gamma, blk.ln2_beta = g2, b2
        blocks.append(blk)
    return FilterMlpParams(blocks=blocks, max_len=max_len, dropout=dropout)


def spectral_filter(x: Tensor, w_re: Tensor, w_im: Tensor) -> Tensor:
    """FFT along the middle axis, multiply by the complex filter, inverse FFT."""
    B, L, d = x.shape
    H = L // 2 + 1
    if w_re.shape != (H, d):
        raise ValueError(f"filter shape {w_re.shape} does not match signal "
                         f"length {L} (needs ({H}, {d}))")
    spec = ops.rfft_mid(x)
    filt = ops.complex_elementwise_mul(
        spec, ComplexSpectrum(ops.broadcast_batch(w_re, B),
                              ops.broadcast_batch(w_im, B)))
    return ops.irfft_mid(filt, L)


def encode_filter_mlp(E: Tensor, lengths, params: FilterMlpParams,
                      training: bool = False, rng: RngState | None = None) -> Tensor:
    _check_lengths(lengths)
    B, L, d = E.shape
    if L != params.max_len:
        raise ValueError(f"buffer length {L} does not match filter length "
                         f"{params.max_len}")
    x = E
    for blk in params.blocks:
        filtered = spectral_filter(x, blk.w_re, blk.w_im)
        x = ops.layer_norm(
            ops.add(x, ops.dropout(filtered, params.dropout, training, rng)),
            blk.ln1_gamma, blk.ln1_beta)
        if blk.ff_w1 is not None:
            flat = ops.reshape(x, (B * L, d))
            ff = ops.dense(ops.relu(ops.dense(flat, blk.ff_w1, blk.ff_b1)),
                           blk.ff_w2, blk.ff_b2)
            x = ops.layer_norm(
                ops.add(x, ops.dropout(ops.reshape(ff, (B, L, d)),
                                       params.dropout, training, rng)),
                blk.ln2_gamma, blk.ln2_beta)
    return ops.gather_positions(x, _last_position_index(B, L))


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def score_items(F: Tensor, table: Tensor, exclude=None) -> Tensor:
    """Dot-product scores against every item row. The pad column and any
    per-row excluded ids get the sentinel score and can never be selected.

    Selection from these scores is a hard argmax, so this path never carries
    gradients.
    """
    B, d = F.shape
    n_rows = table.shape[0]
    with no_grad():
        scores = ops.matmul(F.detach(), table.detach(), trans_b=True)
    for b in range(B):
        scores.data[b * n_rows] = SCORE_SENTINEL
        if exclude is not None:
            for item in exclude[b]:
                if item < 0 or item >= n_rows:
                    raise ValueError(f"excluded id {item} out of range")
                scores.data[b * n_rows + item] = SCORE_SENTINEL
    return scores


def top_k_from_scores(scores: Tensor, k: int):
    """Per row: the k highest-scoring ids, ties broken toward the lower id.
    Sentinel-scored ids are never returned."""
    B, n_rows = scores.shape
    result = []
    for b in range(B):
        row = scores.data[b * n_rows:(b + 1) * n_rows]
        order = sorted((i for i in range(n_rows) if row[i] > SCORE_SENTINEL),
                       key=lambda i: (-row[i], i))
        if len(order) < k:
            raise ValueError(f"only {len(order)} selectable items, need {k}")
        result.append(order[:k])
    return result
