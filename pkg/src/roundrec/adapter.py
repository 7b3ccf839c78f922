"""Round-context adapters.

Two modules inject feedback from earlier retrieval rounds into the forward
pass:

* the item-side adapter recalibrates the embedded user history against the
  pool of already-retrieved items (a learnable spectral filter cleans the pool
  embeddings, then the history attends over them);
* the user-side adapter fuses the current user vector with the stack of user
  vectors produced by earlier rounds (context GRU + two-layer MLP, residual).

Every sub-component can be toggled off independently, which is how the
ablation variants are built. With an empty context both adapters are exact
identities by construction.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass

from .compute import ops
from .compute.ops import ComplexSpectrum
from .compute.recurrent import GruParams, gru_sequence_batched, init_gru_params
from .compute.rng import RngState
from .compute.tensor import Tensor


@dataclass
class AdapterToggles:
    """Ablation switches. `ira`/`ura` gate whole adapters; the rest select
    variants inside an enabled adapter."""

    enable_lft: bool = True
    enable_cat: bool = True
    enable_ira: bool = True
    enable_ura_gru: bool = True
    enable_ura_mlp: bool = True
    enable_ura: bool = True

    @staticmethod
    def all_off() -> "AdapterToggles":
        return AdapterToggles(False, False, False, False, False, False)


@dataclass
class FilterParams:
    """Complex filter over the context axis plus the post-filter residual
    normalization. The filter is sized once for a fixed context capacity."""

    capacity: int
    w_re: Tensor
    w_im: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    dropout: float

    def named(self, prefix):
        for f in ("w_re", "w_im", "ln_gamma", "ln_beta"):
            yield f"{prefix}.{f}", getattr(self, f)


@dataclass
class ContextAttentionParams:
    """History-over-context attention. Projections are disabled by default:
    queries/keys/values are the raw feature vectors."""

    ln_gamma: Tensor
    ln_beta: Tensor
    dropout: float
    wq: Tensor | None = None
    wk: Tensor | None = None
    wv: Tensor | None = None

    def named(self, prefix):
        yield f"{prefix}.ln_gamma", self.ln_gamma
        yield f"{prefix}.ln_beta", self.ln_beta
        for f in ("wq", "wk", "wv"):
            t = getattr(self, f)
            if t is not None:
                yield f"{prefix}.{f}", t


@dataclass
class ItemAdapterParams:
    lft: FilterParams
    cat: ContextAttentionParams

    def named(self, prefix="ira"):
        yield from self.lft.named(f"{prefix}.lft")
        yield from self.cat.named(f"{prefix}.cat")


@dataclass
class UserAdapterParams:
    """Context GRU over prior-round user vectors plus the MLP fusion head."""

    gru: GruParams
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    dropout: float

    def named(self, prefix="ura"):
        yield from self.gru.named(f"{prefix}.gru")
        for f in ("w1", "b1", "w2", "b2", "ln_gamma", "ln_beta"):
            yield f"{prefix}.{f}", getattr(self, f)


def _affine(dim, dtype):
    return (Tensor.full((dim,), 1.0, dtype, requires_grad=True),
            Tensor.zeros((dim,), dtype, requires_grad=True))


def init_item_adapter(capacity: int, dim: int, dropout: float = 0.2,
                      rng: RngState | None = None, dtype="f",
                      with_projections: bool = False) -> ItemAdapterParams:
    if capacity < 1:
        raise ValueError("context capacity must be >= 1")
    H = capacity // 2 + 1
    g1, b1 = _affine(dim, dtype)
    g2, b2 = _affine(dim, dtype)
    lft = FilterParams(
        capacity=capacity,
        # Identity-start filter: the adapter begins as a pass-through.
        w_re=Tensor.full((H, dim), 1.0, dtype, requires_grad=True),
        w_im=Tensor.zeros((H, dim), dtype, requires_grad=True),
        ln_gamma=g1, ln_beta=b1, dropout=dropout)
    cat = ContextAttentionParams(ln_gamma=g2, ln_beta=b2, dropout=dropout)
    if with_projections:
        bound = 1.0 / dim ** 0.5
        for f in ("wq", "wk", "wv"):
            setattr(cat, f, Tensor.rand_uniform((dim, dim), -bound, bound, rng,
                                                dtype, requires_grad=True))
    return ItemAdapterParams(lft=lft, cat=cat)


def init_user_adapter(dim: int, dropout: float = 0.2,
                      rng: RngState | None = None, dtype="f") -> UserAdapterParams:
    g, b = _affine(dim, dtype)
    bound1 = 1.0 / (2 * dim) ** 0.5
    bound2 = 1.0 / dim ** 0.5
    return UserAdapterParams(
        gru=init_gru_params(dim, dim, rng, dtype),
        w1=Tensor.rand_uniform((2 * dim, dim), -bound1, bound1, rng, dtype,
                               requires_grad=True),
        b1=Tensor.zeros((dim,), dtype, requires_grad=True),
        w2=Tensor.rand_uniform((dim, dim), -bound2, bound2, rng, dtype,
                               requires_grad=True),
        b2=Tensor.zeros((dim,), dtype, requires_grad=True),
        ln_gamma=g, ln_beta=b, dropout=dropout)


# ---------------------------------------------------------------------------
# item-side: spectral filter + context attention
# ---------------------------------------------------------------------------

def filter_context(E_ctx: Tensor, ctx_mask, params: FilterParams,
                   training: bool = False, rng: RngState | None = None) -> Tensor:
    """Clean the (B, C, d) context embeddings in the frequency domain, then
    residual + normalization. Empty slots must hold zero embeddings."""
    B, C, d = E_ctx.shape
    if C != params.capacity or params.w_re.shape[1] != d:
        raise ValueError(f"filter sized for capacity {params.capacity}, "
                         f"got context of {C} slots")
    spec = ops.rfft_mid(E_ctx)
    filt = ops.complex_elementwise_mul(
        spec, ComplexSpectrum(ops.broadcast_batch(params.w_re, B),
                              ops.broadcast_batch(params.w_im, B)))
    cleaned = ops.irfft_mid(filt, C)
    return ops.layer_norm(
        ops.add(E_ctx, ops.dropout(cleaned, params.dropout, training, rng)),
        params.ln_gamma, params.ln_beta)


def attend_context(E_seq: Tensor, H_ctx: Tensor, ctx_mask,
                   params: ContextAttentionParams, training: bool = False,
                   rng: RngState | None = None) -> Tensor:
    """History positions (queries) attend over context slots (keys/values);
    the result is added back to the history with normalization.

    Rows with no valid context slot are an error: callers bypass this op when
    a user's context is empty.
    """
    B, L, d = E_seq.shape
    Bc, C, dc = H_ctx.shape
    if Bc != B or dc != d:
        raise ValueError(f"context shape {H_ctx.shape} does not match history "
                         f"{E_seq.shape}")
    q, k, v = E_seq, H_ctx, H_ctx
    if params.wq is not None:
        q = ops.reshape(ops.matmul(ops.reshape(q, (B * L, d)), params.wq), (B, L, d))
        k = ops.reshape(ops.matmul(ops.reshape(k, (B * C, d)), params.wk), (B, C, d))
        v = ops.reshape(ops.matmul(ops.reshape(v, (B * C, d)), params.wv), (B, C, d))
    scores = ops.scale(ops.matmul(q, k, trans_b=True), 1.0 / d ** 0.5)
    # One mask row per (user, query position): each query sees the same slots.
    expanded = array("b", bytes(B * L * C))
    for b in range(B):
        row = bytes(ctx_mask[b * C:(b + 1) * C])
        for i in range(L):
            expanded[(b * L + i) * C:(b * L + i + 1) * C] = array("b", row)
    weights = ops.masked_softmax(scores, expanded)
    mixed = ops.matmul(weights, v)
    return ops.layer_norm(
        ops.add(E_seq, ops.dropout(mixed, params.dropout, training, rng)),
        params.ln_gamma, params.ln_beta)


def adapt_item_sequence(E_seq: Tensor, ctx_ids, ctx_mask, ctx_count: int,
                        table: Tensor, params: ItemAdapterParams,
                        toggles: AdapterToggles, training: bool = False,
                        rng: RngState | None = None) -> Tensor:
    """Item-side adapter over a fixed-capacity context pool.

    `ctx_ids` is a flat (B, C) id buffer, zero-padded past each user's valid
    slots; `ctx_count` is the number of valid slots (uniform across the batch
    within one round). Empty context or a disabled adapter returns `E_seq`
    unchanged (the exact same tensor).
    """
    if not toggles.enable_ira or ctx_count == 0:
        return E_seq
    B, L, d = E_seq.shape
    C = len(ctx_ids) // B
    E_ctx = ops.embedding(ctx_ids, (B, C), table)
    if toggles.enable_lft:
        H_ctx = filter_context(E_ctx, ctx_mask, params.lft, training, rng)
    else:
        H_ctx = E_ctx
    if toggles.enable_cat:
        return attend_context(E_seq, H_ctx, ctx_mask, params.cat, training, rng)
    # Attention ablated: add the average of the valid context slots at every
    # history position instead.
    mean_ctx = ops.masked_mean_mid(H_ctx, ctx_mask)
    per_pos = ops.stack_rows([mean_ctx] * L)
    return ops.layer_norm(
        ops.add(E_seq, ops.dropout(per_pos, params.cat.dropout, training, rng)),
        params.cat.ln_gamma, params.cat.ln_beta)


# ---------------------------------------------------------------------------
# user-side: context GRU + MLP fusion
# ---------------------------------------------------------------------------

def adapt_user_repr(F_u: Tensor, stack, params: UserAdapterParams,
                    toggles: AdapterToggles, training: bool = False,
                    rng: RngState | None = None) -> Tensor:
    """Fuse the round's user vector with prior-round vectors.

    `stack` is the ordered list of earlier (B, d) round outputs; empty means a
    zero context vector. Disabled adapter returns `F_u` unchanged.
    """
    if not toggles.enable_ura:
        return F_u
    B, d = F_u.shape
    if toggles.enable_ura_gru:
        if stack:
            stacked = ops.stack_rows(list(stack))
            _, ctx = gru_sequence_batched(stacked, Tensor.zeros((B, d), F_u.dtype),
                                          params.gru)
        else:
            ctx = Tensor.zeros((B, d), F_u.dtype)
    else:
        if stack:
            stacked = ops.stack_rows(list(stack))
            ctx = ops.masked_mean_mid(stacked, array("b", b"\x01" * (B * len(stack))))
        else:
            ctx = Tensor.zeros((B, d), F_u.dtype)

    if toggles.enable_ura_mlp:
        joined = ops.concat_lastdim(ctx, F_u)
        fused = ops.dense(ops.relu(ops.dense(joined, params.w1, params.b1)),
                          params.w2, params.b2)
    else:
        fused = ctx
    return ops.layer_norm(
        ops.add(F_u, ops.dropout(fused, params.dropout, training, rng)),
        params.ln_gamma, params.ln_beta)
