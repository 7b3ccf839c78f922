"""Multi-round training and retrieval.

One retrieval "round" is a full forward pass: embed the history, adapt it
against the pool of items retrieved so far, encode, then fuse with the user
vectors of earlier rounds. Training unrolls all rounds, weighs each round's
loss by lambda**t, and backpropagates once per batch through the user-vector
stack (item selection is a hard argmax and carries no gradient; the embedding
lookups of selected ids do). Inference runs the same loop, each round
contributing K/T items to the final list.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

from . import adapter as adapter_mod
from . import backbone as backbone_mod
from .adapter import AdapterToggles
from .checkpoint import Checkpoint, save_checkpoint
from .compute import ops
from .compute.adam import Adam
from .compute.rng import RngState
from .compute.tensor import Tensor, backward, no_grad
from .config import TrainConfig
from .data import Batch, SplitDataset, make_batches


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

def context_capacity(cfg: TrainConfig) -> int:
    """Fixed item-context size: rounds-1 slots of the larger of the training
    context width and the per-round retrieval width, so one filter shape
    serves both phases."""
    per_round = max(cfg.k_ctx, cfg.eval_k // cfg.rounds)
    return max(2, (cfg.rounds - 1) * per_round)


@dataclass
class RetrievalModel:
    config: TrainConfig
    table: Tensor
    backbone: object
    item_adapter: object | None = None
    user_adapter: object | None = None

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def n_items(self) -> int:
        return self.table.shape[0] - 1

    @property
    def has_adapters(self) -> bool:
        return self.item_adapter is not None

    def toggles(self) -> AdapterToggles:
        c = self.config
        if not self.has_adapters:
            return AdapterToggles.all_off()
        return AdapterToggles(enable_lft=c.enable_lft, enable_cat=c.enable_cat,
                              enable_ira=c.enable_ira,
                              enable_ura_gru=c.enable_ura_gru,
                              enable_ura_mlp=c.enable_ura_mlp,
                              enable_ura=c.enable_ura)

    def named_params(self) -> dict:
        out = {"emb.table": self.table}
        out.update(self.backbone.named("bb"))
        if self.item_adapter is not None:
            out.update(self.item_adapter.named("ira"))
        if self.user_adapter is not None:
            out.update(self.user_adapter.named("ura"))
        return out

    def base_param_names(self):
        return [n for n in self.named_params() if n.startswith(("emb.", "bb."))]

    def adapter_param_names(self):
        return [n for n in self.named_params() if n.startswith(("ira.", "ura."))]

    def snapshot(self) -> dict:
        return {name: array(t.dtype, t.data)
                for name, t in self.named_params().items()}

    def restore(self, snap: dict) -> None:
        for name, t in self.named_params().items():
            t.data[:] = snap[name]


def build_model(cfg: TrainConfig, n_items: int, with_adapters: bool,
                rng: RngState, dtype: str = "f") -> RetrievalModel:
    cfg.validate()
    init_rng = rng.child("init")
    table = backbone_mod.init_embedding_table(n_items, cfg.dim, init_rng, dtype)
    if cfg.backbone == "transformer":
        bb = backbone_mod.init_transformer_params(
            cfg.max_len, cfg.dim, n_blocks=cfg.num_blocks, n_heads=cfg.num_heads,
            ff_mult=cfg.ff_mult, dropout=cfg.dropout, rng=init_rng, dtype=dtype)
    elif cfg.backbone == "gru":
        bb = backbone_mod.init_gru_backbone_params(cfg.dim, dropout=cfg.dropout,
                                                   rng=init_rng, dtype=dtype)
    else:
        bb = backbone_mod.init_filter_mlp_params(
            cfg.max_len, cfg.dim, n_blocks=cfg.num_blocks, ff_mult=cfg.ff_mult,
            dropout=cfg.dropout, rng=init_rng, dtype=dtype)
    model = RetrievalModel(config=cfg, table=table, backbone=bb)
    if with_adapters:
        model.item_adapter = adapter_mod.init_item_adapter(
            context_capacity(cfg), cfg.dim, dropout=cfg.dropout, rng=init_rng,
            dtype=dtype, with_projections=cfg.cat_projections)
        model.user_adapter = adapter_mod.init_user_adapter(
            cfg.dim, dropout=cfg.dropout, rng=init_rng, dtype=dtype)
    return model


def _encode(model: RetrievalModel, E: Tensor, lengths, training, rng):
    kind = model.config.backbone
    if kind == "transformer":
        return backbone_mod.encode_transformer(E, lengths, model.backbone,
                                               training, rng)
    if kind == "gru":
        return backbone_mod.encode_gru(E, lengths, model.backbone, training, rng)
    return backbone_mod.encode_filter_mlp(E, lengths, model.backbone, training, rng)


# ---------------------------------------------------------------------------
# round contexts
# ---------------------------------------------------------------------------

class RoundContexts:
    """Per-batch retrieval feedback: a fixed-capacity, left-aligned item pool
    (plus per-user membership sets) and the ordered stack of prior-round user
    vectors."""

    def __init__(self, batch_size: int, capacity: int):
        self.batch_size = batch_size
        self.capacity = capacity
        self.item_ids = array("q", bytes(8 * batch_size * capacity))
        self.item_mask = array("b", bytes(batch_size * capacity))
        self.count = 0
        self.pools = [set() for _ in range(batch_size)]
        self.user_stack: list = []

    def extend_items(self, selected) -> None:
        """Append each user's newly selected ids into the next free slots."""
        width = len(selected[0])
        if self.count + width > self.capacity:
            raise ValueError(f"context capacity {self.capacity} exceeded")
        for b, items in enumerate(selected):
            if len(items) != width:
                raise ValueError("ragged selection")
            off = b * self.capacity + self.count
            for j, item in enumerate(items):
                if item in self.pools[b]:
                    raise ValueError(f"duplicate item {item} in context pool")
                self.item_ids[off + j] = item
                self.item_mask[off + j] = 1
                self.pools[b].add(item)
        self.count += width

    def extend_users(self, F: Tensor) -> None:
        self.user_stack.append(F)


def extend_item_context(ctx: RoundContexts, F: Tensor, table: Tensor,
                        k_ctx: int, extra_exclude=None):
    """Score all items against F and append each user's top k_ctx unseen ids
    (ties to the lower id). Selection is a hard argmax: no gradient.

    Returns the per-user selections.
    """
    exclude = []
    for b in range(ctx.batch_size):
        ex = set(ctx.pools[b])
        if extra_exclude is not None:
            ex |= extra_exclude[b]
        exclude.append(ex)
    scores = backbone_mod.score_items(F, table, exclude=exclude)
    selected = backbone_mod.top_k_from_scores(scores, k_ctx)
    ctx.extend_items(selected)
    return selected


def forward_round(batch: Batch, model: RetrievalModel, ctx: RoundContexts,
                  training: bool = False, rng: RngState | None = None) -> Tensor:
    """One round's forward pass. With empty contexts (always true in round 1)
    both adapters are bypassed, so the pass equals the plain backbone forward."""
    B = batch.size
    E = backbone_mod.embed_sequence(batch.ids, (B, batch.max_len), model.table)
    toggles = model.toggles()
    if model.item_adapter is not None:
        E = adapter_mod.adapt_item_sequence(
            E, ctx.item_ids, ctx.item_mask, ctx.count, model.table,
            model.item_adapter, toggles, training, rng)
    F = _encode(model, E, batch.lengths, training, rng)
    if model.user_adapter is not None and ctx.user_stack and toggles.enable_ura:
        F = adapter_mod.adapt_user_repr(F, ctx.user_stack, model.user_adapter,
                                        toggles, training, rng)
    return F


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def round_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Binary cross-entropy on raw scores, averaged over users: the positive
    should score high, each sampled negative low. Probabilities are clamped at
    1e-12 before the log."""
    pos_term = ops.log_clamped(ops.sigmoid(pos_scores))
    neg_term = ops.sum_lastdim(ops.log_clamped(ops.one_minus(ops.sigmoid(neg_scores))))
    return ops.scale(ops.mean_all(ops.add(pos_term, neg_term)), -1.0)


def full_vocab_round_loss(F: Tensor, table: Tensor, targets) -> Tensor:
    """Exact form of the round loss: every non-pad item is a labelled example
    (1 for the user's next item, 0 otherwise). Only viable for small
    vocabularies."""
    B, d = F.shape
    V = table.shape[0]
    scores = ops.matmul(F, table, trans_b=True)  # (B, V) incl. pad column
    pos_mask = Tensor.zeros((B, V), F.dtype)
    neg_mask = Tensor.zeros((B, V), F.dtype)
    for b in range(B):
        for item in range(1, V):
            neg_mask.data[b * V + item] = 1.0
        pos_mask.data[b * V + targets[b]] = 1.0
        neg_mask.data[b * V + targets[b]] = 0.0
    sig = ops.sigmoid(scores)
    pos_term = ops.mul(pos_mask, ops.log_clamped(sig))
    neg_term = ops.mul(neg_mask, ops.log_clamped(ops.one_minus(sig)))
    per_user = ops.sum_lastdim(ops.add(pos_term, neg_term))
    return ops.scale(ops.mean_all(per_user), -1.0)


def total_loss(per_round, lam: float) -> Tensor:
    """Sum of lambda**t * L_t with t starting at 1."""
    if not per_round:
        raise ValueError("no round losses")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must be in (0, 1]")
    acc = ops.scale(per_round[0], lam)
    weight = lam
    for loss in per_round[1:]:
        weight *= lam
        acc = ops.add(acc, ops.scale(loss, weight))
    return acc


def _sample_negatives(batch: Batch, split: SplitDataset, n_neg: int, n_items: int,
                      rng: RngState):
    ids = array("q", bytes(8 * batch.size * n_neg))
    for row, user in enumerate(batch.users):
        forbidden = set(split.train[user])
        forbidden.add(batch.targets[row])
        if n_items <= len(forbidden):
            raise ValueError("vocabulary too small for negative sampling")
        for j in range(n_neg):
            while True:
                cand = 1 + rng.randint(n_items)
                if cand not in forbidden:
                    break
            ids[row * n_neg + j] = cand
    return ids


def _score_against(F: Tensor, table: Tensor, ids, width: int) -> Tensor:
    """Differentiable dot products of F against `width` item rows per user."""
    B, d = F.shape
    emb = ops.embedding(ids, (B, width), table)
    out = ops.matmul(ops.reshape(F, (B, 1, d)), emb, trans_b=True)
    return ops.reshape(out, (B, width))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpochRng:
    """Named random streams for one training run."""

    shuffle: RngState
    dropout: RngState
    negatives: RngState

    @staticmethod
    def from_seed(seed: int) -> "EpochRng":
        root = RngState(seed)
        return EpochRng(shuffle=root.child("shuffle"),
                        dropout=root.child("dropout"),
                        negatives=root.child("negatives"))


def train_epoch(split: SplitDataset, model: RetrievalModel, optimizer: Adam,
                cfg: TrainConfig, rngs: EpochRng, rounds: int,
                lam: float) -> float:
    """One pass over all users; returns the mean per-user weighted loss.

    Context state resets per batch. Gradients flow through the user-vector
    stack across rounds; item selection is a constant.
    """
    params = model.named_params()
    plist = list(params.values())
    n_items = model.n_items
    table = model.table
    dim = model.dim
    total = 0.0
    batches = make_batches(split, cfg.max_len, cfg.batch_size, rngs.shuffle,
                           phase="train")
    for batch in batches:
        B = batch.size
        ctx = RoundContexts(B, context_capacity(cfg))
        extra = None
        if cfg.exclude_target_from_context:
            extra = [{batch.targets[b]} for b in range(B)]
        losses = []
        for t in range(1, rounds + 1):
            F = forward_round(batch, model, ctx, training=True, rng=rngs.dropout)
            if cfg.full_vocab_loss:
                losses.append(full_vocab_round_loss(F, table, batch.targets))
            else:
                pos = _score_against(F, table, batch.targets, 1)
                pos = ops.reshape(pos, (B,))
                negs = _sample_negatives(batch, split, cfg.n_neg, n_items,
                                         rngs.negatives)
                neg = _score_against(F, table, negs, cfg.n_neg)
                losses.append(round_loss(pos, neg))
            if t < rounds:
                with no_grad():
                    extend_item_context(ctx, F.detach(), table, cfg.k_ctx,
                                        extra_exclude=extra)
                ctx.extend_users(F)
        loss = total_loss(losses, lam)
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError("diverged")
        backward(loss, params=plist)
        _freeze_pad_row(model.table, dim)
        optimizer.step()
        total += value * B
    return total / split.n_users


def _freeze_pad_row(table: Tensor, dim: int) -> None:
    grad = table.ensure_grad()
    for j in range(dim):
        grad[j] = 0.0


def _validation_hr(split: SplitDataset, model: RetrievalModel, rounds: int,
                   K: int) -> float:
    """Hit rate of the held-out validation item in the top-K retrieval."""
    hits = 0
    for batch in make_batches(split, model.config.max_len,
                              model.config.batch_size, phase="valid"):
        exclude = [set(split.train[u]) - {split.valid[u]} for u in batch.users]
        results = retrieve_batch(batch, model, rounds, K, exclude)
        for row in range(batch.size):
            if batch.targets[row] in results[row].items:
                hits += 1
    return hits / split.n_users


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    valid_hr: list = field(default_factory=list)
    best_epoch: int = 0
    best_hr: float = 0.0


def _fit(split: SplitDataset, model: RetrievalModel, cfg: TrainConfig,
         rounds: int, lam: float, log_prefix: str = "",
         quiet: bool = True) -> TrainLog:
    """Epoch loop with best-validation tracking: keep the parameters from the
    best validation hit rate, stop after `patience` epochs without a new
    best, restore the best before returning."""
    if cfg.eval_k % rounds:
        raise ValueError(f"eval_k {cfg.eval_k} not divisible by rounds {rounds}")
    optimizer = Adam(model.named_params(), lr=cfg.lr)
    rngs = EpochRng.from_seed(cfg.seed)
    log = TrainLog()
    best_snap = model.snapshot()
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        loss = train_epoch(split, model, optimizer, cfg, rngs, rounds, lam)
        hr = _validation_hr(split, model, rounds, cfg.eval_k)
        log.epoch_losses.append(loss)
        log.valid_hr.append(hr)
        if not quiet:
            print(f"{log_prefix}epoch {epoch}: loss {loss:.4f} "
                  f"valid hr@{cfg.eval_k} {hr:.4f}")
        if hr > log.best_hr or epoch == 1:
            log.best_hr = hr
            log.best_epoch = epoch
            best_snap = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best_snap)
    return log


def pretrain(split: SplitDataset, cfg: TrainConfig, quiet: bool = True):
    """Phase one: train the bare backbone, single round, unweighted loss.
    Returns (model, training log)."""
    model = build_model(cfg, split.n_items, with_adapters=False,
                        rng=RngState(cfg.seed))
    log = _fit(split, model, cfg, rounds=1, lam=1.0, log_prefix="[pretrain] ",
               quiet=quiet)
    return model, log


def finetune(split: SplitDataset, cfg: TrainConfig, base: Checkpoint | None,
             quiet: bool = True):
    """Phase two: full multi-round model. Backbone and embeddings start from
    the pretrained checkpoint when given (fresh otherwise, the "from scratch"
    ablation); adapters always start fresh with a pass-through filter."""
    model = build_model(cfg, split.n_items, with_adapters=True,
                        rng=RngState(cfg.seed))
    if base is not None:
        if base.phase != "pretrained":
            raise ValueError(f"finetune needs a pretrained checkpoint, "
                             f"got phase {base.phase!r}")
        for key in ("dim", "max_len", "backbone", "num_blocks", "num_heads"):
            have = base.config.get(key)
            want = getattr(cfg, key)
            if have != want:
                raise ValueError(f"checkpoint mismatch on {key}: "
                                 f"checkpoint has {have!r}, config wants {want!r}")
        own = model.named_params()
        for name in model.base_param_names():
            src = base.require(name)
            if src.shape != own[name].shape:
                raise ValueError(f"checkpoint mismatch on {name}: shape "
                                 f"{src.shape} vs {own[name].shape}")
            own[name].data[:] = src.data
    log = _fit(split, model, cfg, rounds=cfg.rounds, lam=cfg.lam,
               log_prefix="[finetune] ", quiet=quiet)
    return model, log


def checkpoint_model(model: RetrievalModel, phase: str, epoch: int, path) -> None:
    save_checkpoint(model.named_params(), model.config.to_dict(), phase, epoch,
                    path)


def model_from_checkpoint(ckpt: Checkpoint) -> RetrievalModel:
    cfg = TrainConfig.from_dict(ckpt.config)
    table = ckpt.require("emb.table")
    n_items = table.shape[0] - 1
    model = build_model(cfg, n_items, with_adapters=(ckpt.phase == "finetuned"),
                        rng=RngState(cfg.seed))
    for name, t in model.named_params().items():
        src = ckpt.require(name)
        if src.shape != t.shape:
            raise ValueError(f"checkpoint mismatch on {name}: shape "
                             f"{src.shape} vs {t.shape}")
        t.data[:] = src.data
    return model


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

@dataclass
class RetrievalResult:
    """Ordered top-K ids with the round that produced each one."""

    items: list
    rounds: list

    def __len__(self):
        return len(self.items)


def retrieve_batch(batch: Batch, model: RetrievalModel, rounds: int, K: int,
                   exclude) -> list:
    """Multi-round retrieval for a batch; K/rounds items per round, each round
    excluding pads, the caller's exclusions, and everything already selected.
    Round t > 1 sees the previously retrieved items and user vectors as
    context."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if K % rounds:
        raise ValueError(f"K {K} not divisible by rounds {rounds}")
    per_round = K // rounds
    B = batch.size
    results = [RetrievalResult([], []) for _ in range(B)]
    with no_grad():
        ctx = RoundContexts(B, max(2, (rounds - 1) * per_round))
        if model.has_adapters and rounds > 1:
            cap = context_capacity(model.config)
            if (rounds - 1) * per_round > cap:
                raise ValueError(f"retrieval needs {(rounds - 1) * per_round} "
                                 f"context slots, model filter allows {cap}")
            ctx = RoundContexts(B, cap)
        for t in range(1, rounds + 1):
            F = forward_round(batch, model, ctx, training=False)
            score_exclude = [set(exclude[b]) | ctx.pools[b] for b in range(B)]
            scores = backbone_mod.score_items(F, model.table, exclude=score_exclude)
            selected = backbone_mod.top_k_from_scores(scores, per_round)
            for b in range(B):
                results[b].items.extend(selected[b])
                results[b].rounds.extend([t] * per_round)
            if t < rounds:
                ctx.extend_items(selected)
                ctx.extend_users(F)
    return results


def retrieve(sequence, model: RetrievalModel, K: int, exclude=()) -> RetrievalResult:
    """Single-user surface over retrieve_batch: `sequence` is the user's
    chronological item ids (the most recent max_len are used)."""
    cfg = model.config
    seq = list(sequence)[-cfg.max_len:]
    if not seq:
        raise ValueError("empty sequence")
    ids = array("q", bytes(8 * cfg.max_len))
    off = cfg.max_len - len(seq)
    for j, item in enumerate(seq):
        ids[off + j] = item
    batch = Batch(ids=ids, lengths=[len(seq)], targets=array("q", [0]),
                  users=[0], max_len=cfg.max_len)
    rounds = cfg.rounds if model.has_adapters else 1
    [result] = retrieve_batch(batch, model, rounds, K, [set(exclude)])
    return result
