"""Ranking metrics and the leave-one-out evaluation protocol.

Every item the user has not engaged with is a candidate; the ranked list is
the multi-round retrieval output in round order (score-descending within a
round). A user's contribution is 1 to HR@K if the held-out item appears in the
first K positions, and 1/log2(rank+1) to NDCG@K (single relevant item, so the
ideal DCG is 1).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

from .config import TrainConfig, config_hash
from .data import SplitDataset, make_batches
from .engine import RetrievalModel, retrieve_batch


def hr_at_k(ranked_lists, targets, k: int) -> float:
    """Fraction of users whose target appears in their first k items."""
    if k <= 0:
        raise ValueError("k must be >= 1")
    if len(ranked_lists) != len(targets):
        raise ValueError("one target per ranked list required")
    hits = sum(1 for items, target in zip(ranked_lists, targets)
               if target in items[:k])
    return hits / len(targets)


def ndcg_at_k(ranked_lists, targets, k: int) -> float:
    """Mean 1/log2(rank+1) over users whose target ranks within k, else 0."""
    if k <= 0:
        raise ValueError("k must be >= 1")
    if len(ranked_lists) != len(targets):
        raise ValueError("one target per ranked list required")
    total = 0.0
    for items, target in zip(ranked_lists, targets):
        head = items[:k]
        if target in head:
            rank = head.index(target) + 1
            total += 1.0 / math.log2(rank + 1)
    return total / len(targets)


@dataclass
class RoundMetrics:
    t: int
    size: int
    hr: float
    ndcg: float


@dataclass
class MetricReport:
    split: str
    k: int
    hr: float
    ndcg: float
    per_round: list = field(default_factory=list)
    epoch: int = 0
    config_hash: str = ""
    wall_time: float = 0.0  # informational only; never serialized

    def to_json_line(self) -> str:
        import json
        payload = {
            "split": self.split,
            "k": self.k,
            "hr": self.hr,
            "ndcg": self.ndcg,
            "per_round": [{"t": r.t, "size": r.size, "hr": r.hr, "ndcg": r.ndcg}
                          for r in self.per_round],
            "epoch": self.epoch,
            "config_hash": self.config_hash,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def ranked_lists(model: RetrievalModel, split: SplitDataset, phase: str,
                 K: int):
    """Retrieval lists and targets for every user, in dense-user order.

    The candidate set per user is every item not previously engaged (the
    target itself is always a candidate, even on histories with repeats).
    """
    cfg = model.config
    rounds = cfg.rounds if model.has_adapters else 1
    ranked = []
    targets = []
    for batch in make_batches(split, cfg.max_len, cfg.batch_size, phase=phase):
        exclude = []
        for row, user in enumerate(batch.users):
            engaged = set(split.history(user, phase))
            engaged.discard(batch.targets[row])
            exclude.append(engaged)
        for row, result in enumerate(retrieve_batch(batch, model, rounds, K,
                                                    exclude)):
            ranked.append(result.items)
            targets.append(batch.targets[row])
    return ranked, targets


def evaluate(model: RetrievalModel, split: SplitDataset, phase: str = "test",
             k: int | None = None, per_round: bool = False,
             epoch: int = 0) -> MetricReport:
    """Full-candidate evaluation of a model on the valid or test targets."""
    if phase not in ("valid", "test"):
        raise ValueError(f"evaluation phase must be valid or test, got {phase!r}")
    cfg = model.config
    K = cfg.eval_k if k is None else k
    rounds = cfg.rounds if model.has_adapters else 1
    started = time.perf_counter()
    ranked, targets = ranked_lists(model, split, phase, K)
    report = MetricReport(split=phase, k=K, hr=hr_at_k(ranked, targets, K),
                          ndcg=ndcg_at_k(ranked, targets, K), epoch=epoch,
                          config_hash=config_hash(cfg))
    if per_round:
        step = K // rounds
        for t in range(1, rounds + 1):
            size = t * step
            report.per_round.append(RoundMetrics(
                t=t, size=size, hr=hr_at_k(ranked, targets, size),
                ndcg=ndcg_at_k(ranked, targets, size)))
    report.wall_time = time.perf_counter() - started
    return report


@dataclass
class SweepGrid:
    t_values: list = field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    lam_values: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])

    def validate(self) -> "SweepGrid":
        if not self.t_values or not self.lam_values:
            raise ValueError("sweep grid must be non-empty")
        if any(t < 1 for t in self.t_values):
            raise ValueError("all sweep T values must be >= 1")
        if any(not 0.0 < v <= 1.0 for v in self.lam_values):
            raise ValueError("all sweep lambda values must be in (0, 1]")
        return self


def sweep(split: SplitDataset, base, grid: SweepGrid, cfg: TrainConfig,
          warn=print):
    """Finetune + evaluate once per (T, lambda) grid point, same seed.

    Returns CSV-ready rows [(T, lambda, hr, ndcg)] in Cartesian order; a
    failed cell is recorded as nan values with a warning rather than aborting
    the sweep.
    """
    from dataclasses import replace

    from .engine import finetune

    grid.validate()
    rows = []
    for t in grid.t_values:
        for lam in grid.lam_values:
            cell = replace(cfg, rounds=t, lam=lam)
            try:
                model, log = finetune(split, cell, base)
                report = evaluate(model, split, phase="test", k=cfg.eval_k)
                rows.append((t, lam, report.hr, report.ndcg))
            except (ValueError, FloatingPointError) as exc:
                warn(f"sweep cell T={t} lambda={lam} failed: {exc}")
                rows.append((t, lam, float("nan"), float("nan")))
    return rows


def sweep_csv(rows) -> str:
    lines = ["T,lambda,hr,ndcg"]
    for t, lam, hr, ndcg in rows:
        lines.append(f"{t},{lam},{hr},{ndcg}")
    return "\n".join(lines) + "\n"
