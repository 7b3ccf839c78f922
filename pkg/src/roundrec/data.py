"""Interaction-log ingestion, preprocessing, splits, and batching.

The pipeline is: load a (user, item, timestamp) log, iteratively drop users
and items with too few interactions, order each user's history by time, hold
out the last two items per user (one for validation, one for test), and emit
left-padded fixed-width batches.
"""

from __future__ import annotations

import json
from array import array
from dataclasses import dataclass, field

from .compute.rng import RngState

DATASET_FORMAT_VERSION = 1


@dataclass
class InteractionLog:
    """Raw (user, item, timestamp) events in input order."""

    records: list  # of (user: str, item: str, ts: int)

    def __len__(self):
        return len(self.records)


@dataclass
class Vocab:
    """Dense-id mapping. Item ids are 1..n_items (0 is the padding id);
    user ids are 0..n_users-1. Both assigned by first appearance."""

    items: list = field(default_factory=list)   # dense id i+1 -> raw id
    users: list = field(default_factory=list)   # dense id i -> raw id
    item_to_id: dict = field(default_factory=dict)
    user_to_id: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def add_item(self, raw: str) -> int:
        dense = self.item_to_id.get(raw)
        if dense is None:
            self.items.append(raw)
            dense = len(self.items)
            self.item_to_id[raw] = dense
        return dense

    def add_user(self, raw: str) -> int:
        dense = self.user_to_id.get(raw)
        if dense is None:
            dense = len(self.users)
            self.users.append(raw)
            self.user_to_id[raw] = dense
        return dense


@dataclass
class SplitDataset:
    """Per-user chronological training sequence plus held-out valid/test
    targets (second-to-last and last interactions)."""

    vocab: Vocab
    train: list   # per user: list of dense item ids
    valid: list   # per user: dense item id
    test: list    # per user: dense item id

    @property
    def n_users(self) -> int:
        return len(self.train)

    @property
    def n_items(self) -> int:
        return self.vocab.n_items

    def history(self, user: int, phase: str) -> list:
        """Items the user engaged before the phase's target."""
        if phase == "train":
            return self.train[user][:-1]
        if phase == "valid":
            return self.train[user]
        if phase == "test":
            return self.train[user] + [self.valid[user]]
        raise ValueError(f"unknown phase {phase!r}")

    def target(self, user: int, phase: str) -> int:
        if phase == "train":
            return self.train[user][-1]
        if phase == "valid":
            return self.valid[user]
        if phase == "test":
            return self.test[user]
        raise ValueError(f"unknown phase {phase!r}")


@dataclass
class Batch:
    """Left-padded id matrix plus per-row metadata; pad id is 0."""

    ids: array          # flat (B, max_len) of int64
    lengths: list       # true (un-padded) length per row
    targets: array      # positive next item per row
    users: list         # dense user ids, aligned with rows
    max_len: int

    @property
    def size(self) -> int:
        return len(self.lengths)


@dataclass
class DatasetStats:
    sequences: int
    items: int
    actions: int
    sparsity: float

    def to_json(self) -> str:
        return json.dumps({"sequences": self.sequences, "items": self.items,
                           "actions": self.actions, "sparsity": self.sparsity},
                          sort_keys=True)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def load_interactions(path, sep: str = "\t", header: bool = False) -> InteractionLog:
    """Parse a UTF-8 `user<sep>item<sep>timestamp` file, preserving order.

    Malformed rows (wrong column count, empty ids, non-integer timestamp)
    raise with their 1-based line number.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields, got {len(parts)}")
            user, item, ts_raw = (p.strip() for p in parts)
            if not user or not item:
                raise ValueError(f"line {lineno}: empty user or item id")
            try:
                ts = int(ts_raw)
            except ValueError:
                raise ValueError(f"line {lineno}: unparseable timestamp {ts_raw!r}") from None
            records.append((user, item, ts))
    if not records:
        raise ValueError(f"no interactions found in {path}")
    return InteractionLog(records)


def filter_min_timestamp(log: InteractionLog, min_ts: int) -> InteractionLog:
    """Keep only records at or after `min_ts` (e.g. a dataset date cutoff)."""
    kept = [r for r in log.records if r[2] >= min_ts]
    if not kept:
        raise ValueError("no interactions remain after the timestamp cutoff")
    return InteractionLog(kept)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def kcore_filter(log: InteractionLog, min_count: int = 5) -> InteractionLog:
    """Iteratively drop users and items with fewer than `min_count`
    interactions, to a fixpoint."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    records = log.records
    while True:
        user_counts: dict = {}
        item_counts: dict = {}
        for user, item, _ in records:
            user_counts[user] = user_counts.get(user, 0) + 1
            item_counts[item] = item_counts.get(item, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < min_count}
        bad_items = {i for i, c in item_counts.items() if c < min_count}
        if not bad_users and not bad_items:
            break
        records = [r for r in records
                   if r[0] not in bad_users and r[1] not in bad_items]
        if not records:
            raise ValueError("dataset vanished under k-core")
    return InteractionLog(list(records))


def stats(log: InteractionLog) -> DatasetStats:
    if not log.records:
        raise ValueError("empty interaction log")
    users = {r[0] for r in log.records}
    items = {r[1] for r in log.records}
    actions = len(log.records)
    sparsity = 1.0 - actions / (len(users) * len(items))
    return DatasetStats(sequences=len(users), items=len(items), actions=actions,
                        sparsity=sparsity)


def build_split(log: InteractionLog) -> SplitDataset:
    """Leave-one-out split: last item is the test target, the one before is
    the validation target, the rest form the training sequence.

    Items are sorted per user by timestamp; equal timestamps keep their input
    file order. Dense ids are assigned by first appearance in the file.
    """
    vocab = Vocab()
    per_user: dict = {}
    for user, item, ts in log.records:
        vocab.add_user(user)
        vocab.add_item(item)
        per_user.setdefault(user, []).append((ts, item))

    train, valid, test = [], [], []
    for raw_user in vocab.users:
        events = per_user[raw_user]
        events.sort(key=lambda e: e[0])  # stable: ties keep file order
        seq = [vocab.item_to_id[item] for _, item in events]
        if len(seq) < 3:
            raise ValueError(f"user {raw_user!r} has {len(seq)} interactions; "
                             "need at least 3 to split")
        train.append(seq[:-2])
        valid.append(seq[-2])
        test.append(seq[-1])
    return SplitDataset(vocab=vocab, train=train, valid=valid, test=test)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_batches(split: SplitDataset, max_len: int = 50, batch_size: int = 1024,
                 rng: RngState | None = None, phase: str = "train") -> list:
    """Left-padded batches for the given phase.

    Sequences longer than max_len keep their most recent max_len items. With
    an rng, user order is shuffled (one permutation per call, i.e. per epoch).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    order = list(range(split.n_users))
    if rng is not None:
        rng.shuffle(order)

    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        B = len(chunk)
        ids = array("q", bytes(8 * B * max_len))
        targets = array("q", bytes(8 * B))
        lengths = []
        for row, user in enumerate(chunk):
            seq = split.history(user, phase)
            seq = seq[-max_len:]
            lengths.append(len(seq))
            off = row * max_len + (max_len - len(seq))
            for j, item in enumerate(seq):
                ids[off + j] = item
            targets[row] = split.target(user, phase)
        batches.append(Batch(ids=ids, lengths=lengths, targets=targets,
                             users=chunk, max_len=max_len))
    return batches


# ---------------------------------------------------------------------------
# dataset (de)serialization
# ---------------------------------------------------------------------------

def save_dataset(split: SplitDataset, path) -> None:
    payload = {
        "format_version": DATASET_FORMAT_VERSION,
        "items": split.vocab.items,
        "users": split.vocab.users,
        "train": split.train,
        "valid": split.valid,
        "test": split.test,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_dataset(path) -> SplitDataset:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {version!r}")
    vocab = Vocab()
    for raw in payload["users"]:
        vocab.add_user(raw)
    for raw in payload["items"]:
        vocab.add_item(raw)
    return SplitDataset(vocab=vocab, train=payload["train"],
                        valid=payload["valid"], test=payload["test"])
