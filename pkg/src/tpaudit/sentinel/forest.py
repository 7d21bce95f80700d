"""Small random forest for flagging abnormal login behavior.

Rows are numeric feature vectors (see ``FEATURES``). Trees use Gini
threshold splits on a random subset of ceil(sqrt(F)) features per node and
are grown on seeded bootstrap samples, so a fixed seed gives a fixed model.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from ..canon import decode_record
from ..errors import DegenerateModel, ParameterError

NORMAL = "normal"
ABNORMAL = "abnormal"
FEATURES = ("hour_of_day", "outcome_code", "gap_minutes", "fingerprint_mismatch", "window_expired")
OUTCOME_CODES = {"granted": 0, "mismatch": 1, "expired": 2, "access_denied": 3,
                 "unknown_client": 4, "replay": 5}


@dataclass(frozen=True)
class Node:
    label: str | None = None
    feature: int = -1
    threshold: float = 0.0
    left: Node | None = None
    right: Node | None = None

    def predict(self, row: Sequence[float]) -> str:
        node = self
        while node.label is None:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node.label


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Node, ...]
    n_features: int
    tree_count: int = 25
    max_depth: int = 4
    seed: int = 0


def _majority(labels: Sequence[str]) -> str:
    counts = Counter(labels)
    top = max(counts.values())
    winners = sorted(lbl for lbl, c in counts.items() if c == top)
    return ABNORMAL if ABNORMAL in winners else winners[0]


def _gini(counts: Counter, total: int) -> float:
    return 1.0 - sum((c / total) ** 2 for c in counts.values())


def _best_split(rows, labels, features):
    n = len(rows)
    best = None  # (impurity, feature, threshold)
    for f in features:
        order = sorted(range(n), key=lambda i: rows[i][f])
        left = Counter()
        right = Counter(labels)
        for pos in range(n - 1):
            i = order[pos]
            left[labels[i]] += 1
            right[labels[i]] -= 1
            lo, hi = rows[i][f], rows[order[pos + 1]][f]
            if lo == hi:
                continue
            nl = pos + 1
            score = (nl * _gini(left, nl) + (n - nl) * _gini(right, n - nl)) / n
            if best is None or score < best[0] - 1e-12:
                best = (score, f, (lo + hi) / 2)
    return best


def _grow(rows, labels, depth, max_depth, n_sub, rng: random.Random) -> Node:
    if depth >= max_depth or len(set(labels)) == 1 or len(rows) < 2:
        return Node(label=_majority(labels))
    features = sorted(rng.sample(range(len(rows[0])), n_sub))
    split = _best_split(rows, labels, features)
    if split is None or split[0] >= _gini(Counter(labels), len(labels)) - 1e-12:
        return Node(label=_majority(labels))
    _, f, thr = split
    li = [i for i, r in enumerate(rows) if r[f] <= thr]
    ri = [i for i, r in enumerate(rows) if r[f] > thr]
    return Node(
        feature=f, threshold=thr,
        left=_grow([rows[i] for i in li], [labels[i] for i in li], depth + 1, max_depth, n_sub, rng),
        right=_grow([rows[i] for i in ri], [labels[i] for i in ri], depth + 1, max_depth, n_sub, rng),
    )


def forest_train(rows: Sequence[Sequence[float]], labels: Sequence[str], tree_count: int = 25,
                 max_depth: int = 4, seed: int = 0) -> ForestModel:
    if len(rows) != len(labels) or not rows:
        raise ParameterError("rows and labels must be non-empty and of equal length")
    if len(set(labels)) < 2:
        raise DegenerateModel("training data holds a single class")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParameterError("ragged feature rows")
    n_sub = math.ceil(math.sqrt(width))
    master = random.Random(seed)
    trees = []
    for _ in range(tree_count):
        rng = random.Random(master.getrandbits(64))
        idx = [rng.randrange(len(rows)) for _ in rows]
        trees.append(_grow([list(map(float, rows[i])) for i in idx], [labels[i] for i in idx],
                           0, max_depth, n_sub, rng))
    return ForestModel(tuple(trees), width, tree_count, max_depth, seed)


def forest_classify(model: ForestModel, row: Sequence[float]) -> tuple[str, float]:
    """Majority label and the fraction of trees that voted for it."""
    if len(row) != model.n_features:
        raise ParameterError(f"expected {model.n_features} features, got {len(row)}")
    votes = [t.predict(row) for t in model.trees]
    label = _majority(votes)
    return label, votes.count(label) / len(votes)


def synthetic_login_log(n: int, seed: int) -> tuple[list[list[float]], list[str]]:
    """Labeled rows where abnormal means window expired and a sub-minute gap."""
    rng = random.Random(seed)
    rows, labels = [], []
    for _ in range(n):
        expired = rng.random() < 0.5
        gap = round(rng.expovariate(0.5), 2)
        mismatch = rng.random() < 0.2
        if expired:
            outcome = OUTCOME_CODES["expired"]
        elif mismatch:
            outcome = OUTCOME_CODES["mismatch"]
        else:
            outcome = rng.choice([0, 0, 0, 3, 4, 5])
        rows.append([rng.randrange(24), outcome, gap, int(mismatch), int(expired)])
        labels.append(ABNORMAL if expired and gap < 1 else NORMAL)
    return rows, labels


def login_features(entries: Sequence[str]) -> list[tuple[str, list[float]]]:
    """Feature rows for every controller login attempt in ledger entries."""
    last_seen: dict[str, int] = {}
    out = []
    for entry in entries:
        rec = decode_record(entry)
        if rec.get("kind") != "attempt" or rec.get("detail") == "recovery":
            continue
        cid, at, status = rec["client_id"], rec["at"], rec["status"]
        gap = at - last_seen[cid] if cid in last_seen else 1440
        last_seen[cid] = at
        out.append((cid, [float((at // 60) % 24), float(OUTCOME_CODES.get(status, 6)), float(gap),
                          float(status == "mismatch"), float(status == "expired")]))
    return out
