"""Rating-log ingestion, filtering, user splits, and split serialization.

The pipeline is: parse a rating log, k-core filter users/items by their
rating counts, compute dataset statistics on the filtered log, binarize
(rating > 3 becomes a positive cell) over the filtered vocabulary, and
split users 70:20:10 into train/test/validation. Evaluation users
additionally get a per-user fold-in/holdout split of their items so that
user-disjoint models can be scored without leaking the ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError

FORMATS = {"csv": ",", "tsv": "\t", "movielens-dat": "::"}
DEFAULT_COLUMNS = ("user", "item", "rating", "timestamp")


@dataclass
class RawRatings:
    """Parsed rating triples with duplicates already resolved (last wins)."""

    users: list[str]
    items: list[str]
    ratings: np.ndarray
    timestamps: list[str | None]

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class InteractionMatrix:
    """Sparse binary users x items matrix plus dense-index token maps."""

    csr: sp.csr_matrix
    user_ids: list[str]
    item_ids: list[str]

    def __post_init__(self) -> None:
        if self.csr.shape != (len(self.user_ids), len(self.item_ids)):
            raise ConfigurationError("matrix shape does not match index maps")
        self.csr.sort_indices()

    @classmethod
    def from_pairs(cls, pairs, user_ids=None, item_ids=None) -> "InteractionMatrix":
        """Build from (user_token, item_token) pairs.

        When vocabularies are not given they are the sorted distinct
        tokens; when given, pairs outside the vocabulary are dropped.
        """
        pairs = list(pairs)
        if user_ids is None:
            user_ids = sorted({u for u, _ in pairs})
        if item_ids is None:
            item_ids = sorted({i for _, i in pairs})
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}
        rows, cols = [], []
        for u, i in pairs:
            if u in uidx and i in iidx:
                rows.append(uidx[u])
                cols.append(iidx[i])
        m = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(user_ids), len(item_ids))
        )
        m.data[:] = 1.0  # collapse duplicate cells
        return cls(m, list(user_ids), list(item_ids))

    @property
    def n_users(self) -> int:
        return self.csr.shape[0]

    @property
    def n_items(self) -> int:
        return self.csr.shape[1]

    @property
    def n_ratings(self) -> int:
        return int(self.csr.nnz)

    @property
    def sparsity(self) -> float:
        cells = self.n_users * self.n_items
        return 1.0 - self.n_ratings / cells if cells else 1.0

    def row_items(self, u: int) -> np.ndarray:
        """Sorted item indices of user ``u``."""
        return self.csr.indices[self.csr.indptr[u]:self.csr.indptr[u + 1]]

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.csr.todense(), dtype=np.float64)

    def subset_users(self, indices: np.ndarray) -> "InteractionMatrix":
        indices = np.asarray(indices, dtype=int)
        return InteractionMatrix(
            sp.csr_matrix(self.csr[indices]),
            [self.user_ids[i] for i in indices],
            list(self.item_ids),
        )

    def append_users(self, other: "InteractionMatrix") -> "InteractionMatrix":
        """Stack another matrix below this one; item vocabularies must match."""
        if other.item_ids != self.item_ids:
            raise ConfigurationError("item vocabularies differ; cannot append users")
        clash = set(self.user_ids) & set(other.user_ids)
        if clash:
            raise ConfigurationError(f"user tokens already present: {sorted(clash)[:3]}")
        return InteractionMatrix(
            sp.csr_matrix(sp.vstack([self.csr, other.csr])),
            self.user_ids + other.user_ids,
            list(self.item_ids),
        )

    def cells(self) -> list[tuple[int, int]]:
        coo = self.csr.tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))


def load_interactions(path, format: str = "csv", columns=DEFAULT_COLUMNS,
                      rating_scale=(1.0, 5.0)) -> RawRatings:
    """Parse a delimited rating log into :class:`RawRatings`.

    ``format`` selects the delimiter (csv, tsv, movielens-dat); ``columns``
    gives the field order, with "-" marking columns to ignore. Malformed
    rows raise :class:`DataError` naming the line number. Duplicate
    (user, item) pairs keep the last occurrence.
    """
    if format not in FORMATS:
        raise ConfigurationError(f"unknown format {format!r}; expected one of {sorted(FORMATS)}")
    sep = FORMATS[format]
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    fields = {name: pos for pos, name in enumerate(columns) if name != "-"}
    for required in ("user", "item", "rating"):
        if required not in fields:
            raise ConfigurationError(f"column order must include {required!r}")
    needed = max(fields.values()) + 1

    last: dict[tuple[str, str], tuple[float, str | None]] = {}
    order: list[tuple[str, str]] = []
    lo, hi = rating_scale
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(sep) if sep != "," else next(csv.reader([line]))
        if len(parts) < needed:
            raise DataError(f"line {lineno}: expected {needed} columns, got {len(parts)}")
        user = parts[fields["user"]].strip()
        item = parts[fields["item"]].strip()
        raw_rating = parts[fields["rating"]].strip()
        try:
            rating = float(raw_rating)
        except ValueError:
            raise DataError(f"line {lineno}: rating {raw_rating!r} is not a number") from None
        if not (lo <= rating <= hi):
            raise DataError(f"line {lineno}: rating {rating} outside scale [{lo}, {hi}]")
        if not user or not item:
            raise DataError(f"line {lineno}: empty user or item token")
        ts = parts[fields["timestamp"]].strip() if "timestamp" in fields and len(parts) > fields["timestamp"] else None
        key = (user, item)
        if key not in last:
            order.append(key)
        last[key] = (rating, ts)
    if not order:
        raise DataError(f"{path}: no ratings parsed")
    users = [u for u, _ in order]
    items = [i for _, i in order]
    ratings = np.array([last[k][0] for k in order], dtype=np.float64)
    stamps = [last[k][1] for k in order]
    return RawRatings(users, items, ratings, stamps)


def binarize(raw: RawRatings, threshold: float = 3.0) -> list[tuple[str, str]]:
    """Positive (user, item) pairs: ratings strictly above the threshold.

    Ratings at or below the threshold are dropped from the positive set.
    """
    return [
        (u, i)
        for u, i, r in zip(raw.users, raw.items, raw.ratings)
        if r > threshold
    ]


def interaction_pairs(raw: RawRatings) -> list[tuple[str, str]]:
    """All rated (user, item) pairs regardless of rating value."""
    return list(zip(raw.users, raw.items))


def kcore_filter(matrix: InteractionMatrix, min_user: int = 5, min_item: int = 5) -> InteractionMatrix:
    """Iteratively drop users/items with too few cells until a fixed point.

    Index maps are rebuilt densely over the surviving tokens. Raises
    :class:`DataError` if nothing survives.
    """
    m = matrix.csr.copy()
    user_ids = list(matrix.user_ids)
    item_ids = list(matrix.item_ids)
    while True:
        user_deg = m.getnnz(axis=1)
        item_deg = m.getnnz(axis=0)
        keep_u = user_deg >= min_user
        keep_i = item_deg >= min_item
        if keep_u.all() and keep_i.all():
            break
        if not keep_u.any() or not keep_i.any():
            raise DataError("k-core filtering removed every user or item; dataset too sparse")
        m = sp.csr_matrix(m[keep_u][:, keep_i])
        user_ids = [u for u, k in zip(user_ids, keep_u) if k]
        item_ids = [i for i, k in zip(item_ids, keep_i) if k]
    if m.nnz == 0:
        raise DataError("k-core filtering removed every rating; dataset too sparse")
    return InteractionMatrix(sp.csr_matrix(m), user_ids, item_ids)


def dataset_stats(matrix: InteractionMatrix) -> dict:
    return {
        "users": matrix.n_users,
        "items": matrix.n_items,
        "ratings": matrix.n_ratings,
        "sparsity": matrix.sparsity,
    }


@dataclass
class PreparedData:
    """Filtered rating records plus the binary positives used for modeling."""

    records: InteractionMatrix   # every rated cell, k-core filtered
    positives: InteractionMatrix # cells with rating > threshold, same vocabulary
    stats: dict


def preprocess_ratings(raw: RawRatings, min_user: int = 5, min_item: int = 5,
                       positive_threshold: float = 3.0) -> PreparedData:
    """Filter then binarize a rating log.

    k-core filtering counts rated cells (any rating value); the reported
    statistics describe that filtered log. The positive matrix keeps the
    filtered vocabulary, so users whose every rating falls at or below the
    threshold remain as empty rows.
    """
    records = kcore_filter(InteractionMatrix.from_pairs(interaction_pairs(raw)),
                           min_user, min_item)
    positives = InteractionMatrix.from_pairs(
        binarize(raw, positive_threshold), records.user_ids, records.item_ids
    )
    return PreparedData(records, positives, dataset_stats(records))


@dataclass
class DatasetSplits:
    """User-disjoint train/test/validation matrices over one item vocabulary.

    ``test``/``validation`` rows are additionally split per user into a
    fold-in part (the scoring context, which doubles as the evaluation
    mask) and a holdout part (the ground truth relevant items).
    """

    train: InteractionMatrix
    test: InteractionMatrix
    validation: InteractionMatrix
    test_context: InteractionMatrix
    test_holdout: InteractionMatrix
    val_context: InteractionMatrix
    val_holdout: InteractionMatrix
    seed: int
    ratios: tuple[float, float, float]
    holdout_fraction: float

    @property
    def item_ids(self) -> list[str]:
        return self.train.item_ids


def _split_rows(matrix: InteractionMatrix, fraction: float,
                rng: np.random.Generator) -> tuple[InteractionMatrix, InteractionMatrix]:
    """Split each user's items into context and holdout matrices."""
    indptr = [0]
    ctx_cols: list[np.ndarray] = []
    hold_indptr = [0]
    hold_cols: list[np.ndarray] = []
    for u in range(matrix.n_users):
        items = matrix.row_items(u)
        n = len(items)
        n_hold = max(1, int(np.floor(fraction * n))) if n >= 2 else 0
        hold = np.sort(rng.choice(items, size=n_hold, replace=False)) if n_hold else np.empty(0, dtype=items.dtype)
        ctx = np.setdiff1d(items, hold)
        ctx_cols.append(ctx)
        hold_cols.append(hold)
        indptr.append(indptr[-1] + len(ctx))
        hold_indptr.append(hold_indptr[-1] + len(hold))

    def build(cols_list, ptr):
        cols = np.concatenate(cols_list) if cols_list else np.empty(0, dtype=int)
        m = sp.csr_matrix(
            (np.ones(len(cols)), cols, np.asarray(ptr)),
            shape=(matrix.n_users, matrix.n_items),
        )
        return InteractionMatrix(m, list(matrix.user_ids), list(matrix.item_ids))

    return build(ctx_cols, indptr), build(hold_cols, hold_indptr)


def split_users(matrix: InteractionMatrix, ratios=(0.7, 0.2, 0.1), seed: int = 0,
                holdout_fraction: float = 0.2) -> DatasetSplits:
    """Partition users into train/test/validation by a seeded shuffle.

    Test takes floor(ratios[1] * U) users and validation floor(ratios[2] * U);
    train gets the remainder. Evaluation users' rows are further split into
    fold-in and holdout parts with the same seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
    n = matrix.n_users
    if n < 10:
        raise DataError(f"need at least 10 users to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(np.floor(ratios[1] * n))
    n_val = int(np.floor(ratios[2] * n))
    n_train = n - n_test - n_val
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:n_train + n_test])
    val_idx = np.sort(perm[n_train + n_test:])

    train = matrix.subset_users(train_idx)
    test = matrix.subset_users(test_idx)
    val = matrix.subset_users(val_idx)
    test_ctx, test_hold = _split_rows(test, holdout_fraction, rng)
    val_ctx, val_hold = _split_rows(val, holdout_fraction, rng)
    return DatasetSplits(
        train=train, test=test, validation=val,
        test_context=test_ctx, test_holdout=test_hold,
        val_context=val_ctx, val_holdout=val_hold,
        seed=seed, ratios=tuple(ratios), holdout_fraction=holdout_fraction,
    )


def inject_ground_truth(train: InteractionMatrix, test_context: InteractionMatrix,
                        fraction: float = 0.2, seed: int = 0):
    """Append a seeded sample of test users to the training matrix.

    ``test_context`` should be the fold-in portion of the test rows: the
    appended items act as the users' training-visible items and must be
    masked at evaluation time, while their holdout items stay out of the
    training data. Returns the widened matrix and
    ``{user_token: appended item indices}``.
    """
    if not (0.0 < fraction <= 1.0):
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    n = test_context.n_users
    n_pick = int(np.floor(fraction * n)) if fraction < 1.0 else n
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=n_pick, replace=False))
    rows = test_context.subset_users(picked)
    masks = {rows.user_ids[k]: rows.row_items(k).copy() for k in range(rows.n_users)}
    return train.append_users(rows), masks


def save_matrix_csv(matrix: InteractionMatrix, path) -> None:
    """Write sorted "user_idx,item_idx" positive cells."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_idx,item_idx\n")
        for r, c in matrix.cells():
            fh.write(f"{r},{c}\n")


def load_matrix_csv(path, user_ids: list[str], item_ids: list[str]) -> InteractionMatrix:
    rows, cols = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "user_idx,item_idx":
            raise DataError(f"{path}: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                r, c = line.strip().split(",")
                rows.append(int(r))
                cols.append(int(c))
            except ValueError:
                raise DataError(f"{path} line {lineno}: malformed cell") from None
    m = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(user_ids), len(item_ids))
    )
    return InteractionMatrix(m, user_ids, item_ids)


_SPLIT_FILES = {
    "train": "train", "test": "test", "validation": "validation",
    "test_context": "test_context", "test_holdout": "test_holdout",
    "val_context": "val_context", "val_holdout": "val_holdout",
}


def save_splits(splits: DatasetSplits, outdir, extra_stats: dict | None = None) -> None:
    """Write one CSV per matrix plus a JSON sidecar with stats and index maps."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for attr, stem in _SPLIT_FILES.items():
        save_matrix_csv(getattr(splits, attr), out / f"{stem}.csv")
    sidecar = {
        "seed": splits.seed,
        "ratios": list(splits.ratios),
        "holdout_fraction": splits.holdout_fraction,
        "item_ids": splits.item_ids,
        "user_ids": {
            "train": splits.train.user_ids,
            "test": splits.test.user_ids,
            "validation": splits.validation.user_ids,
        },
        "stats": {
            name: dataset_stats(getattr(splits, name))
            for name in ("train", "test", "validation")
        },
    }
    if extra_stats:
        sidecar["source"] = extra_stats
    with open(out / "splits.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_splits(indir) -> DatasetSplits:
    indir = Path(indir)
    try:
        sidecar = json.loads((indir / "splits.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read splits sidecar: {exc}") from exc
    item_ids = sidecar["item_ids"]
    users = sidecar["user_ids"]
    by_split = {"train": users["train"], "test": users["test"], "validation": users["validation"],
                "test_context": users["test"], "test_holdout": users["test"],
                "val_context": users["validation"], "val_holdout": users["validation"]}
    loaded = {
        attr: load_matrix_csv(indir / f"{stem}.csv", by_split[attr], item_ids)
        for attr, stem in _SPLIT_FILES.items()
    }
    return DatasetSplits(
        **loaded,
        seed=sidecar["seed"],
        ratios=tuple(sidecar["ratios"]),
        holdout_fraction=sidecar["holdout_fraction"],
    )
