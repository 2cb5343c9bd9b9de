"""Set-sequence corpora: loading, splitting, sample preparation, synthesis.

A corpus is a vocabulary size plus a list of users, each user an ordered
list of item-id sets.  The final set of every user is the prediction
target; everything before it is history.  ``prepare_sample`` turns one
user into the model's input: the sorted universe of distinct history items,
an N x K binary membership matrix (columns are time steps, left-padded with
zeros when the history is shorter than K), and the target ids.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PietspError


class DataError(PietspError):
    """Corpus file malformed or violating an invariant."""


class SplitError(PietspError):
    """User split cannot be formed as requested."""


class SampleError(PietspError):
    """A user record cannot be turned into a training sample."""


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    sets: tuple[tuple[int, ...], ...]  # ordered; each set sorted, deduplicated

    @property
    def history(self) -> tuple[tuple[int, ...], ...]:
        return self.sets[:-1]

    @property
    def target(self) -> tuple[int, ...]:
        return self.sets[-1]


@dataclass(frozen=True)
class Corpus:
    vocab_size: int
    users: tuple[UserRecord, ...]


@dataclass(frozen=True)
class LoadReport:
    users_kept: int = 0
    users_dropped: int = 0      # fewer than 2 usable sets
    empty_sets_dropped: int = 0
    duplicate_ids_removed: int = 0


@dataclass(frozen=True)
class PreparedSample:
    """One user, ready for the network.

    ``universe`` doubles as the row-to-vocabulary index map: row i of the
    membership matrix describes item ``universe[i]``.
    """

    user_id: str
    universe: np.ndarray        # (N,) int64, sorted ascending, distinct
    membership: np.ndarray      # (N, K) float 0/1, history in the last T columns
    target_ids: np.ndarray      # (|target|,) int64, sorted
    vocab_size: int

    @property
    def n_elements(self) -> int:
        return int(self.universe.shape[0])

    def target_multihot(self, dtype=np.float64) -> np.ndarray:
        y = np.zeros(self.vocab_size, dtype=dtype)
        y[self.target_ids] = 1
        return y


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def parse_corpus(obj) -> tuple[Corpus, LoadReport]:
    """Validate a raw dict (the corpus JSON schema) into a Corpus.

    Within-set duplicates are removed, empty sets dropped, and users left
    with fewer than two sets dropped; all three are counted in the report.
    Out-of-range ids are hard errors naming the user and offset.
    """
    if not isinstance(obj, dict):
        raise DataError("corpus root must be an object")
    vocab_size = obj.get("vocab_size")
    if not isinstance(vocab_size, int) or vocab_size < 1:
        raise DataError(f"vocab_size must be a positive integer, got {vocab_size!r}")
    raw_users = obj.get("users")
    if not isinstance(raw_users, list):
        raise DataError("'users' must be a list")

    users: list[UserRecord] = []
    dropped_users = 0
    empty_sets = 0
    duplicates = 0
    for u_idx, raw in enumerate(raw_users):
        if not isinstance(raw, dict) or "user_id" not in raw or "sets" not in raw:
            raise DataError(f"users[{u_idx}]: expected an object with 'user_id' and 'sets'")
        uid = str(raw["user_id"])
        sets: list[tuple[int, ...]] = []
        for s_idx, raw_set in enumerate(raw["sets"]):
            if not isinstance(raw_set, list):
                raise DataError(f"user '{uid}': sets[{s_idx}] is not a list")
            for e_idx, item in enumerate(raw_set):
                if not isinstance(item, int) or isinstance(item, bool):
                    raise DataError(f"user '{uid}': sets[{s_idx}][{e_idx}]: id {item!r} is not an integer")
                if item < 0 or item >= vocab_size:
                    raise DataError(
                        f"user '{uid}': sets[{s_idx}][{e_idx}]: id {item} outside [0, {vocab_size})"
                    )
            unique = sorted(set(raw_set))
            duplicates += len(raw_set) - len(unique)
            if not unique:
                empty_sets += 1
                continue
            sets.append(tuple(unique))
        if len(sets) < 2:
            dropped_users += 1
            continue
        users.append(UserRecord(user_id=uid, sets=tuple(sets)))

    report = LoadReport(
        users_kept=len(users),
        users_dropped=dropped_users,
        empty_sets_dropped=empty_sets,
        duplicate_ids_removed=duplicates,
    )
    return Corpus(vocab_size=vocab_size, users=tuple(users)), report


def load_corpus(path) -> tuple[Corpus, LoadReport]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return parse_corpus(obj)


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "vocab_size": corpus.vocab_size,
        "users": [{"user_id": u.user_id, "sets": [list(s) for s in u.sets]} for u in corpus.users],
    }


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(json.dumps(corpus_to_dict(corpus)), encoding="utf-8")


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_users(
    corpus: Corpus, ratios: tuple[float, float, float], seed: int
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic user-level split.  Sizes: floor(train), floor(val), rest."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)!r}")
    n = len(corpus.users)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0] + 1e-9)
    n_val = int(n * ratios[1] + 1e-9)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise SplitError(f"split of {n} users by {ratios} leaves an empty part")
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple(
        Corpus(corpus.vocab_size, tuple(corpus.users[i] for i in part)) for part in parts
    )


# ---------------------------------------------------------------------------
# sample preparation
# ---------------------------------------------------------------------------

def prepare_sample(user: UserRecord, k_max: int, vocab_size: int) -> PreparedSample:
    """Build the universe, membership matrix, and target for one user.

    The last set is the target.  Histories longer than k_max keep only the
    k_max most recent sets; shorter ones occupy the trailing columns of the
    membership matrix, with all-zero padding columns on the left.
    """
    if k_max < 1:
        raise SampleError(f"k_max must be >= 1, got {k_max}")
    history = user.sets[:-1]
    if not history:
        raise SampleError(f"user '{user.user_id}' has no history sets")
    if len(history) > k_max:
        history = history[-k_max:]
    universe = np.array(sorted(set().union(*history)), dtype=np.int64)
    row_of = {int(e): i for i, e in enumerate(universe)}
    membership = np.zeros((universe.size, k_max), dtype=np.float64)
    pad = k_max - len(history)
    for j, s in enumerate(history):
        for e in s:
            membership[row_of[e], pad + j] = 1.0
    return PreparedSample(
        user_id=user.user_id,
        universe=universe,
        membership=membership,
        target_ids=np.array(user.target, dtype=np.int64),
        vocab_size=vocab_size,
    )


def max_history_len(corpus: Corpus) -> int:
    return max(len(u.sets) - 1 for u in corpus.users)


def prepare_all(corpus: Corpus, k_max: int) -> list[PreparedSample]:
    return [prepare_sample(u, k_max, corpus.vocab_size) for u in corpus.users]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    users: int
    vocab_size: int
    pattern: str                # "periodic" or "repeat-biased"
    seed: int
    history_len: int = 4        # sets per user = history_len + 1 (last one is the target)
    basket_min: int = 3
    basket_max: int = 5
    pool_size: int = 10
    repeat_prob: float = 0.8


def _gen_user(idx: int, spec: SyntheticSpec, rng: np.random.Generator):
    n_sets = spec.history_len + 1
    if spec.pattern == "periodic":
        size = int(rng.integers(spec.basket_min, spec.basket_max + 1))
        basket = tuple(sorted(int(e) for e in rng.choice(spec.vocab_size, size, replace=False)))
        return UserRecord(f"u{idx:05d}", (basket,) * n_sets), basket
    if spec.pattern == "repeat-biased":
        pool = np.sort(rng.choice(spec.vocab_size, spec.pool_size, replace=False))
        rest = np.setdiff1d(np.arange(spec.vocab_size), pool)
        sets = []
        for _ in range(n_sets):
            size = int(rng.integers(spec.basket_min, spec.basket_max + 1))
            from_pool = int(rng.binomial(size, spec.repeat_prob))
            items = np.concatenate([
                rng.choice(pool, from_pool, replace=False),
                rng.choice(rest, size - from_pool, replace=False),
            ])
            sets.append(tuple(sorted(int(e) for e in items)))
        return UserRecord(f"u{idx:05d}", tuple(sets)), tuple(int(e) for e in pool)
    raise DataError(f"unknown synthetic pattern '{spec.pattern}'")


def gen_synthetic(spec: SyntheticSpec) -> Corpus:
    corpus, _ = gen_synthetic_with_pools(spec)
    return corpus


def gen_synthetic_with_pools(spec: SyntheticSpec) -> tuple[Corpus, dict[str, tuple[int, ...]]]:
    """Like gen_synthetic but also returns each user's item pool (for generator tests)."""
    if spec.vocab_size < 10:
        raise DataError(f"synthetic corpora need vocab_size >= 10, got {spec.vocab_size}")
    if spec.users < 1:
        raise DataError(f"synthetic corpora need at least one user, got {spec.users}")
    if spec.history_len < 1:
        raise DataError("history_len must be >= 1")
    if not 0.0 <= spec.repeat_prob <= 1.0:
        raise DataError(f"repeat_prob must lie in [0, 1], got {spec.repeat_prob}")
    if spec.basket_max > spec.pool_size and spec.pattern == "repeat-biased":
        raise DataError("basket_max cannot exceed pool_size for repeat-biased corpora")
    rng = np.random.default_rng(spec.seed)
    users, pools = [], {}
    for idx in range(spec.users):
        user, pool = _gen_user(idx, spec, rng)
        users.append(user)
        pools[user.user_id] = tuple(pool)
    return Corpus(vocab_size=spec.vocab_size, users=tuple(users)), pools


# ---------------------------------------------------------------------------
# raw dump conversion
# ---------------------------------------------------------------------------

def convert_table(
    path,
    user_col: str,
    set_col: str,
    item_col: str,
    delimiter: str | None = None,
) -> tuple[Corpus, LoadReport, dict]:
    """Convert a tab/CSV export (one row per user/set-key/item) to a corpus.

    Rows are grouped by user, then by set key (ordering numerically when
    every key parses as a number, lexicographically otherwise).  Item ids
    are remapped to a dense 0-based vocabulary; the mapping is returned so
    it can be written alongside the corpus.
    """
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".dat", ".txt") else ","
    grouped: dict[str, dict[str, list[str]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for col in (user_col, set_col, item_col):
            if col not in reader.fieldnames:
                raise DataError(f"{path}: missing column '{col}' (found {reader.fieldnames})")
        for row in reader:
            user, key, item = row[user_col], row[set_col], row[item_col]
            if user is None or key is None or item is None:
                continue
            grouped.setdefault(user, {}).setdefault(key, []).append(item)
    if not grouped:
        raise DataError(f"{path}: no rows")

    def _set_order(keys):
        try:
            return sorted(keys, key=float)
        except ValueError:
            return sorted(keys)

    all_items = sorted({item for sets in grouped.values() for items in sets.values() for item in items})
    item_to_id = {item: i for i, item in enumerate(all_items)}
    raw = {
        "vocab_size": len(all_items),
        "users": [
            {
                "user_id": user,
                "sets": [[item_to_id[i] for i in sets[key]] for key in _set_order(sets)],
            }
            for user, sets in sorted(grouped.items())
        ],
    }
    corpus, report = parse_corpus(raw)
    vocab_map = {"items": all_items}
    return corpus, report, vocab_map


def convert_json_dump(path) -> tuple[Corpus, LoadReport, dict]:
    """Convert a set-sequence JSON dump to a corpus.

    Accepts either a flat {user_id: [[item, ...], ...]} object or one whose
    top-level keys are split names ("train"/"validate"/"valid"/"test") with
    such objects beneath; splits are merged since this package re-splits by
    user.  Item ids may be arbitrary strings or ints and are remapped to a
    dense 0-based vocabulary.
    """
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or not obj:
        raise DataError(f"{path}: expected a non-empty JSON object")
    split_names = ("train", "validate", "valid", "validation", "test")
    if all(k in split_names for k in obj):
        merged: dict[str, list] = {}
        for split in obj:
            for uid, seq in obj[split].items():
                key = uid if uid not in merged else f"{split}:{uid}"
                merged[key] = seq
    else:
        merged = obj
    for uid, seq in merged.items():
        if not isinstance(seq, list) or any(not isinstance(s, list) for s in seq):
            raise DataError(f"{path}: user '{uid}' is not a list of item lists")
    all_items = sorted(
        {str(i) for seq in merged.values() for s in seq for i in s},
        key=lambda s: (len(s), s),
    )
    item_to_id = {item: i for i, item in enumerate(all_items)}
    raw = {
        "vocab_size": len(all_items),
        "users": [
            {"user_id": str(uid), "sets": [[item_to_id[str(i)] for i in s] for s in seq]}
            for uid, seq in sorted(merged.items())
        ],
    }
    corpus, report = parse_corpus(raw)
    return corpus, report, {"items": all_items}
