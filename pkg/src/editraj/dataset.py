"""SFT / RL dataset construction.

Randomness: every randomized call takes a ``numpy.random.Generator``. Batch
helpers derive one generator per input item from ``(seed, index)``, so the
output does not depend on how many worker threads produced it.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .align import shortest_edit_script
from .errors import AttemptCapExceeded, EditrajError, EmptySamplingSet, InputError, OracleError
from .oracle import Oracle
from .script import EditOp, EditScript, OpKind, render_script
from .seq import Alphabet, TokenSequence, detokenize, get_alphabet, require_same_kind, tokenize
from .trace import Trajectory, verify_consistency

DATASET_SCHEMA_VERSION = 1
ATTEMPT_CAP_FACTOR = 50

T = TypeVar("T")
R = TypeVar("R")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 stream determined entirely by ``seed`` and the optional keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Map preserving input order regardless of worker count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class LabeledSequence:
    seq: TokenSequence
    label: float
    meta: str = ""

    def __post_init__(self):
        if not math.isfinite(self.label):
            raise InputError(f"label must be finite, got {self.label}")


@dataclass(frozen=True)
class SftExample:
    src: TokenSequence
    instruction: str
    completion: Trajectory

    def to_json(self) -> dict:
        return {
            "version": DATASET_SCHEMA_VERSION,
            "src": detokenize(self.src),
            "instruction": self.instruction,
            "trace": render_script(self.completion.script),
            "output": detokenize(self.completion.output),
        }


@dataclass
class BuildReport:
    built: int = 0
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"built": self.built, "failed": len(self.failures), "failures": self.failures}


def build_beneficial_pairs(anchor: LabeledSequence, pool: Sequence[LabeledSequence]
                           ) -> list[tuple[TokenSequence, TokenSequence]]:
    """(anchor, x) for every pool member whose label strictly beats the anchor's."""
    pairs = []
    for item in pool:
        require_same_kind(anchor.seq, item.seq)
        if item.label > anchor.label:
            pairs.append((anchor.seq, item.seq))
    return pairs


def pair_to_sft(src: TokenSequence, tgt: TokenSequence, instruction: str) -> SftExample:
    script = shortest_edit_script(src, tgt)
    example = SftExample(src, instruction, Trajectory(script, tgt))
    report = verify_consistency(src, example.completion)
    if not report.ok:
        raise EditrajError(f"aligner produced an inconsistent trajectory: {report.first_failure}")
    return example


def pairs_to_sft(pairs: Sequence[tuple[TokenSequence, TokenSequence]], instruction: str,
                 threads: int = 1) -> tuple[list[SftExample], BuildReport]:
    def build(indexed):
        i, (src, tgt) = indexed
        try:
            return pair_to_sft(src, tgt, instruction)
        except EditrajError as exc:
            return {"index": i, "error": str(exc)}

    results = ordered_map(build, list(enumerate(pairs)), threads)
    examples = [r for r in results if isinstance(r, SftExample)]
    report = BuildReport(len(examples), [r for r in results if isinstance(r, dict)])
    return examples, report


def sample_random_edits(src: TokenSequence, k_min: int, k_max: int, rng: np.random.Generator,
                        *, kinds: Sequence[OpKind] = tuple(OpKind),
                        alphabet: Alphabet | None = None) -> tuple[EditScript, TokenSequence]:
    """Draw k ~ U{k_min..k_max} random atomic edits and apply them in turn.

    Each step picks an op kind uniformly among those valid at the current
    length (only INSERT on an empty sequence), a uniform valid position and a
    uniform token from the alphabet's sampling set. REPLACE may redraw the
    incumbent token; such no-op edits still count toward k.
    """
    if not 1 <= k_min <= k_max:
        raise InputError("need 1 <= k_min <= k_max")
    kinds = tuple(OpKind(k) for k in kinds)
    if not kinds:
        raise InputError("no edit kinds allowed")
    alphabet = alphabet or src.alphabet
    pool = alphabet.sampling_tokens
    if not pool:
        raise EmptySamplingSet(f"{alphabet.kind} alphabet has no sampling tokens")
    if len(src) == 0 and OpKind.INSERT not in kinds:
        raise InputError("an empty source can only be edited by insertion")
    k = int(rng.integers(k_min, k_max + 1))
    tokens = list(src.tokens)
    ops = []
    for _ in range(k):
        length = len(tokens)
        valid = [kd for kd in kinds if kd is OpKind.INSERT or length > 0]
        if not valid:
            raise InputError("sequence emptied; no further edits of the allowed kinds")
        kind = valid[int(rng.integers(len(valid)))]
        if kind is OpKind.INSERT:
            pos = int(rng.integers(length + 1))
            op = EditOp.insert(pos, pool[int(rng.integers(len(pool)))])
        elif kind is OpKind.DELETE:
            pos = int(rng.integers(length))
            op = EditOp.delete(pos, tokens[pos])
        else:
            pos = int(rng.integers(length))
            op = EditOp.replace(pos, pool[int(rng.integers(len(pool)))], tokens[pos])
        ops.append(op)
        if kind is OpKind.INSERT:
            tokens.insert(pos, op.token)
        elif kind is OpKind.DELETE:
            del tokens[pos]
        else:
            tokens[pos] = op.token
    return EditScript(tuple(ops)), src.replace_tokens(tokens)


def augment_with_pseudolabels(anchor: LabeledSequence, n: int, oracle: Oracle,
                              rng: np.random.Generator, *, k_min: int = 1, k_max: int = 3,
                              attempt_cap: int | None = None, dedup: bool = True,
                              kinds: Sequence[OpKind] = tuple(OpKind),
                              ) -> list[tuple[TokenSequence, TokenSequence]]:
    """Random-edit the anchor and keep variants the oracle scores above its label.

    Stops after ``n`` kept pairs or ``attempt_cap`` draws (default 50 n), in
    which case :class:`AttemptCapExceeded` carries the pairs kept so far.
    Exact-string duplicates are dropped when ``dedup`` is set.
    """
    if n <= 0:
        return []
    cap = attempt_cap if attempt_cap is not None else ATTEMPT_CAP_FACTOR * n
    kept: list[tuple[TokenSequence, TokenSequence]] = []
    seen: set[str] = set()
    attempts = 0
    while len(kept) < n:
        if attempts >= cap:
            raise AttemptCapExceeded(len(kept), attempts, kept)
        attempts += 1
        _, variant = sample_random_edits(anchor.seq, k_min, k_max, rng, kinds=kinds)
        try:
            score = oracle.score_fitness(variant)
        except OracleError as exc:
            raise type(exc)(f"attempt {attempts}: {exc}") from exc
        if score <= anchor.label:
            continue
        key = detokenize(variant)
        if dedup and key in seen:
            continue
        seen.add(key)
        kept.append((anchor.seq, variant))
    return kept


@dataclass
class LeakageReport:
    hits: list[int] = field(default_factory=list)
    eval_duplicates: list[int] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.hits

    def to_dict(self) -> dict:
        return {"hits": self.hits, "eval_duplicates": self.eval_duplicates}


def dedup_and_leakage_check(train: Iterable[TokenSequence], eval_set: Sequence[TokenSequence],
                            canonicalizer: Oracle | None = None) -> LeakageReport:
    """Eval indices whose (optionally canonicalized) string occurs in train."""
    def key(seq: TokenSequence) -> str:
        return canonicalizer.canonicalize(seq) if canonicalizer else detokenize(seq)

    train_keys = {key(s) for s in train}
    report = LeakageReport()
    seen: set[str] = set()
    for i, seq in enumerate(eval_set):
        k = key(seq)
        if k in train_keys:
            report.hits.append(i)
        if k in seen:
            report.eval_duplicates.append(i)
        seen.add(k)
    return report


def dedup(seqs: Iterable[TokenSequence]) -> list[TokenSequence]:
    """First occurrence of each exact string, order kept."""
    seen: set[str] = set()
    out = []
    for s in seqs:
        k = detokenize(s)
        if k not in seen:
            seen.add(k)
            out.append(s)
    return out


# -- file formats --------------------------------------------------------------

def read_labeled_csv(path, alphabet: Alphabet | str) -> list[LabeledSequence]:
    """CSV with header columns ``sequence`` and ``label`` (extra columns ignored)."""
    alphabet = get_alphabet(alphabet)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return out
        missing = {"sequence", "label"} - set(reader.fieldnames)
        if missing:
            raise InputError(f"{path}: missing CSV columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                seq = tokenize(row["sequence"].strip(), alphabet)
                label = float(row["label"])
            except (InputError, ValueError) as exc:
                raise InputError(f"{path}:{row_no}: {exc}") from exc
            out.append(LabeledSequence(seq, label, row.get("id") or f"row{row_no}"))
    return out


def read_sequences(path, alphabet: Alphabet | str) -> list[TokenSequence]:
    """One sequence per line, or a CSV whose header has a ``sequence`` column."""
    alphabet = get_alphabet(alphabet)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines and "," in lines[0] and "sequence" in lines[0].split(","):
        col = lines[0].split(",").index("sequence")
        lines = [ln.split(",")[col] for ln in lines[1:]]
    return [tokenize(ln, alphabet) for ln in lines]


def write_jsonl(path_or_fh, rows: Iterable[dict]) -> int:
    def dump(fh):
        count = 0
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
        return count

    if hasattr(path_or_fh, "write"):
        return dump(path_or_fh)
    with open(path_or_fh, "w", encoding="utf-8", newline="\n") as fh:
        return dump(fh)


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        rows = []
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except ValueError as exc:
                    raise InputError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
        return rows

