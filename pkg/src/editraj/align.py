"""Unit-cost Levenshtein alignment turned into executable edit scripts."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import AlignmentTooLarge, InconsistentAlignment
from .script import EditOp, EditScript
from .seq import TokenSequence, require_same_kind

MAX_CELLS = 25_000_000


class StepKind(str, Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    DELETE = "delete"
    INSERT = "insert"


# Backtrace preference when several predecessors reach the same cost.
TIE_BREAK_PRIORITY = (StepKind.SUBSTITUTE, StepKind.DELETE, StepKind.INSERT)


@dataclass(frozen=True)
class AlignmentStep:
    kind: StepKind
    src_index: int | None = None
    tgt_index: int | None = None


@dataclass(frozen=True)
class DpTable:
    m: int
    n: int
    cost: tuple[tuple[int, ...], ...]

    @property
    def distance(self) -> int:
        return self.cost[self.m][self.n]


def _tokens(x: TokenSequence | Sequence[str]) -> tuple[str, ...]:
    return x.tokens if isinstance(x, TokenSequence) else tuple(x)


def _check_pair(src, tgt) -> None:
    if isinstance(src, TokenSequence) and isinstance(tgt, TokenSequence):
        require_same_kind(src, tgt)


def dp_table(src: TokenSequence | Sequence[str], tgt: TokenSequence | Sequence[str]) -> DpTable:
    _check_pair(src, tgt)
    a, b = _tokens(src), _tokens(tgt)
    m, n = len(a), len(b)
    if m * n > MAX_CELLS:
        raise AlignmentTooLarge(m, n, MAX_CELLS)
    prev = list(range(n + 1))
    rows = [tuple(prev)]
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        ai = a[i - 1]
        for j in range(1, n + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != b[j - 1]))
        rows.append(tuple(cur))
        prev = cur
    return DpTable(m, n, tuple(rows))


def edit_distance(src: TokenSequence | Sequence[str], tgt: TokenSequence | Sequence[str]) -> int:
    """Distance only, two rows of storage."""
    _check_pair(src, tgt)
    a, b = _tokens(src), _tokens(tgt)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i]
        for j, bj in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != bj)))
        prev = cur
    return prev[-1]


def backtrace(table: DpTable, src, tgt) -> list[AlignmentStep]:
    """Walk from (m, n) to (0, 0), preferring diagonal, then delete, then insert."""
    a, b = _tokens(src), _tokens(tgt)
    if (len(a), len(b)) != (table.m, table.n):
        raise InconsistentAlignment("table was not built from these sequences")
    cost = table.cost
    i, j = table.m, table.n
    steps: list[AlignmentStep] = []
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0:
            same = a[i - 1] == b[j - 1]
            if here == cost[i - 1][j - 1] + (not same):
                kind = StepKind.MATCH if same else StepKind.SUBSTITUTE
                steps.append(AlignmentStep(kind, i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and here == cost[i - 1][j] + 1:
            steps.append(AlignmentStep(StepKind.DELETE, i - 1, None))
            i -= 1
            continue
        if j > 0 and here == cost[i][j - 1] + 1:
            steps.append(AlignmentStep(StepKind.INSERT, None, j - 1))
            j -= 1
            continue
        raise InconsistentAlignment(f"no predecessor reaches cell ({i}, {j})")
    steps.reverse()
    return steps


def alignment_to_script(steps: Sequence[AlignmentStep], src, tgt) -> EditScript:
    """Replay the alignment on a working copy, emitting positions against it."""
    a, b = _tokens(src), _tokens(tgt)
    work = list(a)
    cursor = 0
    ops: list[EditOp] = []
    for step in steps:
        if step.kind is StepKind.MATCH:
            if work[cursor] != b[step.tgt_index]:
                raise InconsistentAlignment(f"match desynchronized at cursor {cursor}")
            cursor += 1
        elif step.kind is StepKind.SUBSTITUTE:
            old, new = work[cursor], b[step.tgt_index]
            if old != a[step.src_index]:
                raise InconsistentAlignment(f"substitute desynchronized at cursor {cursor}")
            ops.append(EditOp.replace(cursor, new, old))
            work[cursor] = new
            cursor += 1
        elif step.kind is StepKind.DELETE:
            old = work[cursor]
            if old != a[step.src_index]:
                raise InconsistentAlignment(f"delete desynchronized at cursor {cursor}")
            ops.append(EditOp.delete(cursor, old))
            del work[cursor]
        else:
            new = b[step.tgt_index]
            ops.append(EditOp.insert(cursor, new))
            work.insert(cursor, new)
            cursor += 1
    if tuple(work) != b:
        raise InconsistentAlignment("replay does not reproduce the target")
    return EditScript(tuple(ops))


def shortest_edit_script(src: TokenSequence | Sequence[str], tgt: TokenSequence | Sequence[str]) -> EditScript:
    table = dp_table(src, tgt)
    return alignment_to_script(backtrace(table, src, tgt), src, tgt)
