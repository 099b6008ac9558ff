"""Edit Flows machinery with caller-supplied rate and token heads.

Conventions
-----------
* Insertion slot ``i`` means "insert before position i"; slot ``L`` appends.
  A sequence of length L therefore has L + 1 insertion slots and L
  deletion/substitution positions, matching INSERT in :mod:`editraj.script`.
* Edits sampled within one simulation step are applied right to left, so
  each sampled position keeps its meaning; at one position the
  delete/substitute goes first, then the insertion before it.
* If a step would overshoot the edit budget, only its leftmost edits are
  kept (slot ``i`` insertion orders before position ``i``).
* If a step would push the length past the cap, the insertions that do not
  fit (rightmost first) are dropped and insertions stay disabled afterwards.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .align import StepKind, backtrace, dp_table
from .errors import InputError, LengthMismatch, ScheduleSingularity
from .script import EditOp, EditScript
from .seq import AMINO_ACIDS, TokenSequence, require_same_kind

BLANK = None
CLAMP_MAX = 0.9
Q_TOL = 1e-9


# -- alignment with blanks ---------------------------------------------------

@dataclass(frozen=True)
class AlignedPair:
    z0: tuple[str | None, ...]
    z1: tuple[str | None, ...]

    def __post_init__(self):
        if len(self.z0) != len(self.z1):
            raise LengthMismatch(len(self.z0), len(self.z1), "aligned sequences")
        if any(a is BLANK and b is BLANK for a, b in zip(self.z0, self.z1)):
            raise InputError("a column cannot be blank on both sides")


def strip_blanks(z: Sequence[str | None]) -> tuple[str, ...]:
    return tuple(tok for tok in z if tok is not BLANK)


def align_with_blanks(x0: TokenSequence, x1: TokenSequence) -> AlignedPair:
    require_same_kind(x0, x1)
    z0, z1 = [], []
    for step in backtrace(dp_table(x0, x1), x0, x1):
        if step.kind in (StepKind.MATCH, StepKind.SUBSTITUTE):
            z0.append(x0[step.src_index])
            z1.append(x1[step.tgt_index])
        elif step.kind is StepKind.DELETE:
            z0.append(x0[step.src_index])
            z1.append(BLANK)
        else:
            z0.append(BLANK)
            z1.append(x1[step.tgt_index])
    return AlignedPair(tuple(z0), tuple(z1))


# -- schedule and interpolation -----------------------------------------------

@dataclass(frozen=True)
class KappaSchedule:
    power: float = 3.0

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError("schedule power must be positive")

    def kappa(self, t: float) -> float:
        return t ** self.power

    def kappa_dot(self, t: float) -> float:
        return self.power * t ** (self.power - 1.0)

    def weight(self, t: float) -> float:
        """kappa'(t) / (1 - kappa(t)); singular at t = 1."""
        if not 0.0 <= t < 1.0:
            raise ScheduleSingularity(f"loss weight undefined at t={t}")
        return self.kappa_dot(t) / (1.0 - self.kappa(t))


def sample_zt(pair: AlignedPair, t: float, sched: KappaSchedule, rng: np.random.Generator
              ) -> tuple[tuple[str | None, ...], tuple[str, ...]]:
    """Take each column from z1 with probability kappa(t), else from z0."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    take = rng.random(len(pair.z0)) < sched.kappa(t)
    zt = tuple(b if k else a for a, b, k in zip(pair.z0, pair.z1, take))
    return zt, strip_blanks(zt)


# -- remaining edits ----------------------------------------------------------

@dataclass(frozen=True)
class RemainingEdit:
    column: int
    kind: str               # "insert" | "delete" | "substitute"
    token: str | None
    index: int              # insertion slot or position in strip(z_t)


@dataclass(frozen=True)
class RemainingEdits:
    edits: tuple[RemainingEdit, ...] = ()

    def __len__(self) -> int:
        return len(self.edits)

    def __iter__(self):
        return iter(self.edits)

    def to_script(self) -> EditScript:
        """Sequential script taking strip(z_t) to strip(z_1)."""
        ops = []
        shift = 0
        for e in self.edits:
            pos = e.index + shift
            if e.kind == "insert":
                ops.append(EditOp.insert(pos, e.token))
                shift += 1
            elif e.kind == "delete":
                ops.append(EditOp.delete(pos))
                shift -= 1
            else:
                ops.append(EditOp.replace(pos, e.token))
        return EditScript(tuple(ops))


def remaining_edits(zt: Sequence[str | None], z1: Sequence[str | None]) -> RemainingEdits:
    if len(zt) != len(z1):
        raise LengthMismatch(len(zt), len(z1), "aligned sequences")
    edits = []
    index = 0  # tokens of strip(z_t) seen so far
    for col, (a, b) in enumerate(zip(zt, z1)):
        if a is BLANK:
            if b is not BLANK:
                edits.append(RemainingEdit(col, "insert", b, index))
            continue
        if b is BLANK:
            edits.append(RemainingEdit(col, "delete", None, index))
        elif a != b:
            edits.append(RemainingEdit(col, "substitute", b, index))
        index += 1
    return RemainingEdits(tuple(edits))


# -- heads ---------------------------------------------------------------------

@dataclass
class EditFlowHeads:
    """Rates and token distributions for a sequence of length L.

    ``lam_ins``/``q_ins`` have L + 1 rows (insertion slots), the rest L rows.
    """

    vocab: tuple[str, ...]
    lam_ins: np.ndarray
    lam_del: np.ndarray
    lam_sub: np.ndarray
    q_ins: np.ndarray
    q_sub: np.ndarray

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        self.lam_ins = np.asarray(self.lam_ins, dtype=np.float64)
        self.lam_del = np.asarray(self.lam_del, dtype=np.float64)
        self.lam_sub = np.asarray(self.lam_sub, dtype=np.float64)
        v = len(self.vocab)
        self.q_ins = np.asarray(self.q_ins, dtype=np.float64).reshape(-1, v)
        self.q_sub = np.asarray(self.q_sub, dtype=np.float64).reshape(-1, v)

    @property
    def length(self) -> int:
        return self.lam_del.size

    def validate(self, length: int | None = None) -> "EditFlowHeads":
        n = self.length if length is None else length
        shapes = {
            "lam_ins": (self.lam_ins.shape, (n + 1,)),
            "lam_del": (self.lam_del.shape, (n,)),
            "lam_sub": (self.lam_sub.shape, (n,)),
            "q_ins": (self.q_ins.shape, (n + 1, len(self.vocab))),
            "q_sub": (self.q_sub.shape, (n, len(self.vocab))),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise InputError(f"{name} has shape {got}, expected {want}")
        for name in ("lam_ins", "lam_del", "lam_sub"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InputError(f"{name} must be finite and non-negative")
        for name in ("q_ins", "q_sub"):
            q = getattr(self, name)
            if q.size and (np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > Q_TOL)):
                raise InputError(f"{name} rows must be probability distributions")
        return self

    def total_rate(self) -> float:
        return math.fsum(self.lam_ins) + math.fsum(self.lam_del) + math.fsum(self.lam_sub)

    def intensity(self, edit: RemainingEdit) -> float:
        if edit.kind == "insert":
            return float(self.lam_ins[edit.index] * self.q_ins[edit.index, self.vocab.index(edit.token)])
        if edit.kind == "delete":
            return float(self.lam_del[edit.index])
        return float(self.lam_sub[edit.index] * self.q_sub[edit.index, self.vocab.index(edit.token)])

    def to_dict(self) -> dict:
        return {
            "vocab": list(self.vocab),
            "lam_ins": self.lam_ins.tolist(),
            "lam_del": self.lam_del.tolist(),
            "lam_sub": self.lam_sub.tolist(),
            "q_ins": self.q_ins.tolist(),
            "q_sub": self.q_sub.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditFlowHeads":
        return cls(d["vocab"], d["lam_ins"], d["lam_del"], d["lam_sub"], d["q_ins"], d["q_sub"])

    @classmethod
    def zeros(cls, length: int, vocab: Sequence[str]) -> "EditFlowHeads":
        v = len(vocab)
        return cls(tuple(vocab), np.zeros(length + 1), np.zeros(length), np.zeros(length),
                   np.full((length + 1, v), 1.0 / v), np.full((length, v), 1.0 / v))


def apply_masks(heads: EditFlowHeads, pad_mask: Sequence[bool] | None = None,
                bos_index: int | None = None) -> EditFlowHeads:
    """Zero every rate on PAD positions; keep only insertion at BOS."""
    lam_ins, lam_del, lam_sub = heads.lam_ins.copy(), heads.lam_del.copy(), heads.lam_sub.copy()
    if pad_mask is not None:
        pad = np.asarray(pad_mask, dtype=bool)
        lam_del[pad] = 0.0
        lam_sub[pad] = 0.0
        lam_ins[:-1][pad] = 0.0
    if bos_index is not None:
        lam_del[bos_index] = 0.0
        lam_sub[bos_index] = 0.0
    return EditFlowHeads(heads.vocab, lam_ins, lam_del, lam_sub, heads.q_ins, heads.q_sub)


# -- loss ------------------------------------------------------------------------

@dataclass(frozen=True)
class EditFlowLoss:
    value: float
    rate_sum: float
    log_intensity_sum: float
    weight: float
    zero_intensity: bool = False

    def __float__(self) -> float:
        return self.value


def editflow_loss(heads: EditFlowHeads, remaining: RemainingEdits, t: float,
                  sched: KappaSchedule = KappaSchedule()) -> EditFlowLoss:
    """Total predicted rate minus weight(t) times the summed log-intensities
    of the remaining edits. A zero intensity gives an infinite loss, flagged."""
    heads.validate()
    weight = sched.weight(t)
    rate_sum = heads.total_rate()
    logs = []
    for edit in remaining:
        r = heads.intensity(edit)
        if r <= 0.0:
            return EditFlowLoss(math.inf, rate_sum, -math.inf, weight, True)
        logs.append(math.log(r))
    log_sum = math.fsum(logs)
    return EditFlowLoss(rate_sum - weight * log_sum, rate_sum, log_sum, weight)


# -- sampling ----------------------------------------------------------------

@dataclass(frozen=True)
class _Sampled:
    pos: int
    order: int          # 0 = insertion before pos, 1 = delete/substitute at pos
    kind: str
    token: str | None


def _clamp(p: float) -> float:
    return min(max(p, 0.0), CLAMP_MAX)


def trigger_probabilities(heads: EditFlowHeads, dt: float) -> tuple[np.ndarray, np.ndarray]:
    p_ins = np.clip(heads.lam_ins * dt, 0.0, CLAMP_MAX)
    p_ds = np.clip((heads.lam_del + heads.lam_sub) * dt, 0.0, CLAMP_MAX)
    return p_ins, p_ds


def _draw(seq: TokenSequence, heads: EditFlowHeads, dt: float, rng: np.random.Generator,
          allow_insert: bool) -> list[_Sampled]:
    n = len(seq)
    p_ins, p_ds = trigger_probabilities(heads, dt)
    vocab = heads.vocab
    out: list[_Sampled] = []
    for i in range(n + 1):
        if rng.random() < p_ins[i] and allow_insert:
            out.append(_Sampled(i, 0, "insert", vocab[rng.choice(len(vocab), p=heads.q_ins[i])]))
        if i == n:
            break
        if rng.random() < p_ds[i]:
            lam_del, lam_sub = heads.lam_del[i], heads.lam_sub[i]
            if rng.random() < lam_del / (lam_del + lam_sub):
                out.append(_Sampled(i, 1, "delete", None))
            else:
                out.append(_Sampled(i, 1, "substitute",
                                    vocab[rng.choice(len(vocab), p=heads.q_sub[i])]))
    return out


def _apply_simultaneous(seq: TokenSequence, edits: Sequence[_Sampled]) -> tuple[TokenSequence, list[EditOp]]:
    tokens = list(seq.tokens)
    ops = []
    for e in sorted(edits, key=lambda e: (-e.pos, -e.order)):
        if e.kind == "insert":
            op = EditOp.insert(e.pos, e.token)
            tokens.insert(e.pos, e.token)
        elif e.kind == "delete":
            op = EditOp.delete(e.pos, tokens[e.pos])
            del tokens[e.pos]
        else:
            op = EditOp.replace(e.pos, e.token, tokens[e.pos])
            tokens[e.pos] = e.token
        ops.append(op)
    return seq.replace_tokens(tokens), ops


def simulate_step(seq: TokenSequence, heads: EditFlowHeads, dt: float, rng: np.random.Generator,
                  *, allow_insert: bool = True) -> tuple[TokenSequence, list[EditOp]]:
    """One first-order step. Returned ops, in order, form an executable script."""
    if not dt > 0:
        raise InputError("dt must be positive")
    heads.validate(len(seq))
    return _apply_simultaneous(seq, _draw(seq, heads, dt, rng, allow_insert))


HeadFn = Callable[[TokenSequence, float], EditFlowHeads]


@dataclass
class SamplerRun:
    final: TokenSequence
    script: EditScript
    steps_taken: int
    stopped_by_budget: bool
    truncated: bool
    dropped_insertions: int = 0
    edits_per_step: list[int] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "steps_taken": self.steps_taken,
            "edits": len(self.script),
            "stopped_by_budget": self.stopped_by_budget,
            "truncated": self.truncated,
            "dropped_insertions": self.dropped_insertions,
            "edits_per_step": self.edits_per_step,
        }


def simulate_budgeted(seq0: TokenSequence, head_fn: HeadFn, steps: int, budget: int,
                      length_cap: int, rng: np.random.Generator) -> SamplerRun:
    if steps < 1 or budget < 1:
        raise InputError("steps and budget must be >= 1")
    if length_cap < len(seq0):
        raise InputError("length cap is below the starting length")
    dt = 1.0 / steps
    seq = seq0
    ops: list[EditOp] = []
    allow_insert = True
    truncated = False
    dropped = 0
    per_step = []
    taken = 0
    for k in range(steps):
        if len(ops) >= budget:
            break
        taken += 1
        heads = head_fn(seq, k * dt).validate(len(seq))
        drawn = sorted(_draw(seq, heads, dt, rng, allow_insert), key=lambda e: (e.pos, e.order))
        # budget first: the cap check below must see the deletions that survive
        drawn = drawn[:budget - len(ops)]
        n_del = sum(1 for e in drawn if e.kind == "delete")
        room = length_cap - (len(seq) - n_del)
        inserts = [e for e in drawn if e.kind == "insert"]
        if len(inserts) > room:
            overflow = set(map(id, inserts[max(room, 0):]))
            drawn = [e for e in drawn if id(e) not in overflow]
            dropped += len(overflow)
            truncated = True
            allow_insert = False
        seq, step_ops = _apply_simultaneous(seq, drawn)
        ops.extend(step_ops)
        per_step.append(len(step_ops))
    return SamplerRun(seq, EditScript(tuple(ops)), taken, len(ops) >= budget, truncated,
                      dropped, per_step)


# -- toy heads -------------------------------------------------------------------

def _tokens_of(seq) -> tuple[str, ...]:
    return seq.tokens if isinstance(seq, TokenSequence) else tuple(seq)


def toy_heads(name: str, vocab: Sequence[str] | None = None) -> HeadFn:
    """Deterministic heads for tests and the CLI.

    ``zero``: all rates 0. ``uniform``: every rate 1, uniform tokens.
    ``sub0``: a huge substitution rate at position 0 only, towards the first
    vocabulary token that differs from the current one. ``hash``: rates in
    [0, 2) and token distributions seeded from crc32 of (sequence, t).
    """
    vocab = tuple(vocab or AMINO_ACIDS)
    v = len(vocab)

    def zero(seq, t):
        return EditFlowHeads.zeros(len(_tokens_of(seq)), vocab)

    def uniform(seq, t):
        n = len(_tokens_of(seq))
        return EditFlowHeads(vocab, np.ones(n + 1), np.ones(n), np.ones(n),
                             np.full((n + 1, v), 1.0 / v), np.full((n, v), 1.0 / v))

    def sub0(seq, t):
        toks = _tokens_of(seq)
        heads = EditFlowHeads.zeros(len(toks), vocab)
        if toks:
            target = next(i for i, tok in enumerate(vocab) if tok != toks[0])
            heads.lam_sub[0] = 1e6
            heads.q_sub[0] = np.eye(v)[target]
        return heads

    def hashed(seq, t):
        toks = _tokens_of(seq)
        n = len(toks)
        key = zlib.crc32(" ".join(toks).encode())
        rng = np.random.Generator(np.random.PCG64([key, int(round(t * 1e6))]))
        q_ins = rng.dirichlet(np.ones(v), size=n + 1)
        q_sub = rng.dirichlet(np.ones(v), size=n) if n else np.zeros((0, v))
        return EditFlowHeads(vocab, rng.uniform(0, 2, n + 1), rng.uniform(0, 2, n),
                             rng.uniform(0, 2, n), q_ins, q_sub)

    table = {"zero": zero, "uniform": uniform, "sub0": sub0, "hash": hashed}
    try:
        return table[name]
    except KeyError:
        raise InputError(f"unknown toy head {name!r}; choose from {sorted(table)}") from None


def remote_heads(oracle, head: str | None = None) -> HeadFn:
    """Head function backed by the ``editflow_heads`` protocol op."""
    def fn(seq: TokenSequence, t: float) -> EditFlowHeads:
        payload = {"tokens": list(seq.tokens), "alphabet": seq.kind.value, "t": t}
        if head:
            payload["head"] = head
        return EditFlowHeads.from_dict(oracle.request("editflow_heads", payload))
    return fn
