"""Evaluation metrics for protein and molecule optimization runs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InputError, InvalidMoleculeInput
from .oracle import PROPERTIES, MolProps, Oracle
from .seq import TokenSequence, detokenize


@dataclass(frozen=True)
class ThresholdSet:
    logp: float = 0.5
    qed: float = 0.1
    tpsa: float = 10.0
    hba: float = 1.0
    hbd: float = 1.0

    def __post_init__(self):
        for p in PROPERTIES:
            if not getattr(self, p) > 0:
                raise ValueError(f"threshold for {p} must be positive")

    def get(self, prop: str) -> float:
        return getattr(self, prop)


@dataclass(frozen=True)
class InstructionSpec:
    task_name: str
    targets: Mapping[str, int]

    def __post_init__(self):
        if not self.targets:
            raise InputError("an instruction needs at least one target property")
        for prop, direction in self.targets.items():
            if prop not in PROPERTIES:
                raise InputError(f"unknown property {prop!r}")
            if direction not in (1, -1):
                raise InputError(f"direction for {prop} must be +1 or -1")

    @property
    def non_targets(self) -> tuple[str, ...]:
        return tuple(p for p in PROPERTIES if p not in self.targets)


# The 14 DrugAssist-style objectives. Permeability is read through TPSA,
# water solubility through LogP, drug-likeness through QED.
TASKS: dict[str, InstructionSpec] = {
    spec.task_name: spec for spec in [
        InstructionSpec("Higher permeability", {"tpsa": -1}),
        InstructionSpec("Less like a drug", {"qed": -1}),
        InstructionSpec("Less soluble in water", {"logp": +1}),
        InstructionSpec("Less soluble in water + more HBA", {"logp": +1, "hba": +1}),
        InstructionSpec("Less soluble in water + more HBD", {"logp": +1, "hbd": +1}),
        InstructionSpec("Lower permeability", {"tpsa": +1}),
        InstructionSpec("More like a drug", {"qed": +1}),
        InstructionSpec("More soluble in water", {"logp": -1}),
        InstructionSpec("More soluble in water + higher permeability", {"logp": -1, "tpsa": -1}),
        InstructionSpec("More soluble in water + lower permeability", {"logp": -1, "tpsa": +1}),
        InstructionSpec("More soluble in water + more HBA", {"logp": -1, "hba": +1}),
        InstructionSpec("More soluble in water + more HBD", {"logp": -1, "hbd": +1}),
        InstructionSpec("With more HBA", {"hba": +1}),
        InstructionSpec("With more HBD", {"hbd": +1}),
    ]
}


def instruction_from_json(obj) -> InstructionSpec:
    """Accept a task name from :data:`TASKS` or ``{"task_name", "targets"}``."""
    if isinstance(obj, str):
        try:
            return TASKS[obj]
        except KeyError:
            raise InputError(f"unknown task {obj!r}") from None
    targets = {k: int(v) for k, v in obj["targets"].items()}
    return InstructionSpec(obj.get("task_name", "custom"), targets)


# -- protein ------------------------------------------------------------------

@dataclass(frozen=True)
class ProteinEvalReport:
    n: int
    success_count: int
    unique_count: int
    novel_count: int

    def __post_init__(self):
        if not (self.novel_count <= self.unique_count <= self.success_count <= self.n):
            raise ValueError("counts must satisfy novel <= unique <= success <= n")

    @property
    def success_rate(self) -> float:
        return self.success_count / self.n

    @property
    def uniqueness(self) -> float | None:
        return self.unique_count / self.success_count if self.success_count else None

    @property
    def novelty(self) -> float | None:
        return self.novel_count / self.unique_count if self.unique_count else None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "success": self.success_count,
            "unique": self.unique_count,
            "novel": self.novel_count,
            "success_rate": self.success_rate,
            "uniqueness": self.uniqueness,
            "novelty": self.novelty,
            "display": f"{self.success_count}/{self.n} "
                       f"{self.unique_count}/{self.success_count} "
                       f"{self.novel_count}/{self.unique_count}",
        }


def protein_eval(src: TokenSequence, candidates: Sequence[TokenSequence],
                 train_positives: Iterable[str], oracle: Oracle) -> ProteinEvalReport:
    if not candidates:
        raise InputError("protein_eval needs at least one candidate")
    base = oracle.score_fitness(src)
    scores = oracle.score_fitness_batch(list(candidates))
    improved = [detokenize(c) for c, s in zip(candidates, scores) if s > base]
    unique = set(improved)
    positives = {p if isinstance(p, str) else detokenize(p) for p in train_positives}
    novel = unique - positives
    return ProteinEvalReport(len(candidates), len(improved), len(unique), len(novel))


# -- molecules ----------------------------------------------------------------

@dataclass(frozen=True)
class MolSuccess:
    valid: bool
    strict: bool
    loose: bool


@dataclass(frozen=True)
class ShiftResult:
    violations: int
    violated: frozenset[str]


def property_deltas(src_props: MolProps, out_props: MolProps) -> dict[str, float]:
    return {p: out_props.get(p) - src_props.get(p) for p in PROPERTIES}


def mol_success(src_props: MolProps, out_props: MolProps, instr: InstructionSpec,
                thresholds: ThresholdSet = ThresholdSet()) -> MolSuccess:
    if not out_props.valid:
        return MolSuccess(False, False, False)
    if not src_props.valid:
        raise InvalidMoleculeInput("source molecule is invalid")
    strict = loose = True
    for prop, direction in instr.targets.items():
        signed = direction * (out_props.get(prop) - src_props.get(prop))
        loose = loose and signed > 0
        strict = strict and signed >= thresholds.get(prop)
    return MolSuccess(True, strict, loose)


def mol_shift(src_props: MolProps, out_props: MolProps, instr: InstructionSpec,
              thresholds: ThresholdSet = ThresholdSet(),
              margins: ThresholdSet | None = None) -> ShiftResult:
    """Count non-target properties with |delta| >= threshold (or margin)."""
    if not (src_props.valid and out_props.valid):
        raise InvalidMoleculeInput("shift is only defined between valid molecules")
    margins = margins or thresholds
    violated = frozenset(
        p for p in instr.non_targets
        if abs(out_props.get(p) - src_props.get(p)) >= margins.get(p)
    )
    return ShiftResult(len(violated), violated)


@dataclass(frozen=True)
class MolInstanceResult:
    task: str
    valid: bool
    strict: bool
    loose: bool
    violations: int | None = None

    @classmethod
    def evaluate(cls, src_props: MolProps, out_props: MolProps, instr: InstructionSpec,
                 thresholds: ThresholdSet = ThresholdSet()) -> "MolInstanceResult":
        ok = mol_success(src_props, out_props, instr, thresholds)
        violations = (mol_shift(src_props, out_props, instr, thresholds).violations
                      if ok.valid else None)
        return cls(instr.task_name, ok.valid, ok.strict, ok.loose, violations)


@dataclass(frozen=True)
class TaskMetrics:
    n: int
    validity: float
    strict_rate: float
    loose_rate: float
    shift_rate: float | None
    shift_avg: float | None


METRIC_COLUMNS = ("validity", "strict_rate", "loose_rate", "shift_rate", "shift_avg")


@dataclass
class MolAggregate:
    per_task: dict[str, TaskMetrics] = field(default_factory=dict)
    overall: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_task": {k: asdict(v) for k, v in self.per_task.items()},
                "overall": dict(self.overall)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task", "n", "valid", "strict", "loose", "shift_rate", "shift_avg"])

        def fmt(v):
            return "" if v is None else repr(float(v))

        for task, m in self.per_task.items():
            writer.writerow([task, m.n] + [fmt(getattr(m, c)) for c in METRIC_COLUMNS])
        writer.writerow(["Overall", sum(m.n for m in self.per_task.values())]
                        + [fmt(self.overall.get(c)) for c in METRIC_COLUMNS])
        return buf.getvalue()


def task_mean(values: Iterable[float | None]) -> float | None:
    """Unweighted mean over tasks, skipping undefined entries."""
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def mol_aggregate(instances: Sequence[MolInstanceResult]) -> MolAggregate:
    """Per-task rates, plus an Overall row that is the unweighted task mean.

    Validity and success are over all outputs (invalid counts as failure);
    shift rate and average are over valid outputs only.
    """
    by_task: dict[str, list[MolInstanceResult]] = {}
    for inst in instances:
        by_task.setdefault(inst.task, []).append(inst)
    agg = MolAggregate()
    for task in sorted(by_task):
        rows = by_task[task]
        n = len(rows)
        valid = [r for r in rows if r.valid]
        if valid:
            shift_rate = sum(1 for r in valid if r.violations) / len(valid)
            shift_avg = math.fsum(r.violations for r in valid) / len(valid)
        else:
            shift_rate = shift_avg = None
        agg.per_task[task] = TaskMetrics(
            n=n,
            validity=len(valid) / n,
            strict_rate=sum(r.strict for r in rows) / n,
            loose_rate=sum(r.loose for r in rows) / n,
            shift_rate=shift_rate,
            shift_avg=shift_avg,
        )
    for col in METRIC_COLUMNS:
        agg.overall[col] = task_mean(getattr(m, col) for m in agg.per_task.values())
    return agg


def ema(values: Sequence[float], decay: float = 0.99) -> list[float]:
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    out: list[float] = []
    for k, v in enumerate(values):
        # y + (1 - decay)(v - y): same recurrence, exact on constant input
        out.append(v if k == 0 else out[-1] + (1.0 - decay) * (v - out[-1]))
    return out
