"""Rollout rewards gated by parse-and-execute consistency.

The gate runs before any oracle call: a completion whose script does not
parse, does not execute, or does not reproduce its own output gets
``inconsistent_reward`` and the oracle is never contacted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Mapping

from .align import edit_distance
from .metrics import InstructionSpec, ThresholdSet, mol_shift, mol_success
from .oracle import PROPERTIES, Oracle, tanimoto
from .seq import AlphabetKind, TokenSequence
from .trace import ConsistencyReport, Trajectory, verify_consistency


@dataclass(frozen=True)
class ProteinRewardSpec:
    d_min: int = 1
    d_max: int = 3
    inconsistent_reward: float = 0.0

    def __post_init__(self):
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError("need 1 <= d_min <= d_max")


@dataclass(frozen=True)
class MolRewardSpec:
    thresholds: ThresholdSet = ThresholdSet()
    s_half: float = 0.4
    s_full: float = 0.6
    margins: ThresholdSet | None = None
    stability_penalty: float = -0.25
    inconsistent_reward: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.s_half <= self.s_full <= 1.0:
            raise ValueError("need 0 <= s_half <= s_full <= 1")
        if self.stability_penalty > 0:
            raise ValueError("stability penalty must be <= 0")

    @property
    def stability_floor(self) -> float:
        return self.stability_penalty * (len(PROPERTIES) - 1)

    def sim_level(self, similarity: float) -> float:
        if similarity >= self.s_full:
            return 1.0
        if similarity >= self.s_half:
            return 0.5
        return 0.0


@dataclass
class RewardBreakdown:
    total: float
    components: dict = field(default_factory=dict)
    d: int | None = None
    consistency: ConsistencyReport | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "components": dict(self.components),
            "d": self.d,
            "consistency": self.consistency.to_dict() if self.consistency else None,
            "flags": list(self.flags),
        }


def _gate(src: TokenSequence, traj: Trajectory | str, fallback: float):
    report = verify_consistency(src, traj)
    if report.ok:
        return report, None
    return report, RewardBreakdown(fallback, {"consistency_gate": "failed"}, None, report)


def _as_trajectory(src: TokenSequence, traj: Trajectory | str) -> Trajectory:
    if isinstance(traj, Trajectory):
        return traj
    from .trace import parse_completion
    return parse_completion(traj, src.alphabet)


def protein_reward(src: TokenSequence, traj: Trajectory | str, oracle: Oracle,
                   spec: ProteinRewardSpec = ProteinRewardSpec()) -> RewardBreakdown:
    """edit-budget indicator + improvement indicator, each in {0, 1}."""
    report, failed = _gate(src, traj, spec.inconsistent_reward)
    if failed:
        return failed
    traj = _as_trajectory(src, traj)
    d = len(traj.script)
    edit_ok = spec.d_min <= d <= spec.d_max
    improved = oracle.score_fitness(traj.output) > oracle.score_fitness(src)
    flags = []
    if d > edit_distance(src, traj.output):
        flags.append("redundant_edits")
    return RewardBreakdown(
        float(edit_ok) + float(improved),
        {"consistency_gate": "passed", "edit_indicator": int(edit_ok),
         "improvement_indicator": int(improved)},
        d, report, flags,
    )


def molecule_reward(src: TokenSequence, traj: Trajectory | str, instruction: InstructionSpec,
                    oracle: Oracle, spec: MolRewardSpec = MolRewardSpec()) -> RewardBreakdown:
    """validity * property level * similarity level + stability penalty.

    An invalid output scores 0: off-target drift cannot be measured without
    properties, so the stability term is 0 as well.
    """
    if src.kind is not AlphabetKind.SMILES:
        raise ValueError("molecule_reward needs SMILES sequences")
    report, failed = _gate(src, traj, spec.inconsistent_reward)
    if failed:
        return failed
    traj = _as_trajectory(src, traj)
    d = len(traj.script)
    out_props = oracle.mol_properties(traj.output)
    if not out_props.valid:
        comps = {"consistency_gate": "passed", "validity": 0, "prop": 0.0, "sim": 0.0,
                 "stable": 0.0, "similarity": None, "violated": []}
        return RewardBreakdown(0.0, comps, d, report)
    src_props = oracle.mol_properties(src)
    ok = mol_success(src_props, out_props, instruction, spec.thresholds)
    prop = 1.0 if ok.strict else 0.5 if ok.loose else 0.0
    similarity = tanimoto(oracle.fingerprint(src), oracle.fingerprint(traj.output))
    sim = spec.sim_level(similarity)
    shift = mol_shift(src_props, out_props, instruction, spec.thresholds,
                      spec.margins or spec.thresholds)
    stable = spec.stability_penalty * shift.violations if shift.violations else 0.0
    comps = {"consistency_gate": "passed", "validity": 1, "prop": prop, "sim": sim,
             "stable": stable, "similarity": similarity, "violated": sorted(shift.violated)}
    return RewardBreakdown(prop * sim + stable, comps, d, report)


# -- presets -----------------------------------------------------------------

def load_preset(name_or_path: str) -> dict:
    """Load a bundled preset by name (``reward-default``) or a JSON file path."""
    if name_or_path.endswith(".json"):
        with open(name_or_path, encoding="utf-8") as fh:
            return json.load(fh)
    text = resources.files("editraj").joinpath("presets", f"{name_or_path}.json").read_text()
    return json.loads(text)


def _thresholds(d: Mapping | None) -> ThresholdSet | None:
    if d is None:
        return None
    return ThresholdSet(**{k: float(v) for k, v in d.items()})


def reward_specs_from_preset(preset: Mapping) -> tuple[ProteinRewardSpec, MolRewardSpec]:
    p = preset.get("protein", {})
    m = preset.get("molecule", {})
    protein = ProteinRewardSpec(int(p.get("d_min", 1)), int(p.get("d_max", 3)),
                                float(p.get("inconsistent_reward", 0.0)))
    known = {f.name for f in fields(MolRewardSpec)}
    extra = set(m) - known
    if extra:
        raise ValueError(f"unknown molecule reward keys: {sorted(extra)}")
    mol = MolRewardSpec(
        thresholds=_thresholds(m.get("thresholds")) or ThresholdSet(),
        s_half=float(m.get("s_half", 0.4)),
        s_full=float(m.get("s_full", 0.6)),
        margins=_thresholds(m.get("margins")),
        stability_penalty=float(m.get("stability_penalty", -0.25)),
        inconsistent_reward=float(m.get("inconsistent_reward", 0.0)),
    )
    return protein, mol
