import math

import pytest
from hypothesis import given, strategies as st

from editraj.errors import InputError, InvalidMoleculeInput
from editraj.metrics import (
    TASKS,
    InstructionSpec,
    MolInstanceResult,
    ProteinEvalReport,
    ThresholdSet,
    ema,
    instruction_from_json,
    mol_aggregate,
    mol_shift,
    mol_success,
    protein_eval,
    task_mean,
)
from editraj.oracle import MolProps, toy_oracle
from editraj.seq import tokenize


def P(s):
    return tokenize(s, "protein")


def mp(logp=0.0, qed=0.5, tpsa=20.0, hba=1, hbd=0):
    return MolProps(True, logp, qed, tpsa, hba, hbd)


INC_LOGP = InstructionSpec("Less soluble in water", {"logp": +1})


def test_thresholds_default():
    t = ThresholdSet()
    assert (t.logp, t.qed, t.tpsa, t.hba, t.hbd) == (0.5, 0.1, 10.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ThresholdSet(logp=0)


def test_fourteen_tasks():
    assert len(TASKS) == 14
    assert instruction_from_json("More like a drug").targets == {"qed": 1}
    assert instruction_from_json({"targets": {"hba": 1}}).task_name == "custom"
    with pytest.raises(InputError):
        instruction_from_json("Make it purple")
    with pytest.raises(InputError):
        InstructionSpec("x", {"mass": 1})


def test_success_examples():
    assert mol_success(mp(), mp(logp=0.6), INC_LOGP).strict
    r = mol_success(mp(), mp(logp=0.3), INC_LOGP)
    assert r.loose and not r.strict
    dual = TASKS["Less soluble in water + more HBA"]
    r = mol_success(mp(), mp(logp=0.6, hba=1), dual)
    assert not r.loose and not r.strict
    assert mol_success(mp(), MolProps(False), INC_LOGP) == mol_success(mp(), MolProps(False), dual)
    with pytest.raises(InvalidMoleculeInput):
        mol_success(MolProps(False), mp(), INC_LOGP)


def test_shift_examples():
    assert mol_shift(mp(), mp(logp=1.0), INC_LOGP).violations == 0
    r = mol_shift(mp(), mp(tpsa=8.0), INC_LOGP)
    assert r.violations == 1 and r.violated == {"tpsa"}
    everything = InstructionSpec("all", {p: 1 for p in ("logp", "qed", "tpsa", "hba", "hbd")})
    assert mol_shift(mp(), mp(tpsa=100.0), everything).violations == 0
    with pytest.raises(InvalidMoleculeInput):
        mol_shift(mp(), MolProps(False), INC_LOGP)


@given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from(sorted(TASKS)))
def test_strict_implies_loose(a, b, task):
    r = mol_success(mp(logp=a, qed=a / 10, tpsa=10 * a), mp(logp=b, qed=b / 10, tpsa=10 * b), TASKS[task])
    assert r.loose or not r.strict


def test_protein_eval_examples():
    toy = toy_oracle()
    src = P("MKV")
    none = protein_eval(src, [P("MKVA"), P("MKVAA")], set(), toy)
    assert none.success_count == 0 and none.uniqueness is None and none.novelty is None
    same = protein_eval(src, [P("GMKV")] * 3, set(), toy)
    assert (same.success_count, same.unique_count, same.novel_count) == (3, 1, 1)
    seen = protein_eval(src, [P("GMKV"), P("GGMKV")], {"GMKV"}, toy)
    assert seen.to_dict()["display"] == "2/2 2/2 1/2"
    with pytest.raises(ValueError):
        ProteinEvalReport(3, 1, 2, 0)


def test_aggregate_examples():
    rows = [MolInstanceResult("t", True, True, True, 0)] * 9 + [MolInstanceResult("t", False, False, False)]
    agg = mol_aggregate(rows)
    assert agg.per_task["t"].validity == 0.9 and agg.per_task["t"].strict_rate == 0.9
    assert agg.overall["validity"] == 0.9  # single task equals its own overall
    shift = mol_aggregate([MolInstanceResult("t", True, False, False, v) for v in (0, 2, 1)])
    assert shift.per_task["t"].shift_rate == pytest.approx(2 / 3) and shift.per_task["t"].shift_avg == 1.0
    empty_shift = mol_aggregate([MolInstanceResult("t", False, False, False)])
    assert empty_shift.per_task["t"].shift_rate is None


def test_csv_overall_is_task_mean():
    rows = [MolInstanceResult("a", True, True, True, 1), MolInstanceResult("a", False, False, False),
            MolInstanceResult("b", True, False, True, 0)]
    text = mol_aggregate(rows).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "task,n,valid,strict,loose,shift_rate,shift_avg"
    cols = [line.split(",") for line in lines[1:]]
    for k in range(2, 7):
        per_task = [float(c[k]) for c in cols[:-1]]
        assert abs(float(cols[-1][k]) - sum(per_task) / len(per_task)) <= 1e-12


def test_task_mean_skips_undefined():
    assert task_mean([1.0, None, 0.0]) == 0.5
    assert task_mean([None]) is None


def test_ema():
    assert ema([3.0] * 5, 0.99) == [3.0] * 5
    assert ema([1.0, 5.0, 2.0], 0.0) == [1.0, 5.0, 2.0]
    assert ema([0.0, 1.0], 0.99) == pytest.approx([0.0, 0.01], abs=1e-15)
    with pytest.raises(ValueError):
        ema([1.0], 1.0)
    assert math.isclose(ema([0, 1, 1], 0.5)[-1], 0.75)
