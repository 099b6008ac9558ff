import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from editraj.dataset import make_rng
from editraj.editflow import (
    BLANK,
    AlignedPair,
    EditFlowHeads,
    KappaSchedule,
    RemainingEdit,
    RemainingEdits,
    align_with_blanks,
    apply_masks,
    editflow_loss,
    remaining_edits,
    sample_zt,
    simulate_budgeted,
    simulate_step,
    strip_blanks,
    toy_heads,
    trigger_probabilities,
)
from editraj.errors import InputError, LengthMismatch, ScheduleSingularity
from editraj.script import execute
from editraj.seq import TokenSequence, tokenize


def P(s):
    return tokenize(s, "protein")


def test_align_with_blanks_examples():
    pair = align_with_blanks(P("AC"), P("C"))
    assert pair.z0 == ("A", "C") and pair.z1 == (BLANK, "C")
    same = align_with_blanks(P("MKV"), P("MKV"))
    assert same.z0 == same.z1 == ("M", "K", "V")
    with pytest.raises(InputError):
        AlignedPair((BLANK,), (BLANK,))


@given(st.text(alphabet="ACDE", max_size=10), st.text(alphabet="ACDE", max_size=10))
def test_strip_inverts_alignment(a, b):
    pair = align_with_blanks(P(a), P(b))
    assert "".join(strip_blanks(pair.z0)) == a and "".join(strip_blanks(pair.z1)) == b


def test_schedule():
    s = KappaSchedule(3)
    assert s.kappa(0) == 0 and s.kappa(1) == 1
    assert s.weight(0.5) == pytest.approx(6 / 7, abs=1e-15)
    with pytest.raises(ScheduleSingularity):
        s.weight(1.0)


def test_sample_zt_endpoints_and_rate():
    pair = align_with_blanks(P("ACDEF"), P("CDGFW"))
    rng = make_rng(0)
    sched = KappaSchedule()
    assert sample_zt(pair, 0.0, sched, rng)[0] == pair.z0
    assert sample_zt(pair, 1.0, sched, rng)[0] == pair.z1
    take = 0
    draws = 20_000
    differing = [i for i, (a, b) in enumerate(zip(pair.z0, pair.z1)) if a != b]
    for _ in range(draws):
        zt, _ = sample_zt(pair, 0.5, sched, rng)
        take += sum(zt[i] == pair.z1[i] for i in differing)
    n = draws * len(differing)
    assert abs(take / n - 0.125) <= 3 * math.sqrt(0.125 * 0.875 / n)


def test_remaining_edits_case_table():
    rem = remaining_edits(("A", BLANK), ("C", "D"))
    assert rem.edits == (RemainingEdit(0, "substitute", "C", 0), RemainingEdit(1, "insert", "D", 1))
    assert len(remaining_edits(("A",), ("A",))) == 0
    with pytest.raises(LengthMismatch):
        remaining_edits(("A",), ())


@settings(max_examples=200)
@given(st.text(alphabet="ACDE", max_size=9), st.text(alphabet="ACDE", max_size=9), st.floats(0, 1),
       st.integers(0, 2**32 - 1))
def test_remaining_edits_replay(a, b, t, seed):
    pair = align_with_blanks(P(a), P(b))
    zt, xt = sample_zt(pair, t, KappaSchedule(), make_rng(seed))
    rem = remaining_edits(zt, pair.z1)
    out = execute(TokenSequence("protein", xt), rem.to_script())
    assert "".join(out) == b


def _single_sub(q):
    v = len(q)
    vocab = tuple("ACDEFGHIKL"[:v])
    heads = EditFlowHeads(vocab, np.zeros(2), np.zeros(1), np.array([2.0]),
                          np.full((2, v), 1.0 / v), np.array([q]))
    return heads, RemainingEdits((RemainingEdit(0, "substitute", vocab[1], 0),))


def test_loss_worked_examples():
    heads, rem = _single_sub([0.5, 0.5])
    assert float(editflow_loss(heads, rem, 0.5)) == 2.0
    heads, rem = _single_sub([0.25, 0.25, 0.25, 0.25])
    assert abs(float(editflow_loss(heads, rem, 0.5)) - (2 + (6 / 7) * math.log(2))) <= 1e-9


def test_loss_zero_cases():
    heads = EditFlowHeads.zeros(3, "AC")
    assert editflow_loss(heads, RemainingEdits(), 0.3).value == 0.0
    heads = toy_heads("uniform", "AC")(P("AAA"), 0.0)
    assert editflow_loss(heads, RemainingEdits(), 0.3).value == heads.total_rate() == 10.0
    bad = editflow_loss(EditFlowHeads.zeros(1, "AC"), RemainingEdits((RemainingEdit(0, "delete", None, 0),)), 0.3)
    assert bad.value == math.inf and bad.zero_intensity


def test_masks():
    heads = toy_heads("uniform", "AC")(P("AAA"), 0.0)
    masked = apply_masks(heads, pad_mask=[False, False, True], bos_index=0)
    assert masked.lam_del.tolist() == [0, 1, 0] and masked.lam_sub.tolist() == [0, 1, 0]
    assert masked.lam_ins.tolist() == [1, 1, 0, 1]


def test_head_validation():
    with pytest.raises(InputError):
        EditFlowHeads(("A",), [1, 1], [-1], [0], [[1], [1]], [[1]]).validate()
    with pytest.raises(InputError):
        EditFlowHeads(("A", "C"), [1, 1], [0], [0], [[1, 0], [0.5, 0.4]], [[1, 0]]).validate()
    with pytest.raises(InputError):
        EditFlowHeads.zeros(2, "AC").validate(3)


def test_step_zero_rates_identity():
    seq = P("MKV")
    out, ops = simulate_step(seq, EditFlowHeads.zeros(3, "AC"), 0.1, make_rng(1))
    assert out == seq and ops == []


def test_trigger_clamp_value():
    heads = EditFlowHeads(("A",), [20.0, 0.0], [20.0], [0.0], [[1], [1]], [[1]])
    p_ins, p_ds = trigger_probabilities(heads, 0.1)
    assert p_ins[0] == 0.9 and p_ds[0] == 0.9


def test_delete_share():
    heads = EditFlowHeads(("A", "C"), [0, 0], [3.0], [1.0], [[1, 0], [1, 0]], [[0, 1]])
    rng = make_rng(7)
    n, dels, trig = 40_000, 0, 0
    for _ in range(n):
        _, ops = simulate_step(P("A"), heads, 10.0, rng)
        if ops:
            trig += 1
            dels += ops[0].op.value == "DELETE"
    assert abs(dels / trig - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / trig)


def test_budgeted_zero_head():
    run = simulate_budgeted(P("MKV"), toy_heads("zero"), 20, 3, 5, make_rng(0))
    assert run.final == P("MKV") and len(run.script) == 0


def test_budget_one_substitution():
    run = simulate_budgeted(P("MKV"), toy_heads("sub0"), 10, 1, 3, make_rng(0))
    assert len(run.script) == 1
    op = run.script[0]
    assert (op.op.value, op.position, op.token, op.old_token) == ("REPLACE", 0, "A", "M")
    assert run.final == P("AKV") and run.stopped_by_budget


def test_budgeted_argument_checks():
    with pytest.raises(InputError):
        simulate_budgeted(P("MKV"), toy_heads("zero"), 0, 1, 5, make_rng(0))
    with pytest.raises(InputError):
        simulate_budgeted(P("MKV"), toy_heads("zero"), 5, 1, 2, make_rng(0))


def test_length_cap_disables_insertions():
    ins_only = lambda seq, t: EditFlowHeads(  # noqa: E731
        ("A",), np.full(len(seq) + 1, 50.0), np.zeros(len(seq)), np.zeros(len(seq)),
        np.ones((len(seq) + 1, 1)), np.ones((len(seq), 1)))
    run = simulate_budgeted(P("MK"), ins_only, 10, 100, 4, make_rng(3))
    assert len(run.final) <= 4 and run.truncated and run.dropped_insertions > 0
    assert execute(P("MK"), run.script) == run.final
