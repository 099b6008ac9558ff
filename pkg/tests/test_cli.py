import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from editraj.cli import main
from editraj.script import parse_script, execute
from editraj.seq import tokenize
from oracles import replay

DATA = Path(__file__).parent / "data"


def run(argv, capsys):
    code = main(argv + ["-q"])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def test_align(capsys):
    code, out, _ = run(["align", "--alphabet", "protein", "MKV", "MRKVL"], capsys)
    assert code == 0
    assert json.loads(out) == {"src": "MKV", "tgt": "MRKVL", "distance": 2,
                               "script": "INSERT R at position 1\nINSERT L at position 4"}
    code, out, _ = run(["align", "MKV", "MKV", "--format", "text"], capsys)
    assert out == "# distance 0\n"


def test_align_bad_residue_exit_2(capsys):
    code, _, err = run(["align", "MKV", "MBV"], capsys)
    assert code == 2 and "invalid residue" in err


def test_exec_and_verify_golden_trio(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text("INSERT R at position 1\nINSERT L at position 4\n")
    code, out, _ = run(["exec", "MKV", str(script), "--format", "text"], capsys)
    assert (code, out) == (0, "MRKVL\n")
    good = tmp_path / "good.txt"
    good.write_text("<think>\nINSERT R at position 1\nINSERT L at position 4\n</think>\nMRKVL")
    bad_exec = tmp_path / "bad_exec.txt"
    bad_exec.write_text("<think>\nINSERT R at position 9\n</think>\nMRKV")
    bad_out = tmp_path / "bad_out.txt"
    bad_out.write_text("<think>\nINSERT R at position 1\n</think>\nMRKVL")
    reports = []
    for f in (good, bad_exec, bad_out):
        code, out, _ = run(["verify", "MKV", str(f)], capsys)
        assert code == 0
        reports.append(json.loads(out))
    assert [r["ok"] for r in reports] == [True, False, False]
    assert reports[1]["executable"] is False and reports[1]["failed_step"] == 0
    assert reports[2]["executable"] is True and reports[2]["reproduces_output"] is False


def test_exec_empty_script_identity(tmp_path, capsys):
    script = tmp_path / "empty.txt"
    script.write_text("")
    assert run(["exec", "MKV", str(script), "--format", "text"], capsys)[1] == "MKV\n"


def test_exec_mismatch_exit_2_and_lenient(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text("DELETE A at position 0\n")
    assert run(["exec", "MKV", str(script)], capsys)[0] == 2
    code, out, _ = run(["exec", "MKV", str(script), "--lenient"], capsys)
    assert code == 0 and json.loads(out)["output"] == "KV" and json.loads(out)["warnings"]


def test_verify_worked_trace(tmp_path, capsys):
    f = tmp_path / "t1.txt"
    f.write_text("<think>\nDELETE C at position 21\nREPLACE ) with 2 at position 31\n"
                 "INSERT = at position 7\nDELETE c at position 11\nINSERT C at position 8\n</think>\n"
                 "CC(=O)N=Cc1ccc(C=NC(=O)N[C@@H](CCO)c2cccs2)cc1")
    code, out, _ = run(["verify", "--alphabet", "smiles",
                        "CC(=O)Nc1cc(NC(=O)N[C@@H](CCO)c2cccs2)ccc1C", str(f)], capsys)
    report = json.loads(out)
    assert code == 0 and report["parsable"] and report["executable"]


def _check_sft_rows(out):
    # independent replay of every emitted trace
    for r in rows(out):
        ops = [(op.op.value, op.position, op.token) for op in parse_script(r["trace"], "protein")]
        assert "".join(replay(r["src"], ops)) == r["output"]


def test_sft_build_and_leakage(tmp_path, capsys):
    report = tmp_path / "r.json"
    code, out, _ = run(["sft-build", str(DATA / "pool.csv"), "--report", str(report),
                        "--eval-set", str(DATA / "eval_set.txt")], capsys)
    assert code == 0 and len(rows(out)) == 3
    _check_sft_rows(out)
    rep = json.loads(report.read_text())
    assert rep["leakage"]["hits"] == [0] and rep["built"] == 3


def test_sft_build_pairs_mode(tmp_path, capsys):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("src,tgt\nACDE,CDEF\nMKV,MKV\n")
    code, out, _ = run(["sft-build", str(pairs), "--pairs"], capsys)
    assert [r["trace"] for r in rows(out)] == ["DELETE A at position 0\nINSERT F at position 3", ""]


@pytest.mark.parametrize("cmd", ["sft-build", "augment", "perturb"])
def test_empty_input_empty_output(tmp_path, capsys, cmd):
    src = tmp_path / "empty.csv"
    src.write_text("sequence,label\n" if cmd != "perturb" else "")
    code, out, _ = run([cmd, str(src)], capsys)
    assert (code, out) == (0, "")


def test_augment_rows_improve(capsys):
    code, out, _ = run(["augment", str(DATA / "anchors.csv"), "-n", "3"], capsys)
    assert code == 0 and len(rows(out)) == 9
    _check_sft_rows(out)
    labels = {r["sequence"]: float(r["label"]) for r in csv.DictReader(open(DATA / "anchors.csv"))}
    for r in rows(out):
        out_seq = r["output"]
        assert out_seq.count("G") - 0.1 * len(out_seq) > labels[r["src"]]


def test_perturb_rows_replay(capsys):
    code, out, _ = run(["perturb", str(DATA / "sources.txt"), "--samples", "3"], capsys)
    data = rows(out)
    assert code == 0 and len(data) == 9
    for r in data:
        assert 1 <= len(r["trace"].splitlines()) <= 3
        ops = [(op.op.value, op.position, op.token) for op in parse_script(r["trace"], "protein")]
        assert "".join(replay(r["src"], ops)) == r["output"]


def test_reward_fixture(capsys):
    code, out, _ = run(["reward", str(DATA / "rollouts_protein.jsonl"), "--task", "protein"], capsys)
    # hand-computed: d=1 improved, d=5 improved, d=1 shorter (toy fitness rises), 2 gated
    assert [r["reward"]["total"] for r in rows(out)] == [2.0, 1.0, 2.0, 0.0, 0.0]
    code, out, _ = run(["reward", str(DATA / "rollouts_molecule.jsonl"), "--task", "molecule"], capsys)
    totals = [r["reward"]["total"] for r in rows(out)]
    # CCO->CO: logp 0.7->0.2 loose only, fp 3/4 -> sim 1, qed 0.3->0.2 drifts: 0.5 - 0.25
    # CCO->CCCO: logp +1.0 strict, sim 1 (4 shared of 4 union? no: see test body), no drift
    assert totals == [0.25, 1.0, 0.0, 0.0]


def test_reward_all_inconsistent(tmp_path, capsys):
    f = tmp_path / "r.jsonl"
    f.write_text("".join(json.dumps({"src": "MKV", "completion": c}) + "\n"
                         for c in ("MKV", "<think>\nDELETE at position 7\n</think>\nMK", "<think>")))
    code, out, _ = run(["reward", str(f), "--task", "protein", "--oracle", "stdio:false"], capsys)
    assert code == 0 and [r["reward"]["total"] for r in rows(out)] == [0.0, 0.0, 0.0]


def test_eval_molecule_csv_overall(capsys):
    code, out, _ = run(["eval", "molecule", str(DATA / "eval_molecule.jsonl"), "--format", "csv"], capsys)
    table = list(csv.reader(io.StringIO(out)))
    body, overall = table[1:-1], table[-1]
    for k in range(2, 7):
        vals = [float(r[k]) for r in body]
        assert abs(float(overall[k]) - sum(vals) / len(vals)) <= 1e-12


def test_eval_protein(capsys):
    code, out, _ = run(["eval", "protein", str(DATA / "eval_protein.jsonl"),
                        "--train-positives", str(DATA / "eval_set.txt"), "--format", "json"], capsys)
    per = json.loads(out)["per_source"]
    assert per["MKV"]["display"] == "2/3 1/2 1/1" and per["GAV"]["display"] == "1/1 1/1 1/1"


def test_rl_math(capsys):
    code, out, _ = run(["rl-math", str(DATA / "groups.jsonl")], capsys)
    on_policy, clip = rows(out)
    assert abs(on_policy["surrogate"] - sum(on_policy["advantages"]) / 4) <= 1e-12
    terms = [r["term"] for r in clip["per_rollout"]]
    adv = clip["advantages"]
    assert terms == pytest.approx([1.2 * adv[0], 0.8 * adv[1]], abs=1e-12)
    for algo in ("gspo", "cispo"):
        code, out, _ = run(["rl-math", str(DATA / "groups.jsonl"), "--algo", algo], capsys)
        first = rows(out)[0]
        assert abs(first["surrogate"] - sum(first["advantages"]) / 4) <= 1e-12


def test_editflow_cli(capsys):
    code, out, _ = run(["editflow", "MKV", "--head", "toy:zero"], capsys)
    assert rows(out)[0]["final"] == "MKV" and rows(out)[0]["script"] == ""
    code, out, _ = run(["editflow", "MKV", "--head", "toy:sub0", "--budget", "1"], capsys)
    assert rows(out)[0]["script"] == "REPLACE M with A at position 0"
    code, out, _ = run(["editflow", "MKVLA", "--head", "toy:hash", "--samples", "20", "--budget", "4"], capsys)
    for r in rows(out):
        src = tokenize("MKVLA", "protein")
        assert "".join(execute(src, parse_script(r["script"], "protein"))) == r["final"]


def test_editflow_remote_head(capsys):
    server = f"stdio:{sys.executable} -m editraj.oracle_server"
    local = run(["editflow", "MKVLA", "--head", "toy:hash", "--samples", "3"], capsys)[1]
    remote = run(["editflow", "MKVLA", "--head", server, "--remote-head", "hash", "--samples", "3"], capsys)[1]
    assert local == remote


def test_oracle_failure_exit_3(capsys):
    code, _, err = run(["reward", str(DATA / "rollouts_protein.jsonl"), "--task", "protein",
                        "--oracle", "stdio:false", "--timeout-ms", "2000"], capsys)
    assert code == 3 and "oracle" in err


def test_record_then_replay(tmp_path, capsys):
    tr = tmp_path / "t.jsonl"
    args = ["reward", str(DATA / "rollouts_molecule.jsonl"), "--task", "molecule"]
    first = run(args + ["--record", str(tr)], capsys)[1]
    second = run(args + ["--replay", str(tr)], capsys)[1]
    assert first == second and tr.read_text()


def test_resolved_config_logged():
    proc = subprocess.run([sys.executable, "-m", "editraj", "align", "MKV", "MKV"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "resolved config" in proc.stderr and '"seed": 42' in proc.stderr
