import json
import re
import subprocess
import sys
import threading

import pytest
from hypothesis import given, strategies as st

from editraj.errors import LengthMismatch, OracleProtocolError, OracleRefused, OracleTimeout
from editraj.oracle import (
    Fingerprint,
    JsonLinesOracle,
    LoopbackTransport,
    ReplayTransport,
    SubprocessTransport,
    TcpTransport,
    load_transcript,
    open_oracle,
    tanimoto,
    toy_oracle,
)
from editraj.seq import tokenize

SERVER = [sys.executable, "-m", "editraj.oracle_server"]


def P(s):
    return tokenize(s, "protein")


def S(s):
    return tokenize(s, "smiles")


def test_toy_fitness():
    toy = toy_oracle()
    assert toy.score_fitness(P("GGA")) == pytest.approx(1.7, abs=1e-12)
    assert toy.score_fitness(P("")) == 0.0
    assert toy_oracle("count:A").score_fitness(P("AAC")) == 2.0


def test_toy_mol_props():
    props = toy_oracle().mol_properties(S("CCO"))
    assert props.valid and props.hba == 1 and props.tpsa == 20.0
    assert props.logp == pytest.approx(0.7, abs=1e-12)
    assert props.hbd == 0 and props.qed == pytest.approx(0.3)
    assert not toy_oracle().mol_properties(S("CC(")).valid
    assert not toy_oracle().mol_properties(S("C1CC")).valid
    assert toy_oracle().mol_properties(S("[NH3+]CC")).hbd == 1


def test_invalid_props_unreadable():
    with pytest.raises(ValueError):
        toy_oracle().mol_properties(S("CC(")).get("logp")


def test_tanimoto_examples():
    fp = lambda bits: Fingerprint.from_bits(bits, 8)  # noqa: E731
    assert tanimoto(fp({1, 2, 3}), fp({2, 3, 4})) == 0.5
    assert tanimoto(fp({1}), fp({1})) == 1.0
    assert tanimoto(fp({1}), fp({2})) == 0.0
    assert tanimoto(fp(()), fp(())) == 1.0
    with pytest.raises(LengthMismatch):
        tanimoto(fp({1}), Fingerprint.from_bits({1}, 16))


@given(st.sets(st.integers(0, 31)), st.sets(st.integers(0, 31)))
def test_tanimoto_properties(a, b):
    fa, fb = Fingerprint.from_bits(a, 32), Fingerprint.from_bits(b, 32)
    t = tanimoto(fa, fb)
    assert 0.0 <= t <= 1.0 and t == tanimoto(fb, fa)
    assert tanimoto(fa, fa) == 1.0


def test_loopback_protocol_matches_in_process():
    client = JsonLinesOracle(LoopbackTransport(toy_oracle()))
    assert client.score_fitness(P("GGA")) == toy_oracle().score_fitness(P("GGA"))
    assert client.mol_properties(S("CCO")) == toy_oracle().mol_properties(S("CCO"))
    assert client.fingerprint(S("CCO")) == toy_oracle().fingerprint(S("CCO"))
    assert client.canonicalize(S("cco")) == "CCO"
    assert client.score_fitness_batch([P("G"), P("GG")]) == [0.9, 1.8]
    with pytest.raises(OracleRefused):
        client.request("nope", {})
    client.close()


def _concurrent_scores(client, n):
    seqs = ["G" * k + "A" for k in range(n)]
    out = [None] * n

    def work(k):
        out[k] = client.score_fitness(P(seqs[k]))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return out, [toy_oracle().score_fitness(P(s)) for s in seqs]


def test_subprocess_reordered_responses_demultiplexed():
    client = JsonLinesOracle(SubprocessTransport(SERVER + ["--reorder", "8"]), timeout_ms=20_000)
    got, want = _concurrent_scores(client, 8)
    assert got == want
    client.close()


def test_dead_subprocess_times_out():
    client = JsonLinesOracle(SubprocessTransport(SERVER + ["--die-after", "2"]), timeout_ms=10_000)
    assert client.score_fitness(P("G")) == pytest.approx(0.9)
    with pytest.raises(OracleTimeout):
        client.score_fitness(P("GG"))
    with pytest.raises(OracleTimeout):
        client.score_fitness(P("GG"))
    client.close()


def test_unresponsive_oracle_times_out():
    client = JsonLinesOracle(SubprocessTransport(["sleep", "30"]), timeout_ms=200)
    with pytest.raises(OracleTimeout):
        client.score_fitness(P("G"))
    client.transport.proc.kill()
    client.close()


def test_tcp_transport():
    proc = subprocess.Popen(SERVER + ["--tcp", "0", "--reorder", "4"], stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stderr.readline()
        port = int(re.search(r":(\d+)", line).group(1))
        client = JsonLinesOracle(TcpTransport(f"127.0.0.1:{port}"), timeout_ms=20_000)
        got, want = _concurrent_scores(client, 4)
        assert got == want
        client.close()
    finally:
        proc.kill()
        proc.wait()


def test_shuffling_transport_property():
    """Responses released in a random permutation still reach their callers."""
    import random

    class Shuffling(LoopbackTransport):
        def __init__(self, oracle, batch, seed):
            super().__init__(oracle)
            self.batch, self.rng, self.held = batch, random.Random(seed), []

        def send_line(self, line):
            from editraj.oracle import handle_line
            with self._cv:
                self.held.append(handle_line(self.oracle, line))
                if len(self.held) == self.batch:
                    self.rng.shuffle(self.held)
                    self._out.extend(self.held)
                    self.held.clear()
                    self._cv.notify_all()

    for seed in range(5):
        client = JsonLinesOracle(Shuffling(toy_oracle(), 6, seed), timeout_ms=20_000)
        got, want = _concurrent_scores(client, 6)
        assert got == want
        client.close()


def test_record_replay_byte_identical(tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    rec = open_oracle("toy:default", record=True)
    values = [rec.score_fitness(P("GGA")), rec.mol_properties(S("CCO")).to_dict()]
    rec.write_transcript(first)
    rec.close()
    rep = JsonLinesOracle(ReplayTransport(load_transcript(first)), record=True)
    assert [rep.score_fitness(P("GGA")), rep.mol_properties(S("CCO")).to_dict()] == values
    rep.write_transcript(second)
    rep.close()
    assert first.read_bytes() == second.read_bytes()
    entry = json.loads(first.read_text().splitlines()[0])
    assert set(entry) == {"request", "response"}
    assert set(entry["request"]) == {"id", "op", "payload"}


def test_replay_unknown_request_fails(tmp_path):
    rep = JsonLinesOracle(ReplayTransport([]))
    with pytest.raises(OracleProtocolError):
        rep.score_fitness(P("G"))
    rep.close()
