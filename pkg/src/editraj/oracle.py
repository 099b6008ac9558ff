"""Oracle clients: JSON-lines protocol, transports, and toy stand-ins.

Wire protocol (one JSON object per line, UTF-8)::

    request   {"id": <int>, "op": <str>, "payload": <object>}
    response  {"id": <int>, "ok": true,  "result": <any>}
              {"id": <int>, "ok": false, "error": <str>}

Responses may arrive in any order; the client matches them by ``id``.

The toy oracles in this module are NON-CHEMICAL, NON-BIOLOGICAL surrogates.
Their formulas are arbitrary but documented so every reward and metric path
can be tested hermetically; they say nothing about real molecules or proteins.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import shlex
import socket
import subprocess
import threading
import zlib
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import (
    InputError,
    LengthMismatch,
    OracleError,
    OracleProtocolError,
    OracleRefused,
    OracleTimeout,
)
from .seq import AlphabetKind, TokenSequence, detokenize, tokenize

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
PROPERTIES = ("logp", "qed", "tpsa", "hba", "hbd")
CAPABILITIES = frozenset({"fitness", "mol_props", "validity", "fingerprint", "canonicalize"})
DEFAULT_FP_LENGTH = 2048


@dataclass(frozen=True)
class MolProps:
    valid: bool
    logp: float | None = None
    qed: float | None = None
    tpsa: float | None = None
    hba: int | None = None
    hbd: int | None = None

    def get(self, prop: str) -> float:
        if not self.valid:
            raise ValueError("properties of an invalid molecule are undefined")
        return getattr(self, prop)

    def to_dict(self) -> dict:
        if not self.valid:
            return {"valid": False}
        return {"valid": True, **{p: getattr(self, p) for p in PROPERTIES}}

    @classmethod
    def from_dict(cls, d: dict) -> "MolProps":
        if not d.get("valid"):
            return cls(False)
        return cls(True, float(d["logp"]), float(d["qed"]), float(d["tpsa"]),
                   int(d["hba"]), int(d["hbd"]))


@dataclass(frozen=True)
class Fingerprint:
    length: int
    on_bits: frozenset[int]

    @classmethod
    def from_bits(cls, bits: Iterable[int], length: int = DEFAULT_FP_LENGTH) -> "Fingerprint":
        on = frozenset(int(b) for b in bits)
        if any(b < 0 or b >= length for b in on):
            raise ValueError("bit index outside fingerprint length")
        return cls(length, on)

    def to_dict(self) -> dict:
        return {"length": self.length, "on_bits": sorted(self.on_bits)}


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|, with two empty fingerprints defined as identical (1.0)."""
    if a.length != b.length:
        raise LengthMismatch(a.length, b.length, "fingerprints")
    union = len(a.on_bits | b.on_bits)
    if union == 0:
        return 1.0
    return len(a.on_bits & b.on_bits) / union


# -- oracle interface --------------------------------------------------------

class Oracle:
    """Base class. Subclasses override the methods their capabilities cover."""

    capabilities: frozenset[str] = frozenset()

    def require(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise OracleRefused(f"capability {capability!r} not offered")

    def score_fitness(self, seq: TokenSequence) -> float:
        raise OracleRefused("fitness not supported")

    def score_fitness_batch(self, seqs: Sequence[TokenSequence]) -> list[float]:
        return [self.score_fitness(s) for s in seqs]

    def mol_properties(self, seq: TokenSequence) -> MolProps:
        raise OracleRefused("mol_props not supported")

    def is_valid(self, seq: TokenSequence) -> bool:
        return self.mol_properties(seq).valid

    def fingerprint(self, seq: TokenSequence) -> Fingerprint:
        raise OracleRefused("fingerprint not supported")

    def canonicalize(self, seq: TokenSequence) -> str:
        raise OracleRefused("canonicalize not supported")

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- toy oracles -------------------------------------------------------------

def toy_fitness_g(seq: TokenSequence) -> float:
    """count('G') - 0.1 * length."""
    return seq.tokens.count("G") - 0.1 * len(seq)


def toy_count(token: str) -> Callable[[TokenSequence], float]:
    def fitness(seq: TokenSequence) -> float:
        return float(seq.tokens.count(token))
    fitness.__name__ = f"count_{token}"
    return fitness


_CARBON = {"C", "c"}
_HETERO = {"N", "n", "O", "o"}


def toy_is_valid(tokens: Sequence[str]) -> bool:
    """Parentheses balance and every ring label occurs an even number of times."""
    if not tokens:
        return False
    depth = 0
    rings: dict[str, int] = defaultdict(int)
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                return False
        elif tok.isdigit() or tok.startswith("%"):
            rings[tok] += 1
    return depth == 0 and all(c % 2 == 0 for c in rings.values())


def toy_mol_props(seq: TokenSequence) -> MolProps:
    """Toy descriptors over bare tokens:

    logp = 0.5 * #C - 0.3 * (#N + #O); qed = (0.1 * #tokens) mod 1;
    tpsa = 20 * (#N + #O); hba = #N + #O; hbd = # bracket tokens containing H.
    Aromatic lowercase atoms count with their uppercase element.
    """
    toks = seq.tokens
    if not toy_is_valid(toks):
        return MolProps(False)
    n_c = sum(1 for t in toks if t in _CARBON)
    n_no = sum(1 for t in toks if t in _HETERO)
    hbd = sum(1 for t in toks if t.startswith("[") and "H" in t)
    qed = min(1.0, max(0.0, math.fmod(0.1 * len(toks), 1.0)))
    return MolProps(True, 0.5 * n_c - 0.3 * n_no, qed, 20.0 * n_no, n_no, hbd)


def toy_fingerprint(seq: TokenSequence, length: int = DEFAULT_FP_LENGTH) -> Fingerprint:
    """Hashed token unigrams and bigrams (crc32, so stable across processes)."""
    toks = seq.tokens
    grams = list(toks) + [a + " " + b for a, b in zip(toks, toks[1:])]
    return Fingerprint(length, frozenset(zlib.crc32(g.encode()) % length for g in grams))


class ToyOracle(Oracle):
    """In-process deterministic stand-in for every capability."""

    capabilities = CAPABILITIES | {"batch", "editflow_heads"}

    def __init__(self, fitness: Callable[[TokenSequence], float] = toy_fitness_g,
                 fp_length: int = DEFAULT_FP_LENGTH):
        self.fitness_fn = fitness
        self.fp_length = fp_length

    def score_fitness(self, seq):
        return float(self.fitness_fn(seq))

    def mol_properties(self, seq):
        return toy_mol_props(seq)

    def is_valid(self, seq):
        return toy_is_valid(seq.tokens)

    def fingerprint(self, seq):
        return toy_fingerprint(seq, self.fp_length)

    def canonicalize(self, seq):
        return detokenize(seq).upper()


def toy_oracle(name: str = "default") -> ToyOracle:
    """``default`` / ``g``: G-count fitness; ``count:<TOK>``: occurrences of TOK."""
    if name in ("default", "g", ""):
        return ToyOracle()
    if name.startswith("count:"):
        return ToyOracle(fitness=toy_count(name.split(":", 1)[1]))
    raise InputError(f"unknown toy oracle {name!r}")


# -- protocol: server side helper --------------------------------------------

def _payload_seq(payload: dict) -> TokenSequence:
    if "tokens" in payload:
        return TokenSequence(AlphabetKind(payload.get("alphabet", "protein")), tuple(payload["tokens"]))
    return tokenize(payload["sequence"], payload.get("alphabet", "protein"))


def dispatch(oracle: Oracle, op: str, payload: dict):
    """Evaluate one protocol op against an in-process oracle (used by servers)."""
    if op == "capabilities":
        return sorted(oracle.capabilities)
    if op == "batch":
        return [dispatch(oracle, payload["op"], item) for item in payload["items"]]
    if op == "fitness":
        return oracle.score_fitness(_payload_seq(payload))
    if op == "mol_props":
        return oracle.mol_properties(_payload_seq(payload)).to_dict()
    if op == "validity":
        return oracle.is_valid(_payload_seq(payload))
    if op == "fingerprint":
        return oracle.fingerprint(_payload_seq(payload)).to_dict()
    if op == "canonicalize":
        return oracle.canonicalize(_payload_seq(payload))
    if op == "editflow_heads":
        from .editflow import toy_heads  # local: editflow imports this module
        heads = toy_heads(payload.get("head", "uniform"), payload.get("vocab"))(
            tuple(payload["tokens"]), float(payload["t"]))
        return heads.to_dict()
    raise OracleRefused(f"unknown op {op!r}")


def handle_line(oracle: Oracle, line: str) -> str:
    try:
        req = json.loads(line)
        rid = req["id"]
    except (ValueError, KeyError, TypeError) as exc:
        return json.dumps({"id": None, "ok": False, "error": f"bad request: {exc}"})
    try:
        result = dispatch(oracle, req["op"], req.get("payload") or {})
        return json.dumps({"id": rid, "ok": True, "result": result}, sort_keys=True)
    except Exception as exc:
        return json.dumps({"id": rid, "ok": False, "error": str(exc)}, sort_keys=True)


# -- transports --------------------------------------------------------------

class Transport:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def read_line(self) -> str | None:
        """Next line without the newline, or None at end of stream."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class SubprocessTransport(Transport):
    def __init__(self, command: str | Sequence[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     text=True, bufsize=1)

    def send_line(self, line):
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise OracleTimeout(f"oracle process is gone: {exc}") from exc

    def read_line(self):
        line = self.proc.stdout.readline()
        return line.rstrip("\n") if line else None

    def close(self):
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        if self.proc.stdout:
            self.proc.stdout.close()


class TcpTransport(Transport):
    def __init__(self, address: str, connect_timeout: float = 5.0):
        host, _, port = address.rpartition(":")
        self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=connect_timeout)
        self.sock.settimeout(None)
        self.rfile = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self._wlock = threading.Lock()

    def send_line(self, line):
        try:
            with self._wlock:
                self.sock.sendall((line + "\n").encode())
        except OSError as exc:
            raise OracleTimeout(f"oracle connection lost: {exc}") from exc

    def read_line(self):
        try:
            line = self.rfile.readline()
        except OSError:
            return None
        return line.rstrip("\n") if line else None

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.rfile.close()
        self.sock.close()


class ReplayTransport(Transport):
    """Serves responses from a recorded transcript, matched on (op, payload)."""

    def __init__(self, transcript: Sequence[dict]):
        self._recorded: dict[str, deque] = defaultdict(deque)
        for entry in transcript:
            self._recorded[_request_key(entry["request"])].append(entry["response"])
        self._out: deque[str] = deque()
        self._cv = threading.Condition()
        self._closed = False

    def send_line(self, line):
        req = json.loads(line)
        queue = self._recorded.get(_request_key(req))
        if not queue:
            raise OracleProtocolError(f"request not in transcript: {line}")
        resp = dict(queue.popleft())
        resp["id"] = req["id"]
        with self._cv:
            self._out.append(json.dumps(resp, sort_keys=True))
            self._cv.notify_all()

    def read_line(self):
        with self._cv:
            while not self._out and not self._closed:
                self._cv.wait()
            return self._out.popleft() if self._out else None

    def close(self):
        with self._cv:
            self._closed = True
            self._cv.notify_all()


class LoopbackTransport(Transport):
    """Serves an in-process oracle through the wire protocol (for recording)."""

    def __init__(self, oracle: Oracle):
        self.oracle = oracle
        self._out: deque[str] = deque()
        self._cv = threading.Condition()
        self._closed = False

    def send_line(self, line):
        resp = handle_line(self.oracle, line)
        with self._cv:
            self._out.append(resp)
            self._cv.notify_all()

    def read_line(self):
        with self._cv:
            while not self._out and not self._closed:
                self._cv.wait()
            return self._out.popleft() if self._out else None

    def close(self):
        with self._cv:
            self._closed = True
            self._cv.notify_all()


def _request_key(req: dict) -> str:
    return json.dumps({"op": req["op"], "payload": req.get("payload")}, sort_keys=True)


def load_transcript(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- client ------------------------------------------------------------------

class _Pending:
    __slots__ = ("event", "response")

    def __init__(self):
        self.event = threading.Event()
        self.response: dict | None = None


class JsonLinesOracle(Oracle):
    """Client for an out-of-process oracle.

    Writes are serialized; a reader thread demultiplexes responses by id.
    At most ``max_in_flight`` requests are outstanding at once.
    """

    def __init__(self, transport: Transport, *, timeout_ms: int = 30_000,
                 max_in_flight: int = 64, record: bool = False,
                 alphabet_hint: AlphabetKind | None = None):
        if timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        self.transport = transport
        self.timeout = timeout_ms / 1000.0
        self._ids = itertools.count(1)
        self._pending: dict[int, _Pending] = {}
        self._lock = threading.Lock()
        self._window = threading.BoundedSemaphore(max_in_flight)
        self._closed = threading.Event()
        self._dead: str | None = None
        self.transcript: list[dict] | None = [] if record else None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._caps: frozenset[str] | None = None

    @property
    def capabilities(self) -> frozenset[str]:
        if self._caps is None:
            self._caps = frozenset(self.request("capabilities", {}))
        return self._caps

    def _read_loop(self):
        while True:
            line = self.transport.read_line()
            if line is None:
                break
            if not line.strip():
                continue
            try:
                resp = json.loads(line)
                rid = resp["id"]
            except (ValueError, KeyError, TypeError):
                log.warning("discarding malformed oracle line: %r", line)
                continue
            with self._lock:
                pending = self._pending.get(rid)
            if pending is None:
                log.warning("response for unknown request id %r", rid)
                continue
            pending.response = resp
            pending.event.set()
        self._dead = "oracle stream closed"
        with self._lock:
            for pending in self._pending.values():
                pending.event.set()

    def request(self, op: str, payload: dict):
        if not self._window.acquire(timeout=self.timeout):
            raise OracleTimeout(f"in-flight window full for {self.timeout}s")
        try:
            rid = next(self._ids)
            req = {"id": rid, "op": op, "payload": payload}
            pending = _Pending()
            with self._lock:
                if self._dead:
                    raise OracleTimeout(self._dead)
                self._pending[rid] = pending
            try:
                self.transport.send_line(json.dumps(req, sort_keys=True))
                if not pending.event.wait(self.timeout):
                    raise OracleTimeout(f"no response to {op} within {self.timeout}s")
            finally:
                with self._lock:
                    self._pending.pop(rid, None)
            resp = pending.response
            if resp is None:
                raise OracleTimeout(self._dead or "no response")
            if self.transcript is not None:
                with self._lock:
                    self.transcript.append({"request": req, "response": resp})
            if "ok" not in resp:
                raise OracleProtocolError(f"response without 'ok': {resp}")
            if not resp["ok"]:
                raise OracleRefused(str(resp.get("error", "unspecified")))
            if "result" not in resp:
                raise OracleProtocolError(f"ok response without 'result': {resp}")
            return resp["result"]
        finally:
            self._window.release()

    def write_transcript(self, path) -> None:
        entries = sorted(self.transcript or [], key=lambda e: e["request"]["id"])
        with open(path, "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @staticmethod
    def _payload(seq: TokenSequence) -> dict:
        return {"alphabet": seq.kind.value, "sequence": detokenize(seq)}

    def score_fitness(self, seq):
        value = self.request("fitness", self._payload(seq))
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise OracleProtocolError(f"fitness must be a finite number, got {value!r}")
        return float(value)

    def score_fitness_batch(self, seqs):
        if "batch" not in self.capabilities:
            return super().score_fitness_batch(seqs)
        return [float(v) for v in self.request(
            "batch", {"op": "fitness", "items": [self._payload(s) for s in seqs]})]

    def mol_properties(self, seq):
        return MolProps.from_dict(self.request("mol_props", self._payload(seq)))

    def is_valid(self, seq):
        return bool(self.request("validity", self._payload(seq)))

    def fingerprint(self, seq):
        d = self.request("fingerprint", self._payload(seq))
        return Fingerprint.from_bits(d["on_bits"], int(d["length"]))

    def canonicalize(self, seq):
        return str(self.request("canonicalize", self._payload(seq)))

    def close(self):
        if not self._closed.is_set():
            self._closed.set()
            self.transport.close()
            self._reader.join(timeout=2)


def open_oracle(spec: str, *, timeout_ms: int = 30_000, record: bool = False) -> Oracle:
    """``toy:<name>`` | ``stdio:<command>`` | ``tcp:<host:port>`` | ``replay:<transcript>``."""
    scheme, _, rest = spec.partition(":")
    if scheme == "toy":
        toy = toy_oracle(rest or "default")
        if record:
            return JsonLinesOracle(LoopbackTransport(toy), timeout_ms=timeout_ms, record=True)
        return toy
    if scheme == "stdio":
        return JsonLinesOracle(SubprocessTransport(rest), timeout_ms=timeout_ms, record=record)
    if scheme == "tcp":
        return JsonLinesOracle(TcpTransport(rest), timeout_ms=timeout_ms, record=record)
    if scheme == "replay":
        return JsonLinesOracle(ReplayTransport(load_transcript(rest)), timeout_ms=timeout_ms,
                               record=record)
    raise InputError(f"unknown oracle spec {spec!r}")


class CountingOracle(Oracle):
    """Wraps an oracle and counts calls; ``poisoned`` makes every call fail."""

    def __init__(self, inner: Oracle | None = None, poisoned: bool = False):
        self.inner = inner
        self.poisoned = poisoned
        self.calls = 0
        self.capabilities = inner.capabilities if inner else CAPABILITIES

    def _call(self, name, *args):
        self.calls += 1
        if self.poisoned or self.inner is None:
            raise OracleError(f"poisoned oracle contacted ({name})")
        return getattr(self.inner, name)(*args)

    def score_fitness(self, seq):
        return self._call("score_fitness", seq)

    def mol_properties(self, seq):
        return self._call("mol_properties", seq)

    def is_valid(self, seq):
        return self._call("is_valid", seq)

    def fingerprint(self, seq):
        return self._call("fingerprint", seq)

    def canonicalize(self, seq):
        return self._call("canonicalize", seq)
