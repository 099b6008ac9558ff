"""Atomic edits, the line-oriented script grammar, and the sequential executor.

Grammar (one op per line, ASCII, tokens never contain spaces)::

    INSERT <tok> at position <p>
    DELETE <tok> at position <p>        (token optional: DELETE at position <p>)
    REPLACE <old> with <new> at position <p>  (old optional: REPLACE <new> at position <p>)

Positions are 0-based and refer to the sequence as it stands *before* the
line is applied, i.e. after every earlier line has been executed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import (
    ExecutionError,
    InvalidToken,
    PositionOutOfRange,
    ScriptSyntaxError,
    TokenMismatch,
)
from .seq import Alphabet, TokenSequence, get_alphabet

SCRIPT_FORMAT_VERSION = 1


class OpKind(str, Enum):
    INSERT = "INSERT"
    DELETE = "DELETE"
    REPLACE = "REPLACE"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EditOp:
    """One atomic edit.

    ``token`` is the inserted token (INSERT), the expected current token
    (DELETE, may be ``None``) or the new token (REPLACE). ``old_token`` is the
    expected current token for REPLACE and ``None`` otherwise.
    """

    op: OpKind
    position: int
    token: str | None = None
    old_token: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "op", OpKind(self.op))
        if self.position < 0:
            raise ValueError(f"negative position {self.position}")
        if self.op is not OpKind.DELETE and self.token is None:
            raise ValueError(f"{self.op} needs a token")
        if self.op is not OpKind.REPLACE and self.old_token is not None:
            raise ValueError("old_token is only meaningful for REPLACE")

    @classmethod
    def insert(cls, position: int, token: str) -> "EditOp":
        return cls(OpKind.INSERT, position, token)

    @classmethod
    def delete(cls, position: int, token: str | None = None) -> "EditOp":
        return cls(OpKind.DELETE, position, token)

    @classmethod
    def replace(cls, position: int, new: str, old: str | None = None) -> "EditOp":
        return cls(OpKind.REPLACE, position, new, old)

    @property
    def expected(self) -> str | None:
        if self.op is OpKind.DELETE:
            return self.token
        if self.op is OpKind.REPLACE:
            return self.old_token
        return None

    def __str__(self) -> str:
        return render_op(self)


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...] = ()

    def __post_init__(self):
        if not isinstance(self.ops, tuple):
            object.__setattr__(self, "ops", tuple(self.ops))

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[EditOp]:
        return iter(self.ops)

    def __getitem__(self, index):
        return self.ops[index]

    def count(self, kind: OpKind) -> int:
        return sum(1 for op in self.ops if op.op is kind)

    def __str__(self) -> str:
        return render_script(self)


@dataclass
class Execution:
    """Result of :func:`execute_traced`: the output plus every intermediate state."""

    output: TokenSequence
    states: list[TokenSequence]
    warnings: list[str] = field(default_factory=list)


def _check_token(token: str | None, alphabet: Alphabet) -> None:
    if token is not None and not alphabet.admits(token):
        raise InvalidToken(token, alphabet.kind)


def _apply(tokens: list[str], op: EditOp, strict: bool, warnings: list[str] | None) -> None:
    length = len(tokens)
    if op.op is OpKind.INSERT:
        if op.position > length:
            raise PositionOutOfRange(op, length)
        tokens.insert(op.position, op.token)
        return
    if op.position >= length:
        raise PositionOutOfRange(op, length)
    found = tokens[op.position]
    expected = op.expected
    if expected is not None and expected != found:
        if strict:
            raise TokenMismatch(op.position, expected, found)
        if warnings is not None:
            warnings.append(str(TokenMismatch(op.position, expected, found)))
    if op.op is OpKind.DELETE:
        del tokens[op.position]
    else:
        tokens[op.position] = op.token


def apply_op(seq: TokenSequence, op: EditOp, *, strict: bool = True) -> TokenSequence:
    """Apply one edit. In lenient mode a wrong expected token is ignored."""
    alphabet = seq.alphabet
    _check_token(op.token, alphabet)
    _check_token(op.old_token, alphabet)
    tokens = list(seq.tokens)
    _apply(tokens, op, strict, None)
    return seq.replace_tokens(tokens)


def execute_traced(src: TokenSequence, script: EditScript | Iterable[EditOp], *,
                   strict: bool = True) -> Execution:
    alphabet = src.alphabet
    tokens = list(src.tokens)
    states = [src]
    warnings: list[str] = []
    for step, op in enumerate(script):
        try:
            _check_token(op.token, alphabet)
            _check_token(op.old_token, alphabet)
            before = len(warnings)
            _apply(tokens, op, strict, warnings)
            warnings[before:] = [f"step {step}: {w}" for w in warnings[before:]]
        except ExecutionError as exc:
            raise exc.with_step(step)
        except InvalidToken as exc:
            raise ExecutionError(str(exc)).with_step(step) from exc
        states.append(src.replace_tokens(tokens))
    return Execution(states[-1], states, warnings)


def execute(src: TokenSequence, script: EditScript | Iterable[EditOp], *,
            strict: bool = True) -> TokenSequence:
    """Fold the script over ``src``; errors carry the failing step index."""
    alphabet = src.alphabet
    tokens = list(src.tokens)
    for step, op in enumerate(script):
        try:
            _check_token(op.token, alphabet)
            _check_token(op.old_token, alphabet)
            _apply(tokens, op, strict, None)
        except ExecutionError as exc:
            raise exc.with_step(step)
        except InvalidToken as exc:
            raise ExecutionError(str(exc)).with_step(step) from exc
    return src.replace_tokens(tokens)


# -- text format -------------------------------------------------------------

_TOK = r"(\S+)"
_POS = r"at\s+position\s+([0-9]+)"
_INSERT_RE = re.compile(rf"INSERT\s+{_TOK}\s+{_POS}")
_DELETE_RE = re.compile(rf"DELETE\s+(?:(?!at\s)(\S+)\s+)?{_POS}")
_REPLACE_RE = re.compile(rf"REPLACE\s+(?:(\S+)\s+with\s+)?{_TOK}\s+{_POS}")


def render_op(op: EditOp) -> str:
    if op.op is OpKind.INSERT:
        return f"INSERT {op.token} at position {op.position}"
    if op.op is OpKind.DELETE:
        if op.token is None:
            return f"DELETE at position {op.position}"
        return f"DELETE {op.token} at position {op.position}"
    if op.old_token is None:
        return f"REPLACE {op.token} at position {op.position}"
    return f"REPLACE {op.old_token} with {op.token} at position {op.position}"


def render_script(script: EditScript | Sequence[EditOp]) -> str:
    return "\n".join(render_op(op) for op in script)


def parse_line(line: str, alphabet: Alphabet | str, line_no: int = 1) -> EditOp:
    alphabet = get_alphabet(alphabet)
    text = line.strip()
    head = text.split(None, 1)[0] if text else ""
    if head == "INSERT":
        m = _INSERT_RE.fullmatch(text)
        if m is None:
            raise ScriptSyntaxError(line_no, "expected 'INSERT <tok> at position <p>'")
        op = EditOp.insert(int(m.group(2)), m.group(1))
    elif head == "DELETE":
        m = _DELETE_RE.fullmatch(text)
        if m is None:
            raise ScriptSyntaxError(line_no, "expected 'DELETE <tok> at position <p>'")
        op = EditOp.delete(int(m.group(2)), m.group(1))
    elif head == "REPLACE":
        m = _REPLACE_RE.fullmatch(text)
        if m is None:
            raise ScriptSyntaxError(line_no, "expected 'REPLACE <old> with <new> at position <p>'")
        op = EditOp.replace(int(m.group(3)), m.group(2), m.group(1))
    else:
        raise ScriptSyntaxError(line_no, f"unknown operation {head!r}")
    for tok in (op.token, op.old_token):
        if tok is not None and not alphabet.admits(tok):
            raise ScriptSyntaxError(line_no, f"token {tok!r} not in the {alphabet.kind} alphabet")
    return op


def parse_script(text: str, alphabet: Alphabet | str) -> EditScript:
    """Parse one op per non-blank line; blank lines anywhere are skipped."""
    ops = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            ops.append(parse_line(line, alphabet, line_no))
    return EditScript(tuple(ops))
