"""The completion wire format and the parse-and-execute consistency check.

A completion is::

    <think>
    <one script line per op>
    </think>
    <output sequence>

Inside the think block each line is stripped before parsing and blank lines
are dropped. The output is everything after the first closing tag, stripped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import (
    EditrajError,
    ExecutionError,
    InputError,
    MalformedTrace,
    OutputTokenizationError,
    ScriptSyntaxError,
)
from .script import EditScript, execute, parse_script, render_script
from .seq import Alphabet, TokenSequence, detokenize, get_alphabet, tokenize

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

_EXTRA_BLOCK_RE = re.compile(re.escape(THINK_OPEN) + r".*?" + re.escape(THINK_CLOSE), re.S)


@dataclass(frozen=True)
class Trajectory:
    script: EditScript
    output: TokenSequence
    raw_text: str | None = field(default=None, compare=False)
    no_trace: bool = field(default=False, compare=False)
    extra_blocks: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ConsistencyReport:
    parsable: bool
    executable: bool
    reproduces_output: bool
    first_failure: str | None = None
    failed_step: int | None = None

    @property
    def ok(self) -> bool:
        return self.parsable and self.executable and self.reproduces_output

    def to_dict(self) -> dict:
        return {
            "parsable": self.parsable,
            "executable": self.executable,
            "reproduces_output": self.reproduces_output,
            "first_failure": self.first_failure,
            "failed_step": self.failed_step,
        }


def render_completion(script: EditScript, output: TokenSequence | str) -> str:
    body = render_script(script)
    if body:
        body += "\n"
    out = output if isinstance(output, str) else detokenize(output)
    return f"{THINK_OPEN}\n{body}{THINK_CLOSE}\n{out}"


def split_completion(text: str) -> tuple[str | None, str, int]:
    """Return (think body or None, output text, number of ignored extra blocks)."""
    start = text.find(THINK_OPEN)
    if start < 0:
        if THINK_CLOSE in text:
            raise MalformedTrace(f"{THINK_CLOSE} without a preceding {THINK_OPEN}")
        return None, text.strip(), 0
    body_start = start + len(THINK_OPEN)
    end = text.find(THINK_CLOSE, body_start)
    if end < 0:
        raise MalformedTrace(f"unclosed {THINK_OPEN} at offset {start}")
    rest = text[end + len(THINK_CLOSE):]
    rest, extra = _EXTRA_BLOCK_RE.subn("", rest)
    if THINK_OPEN in rest or THINK_CLOSE in rest:
        raise MalformedTrace("unbalanced think tags after the first block")
    return text[body_start:end], rest.strip(), extra


def parse_completion(text: str, alphabet: Alphabet | str) -> Trajectory:
    alphabet = get_alphabet(alphabet)
    body, out_text, extra = split_completion(text)
    script = parse_script(body, alphabet) if body is not None else EditScript()
    try:
        output = tokenize(out_text, alphabet)
    except InputError as exc:
        raise OutputTokenizationError(exc) from exc
    return Trajectory(script, output, raw_text=text, no_trace=body is None, extra_blocks=extra)


def verify_consistency(src: TokenSequence, traj: Trajectory | str) -> ConsistencyReport:
    """Never raises; every failure becomes a report state.

    ``traj`` may be raw completion text, in which case parse failures show up
    as ``parsable=False``. A missing think block counts as unparsable.
    """
    if isinstance(traj, str):
        try:
            traj = parse_completion(traj, src.alphabet)
        except ScriptSyntaxError as exc:
            return ConsistencyReport(False, False, False, f"script: {exc}")
        except (MalformedTrace, OutputTokenizationError) as exc:
            return ConsistencyReport(False, False, False, str(exc))
        except Exception as exc:  # total by contract
            return ConsistencyReport(False, False, False, f"unexpected: {exc!r}")
    if traj.no_trace:
        return ConsistencyReport(False, False, False, "no think block")
    try:
        result = execute(src, traj.script, strict=True)
    except ExecutionError as exc:
        return ConsistencyReport(True, False, False, str(exc), exc.step)
    except (EditrajError, ValueError, TypeError) as exc:
        return ConsistencyReport(True, False, False, f"unexpected: {exc!r}")
    if result.kind is not traj.output.kind or result.tokens != traj.output.tokens:
        return ConsistencyReport(True, True, False, "executed script does not reproduce the output")
    return ConsistencyReport(True, True, True)
