"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`EditrajError`
so that callers (and the CLI's exit-code mapping) can catch by family.
"""

from __future__ import annotations


class EditrajError(Exception):
    """Base class for all library errors."""


class InputError(EditrajError):
    """Bad user-supplied data (maps to CLI exit code 2)."""


# -- sequences ---------------------------------------------------------------

class InvalidResidue(InputError):
    def __init__(self, position: int, char: str):
        self.position = position
        self.char = char
        super().__init__(f"invalid residue {char!r} at position {position}")


class TokenizationGap(InputError):
    def __init__(self, position: int, text: str = ""):
        self.position = position
        snippet = text[position:position + 10]
        super().__init__(f"no SMILES token matches at position {position} ({snippet!r})")


class AlphabetMismatch(InputError):
    def __init__(self, left, right):
        self.left = left
        self.right = right
        super().__init__(f"alphabet mismatch: {left} vs {right}")


class InvalidToken(InputError):
    def __init__(self, token: str, alphabet):
        self.token = token
        self.alphabet = alphabet
        super().__init__(f"token {token!r} is not admissible in the {alphabet} alphabet")


class LengthMismatch(InputError):
    def __init__(self, left: int, right: int, what: str = "sequences"):
        self.left = left
        self.right = right
        super().__init__(f"length mismatch between {what}: {left} != {right}")


# -- scripts -----------------------------------------------------------------

class ExecutionError(InputError):
    """An edit could not be applied. ``step`` is filled in by the executor."""

    step: int | None = None

    def with_step(self, step: int) -> "ExecutionError":
        self.step = step
        self.args = (f"step {step}: {self.args[0]}",)
        return self


class PositionOutOfRange(ExecutionError):
    def __init__(self, op, length: int):
        self.op = op
        self.length = length
        super().__init__(f"{op} is out of range for a sequence of length {length}")


class TokenMismatch(ExecutionError):
    def __init__(self, position: int, expected: str, found: str):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(
            f"expected {expected!r} at position {position}, found {found!r}")


class ScriptSyntaxError(InputError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class MalformedTrace(InputError):
    pass


class OutputTokenizationError(InputError):
    def __init__(self, cause: Exception):
        self.cause = cause
        super().__init__(f"cannot tokenize output: {cause}")


# -- alignment ---------------------------------------------------------------

class AlignmentTooLarge(InputError):
    def __init__(self, m: int, n: int, limit: int):
        super().__init__(f"alignment of {m}x{n} tokens exceeds the {limit}-cell limit")


class InconsistentAlignment(EditrajError):
    pass


# -- datasets ----------------------------------------------------------------

class EmptySamplingSet(InputError):
    pass


class AttemptCapExceeded(EditrajError):
    def __init__(self, kept: int, attempts: int, pairs=None):
        self.kept = kept
        self.attempts = attempts
        self.pairs = list(pairs or [])
        super().__init__(f"kept {kept} samples after {attempts} attempts")


# -- oracles -----------------------------------------------------------------

class OracleError(EditrajError):
    """Anything that went wrong talking to an oracle (maps to exit code 3)."""


class OracleTimeout(OracleError):
    pass


class OracleProtocolError(OracleError):
    pass


class OracleRefused(OracleError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"oracle refused request: {reason}")


# -- numerics ----------------------------------------------------------------

class DegenerateGroup(InputError):
    pass


class NonFiniteRatio(InputError):
    pass


class ScheduleSingularity(InputError):
    pass


class InvalidMoleculeInput(InputError):
    pass
