"""Alphabets, tokenizers and the immutable token sequence.

Edit positions throughout the package are token indices. For proteins a token
is one residue; for SMILES a token is whatever the regex below emits, so
``Cl`` or ``[C@@H]`` count as a single position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import AlphabetMismatch, InvalidResidue, InvalidToken, TokenizationGap

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN_RESIDUE = "X"

# Molecular Transformer SMILES regex (Schwaller et al., 2019), written out
# verbatim; README.md reproduces it. %nn ring closures are one token.
SMILES_TOKEN_PATTERN = (
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>>?|\*|\$|\%[0-9]{2}|[0-9])"
)
_SMILES_RE = re.compile(SMILES_TOKEN_PATTERN)

# Tokens random edits draw from when working on molecules.
SMILES_SAMPLING_TOKENS = (
    "C", "c", "N", "n", "O", "o", "S", "s", "F", "Cl", "Br", "I", "P",
    "(", ")", "=", "#", "1", "2", "3", "[nH]", "[O-]", "[NH3+]",
)


class AlphabetKind(str, Enum):
    PROTEIN = "protein"
    SMILES = "smiles"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Alphabet:
    kind: AlphabetKind
    tokens: tuple[str, ...]
    sampling_tokens: tuple[str, ...]

    def admits(self, token: str) -> bool:
        if self.kind is AlphabetKind.PROTEIN:
            return token in self.tokens
        return is_smiles_token(token)


PROTEIN = Alphabet(AlphabetKind.PROTEIN, tuple(AMINO_ACIDS + UNKNOWN_RESIDUE), tuple(AMINO_ACIDS))
SMILES = Alphabet(AlphabetKind.SMILES, SMILES_SAMPLING_TOKENS, SMILES_SAMPLING_TOKENS)


def get_alphabet(kind: AlphabetKind | str | Alphabet) -> Alphabet:
    if isinstance(kind, Alphabet):
        return kind
    kind = AlphabetKind(kind)
    return PROTEIN if kind is AlphabetKind.PROTEIN else SMILES


def is_smiles_token(token: str) -> bool:
    return bool(token) and _SMILES_RE.fullmatch(token) is not None


@dataclass(frozen=True)
class TokenSequence:
    """An alphabet-tagged, immutable list of tokens."""

    kind: AlphabetKind
    tokens: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AlphabetKind(self.kind))
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def alphabet(self) -> Alphabet:
        return get_alphabet(self.kind)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __getitem__(self, index):
        return self.tokens[index]

    def __str__(self) -> str:
        return detokenize(self)

    def replace_tokens(self, tokens: Iterable[str]) -> "TokenSequence":
        return TokenSequence(self.kind, tuple(tokens))

    def validate(self) -> "TokenSequence":
        alphabet = self.alphabet
        for tok in self.tokens:
            if not alphabet.admits(tok):
                raise InvalidToken(tok, self.kind)
        return self


def tokenize_protein(raw: str) -> TokenSequence:
    tokens = []
    for i, ch in enumerate(raw):
        up = ch.upper()
        if up not in PROTEIN.tokens:
            raise InvalidResidue(i, ch)
        tokens.append(up)
    return TokenSequence(AlphabetKind.PROTEIN, tuple(tokens))


def tokenize_smiles(raw: str) -> TokenSequence:
    """Split a SMILES string into regex tokens.

    The tokens must tile ``raw`` exactly; any character the pattern skips
    (whitespace, stray ``]``, unknown letters) raises :class:`TokenizationGap`.
    """
    tokens = []
    pos = 0
    for match in _SMILES_RE.finditer(raw):
        if match.start() != pos:
            raise TokenizationGap(pos, raw)
        tokens.append(match.group(0))
        pos = match.end()
    if pos != len(raw):
        raise TokenizationGap(pos, raw)
    return TokenSequence(AlphabetKind.SMILES, tuple(tokens))


def tokenize(raw: str, kind: AlphabetKind | str | Alphabet) -> TokenSequence:
    alphabet = get_alphabet(kind)
    if alphabet.kind is AlphabetKind.PROTEIN:
        return tokenize_protein(raw)
    return tokenize_smiles(raw)


def detokenize(seq: TokenSequence | Sequence[str]) -> str:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    return "".join(tokens)


def lint_protein(seq: TokenSequence) -> list[int]:
    """Positions holding the non-canonical residue ``X``."""
    return [i for i, tok in enumerate(seq.tokens) if tok == UNKNOWN_RESIDUE]


def require_same_kind(a: TokenSequence, b: TokenSequence) -> AlphabetKind:
    if a.kind is not b.kind:
        raise AlphabetMismatch(a.kind, b.kind)
    return a.kind
