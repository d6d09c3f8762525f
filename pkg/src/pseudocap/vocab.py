"""Retrieval vocabulary: noun and adjective token lists.

Token files are UTF-8, one token per line, '#' comments and blank lines
ignored. Tokens are lowercased, deduplicated, and kept in sorted order so
downstream tie-breaking is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import FormatError, InvalidVocabularyError

# Paper-scale vocabulary sizes (class-name nouns, adjective list).
FULL_SCALE_NOUN_COUNT = 169
FULL_SCALE_ADJECTIVE_COUNT = 1463


@dataclass(frozen=True)
class Vocabulary:
    nouns: tuple[str, ...]
    adjectives: tuple[str, ...]
    source: str = ""

    def __post_init__(self):
        for name, tokens in (("nouns", self.nouns), ("adjectives", self.adjectives)):
            if not tokens:
                raise InvalidVocabularyError(f"{name} list is empty")
            if list(tokens) != sorted(set(tokens)):
                raise InvalidVocabularyError(f"{name} list is not sorted and unique")


def normalize_tokens(tokens: Iterable[str]) -> list[str]:
    """Lowercase, trim, dedupe, sort. Drops empties."""
    return sorted({t.strip().lower() for t in tokens if t.strip()})


def _read_token_file(path) -> list[str]:
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if any(ch.isspace() for ch in line):
                raise FormatError(f"token {line!r} contains whitespace",
                                  path=path, line=lineno)
            tokens.append(line.lower())
    return sorted(set(tokens))


def load_vocabulary(nouns_path, adjectives_path) -> Vocabulary:
    nouns = _read_token_file(nouns_path)
    adjectives = _read_token_file(adjectives_path)
    if not nouns:
        raise InvalidVocabularyError(f"no nouns found in {nouns_path}")
    if not adjectives:
        raise InvalidVocabularyError(f"no adjectives found in {adjectives_path}")
    return Vocabulary(tuple(nouns), tuple(adjectives),
                      source=f"{nouns_path}|{adjectives_path}")


def save_vocabulary(vocab: Vocabulary, nouns_path, adjectives_path) -> None:
    for path, tokens in ((nouns_path, vocab.nouns), (adjectives_path, vocab.adjectives)):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in tokens:
                fh.write(tok + "\n")


def load_allowlist(path) -> frozenset[str]:
    return frozenset(_read_token_file(path))


def build_adjectives(raw_tokens: Iterable[str],
                     pos_filter: Callable[[str], bool] | None = None,
                     allowlist: frozenset[str] | None = None) -> list[str]:
    """Filter raw tokens down to adjectives.

    ``pos_filter`` is any predicate token -> bool; when absent, membership
    in ``allowlist`` is used instead (the bundled fallback for environments
    without a part-of-speech tagger).
    """
    if pos_filter is None:
        if allowlist is None:
            raise InvalidVocabularyError("need a pos_filter or an allowlist")
        pos_filter = allowlist.__contains__
    return [t for t in normalize_tokens(raw_tokens) if pos_filter(t)]
