"""Tweet dataset parsing, tokenization, padding, and stratified CV folds.

Dataset files are UTF-8 TSV, one tweet per line, LF endings:

    labeled    id<TAB>label<TAB>text      label in {1, 2, 3}
    unlabeled  id<TAB>text

Text may contain any character except TAB and LF. Class meanings: 1 =
personal intake, 2 = possible intake, 3 = no intake.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DataError
from .rng import Rng

CLASSES = (1, 2, 3)
DOC_LEN = 47

# Reserved padding token. The tokenizer lowercases everything, so no real
# token can ever equal this uppercase string.
PAD = "<PAD>"

_PUNCT = frozenset(string.punctuation)
_KEEP_WHOLE_PREFIXES = ("@", "#", "http://", "https://", "www.")


@dataclass(frozen=True)
class Example:
    """One tweet: stable id, raw text, and a gold label when annotated."""

    id: str
    text: str
    label: Optional[int] = None


@dataclass(frozen=True)
class TokenSeq:
    """Fixed-length token sequence; positions >= real_length are PAD."""

    tokens: tuple
    real_length: int


@dataclass(frozen=True)
class FoldAssignment:
    """fold_of[i] is the fold (0..k-1) holding example i out."""

    fold_of: tuple
    k: int
    seed: int


def tokenize(text: str) -> list:
    """Deterministic rule-based tokenizer.

    Lowercase, split on whitespace, then detach leading/trailing ASCII
    punctuation into single-character tokens. Tokens starting with ``@``,
    ``#``, ``http://``, ``https://`` or ``www.`` are kept whole. Stopwords
    are retained.
    """
    tokens = []
    for raw in text.lower().split():
        if raw.startswith(_KEEP_WHOLE_PREFIXES):
            tokens.append(raw)
            continue
        i, j = 0, len(raw)
        while i < j and raw[i] in _PUNCT:
            i += 1
        while j > i and raw[j - 1] in _PUNCT:
            j -= 1
        tokens.extend(raw[:i])
        if j > i:
            tokens.append(raw[i:j])
        tokens.extend(raw[j:])
    return tokens


def pad_or_truncate(tokens: Sequence[str], length: int = DOC_LEN) -> TokenSeq:
    """Clip to ``length`` tokens or right-pad with PAD up to it.

    Idempotent: trailing PAD in the input does not count toward real_length.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    toks = list(tokens[:length])
    n = len(toks)
    while n > 0 and toks[n - 1] == PAD:
        n -= 1
    if PAD in toks[:n]:
        raise ValueError("PAD token inside the real token span")
    return TokenSeq(tuple(toks[:n]) + (PAD,) * (length - n), n)


def to_token_seqs(examples: Sequence[Example], length: int = DOC_LEN) -> list:
    return [pad_or_truncate(tokenize(ex.text), length) for ex in examples]


def parse_dataset(path, labeled: bool = True) -> list:
    """Read a dataset TSV; returns Examples in file order.

    Raises DataError (with the 1-based line number) for a wrong field count,
    a label outside {1,2,3}, or a duplicate id.
    """
    examples = []
    seen_ids = set()
    expected = 3 if labeled else 2
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != expected:
                raise DataError(
                    f"{path}: expected {expected} tab-separated fields "
                    f"at line {lineno}, got {len(parts)}"
                )
            ex_id = parts[0]
            if not ex_id:
                raise DataError(f"{path}: empty id at line {lineno}")
            if ex_id in seen_ids:
                raise DataError(f"{path}: duplicate id {ex_id!r} at line {lineno}")
            seen_ids.add(ex_id)
            if labeled:
                try:
                    label = int(parts[1])
                except ValueError:
                    raise DataError(
                        f"{path}: invalid label {parts[1]!r} at line {lineno}"
                    ) from None
                if label not in CLASSES:
                    raise DataError(f"{path}: label out of range at line {lineno}")
                examples.append(Example(ex_id, parts[2], label))
            else:
                examples.append(Example(ex_id, parts[1]))
    return examples


def write_dataset(examples: Sequence[Example], path) -> None:
    """Inverse of parse_dataset. All examples must be uniformly labeled or
    uniformly unlabeled; ids and text must not contain TAB or LF."""
    labeled_flags = {ex.label is not None for ex in examples}
    if len(labeled_flags) > 1:
        raise DataError("cannot mix labeled and unlabeled examples in one file")
    for ex in examples:
        for field_name, value in (("id", ex.id), ("text", ex.text)):
            if "\t" in value or "\n" in value:
                raise DataError(
                    f"example {ex.id!r}: {field_name} contains TAB or newline"
                )
    lines = []
    for ex in examples:
        if ex.label is None:
            lines.append(f"{ex.id}\t{ex.text}\n")
        else:
            lines.append(f"{ex.id}\t{ex.label}\t{ex.text}\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)


def stratified_kfold(examples: Sequence[Example], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Deterministic stratified k-fold assignment.

    Within each class, indices are shuffled by a seed-derived substream and
    dealt round-robin to folds, so per-class per-fold counts differ by at
    most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    by_class: dict = {}
    for idx, ex in enumerate(examples):
        if ex.label is None:
            raise DataError(f"example {ex.id!r} has no label; folds need labels")
        by_class.setdefault(ex.label, []).append(idx)

    fold_of = [0] * len(examples)
    for label in sorted(by_class):
        indices = by_class[label]
        if len(indices) < k:
            raise DataError(
                f"class {label} has {len(indices)} examples, fewer than k={k}"
            )
        perm = Rng(seed).substream("fold", label).permutation(len(indices))
        for pos, which in enumerate(perm):
            fold_of[indices[which]] = pos % k
    return FoldAssignment(tuple(fold_of), k, seed)
