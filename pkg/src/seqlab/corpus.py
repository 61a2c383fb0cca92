"""Data model and file IO for labeled token sequences.

The on-disk corpus format is the same for every task: UTF-8 text with one
token per line as ``token<TAB>[aux<TAB>]label``, a blank line closing each
sentence.  "Character" throughout the package means one Unicode scalar
value, so Chinese text is never split inside a code point.

Also provides the tagging-scheme conversions: word segmentation to and from
per-character B/I/E/S tags, and entity spans to and from BIO / BIOES
position tags.  The decoding directions are total: an ill-formed tag
sequence is repaired deterministically (a tag inconsistent with its left
context starts a new segment; dangling segments close at the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

BIES_TAGS = ("B", "I", "E", "S")
SCHEMES = ("BIO", "BIOES")


class CorpusFormatError(ValueError):
    """A corpus file violated the column format."""


@dataclass(frozen=True)
class Sentence:
    """One labeled (or unlabeled) token sequence.

    Tokens are characters for segmentation and words otherwise.  ``aux_tags``
    carries an auxiliary per-token column when present (e.g. the POS column
    of an entity-recognition corpus).
    """

    tokens: tuple[str, ...]
    gold_labels: tuple[str, ...] | None = None
    aux_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("sentence must contain at least one token")
        for name in ("gold_labels", "aux_tags"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(val)
                object.__setattr__(self, name, val)
                if len(val) != len(self.tokens):
                    raise ValueError(
                        f"{name} has {len(val)} entries for {len(self.tokens)} tokens"
                    )

    def __len__(self):
        return len(self.tokens)


class LabelAlphabet:
    """Immutable bijection between label strings and integers in [0, L)."""

    def __init__(self, labels):
        seen = {}
        for lab in labels:
            if lab not in seen:
                seen[lab] = len(seen)
        self._labels = tuple(seen)
        self._index = seen

    @classmethod
    def from_sentences(cls, sentences) -> "LabelAlphabet":
        def iter_labels():
            for s in sentences:
                if s.gold_labels is None:
                    raise ValueError("cannot build a label alphabet from unlabeled sentences")
                yield from s.gold_labels

        return cls(iter_labels())

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def to_index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"unknown label {label!r}") from None

    def from_index(self, i: int) -> str:
        return self._labels[i]

    def __contains__(self, label):
        return label in self._index

    def __len__(self):
        return len(self._labels)

    def __eq__(self, other):
        return isinstance(other, LabelAlphabet) and self._labels == other._labels


@dataclass(frozen=True)
class SpanAnnotation:
    """Half-open token span [start, end) of a given kind."""

    start: int
    end: int
    kind: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")


# ---------------------------------------------------------------------------
# column corpus IO
# ---------------------------------------------------------------------------

_COLUMN_NAMES = frozenset(("token", "aux", "label"))


def _check_columns(columns):
    columns = tuple(columns)
    if "token" not in columns:
        raise ValueError("column spec must include 'token'")
    bad = set(columns) - _COLUMN_NAMES
    if bad:
        raise ValueError(f"unknown column names: {sorted(bad)}")
    if len(set(columns)) != len(columns):
        raise ValueError("duplicate column names in spec")
    return columns


def read_column_corpus(path, columns=("token", "label")) -> list[Sentence]:
    """Read a column-format corpus file.

    ``columns`` names each tab-separated column; it must include ``token``
    and may include ``aux`` and ``label``.  Trailing whitespace and the
    presence of a final newline are ignored.  A line with the wrong column
    count raises :class:`CorpusFormatError` naming the line number.
    An empty file yields an empty list.
    """
    columns = _check_columns(columns)
    sentences = []
    rows: list[list[str]] = []

    def flush():
        if not rows:
            return
        fields = {name: [] for name in columns}
        for row in rows:
            for name, value in zip(columns, row):
                fields[name].append(value)
        sentences.append(
            Sentence(
                tokens=fields["token"],
                gold_labels=fields.get("label"),
                aux_tags=fields.get("aux"),
            )
        )
        rows.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip()
            if not line:
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != len(columns):
                raise CorpusFormatError(
                    f"{path}: line {lineno}: expected {len(columns)} columns, got {len(parts)}"
                )
            if not parts[0]:
                raise CorpusFormatError(f"{path}: line {lineno}: empty token")
            rows.append(parts)
    flush()
    return sentences


def write_column_corpus(path, sentences, columns=("token", "label")) -> None:
    """Write sentences in the column format read by :func:`read_column_corpus`.

    Sentences are separated by exactly one blank line; the file ends with a
    single newline after the last token line.
    """
    columns = _check_columns(columns)
    blocks = []
    for sent in sentences:
        fields = {
            "token": sent.tokens,
            "aux": sent.aux_tags,
            "label": sent.gold_labels,
        }
        for name in columns:
            if fields[name] is None:
                raise ValueError(f"sentence lacks required column {name!r}")
        lines = [
            "\t".join(fields[name][i] for name in columns)
            for i in range(len(sent))
        ]
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + ("\n" if blocks else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# segmentation <-> BIES
# ---------------------------------------------------------------------------


def segmentation_to_bies(words) -> tuple[list[str], list[str]]:
    """Turn a word list into (characters, B/I/E/S tags)."""
    tokens: list[str] = []
    labels: list[str] = []
    for word in words:
        if not word:
            raise ValueError("empty word in segmentation")
        chars = list(word)
        tokens.extend(chars)
        if len(chars) == 1:
            labels.append("S")
        else:
            labels.append("B")
            labels.extend("I" * (len(chars) - 2))
            labels.append("E")
    return tokens, labels


def _bies_word_bounds(labels) -> list[tuple[int, int]]:
    # Repair walk: B/S start a word (closing any open one), an orphan I opens,
    # an orphan E closes as a single character, open words close at the end.
    bounds: list[tuple[int, int]] = []
    start = None
    for t, lab in enumerate(labels):
        if lab == "B":
            if start is not None:
                bounds.append((start, t))
            start = t
        elif lab == "S":
            if start is not None:
                bounds.append((start, t))
            bounds.append((t, t + 1))
            start = None
        elif lab == "I":
            if start is None:
                start = t
        elif lab == "E":
            if start is None:
                start = t
            bounds.append((start, t + 1))
            start = None
        else:
            raise ValueError(f"not a BIES tag: {lab!r}")
    if start is not None:
        bounds.append((start, len(labels)))
    return bounds


def bies_to_segmentation(tokens, labels) -> list[str]:
    """Inverse of :func:`segmentation_to_bies`, total via deterministic repair."""
    if len(tokens) != len(labels):
        raise ValueError(f"{len(tokens)} tokens vs {len(labels)} labels")
    return ["".join(tokens[a:b]) for a, b in _bies_word_bounds(labels)]


def bies_word_spans(labels) -> list[SpanAnnotation]:
    """Word boundaries of a BIES tag sequence as WORD spans (repaired)."""
    return [SpanAnnotation(a, b, "WORD") for a, b in _bies_word_bounds(labels)]


# ---------------------------------------------------------------------------
# entity spans <-> position tags
# ---------------------------------------------------------------------------


def spans_to_position_tags(n: int, spans, scheme: str) -> list[str]:
    """Encode non-overlapping spans over ``n`` tokens as BIO or BIOES tags."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ordered = sorted(spans, key=lambda s: s.start)
    prev_end = 0
    for span in ordered:
        if span.start < prev_end:
            raise ValueError(f"overlapping spans at token {span.start}")
        if span.end > n:
            raise ValueError(f"span ({span.start}, {span.end}) exceeds length {n}")
        prev_end = span.end
    tags = ["O"] * n
    for span in ordered:
        if scheme == "BIOES" and span.end - span.start == 1:
            tags[span.start] = f"S-{span.kind}"
            continue
        tags[span.start] = f"B-{span.kind}"
        for t in range(span.start + 1, span.end):
            tags[t] = f"I-{span.kind}"
        if scheme == "BIOES":
            tags[span.end - 1] = f"E-{span.kind}"
    return tags


def _parse_position_tag(label):
    if label == "O":
        return "O", None
    head, _, kind = label.partition("-")
    if head in ("B", "I", "E", "S") and kind:
        return head, kind
    # anything outside the scheme grammar is treated as outside
    return "O", None


def position_tags_to_spans(labels, scheme: str = "BIO") -> list[SpanAnnotation]:
    """Decode position tags into spans; never fails on ill-formed input.

    Repair rule: an I without a matching open segment opens one; a segment
    left open at an O, at a differently-typed tag, or at the sequence end is
    closed there.  The decoder accepts the union of the BIO and BIOES tag
    alphabets regardless of ``scheme``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    labels = list(labels)
    spans: list[SpanAnnotation] = []
    open_start = None
    open_kind = None

    def close(end):
        nonlocal open_start, open_kind
        if open_start is not None:
            spans.append(SpanAnnotation(open_start, end, open_kind))
            open_start = open_kind = None

    for t, label in enumerate(labels):
        head, kind = _parse_position_tag(label)
        if head == "O":
            close(t)
        elif head == "B":
            close(t)
            open_start, open_kind = t, kind
        elif head == "S":
            close(t)
            spans.append(SpanAnnotation(t, t + 1, kind))
        elif head == "I":
            if open_kind != kind:
                close(t)
                open_start, open_kind = t, kind
        elif head == "E":
            if open_kind == kind:
                spans.append(SpanAnnotation(open_start, t + 1, kind))
                open_start = open_kind = None
            else:
                close(t)
                spans.append(SpanAnnotation(t, t + 1, kind))
    close(len(labels))
    return spans
