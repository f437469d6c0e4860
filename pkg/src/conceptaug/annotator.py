"""Dictionary concept annotator and token/concept alignment.

The annotator is a deterministic stand-in for an external clinical concept
extractor: greedy, leftmost-first, longest-match lookup of dictionary phrases
over the preprocessed token sequence.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import MAX_TOKENS, Document, _has_alpha
from .ontology import Dictionary, LabelSpace

log = logging.getLogger(__name__)


class Annotation(NamedTuple):
    start: int
    end: int  # exclusive
    code: str

    @property
    def length(self) -> int:
        return self.end - self.start


def annotate(tokens: Sequence[str] | Document, dictionary: Dictionary) -> list[Annotation]:
    if isinstance(tokens, Document):
        tokens = tokens.tokens
    out = []
    n, i = len(tokens), 0
    max_len = dictionary.max_len
    while i < n:
        for span in range(min(max_len, n - i), 0, -1):
            codes = dictionary.entries.get(tuple(tokens[i:i + span]))
            if codes:
                out.extend(Annotation(i, i + span, c) for c in codes)
                i += span
                break
        else:
            i += 1
    return out


@dataclass
class TokenConceptAlignment:
    concept_sets: list[tuple[str, ...]]  # every code covering token n, in emission order
    selected: list[str | None]  # first covering code, or None

    def __len__(self):
        return len(self.selected)

    @property
    def matched(self) -> np.ndarray:
        return np.array([c is not None for c in self.selected], dtype=bool)


def align(n_tokens: int | Document, annotations: Iterable[Annotation]) -> TokenConceptAlignment:
    if isinstance(n_tokens, Document):
        n_tokens = len(n_tokens.tokens)
    sets: list[list[str]] = [[] for _ in range(n_tokens)]
    for a in annotations:
        if not 0 <= a.start < a.end <= n_tokens:
            raise ValueError(f"annotation span [{a.start}, {a.end}) outside document of {n_tokens} tokens")
        for t in range(a.start, a.end):
            if a.code not in sets[t]:
                sets[t].append(a.code)
    return TokenConceptAlignment(
        concept_sets=[tuple(s) for s in sets],
        selected=[s[0] if s else None for s in sets],
    )


def raw_codes_predict(annotations: Iterable[Annotation | str], label_space: LabelSpace) -> np.ndarray:
    """Binary document-level prediction: 1 for each label code the annotator emitted."""
    y = np.zeros(len(label_space), dtype=np.int8)
    for a in annotations:
        code = a if isinstance(a, str) else a.code
        i = label_space.index.get(code)
        if i is not None:
            y[i] = 1
    return y


def _token_char_spans(text: str):
    return [(m.start(), m.end(), m.group()) for m in re.finditer(r"\S+", text)]


def map_char_spans(text: str, spans: Iterable[tuple[int, int, str]]) -> tuple[list[Annotation], int]:
    """Map character-offset annotations onto preprocessed token indices.

    Returns the mapped annotations and the number discarded because none of
    their tokens survived preprocessing.
    """
    surviving = []  # (char_start, char_end, token_index)
    for s, e, tok in _token_char_spans(text):
        if _has_alpha(tok.lower()):
            if len(surviving) == MAX_TOKENS:
                break
            surviving.append((s, e, len(surviving)))
    out, dropped = [], 0
    for b, e, code in spans:
        if not (0 <= b < e <= len(text)):
            raise ValueError(f"character span [{b}, {e}) outside text of length {len(text)}")
        idx = [i for s, t, i in surviving if s < e and b < t]
        if idx:
            out.append(Annotation(idx[0], idx[-1] + 1, code))
        else:
            dropped += 1
    return out, dropped


def import_external_annotations(path, doc: Document) -> list[Annotation]:
    """Read character-offset annotations for ``doc`` from a JSONL export."""
    spans = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if str(obj["doc_id"]) != doc.doc_id:
                continue
            spans.extend((int(s["begin_char"]), int(s["end_char"]), str(s["code"])) for s in obj["spans"])
    if not spans:
        return []
    if doc.text is None:
        raise ValueError(f"document {doc.doc_id!r} has no raw text to map character offsets onto")
    anns, dropped = map_char_spans(doc.text, spans)
    if dropped:
        log.warning("%s: discarded %d annotation(s) with no surviving tokens", doc.doc_id, dropped)
    return anns


# --- annotations.jsonl -----------------------------------------------------

def write_annotations(docs: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            spans = [{"start": a.start, "end": a.end, "code": a.code} for a in d.annotations or []]
            fh.write(json.dumps({"doc_id": d.doc_id, "spans": spans}) + "\n")


def read_annotations(path) -> dict[str, list[Annotation]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[str(obj["doc_id"])] = [Annotation(int(s["start"]), int(s["end"]), str(s["code"]))
                                           for s in obj["spans"]]
    return out


def attach_annotations(docs: Iterable[Document], annotations: dict[str, list[Annotation]]) -> None:
    for d in docs:
        anns = annotations.get(d.doc_id, [])
        align(len(d.tokens), anns)  # validates spans
        d.annotations = anns
