"""Code hierarchies, surface-phrase dictionaries, concept vocabulary, label space."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Vocabulary, document_frequencies, preprocess

ROOT_MARK = "-"


class OntologyError(ValueError):
    def __init__(self, msg, code=None):
        super().__init__(msg)
        self.code = code


class Ontology:
    """Tree-shaped code hierarchy stored as a child -> parent map."""

    def __init__(self, parents: dict[str, str | None] | None = None):
        self.parent: dict[str, str | None] = dict(parents or {})
        self._validate()

    def _validate(self):
        for child, par in self.parent.items():
            if par is not None and par not in self.parent:
                raise OntologyError(f"dangling parent {par!r} of {child!r}", child)
        state: dict[str, int] = {}
        for code in self.parent:
            path = []
            c = code
            while c is not None and state.get(c) != 2:
                if state.get(c) == 1:
                    raise OntologyError(f"cycle through {c!r}", c)
                state[c] = 1
                path.append(c)
                c = self.parent[c]
            for p in path:
                state[p] = 2

    @property
    def codes(self) -> set[str]:
        return set(self.parent)

    def __contains__(self, code):
        return code in self.parent

    def __len__(self):
        return len(self.parent)

    def ancestors(self, code: str) -> list[str]:
        """``[code, parent, grandparent, ..., root]``."""
        if code not in self.parent:
            raise KeyError(f"unknown code {code!r}")
        chain = [code]
        while (p := self.parent[chain[-1]]) is not None:
            chain.append(p)
        return chain

    def depth(self, code: str) -> int:
        return len(self.ancestors(code)) - 1

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {c: [] for c in self.parent}
        for c, p in self.parent.items():
            if p is not None:
                out[p].append(c)
        return out

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for c, p in self.parent.items():
                fh.write(f"{c}\t{p if p is not None else ROOT_MARK}\n")


def load_ontology(path) -> Ontology:
    parents: dict[str, str | None] = {}
    lines: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise OntologyError(f"{path}:{lineno}: expected 'child<TAB>parent', got {line!r}")
            child, par = cols
            if child in parents:
                raise OntologyError(f"{path}:{lineno}: {child!r} already defined on line {lines[child]}")
            parents[child] = None if par == ROOT_MARK else par
            lines[child] = lineno
    for child, par in parents.items():
        if par is not None and par not in parents:
            raise OntologyError(f"{path}:{lines[child]}: dangling parent {par!r}")
    try:
        return Ontology(parents)
    except OntologyError as e:
        raise OntologyError(f"{path}:{lines[e.code]}: {e}", e.code) from None


class Dictionary:
    """Maps preprocessed phrases (token tuples) to codes in file order."""

    def __init__(self):
        self.entries: dict[tuple[str, ...], list[str]] = {}
        self.max_len = 0

    def add(self, phrase: Sequence[str], code: str) -> None:
        phrase = tuple(phrase)
        if not phrase:
            raise OntologyError("empty phrase")
        codes = self.entries.setdefault(phrase, [])
        if code not in codes:
            codes.append(code)
        self.max_len = max(self.max_len, len(phrase))

    def get(self, phrase: Sequence[str]) -> list[str]:
        return self.entries.get(tuple(phrase), [])

    def __contains__(self, phrase):
        return tuple(phrase) in self.entries

    def __len__(self):
        return len(self.entries)

    def codes(self) -> set[str]:
        return {c for cs in self.entries.values() for c in cs}

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for phrase, codes in self.entries.items():
                for c in codes:
                    fh.write(f"{' '.join(phrase)}\t{c}\n")


def load_dictionary(path, ontology: Ontology | None = None) -> Dictionary:
    d = Dictionary()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[1]:
                raise OntologyError(f"{path}:{lineno}: expected 'phrase<TAB>code', got {line!r}")
            phrase = preprocess(cols[0])
            if not phrase:
                raise OntologyError(f"{path}:{lineno}: phrase {cols[0]!r} is empty after preprocessing")
            if ontology is not None and cols[1] not in ontology:
                raise OntologyError(f"{path}:{lineno}: code {cols[1]!r} not in ontology")
            d.add(phrase, cols[1])
    return d


def build_concept_vocabulary(code_sets: Iterable[Iterable[str]], ontology: Ontology | None = None,
                             min_df: int = 3) -> Vocabulary:
    """Codes annotated in at least ``min_df`` training documents, plus all of their ancestors."""
    df = document_frequencies(code_sets)
    kept = {c for c, n in df.items() if n >= min_df}
    if ontology is not None:
        for c in list(kept):
            if c in ontology:
                kept.update(ontology.ancestors(c))
    return Vocabulary(kept, min_df=min_df)


class LabelSpace:
    def __init__(self, codes: Sequence[str]):
        codes = list(codes)
        seen = set()
        for c in codes:
            if c in seen:
                raise OntologyError(f"duplicate label {c!r}")
            seen.add(c)
        self.codes = codes
        self.index = {c: i for i, c in enumerate(codes)}

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self.index

    def __iter__(self):
        return iter(self.codes)

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        y = np.zeros(len(self.codes), dtype=np.float32)
        for c in labels:
            i = self.index.get(c)
            if i is not None:
                y[i] = 1.0
        return y

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode()).hexdigest()[:16]

    def dump(self, path) -> None:
        Path(path).write_text("".join(c + "\n" for c in self.codes), encoding="utf-8")


def load_labels(path) -> LabelSpace:
    codes = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    return LabelSpace(codes)
