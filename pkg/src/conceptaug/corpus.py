"""Documents, preprocessing, vocabularies and patient-disjoint splits."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_TOKENS = 2500
PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class CorpusError(ValueError):
    pass


@dataclass
class Document:
    doc_id: str
    patient_id: str
    tokens: list[str]
    labels: set[str] = field(default_factory=set)
    annotations: list | None = None
    # raw text is kept only when the document was loaded from raw form; it is
    # needed to map character-offset annotations onto tokens
    text: str | None = None

    def __len__(self):
        return len(self.tokens)


def _has_alpha(tok: str) -> bool:
    return any(ch.isalpha() for ch in tok)


def preprocess(raw_text: str) -> list[str]:
    """Whitespace-split, lowercase, drop tokens without letters, truncate."""
    out = []
    for tok in raw_text.split():
        tok = tok.lower()
        if _has_alpha(tok):
            out.append(tok)
            if len(out) == MAX_TOKENS:
                break
    return out


class Vocabulary:
    """Dense string -> index map with PAD at 0 and UNK at 1.

    Entries are sorted lexicographically before indices are assigned so the
    mapping does not depend on document order or hashing.
    """

    def __init__(self, entries: Iterable[str], min_df: int = 3):
        self.min_df = min_df
        self.itos = [PAD_TOKEN, UNK_TOKEN] + sorted(set(entries))
        self.stoi = {s: i for i, s in enumerate(self.itos) if i > 1}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, item):
        return item in self.stoi

    def index(self, item: str) -> int:
        return self.stoi.get(item, UNK)

    def encode(self, items: Sequence[str]) -> list[int]:
        return [self.stoi.get(s, UNK) for s in items]

    def entries(self) -> list[str]:
        return self.itos[2:]

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"min_df": self.min_df, "entries": self.entries()}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["entries"], min_df=d["min_df"])


def document_frequencies(item_sets: Iterable[Iterable[str]]) -> Counter:
    df: Counter = Counter()
    for items in item_sets:
        df.update(set(items))
    return df


def build_vocabulary(train_docs: Sequence[Document], min_df: int = 3) -> Vocabulary:
    if not train_docs:
        raise CorpusError("empty corpus")
    df = document_frequencies(d.tokens for d in train_docs)
    return Vocabulary((t for t, n in df.items() if n >= min_df), min_df=min_df)


@dataclass
class CorpusSplit:
    train: list[str]
    dev: list[str]
    test: list[str]

    def as_dict(self) -> dict:
        return {"train": list(self.train), "dev": list(self.dev), "test": list(self.test)}

    def parts(self):
        return {"train": self.train, "dev": self.dev, "test": self.test}


def split_by_patient(docs: Sequence[Document], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusSplit:
    """Assign whole patients to train/dev/test.

    Patients are sorted by id, shuffled with ``seed``, and then dealt out in
    order: a patient goes to the first split whose cumulative document target
    ``round(cumsum(ratios) * n_docs)`` has not yet been reached.
    """
    ratios = np.asarray(ratios, dtype=float)
    if len(ratios) != 3 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise CorpusError(f"ratios must be three non-negative numbers summing to 1, got {ratios.tolist()}")
    by_patient: dict[str, list[str]] = defaultdict(list)
    for d in docs:
        by_patient[d.patient_id].append(d.doc_id)
    patients = sorted(by_patient)
    if len(patients) < len(ratios):
        raise CorpusError(f"{len(patients)} distinct patients cannot fill {len(ratios)} splits")

    order = np.random.default_rng(seed).permutation(len(patients))
    bounds = np.round(np.cumsum(ratios) * len(docs)).astype(int)
    parts: list[list[str]] = [[], [], []]
    assigned = 0
    for pi in order:
        j = int(np.searchsorted(bounds, assigned, side="right"))
        j = min(j, 2)
        ids = by_patient[patients[pi]]
        parts[j].extend(ids)
        assigned += len(ids)
    return CorpusSplit(*parts)


def coverage_stats(docs: Sequence[Document]) -> dict:
    """Annotation statistics in the layout of a concept-extraction report."""
    total = 0
    fractions, lengths, per_doc = [], [], []
    for d in docs:
        anns = d.annotations or []
        total += len(anns)
        per_doc.append(len(anns))
        lengths.append(len(d.tokens))
        if d.tokens:
            covered = np.zeros(len(d.tokens), dtype=bool)
            for a in anns:
                covered[a.start:a.end] = True
            fractions.append(covered.mean())
    return {
        "n_documents": len(docs),
        "total_concepts": total,
        "mean_concepts_per_document": float(np.mean(per_doc)) if per_doc else 0.0,
        "mean_fraction_tokens_annotated": float(np.mean(fractions)) if fractions else 0.0,
        "mean_tokens_per_document": float(np.mean(lengths)) if lengths else 0.0,
    }


def phrases_per_concept(docs: Sequence[Document]) -> dict[str, int]:
    """Number of distinct surface phrases annotated with each code."""
    phrases: dict[str, set] = defaultdict(set)
    for d in docs:
        for a in d.annotations or []:
            phrases[a.code].add(tuple(d.tokens[a.start:a.end]))
    return {code: len(p) for code, p in sorted(phrases.items())}


# --- I/O -------------------------------------------------------------------

def read_documents(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if "tokens" in obj:
                tokens = [t for t in obj["tokens"]]
                text = obj.get("text")
            elif "text" in obj:
                text = obj["text"]
                tokens = preprocess(text)
            else:
                raise CorpusError(f"{path}:{lineno}: document needs 'text' or 'tokens'")
            if not tokens:
                raise CorpusError(f"{path}:{lineno}: empty document {obj.get('doc_id')!r}")
            docs.append(Document(
                doc_id=str(obj["doc_id"]),
                patient_id=str(obj.get("patient_id", obj["doc_id"])),
                tokens=tokens,
                labels=set(obj.get("labels", [])),
                text=text,
            ))
    return docs


def write_documents(docs: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            obj = {"doc_id": d.doc_id, "patient_id": d.patient_id,
                   "tokens": d.tokens, "labels": sorted(d.labels)}
            fh.write(json.dumps(obj) + "\n")


def read_split(path) -> CorpusSplit:
    obj = json.loads(Path(path).read_text())
    return CorpusSplit(obj["train"], obj["dev"], obj["test"])


def write_split(split: CorpusSplit, path) -> None:
    Path(path).write_text(json.dumps(split.as_dict()) + "\n")


def select(docs: Sequence[Document], ids: Iterable[str]) -> list[Document]:
    by_id = {d.doc_id: d for d in docs}
    return [by_id[i] for i in ids]
