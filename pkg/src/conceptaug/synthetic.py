"""Synthetic concept-annotated corpora with controllable annotation statistics.

Documents mix Zipf-distributed filler words with mentions of leaf concepts.
Each concept owns a fixed number of distinct surface phrases ("variants");
annotation coverage, label signal and how often the dictionary maps a phrase
to the parent code instead of the concept itself are all knobs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotator import Annotation, annotate, write_annotations
from .corpus import MAX_TOKENS, CorpusSplit, Document, write_documents, write_split
from .ontology import Dictionary, LabelSpace, Ontology


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    vocab_size: int = 500
    concept_count: int = 40
    label_count: int = 20
    docs_per_split: tuple[int, int, int] = (400, 100, 100)
    mean_doc_length: int = 60
    coverage: float = 0.35
    # int: every concept gets that many phrases; dict {n_variants: weight}:
    # concepts are allotted in exact proportion (largest remainder)
    variants_per_concept: int | dict[int, float] = 1
    label_signal: float = 1.0
    specificity_mismatch: float = 0.0
    seed: int = 0
    label_mode: str = "noisy_or"  # or "codes": labels are the gold leaf codes mentioned
    triggers_per_label: int = 2
    concepts_per_doc: float = 3.0
    multiword_rate: float = 0.2
    group_size: int = 5
    docs_per_patient: int = 2
    min_doc_length: int = 5

    def validate(self):
        counts = dict(vocab_size=self.vocab_size, concept_count=self.concept_count,
                      label_count=self.label_count, mean_doc_length=self.mean_doc_length,
                      triggers_per_label=self.triggers_per_label, group_size=self.group_size,
                      docs_per_patient=self.docs_per_patient, min_doc_length=self.min_doc_length)
        for name, v in counts.items():
            if v <= 0:
                raise SyntheticSpecError(f"{name} must be positive, got {v}")
        if any(n <= 0 for n in self.docs_per_split) or len(self.docs_per_split) != 3:
            raise SyntheticSpecError(f"docs_per_split must be three positive counts, got {self.docs_per_split}")
        for name in ("coverage", "label_signal", "specificity_mismatch", "multiword_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SyntheticSpecError(f"{name} must lie in [0, 1], got {v}")
        if self.label_mode not in ("noisy_or", "codes"):
            raise SyntheticSpecError(f"unknown label_mode {self.label_mode!r}")
        if self.triggers_per_label > self.concept_count:
            raise SyntheticSpecError("triggers_per_label exceeds concept_count")
        if self.concepts_per_doc < 1:
            raise SyntheticSpecError("concepts_per_doc must be at least 1")
        if self.coverage > 0 and self.coverage * self.mean_doc_length < 1:
            raise SyntheticSpecError(
                f"coverage {self.coverage} unreachable: {self.coverage} * mean_doc_length "
                f"{self.mean_doc_length} < 1 annotated token per document")
        if self.coverage < 1 and self.vocab_size < 1:
            raise SyntheticSpecError("filler vocabulary is empty")
        variant_counts(self)  # raises on bad distributions

    def to_json(self) -> str:
        d = asdict(self)
        if isinstance(self.variants_per_concept, dict):
            d["variants_per_concept"] = {str(k): v for k, v in self.variants_per_concept.items()}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        v = d.get("variants_per_concept")
        if isinstance(v, dict):
            d["variants_per_concept"] = {int(k): float(w) for k, w in v.items()}
        if "docs_per_split" in d:
            d["docs_per_split"] = tuple(d["docs_per_split"])
        return cls(**d)


def variant_counts(spec: SyntheticSpec) -> np.ndarray:
    """Per-concept variant counts before shuffling (largest-remainder allotment)."""
    v = spec.variants_per_concept
    n = spec.concept_count
    if isinstance(v, int):
        if v < 1:
            raise SyntheticSpecError(f"variants_per_concept must be positive, got {v}")
        return np.full(n, v, dtype=int)
    keys = sorted(v)
    if not keys or any(k < 1 for k in keys) or any(v[k] < 0 for k in keys) or sum(v.values()) <= 0:
        raise SyntheticSpecError(f"bad variants_per_concept distribution {v}")
    w = np.array([v[k] for k in keys], dtype=float)
    exact = w / w.sum() * n
    alloc = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - alloc), kind="stable")[: n - alloc.sum()]:
        alloc[i] += 1
    return np.repeat(keys, alloc)


@dataclass
class SyntheticCorpus:
    documents: list[Document]
    dictionary: Dictionary
    ontology: Ontology
    annotations: dict[str, list[Annotation]]
    label_space: LabelSpace
    split: CorpusSplit
    spec: SyntheticSpec
    concept_phrases: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)
    triggers: dict[str, list[str]] = field(default_factory=dict)

    def by_split(self, name: str) -> list[Document]:
        ids = set(getattr(self.split, name))
        return [d for d in self.documents if d.doc_id in ids]

    def write(self, outdir) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / name for name in (
            "documents.jsonl", "dictionary.tsv", "ontology.tsv", "annotations.jsonl",
            "labels.txt", "split.json", "synthetic_spec.json")}
        write_documents(self.documents, paths["documents.jsonl"])
        self.dictionary.dump(paths["dictionary.tsv"])
        self.ontology.dump(paths["ontology.tsv"])
        write_annotations(self.documents, paths["annotations.jsonl"])
        self.label_space.dump(paths["labels.txt"])
        write_split(self.split, paths["split.json"])
        paths["synthetic_spec.json"].write_text(self.spec.to_json() + "\n")
        return paths


def _build_ontology(n_concepts: int, group_size: int):
    n_groups = -(-n_concepts // group_size)
    n_chapters = max(1, -(-n_groups // 4))
    parents: dict[str, str | None] = {f"ch{k:02d}": None for k in range(n_chapters)}
    leaves = []
    for g in range(n_groups):
        parents[f"g{g:03d}"] = f"ch{g // 4:02d}"
    for c in range(n_concepts):
        g = c // group_size
        code = f"g{g:03d}.{c % group_size}"
        parents[code] = f"g{g:03d}"
        leaves.append(code)
    return Ontology(parents), leaves


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    ontology, leaves = _build_ontology(spec.concept_count, spec.group_size)

    counts = rng.permutation(variant_counts(spec))
    dictionary = Dictionary()
    phrases: list[list[tuple[str, ...]]] = []
    concept_phrases: dict[str, list[tuple[str, ...]]] = {}
    for ci, code in enumerate(leaves):
        plist = []
        for v in range(counts[ci]):
            length = 2 if v > 0 and rng.random() < spec.multiword_rate else 1
            phrase = tuple(f"c{ci:03d}v{v}{'ab'[k]}" for k in range(length))
            emitted = ontology.parent[code] if rng.random() < spec.specificity_mismatch else code
            dictionary.add(phrase, emitted)
            plist.append(phrase)
        phrases.append(plist)
        concept_phrases[code] = plist

    filler = [f"w{i:04d}" for i in range(spec.vocab_size)]
    zipf = 1.0 / np.arange(1, spec.vocab_size + 1)
    zipf /= zipf.sum()

    if spec.label_mode == "codes":
        label_space = LabelSpace(leaves)
        triggers: dict[str, list[str]] = {}
        trigger_idx = []
    else:
        label_space = LabelSpace([f"y{l:03d}" for l in range(spec.label_count)])
        trigger_idx = [np.sort(rng.choice(spec.concept_count, spec.triggers_per_label, replace=False))
                       for _ in range(spec.label_count)]
        triggers = {label_space.codes[l]: [leaves[i] for i in t] for l, t in enumerate(trigger_idx)}

    documents: list[Document] = []
    parts: list[list[str]] = [[], [], []]
    for si, (split_name, n_docs) in enumerate(zip(("train", "dev", "test"), spec.docs_per_split)):
        patient, left = 0, 0
        for di in range(n_docs):
            if left == 0:
                patient += 1
                left = int(rng.integers(1, spec.docs_per_patient + 1))
            left -= 1
            tokens, mentioned = _generate_tokens(spec, rng, phrases, filler, zipf)
            labels = _labels(spec, rng, mentioned, leaves, label_space, trigger_idx)
            doc = Document(doc_id=f"{split_name}-{di:05d}", patient_id=f"{split_name}-p{patient:05d}",
                           tokens=tokens, labels=labels)
            doc.annotations = annotate(tokens, dictionary)
            documents.append(doc)
            parts[si].append(doc.doc_id)

    return SyntheticCorpus(
        documents=documents, dictionary=dictionary, ontology=ontology,
        annotations={d.doc_id: d.annotations for d in documents},
        label_space=label_space, split=CorpusSplit(*parts), spec=spec,
        concept_phrases=concept_phrases, triggers=triggers,
    )


def _generate_tokens(spec, rng, phrases, filler, zipf):
    n = int(np.clip(rng.geometric(1.0 / spec.mean_doc_length), spec.min_doc_length, MAX_TOKENS))
    target = spec.coverage * n
    n_mention = int(np.floor(target)) + int(rng.random() < target - np.floor(target))
    n_topics = min(spec.concept_count, 1 + int(rng.poisson(spec.concepts_per_doc - 1)))
    topics = rng.choice(spec.concept_count, n_topics, replace=False)

    units: list[tuple[str, ...]] = []
    mentioned = set()
    left = n_mention
    while left > 0:
        c = int(topics[rng.integers(n_topics)])
        options = [p for p in phrases[c] if len(p) <= left]
        p = options[int(rng.integers(len(options)))]
        units.append(p)
        mentioned.add(c)
        left -= len(p)
    n_filler = n - n_mention
    if n_filler:
        units.extend((filler[i],) for i in rng.choice(len(filler), n_filler, p=zipf))
    tokens = [t for i in rng.permutation(len(units)) for t in units[i]]
    return tokens, mentioned


def _labels(spec, rng, mentioned, leaves, label_space, trigger_idx):
    if spec.label_mode == "codes":
        return {leaves[c] for c in mentioned}
    labels = set()
    for l, trig in enumerate(trigger_idx):
        fired = False
        for c in trig:
            # draw for every present trigger so the stream does not depend on outcomes
            if c in mentioned and rng.random() < spec.label_signal:
                fired = True
        if fired:
            labels.add(label_space.codes[l])
    return labels
