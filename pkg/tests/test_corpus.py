import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptaug.annotator import Annotation
from conceptaug.corpus import (PAD, UNK, CorpusError, Document, build_vocabulary, coverage_stats,
                               phrases_per_concept, preprocess, read_documents, split_by_patient,
                               write_documents)
from conceptaug.synthetic import SyntheticSpec, SyntheticSpecError, generate_synthetic, variant_counts


def doc(i, tokens, patient=None, labels=()):
    return Document(f"d{i}", patient or f"p{i}", list(tokens), set(labels))


# --- preprocess ----------------------------------------------------------------

def test_preprocess_drops_non_alphabetic():
    assert preprocess("BP 120/80") == ["bp"]


def test_preprocess_empty():
    assert preprocess("") == []


def test_preprocess_truncates():
    assert preprocess(" ".join(f"w{i}" for i in range(3000))) == [f"w{i}" for i in range(2500)]


def test_preprocess_keeps_mixed_tokens():
    assert preprocess("Pt. has CHF-2, 3x daily") == ["pt.", "has", "chf-2,", "3x", "daily"]


@given(st.text())
def test_preprocess_idempotent(text):
    once = preprocess(text)
    assert preprocess(" ".join(once)) == once
    assert all(t == t.lower() and any(c.isalpha() for c in t) for t in once)


# --- vocabulary ------------------------------------------------------------------

def test_vocabulary_threshold():
    docs = [doc(0, ["rare", "common"]), doc(1, ["rare", "common"]), doc(2, ["common"])]
    v = build_vocabulary(docs, min_df=3)
    assert v.index("rare") == UNK
    assert v.index("common") not in (PAD, UNK)
    docs.append(doc(3, ["rare"]))
    assert build_vocabulary(docs, min_df=3).index("rare") not in (PAD, UNK)


def test_vocabulary_reserved_and_sorted():
    docs = [doc(i, ["zeta", "alpha", "mu"]) for i in range(3)]
    v = build_vocabulary(docs)
    assert v.itos[:2] == ["<pad>", "<unk>"]
    assert v.entries() == ["alpha", "mu", "zeta"]
    assert v.index("never seen") == UNK


def test_vocabulary_repeated_token_counts_once_per_document():
    docs = [doc(0, ["x"] * 10), doc(1, ["x"])]
    assert build_vocabulary(docs).index("x") == UNK


def test_vocabulary_empty_corpus():
    with pytest.raises(CorpusError, match="empty corpus"):
        build_vocabulary([])


@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=6), min_size=1, max_size=12),
       st.text(max_size=5))
def test_vocabulary_lookup_total_and_dense(token_lists, probe):
    v = build_vocabulary([doc(i, t) for i, t in enumerate(token_lists)])
    assert sorted(v.stoi.values()) == list(range(2, len(v)))
    assert isinstance(v.index(probe), int)


# --- splitting -------------------------------------------------------------------

def test_split_sizes_single_doc_patients():
    docs = [doc(i, ["a"]) for i in range(100)]
    s = split_by_patient(docs, (0.8, 0.1, 0.1), seed=3)
    assert (len(s.train), len(s.dev), len(s.test)) == (80, 10, 10)


def test_split_keeps_patient_together_and_is_deterministic():
    docs = [doc(0, ["a"], "p1"), doc(1, ["a"], "p1")] + [doc(i, ["a"]) for i in range(2, 30)]
    s1 = split_by_patient(docs, seed=7)
    s2 = split_by_patient(docs, seed=7)
    assert s1 == s2
    for part in s1.parts().values():
        assert ("d0" in part) == ("d1" in part)


def test_split_too_few_patients():
    with pytest.raises(CorpusError):
        split_by_patient([doc(0, ["a"], "p"), doc(1, ["a"], "q")])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=3, max_size=60), st.integers(0, 10_000))
def test_split_partitions_patient_disjoint(patients, seed):
    docs = [doc(i, ["a"], f"p{p}") for i, p in enumerate(patients)]
    if len(set(patients)) < 3:
        return
    s = split_by_patient(docs, (0.6, 0.2, 0.2), seed)
    parts = s.parts()
    all_ids = sorted(i for p in parts.values() for i in p)
    assert all_ids == sorted(d.doc_id for d in docs)
    owner = {}
    for name, ids in parts.items():
        for i in ids:
            pid = docs[int(i[1:])].patient_id
            assert owner.setdefault(pid, name) == name


# --- coverage --------------------------------------------------------------------

def test_coverage_arithmetic():
    d = doc(0, [f"t{i}" for i in range(10)])
    d.annotations = [Annotation(1, 2, "A"), Annotation(5, 6, "B")]
    st_ = coverage_stats([d])
    assert st_["mean_fraction_tokens_annotated"] == pytest.approx(0.2)
    assert st_["total_concepts"] == 2
    assert st_["mean_concepts_per_document"] == 2
    assert st_["mean_tokens_per_document"] == 10


def test_coverage_no_annotations():
    st_ = coverage_stats([doc(0, ["a", "b"])])
    assert st_["mean_fraction_tokens_annotated"] == 0
    assert st_["total_concepts"] == 0


def test_coverage_overlapping_annotations_count_tokens_once():
    d = doc(0, ["a", "b", "c", "d"])
    d.annotations = [Annotation(0, 2, "A"), Annotation(0, 2, "B")]
    assert coverage_stats([d])["mean_fraction_tokens_annotated"] == pytest.approx(0.5)


# --- synthetic generator ------------------------------------------------------------

SMALL = dict(docs_per_split=(40, 10, 10), concept_count=12, label_count=6, vocab_size=80)


def test_generator_deterministic(tmp_path):
    a = generate_synthetic(SyntheticSpec(seed=5, variants_per_concept=3, **SMALL))
    b = generate_synthetic(SyntheticSpec(seed=5, variants_per_concept=3, **SMALL))
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    for name in pa:
        assert pa[name].read_bytes() == pb[name].read_bytes(), name


def test_generator_zero_coverage():
    c = generate_synthetic(SyntheticSpec(coverage=0.0, **SMALL))
    assert all(not d.annotations for d in c.documents)
    assert all(not d.labels for d in c.documents)


def test_generator_coverage_round_trip():
    c = generate_synthetic(SyntheticSpec(coverage=0.35, seed=11))
    assert abs(coverage_stats(c.documents)["mean_fraction_tokens_annotated"] - 0.35) <= 0.02


@pytest.mark.parametrize("variants", [1, 2, 5, {1: 0.5, 3: 0.25, 5: 0.25}])
def test_generator_variants_exact(variants):
    spec = SyntheticSpec(variants_per_concept=variants, seed=2, **SMALL)
    c = generate_synthetic(spec)
    per_concept = {code: len(set(p)) for code, p in c.concept_phrases.items()}
    assert sorted(per_concept.values()) == sorted(variant_counts(spec).tolist())
    if isinstance(variants, dict):
        assert Counter(per_concept.values()) == {1: 6, 3: 3, 5: 3}


def test_generator_observed_phrases_never_exceed_construction():
    c = generate_synthetic(SyntheticSpec(variants_per_concept=5, seed=3))
    observed = phrases_per_concept(c.documents)
    assert max(observed.values()) <= 5
    assert Counter(observed.values()).most_common(1)[0][0] == 5


def test_generator_annotations_recovered_by_dictionary():
    from conceptaug.annotator import annotate

    c = generate_synthetic(SyntheticSpec(variants_per_concept=4, multiword_rate=0.5, **SMALL))
    for d in c.documents:
        assert annotate(d.tokens, c.dictionary) == d.annotations


def test_generator_specificity_mismatch_emits_parents():
    c = generate_synthetic(SyntheticSpec(specificity_mismatch=1.0, **SMALL))
    leaves = {code for code in c.concept_phrases}
    emitted = {a.code for d in c.documents for a in d.annotations}
    assert emitted and not (emitted & leaves)
    assert all(c.ontology.parent[leaf] in c.ontology for leaf in leaves)


def test_generator_patients_disjoint_and_tokens_valid():
    c = generate_synthetic(SyntheticSpec(**SMALL))
    owner = {}
    for name, ids in c.split.parts().items():
        for d in c.by_split(name):
            assert owner.setdefault(d.patient_id, name) == name
            assert 0 < len(d.tokens) <= 2500
            assert all(t == t.lower() and any(ch.isalpha() for ch in t) for t in d.tokens)
            assert d.labels <= set(c.label_space.codes)


@pytest.mark.parametrize("bad", [dict(coverage=1.5), dict(specificity_mismatch=-0.1), dict(concept_count=0),
                                 dict(coverage=0.01, mean_doc_length=20), dict(variants_per_concept=0)])
def test_generator_rejects_bad_specs(bad):
    with pytest.raises(SyntheticSpecError):
        generate_synthetic(SyntheticSpec(**{**SMALL, **bad}))


# --- io -------------------------------------------------------------------------

def test_documents_round_trip(tmp_path):
    docs = [doc(0, ["a", "b"], labels={"x"}), doc(1, ["c"])]
    write_documents(docs, tmp_path / "d.jsonl")
    back = read_documents(tmp_path / "d.jsonl")
    assert [(d.doc_id, d.tokens, d.labels) for d in back] == [(d.doc_id, d.tokens, d.labels) for d in docs]


def test_read_raw_documents_preprocesses(tmp_path):
    p = tmp_path / "raw.jsonl"
    p.write_text(json.dumps({"doc_id": "a", "patient_id": "p", "text": "Acute CHF 428", "labels": ["428"]}) + "\n")
    (d,) = read_documents(p)
    assert d.tokens == ["acute", "chf"] and d.text == "Acute CHF 428"


def test_read_rejects_empty_document(tmp_path):
    p = tmp_path / "raw.jsonl"
    p.write_text(json.dumps({"doc_id": "a", "text": "123 456"}) + "\n")
    with pytest.raises(CorpusError, match="empty document"):
        read_documents(p)
