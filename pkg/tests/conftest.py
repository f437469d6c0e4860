import pytest
import torch

from conceptaug.model import ModelConfig, build_model, collate
from conceptaug.synthetic import SyntheticSpec, generate_synthetic
from conceptaug.training import encode_all, fit_encoder

torch.set_num_threads(1)

SMALL = dict(docs_per_split=(40, 10, 10), concept_count=12, label_count=6, vocab_size=80, mean_doc_length=30)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticSpec(seed=1, variants_per_concept=2, multiword_rate=0.5, **SMALL))


def make(corpus, policy="baseline", seed=0, dtype=torch.float32, docs=None, **cfg):
    """Encoder, model and one collated batch over ``docs`` (default: first 4 training docs)."""
    train = corpus.by_split("train")
    enc = fit_encoder(train, corpus.label_space, corpus.ontology, min_df=1)
    train_enc = encode_all(enc, train)
    if policy == "linear-combination":
        enc.fit_gates(train_enc)
    conf = ModelConfig(policy=policy, embed_dim=cfg.pop("embed_dim", 8), conv_dim=cfg.pop("conv_dim", 6),
                       kernel_size=cfg.pop("kernel_size", 3), **cfg)
    model = build_model(conf, enc, corpus.ontology, seed).to(dtype)
    batch = collate(encode_all(enc, docs if docs is not None else train[:4]))
    return enc, model, batch


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def overlapping_docs(corpus, n=2):
    """Copies of ``n`` annotated training docs where every span also carries its parent code."""
    from dataclasses import replace
    from conceptaug.annotator import Annotation
    out = []
    for d in corpus.by_split("train"):
        if d.annotations:
            extra = [Annotation(a.start, a.end, corpus.ontology.parent[a.code]) for a in d.annotations
                     if corpus.ontology.parent.get(a.code)]
            out.append(replace(d, annotations=list(d.annotations) + extra))
        if len(out) == n:
            return out
    return out
