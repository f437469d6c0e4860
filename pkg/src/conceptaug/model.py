"""Convolutional per-label-attention classifier with concept-augmented inputs.

Token representations are chosen by a :class:`TokenPolicy`: what an annotated
("matched") token becomes, and what an unannotated token becomes. The plain
text model, the two augmentation schemes and the three ablations are all
points in that small grid.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .annotator import align
from .corpus import PAD, UNK, Document, Vocabulary
from .ontology import LabelSpace, Ontology


@dataclass(frozen=True)
class TokenPolicy:
    matched: str  # word | concept | zero | gate
    unmatched: str  # word | zero

    def __post_init__(self):
        if self.matched not in ("word", "concept", "zero", "gate"):
            raise ValueError(f"bad matched representation {self.matched!r}")
        if self.unmatched not in ("word", "zero"):
            raise ValueError(f"bad unmatched representation {self.unmatched!r}")

    @property
    def uses_concepts(self) -> bool:
        return self.matched in ("concept", "gate")

    @property
    def needs_annotations(self) -> bool:
        return (self.matched, self.unmatched) != ("word", "word")


POLICIES = {
    "baseline": TokenPolicy("word", "word"),
    "full-replace": TokenPolicy("concept", "word"),
    "linear-combination": TokenPolicy("gate", "word"),
    "dummy-concepts": TokenPolicy("zero", "word"),
    "concepts-only": TokenPolicy("word", "zero"),
    "concepts-only-concept-embeddings": TokenPolicy("concept", "zero"),
}


def get_policy(name: str) -> TokenPolicy:
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


@dataclass
class ModelConfig:
    embed_dim: int = 100
    conv_dim: int = 50
    kernel_size: int = 10
    dropout: float = 0.2
    learning_rate: float = 1e-4
    batch_size: int = 12
    attn_hidden: int = 20
    policy: str = "baseline"
    overlap_attention: bool = False
    gram: bool = False
    gram_hidden: int = 20
    init_range: float = 0.1

    def __post_init__(self):
        for name in ("embed_dim", "conv_dim", "kernel_size", "batch_size", "attn_hidden", "gram_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        get_policy(self.policy)

    def to_dict(self) -> dict:
        return asdict(self)


# --- gate table ----------------------------------------------------------------

class GateTable:
    """Slots for the per-(word, concept) interpolation logits.

    Pairs seen on at least ``min_count`` training tokens get their own slot.
    Every known concept has an (UNK word, concept) slot, every known word a
    (word, UNK concept) slot, and (UNK, UNK) catches the rest, including known
    pairs never seen in training.
    """

    def __init__(self, keys: Sequence[tuple[int, int]]):
        self.keys = [tuple(map(int, k)) for k in keys]
        self.slot = {k: i for i, k in enumerate(self.keys)}

    @classmethod
    def build(cls, pairs: Iterable[tuple[int, int]], n_words: int, n_concepts: int, min_count: int = 2):
        counts = Counter(pairs)
        keys = {(UNK, UNK)}
        keys.update(k for k, n in counts.items() if n >= min_count)
        keys.update((UNK, c) for c in range(2, n_concepts))
        keys.update((w, UNK) for w in range(2, n_words))
        return cls(sorted(keys))

    def __len__(self):
        return len(self.keys)

    def lookup(self, w: int, c: int) -> int:
        slot = self.slot.get((w, c))
        if slot is not None:
            return slot
        if w == UNK and c != UNK:
            slot = self.slot.get((UNK, c))
        elif c == UNK and w != UNK:
            slot = self.slot.get((w, UNK))
        return slot if slot is not None else self.slot[(UNK, UNK)]


# --- encoding -------------------------------------------------------------------

@dataclass
class EncodedDoc:
    doc_id: str
    word_ids: np.ndarray
    concept_ids: np.ndarray  # selected concept per token, PAD when none
    matched: np.ndarray
    concept_sets: np.ndarray  # (N, J) every covering concept, PAD-filled
    spans: np.ndarray  # (M, 3): start, end, target concept index
    labels: np.ndarray
    gate_ids: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.word_ids)


class FeatureEncoder:
    def __init__(self, vocab: Vocabulary, concept_vocab: Vocabulary, label_space: LabelSpace):
        self.vocab = vocab
        self.concept_vocab = concept_vocab
        self.label_space = label_space
        self.gates: GateTable | None = None

    def encode(self, doc: Document, use_annotations: bool = True) -> EncodedDoc:
        n = len(doc.tokens)
        if n == 0:
            raise ValueError(f"empty document {doc.doc_id!r}")
        word_ids = np.array(self.vocab.encode(doc.tokens), dtype=np.int64)
        anns = (doc.annotations or []) if use_annotations else []
        al = align(n, anns)
        cv = self.concept_vocab
        concept_ids = np.array([cv.index(c) if c is not None else PAD for c in al.selected], dtype=np.int64)
        width = max(1, max(len(s) for s in al.concept_sets))
        sets = np.zeros((n, width), dtype=np.int64)
        for i, s in enumerate(al.concept_sets):
            sets[i, :len(s)] = [cv.index(c) for c in s]
        spans = np.array([(a.start, a.end, cv.index(a.code)) for a in anns], dtype=np.int64).reshape(-1, 3)
        enc = EncodedDoc(doc.doc_id, word_ids, concept_ids, al.matched, sets, spans,
                         self.label_space.encode(doc.labels))
        if self.gates is not None:
            self.assign_gates(enc)
        return enc

    def fit_gates(self, train: Sequence[EncodedDoc], min_count: int = 2) -> GateTable:
        pairs = ((int(w), int(c)) for e in train for w, c, m in zip(e.word_ids, e.concept_ids, e.matched) if m)
        self.gates = GateTable.build(pairs, len(self.vocab), len(self.concept_vocab), min_count)
        for e in train:
            self.assign_gates(e)
        return self.gates

    def assign_gates(self, enc: EncodedDoc) -> None:
        g = self.gates
        enc.gate_ids = np.array([g.lookup(int(w), int(c)) if m else 0
                                 for w, c, m in zip(enc.word_ids, enc.concept_ids, enc.matched)], dtype=np.int64)


@dataclass
class Batch:
    word_ids: torch.Tensor
    concept_ids: torch.Tensor
    matched: torch.Tensor
    gate_ids: torch.Tensor
    concept_sets: torch.Tensor
    mask: torch.Tensor
    labels: torch.Tensor
    spans: torch.Tensor  # (S, 4): doc-in-batch, start, end, target

    def __len__(self):
        return self.word_ids.shape[0]


def collate(docs: Sequence[EncodedDoc]) -> Batch:
    b = len(docs)
    n = max(len(d) for d in docs)
    j = max(d.concept_sets.shape[1] for d in docs)
    word = np.zeros((b, n), dtype=np.int64)
    conc = np.zeros((b, n), dtype=np.int64)
    matched = np.zeros((b, n), dtype=bool)
    gates = np.zeros((b, n), dtype=np.int64)
    sets = np.zeros((b, n, j), dtype=np.int64)
    mask = np.zeros((b, n), dtype=bool)
    spans = []
    for i, d in enumerate(docs):
        k = len(d)
        word[i, :k] = d.word_ids
        conc[i, :k] = d.concept_ids
        matched[i, :k] = d.matched
        if d.gate_ids is not None:
            gates[i, :k] = d.gate_ids
        sets[i, :k, :d.concept_sets.shape[1]] = d.concept_sets
        mask[i, :k] = True
        if len(d.spans):
            spans.append(np.c_[np.full(len(d.spans), i), d.spans])
    spans_arr = np.concatenate(spans) if spans else np.zeros((0, 4), dtype=np.int64)
    return Batch(
        word_ids=torch.from_numpy(word), concept_ids=torch.from_numpy(conc),
        matched=torch.from_numpy(matched), gate_ids=torch.from_numpy(gates),
        concept_sets=torch.from_numpy(sets), mask=torch.from_numpy(mask),
        labels=torch.from_numpy(np.stack([d.labels for d in docs])),
        spans=torch.from_numpy(spans_arr.astype(np.int64)),
    )


def ancestor_matrix(concept_vocab: Vocabulary, ontology: Ontology | None) -> torch.Tensor:
    """Row c lists c and its in-vocabulary ancestors; PAD-filled."""
    chains = [[i] for i in range(len(concept_vocab))]
    if ontology is not None:
        for i, code in enumerate(concept_vocab.itos):
            if i > UNK and code in ontology:
                chains[i] = [i] + [concept_vocab.index(a) for a in ontology.ancestors(code)[1:]
                                   if a in concept_vocab]
    depth = max(len(c) for c in chains)
    out = torch.zeros(len(chains), depth, dtype=torch.long)
    for i, c in enumerate(chains):
        out[i, :len(c)] = torch.tensor(c)
    return out


# --- pure building blocks --------------------------------------------------------

def compose_tokens(x: torch.Tensor, c: torch.Tensor, matched: torch.Tensor, policy: TokenPolicy,
                   beta: torch.Tensor | None = None) -> torch.Tensor:
    """Representation of every token under ``policy``.

    ``x`` word vectors (..., d), ``c`` concept vectors (..., d), ``matched``
    bool (...), ``beta`` gate weights (...) for the gate policy.
    """
    if policy.matched == "word":
        m = x
    elif policy.matched == "concept":
        m = c
    elif policy.matched == "zero":
        m = torch.zeros_like(x)
    else:
        beta = torch.where(matched, beta, torch.zeros_like(beta)).unsqueeze(-1)
        m = beta * c + (1 - beta) * x
    u = x if policy.unmatched == "word" else torch.zeros_like(x)
    return torch.where(matched.unsqueeze(-1), m, u)


def compose_token(x, c, policy: TokenPolicy, gate_logit=None):
    """Single-token form; ``c is None`` means no concept is assigned."""
    x = torch.as_tensor(x)
    matched = torch.tensor(c is not None)
    cv = torch.zeros_like(x) if c is None else torch.as_tensor(c, dtype=x.dtype)
    beta = torch.sigmoid(torch.as_tensor(0.0 if gate_logit is None else gate_logit, dtype=x.dtype))
    return compose_tokens(x, cv, matched, policy, beta)


def attention_mix(scores: torch.Tensor, vectors: torch.Tensor, valid: torch.Tensor | None = None):
    """Softmax over the second-to-last axis of ``vectors`` weighted by ``scores``."""
    if valid is not None:
        any_valid = valid.any(-1, keepdim=True)
        scores = scores.masked_fill(~valid, float("-inf"))
        scores = torch.where(any_valid, scores, torch.zeros_like(scores))
    alpha = torch.softmax(scores, dim=-1)
    if valid is not None:
        alpha = alpha * valid.any(-1, keepdim=True)
    return (alpha.unsqueeze(-1) * vectors).sum(-2), alpha


def overlap_attention(context: torch.Tensor, concept_vecs: torch.Tensor, scorer: nn.Module):
    """Attention-pooled embedding of a token's concept set.

    ``context`` is the concatenation of the word vectors at n-2, n-1, n+1,
    n+2 (4d); ``concept_vecs`` is (J, d).
    """
    if concept_vecs.shape[0] == 0:
        raise ValueError("empty concept set")
    inp = torch.cat([context.expand(concept_vecs.shape[0], -1), concept_vecs], dim=-1)
    return attention_mix(scorer(inp).squeeze(-1), concept_vecs)[0]


def context_windows(x: torch.Tensor, width: int = 2) -> torch.Tensor:
    """(B, N, d) -> (B, N, 2*width*d) neighbour vectors, zeros past the edges."""
    n = x.shape[1]
    xp = F.pad(x, (0, 0, width, width))
    parts = [xp[:, width + o: width + o + n] for o in range(-width, width + 1) if o != 0]
    return torch.cat(parts, dim=-1)


@contextmanager
def _seeded(seed: int, component: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed * 1000 + component)
        yield


def mlp_scorer(in_dim: int, hidden: int, activation: str = "relu") -> nn.Sequential:
    act = nn.ReLU() if activation == "relu" else nn.Tanh()
    return nn.Sequential(nn.Linear(in_dim, hidden), act, nn.Linear(hidden, 1))


# --- the classifier ---------------------------------------------------------------

@dataclass
class ForwardOut:
    logits: torch.Tensor
    x: torch.Tensor  # composed input after dropout (B, N, d_e)
    h: torch.Tensor  # convolved (B, N, d_c)
    attention: torch.Tensor | None = None


class ConceptCNN(nn.Module):
    def __init__(self, config: ModelConfig, n_words: int, n_concepts: int, n_labels: int,
                 n_gates: int = 1, ancestors: torch.Tensor | None = None, seed: int = 0):
        super().__init__()
        self.config = config
        self.policy = get_policy(config.policy)
        d = config.embed_dim
        # each component draws from its own seed so models that differ only in
        # policy start from identical shared weights
        with _seeded(seed, 0):
            self.word_emb = nn.Embedding(n_words, d, padding_idx=PAD)
            self._init_embedding(self.word_emb)
        self.concept_emb = None
        if self.policy.uses_concepts:
            with _seeded(seed, 1):
                self.concept_emb = nn.Embedding(n_concepts, d, padding_idx=PAD)
                self._init_embedding(self.concept_emb)
        self.gate_logits = None
        if self.policy.matched == "gate":
            self.gate_logits = nn.Parameter(torch.zeros(n_gates))
        with _seeded(seed, 2):
            self.conv = nn.Conv1d(d, config.conv_dim, config.kernel_size)
            nn.init.xavier_uniform_(self.conv.weight)
            self.label_query = nn.Linear(config.conv_dim, n_labels, bias=False)
            nn.init.xavier_uniform_(self.label_query.weight)
            self.final = nn.Linear(config.conv_dim, n_labels)
            nn.init.xavier_uniform_(self.final.weight)
        self.dropout = nn.Dropout(config.dropout)

        self.overlap_scorer = None
        if config.overlap_attention and self.policy.uses_concepts:
            with _seeded(seed, 3):
                self.overlap_scorer = mlp_scorer(5 * d, config.attn_hidden, "relu")
        self.gram_scorer = None
        if config.gram and self.policy.uses_concepts:
            with _seeded(seed, 4):
                self.gram_scorer = mlp_scorer(2 * d, config.gram_hidden, "tanh")
        if ancestors is None:
            ancestors = torch.arange(n_concepts).unsqueeze(1)
        self.register_buffer("ancestors", ancestors.clone())

    def _init_embedding(self, emb: nn.Embedding):
        r = self.config.init_range
        nn.init.uniform_(emb.weight, -r, r)
        with torch.no_grad():
            emb.weight[PAD].zero_()

    # concept side -------------------------------------------------------------
    def gram_table(self) -> torch.Tensor:
        """Every concept's ancestor-attention embedding, (C, d)."""
        e = self._concept_weight()
        anc = self.ancestors
        valid = anc != PAD
        valid[:, 0] = True
        chain = e[anc]  # C, D, d
        pair = torch.cat([e.unsqueeze(1).expand_as(chain), chain], dim=-1)
        scores = self.gram_scorer(pair).squeeze(-1)
        return attention_mix(scores, chain, valid)[0]

    def _concept_weight(self) -> torch.Tensor:
        w = self.concept_emb.weight
        # PAD row pinned to zero even when the table is indexed directly
        return torch.cat([torch.zeros_like(w[:1]), w[1:]])

    def concept_table(self) -> torch.Tensor:
        return self.gram_table() if self.gram_scorer is not None else self._concept_weight()

    def concept_vectors(self, batch: Batch, x: torch.Tensor) -> torch.Tensor:
        table = self.concept_table()
        if self.overlap_scorer is None:
            return table[batch.concept_ids]
        cands = table[batch.concept_sets]  # B, N, J, d
        ctx = context_windows(x).unsqueeze(2).expand(-1, -1, cands.shape[2], -1)
        scores = self.overlap_scorer(torch.cat([ctx, cands], dim=-1)).squeeze(-1)
        return attention_mix(scores, cands, batch.concept_sets != PAD)[0]

    # main path ---------------------------------------------------------------
    def build_input(self, batch: Batch) -> torch.Tensor:
        x = self.word_emb(batch.word_ids)
        c = beta = None
        if self.policy.uses_concepts:
            c = self.concept_vectors(batch, x)
        else:
            c = x
        if self.gate_logits is not None:
            beta = torch.sigmoid(self.gate_logits[batch.gate_ids])
        out = compose_tokens(x, c, batch.matched, self.policy, beta)
        return out * batch.mask.unsqueeze(-1).to(out.dtype)

    def convolve(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        k = self.config.kernel_size
        left = (k - 1) // 2
        if mask is not None:
            x = x * mask.unsqueeze(-1).to(x.dtype)
        xp = F.pad(x.transpose(1, 2), (left, k - 1 - left))
        return torch.tanh(self.conv(xp)).transpose(1, 2)

    def label_attention(self, h: torch.Tensor, mask: torch.Tensor):
        scores = self.label_query(h).transpose(1, 2)  # B, L, N
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        pooled = alpha @ h  # B, L, d_c
        logits = (self.final.weight * pooled).sum(-1) + self.final.bias
        return logits, alpha

    def forward(self, batch: Batch, return_attention: bool = False) -> ForwardOut:
        x = self.dropout(self.build_input(batch))
        h = self.convolve(x, batch.mask)
        logits, alpha = self.label_attention(h, batch.mask)
        return ForwardOut(logits, x, h, alpha if return_attention else None)


def build_model(config: ModelConfig, encoder: FeatureEncoder, ontology: Ontology | None = None,
                seed: int = 0) -> ConceptCNN:
    anc = ancestor_matrix(encoder.concept_vocab, ontology) if config.gram else None
    n_gates = len(encoder.gates) if encoder.gates is not None else 1
    return ConceptCNN(config, len(encoder.vocab), len(encoder.concept_vocab), len(encoder.label_space),
                      n_gates, anc, seed)
