"""Training loop, early stopping, prediction and checkpoints."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import metrics
from .corpus import Document, Vocabulary, build_vocabulary
from .model import (ConceptCNN, EncodedDoc, FeatureEncoder, GateTable, ModelConfig, build_model, collate,
                    get_policy)
from .multitask import (AuxConfig, AuxHead, build_aux_head, joint_loss, predict_spans, shared_representation,
                        span_reprs)
from .ontology import LabelSpace, Ontology, build_concept_vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "conceptaug-checkpoint/1"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    max_epochs: int = 200
    patience: int = 10
    criterion: str = "p@8"
    threshold: float = 0.5
    seed: int = 0
    min_df: int = 3
    gate_min_count: int = 2
    eval_batch_size: int = 64

    def to_dict(self):
        return asdict(self)


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to beat the best value."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def step(self, value: float) -> bool:
        self.epoch += 1
        if value > self.best:
            self.best, self.best_epoch, self.bad_epochs = value, self.epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# --- data preparation ------------------------------------------------------------

def label_counts(docs: Sequence[Document], label_space: LabelSpace) -> np.ndarray:
    return np.sum([label_space.encode(d.labels) for d in docs], axis=0).astype(int) if docs else \
        np.zeros(len(label_space), dtype=int)


def fit_encoder(train_docs: Sequence[Document], label_space: LabelSpace, ontology: Ontology | None = None,
                min_df: int = 3) -> FeatureEncoder:
    vocab = build_vocabulary(train_docs, min_df)
    codes = [{a.code for a in d.annotations or []} for d in train_docs]
    concept_vocab = build_concept_vocabulary(codes, ontology, min_df)
    return FeatureEncoder(vocab, concept_vocab, label_space)


def encode_all(encoder: FeatureEncoder, docs: Sequence[Document], use_annotations: bool = True) -> list[EncodedDoc]:
    return [encoder.encode(d, use_annotations) for d in docs]


def batches(encoded: Sequence[EncodedDoc], size: int, order=None):
    idx = np.arange(len(encoded)) if order is None else order
    for s in range(0, len(idx), size):
        yield collate([encoded[i] for i in idx[s:s + size]])


@torch.no_grad()
def predict(model: ConceptCNN, encoded: Sequence[EncodedDoc], batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = [torch.sigmoid(model(b).logits).double().numpy() for b in batches(encoded, batch_size)]
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.final.out_features))


def evaluate(model, encoded, threshold=0.5, train_counts=None, batch_size=64, tagging=None):
    scores = predict(model, encoded, batch_size)
    gold = np.stack([e.labels for e in encoded])
    return metrics.evaluate_scores(scores, gold, threshold=threshold, train_counts=train_counts, tagging=tagging)


# --- training --------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = float("-inf")
    epochs_run: int = 0
    stopped_early: bool = False


def train(model: ConceptCNN, train_enc: Sequence[EncodedDoc], dev_enc: Sequence[EncodedDoc],
          trainer: TrainerConfig | None = None, aux_head: AuxHead | None = None, aux: AuxConfig | None = None,
          log_path=None, score_fn: Callable[[int, dict], float] | None = None) -> TrainResult:
    """Optimise the joint objective, early-stopping on a dev coding metric.

    The model is left holding the parameters of the best dev epoch.
    ``score_fn(epoch, dev_metrics)`` may override the stopping value.
    """
    trainer = trainer or TrainerConfig()
    cfg = model.config
    if not dev_enc:
        raise TrainingError("missing dev split")
    if aux is not None and aux.weight > 0 and not any(len(e.spans) for e in train_enc):
        raise TrainingError("auxiliary weight > 0 but the training split carries no annotations")
    if aux is not None and aux_head is None:
        raise TrainingError("auxiliary config given without a head")

    torch.manual_seed(trainer.seed)
    rng = np.random.default_rng(trainer.seed)
    params = list(model.parameters()) + (list(aux_head.parameters()) if aux_head is not None else [])
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    stopper = EarlyStopping(trainer.patience)
    result = TrainResult()
    best_state = copy.deepcopy(model.state_dict())
    best_aux = copy.deepcopy(aux_head.state_dict()) if aux_head is not None else None
    tag_eval = [e for e in dev_enc if len(e.spans)] or [e for e in train_enc if len(e.spans)]
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    counts = None
    try:
        for epoch in range(1, trainer.max_epochs + 1):
            model.train()
            tot = {"loss": 0.0, "bce": 0.0, "aux_nll": 0.0}
            order = rng.permutation(len(train_enc))
            for batch in batches(train_enc, cfg.batch_size, order):
                out = model(batch)
                aux_logits = targets = None
                if aux_head is not None:
                    z = span_reprs(shared_representation(out, aux), batch.spans)
                    aux_logits, targets = aux_head(z), batch.spans[:, 3]
                loss, bce, nll = joint_loss(out.logits, batch.labels, aux_logits, targets,
                                            aux.weight if aux is not None else 0.0)
                opt.zero_grad()
                loss.backward()
                opt.step()
                tot["loss"] += loss.item()
                tot["bce"] += bce.item()
                tot["aux_nll"] += nll.item()

            tagging = None
            if aux_head is not None and tag_eval:
                p, t = predict_spans(model, aux_head, aux, batches(tag_eval, trainer.eval_batch_size))
                tagging = metrics.tagging_accuracy(p, t)
            rep = evaluate(model, dev_enc, trainer.threshold, counts, trainer.eval_batch_size, tagging)
            dev = rep.values
            if score_fn is not None:
                value = score_fn(epoch, dev)
            else:
                if dev.get(trainer.criterion) is None:
                    raise TrainingError(f"stopping criterion {trainer.criterion!r} unavailable "
                                        f"(label space has {len(dev_enc[0].labels)} labels)")
                value = dev[trainer.criterion]
            improved = stopper.step(value)
            if improved:
                best_state = copy.deepcopy(model.state_dict())
                if aux_head is not None:
                    best_aux = copy.deepcopy(aux_head.state_dict())
            stop = stopper.should_stop
            row = {"epoch": epoch, **tot, "dev": dev, "criterion": value,
                   "tagging_accuracy": tagging, "stopped": stop}
            result.history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
            log.info("epoch %d loss %.4f %s %.4f", epoch, tot["loss"], trainer.criterion, value)
            if stop:
                result.stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    result.epochs_run = stopper.epoch
    result.best_epoch = stopper.best_epoch
    result.best_value = float(stopper.best)
    model.load_state_dict(best_state)
    if aux_head is not None:
        aux_head.load_state_dict(best_aux)
    return result


# --- experiment wrapper --------------------------------------------------------------

@dataclass
class Trained:
    model: ConceptCNN
    encoder: FeatureEncoder
    result: TrainResult
    aux_head: AuxHead | None = None
    aux: AuxConfig | None = None
    trainer: TrainerConfig | None = None
    train_counts: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    vocab_hash: str = ""
    label_hash: str = ""


def fit(train_docs: Sequence[Document], dev_docs: Sequence[Document], label_space: LabelSpace,
        model_cfg: ModelConfig, trainer: TrainerConfig | None = None, ontology: Ontology | None = None,
        aux: AuxConfig | None = None, log_path=None, score_fn=None, dtype=torch.float32) -> Trained:
    """Build vocabularies, encode, construct and train a model end to end."""
    trainer = trainer or TrainerConfig()
    policy = get_policy(model_cfg.policy)
    encoder = fit_encoder(train_docs, label_space, ontology, trainer.min_df)
    train_enc = encode_all(encoder, train_docs)
    if policy.matched == "gate":
        encoder.fit_gates(train_enc, trainer.gate_min_count)
    dev_enc = encode_all(encoder, dev_docs)
    model = build_model(model_cfg, encoder, ontology, seed=trainer.seed).to(dtype)
    head = None
    if aux is not None:
        head = build_aux_head(aux, model, len(encoder.concept_vocab), trainer.seed)
    result = train(model, train_enc, dev_enc, trainer, head, aux, log_path, score_fn)
    return Trained(model, encoder, result, head, aux, trainer, label_counts(train_docs, label_space),
                   vocab_hash=encoder.vocab.digest(), label_hash=label_space.digest())


def evaluate_docs(trained_model: ConceptCNN, encoder: FeatureEncoder, docs: Sequence[Document],
                  threshold=0.5, train_counts=None) -> metrics.MetricsReport:
    use_ann = trained_model.policy.needs_annotations
    return evaluate(trained_model, encode_all(encoder, docs, use_annotations=use_ann), threshold, train_counts)


# --- checkpoints ---------------------------------------------------------------------

def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_checkpoint(path, trained: Trained, metadata: dict | None = None) -> None:
    enc = trained.encoder
    blob = {
        "format": CHECKPOINT_FORMAT,
        "model_config": trained.model.config.to_dict(),
        "policy": trained.model.config.policy,
        "vocab": enc.vocab.to_dict(),
        "concept_vocab": enc.concept_vocab.to_dict(),
        "labels": list(enc.label_space.codes),
        "gate_keys": [list(k) for k in enc.gates.keys] if enc.gates is not None else None,
        "state_dict": trained.model.state_dict(),
        "aux_config": trained.aux.to_dict() if trained.aux is not None else None,
        "aux_state_dict": trained.aux_head.state_dict() if trained.aux_head is not None else None,
        "trainer": trained.trainer.to_dict() if trained.trainer is not None else None,
        "train_label_counts": [int(c) for c in trained.train_counts] if trained.train_counts is not None else None,
        "vocab_hash": enc.vocab.digest(),
        "label_hash": enc.label_space.digest(),
        "metadata": metadata or {},
    }
    torch.save(blob, path)


def load_checkpoint(path) -> Trained:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path}: not a checkpoint of format {CHECKPOINT_FORMAT}")
    cfg = ModelConfig(**blob["model_config"])
    enc = FeatureEncoder(Vocabulary.from_dict(blob["vocab"]), Vocabulary.from_dict(blob["concept_vocab"]),
                         LabelSpace(blob["labels"]))
    if blob["gate_keys"] is not None:
        enc.gates = GateTable([tuple(k) for k in blob["gate_keys"]])
    sd = blob["state_dict"]
    n_gates = len(enc.gates) if enc.gates is not None else 1
    model = ConceptCNN(cfg, len(enc.vocab), len(enc.concept_vocab), len(enc.label_space), n_gates,
                       sd["ancestors"])
    model = model.to(sd["word_emb.weight"].dtype)
    model.load_state_dict(sd)
    model.eval()
    aux = head = None
    if blob["aux_config"] is not None:
        aux = AuxConfig(**blob["aux_config"])
        head = build_aux_head(aux, model, len(enc.concept_vocab))
        head.load_state_dict(blob["aux_state_dict"])
    trainer = TrainerConfig(**blob["trainer"]) if blob["trainer"] else None
    counts = np.array(blob["train_label_counts"]) if blob["train_label_counts"] is not None else None
    return Trained(model, enc, TrainResult(), head, aux, trainer, counts,
                   blob["metadata"], blob["vocab_hash"], blob["label_hash"])
