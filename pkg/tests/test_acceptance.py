"""Acceptance criteria 1-10, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary (and immediately, when run with ``-s``).

Run alone with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import statistics
import time

import numpy as np
import pytest
import torch

from conceptaug import metrics
from conceptaug.annotator import annotate, raw_codes_predict
from conceptaug.experiments import augmentation_gap, lambda_sweep
from conceptaug.model import POLICIES, ModelConfig, compose_tokens
from conceptaug.multitask import LAMBDA_GRID, AuxConfig, predict_spans
from conceptaug.synthetic import SyntheticSpec, generate_synthetic
from conceptaug.training import (EarlyStopping, TrainerConfig, batches, encode_all, evaluate_docs, fit,
                                 load_checkpoint, save_checkpoint)
from conftest import ACCEPTANCE, SMALL, make, overlapping_docs
import test_metrics as oracles


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def quick(**kw):
    return TrainerConfig(**{"max_epochs": 3, "min_df": 1, "criterion": "f1_micro", **kw})


def tiny_cfg(policy="baseline", **kw):
    return ModelConfig(policy=policy, embed_dim=16, conv_dim=12, kernel_size=3, learning_rate=3e-3, **kw)


def test_criterion_1_equivalences(small_corpus):
    t0 = time.time()
    errs = []
    for logit, other in ((-1e4, "baseline"), (1e4, "full-replace")):
        _, lc, batch = make(small_corpus, "linear-combination")
        _, ref, _ = make(small_corpus, other)
        ref.load_state_dict({k: v for k, v in lc.state_dict().items() if k in ref.state_dict()}, strict=False)
        with torch.no_grad():
            lc.gate_logits.fill_(logit)
        lc.eval(), ref.eval()
        errs.append(float((lc(batch).logits - ref(batch).logits).abs().max().detach()))
    tr, dv = small_corpus.by_split("train"), small_corpus.by_split("dev")
    a = fit(tr, dv, small_corpus.label_space, tiny_cfg(), quick(seed=5))
    b = fit(tr, dv, small_corpus.label_space, tiny_cfg(), quick(seed=5), aux=AuxConfig(weight=0.0))
    same = [r["loss"] for r in a.result.history] == [r["loss"] for r in b.result.history] and all(
        torch.equal(v, b.model.state_dict()[k]) for k, v in a.model.state_dict().items())
    dt = time.time() - t0
    report(1, max(errs) <= 1e-6 and same and dt < 60,
           f"beta->0 err {errs[0]:.1e}, beta->1 err {errs[1]:.1e}, lambda=0 bit-identical={same}, {dt:.1f}s")


def test_criterion_2_decomposition():
    exact = 0
    for seed in range(100):
        g = torch.Generator().manual_seed(seed)
        x, c = torch.randn(3, 11, 5, generator=g), torch.randn(3, 11, 5, generator=g)
        m = torch.rand(3, 11, generator=g) < 0.5
        s = compose_tokens(x, c, m, POLICIES["dummy-concepts"]) + compose_tokens(x, c, m, POLICIES["concepts-only"])
        exact += bool(torch.equal(s, compose_tokens(x, c, m, POLICIES["baseline"])))
    report(2, exact == 100, f"{exact}/100 fixtures columnwise exact")


def _fd_rel_errors(loss_fn, params, k=5, eps=1e-4):
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        grad = p.grad.flatten().clone()
        flat = p.data.view(-1)
        for i in grad.abs().argsort(descending=True)[:k].tolist():
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = loss_fn().item()
                flat[i] = old - eps
                down = loss_fn().item()
                flat[i] = old
            fd = (up - down) / (2 * eps)
            scale = max(abs(fd), abs(grad[i].item()))
            if scale > 1e-9:  # exactly-zero true gradients (shift-invariant biases) carry no relative error
                worst = max(worst, abs(fd - grad[i].item()) / scale)
    return worst


def test_criterion_3_gradients(small_corpus):
    from conceptaug.multitask import build_aux_head, coding_bce, joint_loss, shared_representation, span_reprs
    docs = [d for d in small_corpus.by_split("train") if d.annotations][:2]
    worst = {}

    _, m, b = make(small_corpus, "linear-combination", dtype=torch.float64, docs=docs)
    with torch.no_grad():
        m.gate_logits.normal_(generator=torch.Generator().manual_seed(0))
    m.eval()
    worst["gates"] = _fd_rel_errors(lambda: coding_bce(m(b).logits, b.labels), [m.gate_logits])

    _, m2, b2 = make(small_corpus, "linear-combination", overlap_attention=True, dtype=torch.float64,
                     docs=overlapping_docs(small_corpus))
    assert (b2.concept_sets != 0).sum(-1).max() >= 2
    m2.eval()
    worst["overlap"] = _fd_rel_errors(lambda: coding_bce(m2(b2).logits, b2.labels), list(m2.overlap_scorer.parameters()))

    _, m3, b3 = make(small_corpus, "full-replace", gram=True, dtype=torch.float64, docs=docs)
    m3.eval()
    worst["gram"] = _fd_rel_errors(lambda: coding_bce(m3(b3).logits, b3.labels), list(m3.gram_scorer.parameters()))

    enc, m4, b4 = make(small_corpus, dtype=torch.float64, docs=docs)
    m4.eval()
    for share in ("pre_convolution", "post_convolution"):
        cfg = AuxConfig(head="mlp", hidden=5, share_point=share)
        head = build_aux_head(cfg, m4, len(enc.concept_vocab))

        def loss():
            out = m4(b4)
            z = span_reprs(shared_representation(out, cfg), b4.spans)
            return joint_loss(out.logits, b4.labels, head(z), b4.spans[:, 3], 1.0)[0]

        worst[f"aux/{share}"] = _fd_rel_errors(loss, list(head.parameters()) + [m4.word_emb.weight, m4.conv.weight])
    ok = all(v < 1e-4 for v in worst.values())
    report(3, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_4_metric_oracles():
    worst = 0.0
    for seed in range(200):
        s, g = oracles.fixture(seed, ties=seed % 2 == 0)
        diffs = []
        ok = metrics.evaluable_labels(g)
        if ok.any():
            cols = np.flatnonzero(ok)
            diffs.append(metrics.auc(s, g) - np.mean([oracles.auc_oracle(s[:, j], g[:, j]) for j in cols]))
            diffs.append(metrics.ap(s, g) - np.mean([oracles.ap_oracle(s[:, j], g[:, j]) for j in cols]))
        if 0 < g.sum() < g.size:
            diffs.append(metrics.auc(s, g, "micro") - oracles.auc_oracle(s.ravel(), g.ravel()))
            diffs.append(metrics.ap(s, g, "micro") - oracles.ap_oracle(s.ravel(), g.ravel()))
        P = (s >= 0.5).astype(int).tolist()
        for mode in ("micro", "macro"):
            diffs.append(metrics.f1(s, g, mode) - oracles.f1_oracle(P, g.tolist(), mode))
        for k in (1, 2, 4):
            diffs.append(metrics.p_at_k(s, g, k) - oracles.p_at_k_oracle(s, g, k))
            diffs.append(metrics.r_at_k(s, g, k) - oracles.r_at_k_oracle(s, g, k))
        counts = np.random.default_rng(seed).choice([3, 50, 51, 999, 1001, 5000], size=g.shape[1])
        for name, val in metrics.bucketed_f1(s, g, counts).items():
            lo, hi = {"rare": (0, 50), "semi_rare": (51, 1000), "common": (1001, np.inf)}[name]
            cols = [j for j in range(g.shape[1]) if lo <= counts[j] <= hi]
            diffs.append(val - oracles.f1_oracle([[r[j] for j in cols] for r in P],
                                                 [[r[j] for j in cols] for r in g.tolist()], "micro"))
        rng = np.random.default_rng(seed)
        pred, tgt = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        diffs.append(metrics.tagging_accuracy(pred, tgt) - sum(int(a == b) for a, b in zip(pred, tgt)) / 50)
        worst = max(worst, max(abs(d) for d in diffs))
    gold = np.array([[1, 1], [0, 0]])
    pred = np.array([[1, 0], [1, 0]])
    hand = (abs(metrics.f1(pred, gold, "micro", binary=True) - 0.5) < 1e-12
            and abs(metrics.f1(pred, gold, "macro", binary=True) - 1 / 3) < 1e-12)
    report(4, worst <= 1e-9 and hand, f"200 instances, max deviation {worst:.1e}; micro .5 / macro 1/3 case {hand}")


def test_criterion_5_raw_codes_extremes():
    vals = []
    for mismatch in (0.0, 1.0):
        c = generate_synthetic(SyntheticSpec(label_mode="codes", specificity_mismatch=mismatch, seed=7))
        assert not set(c.label_space.codes) & {c.ontology.parent[x] for x in c.concept_phrases}
        docs = c.by_split("test")
        pred = np.stack([raw_codes_predict(annotate(d.tokens, c.dictionary), c.label_space) for d in docs])
        gold = np.stack([c.label_space.encode(d.labels) for d in docs])
        vals.append(metrics.f1(pred, gold, "micro", binary=True))
    report(5, vals == [1.0, 0.0], f"micro-F1 mismatch=0: {vals[0]:.4f}, mismatch=1: {vals[1]:.4f}")


def test_criterion_6_augmentation_gap():
    torch.set_num_threads(1)
    t0 = time.time()
    res = augmentation_gap(variants=(1, 5), seeds=(0, 1, 2))
    dt = time.time() - t0
    g1, g5 = res.median_gap(1), res.median_gap(5)
    per = "; ".join(f"V={r.variants} s={r.seed} {r.baseline_f1:.4f}->{r.augmented_f1:.4f}" for r in res.runs)
    ok = g5 >= 2.0 and abs(g1) <= 1.0 and dt < 30 * 60
    report(6, ok, f"median gap V=5 {g5:+.2f} pts, V=1 {g1:+.2f} pts, {dt / 60:.1f} min [{per}]")


def test_criterion_7_scaffold(small_corpus, tmp_path):
    tr, dv, te = (small_corpus.by_split(s) for s in ("train", "dev", "test"))
    t = fit(tr, dv, small_corpus.label_space, tiny_cfg(), quick(), aux=AuxConfig(weight=1.0))
    save_checkpoint(tmp_path / "m.pt", t)
    back = load_checkpoint(tmp_path / "m.pt")
    bare = [type(d)(d.doc_id, d.patient_id, d.tokens, d.labels) for d in te]
    a = evaluate_docs(t.model, t.encoder, te).values
    b = evaluate_docs(back.model, back.encoder, bare).values
    report(7, a == b, f"metrics with and without annotations identical: {a == b}")


def test_criterion_8_overfit_tagging(small_corpus):
    docs = small_corpus.by_split("train")[:20]
    aux = AuxConfig(weight=10.0)
    cfg = ModelConfig(embed_dim=32, conv_dim=16, kernel_size=3, learning_rate=1e-2, dropout=0.0)
    stop = lambda epoch, dev: dev["tagging_accuracy"] + (1 if dev["tagging_accuracy"] >= 0.999 else 0)
    t = fit(docs, docs, small_corpus.label_space, cfg, quick(max_epochs=150, patience=150), aux=aux, score_fn=stop)
    p, y = predict_spans(t.model, t.aux_head, aux, batches(encode_all(t.encoder, docs), 64))
    acc = metrics.tagging_accuracy(p, y)
    report(8, acc >= 0.99, f"tagging accuracy {acc:.4f} on {len(y)} spans of 20 documents")


def test_criterion_9_early_stopping(small_corpus):
    tr, dv = small_corpus.by_split("train"), small_corpus.by_split("dev")
    rigged = lambda epoch, dev: [0.3, 0.6][epoch - 1] if epoch <= 2 else 0.5
    t = fit(tr, dv, small_corpus.label_space, tiny_cfg(), quick(max_epochs=200, patience=10), score_fn=rigged)
    non_improving = t.result.epochs_run - t.result.best_epoch
    s = EarlyStopping(10)
    fired = []
    for v in [0.7] + [0.7] * 10:
        s.step(v)
        fired.append(s.should_stop)
    ok = non_improving == 10 and t.result.stopped_early and fired.index(True) == 10
    report(9, ok, f"stopped at epoch {t.result.epochs_run} after {non_improving} non-improving epochs "
                  f"(best epoch {t.result.best_epoch})")


def test_criterion_10_lambda_sweep():
    c = generate_synthetic(SyntheticSpec(docs_per_split=(100, 30, 30), seed=2, variants_per_concept=3))
    cfg = ModelConfig(embed_dim=32, conv_dim=16, kernel_size=5, learning_rate=1e-2)
    trainer = TrainerConfig(max_epochs=30, patience=30, criterion="f1_micro", min_df=1)
    rows = lambda_sweep(c.by_split("train"), c.by_split("dev"), c.label_space, c.ontology, LAMBDA_GRID,
                        cfg, trainer, AuxConfig(head="linear", share_point="pre_convolution"))
    tags = [r["tagging_last_epoch"] for r in rows if r["lambda"] >= 0.1]
    spread = max(tags) - min(tags)
    soft = "within" if spread < 0.01 else "NOT within (soft check, reported only)"
    line = (f"{len(rows)} rows for lambda grid {[r['lambda'] for r in rows]}; tagging accuracy spread over "
            f"lambda>=0.1 = {spread:.4f}, {soft} 0.01")
    report(10, len(rows) == 9 and [r["lambda"] for r in rows] == list(LAMBDA_GRID), line)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
