"""Criterion-scale calibration, layers=1: all decision cells."""
import time
import numpy as np

from hierdoc.encoder import EncoderConfig, fine_tune_segments, init_encoder_params
from hierdoc.experiment import extract_features, voting_baselines
from hierdoc.docmodel import DocModelConfig, SegmentSequence, train_document_model, predict_documents
from hierdoc.synthetic import TaskSpec, gen_distributed_evidence
from hierdoc.text import build_documents, records_from_rows
from hierdoc.training import OptimizerSettings, PlateauSchedule, evaluate_accuracy

spec = TaskSpec(kind="distributed_evidence", num_train=2000, num_valid=250, num_test=500,
                doc_length=1000, filler_vocab=1000, segment_size=200, stride=50,
                marker_width=16, seed=0)
t0 = time.time()
docs, vocab, _, _ = build_documents(records_from_rows(gen_distributed_evidence(spec)), max_vocab=2000)
train = [d for d in docs if d.split == "train"]
valid = [d for d in docs if d.split == "valid"]
test = [d for d in docs if d.split == "test"]
print(f"data: {time.time()-t0:.0f}s", flush=True)

def cfg(drop):
    return EncoderConfig(layers=1, heads=2, d_model=32, d_ff=64, max_positions=202,
                         vocab_size=vocab.size, num_classes=2, dropout=drop)

def features(params):
    t0 = time.time()
    out = [extract_features(params, cfg(0.0), d, "H", 200, 50) for d in (train, valid, test)]
    print(f"  extract: {time.time()-t0:.0f}s scale={np.concatenate([s.features for s in out[0]]).std(axis=0).mean():.2e}", flush=True)
    return out

def standardize(splits):
    all_rows = np.concatenate([s.features for s in splits[0]])
    mu = all_rows.mean(axis=0); sd = all_rows.std(axis=0) + 1e-6
    return [[SegmentSequence(s.doc_id, ((s.features - mu) / sd).astype(np.float32), s.label,
                             s.source_kind, s.source_hash, s.doc_length) for s in seqs] for seqs in splits]

def run_model(kind, splits, tag, seed=0):
    tr, va, te = splits
    t0 = time.time()
    if kind == "robert":
        dcfg = DocModelConfig(kind="robert", input_dim=32, num_classes=2, lstm_dim=100)
        settings = OptimizerSettings(kind="adam", lr=1e-3)
        plateau = PlateauSchedule(lr=settings.lr)
    else:
        dcfg = DocModelConfig(kind="tobert", input_dim=32, num_classes=2, tobert_dim=64,
                              tobert_heads=4, tobert_ff=128, use_position_embeddings=False,
                              max_segments=20, dropout=0.0)
        settings = OptimizerSettings(kind="adam_weight_decay", lr=1e-3, weight_decay=0.01,
                                     warmup_fraction=0.1)
        plateau = None
    res = train_document_model(tr, va, dcfg, settings, epochs=30, batch_size=32, seed=seed,
                               plateau=plateau, early_stop_patience=30)
    preds = predict_documents(res.params, dcfg, te)
    acc = evaluate_accuracy(preds, [s.label for s in te])
    print(f"  {kind}[{tag}] seed{seed}: test {acc:.3f} valid {res.best_valid_accuracy:.3f} ({time.time()-t0:.0f}s)", flush=True)
    return acc

print("== untrained", flush=True)
pu = init_encoder_params(cfg(0.0), np.random.default_rng(1))
fu = features(pu)
run_model("robert", fu, "untrained raw")
run_model("robert", standardize(fu), "untrained std")
run_model("robert", standardize(fu), "untrained std", seed=1)
run_model("tobert", standardize(fu), "untrained std")

print("== fine-tune dropout=0.1 lr=1e-3 1ep", flush=True)
t0 = time.time()
ft = fine_tune_segments(train, valid, cfg(0.1), OptimizerSettings(kind="adam", lr=1e-3),
                        epochs=1, segment_size=200, stride=50, batch_size=64, seed=1)
print(f"  ft: {time.time()-t0:.0f}s losses={[None if m['train_loss'] is None else round(m['train_loss'],3) for m in ft.metrics]}", flush=True)
ff = features(ft.params)
run_model("robert", ff, "ft raw")
run_model("robert", standardize(ff), "ft std")
run_model("robert", standardize(ff), "ft std", seed=1)
run_model("tobert", standardize(ff), "ft std")

pt = extract_features(ft.params, cfg(0.0), test, "P", 200, 50)
print("voting (ft P):", voting_baselines(pt), flush=True)
