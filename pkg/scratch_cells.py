"""Four-cell diagnostic: feature source x standardization, RoBERT on XOR."""
import sys, time
import numpy as np

from hierdoc.encoder import EncoderConfig, fine_tune_segments, init_encoder_params
from hierdoc.experiment import extract_features
from hierdoc.docmodel import DocModelConfig, train_document_model, predict_documents
from hierdoc.synthetic import TaskSpec, gen_distributed_evidence
from hierdoc.text import build_documents, records_from_rows
from hierdoc.training import OptimizerSettings, evaluate_accuracy

spec = TaskSpec(kind="distributed_evidence", num_train=400, num_valid=100, num_test=200,
                doc_length=1000, filler_vocab=1000, segment_size=200, stride=50,
                marker_width=16, seed=0)
docs, vocab, _, _ = build_documents(records_from_rows(gen_distributed_evidence(spec)), max_vocab=2000)
train = [d for d in docs if d.split == "train"]
valid = [d for d in docs if d.split == "valid"]
test = [d for d in docs if d.split == "test"]

config = EncoderConfig(layers=2, heads=2, d_model=32, d_ff=64, max_positions=202,
                       vocab_size=vocab.size, num_classes=2, dropout=0.0)

def features_for(params):
    return (extract_features(params, config, train, "H", 200, 50),
            extract_features(params, config, valid, "H", 200, 50),
            extract_features(params, config, test, "H", 200, 50))

def standardize(tr, va, te):
    all_rows = np.concatenate([s.features for s in tr])
    mu = all_rows.mean(axis=0); sd = all_rows.std(axis=0) + 1e-6
    out = []
    for seqs in (tr, va, te):
        zs = []
        for s in seqs:
            z = s.__class__(doc_id=s.doc_id, features=((s.features - mu) / sd).astype(np.float32),
                            label=s.label, source_kind=s.source_kind, source_hash=s.source_hash)
            zs.append(z)
        out.append(zs)
    return out

def robert(tr, va, te, lr, tag, epochs=30):
    t0 = time.time()
    dcfg = DocModelConfig(kind="robert", input_dim=32, num_classes=2, lstm_dim=100)
    res = train_document_model(tr, va, dcfg, OptimizerSettings(kind="adam", lr=lr),
                               epochs=epochs, batch_size=32, seed=0, early_stop_patience=epochs)
    preds = predict_documents(res.params, dcfg, te)
    acc = evaluate_accuracy(preds, [s.label for s in te])
    print(f"  {tag} lr={lr}: test {acc:.3f} valid {res.best_valid_accuracy:.3f} ({time.time()-t0:.0f}s)", flush=True)
    return acc

params_u = init_encoder_params(config, np.random.default_rng(1))
fu = features_for(params_u)
print("== untrained features", flush=True)
robert(*fu, 1e-3, "raw")
robert(*standardize(*fu), 1e-3, "standardized")

t0 = time.time()
ft = fine_tune_segments(train, valid, config, OptimizerSettings(kind="adam", lr=1e-3),
                        epochs=1, segment_size=200, stride=50, batch_size=64, seed=1)
print(f"== fine-tuned 1 epoch ({time.time()-t0:.0f}s)", flush=True)
ff = features_for(ft.params)
robert(*ff, 1e-3, "raw")
robert(*standardize(*ff), 1e-3, "standardized")
