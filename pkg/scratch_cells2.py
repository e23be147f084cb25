"""Fine-tune variants: does dropout or small lr preserve/amplify marker salience?"""
import time
import numpy as np

from hierdoc.encoder import EncoderConfig, fine_tune_segments, init_encoder_params
from hierdoc.experiment import extract_features
from hierdoc.docmodel import DocModelConfig, SegmentSequence, train_document_model, predict_documents
from hierdoc.segment import segment_document
from hierdoc.synthetic import MARKER_A, MARKER_B, TaskSpec, gen_distributed_evidence
from hierdoc.text import build_documents, records_from_rows
from hierdoc.training import OptimizerSettings, evaluate_accuracy

spec = TaskSpec(kind="distributed_evidence", num_train=400, num_valid=100, num_test=200,
                doc_length=1000, filler_vocab=1000, segment_size=200, stride=50,
                marker_width=16, seed=0)
docs, vocab, _, _ = build_documents(records_from_rows(gen_distributed_evidence(spec)), max_vocab=2000)
train = [d for d in docs if d.split == "train"]
valid = [d for d in docs if d.split == "valid"]
test = [d for d in docs if d.split == "test"]
id_a = vocab.token_to_id[MARKER_A]; id_b = vocab.token_to_id[MARKER_B]

def make_config(dropout):
    return EncoderConfig(layers=2, heads=2, d_model=32, d_ff=64, max_positions=202,
                         vocab_size=vocab.size, num_classes=2, dropout=dropout)

def probe(params, config, subset):
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler
    feats = extract_features(params, config, subset, "H", 200, 50)
    X, y = [], []
    for doc, seq in zip(subset, feats):
        batch = segment_document(doc, 200, 50)
        for i in range(batch.num_segments):
            row = batch.token_ids[i][batch.mask[i] > 0]
            cls = 0 if np.any(row == id_a) else (1 if np.any(row == id_b) else 2)
            X.append(seq.features[i]); y.append(cls)
    X = np.array(X, dtype=np.float64); y = np.array(y)
    ntr = int(0.8 * len(X))
    sc = StandardScaler().fit(X[:ntr])
    clf = LogisticRegression(max_iter=5000, C=100.0).fit(sc.transform(X[:ntr]), y[:ntr])
    return clf.score(sc.transform(X[ntr:]), y[ntr:])

def standardize(splits):
    all_rows = np.concatenate([s.features for s in splits[0]])
    mu = all_rows.mean(axis=0); sd = all_rows.std(axis=0) + 1e-6
    return [[SegmentSequence(s.doc_id, ((s.features - mu) / sd).astype(np.float32), s.label,
                             s.source_kind, s.source_hash) for s in seqs] for seqs in splits]

def robert(splits, tag):
    tr, va, te = splits
    dcfg = DocModelConfig(kind="robert", input_dim=32, num_classes=2, lstm_dim=100)
    res = train_document_model(tr, va, dcfg, OptimizerSettings(kind="adam", lr=1e-3),
                               epochs=30, batch_size=32, seed=0, early_stop_patience=30)
    preds = predict_documents(res.params, dcfg, te)
    return evaluate_accuracy(preds, [s.label for s in te])

def evaluate(params, config, tag):
    splits = [extract_features(params, config, d, "H", 200, 50) for d in (train, valid, test)]
    scale = float(np.concatenate([s.features for s in splits[0]]).std(axis=0).mean())
    p = probe(params, config, test[:60])
    raw = robert(splits, tag)
    std = robert(standardize(splits), tag)
    print(f"{tag}: probe {p:.3f} | feature-std {scale:.2e} | robert raw {raw:.3f} std {std:.3f}", flush=True)

for (lr, drop, epochs) in [(1e-3, 0.1, 2), (1e-4, 0.0, 2), (1e-4, 0.1, 2)]:
    config = make_config(drop)
    t0 = time.time()
    ft = fine_tune_segments(train, valid, config, OptimizerSettings(kind="adam", lr=lr),
                            epochs=epochs, segment_size=200, stride=50, batch_size=64, seed=1)
    losses = [None if m["train_loss"] is None else round(m["train_loss"], 3) for m in ft.metrics]
    print(f"== lr={lr} dropout={drop} ep={epochs} ({time.time()-t0:.0f}s) losses={losses}", flush=True)
    evaluate(ft.params, make_config(0.0), f"ft lr={lr} drop={drop}")
