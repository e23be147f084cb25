"""Scratch probe v2: standardized marker probes + end-to-end doc-model check."""
import sys, time
import numpy as np

from hierdoc.encoder import EncoderConfig, fine_tune_segments, init_encoder_params
from hierdoc.experiment import extract_features
from hierdoc.docmodel import DocModelConfig, train_document_model, predict_documents
from hierdoc.segment import segment_document
from hierdoc.synthetic import MARKER_A, MARKER_B, TaskSpec, gen_distributed_evidence
from hierdoc.text import build_documents, records_from_rows
from hierdoc.training import OptimizerSettings, evaluate_accuracy

W = int(sys.argv[1]) if len(sys.argv) > 1 else 16
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 2

spec = TaskSpec(kind="distributed_evidence", num_train=400, num_valid=100, num_test=200,
                doc_length=1000, filler_vocab=1000, segment_size=200, stride=50,
                marker_width=W, seed=0)
rows = gen_distributed_evidence(spec)
docs, vocab, _, _ = build_documents(records_from_rows(rows), max_vocab=2000)
train = [d for d in docs if d.split == "train"]
valid = [d for d in docs if d.split == "valid"]
test = [d for d in docs if d.split == "test"]

config = EncoderConfig(layers=2, heads=2, d_model=32, d_ff=64, max_positions=202,
                       vocab_size=vocab.size, num_classes=2, dropout=0.0)
id_a = vocab.token_to_id[MARKER_A]; id_b = vocab.token_to_id[MARKER_B]

def probe(params, subset, tag):
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
    acc = clf.score(sc.transform(X[ntr:]), y[ntr:])
    print(f"{tag}: probe acc {acc:.3f} (majority {np.mean(y[ntr:]==2):.3f})")

def doc_model_acc(params, tag):
    t0 = time.time()
    tr = extract_features(params, config, train, "H", 200, 50)
    va = extract_features(params, config, valid, "H", 200, 50)
    te = extract_features(params, config, test, "H", 200, 50)
    dcfg = DocModelConfig(kind="robert", input_dim=32, num_classes=2, lstm_dim=100)
    res = train_document_model(tr, va, dcfg, OptimizerSettings(kind="adam", lr=1e-3),
                               epochs=30, batch_size=32, seed=0, early_stop_patience=30)
    preds = predict_documents(res.params, dcfg, te)
    acc = evaluate_accuracy(preds, [s.label for s in te])
    print(f"{tag}: robert test acc {acc:.3f} best_valid {res.best_valid_accuracy:.3f} ({time.time()-t0:.0f}s)")

rng = np.random.default_rng(1)
params0 = init_encoder_params(config, rng)
probe(params0, test[:60], f"untrained w={W}")
doc_model_acc(params0, f"untrained w={W}")

t0 = time.time()
result = fine_tune_segments(train, valid, config, OptimizerSettings(kind="adam", lr=1e-3),
                            epochs=EPOCHS, segment_size=200, stride=50, batch_size=64, seed=1)
print(f"fine-tune {EPOCHS}ep: {time.time()-t0:.0f}s "
      f"{[(m['epoch'], None if m['train_loss'] is None else round(m['train_loss'],3)) for m in result.metrics]}")
probe(result.params, test[:60], f"finetuned w={W}")
doc_model_acc(result.params, f"finetuned w={W}")
