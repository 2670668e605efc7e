//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with the measured figure (visible under `--nocapture`).
//!
//! Run with `cargo test -p sccl-core --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::oracle::BruteStats;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sccl_core::ablation::{run_ablation, Variant};
use sccl_core::capsule::{affine_predict, dynamic_routing, init_affine_weights};
use sccl_core::corpus::{load_corpus, split_train_test};
use sccl_core::embedding::{Vocab, VocabLevel};
use sccl_core::gru::{gru_sequence, gru_step_traced, init_gru_matrices, Direction, GruVars};
use sccl_core::lexicon::{build_stats, expand_lexicon, pmi, so_pmi, tf_idf, Lexicon};
use sccl_core::metrics::Metrics;
use sccl_core::model::{
    build_params, encode_doc, forward_doc, loss_var, train, EncodedDoc, ModelConfig, TapeBinds,
    TrainOptions,
};
use sccl_core::tensor::{
    finite_difference_check, to_bytes, ClosureDiffFn, ParamStore, Tape, Tensor,
};

/// Toy-dimension fixture: config, parameter names and shapes, one document.
fn toy_model_fixture() -> (ModelConfig, Vec<String>, Vec<Tensor>, EncodedDoc) {
    let cfg = ModelConfig::toy();
    let (corpus, lex) = common::learnable_corpus();
    let vc = Vocab::build(&corpus, VocabLevel::Char, 1);
    let seq_docs: Vec<_> = corpus
        .docs
        .iter()
        .map(|d| {
            let words = sccl_core::lexicon::extract_sentiment_sequence(d, &lex).words;
            sccl_core::corpus::LabeledDoc::new(words, d.label)
        })
        .collect();
    let vw = Vocab::build(&sccl_core::corpus::Corpus { docs: seq_docs }, VocabLevel::Word, 1);
    let params = build_params(&cfg, vc.size(), vw.size()).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let tensors: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().value.clone()).collect();
    let enc = encode_doc(&corpus.docs[7], Some(&lex), &vc, &vw);
    (cfg, names, tensors, enc)
}

fn store_from(names: &[String], tensors: &[Tensor]) -> ParamStore {
    let mut store = ParamStore::new();
    for (n, t) in names.iter().zip(tensors) {
        store.insert(n.clone(), t.clone());
    }
    store
}

#[test]
fn criterion_gradient_correctness() {
    let start = Instant::now();
    let (cfg, names, shapes, enc) = toy_model_fixture();
    // Check at a generic-scale random point: the training init puts the
    // char embeddings at +-0.05, which squash attenuates quadratically and
    // leaves the gate-matrix gradients around 1e-9, below what central
    // differences at h=1e-5 can resolve. The adjoints are the same code at
    // any point; this one keeps every nonzero gradient two decades above
    // the difference noise.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tensors: Vec<Tensor> = shapes
        .iter()
        .map(|t| Tensor::uniform(t.shape(), -0.8, 0.8, &mut rng))
        .collect();

    let value_of = |ts: &[Tensor]| -> sccl_core::Result<f64> {
        let store = store_from(&names, ts);
        let mut tape = Tape::new();
        let binds = TapeBinds::bind(&mut tape, &store);
        let out = forward_doc(&mut tape, &binds, &enc, &cfg)?;
        let loss = loss_var(&mut tape, &out, enc.label)?;
        Ok(tape.value(loss).item())
    };
    let f = ClosureDiffFn {
        value: value_of,
        grads: |ts: &[Tensor]| {
            let store = store_from(&names, ts);
            sccl_core::model::doc_loss_and_grads(&store, &enc, &cfg).map(|(_, g)| g)
        },
    };
    let report = finite_difference_check(&f, &tensors, 1e-5).unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.max_rel_err < 1e-4,
        "max relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(elapsed.as_secs() < 60, "gradient check took {elapsed:?}");
    println!(
        "[PASS] gradient correctness: {} parameter entries, max rel err {:.3e} in {elapsed:?}",
        report.checked, report.max_rel_err
    );
}

#[test]
fn criterion_routing_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..100 {
        let n_in = 2 + (case % 5);
        let n_out = 2 + (case % 3);
        let d_in = 2 + (case % 4);
        let d_out = 2 + ((case / 3) % 4);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::uniform(&[n_in, d_in], -1.5, 1.5, &mut rng));
        let w = tape.constant(init_affine_weights(n_in, n_out, d_out, d_in, false, &mut rng));
        let preds = affine_predict(&mut tape, u, w).unwrap();
        let out = dynamic_routing(&mut tape, &preds, 3).unwrap();
        for c in &out.couplings {
            for i in 0..n_in {
                let row = &c.data()[i * n_out..(i + 1) * n_out];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "coupling row sums to {sum}");
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
        for &v in &out.capsules {
            let norm = tape.value(v).squared_norm().sqrt();
            assert!((0.0..1.0).contains(&norm), "output capsule norm {norm}");
        }
    }
    // squash((3,4)) = (15/26, 20/26)
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let v = tape.squash(s).unwrap();
    assert!((tape.value(v).data()[0] - 15.0 / 26.0).abs() < 1e-12);
    assert!((tape.value(v).data()[1] - 20.0 / 26.0).abs() < 1e-12);
    println!("[PASS] routing invariants: 100 instances, couplings normalized, squash(3,4) exact");
}

#[test]
fn criterion_gru_fidelity() {
    // zero weights: h = 0.5 * h_prev within 1e-15
    let (d, e) = (4, 3);
    let zeros = [Tensor::zeros(&[d, d + e]), Tensor::zeros(&[d, d + e]), Tensor::zeros(&[d, d + e])];
    let mut tape = Tape::new();
    let p = GruVars {
        w_update: tape.param(zeros[0].clone()),
        w_reset: tape.param(zeros[1].clone()),
        w_cand: tape.param(zeros[2].clone()),
        bias: None,
    };
    let h_prev_vals = vec![0.5, -1.25, 0.3, 2.0];
    let h_prev = tape.constant(Tensor::vector(h_prev_vals.clone()));
    let x = tape.constant(Tensor::vector(vec![0.7, -0.1, 0.9]));
    let trace = gru_step_traced(&mut tape, x, h_prev, &p).unwrap();
    for (got, want) in tape.value(trace.h).data().iter().zip(&h_prev_vals) {
        assert!((got - 0.5 * want).abs() <= 1e-15, "{got} vs {}", 0.5 * want);
    }

    // backward equals row-reversed forward over row-reversed input, bit-identical
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ws = init_gru_matrices(3, 2, &mut rng);
    let xs = Tensor::uniform(&[6, 2], -1.0, 1.0, &mut rng);
    let mut rev_data = Vec::new();
    for t in (0..6).rev() {
        rev_data.extend_from_slice(&xs.data()[t * 2..(t + 1) * 2]);
    }
    let rev = Tensor::new(vec![6, 2], rev_data).unwrap();
    let mut tape = Tape::new();
    let p = GruVars {
        w_update: tape.param(ws[0].clone()),
        w_reset: tape.param(ws[1].clone()),
        w_cand: tape.param(ws[2].clone()),
        bias: None,
    };
    let xv = tape.constant(xs);
    let rv = tape.constant(rev);
    let bwd = gru_sequence(&mut tape, xv, &p, Direction::Backward).unwrap();
    let fwd_rev = gru_sequence(&mut tape, rv, &p, Direction::Forward).unwrap();
    let b = tape.value(bwd);
    let f = tape.value(fwd_rev);
    for t in 0..6 {
        for i in 0..3 {
            assert_eq!(b.get2(t, i).to_bits(), f.get2(5 - t, i).to_bits());
        }
    }
    println!("[PASS] gru fidelity: zero-weight halving exact, direction identity bit-exact");
}

#[test]
fn criterion_lexicon_oracle_equivalence() {
    let corpus = common::planted_corpus();
    let docs: Vec<Vec<String>> = corpus.docs.iter().map(|d| d.tokens.clone()).collect();
    let brute = BruteStats::new(&docs);
    assert_eq!(brute.n_docs(), 50);

    let stats = build_stats(&corpus, 1).unwrap();
    assert_eq!(stats.n_docs(), 50);

    let vocab = brute.vocab();
    // counting statistics
    for w in &vocab {
        assert_eq!(stats.doc_freq(w).unwrap() as usize, brute.doc_freq(w), "doc_freq({w})");
        assert_eq!(stats.term_freq(w).unwrap() as usize, brute.term_freq(w), "term_freq({w})");
    }
    for w1 in &vocab {
        for w2 in &vocab {
            if w1 < w2 {
                assert_eq!(stats.cooc(w1, w2).unwrap() as usize, brute.cooc(w1, w2), "cooc({w1},{w2})");
            }
        }
    }
    // tf-idf within 1e-12
    let scored: std::collections::HashMap<String, f64> = tf_idf(&stats).into_iter().collect();
    for w in &vocab {
        assert!((scored[w] - brute.tf_idf(w)).abs() < 1e-12, "tf_idf({w})");
    }
    // pmi and so-pmi within 1e-12
    let seeds = common::planted_seeds();
    let pos: Vec<&str> = seeds.pos.iter().map(|s| s.as_str()).collect();
    let neg: Vec<&str> = seeds.neg.iter().map(|s| s.as_str()).collect();
    for w1 in &vocab {
        for w2 in &vocab {
            assert!((pmi(w1, w2, &stats).unwrap() - brute.pmi(w1, w2)).abs() < 1e-12);
        }
        let got = so_pmi(w1, &seeds, &stats).unwrap();
        assert_eq!(got.skipped_seeds, 0);
        assert!((got.value - brute.so_pmi(w1, &pos, &neg)).abs() < 1e-12, "so_pmi({w1})");
    }

    // expansion adds exactly n_pos + n_neg, planted word comes out positive
    let base = Lexicon::new();
    let (expanded, report) = expand_lexicon(&base, &seeds, &stats, 3, 3).unwrap();
    assert_eq!(expanded.len(), 6);
    assert_eq!(report.added_pos, 3);
    assert_eq!(report.added_neg, 3);
    let good = expanded.get("goodword").expect("planted positive word admitted");
    assert_eq!(good.polarity, 1);
    // the oracle agrees it is the strongest positive candidate
    let best = vocab
        .iter()
        .filter(|w| !seeds.contains(w))
        .map(|w| (w.clone(), brute.so_pmi(w, &pos, &neg)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert_eq!(best.0, "goodword");
    println!(
        "[PASS] lexicon oracle equivalence: {} words vs brute force within 1e-12, expansion exact",
        vocab.len()
    );
}

#[test]
fn criterion_learning_sanity() {
    let start = Instant::now();
    let (corpus, lex) = common::learnable_corpus();
    let mut cfg = ModelConfig::toy();
    cfg.seed = 0;
    cfg.optimizer.lr = 1e-3;
    cfg.epochs = 300;
    cfg.batch_size = 2;
    let trained = train(&corpus, Some(&lex), &cfg, &TrainOptions::default()).unwrap();

    for h in &trained.history {
        assert!(h.mean_loss.is_finite(), "loss diverged at epoch {}", h.epoch);
    }
    let final_loss = trained.history.last().unwrap().mean_loss;
    assert!(final_loss < 0.05, "final training loss {final_loss}");

    let metrics = sccl_core::model::evaluate(
        &trained.params,
        &corpus,
        Some(&lex),
        &trained.vocab_char,
        &trained.vocab_word,
        &cfg,
    )
    .unwrap();
    assert_eq!(metrics.accuracy, 1.0, "training accuracy {}", metrics.accuracy);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "training took {elapsed:?}");
    println!(
        "[PASS] learning sanity: 100% train accuracy, final loss {final_loss:.4} in {elapsed:?}"
    );
}

#[test]
fn criterion_determinism() {
    let (corpus, lex) = common::learnable_corpus();
    let mut cfg = ModelConfig::toy();
    cfg.epochs = 3;
    let a = train(&corpus, Some(&lex), &cfg, &TrainOptions::default()).unwrap();
    let b = train(&corpus, Some(&lex), &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(to_bytes(&a.params), to_bytes(&b.params), "checkpoints differ across runs");

    let mut abl_cfg = cfg.clone();
    abl_cfg.epochs = 2;
    let table = run_ablation(
        &corpus,
        Some(&lex),
        None,
        &abl_cfg,
        &[Variant::Sccl, Variant::Sccl],
        0.2,
    )
    .unwrap();
    assert_eq!(table.rows[0].metrics, table.rows[1].metrics, "repeated variant rows differ");
    println!("[PASS] determinism: byte-identical checkpoints, identical repeated ablation rows");
}

#[test]
fn criterion_schema_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.tsv");
    std::fs::write(&train_path, common::table_one_training_lines()).unwrap();
    let corpus = load_corpus(&train_path).unwrap();
    assert_eq!(corpus.len(), 40133);
    assert_eq!(corpus.class_counts(), [13993, 6697, 5348, 5978, 3167, 4950]);

    let (train_split, test_split) = split_train_test(&corpus, 0.1, 0).unwrap();
    assert_eq!(test_split.len(), 4013);
    assert_eq!(train_split.len(), 40133 - 4013);

    let target_path = dir.path().join("target.tsv");
    std::fs::write(&target_path, common::table_one_target_lines()).unwrap();
    let target = load_corpus(&target_path).unwrap();
    assert_eq!(target.len(), 2000);
    assert_eq!(target.class_counts(), [700, 200, 300, 300, 200, 300]);
    println!("[PASS] schema fidelity: 40133-doc counts, 4013-doc split, 2000-doc target");
}

#[test]
fn criterion_metrics_fixture() {
    // 12 predictions with the confusion worked out by hand:
    // classes 0,2,4 get both right; classes 1,3,5 each lose one example
    // (to 2, 0, and 4 respectively)
    let pairs = vec![
        (0, 0), (0, 0),
        (1, 1), (2, 1),
        (2, 2), (2, 2),
        (3, 3), (0, 3),
        (4, 4), (4, 4),
        (5, 5), (4, 5),
    ];
    let m = Metrics::from_pairs(&pairs);
    assert_eq!(m.accuracy, 9.0 / 12.0);
    // hand values: P=2/3,R=1 for classes 0,2,4; P=1,R=1/2 for classes 1,3,5
    let f_a = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
    let f_b = 2.0 * 1.0 * 0.5 / (1.0 + 0.5);
    assert_eq!(m.macro_f1, (3.0 * f_a + 3.0 * f_b) / 6.0);
    let expected_confusion = {
        let mut c = [[0usize; 6]; 6];
        c[0][0] = 2;
        c[1][1] = 1;
        c[1][2] = 1;
        c[2][2] = 2;
        c[3][3] = 1;
        c[3][0] = 1;
        c[4][4] = 2;
        c[5][5] = 1;
        c[5][4] = 1;
        c
    };
    assert_eq!(m.confusion, expected_confusion);
    println!("[PASS] metrics fixture: hand-computed accuracy and macro-F1 reproduced exactly");
}
