use super::*;
use crate::model::{Gradients, MaskMode, ModelConfig, ValueVectorId};

fn cfg() -> ModelConfig {
    ModelConfig { n_layers: 2, d_model: 16, d_ff: 16, n_heads: 2, vocab_size: 12, max_seq_len: 12, rmu_layer: 1, seed: 1, ..Default::default() }
}

fn records() -> Vec<EncodedRecord> {
    (0..6u32)
        .map(|i| EncodedRecord {
            example: Example::new(vec![1, 4 + i, 2], vec![5 + i, 9, 3 + i % 2]),
            paraphrase: Some(vec![10, 9, 3]),
            perturbed: vec![vec![10, 9, 4], vec![10, 9, 5]],
            idk: Some(vec![11, 11]),
        })
        .collect()
}

fn assert_isolated(before: &Parameters, after: &Parameters, mask: &ValueVectorMask) {
    let c = before.config();
    let lay = c.layout();
    let mut changed_inside = false;
    for (i, (a, b)) in before.tensors().iter().zip(after.tensors()).enumerate() {
        for (j, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let inside = (0..c.n_layers).any(|l| {
                i == lay.mlp_value(l) && mask.contains(ValueVectorId::new(l, j / c.d_model).flat(c))
            });
            if inside {
                changed_inside |= x.to_bits() != y.to_bits();
            } else {
                assert_eq!(x.to_bits(), y.to_bits(), "tensor {i} element {j} changed outside the mask");
            }
        }
    }
    assert!(changed_inside, "nothing inside the mask changed");
}

#[test]
fn memorizes_a_single_sequence() {
    let p = Parameters::init(&cfg()).unwrap();
    let seq = [1u32, 7, 3, 8, 2, 6];
    let ex = vec![Example::new(seq[..1].to_vec(), seq[1..].to_vec())];
    let tc = TrainConfig { lr: 1e-2, epochs: 150, batch_size: 1, ..Default::default() };
    let (q, log) = train_lm(&p, &ex, &tc).unwrap();
    assert_eq!(log.steps(), 150);
    assert!(crate::objectives::nll_loss(&q, &ex).unwrap() < 0.01);
    assert_eq!(crate::model::greedy_decode(&q, &seq[..1], 5).unwrap(), seq[1..]);
}

#[test]
fn retain_training_is_deterministic_and_reaches_target() {
    let p = Parameters::init(&cfg()).unwrap();
    let ex: Vec<Example> = records().into_iter().map(|r| r.example).collect();
    let tc = TrainConfig { lr: 1e-2, epochs: 200, batch_size: 4, seed: 3, target: Some(1.0), ..Default::default() };
    let (a, log) = train_full(&p, &ex, &tc).unwrap();
    let (b, _) = train_full(&p, &ex, &tc).unwrap();
    assert_eq!(a, b);
    assert!(log.reached_target);
    assert_eq!(retain_strength(&a, &ex).unwrap(), 1.0);
}

#[test]
fn injection_is_confined_to_the_mask() {
    let p = Parameters::init(&cfg()).unwrap();
    let recs = records();
    let ex: Vec<Example> = recs.iter().map(|r| r.example.clone()).collect();
    let mask = ValueVectorMask::from_flat(p.config(), MaskMode::ValueVector, [1, 5, 17, 30]).unwrap();
    let tc = TrainConfig { lr: 5e-2, epochs: 3, batch_size: 2, ..Default::default() };
    let (q, log) = inject_forget(&p, &ex[..3], &ex[3..], &mask, 2.0, &tc).unwrap();
    assert_isolated(&p, &q, &mask);
    assert_eq!(log.steps(), 6);

    let weights = ValueVectorMask::from_flat(p.config(), MaskMode::IndividualWeight, [0, 33, 300]).unwrap();
    let (q, _) = inject_forget(&p, &ex[..3], &ex[3..], &weights, 2.0, &tc).unwrap();
    let lay = p.layout();
    for (i, (a, b)) in p.tensors().iter().zip(q.tensors()).enumerate() {
        for (j, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let flat = (0..2).find(|&l| i == lay.mlp_value(l)).map(|l| l * 16 * 16 + j);
            if !flat.is_some_and(|f| weights.contains(f)) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn every_objective_respects_the_mask() {
    let p = Parameters::init(&cfg()).unwrap();
    let recs = records();
    let mask = ValueVectorMask::from_flat(p.config(), MaskMode::ValueVector, [2, 3, 20]).unwrap();
    let tc = TrainConfig { lr: 1e-2, epochs: 2, batch_size: 4, target: Some(2.0), ..Default::default() };
    for objective in Objective::ALL {
        let (q, log) = unlearn(&p, &recs, &mask, objective, &ObjectiveConfig::default(), &tc).unwrap();
        assert_isolated(&p, &q, &mask);
        assert_eq!(log.steps(), 4, "{objective}");
        assert!(log.losses.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn zero_step_unlearning_is_identity() {
    let p = Parameters::init(&cfg()).unwrap();
    let mask = ValueVectorMask::full(p.config(), MaskMode::ValueVector);
    let tc = TrainConfig { lr: 1e-12, max_steps: Some(0), target: Some(2.0), ..Default::default() };
    let (q, log) = unlearn(&p, &records(), &mask, Objective::Npo, &ObjectiveConfig::default(), &tc).unwrap();
    assert_eq!(q, p);
    assert_eq!(log.steps(), 0);
}

#[test]
fn npo_unlearning_raises_forget_strength() {
    let p = Parameters::init(&cfg()).unwrap();
    let recs = records();
    let ex: Vec<Example> = recs.iter().map(|r| r.example.clone()).collect();
    let tc = TrainConfig { lr: 1e-2, epochs: 200, batch_size: 6, target: Some(1.0), ..Default::default() };
    let (o, _) = train_full(&p, &ex, &tc).unwrap();
    let fs0 = forget_strength(&o, &ex).unwrap();
    let mask = ValueVectorMask::full(o.config(), MaskMode::ValueVector);
    let utc = TrainConfig { lr: 1e-2, epochs: 30, batch_size: 6, ..Default::default() };
    let (q, log) = unlearn(&o, &recs, &mask, Objective::Npo, &ObjectiveConfig::default(), &utc).unwrap();
    assert!(forget_strength(&q, &ex).unwrap() > fs0);
    assert!(log.reached_target);
}

#[test]
fn distillation_cases() {
    let p = Parameters::init(&cfg()).unwrap();
    let mask = ValueVectorMask::full(p.config(), MaskMode::ValueVector);
    let inputs: Vec<Vec<TokenId>> = records().iter().map(|r| r.example.sequence()).collect();
    let tc = TrainConfig { lr: 1e-2, epochs: 3, batch_size: 2, ..Default::default() };
    let (q, log) = distill_unlearn(&p, &p, &mask, &inputs[..3], &inputs[3..], 2.0, &tc).unwrap();
    assert_eq!(q, p);
    assert_eq!(log.steps(), 0);

    let gold = Parameters::init(&ModelConfig { seed: 2, ..cfg() }).unwrap();
    let sub = ValueVectorMask::from_flat(p.config(), MaskMode::ValueVector, (0..32).step_by(2)).unwrap();
    let tc = TrainConfig { lr: 1e-2, epochs: 40, batch_size: 3, ..Default::default() };
    let (q, log) = distill_unlearn(&p, &gold, &sub, &inputs[..3], &inputs[3..], 2.0, &tc).unwrap();
    assert_isolated(&p, &q, &sub);
    let first: f64 = log.layer_residuals[0].iter().sum();
    let last: f64 = log.layer_residuals.last().unwrap().iter().sum();
    assert!(last < first);
    assert_eq!(log.layer_residuals.len(), 41);
}

#[test]
fn adamw_first_step_and_frozen_entries() {
    let mut p = Parameters::init(&cfg()).unwrap();
    let before = p.clone();
    let c = p.config().clone();
    let mask = ValueVectorMask::from_vectors(&c, [ValueVectorId::new(0, 1)]).unwrap();
    let sel = mask.selection(&c);
    let mut g = Gradients::zeros_like(&p);
    for t in 0..c.layout().n_tensors {
        g.tensor_mut(t).fill(0.5);
    }
    let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.1, 0.0, c.layout().n_tensors);
    opt.step(&mut p, &g, &sel);
    let idx = c.layout().mlp_value(0);
    for (j, (a, b)) in before.tensor(idx).data().iter().zip(p.tensor(idx).data()).enumerate() {
        if j / c.d_model == 1 {
            assert!((a - b - 0.1).abs() < 1e-6);
        } else {
            assert_eq!(a, b);
        }
    }
    for t in 0..c.layout().n_tensors {
        if t != idx {
            assert_eq!(before.tensor(t), p.tensor(t));
        }
    }
}

#[test]
fn log_csv_has_one_row_per_step() {
    let log = TrainLog {
        losses: vec![1.0, 0.5],
        evals: vec![EvalEntry { step: 2, epoch: 0, fs: Some(0.25), rs: None }],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    log.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,loss,fs,rs\n1,1,,\n2,0.5,0.25,\n");
}
