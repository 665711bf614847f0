use latplan::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use latplan::harness::eval::evaluate;
use latplan::harness::experiment::{pretrain_stage, rft_stage, splits, ExperimentConfig};
use latplan::model::ModelConfig;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.data.train = 8;
    cfg.data.val = 3;
    cfg.data.heldout = 4;
    cfg.pretrain.epochs = 4;
    cfg.pretrain.batch_size = 4;
    cfg.pretrain.patience = None;
    cfg.pretrain.keep_best = false;
    cfg.rft.epochs = 1;
    cfg.rft.batch_size = 4;
    cfg.with_seed(11)
}

#[test]
fn pretraining_lowers_the_training_loss() {
    let cfg = tiny_config();
    let s = splits(&cfg).unwrap();
    let out = pretrain_stage(&cfg, &s).unwrap();
    // epoch 0 logs the untrained model
    assert_eq!(out.log.len(), 5);
    let (first, last) = (&out.log[0], out.log.last().unwrap());
    assert!(last.total < first.total, "{} -> {}", first.total, last.total);
    assert!(out.log.iter().all(|r| r.val_ade.is_finite() && (0.0..=100.0).contains(&r.val_cr)));
}

#[test]
fn stages_are_reproducible_and_checkpoints_round_trip() {
    let cfg = tiny_config();
    let s = splits(&cfg).unwrap();
    let a = pretrain_stage(&cfg, &s).unwrap();
    let b = pretrain_stage(&cfg, &s).unwrap();
    assert_eq!(a.policy.params, b.policy.params);

    let tuned = rft_stage(&cfg, &a.policy, &s).unwrap();
    assert!(tuned.policy.params.iter().all(|p| p.is_finite()));
    assert_ne!(tuned.policy.params, a.policy.params);
    assert!(tuned.diagnostics.iter().all(|d| d.kl.is_finite() && d.entropy.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rft.ckpt");
    save_checkpoint(&path, &Checkpoint::new(tuned.policy.clone())).unwrap();
    let back = load_checkpoint(&path).unwrap().policy;
    let r1 = evaluate(&tuned.policy, &s.heldout, Some(&cfg.thresholds)).unwrap();
    let r2 = evaluate(&back, &s.heldout, Some(&cfg.thresholds)).unwrap();
    assert_eq!(r1, r2);
}
