//! File-level pipeline behaviour: determinism, manifests, missing inputs.

mod common;

use common::{config, snapshot};
use kgalign::experiment::*;
use kgalign::infusion::digest_bytes;
use kgalign::Error;

#[test]
fn toy_pipeline_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c1 = Pipeline::new(config("toy.json"), a.path()).unwrap().run_all().unwrap();
    let c2 = Pipeline::new(config("toy.json"), b.path()).unwrap().run_all().unwrap();
    assert_eq!(c1, c2);
    let (s1, s2) = (snapshot(a.path()), snapshot(b.path()));
    assert!(s1.contains_key(COMPARE_CSV) && s1.contains_key(ALIGNED) && s1.contains_key("manifests/compare.json"));
    assert_eq!(s1, s2);

    let csv = std::fs::read_to_string(a.path().join(COMPARE_CSV)).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..4], ["model", "subset", "n", "EM"]);
    let delta = csv.lines().find(|l| l.starts_with("delta,all")).unwrap();
    assert_eq!(delta.split(',').count(), header.len());
}

#[test]
fn seed_override_changes_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut other = config("toy.json");
    other.seed += 1;
    Pipeline::new(config("toy.json"), a.path()).unwrap().gen_kg().unwrap();
    let m = Pipeline::new(other, b.path()).unwrap().gen_kg().unwrap();
    assert_ne!(snapshot(a.path())[GRAPH], snapshot(b.path())[GRAPH]);
    assert_eq!(m.seed, config("toy.json").seed + 1);
}

#[test]
fn evaluate_rerun_is_identical_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(config("toy.json"), dir.path()).unwrap();
    p.run_all().unwrap();
    let before = snapshot(dir.path());
    let m = p.evaluate(&Arm::BOTH).unwrap();
    assert_eq!(snapshot(dir.path()), before);
    for (name, hash) in &m.inputs {
        assert_eq!(&before[name], hash, "{name}");
    }
    assert_eq!(m.outputs[&Arm::Aligned.report()], before[&Arm::Aligned.report()]);
}

#[test]
fn missing_artifacts_name_their_producer() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(config("toy.json"), dir.path()).unwrap();
    let producer_of = |r: Result<Manifest, Error>| match r {
        Err(Error::Missing { producer, .. }) => producer,
        other => panic!("expected a missing artifact, got {other:?}"),
    };
    assert_eq!(producer_of(p.gen_qa()), "gen-kg");
    p.gen_kg().unwrap();
    assert_eq!(producer_of(p.train_baseline()), "gen-qa");
    p.gen_qa().unwrap();
    assert_eq!(producer_of(p.train_baseline()), "pretrain");
    assert_eq!(producer_of(p.finetune()), "train-kge");
    p.train_kge().unwrap();
    assert_eq!(producer_of(p.finetune()), "train-align");
    assert_eq!(producer_of(p.evaluate(&[Arm::Baseline])), "train-baseline");
    assert!(matches!(p.compare(), Err(Error::Missing { producer, .. }) if producer == "evaluate"));
}

#[test]
fn bundled_configs_validate() {
    for name in ["toy.json", "co.json"] {
        let c = config(name);
        assert!(c.synth_config().is_some());
        assert!(!c.templates().unwrap().is_empty());
        assert_eq!(c.hash(), config(name).hash());
    }
}

#[test]
fn manifests_record_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("toy.json");
    let p = Pipeline::new(cfg.clone(), dir.path()).unwrap();
    let m = p.gen_kg().unwrap();
    assert_eq!(m.command, "gen-kg");
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.outputs[GRAPH], digest_bytes(&std::fs::read(dir.path().join(GRAPH)).unwrap()));
    let on_disk: Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifests/gen-kg.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
}

#[test]
fn without_name_collisions_the_arms_are_close() {
    // Same experiment as the CO config, but every label is unambiguous: the
    // question text alone determines the answer.
    let mut cfg = config("co.json");
    if let GraphSource::Synthetic(s) = &mut cfg.graph {
        s.collision_pairs = 0;
    }
    let dir = tempfile::tempdir().unwrap();
    let c = Pipeline::new(cfg, dir.path()).unwrap().run_all().unwrap();
    assert_eq!(c.collision.n, 0);
    assert!(c.overall.delta.em.abs() <= 0.05, "{:?}", c.overall);
}
