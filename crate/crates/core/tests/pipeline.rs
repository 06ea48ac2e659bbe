use desdis_core::data::{sample_triplet_batch, synth_dataset, PatchDataset, SynthConfig};
use desdis_core::metrics::{eval_fpr95, eval_matching_map};
use desdis_core::model::{Arch, Checkpoint, DescriptorNet};
use desdis_core::train::{distill_student, run_training, run_training_until, train_teacher, TrainConfig, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

fn small_ds(points: usize, seed: u64) -> PatchDataset {
    synth_dataset(&SynthConfig {
        num_points: points,
        patches_per_point: 3,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_cfg(arch: Arch) -> TrainConfig {
    TrainConfig {
        batch_points: 8,
        epochs: 4,
        ..TrainConfig::desk(arch)
    }
}

#[test]
fn sampler_is_uniform_over_points() {
    let ds = small_ds(20, 1);
    let candidates: Vec<usize> = (0..20).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0f64; 20];
    let batches = 10_000;
    for _ in 0..batches {
        let b = sample_triplet_batch(&ds, &candidates, 5, &mut rng).unwrap();
        let mut seen = b.point_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 5, "a point appeared twice in one batch");
        for (a, p) in b.anchors.iter().zip(&b.positives) {
            assert_ne!(a, p);
            assert_eq!(ds.point_ids()[*a], ds.point_ids()[*p]);
        }
        for id in b.point_ids {
            counts[id] += 1.0;
        }
    }
    let expected = batches as f64 * 5.0 / 20.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // upper 1% point of chi-square with 19 degrees of freedom
    assert!(stat < 36.191, "chi-square statistic {stat} rejects uniformity at p = 0.01");
}

#[test]
fn full_batch_is_a_permutation() {
    let ds = small_ds(12, 2);
    let candidates: Vec<usize> = (0..12).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = sample_triplet_batch(&ds, &candidates, 12, &mut rng).unwrap();
    b.point_ids.sort_unstable();
    assert_eq!(b.point_ids, candidates);
    assert!(sample_triplet_batch(&ds, &candidates, 13, &mut rng).is_err());
}

#[test]
fn desdis8_training_reduces_loss() {
    let ds = synth_dataset(&SynthConfig::default()).unwrap();
    let out = train_teacher(&ds, &TrainConfig::desk(Arch::DesDis(8))).unwrap();
    let log = &out.report.epochs;
    assert_eq!(log.len(), 30);
    assert!(
        log.last().unwrap().loss < log[0].loss,
        "loss went from {} to {}",
        log[0].loss,
        log.last().unwrap().loss
    );
}

#[test]
fn training_is_reproducible() {
    let ds = small_ds(24, 3);
    let cfg = small_cfg(Arch::DesDis(8));
    let a = train_teacher(&ds, &cfg).unwrap();
    let b = train_teacher(&ds, &cfg).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(
        a.state.to_checkpoint().encode().unwrap(),
        b.state.to_checkpoint().encode().unwrap()
    );
}

#[test]
fn zero_weights_match_plain_triplet_training() {
    let ds = small_ds(24, 4);
    let cfg = small_cfg(Arch::DesDis(8));
    let teacher = DescriptorNet::init(Arch::DesDis(16), 99).unwrap();
    let plain = train_teacher(&ds, &cfg).unwrap();
    let distilled = distill_student(&ds, &teacher, &cfg).unwrap();
    assert_eq!(plain.state.net, distilled.state.net);
    for (p, d) in plain.report.epochs.iter().zip(&distilled.report.epochs) {
        assert_eq!(p.loss.to_bits(), d.loss.to_bits());
        assert_eq!(p.student_pos.to_bits(), d.student_pos.to_bits());
        assert!(d.teacher_pos.is_some());
    }
}

#[test]
fn light_weight_distillation_runs() {
    let ds = small_ds(24, 5);
    let teacher = DescriptorNet::init(Arch::Teacher7, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..small_cfg(Arch::DesDis(8)).light_weight()
    };
    let out = distill_student(&ds, &teacher, &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.arch, "desdis-8");
    assert!((0.0..=1.0).contains(&r.fpr95) && (0.0..=1.0).contains(&r.matching_map));
    assert!(r.mean_pos_distance >= 0.0 && r.mean_neg_distance >= 0.0);
    assert_eq!(r.epochs.len(), 1);
}

#[test]
fn resumed_training_continues_identically() {
    let ds = small_ds(24, 6);
    let full_cfg = small_cfg(Arch::DesDis(8)).equal_weight();
    let teacher = DescriptorNet::init(Arch::DesDis(8), 42).unwrap();

    let full = distill_student(&ds, &teacher, &full_cfg).unwrap();
    let fresh = TrainState::fresh(&full_cfg).unwrap();
    let half = run_training_until(&ds, &full_cfg, fresh, Some(&teacher), 2).unwrap();
    assert_eq!(half.state.epochs_done, 2);
    let bytes = half.state.to_checkpoint().encode().unwrap();
    let state = TrainState::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    let resumed = run_training(&ds, &full_cfg, state, Some(&teacher)).unwrap();

    assert_eq!(resumed.state.net, full.state.net);
    assert_eq!(resumed.state.adam, full.state.adam);
    assert_eq!(&full.report.epochs[2..], &resumed.report.epochs[..]);
    assert_eq!(full.report.fpr95, resumed.report.fpr95);
}

#[test]
fn random_descriptors_match_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 20;
    let mut total = 0.0;
    for _ in 0..trials {
        let a = common::random_tensor(&mut rng, &[100, 128]);
        let b = common::random_tensor(&mut rng, &[100, 128]);
        let identity: Vec<usize> = (0..100).collect();
        total += eval_matching_map(&a, &b, &identity).unwrap();
    }
    assert!(total / (trials as f64) < 0.1);
}

#[test]
fn matching_map_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..=16 {
        for _ in 0..5 {
            let a = common::random_tensor(&mut rng, &[n, 4]);
            // targets near a shuffled copy, so both hits and misses occur
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
            let noise = common::random_tensor(&mut rng, &[n, 4]);
            let mut data = vec![0.0; n * 4];
            for i in 0..n {
                for k in 0..4 {
                    data[perm[i] * 4 + k] = a.row(i)[k] + 0.6 * noise.row(i)[k];
                }
            }
            let b = desdis_core::Tensor::new(&[n, 4], data).unwrap();
            let got = eval_matching_map(&a, &b, &perm).unwrap();
            let want = common::brute_force_ap(&a, &b, &perm);
            assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
        }
    }
}

#[test]
fn fpr95_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let p: usize = rand::Rng::gen_range(&mut rng, 1..60);
        let q: usize = rand::Rng::gen_range(&mut rng, 1..60);
        // coarse grid makes ties frequent
        let pos: Vec<f64> = (0..p).map(|_| rand::Rng::gen_range(&mut rng, 0..20) as f64 / 10.0).collect();
        let neg: Vec<f64> = (0..q).map(|_| rand::Rng::gen_range(&mut rng, 0..20) as f64 / 10.0).collect();
        assert_eq!(eval_fpr95(&pos, &neg).unwrap(), common::brute_force_fpr95(&pos, &neg));
    }
}
