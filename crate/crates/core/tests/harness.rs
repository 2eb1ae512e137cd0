mod common;

use common::{sized_instance, small_instance};
use gtd_core::exact;
use gtd_core::harness::{
    generate_instance, instance_rng, performance_index, rank_order, run_experiment, run_trial, sample_rng, GenConfig,
    Init, TrialConfig,
};
use gtd_core::report::{self, write_experiment};
use gtd_core::{build_problem, AlgorithmSpec, DMatrix, Family, Instance, Mdp, Schedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sparsified_reward_fraction_matches_threshold() {
    // 10 instances of 100 states × 10 actions × 100 next states = 10⁶ rewards.
    let config = GenConfig::default();
    let (mut zeros, mut total) = (0u64, 0u64);
    for i in 0..10 {
        let inst = generate_instance(&config, &mut instance_rng(3, i)).unwrap();
        zeros += inst.mdp.reward().iter().filter(|&&r| r == 0.0).count() as u64;
        total += inst.mdp.reward().len() as u64;
        assert!(inst.mdp.reward().iter().all(|r| *r == 0.0 || (0.2 < r.abs() && r.abs() <= 1.0)));
    }
    let p = 0.2;
    let frac = zeros as f64 / total as f64;
    let sd = (p * (1.0 - p) / total as f64).sqrt();
    assert!((frac - p).abs() <= 3.0 * sd, "{frac}");
}

#[test]
fn generated_instances_are_valid_and_reproducible() {
    for i in 0..5 {
        let config = GenConfig::ranged(9);
        let a = generate_instance(&config, &mut instance_rng(9, i)).unwrap();
        let b = generate_instance(&config, &mut instance_rng(9, i)).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_valid());
        let ns = a.mdp.n_states();
        assert!((3..=100).contains(&ns) && (2..=30).contains(&a.mdp.n_actions()));
        assert_eq!(a.features.q(), ((ns as f64 / 10.0).round() as usize).max(1));
    }
    let other = generate_instance(&GenConfig::ranged(9), &mut instance_rng(9, 7)).unwrap();
    assert_ne!(other, generate_instance(&GenConfig::ranged(9), &mut instance_rng(9, 8)).unwrap());
}

#[test]
fn invalid_generation_configs_are_rejected() {
    let mut rng = instance_rng(0, 0);
    assert!(generate_instance(&GenConfig::fixed(3, 2, 4, 0), &mut rng).is_err());
    assert!(generate_instance(&GenConfig { gamma: 1.0, ..GenConfig::default() }, &mut rng).is_err());
}

#[test]
fn trials_are_deterministic() {
    let (_, pb) = sized_instance(10, 3, 2, 1);
    for family in Family::ALL {
        let spec = AlgorithmSpec::reference(family);
        let trial = TrialConfig::new(10_000, 1000);
        let a = run_trial(&pb, &spec, &trial, &mut sample_rng(1, 0)).unwrap();
        let b = run_trial(&pb, &spec, &trial, &mut sample_rng(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.recorded.len(), 11);
        assert_eq!(a.recorded.last().unwrap().k, 10_000);
        assert!(!a.diverged);
    }
}

#[test]
fn zero_reward_problem_stays_at_the_origin() {
    let (inst, _) = sized_instance(6, 3, 2, 2);
    let n = inst.mdp.n_states() * inst.mdp.n_actions();
    let mdp = Mdp::new(6, 3, inst.mdp.transition().clone(), DMatrix::zeros(n, 6), inst.mdp.gamma()).unwrap();
    let pb = build_problem(&mdp, &inst.target, &inst.behavior, &inst.features).unwrap();
    assert_eq!(exact::theta_star(&pb).unwrap().amax(), 0.0);
    for family in Family::ALL {
        let trace =
            run_trial(&pb, &AlgorithmSpec::reference(family), &TrialConfig::new(2000, 1), &mut sample_rng(0, 0))
                .unwrap();
        assert!(trace.recorded.iter().all(|p| p.error == 0.0 && p.mspbe == 0.0));
        assert_eq!(performance_index(&trace), 0.0);
    }
}

#[test]
fn performance_index_is_the_running_error_sum() {
    let (_, pb) = small_instance(5);
    let spec = AlgorithmSpec::reference(Family::Gtd4);
    let trace = run_trial(&pb, &spec, &TrialConfig::new(5000, 1), &mut sample_rng(5, 0)).unwrap();
    assert_eq!(trace.recorded.len(), 5001);
    let resummed: f64 = trace.recorded.iter().map(|p| p.error).sum::<f64>() / 1000.0;
    assert!((performance_index(&trace) - resummed).abs() <= 1e-9 * resummed.max(1.0));
}

#[test]
fn gaussian_initialisation_is_seeded() {
    let (_, pb) = small_instance(2);
    let spec = AlgorithmSpec::reference(Family::Gtd3);
    let trial = |seed| TrialConfig { tau: 10, record_every: 1, init: Init::Gaussian { scale: 1.0, seed } };
    let a = run_trial(&pb, &spec, &trial(4), &mut sample_rng(0, 0)).unwrap();
    let b = run_trial(&pb, &spec, &trial(4), &mut sample_rng(0, 0)).unwrap();
    let c = run_trial(&pb, &spec, &trial(5), &mut sample_rng(0, 0)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.recorded[0].error, c.recorded[0].error);
    assert!(a.recorded[0].error > 0.0);
}

#[test]
fn divergence_is_recorded_and_ranked_last() {
    let (_, pb) = small_instance(1);
    let reckless = AlgorithmSpec::new(Family::Gtd2, Schedule::Constant(1e6), Schedule::Constant(1.0));
    let trace = run_trial(&pb, &reckless, &TrialConfig::new(10_000, 100), &mut sample_rng(0, 0)).unwrap();
    assert!(trace.diverged);
    assert_eq!(performance_index(&trace), f64::INFINITY);
    assert_eq!(rank_order(&[f64::INFINITY, 3.0, 1.0]), vec![2, 1, 0]);
    assert_eq!(rank_order(&[1.0, 1.0 + 1e-15, 0.5]), vec![2, 0, 1]);
}

#[test]
fn experiments_write_identical_files() {
    let config = GenConfig::fixed(8, 3, 2, 4);
    let specs: Vec<_> = Family::ALL.iter().map(|f| AlgorithmSpec::reference(*f)).collect();
    let trial = TrialConfig::new(2000, 500);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let exp = run_experiment(&config, &specs, 3, &trial, true).unwrap();
        assert!(exp.table.is_consistent());
        write_experiment(dir.path(), &exp).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 2 + 3 * 4);
    for name in names {
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
    let rankings = std::fs::read_to_string(dirs[0].path().join("rankings.csv")).unwrap();
    assert!(rankings.starts_with("algo,rank1,rank2,rank3,rank4\ngtd2,"));
}

#[test]
fn experiment_needs_two_algorithms() {
    let specs = [AlgorithmSpec::reference(Family::Gtd2)];
    assert!(run_experiment(&GenConfig::fixed(5, 2, 2, 0), &specs, 1, &TrialConfig::new(10, 0), false).is_err());
}

#[test]
fn instance_files_round_trip() {
    let (inst, pb) = small_instance(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.txt");
    inst.write(&path).unwrap();
    let back = Instance::read(&path).unwrap();
    assert_eq!(back, inst);
    assert_eq!(exact::theta_star(&back.problem().unwrap()).unwrap(), exact::theta_star(&pb).unwrap());
}

#[test]
fn trace_csv_has_header_and_one_row_per_record() {
    let (_, pb) = small_instance(0);
    let trace = run_trial(
        &pb,
        &AlgorithmSpec::reference(Family::Gtd5),
        &TrialConfig::new(100, 10),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let csv = report::trace_csv(&trace);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "k,error,mspbe");
    assert_eq!(lines.len(), 1 + 11);
    assert!(lines[1].starts_with("0,"));
}
