mod common;

use etkf_core::twin::run_filter;
use etkf_core::DMatrix;
use etkf_core::dynamics::ModelSystem;
use etkf_lab::montecarlo::{run_monte_carlo_ids, THREADS_ENV};
use etkf_lab::{run_monte_carlo, LabError};

#[test]
fn single_replicate_matches_its_trace() {
    let twin = common::growing("").twin().unwrap();
    let summary = run_monte_carlo(&twin, 1).unwrap();
    let trace = run_filter(&twin, 0).unwrap();
    assert_eq!(summary.replicates, 1);
    for (s, r) in summary.steps.iter().zip(trace.records()) {
        assert_eq!(s.step, r.step);
        assert_eq!(s.mean_e_sq, r.e_sq);
        assert_eq!(s.mean_spread_sq, r.spread_sq);
        assert_eq!(s.mean_ensemble_err_sq, r.ensemble_err_sq);
        assert_eq!(s.sem_e_sq, 0.0);
    }
}

#[test]
fn replicate_order_does_not_change_the_summary() {
    let twin = common::growing("").twin().unwrap();
    let ids: Vec<u64> = (0..16).collect();
    let mut shuffled = ids.clone();
    shuffled.reverse();
    shuffled.swap(3, 9);
    let a = run_monte_carlo_ids(&twin, &ids).unwrap();
    let b = run_monte_carlo_ids(&twin, &shuffled).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(format!("{a:?}"), format!("{:?}", run_monte_carlo(&twin, 16).unwrap()));
}

#[test]
fn thread_cap_does_not_change_the_summary() {
    let twin = common::growing("").twin().unwrap();
    let free = run_monte_carlo(&twin, 12).unwrap();
    std::env::set_var(THREADS_ENV, "1");
    let capped = run_monte_carlo(&twin, 12);
    std::env::remove_var(THREADS_ENV);
    assert_eq!(format!("{free:?}"), format!("{:?}", capped.unwrap()));
}

#[test]
fn standard_error_shrinks_with_replicates() {
    let twin = common::contracting("").twin().unwrap();
    let small = run_monte_carlo(&twin, 400).unwrap();
    let large = run_monte_carlo(&twin, 800).unwrap();
    let j = twin.cycles;
    let ratio = large.step(j).sem_e_sq / small.step(j).sem_e_sq;
    let expected = std::f64::consts::FRAC_1_SQRT_2;
    assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn failed_replicates_are_reported() {
    let mut twin = common::growing("").twin().unwrap();
    twin.model = ModelSystem::linear(DMatrix::identity(3, 3) * 2000.0).unwrap();
    twin.cycles = 50;
    match run_monte_carlo(&twin, 4) {
        Err(LabError::ReplicateFailures { count, replicate, step, .. }) => {
            assert_eq!(count, 4);
            assert_eq!(replicate, 0);
            assert!(step >= 1);
        }
        other => panic!("expected replicate failures, got {other:?}"),
    }
}

#[test]
fn tail_mean_uses_the_last_steps() {
    let twin = common::growing("").twin().unwrap();
    let s = run_monte_carlo(&twin, 5).unwrap();
    let (mean, _) = s.tail_mean_e_sq(1);
    let last = s.step(twin.cycles).mean_e_sq;
    assert!((mean - last).abs() <= 1e-12 * last);
    let (all, _) = s.tail_mean_e_sq(usize::MAX);
    let direct: f64 = s.cycles().iter().map(|x| x.mean_e_sq).sum::<f64>() / twin.cycles as f64;
    assert!((all - direct).abs() <= 1e-12 * direct);
}
