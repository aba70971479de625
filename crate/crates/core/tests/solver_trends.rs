use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robcomp_core::mscg::{run_mscg, run_mscg_with, BatchSchedule, Estimator, MscgConfig};
use robcomp_core::noise::TailFamily;
use robcomp_core::rosc::{make_schedule, run_rrosc};
use robcomp_core::synthetic::{make_synthetic, NoiseModel, SyntheticOptions, SyntheticQuadratic};
use robcomp_core::trace::RunOptions;

fn noisy(seed: u64) -> SyntheticQuadratic {
    let noise = NoiseModel::new(TailFamily::StudentT { dof: 2.5 }, 0.1, 0.1);
    make_synthetic(SyntheticOptions::new(5, 20, 0.5, noise), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn linear_batches_drive_the_median_gap_down() {
    let mut at10 = Vec::new();
    let mut at1000 = Vec::new();
    for seed in 0..20 {
        let inst = noisy(500 + seed);
        let eta = 1.0 / (2.0 * inst.spec.smoothness());
        let cfg = MscgConfig::new(&inst.spec, eta, 1000, BatchSchedule::Linear { scale: 1.0 / 0.5 }, Estimator::NonRobust)
            .unwrap();
        let tr = run_mscg(&inst.spec, &[0.0; 20], &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let gap = |t: usize| tr.rows[t - 1].gap.unwrap();
        at10.push(gap(10));
        at1000.push(gap(1000));
    }
    let (a, b) = (median(&mut at10), median(&mut at1000));
    assert!(b * 10.0 <= a, "median gap {a:e} at t=10, {b:e} at t=1000");
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let inst = noisy(7);
    let eta = 1.0 / (2.0 * inst.spec.smoothness());
    let cfg = MscgConfig::new(&inst.spec, eta, 50, BatchSchedule::Constant(4), Estimator::Robust { delta: 0.1 }).unwrap();
    let run = |seed| run_mscg_with(&inst.spec, &[0.0; 20], &cfg, &RunOptions::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).final_point, run(4).final_point);

    let eps0 = inst.gap(&[0.0; 20]);
    let sched = make_schedule(&inst.spec, eps0, eps0 / 4.0, 0.05, 8, 1).unwrap();
    let a = run_rrosc(&inst.spec, &[0.0; 20], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = run_rrosc(&inst.spec, &[0.0; 20], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sample_counts_strictly_increase() {
    let inst = noisy(8);
    let eps0 = inst.gap(&[0.0; 20]);
    let sched = make_schedule(&inst.spec, eps0, eps0 / 4.0, 0.05, 8, 1).unwrap();
    let run = run_rrosc(&inst.spec, &[0.0; 20], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let rows = &run.trace.rows;
    assert!(rows.windows(2).all(|w| w[0].samples < w[1].samples));
    assert!(rows.iter().enumerate().all(|(i, r)| r.iteration == i as u64 + 1));
}
