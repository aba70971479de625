//! Quick end-to-end checks behind `robcomp selftest`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robcomp_core::mscg::{run_rmscg, RmscgConfig};
use robcomp_core::robust_mean::mom_scalar;
use robcomp_core::rosc::{make_schedule, run_rrosc};
use robcomp_core::synthetic::{make_synthetic, NoiseModel, SyntheticOptions};

use crate::error::{HarnessError, Result};

fn check(lines: &mut Vec<String>, ok: &mut bool, name: &str, pass: bool, detail: String) {
    *ok &= pass;
    lines.push(format!("{} {name}: {detail}", if pass { "pass" } else { "FAIL" }));
}

/// Runs the checks; the lines describe each one. Any failure is a solver error.
pub fn selftest() -> Result<Vec<String>> {
    let mut lines = Vec::new();
    let mut ok = true;

    let groups = [1.0, 2.0, 3.0, 1e9, 1e9];
    let m = mom_scalar(&groups, 5)?;
    check(&mut lines, &mut ok, "median of means", m == 3.0, format!("estimate {m}"));

    let opts = SyntheticOptions::new(3, 4, 0.5, NoiseModel::none());
    let inst = make_synthetic(opts, &mut ChaCha8Rng::seed_from_u64(1))?;
    let w0 = vec![0.0; 4];
    let eps0 = inst.gap(&w0);
    let eta = 1.0 / (2.0 * inst.spec.smoothness());
    let cfg = RmscgConfig::theorem1(&inst.spec, eta, eps0, 10)?;
    let run = run_rmscg(&inst.spec, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(2))?;
    let gap = inst.gap(&run.point);
    let target = eps0 / 1024.0;
    check(&mut lines, &mut ok, "restarted mscg", gap <= target, format!("gap {gap:.3e} <= {target:.3e}"));

    let sched = make_schedule(&inst.spec, eps0, eps0 / 16.0, 0.05, 8, 1)?;
    let run = run_rrosc(&inst.spec, &w0, &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(3))?;
    let gap = inst.gap(&run.point);
    let target = eps0 / 16.0;
    check(&mut lines, &mut ok, "restarted rosc", gap <= target, format!("gap {gap:.3e} <= {target:.3e}"));

    if ok {
        Ok(lines)
    } else {
        Err(HarnessError::Solver(lines.join("; ")))
    }
}
