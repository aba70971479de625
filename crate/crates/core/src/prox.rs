//! Proximal steps for the supported regularizers, with and without a ball
//! constraint around a stage anchor.

use crate::error::{Error, Result};
use crate::linalg;

/// `r(w)`: nothing, `weight·‖w‖₁`, or `(weight/2)·‖w‖₂²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    #[default]
    None,
    L1(f64),
    L2(f64),
}

impl Regularizer {
    pub fn l1(weight: f64) -> Result<Self> {
        let r = Regularizer::L1(weight);
        r.validate().map(|_| r)
    }

    pub fn l2(weight: f64) -> Result<Self> {
        let r = Regularizer::L2(weight);
        r.validate().map(|_| r)
    }

    pub fn weight(&self) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1(w) | Regularizer::L2(w) => w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weight();
        if !w.is_finite() || w < 0.0 {
            return Err(Error::param(format!("regularizer weight must be finite and >= 0, got {w}")));
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1(lam) => lam * w.iter().map(|x| x.abs()).sum::<f64>(),
            Regularizer::L2(lam) => 0.5 * lam * linalg::norm_sq(w),
        }
    }

    /// `argmin_w r(w) + ‖w − v‖² / (2 step)`, in place.
    fn prox_in_place(&self, v: &mut [f64], step: f64) {
        match *self {
            Regularizer::None => {}
            Regularizer::L1(lam) => {
                let t = step * lam;
                for x in v.iter_mut() {
                    *x = soft_threshold(*x, t);
                }
            }
            Regularizer::L2(lam) => linalg::scale(v, 1.0 / (1.0 + step * lam)),
        }
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_step(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param(format!("step size must be finite and > 0, got {eta}")));
    }
    Ok(())
}

/// `argmin_w ⟨grad, w⟩ + ‖w − w_t‖² / (2η) + r(w)` in closed form.
pub fn prox_step(grad: &[f64], w_t: &[f64], eta: f64, r: &Regularizer) -> Result<Vec<f64>> {
    check_step(eta)?;
    if grad.len() != w_t.len() {
        return Err(Error::DimensionMismatch {
            expected: w_t.len(),
            got: grad.len(),
        });
    }
    if !linalg::all_finite(grad) {
        return Err(Error::DivergedGradient);
    }
    let mut v = w_t.to_vec();
    linalg::axpy(-eta, grad, &mut v);
    r.prox_in_place(&mut v, eta);
    Ok(v)
}

pub fn project_ball(w: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let d = linalg::dist(w, center);
    if d <= radius {
        return w.to_vec();
    }
    let s = radius / d;
    w.iter().zip(center).map(|(x, c)| c + s * (x - c)).collect()
}

const BALL_MAX_BISECTIONS: usize = 200;

/// Proximal step restricted to `‖w − w_0‖ ≤ radius` (boundary included).
///
/// With multiplier `τ ≥ 0` on the constraint, the Lagrangian minimizer is a
/// plain prox step with curvature `1/η + τ` around a shifted center, and its
/// distance to `w_0` is nonincreasing in `τ`. The multiplier is found by
/// bisection; the result is projected onto the sphere to absorb rounding.
pub fn prox_step_ball(
    grad: &[f64],
    w_t: &[f64],
    w_0: &[f64],
    eta: f64,
    radius: f64,
    r: &Regularizer,
) -> Result<Vec<f64>> {
    check_step(eta)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param(format!("ball radius must be finite and > 0, got {radius}")));
    }
    if grad.len() != w_t.len() || w_0.len() != w_t.len() {
        return Err(Error::DimensionMismatch {
            expected: w_t.len(),
            got: if grad.len() != w_t.len() { grad.len() } else { w_0.len() },
        });
    }
    if !linalg::all_finite(grad) {
        return Err(Error::DivergedGradient);
    }

    let inv_eta = 1.0 / eta;
    let solve = |tau: f64| -> Vec<f64> {
        let curv = inv_eta + tau;
        let mut v: Vec<f64> = w_t
            .iter()
            .zip(w_0)
            .zip(grad)
            .map(|((wt, w0), g)| (wt * inv_eta + tau * w0 - g) / curv)
            .collect();
        r.prox_in_place(&mut v, 1.0 / curv);
        v
    };

    let free = solve(0.0);
    if linalg::dist(&free, w_0) <= radius {
        return Ok(free);
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut w_hi = solve(hi);
    while linalg::dist(&w_hi, w_0) > radius {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::BallProxFailure(0));
        }
        w_hi = solve(hi);
    }

    // The multiplier is bisected to near machine resolution on the scale of
    // the curvature 1/η + τ. A distance-only stopping rule is not enough: when
    // the path τ ↦ w(τ) runs almost tangent to the sphere, a point at the right
    // distance can still be far from the minimizer.
    for _ in 0..BALL_MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let w_mid = solve(mid);
        if hi - lo <= 1e-14 * (inv_eta + hi) || mid <= lo || mid >= hi {
            return Ok(project_ball(&w_mid, w_0, radius));
        }
        if linalg::dist(&w_mid, w_0) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BallProxFailure(BALL_MAX_BISECTIONS))
}
