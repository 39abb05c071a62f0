use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::lagrangian::Lagrangian;
use crate::geometry::Domain;
use crate::linalg::{central_difference, dot, norm};

/// Slack below which an inequality counts as violated.
pub const ASSUMPTION_TOL: f64 = 1e-9;

/// Worst sampled slack of each structural inequality; negative means violated.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub max_speed: f64,
    /// `C (1 + |v|^2) - |D_x L|`.
    pub state_growth_slack: f64,
    /// `C (1 + |v|) - |D_v L|`.
    pub velocity_growth_slack: f64,
    /// `L - (c1 |v|^2 - c0)`.
    pub coercivity_slack: f64,
    /// `(L(v) + L(w)) / 2 - L((v + w) / 2)`.
    pub convexity_slack: f64,
    pub coercivity_violations: usize,
    /// Worst relative mismatch between the declared gradients and central
    /// differences; absent for nonsmooth Lagrangians.
    pub gradient_error: Option<f64>,
    pub passed: bool,
}

impl AssumptionReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |slack: f64, what: &str| {
            if slack < -ASSUMPTION_TOL {
                out.push(format!("{what} violated (worst slack {slack:.3e})"));
            }
        };
        check(self.state_growth_slack, "state gradient growth");
        check(self.velocity_growth_slack, "velocity gradient growth");
        check(self.coercivity_slack, "coercivity");
        check(self.convexity_slack, "convexity in velocity");
        out
    }
}

pub fn check_assumptions(lagrangian: &dyn Lagrangian, domain: &Domain, samples: usize) -> AssumptionReport {
    check_assumptions_with(lagrangian, domain, samples, None, 0)
}

/// Samples states in the domain and velocities up to `max_speed` (default:
/// well past the radius where coercivity must take over).
pub fn check_assumptions_with(
    lagrangian: &dyn Lagrangian,
    domain: &Domain,
    samples: usize,
    max_speed: Option<f64>,
    seed: u64,
) -> AssumptionReport {
    let consts = lagrangian.constants();
    let n = domain.dim();
    let coercive_radius =
        if consts.c1 > 0.0 { 2.0 * (1.0 / consts.c1 + (consts.c0.max(0.0) / consts.c1).sqrt()) + 1.0 } else { 10.0 };
    let vmax = max_speed.unwrap_or_else(|| (4.0 * coercive_radius).max(100.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocity = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&dir).max(1e-12);
        // Log-uniform speeds over six decades, plus exact zeros.
        let speed = if rng.gen_bool(0.05) { 0.0 } else { vmax * 10f64.powf(-6.0 * rng.gen::<f64>()) };
        dir.iter_mut().for_each(|c| *c *= speed / r);
        dir
    };

    let mut state_slack = f64::INFINITY;
    let mut vel_slack = f64::INFINITY;
    let mut coer_slack = f64::INFINITY;
    let mut conv_slack = f64::INFINITY;
    let mut coer_violations = 0;
    let mut grad_err: f64 = 0.0;
    let smooth = lagrangian.is_smooth();
    let c = consts.growth;

    for i in 0..samples.max(1) {
        let x = domain.sample_interior(&mut rng);
        // Every few samples probe the coercivity radius and beyond directly.
        let v = if i % 8 == 7 {
            let mut d = velocity(&mut rng);
            let r = norm(&d).max(1e-300);
            let target = coercive_radius * (1.0 + 3.0 * rng.gen::<f64>());
            d.iter_mut().for_each(|c| *c *= target / r);
            d
        } else {
            velocity(&mut rng)
        };
        let w = if i % 2 == 0 { v.iter().map(|c| -c).collect() } else { velocity(&mut rng) };
        let s2 = dot(&v, &v);
        let s = s2.sqrt();
        let l = lagrangian.value(&x, &v);
        let gx = lagrangian.grad_x(&x, &v);
        let gv = lagrangian.grad_v(&x, &v);
        state_slack = state_slack.min(c * (1.0 + s2) - norm(&gx));
        vel_slack = vel_slack.min(c * (1.0 + s) - norm(&gv));
        let cs = l - (consts.c1 * s2 - consts.c0);
        if cs < -ASSUMPTION_TOL {
            coer_violations += 1;
        }
        coer_slack = coer_slack.min(cs);
        let mid: Vec<f64> = v.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
        let lw = lagrangian.value(&x, &w);
        conv_slack = conv_slack.min(0.5 * (l + lw) - lagrangian.value(&x, &mid));
        if smooth {
            let fx = central_difference(|y| lagrangian.value(y, &v), &x, 1e-6);
            let fv = central_difference(|u| lagrangian.value(&x, u), &v, 1e-6 * (1.0 + s));
            for (a, b) in gx.iter().chain(&gv).zip(fx.iter().chain(&fv)) {
                grad_err = grad_err.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    let passed = [state_slack, vel_slack, coer_slack, conv_slack].iter().all(|s| *s >= -ASSUMPTION_TOL);
    AssumptionReport {
        samples: samples.max(1),
        max_speed: vmax,
        state_growth_slack: state_slack,
        velocity_growth_slack: vel_slack,
        coercivity_slack: coer_slack,
        convexity_slack: conv_slack,
        coercivity_violations: coer_violations,
        gradient_error: smooth.then_some(grad_err),
        passed,
    }
}
