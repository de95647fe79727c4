//! Scalar sampling kernels: adaptive random-walk Metropolis-Hastings and
//! adaptive rejection sampling for log-concave densities.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_ACCEPTANCE: f64 = 0.44;
pub const DEFAULT_ADAPT_WINDOW: usize = 50;
const SCALE_BOUNDS: (f64, f64) = (1e-6, 1e6);

/// Gaussian random-walk proposal with burn-in scale adaptation and an open
/// support interval `(lower, upper)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhKernel {
    scale: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    window: usize,
    window_proposed: usize,
    window_accepted: usize,
    proposed: u64,
    accepted: u64,
    frozen: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhOutcome {
    pub value: f64,
    pub log_density: f64,
    pub accepted: bool,
}

impl MhKernel {
    pub fn new(scale: f64) -> Self {
        Self::bounded(scale, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn bounded(scale: f64, lower: f64, upper: f64) -> Self {
        assert!(scale > 0.0 && lower < upper);
        MhKernel {
            scale,
            lower: lower.is_finite().then_some(lower),
            upper: upper.is_finite().then_some(upper),
            window: DEFAULT_ADAPT_WINDOW,
            window_proposed: 0,
            window_accepted: 0,
            proposed: 0,
            accepted: 0,
            frozen: false,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window.max(1);
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.lower.is_none_or(|l| x > l) && self.upper.is_none_or(|u| x < u) && x.is_finite()
    }

    /// Stops adaptation; called at the end of burn-in.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.window_proposed = 0;
        self.window_accepted = 0;
    }

    /// Multiplies the scale by `exp(rate - 0.44)`, clamped to `[1e-6, 1e6]`.
    pub fn adapt(&mut self, acceptance_rate: f64) {
        if self.frozen {
            return;
        }
        let factor = (acceptance_rate - TARGET_ACCEPTANCE).exp();
        self.scale = (self.scale * factor).clamp(SCALE_BOUNDS.0, SCALE_BOUNDS.1);
    }

    /// One random-walk step from `current`, whose log density is
    /// `current_log_density`. Proposals outside the support are rejected
    /// without evaluating `log_density`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        mut log_density: impl FnMut(f64) -> f64,
        current: f64,
        current_log_density: f64,
        rng: &mut R,
    ) -> Result<MhOutcome> {
        if !current_log_density.is_finite() {
            return Err(Error::Numerical(format!(
                "log density is not finite at the current value {current}"
            )));
        }
        let z: f64 = StandardNormal.sample(rng);
        let proposal = current + self.scale * z;
        let u: f64 = rng.random();
        let mut outcome = MhOutcome {
            value: current,
            log_density: current_log_density,
            accepted: false,
        };
        if self.in_support(proposal) {
            let lp = log_density(proposal);
            if !lp.is_nan() && u.ln() < lp - current_log_density {
                outcome = MhOutcome {
                    value: proposal,
                    log_density: lp,
                    accepted: true,
                };
            }
        }
        self.record(outcome.accepted);
        Ok(outcome)
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
        if self.frozen {
            return;
        }
        self.window_proposed += 1;
        self.window_accepted += usize::from(accepted);
        if self.window_proposed == self.window {
            let rate = self.window_accepted as f64 / self.window as f64;
            self.adapt(rate);
            self.window_proposed = 0;
            self.window_accepted = 0;
        }
    }
}

/// Upper and lower hulls of a concave log density built from tangents at
/// sorted abscissae.
struct Envelope {
    x: Vec<f64>,
    h: Vec<f64>,
    dh: Vec<f64>,
    /// Segment boundaries: `z[0] = lower`, `z[k] = upper`, tangent
    /// intersections in between.
    z: Vec<f64>,
    log_mass: Vec<f64>,
    log_total: f64,
}

impl Envelope {
    fn build(x: Vec<f64>, h: Vec<f64>, dh: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        let k = x.len();
        for i in 1..k {
            let tol = 1e-9 * (1.0 + dh[i - 1].abs().max(dh[i].abs()));
            if dh[i] > dh[i - 1] + tol {
                return Err(Error::ConcavityViolation { at: x[i] });
            }
        }
        let mut z = Vec::with_capacity(k + 1);
        z.push(lower);
        for i in 0..k - 1 {
            let denom = dh[i] - dh[i + 1];
            let zi = if denom.abs() <= 1e-12 * (1.0 + dh[i].abs()) {
                0.5 * (x[i] + x[i + 1])
            } else {
                (h[i + 1] - h[i] - x[i + 1] * dh[i + 1] + x[i] * dh[i]) / denom
            };
            z.push(zi.clamp(x[i], x[i + 1]));
        }
        z.push(upper);
        let log_mass: Vec<f64> = (0..k)
            .map(|i| segment_log_mass(h[i], dh[i], x[i], z[i], z[i + 1]))
            .collect();
        let log_total = log_sum_exp(&log_mass);
        if !log_total.is_finite() {
            return Err(Error::Numerical("rejection envelope has no finite mass".into()));
        }
        Ok(Envelope {
            x,
            h,
            dh,
            z,
            log_mass,
            log_total,
        })
    }

    fn upper_hull(&self, t: f64) -> f64 {
        let i = self.z[1..self.z.len() - 1].partition_point(|&zb| zb < t);
        self.h[i] + self.dh[i] * (t - self.x[i])
    }

    fn lower_hull(&self, t: f64) -> f64 {
        let k = self.x.len();
        if t < self.x[0] || t > self.x[k - 1] {
            return f64::NEG_INFINITY;
        }
        let i = self.x.partition_point(|&xi| xi <= t).clamp(1, k - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        ((x1 - t) * self.h[i - 1] + (t - x0) * self.h[i]) / (x1 - x0)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = self.log_total + rng.random::<f64>().ln();
        let mut acc = f64::NEG_INFINITY;
        let mut seg = self.log_mass.len() - 1;
        for (i, &lm) in self.log_mass.iter().enumerate() {
            acc = log_add(acc, lm);
            if acc >= target {
                seg = i;
                break;
            }
        }
        let (a, b) = (self.z[seg], self.z[seg + 1]);
        let s = self.dh[seg];
        let u: f64 = rng.random();
        let t = if s > 0.0 {
            b + (-(1.0 - u) * -(-s * (b - a)).exp_m1()).ln_1p() / s
        } else if s < 0.0 {
            a + (u * (s * (b - a)).exp_m1()).ln_1p() / s
        } else {
            a + u * (b - a)
        };
        t.clamp(a, b)
    }
}

/// `log` of the integral of `exp(h + s (t - x))` over `[a, b]`.
fn segment_log_mass(h: f64, s: f64, x: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    if s > 0.0 {
        let ub = h + s * (b - x);
        ub + (-(-s * (b - a)).exp_m1()).ln() - s.ln()
    } else if s < 0.0 {
        let ua = h + s * (a - x);
        ua + (-(s * (b - a)).exp_m1()).ln() - (-s).ln()
    } else {
        h + (b - a).ln()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |acc, &x| log_add(acc, x))
}

const ARS_MAX_ITER: usize = 10_000;
const ARS_MAX_ABSCISSAE: usize = 64;

/// Draws one exact sample from the density proportional to
/// `exp(log_density)` on `(lower, upper)`, which must be concave.
///
/// `init` supplies starting abscissae; for an unbounded side the outermost
/// abscissa is pushed outward until its derivative has the right sign.
pub fn ars_sample<R: Rng + ?Sized>(
    log_density: impl Fn(f64) -> f64,
    dlog_density: impl Fn(f64) -> f64,
    lower: f64,
    upper: f64,
    init: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let mut pts: Vec<f64> = init.iter().copied().filter(|&t| t > lower && t < upper).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.is_empty() {
        return Err(Error::Numerical("no initial abscissae inside the domain".into()));
    }
    let spread = |p: &[f64]| (p[p.len() - 1] - p[0]).max(1.0);
    if lower == f64::NEG_INFINITY {
        let mut tries = 0;
        while dlog_density(pts[0]) <= 0.0 {
            let step = spread(&pts);
            pts.insert(0, pts[0] - step);
            tries += 1;
            if tries > 60 {
                return Err(Error::Numerical("could not bracket the mode from the left".into()));
            }
        }
    }
    if upper == f64::INFINITY {
        let mut tries = 0;
        while dlog_density(pts[pts.len() - 1]) >= 0.0 {
            let step = spread(&pts);
            pts.push(pts[pts.len() - 1] + step);
            tries += 1;
            if tries > 60 {
                return Err(Error::Numerical("could not bracket the mode from the right".into()));
            }
        }
    }
    let h: Vec<f64> = pts.iter().map(|&t| log_density(t)).collect();
    let dh: Vec<f64> = pts.iter().map(|&t| dlog_density(t)).collect();
    if h.iter().chain(&dh).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("log density not finite at an initial abscissa".into()));
    }
    let mut env = Envelope::build(pts, h, dh, lower, upper)?;
    for _ in 0..ARS_MAX_ITER {
        let t = env.sample(rng);
        let log_w = rng.random::<f64>().ln();
        let upper_t = env.upper_hull(t);
        let lower_t = env.lower_hull(t);
        debug_assert!(lower_t <= upper_t + 1e-9 * (1.0 + upper_t.abs()));
        if log_w <= lower_t - upper_t {
            return Ok(t);
        }
        let ht = log_density(t);
        if ht > upper_t + 1e-8 * (1.0 + upper_t.abs()) {
            return Err(Error::ConcavityViolation { at: t });
        }
        if log_w <= ht - upper_t {
            return Ok(t);
        }
        let dt = dlog_density(t);
        if ht.is_finite() && dt.is_finite() && env.x.len() < ARS_MAX_ABSCISSAE {
            let pos = env.x.partition_point(|&xi| xi < t);
            if env.x.get(pos) != Some(&t) {
                let (mut x, mut h, mut dh) = (env.x, env.h, env.dh);
                x.insert(pos, t);
                h.insert(pos, ht);
                dh.insert(pos, dt);
                env = Envelope::build(x, h, dh, lower, upper)?;
            }
        }
    }
    Err(Error::Numerical(
        "adaptive rejection sampling did not accept a draw".into(),
    ))
}
