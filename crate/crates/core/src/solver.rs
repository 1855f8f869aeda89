//! Mirror Prox (deterministic, adaptive stepsizes) and Stochastic Mirror Prox.

use std::ops::AddAssign;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::linalg::Space;

/// Arithmetic and call counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub f_exact_evals: u64,
    pub oracle_samples: u64,
    pub prox_calls: u64,
    pub flops_f: u64,
    pub flops_prox: u64,
}

impl AddAssign for CostCounters {
    fn add_assign(&mut self, o: CostCounters) {
        self.f_exact_evals += o.f_exact_evals;
        self.oracle_samples += o.oracle_samples;
        self.prox_calls += o.prox_calls;
        self.flops_f += o.flops_f;
        self.flops_prox += o.flops_prox;
    }
}

impl CostCounters {
    /// True when every counter of `self` is ≥ the matching counter of `earlier`.
    pub fn dominates(&self, earlier: &CostCounters) -> bool {
        self.f_exact_evals >= earlier.f_exact_evals
            && self.oracle_samples >= earlier.oracle_samples
            && self.prox_calls >= earlier.prox_calls
            && self.flops_f >= earlier.flops_f
            && self.flops_prox >= earlier.flops_prox
    }
}

/// Named RNG streams; a run seeds one ChaCha generator per purpose.
pub mod streams {
    pub const ORACLE: u64 = 1;
    pub const INSTANCE: u64 = 2;
    pub const SCALE_FACTOR: u64 = 3;
    pub const VERIFY: u64 = 4;
}

/// ChaCha8 generator for `(seed, purpose)`.
pub fn stream_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    /// Constant stepsize tuned to a known horizon `t`.
    FixedT,
    /// `τ`-th stepsize uses `√τ` in place of `√t`.
    Rolling,
}

/// Constants driving the stepsize policy and the bound monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct SmpSetup {
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_radius: f64,
    pub lipschitz_l: f64,
    pub noise_sigma: f64,
    pub acceleration_alpha: f64,
    pub horizon_mode: HorizonMode,
}

impl SmpSetup {
    pub fn new<P: SaddlePoint>(
        problem: &P,
        lipschitz_l: f64,
        noise_sigma: f64,
        acceleration_alpha: f64,
        horizon_mode: HorizonMode,
    ) -> Result<Self> {
        Self::from_radii(
            problem.geom_x().omega_radius(),
            problem.geom_y().omega_radius(),
            lipschitz_l,
            noise_sigma,
            acceleration_alpha,
            horizon_mode,
        )
    }

    pub fn from_radii(
        omega_x: f64,
        omega_y: f64,
        lipschitz_l: f64,
        noise_sigma: f64,
        acceleration_alpha: f64,
        horizon_mode: HorizonMode,
    ) -> Result<Self> {
        let setup = SmpSetup {
            omega_x,
            omega_y,
            omega_radius: omega_x.hypot(omega_y),
            lipschitz_l,
            noise_sigma,
            acceleration_alpha,
            horizon_mode,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Setup with `L = 10·V̄` and the noise level of [`default_noise_sigma`].
    pub fn with_defaults<P: SaddlePoint>(
        problem: &P,
        kx: usize,
        ky: usize,
        acceleration_alpha: f64,
        horizon_mode: HorizonMode,
    ) -> Result<Self> {
        let v = problem.scale_bound();
        let ox = problem.geom_x().omega_radius();
        let oy = problem.geom_y().omega_radius();
        let sigma = default_noise_sigma(v, 0.0, problem.degree(), ox, oy, kx, ky);
        Self::from_radii(ox, oy, 10.0 * v, sigma, acceleration_alpha, horizon_mode)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.omega_x) || !positive(self.omega_y) {
            return Err(Error::config(
                "omega_radius",
                "radii must be positive and finite",
            ));
        }
        let expected = self.omega_x.hypot(self.omega_y);
        if (self.omega_radius - expected).abs() > 1e-12 * expected {
            return Err(Error::config(
                "omega_radius",
                format!(
                    "{} differs from sqrt(Ωx² + Ωy²) = {expected}",
                    self.omega_radius
                ),
            ));
        }
        if !positive(self.lipschitz_l) {
            return Err(Error::config("lipschitz_l", "must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be nonnegative"));
        }
        if !(self.acceleration_alpha.is_finite() && self.acceleration_alpha >= 1.0) {
            return Err(Error::config("alpha", "must be ≥ 1"));
        }
        Ok(())
    }

    /// `γ = α/(√3·L)`.
    pub fn safe_stepsize(&self) -> f64 {
        self.acceleration_alpha / (3f64.sqrt() * self.lipschitz_l)
    }
}

/// `σ = V̄(1+ρ)^{d−1}[min(1, Ωx/√kx) + min(1, Ωy/√ky)]`.
pub fn default_noise_sigma(
    v_upper: f64,
    rho: f64,
    degree: usize,
    omega_x: f64,
    omega_y: f64,
    kx: usize,
    ky: usize,
) -> f64 {
    let theta = (omega_x / (kx as f64).sqrt()).min(1.0) + (omega_y / (ky as f64).sqrt()).min(1.0);
    v_upper * (1.0 + rho).powi(degree.saturating_sub(1) as i32) * theta
}

/// `α·min[1/(√3 L), Ω/(√7 σ √s)]` with `s = t_total` (fixed) or `τ` (rolling).
pub fn smp_stepsize(setup: &SmpSetup, t_total: Option<usize>, tau: usize) -> f64 {
    let safe = 1.0 / (3f64.sqrt() * setup.lipschitz_l);
    if setup.noise_sigma == 0.0 {
        return setup.acceleration_alpha * safe;
    }
    let s = match (setup.horizon_mode, t_total) {
        (HorizonMode::FixedT, Some(t)) => t,
        _ => tau,
    }
    .max(1) as f64;
    let noisy = setup.omega_radius / (7f64.sqrt() * setup.noise_sigma * s.sqrt());
    setup.acceleration_alpha * safe.min(noisy)
}

/// `K_t = max[2Ω²L/t, 6Ωσ/√t]`.
pub fn theoretical_bound(setup: &SmpSetup, t: usize) -> f64 {
    let t = t.max(1) as f64;
    let o = setup.omega_radius;
    (2.0 * o * o * setup.lipschitz_l / t).max(6.0 * o * setup.noise_sigma / t.sqrt())
}

type PointX<P> = <<P as SaddlePoint>::GX as Geometry>::Point;
type PointY<P> = <<P as SaddlePoint>::GY as Geometry>::Point;
pub type ElemX<P> = <<P as SaddlePoint>::GX as Geometry>::Elem;
pub type ElemY<P> = <<P as SaddlePoint>::GY as Geometry>::Elem;

/// A convex-concave saddle point problem with its geometries and oracles.
pub trait SaddlePoint: Sync {
    type GX: Geometry;
    type GY: Geometry;

    fn geom_x(&self) -> &Self::GX;
    fn geom_y(&self) -> &Self::GY;

    /// Degree `d` of the polynomial `φ`.
    fn degree(&self) -> usize;

    /// Upper bound `V̄` on the scale factor.
    fn scale_bound(&self) -> f64;

    /// Exact `F(z) = [∇_x φ; −∇_y φ]`.
    fn exact_field(
        &self,
        x: &PointX<Self>,
        y: &PointY<Self>,
        counters: &mut CostCounters,
    ) -> Result<(ElemX<Self>, ElemY<Self>)>;

    /// Unbiased estimate of `F(z)` with multiplicities `(kx, ky)`.
    fn sample_field(
        &self,
        x: &PointX<Self>,
        y: &PointY<Self>,
        kx: usize,
        ky: usize,
        rng: &mut dyn RngCore,
        counters: &mut CostCounters,
    ) -> Result<(ElemX<Self>, ElemY<Self>)>;

    /// Upper bound on the duality gap (or the problem's accuracy measure)
    /// at an averaged point. Not charged to the counters.
    fn certificate(&self, x: &ElemX<Self>, y: &ElemY<Self>) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    Exact,
    Randomized { kx: usize, ky: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iters: usize,
    pub gap_tolerance: f64,
    pub check_interval: usize,
    /// Keep every `w_τ` in the run record.
    pub record_trace: bool,
}

impl Budget {
    pub fn new(max_iters: usize, gap_tolerance: f64, check_interval: usize) -> Self {
        Budget {
            max_iters,
            gap_tolerance,
            check_interval,
            record_trace: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be ≥ 1"));
        }
        if self.check_interval == 0 {
            return Err(Error::config("check_interval", "must be ≥ 1"));
        }
        if self.gap_tolerance.is_nan() {
            return Err(Error::config("gap_tolerance", "must be a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GapMet,
    IterationCap,
    Stall,
}

#[derive(Debug, Clone)]
pub struct SolverRun<X, Y> {
    pub averaged_x: X,
    pub averaged_y: Y,
    pub step_points: Option<Vec<(X, Y)>>,
    pub gap_history: Vec<(usize, f64)>,
    pub stepsize_trace: Vec<f64>,
    pub counters: CostCounters,
    pub terminated_reason: TerminationReason,
    pub iterations: usize,
}

impl<X, Y> SolverRun<X, Y> {
    /// Last certificate value, evaluated at the returned averaged point.
    pub fn final_gap(&self) -> f64 {
        self.gap_history.last().map_or(f64::NAN, |&(_, g)| g)
    }
}

const STALL_CHECKS: usize = 10;
const STALL_IMPROVEMENT: f64 = 1e-12;
const DMP_GROWTH: f64 = 1.2;
const DMP_RETRY_CAP: usize = 30;

/// Running `Σγ w` / `Σγ` plus certificate bookkeeping.
struct Accumulator<X, Y> {
    sum_x: X,
    sum_y: Y,
    weight: f64,
    trace: Option<Vec<(X, Y)>>,
    gaps: Vec<(usize, f64)>,
    previous: f64,
    stale: usize,
}

impl<X: Space, Y: Space> Accumulator<X, Y> {
    fn new(x0: &X, y0: &Y, record: bool) -> Self {
        Accumulator {
            sum_x: x0.zeros_like(),
            sum_y: y0.zeros_like(),
            weight: 0.0,
            trace: record.then(Vec::new),
            gaps: Vec::new(),
            previous: f64::INFINITY,
            stale: 0,
        }
    }

    fn add(&mut self, gamma: f64, wx: &X, wy: &Y) {
        self.sum_x.axpy(gamma, wx);
        self.sum_y.axpy(gamma, wy);
        self.weight += gamma;
        if let Some(t) = &mut self.trace {
            t.push((wx.clone(), wy.clone()));
        }
    }

    fn average(&self) -> (X, Y) {
        let inv = 1.0 / self.weight;
        (self.sum_x.scaled(inv), self.sum_y.scaled(inv))
    }

    /// Records a certificate; returns the termination it triggers, if any.
    fn check<P: SaddlePoint<GX = GX, GY = GY>, GX, GY>(
        &mut self,
        problem: &P,
        t: usize,
        tol: f64,
    ) -> Result<Option<TerminationReason>>
    where
        GX: Geometry<Elem = X>,
        GY: Geometry<Elem = Y>,
    {
        let (x, y) = self.average();
        let gap = problem.certificate(&x, &y)?.max(0.0);
        self.gaps.push((t, gap));
        if gap <= tol {
            return Ok(Some(TerminationReason::GapMet));
        }
        // stale counts consecutive checks that fail to beat their predecessor
        let improved = gap < self.previous - STALL_IMPROVEMENT;
        self.previous = gap;
        if improved {
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= STALL_CHECKS {
                return Ok(Some(TerminationReason::Stall));
            }
        }
        Ok(None)
    }

    fn finish(
        self,
        stepsizes: Vec<f64>,
        counters: CostCounters,
        reason: TerminationReason,
        iterations: usize,
    ) -> SolverRun<X, Y> {
        let (averaged_x, averaged_y) = self.average();
        SolverRun {
            averaged_x,
            averaged_y,
            step_points: self.trace,
            gap_history: self.gaps,
            stepsize_trace: stepsizes,
            counters,
            terminated_reason: reason,
            iterations,
        }
    }
}

fn prox_pair<P: SaddlePoint>(
    problem: &P,
    zx: &PointX<P>,
    zy: &PointY<P>,
    gamma: f64,
    gx: &ElemX<P>,
    gy: &ElemY<P>,
    counters: &mut CostCounters,
) -> Result<(PointX<P>, PointY<P>)> {
    let wx = problem.geom_x().prox(zx, &gx.scaled(gamma), counters)?;
    let wy = problem.geom_y().prox(zy, &gy.scaled(gamma), counters)?;
    counters.prox_calls += 1;
    Ok((wx, wy))
}

fn field<P: SaddlePoint>(
    problem: &P,
    oracle: OracleKind,
    x: &PointX<P>,
    y: &PointY<P>,
    rng: &mut dyn RngCore,
    counters: &mut CostCounters,
    iteration: usize,
) -> Result<(ElemX<P>, ElemY<P>)> {
    let (gx, gy) = match oracle {
        OracleKind::Exact => problem.exact_field(x, y, counters)?,
        OracleKind::Randomized { kx, ky } => problem.sample_field(x, y, kx, ky, rng, counters)?,
    };
    if !gx.all_finite() || !gy.all_finite() {
        return Err(Error::NonFiniteOracle { iteration });
    }
    Ok((gx, gy))
}

/// Stochastic Mirror Prox with the stepsizes of [`smp_stepsize`].
///
/// The oracle draws come from the `ORACLE` stream of `rng_seed`.
pub fn run_smp<P: SaddlePoint>(
    problem: &P,
    setup: &SmpSetup,
    oracle: OracleKind,
    budget: &Budget,
    rng_seed: u64,
) -> Result<SolverRun<ElemX<P>, ElemY<P>>> {
    setup.validate()?;
    budget.validate()?;
    if let OracleKind::Randomized { kx, ky } = oracle {
        if kx == 0 || ky == 0 {
            return Err(Error::config("k_x/k_y", "multiplicities must be ≥ 1"));
        }
    }
    let mut rng = stream_rng(rng_seed, streams::ORACLE);
    let mut counters = CostCounters::default();
    let mut zx = problem.geom_x().center();
    let mut zy = problem.geom_y().center();
    let mut acc = Accumulator::new(P::GX::elem(&zx), P::GY::elem(&zy), budget.record_trace);
    let mut stepsizes = Vec::new();
    let horizon = Some(budget.max_iters);
    let mut reason = TerminationReason::IterationCap;
    let mut t = 0;
    while t < budget.max_iters {
        t += 1;
        let gamma = smp_stepsize(setup, horizon, t);
        let (gx, gy) = field(problem, oracle, &zx, &zy, &mut rng, &mut counters, t)?;
        let (wx, wy) = prox_pair(problem, &zx, &zy, gamma, &gx, &gy, &mut counters)?;
        let (gx, gy) = field(problem, oracle, &wx, &wy, &mut rng, &mut counters, t)?;
        let (nx, ny) = prox_pair(problem, &zx, &zy, gamma, &gx, &gy, &mut counters)?;
        acc.add(gamma, P::GX::elem(&wx), P::GY::elem(&wy));
        stepsizes.push(gamma);
        zx = nx;
        zy = ny;
        if t % budget.check_interval == 0 || t == budget.max_iters {
            if let Some(r) = acc.check(problem, t, budget.gap_tolerance)? {
                reason = r;
                break;
            }
        }
    }
    Ok(acc.finish(stepsizes, counters, reason, t))
}

fn z_norm<P: SaddlePoint>(problem: &P, hx: &ElemX<P>, hy: &ElemY<P>) -> f64 {
    problem.geom_x().norm(hx).max(problem.geom_y().norm(hy))
}

fn z_dual_norm<P: SaddlePoint>(problem: &P, gx: &ElemX<P>, gy: &ElemY<P>) -> f64 {
    problem.geom_x().dual_norm(gx) + problem.geom_y().dual_norm(gy)
}

/// Mirror Prox with the exact oracle and an adaptive stepsize: start from
/// `α/(√3 L)`, grow by 1.2 after each accepted step, halve while
/// `γ‖F(w) − F(z)‖_* > ‖w − z‖`.
pub fn run_dmp<P: SaddlePoint>(
    problem: &P,
    setup: &SmpSetup,
    budget: &Budget,
) -> Result<SolverRun<ElemX<P>, ElemY<P>>> {
    setup.validate()?;
    budget.validate()?;
    let mut rng = stream_rng(0, streams::ORACLE);
    let mut counters = CostCounters::default();
    let mut zx = problem.geom_x().center();
    let mut zy = problem.geom_y().center();
    let mut acc = Accumulator::new(P::GX::elem(&zx), P::GY::elem(&zy), budget.record_trace);
    let mut stepsizes = Vec::new();
    let mut gamma = setup.safe_stepsize();
    let mut reason = TerminationReason::IterationCap;
    let mut t = 0;
    let (mut fx, mut fy) = field(
        problem,
        OracleKind::Exact,
        &zx,
        &zy,
        &mut rng,
        &mut counters,
        1,
    )?;
    'outer: while t < budget.max_iters {
        t += 1;
        let mut retries = 0;
        let (wx, wy, gx, gy) = loop {
            let (wx, wy) = prox_pair(problem, &zx, &zy, gamma, &fx, &fy, &mut counters)?;
            let (gx, gy) = field(
                problem,
                OracleKind::Exact,
                &wx,
                &wy,
                &mut rng,
                &mut counters,
                t,
            )?;
            let step = z_norm::<P>(
                problem,
                &P::GX::elem(&wx).minus(P::GX::elem(&zx)),
                &P::GY::elem(&wy).minus(P::GY::elem(&zy)),
            );
            let change = z_dual_norm::<P>(problem, &gx.minus(&fx), &gy.minus(&fy));
            if gamma * change <= step {
                break (wx, wy, gx, gy);
            }
            retries += 1;
            if retries > DMP_RETRY_CAP {
                t -= 1;
                reason = TerminationReason::Stall;
                break 'outer;
            }
            gamma *= 0.5;
        };
        let (nx, ny) = prox_pair(problem, &zx, &zy, gamma, &gx, &gy, &mut counters)?;
        acc.add(gamma, P::GX::elem(&wx), P::GY::elem(&wy));
        stepsizes.push(gamma);
        zx = nx;
        zy = ny;
        gamma *= DMP_GROWTH;
        if t % budget.check_interval == 0 || t == budget.max_iters {
            if let Some(r) = acc.check(problem, t, budget.gap_tolerance)? {
                reason = r;
                break;
            }
        }
        if t < budget.max_iters {
            (fx, fy) = field(
                problem,
                OracleKind::Exact,
                &zx,
                &zy,
                &mut rng,
                &mut counters,
                t + 1,
            )?;
        }
    }
    if acc.weight == 0.0 {
        // stalled before the first accepted step: report the starting point
        acc.add(1.0, P::GX::elem(&zx), P::GY::elem(&zy));
    }
    if acc.gaps.last().is_none_or(|&(it, _)| it != t) {
        let (x, y) = acc.average();
        let gap = problem.certificate(&x, &y)?.max(0.0);
        acc.gaps.push((t, gap));
    }
    Ok(acc.finish(stepsizes, counters, reason, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(l: f64, sigma: f64, omega: f64, alpha: f64, mode: HorizonMode) -> SmpSetup {
        SmpSetup {
            omega_x: omega,
            omega_y: 0.0,
            omega_radius: omega,
            lipschitz_l: l,
            noise_sigma: sigma,
            acceleration_alpha: alpha,
            horizon_mode: mode,
        }
    }

    #[test]
    fn stepsize_examples() {
        let s = setup(1.0, 0.0, 1.0, 1.0, HorizonMode::Rolling);
        assert!((smp_stepsize(&s, None, 17) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let s = setup(1.0, 1.0, 1.0, 1.0, HorizonMode::FixedT);
        assert!((smp_stepsize(&s, Some(7), 1) - 1.0 / 7.0).abs() < 1e-15);
        let s = setup(2.0, 0.5, 3.0, 1000.0, HorizonMode::Rolling);
        let expected = 1000.0 / (3f64.sqrt() * 2.0);
        assert!((smp_stepsize(&s, None, 4) - expected).abs() < 1e-9);
        assert!((smp_stepsize(&s, None, 4) - 288.675).abs() < 1e-3);
    }

    #[test]
    fn bound_examples() {
        let s = setup(1.0, 0.0, 1.0, 1.0, HorizonMode::Rolling);
        assert!((theoretical_bound(&s, 10) - 0.2).abs() < 1e-15);
        let s = setup(1.0, 1.0, 1.0, 1.0, HorizonMode::Rolling);
        assert_eq!(theoretical_bound(&s, 4), 3.0);
        let s = setup(3.0, 0.1, 2.0, 1.0, HorizonMode::Rolling);
        assert!((theoretical_bound(&s, 10_000) - 0.012).abs() < 1e-15);
    }

    #[test]
    fn setup_rejects_bad_constants() {
        assert!(SmpSetup::from_radii(1.0, 1.0, 0.0, 0.0, 1.0, HorizonMode::Rolling).is_err());
        assert!(SmpSetup::from_radii(1.0, 1.0, 1.0, -1.0, 1.0, HorizonMode::Rolling).is_err());
        assert!(SmpSetup::from_radii(1.0, 1.0, 1.0, 0.0, 0.5, HorizonMode::Rolling).is_err());
        let mut s = SmpSetup::from_radii(3.0, 4.0, 1.0, 0.0, 1.0, HorizonMode::Rolling).unwrap();
        assert_eq!(s.omega_radius, 5.0);
        s.omega_radius = 5.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn counters_accumulate() {
        let mut a = CostCounters::default();
        let b = CostCounters {
            f_exact_evals: 1,
            oracle_samples: 2,
            prox_calls: 3,
            flops_f: 4,
            flops_prox: 5,
        };
        a += b;
        a += b;
        assert_eq!(a.flops_prox, 10);
        assert!(a.dominates(&b));
        assert!(!b.dominates(&a));
    }

    #[test]
    fn flat_certificate_stalls_after_ten_checks() {
        let game = crate::problems::MatrixGame::new(nalgebra::DMatrix::zeros(3, 2))
            .unwrap()
            .with_scale_bound(1.0);
        let setup = SmpSetup::with_defaults(&game, 1, 1, 1.0, HorizonMode::Rolling).unwrap();
        // gap is identically 0, so a negative tolerance is never met
        let budget = Budget::new(1000, -1.0, 5);
        let run = run_dmp(&game, &setup, &budget).unwrap();
        assert_eq!(run.terminated_reason, TerminationReason::Stall);
        assert_eq!(run.gap_history.len(), 1 + STALL_CHECKS);
        assert_eq!(run.iterations, 5 * (1 + STALL_CHECKS));
        let run = run_smp(
            &game,
            &setup,
            OracleKind::Randomized { kx: 1, ky: 1 },
            &budget,
            2,
        )
        .unwrap();
        assert_eq!(run.terminated_reason, TerminationReason::Stall);
    }
}
