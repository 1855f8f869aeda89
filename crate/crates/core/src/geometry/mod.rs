//! Prox geometries: norms, power-type distance-generating functions, ω-radii
//! and prox-mappings for the domains the problem families live on.
//!
//! Every shipped d.g.f. has the form `ω(z) = c · Σ_j |λ_j(z)|^{1+q}` where
//! `λ(z)` is the spectrum (eigenvalues, singular values, or plain
//! coordinates) of `z`. Its prox-mapping therefore reduces, after one
//! decomposition of `ξ − ω'(z)`, to a separable problem over the spectrum
//! that is solved by a one-dimensional multiplier search.

mod nuclear;
mod spectral;
mod vector;

pub use nuclear::{BlockNuclearBall, BlockPoint, BlockStructure};
pub use spectral::{SpectralSet, SymPoint};
pub use vector::{EuclideanBox, VectorSet};

use std::f64::consts::E;
use std::fmt::Debug;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::linalg::Space;
use crate::solver::CostCounters;

/// Membership tolerance used when validating points handed to the geometry.
pub const DOMAIN_TOL: f64 = 1e-9;

/// Prox geometry over one side (X or Y) of a saddle point problem.
pub trait Geometry: Send + Sync + Debug {
    /// Element of the embedding space; primal points and dual vectors share it.
    type Elem: Space;
    /// Domain point together with whatever decomposition the geometry caches.
    type Point: Clone + Send + Sync + Debug;

    fn name(&self) -> &'static str;

    fn elem(point: &Self::Point) -> &Self::Elem;

    /// Decomposes `elem`, rejecting it when it is outside the domain.
    fn decompose(&self, elem: &Self::Elem) -> Result<Self::Point>;

    /// The minimizer of ω over the domain.
    fn center(&self) -> Self::Point;

    fn dgf_value(&self, point: &Self::Point) -> f64;

    fn dgf_grad(&self, point: &Self::Point) -> Self::Elem;

    /// `argmin_{w ∈ domain} ⟨ξ, w⟩ + V_z(w)`.
    fn prox(
        &self,
        z: &Self::Point,
        xi: &Self::Elem,
        counters: &mut CostCounters,
    ) -> Result<Self::Point>;

    fn omega_radius(&self) -> f64;

    /// Norm on the linear span of domain differences.
    fn norm(&self, h: &Self::Elem) -> f64;

    /// Conjugate (semi)norm of a dual vector.
    fn dual_norm(&self, g: &Self::Elem) -> f64;

    /// Amount by which `elem` violates the domain constraints; zero inside.
    fn violation(&self, elem: &Self::Elem) -> f64;

    /// Random domain point, occasionally on the relative boundary.
    fn sample(&self, rng: &mut dyn RngCore) -> Self::Point;

    fn dgf(&self) -> Option<&PowerDgf> {
        None
    }
}

/// `V_z(w) = ω(w) − ω(z) − ⟨ω'(z), w − z⟩`.
pub fn bregman_distance<G: Geometry>(geometry: &G, z: &G::Point, w: &G::Point) -> Result<f64> {
    for p in [z, w] {
        let v = geometry.violation(G::elem(p));
        if v > DOMAIN_TOL {
            return Err(Error::DomainViolation {
                domain: geometry.name(),
                violation: v,
            });
        }
    }
    let grad = geometry.dgf_grad(z);
    let diff = G::elem(w).minus(G::elem(z));
    let v = geometry.dgf_value(w) - geometry.dgf_value(z) - grad.dot(&diff);
    Ok(v.max(0.0))
}

/// Prox-mapping with the domain check on `z` the public contract promises.
pub fn prox_map<G: Geometry>(
    geometry: &G,
    z: &G::Point,
    xi: &G::Elem,
    counters: &mut CostCounters,
) -> Result<G::Point> {
    let v = geometry.violation(G::elem(z));
    if v > DOMAIN_TOL {
        return Err(Error::DomainViolation {
            domain: geometry.name(),
            violation: v,
        });
    }
    if !xi.all_finite() {
        return Err(Error::Argument(
            "prox input ξ has non-finite entries".into(),
        ));
    }
    geometry.prox(z, xi, counters)
}

/// First-order optimality residual of `w = Prox_z(ξ)` against sampled domain
/// points: returns `max(0, −min_u ⟨ξ + ω'(w) − ω'(z), u − w⟩)`.
pub fn prox_optimality_residual<G: Geometry>(
    geometry: &G,
    z: &G::Point,
    xi: &G::Elem,
    w: &G::Point,
    probes: &[G::Point],
) -> f64 {
    let mut grad = xi.clone();
    grad.axpy(1.0, &geometry.dgf_grad(w));
    grad.axpy(-1.0, &geometry.dgf_grad(z));
    let base = grad.dot(G::elem(w));
    probes
        .iter()
        .map(|u| grad.dot(G::elem(u)) - base)
        .fold(0.0f64, |acc, v| acc.max(-v))
}

/// Which closed-form d.g.f. a geometry uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgfContext {
    /// Unit nuclear-norm ball of block-diagonal matrices.
    NuclearBall,
    /// `{y ⪰ 0, Tr y = 1}`.
    Spectahedron,
    /// `{0 ⪯ x ⪯ I, Tr x = k}`.
    TraceKBox,
    /// Standard simplex.
    Simplex,
    /// `{0 ≤ x ≤ 1, Σx = k}`.
    BoxTraceVector,
}

/// Power d.g.f. `ω(z) = scale_c · Σ_j |λ_j(z)|^{1 + exponent_q}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerDgf {
    pub exponent_q: f64,
    pub scale_c: f64,
    /// Strong-convexity modulus of `Σ|λ|^{1+q}/(1+q)` that the scale undoes
    /// (`q/2`-type constants for the trace sets, `q/2` for the nuclear ball).
    pub beta: f64,
    /// The `k` of the trace constraint, or the nuclear radius for the ball.
    pub trace_k: usize,
    /// Spectrum length the exponent was computed from.
    pub size: usize,
    pub context: DgfContext,
}

impl PowerDgf {
    /// Nuclear ball with `size = Σ_j min(m_j, n_j)` singular values:
    /// `ω = 4/(q(1+q)) Σσ^{1+q}`, `q = min[1, ln 2 / ln size]`.
    pub fn nuclear_ball(size: usize) -> Self {
        let q = if size <= 2 {
            1.0
        } else {
            (2f64.ln() / (size as f64).ln()).min(1.0)
        };
        PowerDgf {
            exponent_q: q,
            scale_c: 4.0 / (q * (1.0 + q)),
            beta: q / 2.0,
            trace_k: 1,
            size,
            context: DgfContext::NuclearBall,
        }
    }

    /// Trace-`k` sets over a spectrum of length `m`:
    /// `ω = 4/(β(1+q)) Σλ^{1+q}`.
    fn trace_sets(m: usize, k: usize, context: DgfContext) -> Self {
        let (q, beta) = trace_exponents(m, k);
        PowerDgf {
            exponent_q: q,
            scale_c: 4.0 / (beta * (1.0 + q)),
            beta,
            trace_k: k,
            size: m,
            context,
        }
    }

    pub fn spectahedron(m: usize) -> Self {
        Self::trace_sets(m, 1, DgfContext::Spectahedron)
    }

    pub fn trace_k_box(m: usize, k: usize) -> Self {
        Self::trace_sets(m, k, DgfContext::TraceKBox)
    }

    /// Simplex of dimension `n`: `ω = 8√e/(p(1+p)) Σ y^{1+p}`, `p = 1/(2 ln n)`.
    pub fn simplex(n: usize) -> Self {
        Self::trace_sets(n, 1, DgfContext::Simplex)
    }

    pub fn box_trace_vector(m: usize, k: usize) -> Self {
        Self::trace_sets(m, k, DgfContext::BoxTraceVector)
    }

    /// Same exponent, different scale. Test fixtures use it to corrupt a d.g.f.
    pub fn with_scale(mut self, scale_c: f64) -> Self {
        self.scale_c = scale_c;
        self
    }

    /// Recomputes exponent and scale from the sizes and reports the largest
    /// relative discrepancy with the stored values.
    pub fn audit(&self) -> f64 {
        let fresh = match self.context {
            DgfContext::NuclearBall => Self::nuclear_ball(self.size),
            DgfContext::Spectahedron => Self::spectahedron(self.size),
            DgfContext::TraceKBox => Self::trace_k_box(self.size, self.trace_k),
            DgfContext::Simplex => Self::simplex(self.size),
            DgfContext::BoxTraceVector => Self::box_trace_vector(self.size, self.trace_k),
        };
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        rel(self.exponent_q, fresh.exponent_q).max(rel(self.scale_c, fresh.scale_c))
    }

    /// Closed-form ω-radius of the domain.
    pub fn omega_radius(&self) -> f64 {
        let q = self.exponent_q;
        let k = self.trace_k as f64;
        match self.context {
            DgfContext::NuclearBall => 2.0 * (2.0 * k / (q * (1.0 + q))).sqrt(),
            _ => 2.0 * (2.0 * k / (self.beta * (1.0 + q))).sqrt(),
        }
    }

    #[inline]
    pub fn value_term(&self, s: f64) -> f64 {
        self.scale_c * s.abs().powf(1.0 + self.exponent_q)
    }

    /// Derivative of [`value_term`](Self::value_term).
    #[inline]
    pub fn grad_term(&self, s: f64) -> f64 {
        if s == 0.0 {
            0.0
        } else {
            self.scale_c * (1.0 + self.exponent_q) * s.signum() * s.abs().powf(self.exponent_q)
        }
    }

    pub fn value(&self, spectrum: impl IntoIterator<Item = f64>) -> f64 {
        spectrum.into_iter().map(|s| self.value_term(s)).sum()
    }
}

/// `(q, β)` of the trace-`k` family.
fn trace_exponents(m: usize, k: usize) -> (f64, f64) {
    if m <= 1 {
        return (1.0, 1.0);
    }
    let mf = m as f64;
    let kf = k as f64;
    if k == 1 {
        let q = 1.0 / (2.0 * mf.ln());
        (q, q / (2.0 * E.sqrt()))
    } else {
        let q = (kf.ln() / (mf / kf).ln()).min(1.0);
        let beta = if kf * kf >= mf { 1.0 } else { q / 2.0 };
        (q, beta)
    }
}

/// Gauge of `{‖λ‖_∞ ≤ 1, ‖λ‖₁ ≤ k}`: `max(‖λ‖_∞, ‖λ‖₁/k)`.
pub fn knorm_eval(k: usize, spectrum: &[f64]) -> f64 {
    let inf = spectrum.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let one: f64 = spectrum.iter().map(|l| l.abs()).sum();
    inf.max(one / k as f64)
}

/// Half the spread between the `k` largest and `k` smallest entries:
/// the support function of `½(Q − Q)` for `Q = {0 ≤ u ≤ 1, Σu = k}`.
pub(crate) fn half_ky_fan_spread(values: &mut [f64], k: usize) -> f64 {
    values.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(values.len());
    let top: f64 = values[..k].iter().sum();
    let bottom: f64 = values[values.len() - k..].iter().sum();
    0.5 * (top - bottom)
}

/// Feasible set of the separable spectral subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumSet {
    /// `‖υ‖₁ ≤ 1`.
    L1Ball,
    /// `υ ≥ 0, Συ = 1`.
    Simplex,
    /// `0 ≤ υ ≤ 1, Συ = k`.
    Capped { k: usize },
}

const BISECTION_CAP: usize = 200;
const BRACKET_EXPANSIONS: usize = 60;

/// Solves `min_{υ ∈ set} Σ_j [c·|υ_j|^{1+q} + γ_j υ_j]`.
pub fn solve_separable(gamma: &[f64], dgf: &PowerDgf, set: SpectrumSet) -> Result<Vec<f64>> {
    let a = dgf.scale_c * (1.0 + dgf.exponent_q);
    let p = 1.0 / dgf.exponent_q;
    let response = |t: f64| if t > 0.0 { (t / a).powf(p) } else { 0.0 };
    if gamma.is_empty() {
        return Ok(Vec::new());
    }
    let gmin = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    let gmax = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match set {
        SpectrumSet::L1Ball => {
            let total = |mu: f64| gamma.iter().map(|&g| response(g.abs() - mu)).sum::<f64>();
            if total(0.0) <= 1.0 {
                return Ok(gamma
                    .iter()
                    .map(|&g| -g.signum() * response(g.abs()))
                    .collect());
            }
            let amax = gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let mu = bisect(|mu| -total(mu), -1.0, 0.0, amax.max(f64::MIN_POSITIVE))?;
            let mut v: Vec<f64> = gamma
                .iter()
                .map(|&g| -g.signum() * response(g.abs() - mu))
                .collect();
            let s: f64 = v.iter().map(|x| x.abs()).sum();
            if s > 0.0 {
                v.iter_mut().for_each(|x| *x /= s);
            }
            Ok(v)
        }
        SpectrumSet::Simplex => {
            let total = |mu: f64| gamma.iter().map(|&g| response(mu - g)).sum::<f64>();
            let mu = bisect(total, 1.0, gmin, gmin + a)?;
            let mut v: Vec<f64> = gamma.iter().map(|&g| response(mu - g)).collect();
            let s: f64 = v.iter().sum();
            if s <= 0.0 {
                return Err(Error::numerical("simplex prox multiplier search", 1.0));
            }
            v.iter_mut().for_each(|x| *x /= s);
            Ok(v)
        }
        SpectrumSet::Capped { k } => {
            if k > gamma.len() {
                return Err(Error::Argument(format!(
                    "trace bound {k} exceeds dimension {}",
                    gamma.len()
                )));
            }
            let kf = k as f64;
            let total = |mu: f64| {
                gamma
                    .iter()
                    .map(|&g| response(mu - g).min(1.0))
                    .sum::<f64>()
            };
            let mu = bisect(total, kf, gmin, gmax + a)?;
            let mut v: Vec<f64> = gamma.iter().map(|&g| response(mu - g).min(1.0)).collect();
            fix_capped_sum(&mut v, kf);
            Ok(v)
        }
    }
}

/// Moves the residual `k − Σv` onto the strictly interior coordinates.
fn fix_capped_sum(v: &mut [f64], k: f64) {
    let excess: f64 = v.iter().sum::<f64>() - k;
    if excess == 0.0 {
        return;
    }
    let free: f64 = v
        .iter()
        .filter(|&&x| x > 0.0 && x < 1.0)
        .map(|&x| if excess > 0.0 { x } else { 1.0 - x })
        .sum();
    if free <= 0.0 {
        return;
    }
    let ratio = (excess / free).clamp(-1.0, 1.0);
    for x in v.iter_mut().filter(|x| **x > 0.0 && **x < 1.0) {
        if excess > 0.0 {
            *x -= ratio * *x;
        } else {
            *x -= ratio * (1.0 - *x);
        }
    }
}

/// Root of the nondecreasing `f(μ) = target` by bracketed bisection.
///
/// The initial bracket is widened geometrically when it fails to straddle the
/// target. Stops once `f` matches the target to 1e-13 relative or the
/// midpoint can no longer move.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut expansions = 0;
    while f(lo) > target || f(hi) < target {
        if expansions == BRACKET_EXPANSIONS {
            return Err(Error::numerical(
                "multiplier bracket expansion",
                (f(lo) - target).max(target - f(hi)),
            ));
        }
        let w = (hi - lo).abs().max(1.0);
        if f(lo) > target {
            lo -= w;
        }
        if f(hi) < target {
            hi += w;
        }
        expansions += 1;
    }
    let tol = 1e-13 * target.abs().max(1.0);
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(hi);
        }
        let fm = f(mid);
        if (fm - target).abs() <= tol {
            return Ok(mid);
        }
        if fm < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = (f(hi) - target).abs();
    if residual <= 1e-10 * target.abs().max(1.0) {
        Ok(hi)
    } else {
        Err(Error::numerical("multiplier bisection", residual))
    }
}

/// Random point of `{0 ≤ u ≤ 1, Σu = k}` as a Dirichlet mixture of vertices.
/// With probability ~0.15 returns a single vertex, ~0.1 the center.
pub(crate) fn sample_capped_simplex(rng: &mut dyn RngCore, m: usize, k: usize) -> Vec<f64> {
    let roll: f64 = rng.random();
    if roll < 0.1 {
        return vec![k as f64 / m as f64; m];
    }
    let count = if roll < 0.25 {
        1
    } else {
        rng.random_range(1..=m.max(1) + 2)
    };
    let weights: Vec<f64> = (0..count)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; m];
    let mut idx: Vec<usize> = (0..m).collect();
    for w in weights {
        for i in 0..k {
            let j = rng.random_range(i..m);
            idx.swap(i, j);
        }
        for &i in &idx[..k] {
            out[i] += w / total;
        }
    }
    // keep exactly on the box despite rounding
    out.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knorm_examples() {
        assert_eq!(knorm_eval(2, &[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(knorm_eval(2, &[1.0, 1.0, 1.0]), 1.5);
    }

    #[test]
    fn nuclear_radius_example() {
        // M = N = 4: q = ln2/ln4 = 1/2, radius 2·sqrt(8/3)
        let dgf = PowerDgf::nuclear_ball(4);
        assert!((dgf.exponent_q - 0.5).abs() < 1e-15);
        assert!((dgf.omega_radius() - 2.0 * (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((dgf.omega_radius() - 3.265986).abs() < 1e-6);
    }

    #[test]
    fn trace_box_radius_when_k_large() {
        // k = m/2 ≥ √m gives β = q = 1 and radius 2√k
        let dgf = PowerDgf::trace_k_box(16, 8);
        assert_eq!(dgf.exponent_q, 1.0);
        assert_eq!(dgf.beta, 1.0);
        assert!((dgf.omega_radius() - 2.0 * 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn simplex_constant_matches_low_dim_formula() {
        let n = 300;
        let p = 1.0 / (2.0 * (n as f64).ln());
        let dgf = PowerDgf::simplex(n);
        assert!((dgf.exponent_q - p).abs() < 1e-15);
        let expected = 8.0 * E.sqrt() / (p * (1.0 + p));
        assert!((dgf.scale_c - expected).abs() < 1e-9 * expected);
        assert_eq!(dgf.audit(), 0.0);
        assert!(dgf.with_scale(1.0).audit() > 0.5);
    }

    #[test]
    fn trace_box_constant_for_small_k() {
        // m=30, k=3: q = ln3/ln10, k < √m so β = q/2
        let dgf = PowerDgf::trace_k_box(30, 3);
        let q = 3f64.ln() / 10f64.ln();
        assert!((dgf.exponent_q - q).abs() < 1e-15);
        assert!((dgf.scale_c - 8.0 / (q * (1.0 + q))).abs() < 1e-12);
    }

    #[test]
    fn separable_symmetric_inputs_give_uniform() {
        let dgf = PowerDgf::spectahedron(5);
        let v = solve_separable(&[0.3; 5], &dgf, SpectrumSet::Simplex).unwrap();
        for x in &v {
            assert!((x - 0.2).abs() < 1e-14);
        }
        let dgf = PowerDgf::trace_k_box(6, 2);
        let v = solve_separable(&[-1.0; 6], &dgf, SpectrumSet::Capped { k: 2 }).unwrap();
        for x in &v {
            assert!((x - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn separable_l1_interior_is_unconstrained_minimizer() {
        let dgf = PowerDgf::nuclear_ball(4);
        let gamma = [1e-3, 0.0, 2e-3, 0.0];
        let v = solve_separable(&gamma, &dgf, SpectrumSet::L1Ball).unwrap();
        let a = dgf.scale_c * 1.5;
        assert!((v[0] + (1e-3 / a).powf(2.0)).abs() < 1e-18);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn separable_l1_active_constraint() {
        let dgf = PowerDgf::nuclear_ball(4);
        let v = solve_separable(&[100.0, 50.0, 1.0, 0.0], &dgf, SpectrumSet::L1Ball).unwrap();
        let s: f64 = v.iter().map(|x| x.abs()).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(v.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn capped_sample_is_feasible() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let u = sample_capped_simplex(&mut rng, 7, 3);
            let s: f64 = u.iter().sum();
            assert!((s - 3.0).abs() < 1e-12);
            assert!(u.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
