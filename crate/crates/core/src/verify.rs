//! Property suites behind the `verify` subcommand. Each check reports the
//! measured worst-case residual next to its tolerance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{
    bregman_distance, prox_map, prox_optimality_residual, sample_capped_simplex, BlockNuclearBall,
    BlockStructure, Geometry, SpectralSet, VectorSet,
};
use crate::linalg::{BlockDiag, Space};
use crate::oracle::{MultilinearForm, PolynomialForms, ScalarSampler, SparseVec};
use crate::problems::lowdim::LowDimSampler;
use crate::problems::pencil::PencilSampler;
use crate::problems::{
    decompose_q, generate_cloud, Encoding, LowDimMetric, LowDimProblem, MatrixGame, PencilInstance,
    PencilProblem, PencilSizes, PointCloud, PolynomialGame,
};
use crate::solver::{
    run_dmp, run_smp, smp_stepsize, stream_rng, streams, theoretical_bound, Budget, CostCounters,
    HorizonMode, OracleKind, SaddlePoint, SmpSetup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    Oracles,
    Solver,
    Problems,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "oracles" => Ok(Suite::Oracles),
            "solver" => Ok(Suite::Solver),
            "problems" => Ok(Suite::Problems),
            "all" => Ok(Suite::All),
            other => Err(Error::config(
                "suite",
                format!("unknown suite `{other}` (geometry, oracles, solver, problems, all)"),
            )),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Geometry => "geometry",
            Suite::Oracles => "oracles",
            Suite::Solver => "solver",
            Suite::Problems => "problems",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured ≤ tolerance` (NaN fails).
    pub fn at_most(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<9} {:<58} measured {:>12.4e}  tol {:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.name,
                c.measured,
                c.tolerance
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Sample counts for the geometry suite.
#[derive(Debug, Clone, Copy)]
pub struct GeometryBudget {
    pub prox_calls: usize,
    pub probes: usize,
    pub pairs: usize,
    pub tiny_instances: usize,
    pub candidates: usize,
}

impl Default for GeometryBudget {
    fn default() -> Self {
        GeometryBudget {
            prox_calls: 1000,
            probes: 200,
            pairs: 1000,
            tiny_instances: 20,
            candidates: 2000,
        }
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = stream_rng(seed, streams::VERIFY);
    let all = suite == Suite::All;
    if all || suite == Suite::Geometry {
        geometry_suite(&mut rng, GeometryBudget::default(), &mut report.checks)?;
    }
    if all || suite == Suite::Oracles {
        oracle_suite(&mut rng, &mut report.checks)?;
    }
    if all || suite == Suite::Solver {
        solver_suite(&mut report.checks)?;
    }
    if all || suite == Suite::Problems {
        problem_suite(&mut rng, &mut report.checks)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- geometry

/// Random dual vector: a Gaussian combination of domain points at a random scale.
pub fn random_dual<G: Geometry>(g: &G, rng: &mut dyn RngCore) -> G::Elem {
    let mut xi = G::elem(&g.center()).zeros_like();
    for _ in 0..4 {
        let c: f64 = rng.sample(StandardNormal);
        xi.axpy(c, G::elem(&g.sample(rng)));
    }
    xi.scaled(10f64.powf(rng.random_range(-2.0..1.5)))
}

/// Domain point on the segment from `z` towards a random point.
fn nearby<G: Geometry>(g: &G, z: &G::Point, rng: &mut dyn RngCore) -> Result<G::Point> {
    let u = g.sample(rng);
    let t = 10f64.powf(rng.random_range(-3.0..-0.3));
    let mut e = G::elem(z).scaled(1.0 - t);
    e.axpy(t, G::elem(&u));
    g.decompose(&e)
}

/// Worst first-order optimality residual of the prox-mapping.
pub fn prox_residual<G: Geometry>(
    g: &G,
    rng: &mut dyn RngCore,
    calls: usize,
    probes: usize,
) -> Result<f64> {
    let probe_points: Vec<G::Point> = (0..probes).map(|_| g.sample(rng)).collect();
    let mut worst = 0.0f64;
    for _ in 0..calls {
        let z = g.sample(rng);
        let xi = random_dual(g, rng);
        let w = prox_map(g, &z, &xi, &mut CostCounters::default())?;
        worst = worst.max(prox_optimality_residual(g, &z, &xi, &w, &probe_points));
    }
    Ok(worst)
}

/// Worst excess of the prox objective `⟨ξ,w⟩ + V_z(w)` over the best of
/// sampled candidates and of points on segments leaving the prox point.
pub fn prox_brute_force_excess<G: Geometry>(
    g: &G,
    rng: &mut dyn RngCore,
    instances: usize,
    candidates: usize,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let z = g.sample(rng);
        let xi = random_dual(g, rng);
        let w = prox_map(g, &z, &xi, &mut CostCounters::default())?;
        let objective =
            |p: &G::Point| -> Result<f64> { Ok(xi.dot(G::elem(p)) + bregman_distance(g, &z, p)?) };
        let at_prox = objective(&w)?;
        let mut best = f64::INFINITY;
        for i in 0..candidates {
            let p = if i % 2 == 0 {
                g.sample(rng)
            } else {
                nearby(g, &w, rng)?
            };
            best = best.min(objective(&p)?);
        }
        worst = worst.max(at_prox - best);
    }
    Ok(worst.max(0.0))
}

/// Worst `‖z − z'‖² − ⟨ω'(z) − ω'(z'), z − z'⟩` over random and nearby pairs.
pub fn strong_convexity_violation<G: Geometry>(
    g: &G,
    rng: &mut dyn RngCore,
    pairs: usize,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..pairs {
        let z = g.sample(rng);
        let w = if i % 2 == 0 {
            g.sample(rng)
        } else {
            nearby(g, &z, rng)?
        };
        let d = G::elem(&z).minus(G::elem(&w));
        let inner = g.dgf_grad(&z).minus(&g.dgf_grad(&w)).dot(&d);
        let n = g.norm(&d);
        worst = worst.max(n * n - inner);
    }
    Ok(worst)
}

/// Worst `½‖w − z‖² − V_z(w)`.
pub fn bregman_violation<G: Geometry>(g: &G, rng: &mut dyn RngCore, pairs: usize) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..pairs {
        let z = g.sample(rng);
        let w = if i % 2 == 0 {
            g.sample(rng)
        } else {
            nearby(g, &z, rng)?
        };
        let n = g.norm(&G::elem(&w).minus(G::elem(&z)));
        worst = worst.max(0.5 * n * n - bregman_distance(g, &z, &w)?);
    }
    Ok(worst)
}

/// Largest relative excess of `2(ω(u) − ω(center))` over `Ω²`.
pub fn radius_excess<G: Geometry>(g: &G, rng: &mut dyn RngCore, samples: usize) -> f64 {
    let omega2 = g.omega_radius().powi(2);
    let base = g.dgf_value(&g.center());
    (0..samples)
        .map(|_| 2.0 * (g.dgf_value(&g.sample(rng)) - base) / omega2 - 1.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// All geometry checks for one domain; `tiny` is a small copy of the same
/// family used for the brute-force comparison.
pub fn check_geometry<G: Geometry>(
    label: &str,
    g: &G,
    tiny: &G,
    rng: &mut dyn RngCore,
    budget: GeometryBudget,
) -> Result<Vec<Check>> {
    let s = Suite::Geometry;
    let mut out = vec![
        Check::at_most(
            s,
            format!("{label}: prox optimality residual"),
            prox_residual(g, rng, budget.prox_calls, budget.probes)?,
            1e-6,
        ),
        Check::at_most(
            s,
            format!("{label}: prox vs brute force (tiny)"),
            prox_brute_force_excess(tiny, rng, budget.tiny_instances, budget.candidates)?,
            1e-6,
        ),
        Check::at_most(
            s,
            format!("{label}: strong convexity deficit"),
            strong_convexity_violation(g, rng, budget.pairs)?,
            1e-8,
        ),
        Check::at_most(
            s,
            format!("{label}: Bregman lower-bound deficit"),
            bregman_violation(g, rng, budget.pairs)?,
            1e-8,
        ),
        Check::at_most(
            s,
            format!("{label}: sampled d.g.f. range over radius"),
            radius_excess(g, rng, budget.pairs),
            1e-9,
        ),
    ];
    if let Some(dgf) = g.dgf() {
        out.push(Check::at_most(
            s,
            format!("{label}: d.g.f. constants audit"),
            dgf.audit(),
            1e-12,
        ));
    }
    Ok(out)
}

fn geometry_suite(
    rng: &mut dyn RngCore,
    budget: GeometryBudget,
    out: &mut Vec<Check>,
) -> Result<()> {
    let nuc = BlockNuclearBall::new(BlockStructure::new(vec![3, 2, 1, 2], vec![2, 2, 3, 2])?);
    let nuc_tiny = BlockNuclearBall::new(BlockStructure::new(vec![2, 1], vec![1, 2])?);
    out.extend(check_geometry(
        "nuclear ball",
        &nuc,
        &nuc_tiny,
        rng,
        budget,
    )?);
    out.extend(check_geometry(
        "spectahedron",
        &SpectralSet::spectahedron(6)?,
        &SpectralSet::spectahedron(2)?,
        rng,
        budget,
    )?);
    out.extend(check_geometry(
        "trace-k box (k²<m)",
        &SpectralSet::trace_box(10, 2)?,
        &SpectralSet::trace_box(5, 2)?,
        rng,
        budget,
    )?);
    out.extend(check_geometry(
        "trace-k box (k²≥m)",
        &SpectralSet::trace_box(8, 3)?,
        &SpectralSet::trace_box(4, 2)?,
        rng,
        budget,
    )?);
    out.extend(check_geometry(
        "simplex",
        &VectorSet::simplex(7)?,
        &VectorSet::simplex(3)?,
        rng,
        budget,
    )?);
    out.extend(check_geometry(
        "box-trace vectors",
        &VectorSet::box_trace(9, 3)?,
        &VectorSet::box_trace(4, 2)?,
        rng,
        budget,
    )?);
    Ok(())
}

// ----------------------------------------------------------------- oracles

/// Random sparse polynomial of degree `d` over `ℝ^{nx} × ℝ^{ny}`.
pub fn random_polynomial(
    rng: &mut dyn RngCore,
    nx: usize,
    ny: usize,
    d: usize,
    nnz: usize,
) -> Result<PolynomialForms> {
    let n = nx + ny;
    let mut forms = vec![MultilinearForm::constant(n, rng.random_range(-1.0..1.0))];
    for k in 1..=d {
        let entries = (0..nnz)
            .map(|_| {
                let idx = (0..k).map(|_| rng.random_range(0..n)).collect();
                (idx, rng.random_range(-1.0..1.0))
            })
            .collect();
        forms.push(MultilinearForm::new(n, k, entries)?);
    }
    PolynomialForms::new(nx, ny, forms)
}

fn block_amax(a: &BlockDiag) -> f64 {
    a.0.iter().map(|b| b.amax()).fold(0.0, f64::max)
}

/// Worst `|E[G] − F|` over random degree-3 polynomials with the blockwise
/// scalar sampler, the expectation taken over the enumerated product support.
pub fn polynomial_unbiasedness(rng: &mut dyn RngCore, instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let forms = random_polynomial(rng, 3, 3, 3, 8)?;
        let game = PolynomialGame::new(forms.clone(), 1.0)?;
        let x = game.geom_x().sample(rng);
        let y = game.geom_y().sample(rng);
        let support = PolynomialGame::draw_support(&x, &y);
        let mut mean = DVector::zeros(6);
        let mut c = CostCounters::default();
        for a in &support {
            for b in &support {
                let g = forms.estimate_g(&[a.point.clone(), b.point.clone()], &mut c)?;
                mean.axpy(a.weight * b.weight, &g, 1.0);
            }
        }
        let f = forms.eval_f_exact(&PolynomialGame::stack(&x, &y), &mut c)?;
        worst = worst.max((mean - f).amax());
    }
    Ok(worst)
}

/// Same for random small pencils and their rank-one sampler.
pub fn pencil_unbiasedness(rng: &mut dyn RngCore, instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (m, nu, blocks) = [(4, 1, 2), (4, 2, 2), (5, 2, 3), (3, 1, 3)][i % 4];
        let inst = PencilInstance::generate(&PencilSizes::uniform(m, nu, blocks), rng.next_u64())?;
        let p = PencilProblem::new(inst.clone())?;
        let x = p.geom_x().sample(rng);
        let y = p.geom_y().sample(rng);
        let atoms = PencilSampler::new(&x, &y).atoms();
        let mut ex = inst.structure().zeros();
        let mut ey = DMatrix::zeros(m, m);
        let mut c = CostCounters::default();
        for a in &atoms {
            for b in &atoms {
                let (gx, gy) = inst.estimate(&[a.point.clone(), b.point.clone()], 1, 1, &mut c)?;
                ex.axpy(a.weight * b.weight, &gx);
                ey += gy * (a.weight * b.weight);
            }
        }
        let (fx, fy) = inst.field(&x.elem, &y.elem)?;
        worst = worst.max(block_amax(&ex.minus(&fx))).max((ey - fy).amax());
    }
    Ok(worst)
}

/// Same for random small clouds and the extreme-point sampler.
pub fn lowdim_unbiasedness(rng: &mut dyn RngCore, instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let cloud = generate_cloud(6, 7, 2, 0.4, rng.next_u64(), false)?;
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation)?;
        let x = p.geom_x().sample(rng);
        let y = p.geom_y().sample(rng);
        let s = LowDimSampler::new(&x, &y, cloud.k())?;
        let mut egx = DMatrix::zeros(cloud.m(), cloud.m());
        let mut egy = DVector::zeros(cloud.n());
        let mut c = CostCounters::default();
        for a in s.atoms() {
            let (gx, gy) = s.estimate(&cloud, &[a.point], 1, 1, &mut c)?;
            egx += gx * a.weight;
            egy += gy * a.weight;
        }
        let (fx, fy) = cloud.field(&x.elem, &y)?;
        worst = worst.max((egx - fx).amax()).max((egy - fy).amax());
    }
    Ok(worst)
}

/// Largest domain violation of any atom of the shipped samplers.
pub fn support_violation(rng: &mut dyn RngCore, instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), rng.next_u64())?;
        let p = PencilProblem::new(inst.clone())?;
        let (x, y) = (p.geom_x().sample(rng), p.geom_y().sample(rng));
        for a in PencilSampler::new(&x, &y).atoms() {
            let (ax, ay) = a.point.to_dense(inst.structure(), inst.m());
            worst = worst
                .max(p.geom_x().violation(&ax))
                .max(p.geom_y().violation(&ay));
        }
        let cloud = generate_cloud(6, 5, 2, 0.3, rng.next_u64(), false)?;
        let q = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation)?;
        let (x, y) = (q.geom_x().sample(rng), q.geom_y().sample(rng));
        let s = LowDimSampler::new(&x, &y, cloud.k())?;
        for a in s.atoms() {
            let (ax, ay) = s.to_dense(&a.point, cloud.n());
            worst = worst
                .max(q.geom_x().violation(&ax))
                .max(q.geom_y().violation(&ay));
        }
        let simplex = VectorSet::simplex(4)?;
        let z = simplex.sample(rng);
        for a in ScalarSampler::new(z.as_slice()).atoms() {
            worst = worst.max(simplex.violation(&a.point.to_dense()));
        }
    }
    Ok(worst)
}

/// `E‖Ḡ_x − F_x‖²` with multiplicity 4 over the same with multiplicity 1.
pub fn multiplicity_variance_ratio(rng: &mut dyn RngCore, trials: usize) -> Result<f64> {
    let forms = random_polynomial(rng, 3, 3, 3, 8)?;
    let z = DVector::from_vec(vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]);
    let sampler = ScalarSampler::new(z.as_slice());
    let (fx, _) = forms.split(&forms.eval_f_exact(&z, &mut CostCounters::default())?);
    let mut variance = |kx: usize| -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..trials {
            let mut gx = DVector::zeros(3);
            for _ in 0..kx {
                let draws = [sampler.draw(rng), sampler.draw(rng)];
                gx += forms
                    .split(&forms.estimate_g(&draws, &mut CostCounters::default())?)
                    .0;
            }
            total += (gx / kx as f64 - &fx).norm_squared();
        }
        Ok(total / trials as f64)
    };
    let v1 = variance(1)?;
    Ok(variance(4)? / v1)
}

/// Spread (max/min) of `flops / (d² + d·n)` for the scalar-sampler estimate
/// over `n ∈ {10², 10³, 10⁴}`.
pub fn scalar_cost_spread(rng: &mut dyn RngCore) -> Result<f64> {
    let d = 3;
    let mut ratios = Vec::new();
    for n in [100usize, 1_000, 10_000] {
        let forms = random_polynomial(rng, n / 2, n - n / 2, d, n)?;
        let z: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let sampler = ScalarSampler::new(z.as_slice());
        let mut c = CostCounters::default();
        for _ in 0..20 {
            c.flops_f += sampler.setup_cost();
            let draws: Vec<SparseVec> = (0..d - 1).map(|_| sampler.draw(rng)).collect();
            forms.estimate_g(&draws, &mut c)?;
        }
        ratios.push(c.flops_f as f64 / 20.0 / (d * d + d * n) as f64);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(hi / lo)
}

fn oracle_suite(rng: &mut dyn RngCore, out: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Oracles;
    out.push(Check::at_most(
        s,
        "polynomial scalar sampler: |E[G] − F|",
        polynomial_unbiasedness(rng, 20)?,
        1e-10,
    ));
    out.push(Check::at_most(
        s,
        "pencil rank-one sampler: |E[G] − F|",
        pencil_unbiasedness(rng, 20)?,
        1e-10,
    ));
    out.push(Check::at_most(
        s,
        "low-dim extreme-point sampler: |E[G] − F|",
        lowdim_unbiasedness(rng, 20)?,
        1e-10,
    ));
    out.push(Check::at_most(
        s,
        "atoms inside the domain (ρ = 0)",
        support_violation(rng, 10)?,
        1e-9,
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let forms = random_polynomial(rng, 2, 2, 1, 4)?;
        let mut c = CostCounters::default();
        let z = DVector::from_fn(4, |_, _| rng.random::<f64>());
        let g = forms.estimate_g(&[], &mut c)?;
        worst = worst.max((g - forms.eval_f_exact(&z, &mut c)?).amax());
    }
    out.push(Check::at_most(
        s,
        "degree ≤ 1: estimate equals F",
        worst,
        0.0,
    ));

    let ratio = multiplicity_variance_ratio(rng, 10_000)?;
    out.push(Check::at_most(
        s,
        "multiplicity 4 variance ratio − ¼",
        (ratio - 0.25).abs(),
        0.05,
    ));
    out.push(Check::at_most(
        s,
        "scalar estimate cost per (d² + dn) spread",
        scalar_cost_spread(rng)?,
        1.5,
    ));
    Ok(())
}

// ------------------------------------------------------------------ solver

/// `‖z̄ − Σγw/Σγ‖_∞` for a recorded pencil run.
pub fn averaging_identity_error() -> Result<f64> {
    let p = PencilProblem::new(PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 3)?)?;
    let setup = SmpSetup::with_defaults(&p, 1, 2, 1.0, HorizonMode::Rolling)?;
    let mut budget = Budget::new(60, 0.0, 20);
    budget.record_trace = true;
    let run = run_smp(
        &p,
        &setup,
        OracleKind::Randomized { kx: 1, ky: 2 },
        &budget,
        5,
    )?;
    let points = run.step_points.as_ref().expect("trace recorded");
    let total: f64 = run.stepsize_trace.iter().sum();
    let mut x = p.geom_x().center().elem.zeros_like();
    let mut y = DMatrix::zeros(5, 5);
    for ((wx, wy), g) in points.iter().zip(&run.stepsize_trace) {
        x.axpy(g / total, wx);
        y += wy * (g / total);
    }
    Ok(block_amax(&x.minus(&run.averaged_x)).max((y - &run.averaged_y).amax()))
}

fn solver_suite(out: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Solver;
    out.push(Check::at_most(
        s,
        "averaging identity",
        averaging_identity_error()?,
        1e-10,
    ));

    let p = PencilProblem::new(PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 4)?)?;
    let setup = SmpSetup::with_defaults(&p, 1, 1, 1.0, HorizonMode::Rolling)?;
    let oracle = OracleKind::Randomized { kx: 1, ky: 1 };
    let a = run_smp(&p, &setup, oracle, &Budget::new(80, 0.0, 40), 11)?;
    let b = run_smp(&p, &setup, oracle, &Budget::new(80, 0.0, 40), 11)?;
    let identical = a.counters == b.counters
        && a.averaged_x == b.averaged_x
        && a.averaged_y == b.averaged_y
        && a.gap_history == b.gap_history;
    out.push(Check::at_most(
        s,
        "determinism of seeded runs (0 = identical)",
        if identical { 0.0 } else { 1.0 },
        0.0,
    ));

    let dmp = run_dmp(&p, &setup, &Budget::new(60, 0.0, 30))?;
    let per_eval = p.instance().field_cost();
    let mismatch = dmp
        .counters
        .flops_f
        .abs_diff(per_eval * dmp.counters.f_exact_evals);
    out.push(Check::at_most(
        s,
        "DMP flops_f = per-eval cost × evaluations",
        mismatch as f64,
        0.0,
    ));

    let game = MatrixGame::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))?;
    let gs = SmpSetup::with_defaults(&game, 1, 1, 1.0, HorizonMode::Rolling)?;
    let cap = (2.0 * gs.omega_radius.powi(2) * gs.lipschitz_l / 0.01).ceil() as usize;
    let run = run_dmp(&game, &gs, &Budget::new(cap, 0.01, 30))?;
    out.push(Check::at_most(
        s,
        "2×2 game: DMP gap within the predicted count",
        run.final_gap(),
        0.01,
    ));

    let formula = [
        (
            smp_stepsize(
                &SmpSetup::from_radii(0.6, 0.8, 1.0, 1.0, 1.0, HorizonMode::FixedT)?,
                Some(7),
                1,
            ),
            1.0 / 7.0,
        ),
        (
            theoretical_bound(
                &SmpSetup::from_radii(1.2, 1.6, 3.0, 0.1, 1.0, HorizonMode::Rolling)?,
                10_000,
            ),
            0.012,
        ),
    ];
    let err = formula
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(Check::at_most(s, "stepsize and bound formulas", err, 1e-12));
    Ok(())
}

// ---------------------------------------------------------------- problems

/// Worst reconstruction error, term-count excess and weight-sum error of
/// [`decompose_q`] over random points of `Q` with `m ≤ 20`.
pub fn qdecomposition_contract(rng: &mut dyn RngCore, count: usize) -> Result<(f64, f64, f64)> {
    let (mut recon, mut terms, mut weights) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..count {
        let m = rng.random_range(2..=20);
        let k = rng.random_range(1..m);
        let xi = sample_capped_simplex(rng, m, k);
        let d = decompose_q(&xi, k)?;
        recon = recon.max((d.reconstruct() - DVector::from_column_slice(&xi)).amax());
        terms = terms.max(d.terms.len() as f64 - m as f64);
        weights = weights.max((d.weight_sum() - 1.0).abs());
    }
    Ok((recon, terms, weights))
}

/// Worst amount by which the pencil certificate undercuts
/// `λ_max(𝒜(x)) − min_{sampled x'} φ(x', y)`, a lower bound on the true gap.
pub fn pencil_certificate_shortfall(
    rng: &mut dyn RngCore,
    instances: usize,
    probes: usize,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let inst = PencilInstance::generate(&PencilSizes::uniform(4, 1, 2), rng.next_u64())?;
        let p = PencilProblem::new(inst.clone())?;
        let (x, y) = (p.geom_x().sample(rng), p.geom_y().sample(rng));
        let cert = inst.certificate(&x.elem, &y.elem)?;
        let mut min_phi = inst.phi(&x.elem, &y.elem)?;
        for _ in 0..probes {
            let u = p.geom_x().sample(rng);
            min_phi = min_phi.min(inst.phi(&u.elem, &y.elem)?);
        }
        let lower = cert.phi_plus - min_phi;
        worst = worst.max(lower - cert.gap).max(-cert.gap);
    }
    Ok(worst)
}

fn problem_suite(rng: &mut dyn RngCore, out: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Problems;
    let (recon, terms, weights) = qdecomposition_contract(rng, 1000)?;
    out.push(Check::at_most(
        s,
        "Q decomposition: reconstruction error",
        recon,
        1e-9,
    ));
    out.push(Check::at_most(
        s,
        "Q decomposition: terms beyond m",
        terms,
        0.0,
    ));
    out.push(Check::at_most(
        s,
        "Q decomposition: |Σλ − 1|",
        weights,
        1e-10,
    ));
    out.push(Check::at_most(
        s,
        "pencil certificate below sampled gap",
        pencil_certificate_shortfall(rng, 10, 400)?,
        1e-9,
    ));

    let mut dev = 0.0f64;
    let mut phi = 0.0f64;
    let mut gap = 0.0f64;
    for adversarial in [false, true] {
        let cloud = generate_cloud(12, 40, 3, 0.3, rng.next_u64(), adversarial)?;
        if let Some(b) = cloud.planted() {
            dev = dev.max(cloud.deviation_from(b) - cloud.delta());
        }
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::DualityGap)?;
        for _ in 0..50 {
            let (x, y) = (p.geom_x().sample(rng), p.geom_y().sample(rng));
            phi = phi.max(cloud.phi(&x.elem, &y)?.abs() - 1.0);
            gap = gap.max(-cloud.duality_gap(&x.elem, &y)?);
        }
    }
    out.push(Check::at_most(
        s,
        "cloud: planted deviation beyond δ",
        dev,
        1e-12,
    ));
    out.push(Check::at_most(
        s,
        "cloud: |φ| beyond the unit scale factor",
        phi,
        1e-9,
    ));
    out.push(Check::at_most(s, "cloud: negative duality gap", gap, 1e-9));

    let mut trips = 0.0;
    let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), rng.next_u64())?;
    let cloud = generate_cloud(8, 10, 2, 0.3, rng.next_u64(), true)?;
    for enc in [Encoding::Text, Encoding::Binary] {
        if PencilInstance::from_bytes(&inst.to_bytes(enc))? != inst {
            trips += 1.0;
        }
        if PointCloud::from_bytes(&cloud.to_bytes(enc))? != cloud {
            trips += 1.0;
        }
    }
    out.push(Check::at_most(
        s,
        "instance serialization round trips (failures)",
        trips,
        0.0,
    ));
    Ok(())
}
