//! Randomized first-order oracles for polynomial saddle point problems.
//!
//! With `φ(z) = Σ_k Q_k(z,…,z)` for symmetric `k`-linear forms `Q_k`, the
//! field satisfies `⟨F(z),h⟩ = Σ_k k·Q_k(Dh, z,…,z)` with `D = Diag{I, −I}`.
//! Replacing the `z` arguments by independent draws `z¹,…,z^{d−1}` from any
//! distribution with mean `z` gives an unbiased estimate `G` of `F(z)`, cheap
//! whenever the draws are sparse.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::solver::CostCounters;

/// Sparse `k`-linear form stored as `(indices, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilinearForm {
    dim: usize,
    degree: usize,
    entries: Vec<(Vec<usize>, f64)>,
    symmetric: bool,
    /// `(i₂,…,i_k) ↦ [(i₁, T)]`, for first-slot contraction against sparse arguments.
    tails: HashMap<Vec<usize>, Vec<(usize, f64)>>,
}

impl MultilinearForm {
    pub fn new(dim: usize, degree: usize, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        for (idx, v) in &entries {
            if idx.len() != degree {
                return Err(Error::Shape(format!(
                    "entry {idx:?} has {} indices, form degree is {degree}",
                    idx.len()
                )));
            }
            if let Some(&i) = idx.iter().find(|&&i| i >= dim) {
                return Err(Error::Shape(format!(
                    "index {i} out of range for dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Argument("form coefficients must be finite".into()));
            }
        }
        let mut merged: HashMap<Vec<usize>, f64> = HashMap::new();
        for (idx, v) in entries {
            *merged.entry(idx).or_insert(0.0) += v;
        }
        let mut entries: Vec<(Vec<usize>, f64)> =
            merged.into_iter().filter(|(_, v)| *v != 0.0).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut form = MultilinearForm {
            dim,
            degree,
            entries,
            symmetric: false,
            tails: HashMap::new(),
        };
        form.symmetric = form.check_symmetry();
        form.build_tails();
        Ok(form)
    }

    /// Degree-0 form holding a constant.
    pub fn constant(dim: usize, value: f64) -> Self {
        Self::new(dim, 0, vec![(Vec::new(), value)]).expect("constant form")
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        Self::new(dim, degree, Vec::new()).expect("zero form")
    }

    fn build_tails(&mut self) {
        self.tails.clear();
        if self.degree == 0 {
            return;
        }
        for (idx, v) in &self.entries {
            self.tails
                .entry(idx[1..].to_vec())
                .or_default()
                .push((idx[0], *v));
        }
    }

    fn check_symmetry(&self) -> bool {
        let lookup: HashMap<&[usize], f64> = self
            .entries
            .iter()
            .map(|(i, v)| (i.as_slice(), *v))
            .collect();
        self.entries.iter().all(|(idx, v)| {
            permutations(idx).iter().all(|p| {
                let other = lookup.get(p.as_slice()).copied().unwrap_or(0.0);
                (other - v).abs() <= 1e-14 * v.abs().max(other.abs())
            })
        })
    }

    /// Symmetric form with the same diagonal `Q(z,…,z)`.
    pub fn symmetrized(&self) -> Self {
        if self.symmetric {
            return self.clone();
        }
        let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
        for (idx, v) in &self.entries {
            let perms = permutations(idx);
            let share = v / perms.len() as f64;
            // distinct permutations of a multiset each get v / (#distinct)
            for p in perms {
                *out.entry(p).or_insert(0.0) += share;
            }
        }
        let mut f = Self::new(self.dim, self.degree, out.into_iter().collect())
            .expect("indices already validated");
        f.symmetric = true;
        f
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `Q(z¹,…,z^k)`.
    pub fn eval(&self, args: &[&DVector<f64>]) -> Result<f64> {
        if args.len() != self.degree {
            return Err(Error::Shape(format!(
                "{}-linear form given {} arguments",
                self.degree,
                args.len()
            )));
        }
        if let Some(a) = args.iter().find(|a| a.len() != self.dim) {
            return Err(Error::Shape(format!(
                "argument of length {} for a form on dimension {}",
                a.len(),
                self.dim
            )));
        }
        Ok(self
            .entries
            .iter()
            .map(|(idx, v)| v * idx.iter().zip(args).map(|(&i, a)| a[i]).product::<f64>())
            .sum())
    }

    /// Adds `scale · ∂_h Q(h, z, …, z)` (the first-slot coefficients) to `out`;
    /// returns the flop count.
    fn add_first_slot_dense(&self, z: &DVector<f64>, scale: f64, out: &mut DVector<f64>) -> u64 {
        for (idx, v) in &self.entries {
            let tail: f64 = idx[1..].iter().map(|&i| z[i]).product();
            out[idx[0]] += scale * v * tail;
        }
        (self.entries.len() * (self.degree + 1)) as u64
    }

    /// Same with sparse arguments `z¹,…,z^{k−1}`, via the tail index.
    fn add_first_slot_sparse(
        &self,
        args: &[&SparseVec],
        scale: f64,
        out: &mut DVector<f64>,
    ) -> u64 {
        let mut flops = 0u64;
        let mut tail = vec![0usize; args.len()];
        let mut counters = vec![0usize; args.len()];
        if args.iter().any(|a| a.entries.is_empty()) {
            return 0;
        }
        loop {
            let mut coef = scale;
            for (r, a) in args.iter().enumerate() {
                let (i, v) = a.entries[counters[r]];
                tail[r] = i;
                coef *= v;
            }
            flops += args.len() as u64 + 1;
            if let Some(list) = self.tails.get(&tail) {
                for &(i, t) in list {
                    out[i] += coef * t;
                }
                flops += 2 * list.len() as u64;
            }
            // odometer over the product of supports
            let mut r = 0;
            loop {
                if r == args.len() {
                    return flops;
                }
                counters[r] += 1;
                if counters[r] < args[r].entries.len() {
                    break;
                }
                counters[r] = 0;
                r += 1;
            }
        }
    }
}

/// All distinct permutations of `idx`.
fn permutations(idx: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    let mut out = vec![sorted.clone()];
    // next lexicographic permutation
    loop {
        let n = sorted.len();
        let Some(i) = (1..n).rev().find(|&i| sorted[i - 1] < sorted[i]) else {
            return out;
        };
        let j = (i..n)
            .rev()
            .find(|&j| sorted[j] > sorted[i - 1])
            .expect("pivot");
        sorted.swap(i - 1, j);
        sorted[i..].reverse();
        out.push(sorted.clone());
    }
}

/// Compressed sparse vector, the 1-sparse atoms of the scalar sampler and
/// their per-block concatenations.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn zero(dim: usize) -> Self {
        SparseVec {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for &(i, x) in &self.entries {
            v[i] += x;
        }
        v
    }

    /// Places `self` and `other` side by side: `[self; other]`.
    pub fn concat(&self, other: &SparseVec) -> SparseVec {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dim, v)));
        SparseVec {
            dim: self.dim + other.dim,
            entries,
        }
    }
}

/// A draw with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportAtom<A> {
    pub point: A,
    pub weight: f64,
}

/// Unbiased estimate of `F(z)` with the cost it incurred.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample<X, Y> {
    pub g_x: X,
    pub g_y: Y,
    pub samples_used: usize,
    pub counters: CostCounters,
}

/// `φ(z) = Σ_k Q_k(z,…,z)` on `E = ℝ^{n_x} × ℝ^{n_y}`.
#[derive(Debug, Clone)]
pub struct PolynomialForms {
    dim_x: usize,
    dim_y: usize,
    /// `forms[k]` has degree `k`.
    forms: Vec<MultilinearForm>,
}

impl PolynomialForms {
    /// Forms are symmetrized on construction. `forms[k]` must have degree `k`.
    pub fn new(dim_x: usize, dim_y: usize, forms: Vec<MultilinearForm>) -> Result<Self> {
        let n = dim_x + dim_y;
        if forms.is_empty() {
            return Err(Error::Argument("need at least the constant form".into()));
        }
        for (k, f) in forms.iter().enumerate() {
            if f.degree != k {
                return Err(Error::Shape(format!("forms[{k}] has degree {}", f.degree)));
            }
            if f.dim != n {
                return Err(Error::Shape(format!(
                    "form of degree {k} lives on dimension {}, expected {n}",
                    f.dim
                )));
            }
        }
        Ok(PolynomialForms {
            dim_x,
            dim_y,
            forms: forms.iter().map(MultilinearForm::symmetrized).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim_x + self.dim_y
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn degree(&self) -> usize {
        self.forms.len() - 1
    }

    pub fn forms(&self) -> &[MultilinearForm] {
        &self.forms
    }

    fn check(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "point of length {} for polynomial on dimension {}",
                z.len(),
                self.dim()
            )))
        }
    }

    fn diagonal(&self, k_min: usize, z: &DVector<f64>) -> Result<f64> {
        self.check(z)?;
        let mut total = 0.0;
        for f in &self.forms[k_min..] {
            let args = vec![z; f.degree];
            total += f.eval(&args)?;
        }
        Ok(total)
    }

    /// `Σ_k Q_k(z,…,z)`.
    pub fn eval_polynomial(&self, z: &DVector<f64>) -> Result<f64> {
        self.diagonal(0, z)
    }

    /// `φ̂(z) = Σ_{k≥2} Q_k(z,…,z)`.
    pub fn phi_hat(&self, z: &DVector<f64>) -> Result<f64> {
        self.diagonal(2.min(self.forms.len()), z)
    }

    /// Arithmetic cost charged by [`eval_f_exact`](Self::eval_f_exact).
    pub fn exact_cost(&self) -> u64 {
        self.dim() as u64
            + self.forms[1..]
                .iter()
                .map(|f| (f.nnz() * (f.degree + 1)) as u64)
                .sum::<u64>()
    }

    fn flip(&self, g: &mut DVector<f64>) {
        g.rows_mut(self.dim_x, self.dim_y).neg_mut();
    }

    /// Exact `F(z)`.
    pub fn eval_f_exact(
        &self,
        z: &DVector<f64>,
        counters: &mut CostCounters,
    ) -> Result<DVector<f64>> {
        self.check(z)?;
        let mut g = DVector::zeros(self.dim());
        for f in &self.forms[1..] {
            f.add_first_slot_dense(z, f.degree as f64, &mut g);
        }
        self.flip(&mut g);
        counters.f_exact_evals += 1;
        counters.flops_f += self.exact_cost();
        Ok(g)
    }

    /// `G` with `⟨G,h⟩ = Σ_k k·Q_k(Dh, z¹,…,z^{k−1})`.
    pub fn estimate_g(
        &self,
        draws: &[SparseVec],
        counters: &mut CostCounters,
    ) -> Result<DVector<f64>> {
        let need = self.degree().saturating_sub(1);
        if draws.len() != need {
            return Err(Error::Shape(format!(
                "degree-{} polynomial needs {need} draws, got {}",
                self.degree(),
                draws.len()
            )));
        }
        if let Some(d) = draws.iter().find(|d| d.dim != self.dim()) {
            return Err(Error::Shape(format!("draw of dimension {}", d.dim)));
        }
        let mut g = DVector::zeros(self.dim());
        let mut flops = self.dim() as u64;
        let refs: Vec<&SparseVec> = draws.iter().collect();
        for f in &self.forms[1..] {
            flops += f.add_first_slot_sparse(&refs[..f.degree - 1], f.degree as f64, &mut g);
        }
        self.flip(&mut g);
        counters.flops_f += flops;
        Ok(g)
    }

    /// Splits a vector on `E` into its `x` and `y` parts.
    pub fn split(&self, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            g.rows(0, self.dim_x).into_owned(),
            g.rows(self.dim_x, self.dim_y).into_owned(),
        )
    }
}

/// `[mean of the x-parts; mean of the y-parts]`.
pub fn recombine<X: crate::linalg::Space, Y: crate::linalg::Space>(
    samples_x: &[X],
    samples_y: &[Y],
) -> Result<(X, Y)> {
    fn mean<T: crate::linalg::Space>(s: &[T], side: &str) -> Result<T> {
        let first = s
            .first()
            .ok_or_else(|| Error::Argument(format!("no {side}-samples to recombine")))?;
        let mut acc = first.zeros_like();
        for v in s {
            acc.axpy(1.0, v);
        }
        acc.scale_mut(1.0 / s.len() as f64);
        Ok(acc)
    }
    Ok((mean(samples_x, "x")?, mean(samples_y, "y")?))
}

/// Draws `sign(z_i)‖z‖₁ e_i` with probability `|z_i|/‖z‖₁`.
#[derive(Debug, Clone)]
pub struct ScalarSampler {
    /// `s_i = ‖z‖₁⁻¹ Σ_{j≤i} |z_j|`
    cumulative: Vec<f64>,
    l1: f64,
    signs: Vec<f64>,
}

impl ScalarSampler {
    pub fn new(z: &[f64]) -> Self {
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        let mut acc = 0.0;
        let cumulative = z
            .iter()
            .map(|v| {
                acc += v.abs();
                if l1 > 0.0 {
                    acc / l1
                } else {
                    0.0
                }
            })
            .collect();
        ScalarSampler {
            cumulative,
            l1,
            signs: z.iter().map(|v| v.signum()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    /// Setup cost of the cumulative table.
    pub fn setup_cost(&self) -> u64 {
        2 * self.dim() as u64
    }

    /// Least `i` with `u ≤ s_i`, for `u ∈ (0, 1]`.
    pub fn index_for(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|&s| s < u);
        if i < self.cumulative.len() {
            return i;
        }
        // u above the rounded final sum: last coordinate with positive mass
        (0..self.cumulative.len())
            .rev()
            .find(|&i| i == 0 || self.cumulative[i] > self.cumulative[i - 1])
            .unwrap_or(0)
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> SparseVec {
        if self.l1 == 0.0 {
            return SparseVec::zero(self.dim());
        }
        let u = 1.0 - rng.random::<f64>();
        let i = self.index_for(u);
        SparseVec {
            dim: self.dim(),
            entries: vec![(i, self.signs[i] * self.l1)],
        }
    }

    /// The full support with probabilities.
    pub fn atoms(&self) -> Vec<SupportAtom<SparseVec>> {
        if self.l1 == 0.0 {
            return vec![SupportAtom {
                point: SparseVec::zero(self.dim()),
                weight: 1.0,
            }];
        }
        let mut prev = 0.0;
        let mut out = Vec::new();
        for (i, &s) in self.cumulative.iter().enumerate() {
            let w = s - prev;
            prev = s;
            if w > 0.0 {
                out.push(SupportAtom {
                    point: SparseVec {
                        dim: self.dim(),
                        entries: vec![(i, self.signs[i] * self.l1)],
                    },
                    weight: w,
                });
            }
        }
        out
    }
}

/// Upper bound `V̄` on the scale factor with a sampled lower estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactorBound {
    pub v_upper: f64,
    pub v_sampled_lower: f64,
    sampled_min: f64,
    sampled_max: f64,
}

impl ScaleFactorBound {
    pub fn new(v_upper: f64) -> Result<Self> {
        if !(v_upper.is_finite() && v_upper > 0.0) {
            return Err(Error::config(
                "v_upper",
                "scale-factor bound must be positive",
            ));
        }
        Ok(ScaleFactorBound {
            v_upper,
            v_sampled_lower: 0.0,
            sampled_min: f64::INFINITY,
            sampled_max: f64::NEG_INFINITY,
        })
    }

    fn observe(&mut self, value: f64) {
        self.sampled_min = self.sampled_min.min(value);
        self.sampled_max = self.sampled_max.max(value);
        self.v_sampled_lower = (self.sampled_max - self.sampled_min).max(0.0);
    }
}

/// Refines `bound.v_sampled_lower` with `n_samples` values of `φ̂` at points
/// `θ·z`, `θ ~ U[0,1]`, `z` from `domain_sampler`; these lie in `conv({0} ∪ Z)`.
/// Rejects the configuration when the sampled variation exceeds `v_upper`.
pub fn sample_scale_factor<Z>(
    phi_hat: impl Fn(&Z, f64) -> Result<f64>,
    mut domain_sampler: impl FnMut(&mut dyn RngCore) -> Z,
    n_samples: usize,
    rng: &mut dyn RngCore,
    bound: &mut ScaleFactorBound,
) -> Result<ScaleFactorBound> {
    // the origin belongs to the hull
    if bound.sampled_min.is_infinite() {
        let z = domain_sampler(rng);
        bound.observe(phi_hat(&z, 0.0)?);
    }
    for _ in 0..n_samples {
        let z = domain_sampler(rng);
        let theta = if rng.random::<f64>() < 0.2 {
            1.0
        } else {
            rng.random::<f64>()
        };
        bound.observe(phi_hat(&z, theta)?);
    }
    if bound.v_sampled_lower > bound.v_upper * (1.0 + 1e-9) {
        return Err(Error::config(
            "v_upper",
            format!(
                "sampled scale-factor variation {:.6e} exceeds the bound {:.6e}",
                bound.v_sampled_lower, bound.v_upper
            ),
        ));
    }
    Ok(*bound)
}
