//! Recovering a `k`-dimensional subspace close to every point of a cloud of
//! unit vectors `a_1..a_n ∈ ℝ^m`, through the bilinear relaxation
//!
//! ```text
//! min_{x ∈ X} max_{y ∈ Δ_n} φ(x, y) = −Σ_j y_j a_jᵀ x a_j,   X = {0 ⪯ x ⪯ I, Tr x = k}.
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::serial::{read_file, write_file, Decoder, Encoder, Encoding};
use crate::error::{Error, Result};
use crate::geometry::{SpectralSet, SymPoint, VectorSet};
use crate::linalg::{flops, gaussian_vector, random_orthogonal, SymEigen};
use crate::oracle::{ScalarSampler, SupportAtom};
use crate::solver::{stream_rng, streams, CostCounters, SaddlePoint};

const MAGIC: &[u8; 8] = b"SMPCLD01";
const FLAG_PLANTED: usize = 1;
const FLAG_ADVERSARIAL: usize = 2;
const UNIT_TOL: f64 = 1e-10;
/// Input tolerance of [`decompose_q`].
const Q_TOL: f64 = 1e-9;

/// Unit vectors stored as the columns of an `m × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    k: usize,
    delta: f64,
    points: DMatrix<f64>,
    planted: Option<DMatrix<f64>>,
    adversarial: bool,
}

impl PointCloud {
    pub fn new(
        points: DMatrix<f64>,
        k: usize,
        delta: f64,
        planted: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let (m, n) = points.shape();
        if n == 0 {
            return Err(Error::Argument("point cloud is empty".into()));
        }
        if k < 2 || 2 * k > m {
            return Err(Error::Argument(format!(
                "need 1 < k ≤ m/2, got m={m}, k={k}"
            )));
        }
        if !(delta.is_finite() && (0.0..1.0).contains(&delta)) {
            return Err(Error::Argument(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        for (j, a) in points.column_iter().enumerate() {
            if !a.iter().all(|v| v.is_finite()) || (a.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::Argument(format!("point {j} is not a unit vector")));
            }
        }
        if let Some(b) = &planted {
            if b.shape() != (m, k) {
                return Err(Error::Shape(format!("planted basis must be {m}x{k}")));
            }
            if (b.tr_mul(b) - DMatrix::identity(k, k)).amax() > 1e-9 {
                return Err(Error::Argument("planted basis is not orthonormal".into()));
            }
        }
        Ok(PointCloud {
            k,
            delta,
            points,
            planted,
            adversarial: false,
        })
    }

    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn planted(&self) -> Option<&DMatrix<f64>> {
        self.planted.as_ref()
    }

    pub fn is_adversarial(&self) -> bool {
        self.adversarial
    }

    /// `F_x = −Σ y_j a_j a_jᵀ`, `F_y = (a_jᵀ x a_j)_j`.
    pub fn field(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (m, n) = self.points.shape();
        if x.shape() != (m, m) || y.len() != n {
            return Err(Error::Shape(format!(
                "expected a {m}x{m} matrix and a length-{n} vector"
            )));
        }
        let mut weighted = self.points.clone();
        for (j, mut col) in weighted.column_iter_mut().enumerate() {
            col *= y[j];
        }
        let fx = -(weighted * self.points.transpose());
        let xa = x * &self.points;
        let fy =
            DVector::from_iterator(n, (0..n).map(|j| self.points.column(j).dot(&xa.column(j))));
        Ok((crate::linalg::symmetrize(&fx), fy))
    }

    pub fn field_cost(&self) -> u64 {
        let (m, n) = self.points.shape();
        2 * flops::matmul(m, m, n) + 2 * (m * n) as u64
    }

    pub fn phi(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let (_, fy) = self.field(x, y)?;
        Ok(-fy.dot(y))
    }

    /// Top-`k` eigenvectors of `x` and the largest distance of a point to
    /// their span.
    pub fn deviation_report(&self, x: &DMatrix<f64>) -> Result<DeviationReport> {
        let m = self.m();
        if x.shape() != (m, m) {
            return Err(Error::Shape(format!("expected a {m}x{m} matrix")));
        }
        let eig = SymEigen::new(x)?;
        let basis = eig.vectors.columns(0, self.k).into_owned();
        let deviation = self.deviation_from(&basis);
        Ok(DeviationReport { deviation, basis })
    }

    /// `max_j ‖a_j − BBᵀa_j‖₂` for orthonormal `B`.
    pub fn deviation_from(&self, basis: &DMatrix<f64>) -> f64 {
        let proj = basis * basis.tr_mul(&self.points);
        (&self.points - proj)
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// `−min_j a_jᵀ x a_j + (sum of the k largest eigenvalues of Σ y_j a_j a_jᵀ)`.
    pub fn duality_gap(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let (fx, fy) = self.field(x, y)?;
        let vals = crate::linalg::sym_eigenvalues(&-fx)?;
        let top: f64 = vals.iter().take(self.k).sum();
        Ok(top - fy.min())
    }

    pub fn to_bytes(&self, encoding: Encoding) -> Vec<u8> {
        let mut e = Encoder::new(encoding, MAGIC);
        let mut flags = 0;
        if self.planted.is_some() {
            flags |= FLAG_PLANTED;
        }
        if self.adversarial {
            flags |= FLAG_ADVERSARIAL;
        }
        e.uint(self.m());
        e.uint(self.n());
        e.uint(self.k);
        e.real(self.delta);
        e.uint(flags);
        e.newline();
        e.matrix(&self.points.transpose());
        if let Some(b) = &self.planted {
            e.matrix(b);
        }
        e.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(data, MAGIC)?;
        let (m, n, k) = (dec.uint()?, dec.uint()?, dec.uint()?);
        let delta = dec.real()?;
        let flags = dec.uint()?;
        if flags & !(FLAG_PLANTED | FLAG_ADVERSARIAL) != 0 {
            return Err(Error::Format(format!("unknown flags {flags:#x}")));
        }
        if m.checked_mul(n).is_none_or(|s| s > 1 << 32) {
            return Err(Error::Format("cloud size is implausibly large".into()));
        }
        let points = dec.matrix(n, m)?.transpose();
        let planted = if flags & FLAG_PLANTED != 0 {
            Some(dec.matrix(m, k)?)
        } else {
            None
        };
        dec.finish()?;
        let mut cloud = Self::new(points, k, delta, planted)?;
        cloud.adversarial = flags & FLAG_ADVERSARIAL != 0;
        Ok(cloud)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> Result<()> {
        write_file(path, &self.to_bytes(encoding))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub deviation: f64,
    pub basis: DMatrix<f64>,
}

/// Plants a random `k`-dimensional subspace `L` and draws unit points at
/// distance at most `delta` from it.
///
/// Random mode: `a = cos θ·u + sin θ·w` with `u ∈ L`, `w ⟂ L` uniform unit
/// vectors and `sin θ ~ U[0, δ]`.
///
/// Adversarial mode: about 98% of the points are `cos θ·s_1 ± sin θ·w_r` with
/// `sin θ ∈ [0.9δ, δ]`, where `s_1` is one direction of `L` and `w_1..w_{k−1}`
/// are fixed directions orthogonal to `L`; the rest are `±s_2, …, ±s_k`.
/// The covariance then favours `span{s_1, w_r}` and PCA misses `s_2..s_k`
/// entirely once `0.98δ² > 0.02`.
pub fn generate_cloud(
    m: usize,
    n: usize,
    k: usize,
    delta: f64,
    seed: u64,
    adversarial: bool,
) -> Result<PointCloud> {
    if k < 2 || 2 * k > m {
        return Err(Error::config(
            "k",
            format!("need 1 < k ≤ m/2, got m={m}, k={k}"),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("delta", "must lie in (0, 1)"));
    }
    if n == 0 {
        return Err(Error::config("n", "must be ≥ 1"));
    }
    let mut rng = stream_rng(seed, streams::INSTANCE);
    let q = random_orthogonal(&mut rng, m);
    let basis = q.columns(0, k).into_owned();
    let mut points = DMatrix::zeros(m, n);
    if adversarial {
        let special = ((0.02 * n as f64).round() as usize).max(k - 1).min(n);
        let s1 = q.column(0);
        for j in 0..n {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let a: DVector<f64> = if j < special {
                q.column(1 + j % (k - 1)) * sign
            } else {
                let sin = delta * (0.9 + 0.1 * rng.random::<f64>());
                let cos = (1.0 - sin * sin).sqrt();
                let w = q.column(k + rng.random_range(0..k - 1));
                s1 * cos + w * (sign * sin)
            };
            points.set_column(j, &(&a / a.norm()));
        }
    } else {
        for j in 0..n {
            let g = gaussian_vector(&mut rng, k);
            let u = &basis * (&g / g.norm());
            let h = gaussian_vector(&mut rng, m);
            let mut w = &h - &basis * basis.tr_mul(&h);
            w /= w.norm();
            let sin = delta * rng.random::<f64>();
            let cos = (1.0 - sin * sin).sqrt();
            let a = u * cos + w * sin;
            points.set_column(j, &(&a / a.norm()));
        }
    }
    let mut cloud = PointCloud::new(points, k, delta, Some(basis))?;
    cloud.adversarial = adversarial;
    Ok(cloud)
}

/// `ξ = Σ_i λ_i 𝟙[I_i]` with `|I_i| = k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QDecomposition {
    pub terms: Vec<(f64, Vec<usize>)>,
    pub source: DVector<f64>,
}

impl QDecomposition {
    pub fn reconstruct(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.source.len());
        for (lambda, idx) in &self.terms {
            for &i in idx {
                out[i] += lambda;
            }
        }
        out
    }

    pub fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.0).sum()
    }
}

/// Moves `ξ` (within tolerance of `Q`) onto `Q` exactly.
fn clip_to_q(xi: &[f64], k: usize) -> Result<Vec<f64>> {
    let kf = k as f64;
    let sum: f64 = xi.iter().sum();
    let outside = xi.iter().any(|&v| !(-Q_TOL..=1.0 + Q_TOL).contains(&v));
    if outside || (sum - kf).abs() > Q_TOL * kf.max(1.0) || !sum.is_finite() {
        return Err(Error::Decomposition(format!(
            "vector is outside {{0 ≤ ξ ≤ 1, Σξ = {k}}} (sum {sum})"
        )));
    }
    let mut r: Vec<f64> = xi.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let diff = kf - r.iter().sum::<f64>();
    if diff > 0.0 {
        let room: f64 = r.iter().map(|v| 1.0 - v).sum();
        r.iter_mut().for_each(|v| *v += diff * (1.0 - *v) / room);
    } else if diff < 0.0 {
        let mass: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v += diff * *v / mass);
    }
    r.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(r)
}

/// Greedy peeling: take the `k` largest residual coordinates (ties by the
/// lowest index) and remove the largest multiple of that vertex keeping the
/// residual inside `s·Q`, where `s` is the remaining mass.
pub fn decompose_q(xi: &[f64], k: usize) -> Result<QDecomposition> {
    let m = xi.len();
    if k == 0 || k >= m {
        return Err(Error::Argument(format!("need 1 ≤ k < m, got m={m}, k={k}")));
    }
    let mut r = clip_to_q(xi, k)?;
    let mut s = 1.0;
    let mut terms: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut order: Vec<usize> = (0..m).collect();
    while s > 1e-13 {
        if terms.len() > m {
            return Err(Error::Decomposition(format!(
                "no convergence after {} steps",
                m + 1
            )));
        }
        order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
        let kth = r[order[k - 1]];
        let next = r[order[k]];
        let lambda = kth.min(s - next).min(s);
        if lambda <= 0.0 {
            return Err(Error::Decomposition(format!(
                "no progress with residual mass {s:e}"
            )));
        }
        let mut idx = order[..k].to_vec();
        idx.sort_unstable();
        for &i in &idx {
            r[i] -= lambda;
        }
        s -= lambda;
        // snap coordinates that hit a bound up to roundoff
        for v in r.iter_mut() {
            if *v < 1e-15 {
                *v = 0.0;
            } else if *v > s - 1e-15 {
                *v = s.max(0.0);
            }
        }
        terms.push((lambda, idx));
    }
    if let Some(last) = terms.last_mut() {
        last.0 += s;
    }
    if terms.len() > m {
        return Err(Error::Decomposition(format!(
            "{} terms exceed m = {m}",
            terms.len()
        )));
    }
    Ok(QDecomposition {
        terms,
        source: DVector::from_column_slice(xi),
    })
}

/// One draw: the `x`-atom is the projector onto `scale·U_I`, the `y`-atom is
/// `scale·e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimAtom {
    pub x: Option<(f64, Vec<usize>)>,
    pub y: Option<(f64, usize)>,
}

/// `P_z` from the eigendecomposition of `x` and the weights `y`.
#[derive(Debug, Clone)]
pub struct LowDimSampler<'a> {
    x: &'a SymPoint,
    decomposition: QDecomposition,
    sx: ScalarSampler,
    sy: ScalarSampler,
}

impl<'a> LowDimSampler<'a> {
    pub fn new(x: &'a SymPoint, y: &DVector<f64>, k: usize) -> Result<Self> {
        let xi: Vec<f64> = x.eig.values.iter().copied().collect();
        let decomposition = decompose_q(&xi, k)?;
        let weights: Vec<f64> = decomposition.terms.iter().map(|t| t.0).collect();
        let y_plus: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        Ok(LowDimSampler {
            x,
            sx: ScalarSampler::new(&weights),
            sy: ScalarSampler::new(&y_plus),
            decomposition,
        })
    }

    pub fn decomposition(&self) -> &QDecomposition {
        &self.decomposition
    }

    /// Decomposition (`k m²`) plus the cumulative tables.
    pub fn setup_cost(&self) -> u64 {
        let m = self.x.eig.values.len();
        let k = self.decomposition.terms.first().map_or(0, |t| t.1.len());
        (k * m * m) as u64 + self.sx.setup_cost() + self.sy.setup_cost()
    }

    fn atom(&self, xs: Option<(usize, f64)>, ys: Option<(usize, f64)>) -> LowDimAtom {
        LowDimAtom {
            x: xs.map(|(i, v)| (v, self.decomposition.terms[i].1.clone())),
            y: ys.map(|(j, v)| (v, j)),
        }
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> LowDimAtom {
        let xs = self.sx.draw(rng).entries.first().copied();
        let ys = self.sy.draw(rng).entries.first().copied();
        self.atom(xs, ys)
    }

    pub fn atoms(&self) -> Vec<SupportAtom<LowDimAtom>> {
        let mut out = Vec::new();
        for a in self.sx.atoms() {
            for b in self.sy.atoms() {
                out.push(SupportAtom {
                    point: self.atom(
                        a.point.entries.first().copied(),
                        b.point.entries.first().copied(),
                    ),
                    weight: a.weight * b.weight,
                });
            }
        }
        out
    }

    /// Dense `(ξ, η)` of an atom.
    pub fn to_dense(&self, atom: &LowDimAtom, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.x.eig.values.len();
        let mut x = DMatrix::zeros(m, m);
        if let Some((s, idx)) = &atom.x {
            for &i in idx {
                let u = self.x.eig.vectors.column(i);
                x.ger(*s, &u, &u, 1.0);
            }
        }
        let mut y = DVector::zeros(n);
        if let Some((s, j)) = atom.y {
            y[j] = s;
        }
        (x, y)
    }

    /// `G_x = −mean of s·a_j a_jᵀ` over the first `kx` draws and
    /// `G_y,j = mean of s·Σ_{ℓ∈I}(a_jᵀU_ℓ)²` over the first `ky`.
    pub fn estimate(
        &self,
        cloud: &PointCloud,
        draws: &[LowDimAtom],
        kx: usize,
        ky: usize,
        counters: &mut CostCounters,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if kx == 0 || ky == 0 || draws.len() != kx.max(ky) {
            return Err(Error::Argument(format!(
                "need max(kx, ky) = {} draws with kx, ky ≥ 1",
                kx.max(ky)
            )));
        }
        let (m, n) = cloud.points.shape();
        let mut gx = DMatrix::zeros(m, m);
        let mut gy = DVector::zeros(n);
        let mut cost = 0;
        for atom in &draws[..kx] {
            if let Some((s, j)) = atom.y {
                let a = cloud.points.column(j);
                gx.ger(-s, &a, &a, 1.0);
                cost += (m * m) as u64;
            }
        }
        for atom in &draws[..ky] {
            if let Some((s, idx)) = &atom.x {
                for &l in idx {
                    let proj = cloud.points.tr_mul(&self.x.eig.vectors.column(l));
                    gy.zip_apply(&proj, |g, p| *g += s * p * p);
                    cost += flops::matmul(n, m, 1) + 2 * n as u64;
                }
            }
        }
        gx /= kx as f64;
        gy /= ky as f64;
        counters.flops_f += cost;
        Ok((gx, gy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowDimMetric {
    /// Largest distance of a point to the top-`k` eigenspace of `x`.
    #[default]
    Deviation,
    DualityGap,
}

#[derive(Debug, Clone)]
pub struct LowDimProblem {
    cloud: PointCloud,
    gx: SpectralSet,
    gy: VectorSet,
    metric: LowDimMetric,
}

impl LowDimProblem {
    pub fn new(cloud: PointCloud, metric: LowDimMetric) -> Result<Self> {
        Ok(LowDimProblem {
            gx: SpectralSet::trace_box(cloud.m(), cloud.k())?,
            gy: VectorSet::simplex(cloud.n())?,
            cloud,
            metric,
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn metric(&self) -> LowDimMetric {
        self.metric
    }
}

impl SaddlePoint for LowDimProblem {
    type GX = SpectralSet;
    type GY = VectorSet;

    fn geom_x(&self) -> &SpectralSet {
        &self.gx
    }

    fn geom_y(&self) -> &VectorSet {
        &self.gy
    }

    fn degree(&self) -> usize {
        2
    }

    /// Unit vectors, `0 ⪯ x ⪯ I` and `‖y‖₁ ≤ 1` give `|φ| ≤ 1` on the hull.
    fn scale_bound(&self) -> f64 {
        1.0
    }

    fn exact_field(
        &self,
        x: &SymPoint,
        y: &DVector<f64>,
        counters: &mut CostCounters,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        counters.f_exact_evals += 1;
        counters.flops_f += self.cloud.field_cost();
        self.cloud.field(&x.elem, y)
    }

    fn sample_field(
        &self,
        x: &SymPoint,
        y: &DVector<f64>,
        kx: usize,
        ky: usize,
        rng: &mut dyn RngCore,
        counters: &mut CostCounters,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let sampler = LowDimSampler::new(x, y, self.cloud.k())?;
        let n = kx.max(ky);
        let draws: Vec<LowDimAtom> = (0..n).map(|_| sampler.draw(rng)).collect();
        counters.oracle_samples += n as u64;
        counters.flops_f += sampler.setup_cost();
        sampler.estimate(&self.cloud, &draws, kx, ky, counters)
    }

    fn certificate(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        match self.metric {
            LowDimMetric::Deviation => Ok(self.cloud.deviation_report(x)?.deviation),
            LowDimMetric::DualityGap => self.cloud.duality_gap(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::oracle::{sample_scale_factor, ScaleFactorBound};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cloud(seed: u64) -> PointCloud {
        generate_cloud(6, 5, 2, 0.3, seed, false).unwrap()
    }

    fn assert_decomposes(xi: &[f64], k: usize) -> QDecomposition {
        let d = decompose_q(xi, k).unwrap();
        let err = (d.reconstruct() - DVector::from_column_slice(xi)).amax();
        assert!(err <= 1e-9, "reconstruction error {err}");
        assert!(d.terms.len() <= xi.len());
        assert!((d.weight_sum() - 1.0).abs() <= 1e-10);
        assert!(d
            .terms
            .iter()
            .all(|(l, idx)| *l > 0.0 && *l <= 1.0 + 1e-12 && idx.len() == k));
        d
    }

    #[test]
    fn boolean_vector_is_single_term() {
        let d = assert_decomposes(&[0.0, 1.0, 0.0, 1.0, 1.0], 3);
        assert_eq!(d.terms, vec![(1.0, vec![1, 3, 4])]);
    }

    #[test]
    fn uniform_vector_decomposes() {
        let d = assert_decomposes(&[0.5; 4], 2);
        assert_eq!(d.terms.len(), 2);
    }

    #[test]
    fn random_vectors_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let m = rng.random_range(3..=20);
            let k = rng.random_range(1..m);
            let xi = crate::geometry::sample_capped_simplex(&mut rng, m, k);
            assert_decomposes(&xi, k);
        }
    }

    #[test]
    fn rejects_points_outside_q() {
        assert!(decompose_q(&[0.5, 0.5, 0.5], 2).is_err());
        assert!(decompose_q(&[1.2, 0.8, 0.0], 2).is_err());
        // inside tolerance is repaired
        assert_decomposes(&[1.0 + 5e-10, 0.5, 0.5 - 5e-10, 0.0], 2);
    }

    #[test]
    fn field_examples() {
        let cloud = small_cloud(1);
        let (m, n, k) = (cloud.m(), cloud.n(), cloud.k());
        let mut e1 = DVector::zeros(n);
        e1[0] = 1.0;
        let x = DMatrix::identity(m, m) * (k as f64 / m as f64);
        let (fx, fy) = cloud.field(&x, &e1).unwrap();
        let a = cloud.points().column(0);
        assert!((fx + a * a.transpose()).amax() < 1e-15);
        assert!((fy - DVector::from_element(n, k as f64 / m as f64)).amax() < 1e-12);
    }

    #[test]
    fn field_matches_finite_differences() {
        let cloud = small_cloud(2);
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::DualityGap).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = p.geom_x().sample(&mut rng).elem;
        let y = p.geom_y().sample(&mut rng);
        let (fx, fy) = cloud.field(&x, &y).unwrap();
        let h = 1e-6;
        for r in 0..cloud.m() {
            for c in 0..cloud.m() {
                let mut e = DMatrix::zeros(cloud.m(), cloud.m());
                e[(r, c)] = h;
                let fd = (cloud.phi(&(&x + &e), &y).unwrap() - cloud.phi(&(&x - &e), &y).unwrap())
                    / (2.0 * h);
                assert!((fd - fx[(r, c)]).abs() < 1e-8);
            }
        }
        for j in 0..cloud.n() {
            let mut e = DVector::zeros(cloud.n());
            e[j] = h;
            let fd = (cloud.phi(&x, &(&y + &e)).unwrap() - cloud.phi(&x, &(&y - &e)).unwrap())
                / (2.0 * h);
            assert!((fd + fy[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn phi_is_bilinear_in_y() {
        let cloud = small_cloud(5);
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = p.geom_x().sample(&mut rng).elem;
            let y1 = p.geom_y().sample(&mut rng);
            let y2 = p.geom_y().sample(&mut rng);
            let t: f64 = rng.random();
            let lhs = cloud.phi(&x, &(&y1 * t + &y2 * (1.0 - t))).unwrap();
            let rhs = t * cloud.phi(&x, &y1).unwrap() + (1.0 - t) * cloud.phi(&x, &y2).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_factor_at_most_one() {
        let cloud = generate_cloud(8, 30, 2, 0.5, 6, true).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut bound = ScaleFactorBound::new(p.scale_bound()).unwrap();
        let b = sample_scale_factor(
            |z: &(DMatrix<f64>, DVector<f64>), t| Ok(t * t * cloud.phi(&z.0, &z.1)?),
            |r| (p.geom_x().sample(r).elem, p.geom_y().sample(r)),
            500,
            &mut rng,
            &mut bound,
        )
        .unwrap();
        assert!(b.v_sampled_lower <= 1.0 + 1e-9 && b.v_sampled_lower > 0.5);
    }

    #[test]
    fn sampler_expectation_and_support() {
        let cloud = generate_cloud(5 * 2, 7, 2, 0.4, 7, false).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let x = p.geom_x().sample(&mut rng);
            let y = p.geom_y().sample(&mut rng);
            let s = LowDimSampler::new(&x, &y, cloud.k()).unwrap();
            let mut ex = DMatrix::zeros(cloud.m(), cloud.m());
            let mut ey = DVector::zeros(cloud.n());
            let mut egx = DMatrix::zeros(cloud.m(), cloud.m());
            let mut egy = DVector::zeros(cloud.n());
            let mut c = CostCounters::default();
            for a in s.atoms() {
                let (ax, ay) = s.to_dense(&a.point, cloud.n());
                assert!(p.geom_x().violation(&ax) <= 1e-9);
                assert!(p.geom_y().violation(&ay) <= 1e-9);
                ex += ax * a.weight;
                ey += ay * a.weight;
                let (gx, gy) = s
                    .estimate(&cloud, std::slice::from_ref(&a.point), 1, 1, &mut c)
                    .unwrap();
                egx += gx * a.weight;
                egy += gy * a.weight;
            }
            assert!((ex - &x.elem).amax() < 1e-9);
            assert!((ey - &y).amax() < 1e-12);
            let (fx, fy) = cloud.field(&x.elem, &y).unwrap();
            assert!((egx - fx).amax() < 1e-9);
            assert!((egy - fy).amax() < 1e-9);
        }
    }

    #[test]
    fn projector_and_vertex_give_deterministic_atoms() {
        let cloud = generate_cloud(6, 4, 2, 0.2, 9, false).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_orthogonal(&mut rng, 6);
        let x = p
            .geom_x()
            .point_from_eigen(w, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut y = DVector::zeros(4);
        y[2] = 1.0;
        let s = LowDimSampler::new(&x, &y, 2).unwrap();
        for _ in 0..10 {
            let a = s.draw(&mut rng);
            assert_eq!(a.y, Some((1.0, 2)));
            let (ax, _) = s.to_dense(&a, 4);
            assert!((ax - &x.elem).amax() < 1e-12);
        }
        // a point along an eigen-column scores 1 on that column
        let u0 = x.eig.vectors.column(0).into_owned();
        let aligned = PointCloud::new(
            DMatrix::from_columns(&[u0.clone(), cloud.points().column(1).into_owned()]),
            2,
            0.2,
            None,
        )
        .unwrap();
        let atom = LowDimAtom {
            x: Some((1.0, vec![0, 3])),
            y: Some((1.0, 0)),
        };
        let (_, gy) = s
            .estimate(&aligned, &[atom], 1, 1, &mut CostCounters::default())
            .unwrap();
        assert!((gy[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_mean_within_three_standard_errors() {
        let cloud = generate_cloud(10, 40, 3, 0.4, 10, false).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = p.geom_x().sample(&mut rng);
        let y = p.geom_y().sample(&mut rng);
        let (fx, fy) = cloud.field(&x.elem, &y).unwrap();
        let target: Vec<f64> = fx.iter().chain(fy.iter()).copied().collect();
        let mut sum = vec![0.0; target.len()];
        let mut sq = vec![0.0; target.len()];
        let n = 100_000;
        let mut c = CostCounters::default();
        for _ in 0..n {
            let (gx, gy) = p.sample_field(&x, &y, 1, 1, &mut rng, &mut c).unwrap();
            for (i, v) in gx.iter().chain(gy.iter()).enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let nf = n as f64;
        for i in 0..target.len() {
            let mean = sum[i] / nf;
            let se = ((sq[i] / nf - mean * mean).max(0.0) / nf).sqrt();
            assert!((mean - target[i]).abs() <= 3.0 * se + 1e-12, "entry {i}");
        }
    }

    #[test]
    fn deviation_report_examples() {
        let cloud = generate_cloud(8, 50, 2, 1e-9, 11, false).unwrap();
        let b = cloud.planted().unwrap().clone();
        let proj = &b * b.transpose();
        assert!(cloud.deviation_report(&proj).unwrap().deviation < 1e-8);
        // add a point orthogonal to the planted span
        let mut orth = DVector::zeros(8);
        orth[0] = 1.0;
        orth -= &b * b.tr_mul(&orth);
        orth /= orth.norm();
        let pts = DMatrix::from_columns(&[cloud.points().column(0).into_owned(), orth]);
        let two = PointCloud::new(pts, 2, 0.5, None).unwrap();
        assert!((two.deviation_report(&proj).unwrap().deviation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_matches_naive_loop_and_relaxation() {
        let cloud = generate_cloud(12, 60, 3, 0.5, 12, false).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::Deviation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = p.geom_x().sample(&mut rng).elem;
        let report = cloud.deviation_report(&x).unwrap();
        let b = &report.basis;
        let mut naive: f64 = 0.0;
        for j in 0..cloud.n() {
            let a = cloud.points().column(j);
            let mut r = a.into_owned();
            for l in 0..3 {
                let c = b.column(l).dot(&a);
                r -= b.column(l) * c;
            }
            naive = naive.max(r.norm());
        }
        assert!((report.deviation - naive).abs() < 1e-12);
        let proj = b * b.transpose();
        let (_, fy) = cloud
            .field(&proj, &DVector::from_element(cloud.n(), 1.0 / 60.0))
            .unwrap();
        assert!((report.deviation.powi(2) - (1.0 - fy.min())).abs() < 1e-10);
    }

    #[test]
    fn generated_clouds_satisfy_invariants() {
        for adversarial in [false, true] {
            let cloud = generate_cloud(20, 300, 4, 0.4, 13, adversarial).unwrap();
            let b = cloud.planted().unwrap();
            assert!(cloud.deviation_from(b) <= 0.4 + 1e-9);
            for a in cloud.points().column_iter() {
                assert!((a.norm() - 1.0).abs() < 1e-10);
            }
            assert_eq!(
                cloud,
                generate_cloud(20, 300, 4, 0.4, 13, adversarial).unwrap()
            );
        }
        assert!(generate_cloud(6, 10, 4, 0.3, 0, false).is_err());
        assert!(generate_cloud(6, 10, 2, 1.0, 0, false).is_err());
    }

    #[test]
    fn adversarial_clouds_defeat_pca() {
        let cloud = generate_cloud(100, 2000, 10, 0.4, 14, true).unwrap();
        let cov = cloud.points() * cloud.points().transpose();
        let report = cloud.deviation_report(&cov).unwrap();
        assert!(report.deviation >= 0.9);
        let random = generate_cloud(100, 2000, 10, 0.4, 14, false).unwrap();
        let cov = random.points() * random.points().transpose();
        assert!(random.deviation_report(&cov).unwrap().deviation < 0.9);
    }

    #[test]
    fn serialization_round_trips() {
        for adversarial in [false, true] {
            let cloud = generate_cloud(6, 9, 2, 0.25, 15, adversarial).unwrap();
            for enc in [Encoding::Text, Encoding::Binary] {
                let bytes = cloud.to_bytes(enc);
                assert_eq!(PointCloud::from_bytes(&bytes).unwrap(), cloud);
            }
        }
        let plain = PointCloud::new(small_cloud(1).points().clone(), 2, 0.3, None).unwrap();
        let text = plain.to_bytes(Encoding::Text);
        assert!(text.starts_with(b"SMPCLD01\n6 5 2 3e-1 0\n"));
        assert_eq!(PointCloud::from_bytes(&text).unwrap(), plain);
    }

    #[test]
    fn duality_gap_is_nonnegative_and_zero_at_planted_solution() {
        let cloud = generate_cloud(8, 40, 2, 0.3, 16, false).unwrap();
        let p = LowDimProblem::new(cloud.clone(), LowDimMetric::DualityGap).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let x = p.geom_x().sample(&mut rng).elem;
            let y = p.geom_y().sample(&mut rng);
            assert!(cloud.duality_gap(&x, &y).unwrap() >= -1e-12);
        }
    }
}
