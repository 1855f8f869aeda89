use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{solve_separable, Geometry, PowerDgf, SpectrumSet, DOMAIN_TOL};
use crate::error::{Error, Result};
use crate::linalg::{flops, gaussian_matrix, BlockDiag, SignedSvd, Space};
use crate::solver::CostCounters;

/// Row and column sizes of the diagonal blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl BlockStructure {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || rows.len() != cols.len() {
            return Err(Error::Shape(format!(
                "block structure needs matching nonempty size lists, got {} rows and {} cols",
                rows.len(),
                cols.len()
            )));
        }
        if rows.iter().chain(&cols).any(|&s| s == 0) {
            return Err(Error::Shape("block sizes must be at least 1".into()));
        }
        Ok(BlockStructure { rows, cols })
    }

    /// `count` square `size × size` blocks.
    pub fn uniform(count: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; count], vec![size; count])
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn num_blocks(&self) -> usize {
        self.rows.len()
    }

    /// `n = Σ_j min(m_j, n_j)`, the number of singular values.
    pub fn spectrum_len(&self) -> usize {
        self.rows
            .iter()
            .zip(&self.cols)
            .map(|(&r, &c)| r.min(c))
            .sum()
    }

    pub fn zeros(&self) -> BlockDiag {
        BlockDiag::zeros(&self.rows, &self.cols)
    }

    pub fn conforms(&self, x: &BlockDiag) -> bool {
        x.0.len() == self.rows.len()
            && x.0
                .iter()
                .zip(self.rows.iter().zip(&self.cols))
                .all(|(b, (&r, &c))| b.nrows() == r && b.ncols() == c)
    }
}

/// Block-diagonal point with per-block signed SVD factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPoint {
    pub elem: BlockDiag,
    pub factors: Vec<SignedSvd>,
}

impl BlockPoint {
    /// Concatenated (signed) spectrum over all blocks.
    pub fn spectrum(&self) -> impl Iterator<Item = f64> + '_ {
        self.factors.iter().flat_map(|f| f.s.iter().copied())
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.spectrum().map(f64::abs).sum()
    }
}

/// Unit nuclear-norm ball of block-diagonal matrices.
#[derive(Debug, Clone)]
pub struct BlockNuclearBall {
    structure: BlockStructure,
    dgf: PowerDgf,
}

impl BlockNuclearBall {
    pub fn new(structure: BlockStructure) -> Self {
        let dgf = PowerDgf::nuclear_ball(structure.spectrum_len());
        BlockNuclearBall { structure, dgf }
    }

    pub fn with_dgf(structure: BlockStructure, dgf: PowerDgf) -> Self {
        BlockNuclearBall { structure, dgf }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    fn check_shape(&self, x: &BlockDiag) -> Result<()> {
        if self.structure.conforms(x) {
            Ok(())
        } else {
            Err(Error::Shape(
                "element does not match the block structure".into(),
            ))
        }
    }

    /// Point with prescribed factors; `s` may be signed.
    pub fn point_from_factors(&self, factors: Vec<SignedSvd>) -> BlockPoint {
        let elem = BlockDiag(factors.iter().map(SignedSvd::assemble).collect());
        BlockPoint { elem, factors }
    }
}

impl Geometry for BlockNuclearBall {
    type Elem = BlockDiag;
    type Point = BlockPoint;

    fn name(&self) -> &'static str {
        "nuclear-norm ball"
    }

    fn elem(point: &BlockPoint) -> &BlockDiag {
        &point.elem
    }

    fn decompose(&self, elem: &BlockDiag) -> Result<BlockPoint> {
        self.check_shape(elem)?;
        let factors = elem
            .0
            .iter()
            .map(SignedSvd::new)
            .collect::<Result<Vec<_>>>()?;
        let point = BlockPoint {
            elem: elem.clone(),
            factors,
        };
        let v = (point.nuclear_norm() - 1.0).max(0.0);
        if v > DOMAIN_TOL {
            return Err(Error::DomainViolation {
                domain: self.name(),
                violation: v,
            });
        }
        Ok(point)
    }

    fn center(&self) -> BlockPoint {
        let factors = self
            .structure
            .rows
            .iter()
            .zip(&self.structure.cols)
            .map(|(&r, &c)| SignedSvd::zero(r, c))
            .collect();
        BlockPoint {
            elem: self.structure.zeros(),
            factors,
        }
    }

    fn dgf_value(&self, point: &BlockPoint) -> f64 {
        self.dgf.value(point.spectrum())
    }

    fn dgf_grad(&self, point: &BlockPoint) -> BlockDiag {
        BlockDiag(
            point
                .factors
                .iter()
                .map(|f| f.assemble_with(|s| self.dgf.grad_term(s)))
                .collect(),
        )
    }

    fn prox(
        &self,
        z: &BlockPoint,
        xi: &BlockDiag,
        counters: &mut CostCounters,
    ) -> Result<BlockPoint> {
        self.check_shape(xi)?;
        let mut g = xi.clone();
        g.axpy(-1.0, &self.dgf_grad(z));
        let mut svds = Vec::with_capacity(g.0.len());
        let mut cost = 0u64;
        for block in &g.0 {
            svds.push(SignedSvd::new(block)?);
            let (r, c) = block.shape();
            cost += flops::svd(r, c) + 2 * flops::matmul(r, r.min(c), c);
        }
        let gamma: Vec<f64> = svds.iter().flat_map(|f| f.s.iter().copied()).collect();
        let upsilon = solve_separable(&gamma, &self.dgf, SpectrumSet::L1Ball)?;
        counters.flops_prox += cost + 10 * gamma.len() as u64;
        let mut offset = 0;
        let factors: Vec<SignedSvd> = svds
            .into_iter()
            .map(|mut f| {
                let len = f.s.len();
                f.s = DVector::from_column_slice(&upsilon[offset..offset + len]);
                offset += len;
                f
            })
            .collect();
        Ok(self.point_from_factors(factors))
    }

    fn omega_radius(&self) -> f64 {
        self.dgf.omega_radius()
    }

    fn norm(&self, h: &BlockDiag) -> f64 {
        h.0.iter().map(crate::linalg::nuclear_norm).sum()
    }

    fn dual_norm(&self, g: &BlockDiag) -> f64 {
        g.0.iter()
            .map(crate::linalg::spectral_norm)
            .fold(0.0, f64::max)
    }

    fn violation(&self, elem: &BlockDiag) -> f64 {
        if !self.structure.conforms(elem) {
            return f64::INFINITY;
        }
        (self.norm(elem) - 1.0).max(0.0)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> BlockPoint {
        let n = self.structure.spectrum_len();
        // nuclear radius: boundary ~30% of the time
        let radius = if rng.random::<f64>() < 0.3 {
            1.0
        } else {
            rng.random::<f64>()
        };
        let sparse = rng.random::<f64>() < 0.3;
        let mut weights: Vec<f64> = (0..n)
            .map(|_| {
                if sparse && rng.random::<f64>() < 0.7 {
                    0.0
                } else {
                    -(1.0 - rng.random::<f64>()).ln()
                }
            })
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            let i = rng.random_range(0..n);
            weights[i] = 1.0;
        }
        let total: f64 = weights.iter().sum();
        let mut offset = 0;
        let factors = self
            .structure
            .rows
            .iter()
            .zip(&self.structure.cols)
            .map(|(&r, &c)| {
                let g: DMatrix<f64> = gaussian_matrix(rng, r, c);
                let mut f = SignedSvd::new(&g).expect("finite Gaussian block");
                let len = f.s.len();
                for j in 0..len {
                    f.s[j] = radius * weights[offset + j] / total;
                }
                offset += len;
                f
            })
            .collect();
        self.point_from_factors(factors)
    }

    fn dgf(&self) -> Option<&PowerDgf> {
        Some(&self.dgf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bregman_distance, prox_map};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ball() -> BlockNuclearBall {
        BlockNuclearBall::new(BlockStructure::new(vec![2, 2, 3], vec![2, 3, 2]).unwrap())
    }

    #[test]
    fn prox_of_zero_is_identity() {
        let g = ball();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = CostCounters::default();
        for _ in 0..20 {
            let z = g.sample(&mut rng);
            let w = prox_map(&g, &z, &z.elem.zeros_like(), &mut c).unwrap();
            assert!(w.elem.minus(&z.elem).norm_fro() < 1e-9);
        }
    }

    #[test]
    fn prox_of_gradient_returns_center() {
        let g = ball();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = CostCounters::default();
        let z = g.sample(&mut rng);
        let xi = g.dgf_grad(&z);
        let w = g.prox(&z, &xi, &mut c).unwrap();
        assert!(w.elem.norm_fro() < 1e-12);
    }

    #[test]
    fn gradient_is_diagonal_for_diagonal_point() {
        let g = BlockNuclearBall::new(BlockStructure::uniform(1, 3).unwrap());
        let x = BlockDiag(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.5, -0.2, 0.1,
        ]))]);
        let p = g.decompose(&x).unwrap();
        let grad = g.dgf_grad(&p);
        let dgf = g.dgf().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j {
                    dgf.grad_term(x.0[0][(i, i)])
                } else {
                    0.0
                };
                assert!((grad.0[0][(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bregman_zero_on_diagonal_and_rejects_outside() {
        let g = ball();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = g.sample(&mut rng);
        assert!(bregman_distance(&g, &z, &z).unwrap().abs() < 1e-12);
        let mut far = z.clone();
        far.elem.scale_mut(3.0);
        far.elem.0[0][(0, 0)] += 2.0;
        assert!(matches!(
            bregman_distance(&g, &z, &far),
            Err(Error::DomainViolation { .. })
        ));
    }
}
