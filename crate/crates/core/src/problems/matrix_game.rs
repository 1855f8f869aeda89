//! Bilinear matrix game `min_x max_y xᵀAy` over two simplices.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::geometry::VectorSet;
use crate::linalg::{flops, gaussian_matrix};
use crate::oracle::ScalarSampler;
use crate::solver::{stream_rng, streams, CostCounters, SaddlePoint};

#[derive(Debug, Clone)]
pub struct MatrixGame {
    a: DMatrix<f64>,
    gx: VectorSet,
    gy: VectorSet,
    v_upper: f64,
}

impl MatrixGame {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.is_empty() || !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument(
                "payoff matrix must be nonempty and finite".into(),
            ));
        }
        let v_upper = a.max().max(0.0) - a.min().min(0.0);
        Ok(MatrixGame {
            gx: VectorSet::simplex(a.nrows())?,
            gy: VectorSet::simplex(a.ncols())?,
            a,
            v_upper: v_upper.max(f64::MIN_POSITIVE),
        })
    }

    /// Gaussian payoffs scaled so the largest entry has magnitude 1.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::INSTANCE);
        let g = gaussian_matrix(&mut rng, rows, cols);
        let scale = g.amax().max(f64::MIN_POSITIVE);
        Self::new(g / scale)
    }

    pub fn with_scale_bound(mut self, v_upper: f64) -> Self {
        self.v_upper = v_upper;
        self
    }

    pub fn payoff(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn value_at(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.a * y))
    }

    /// `max_j (Aᵀx)_j − min_i (Ay)_i`.
    pub fn duality_gap(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (self.a.tr_mul(x)).max() - (&self.a * y).min()
    }

    pub fn exact_cost(&self) -> u64 {
        2 * flops::matmul(self.a.nrows(), self.a.ncols(), 1)
    }
}

impl SaddlePoint for MatrixGame {
    type GX = VectorSet;
    type GY = VectorSet;

    fn geom_x(&self) -> &VectorSet {
        &self.gx
    }

    fn geom_y(&self) -> &VectorSet {
        &self.gy
    }

    fn degree(&self) -> usize {
        2
    }

    fn scale_bound(&self) -> f64 {
        self.v_upper
    }

    fn exact_field(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        counters: &mut CostCounters,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        counters.f_exact_evals += 1;
        counters.flops_f += self.exact_cost();
        Ok((&self.a * y, -self.a.tr_mul(x)))
    }

    fn sample_field(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        kx: usize,
        ky: usize,
        rng: &mut dyn RngCore,
        counters: &mut CostCounters,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (p, q) = self.a.shape();
        let sx = ScalarSampler::new(x.as_slice());
        let sy = ScalarSampler::new(y.as_slice());
        let mut gx = DVector::zeros(p);
        let mut gy = DVector::zeros(q);
        let draws = kx.max(ky);
        for t in 0..draws {
            let xi = sx.draw(rng);
            let eta = sy.draw(rng);
            if t < kx {
                for &(j, w) in &eta.entries {
                    gx.axpy(w, &self.a.column(j), 1.0);
                }
            }
            if t < ky {
                for &(i, w) in &xi.entries {
                    gy.axpy(-w, &self.a.row(i).transpose(), 1.0);
                }
            }
        }
        gx /= kx as f64;
        gy /= ky as f64;
        counters.oracle_samples += draws as u64;
        counters.flops_f += sx.setup_cost() + sy.setup_cost() + (kx * p + ky * q) as u64 * 2;
        Ok((gx, gy))
    }

    fn certificate(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(self.duality_gap(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{run_dmp, Budget, HorizonMode, SmpSetup};

    #[test]
    fn field_and_gap_of_swap_game() {
        let g = MatrixGame::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let half = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(g.duality_gap(&half, &half), 0.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(g.duality_gap(&e1, &e1), 1.0);
        let mut c = CostCounters::default();
        let (fx, fy) = g.exact_field(&e1, &half, &mut c).unwrap();
        assert_eq!(fx.as_slice(), &[0.5, 0.5]);
        assert_eq!(fy.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn dmp_solves_swap_game() {
        let g = MatrixGame::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let setup = SmpSetup::with_defaults(&g, 1, 1, 1.0, HorizonMode::Rolling).unwrap();
        let run = run_dmp(&g, &setup, &Budget::new(10_000, 0.01, 10)).unwrap();
        assert!(run.final_gap() <= 0.01);
        assert!((g.value_at(&run.averaged_x, &run.averaged_y) - 0.5).abs() < 0.01);
    }
}
