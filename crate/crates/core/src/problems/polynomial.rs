//! General sparse polynomial `φ(x, y)` over a pair of simplices, sampled with
//! the scalar (1-sparse) sampler applied blockwise.

use nalgebra::DVector;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::geometry::VectorSet;
use crate::oracle::{PolynomialForms, ScalarSampler, SparseVec, SupportAtom};
use crate::solver::{CostCounters, SaddlePoint};

#[derive(Debug, Clone)]
pub struct PolynomialGame {
    forms: PolynomialForms,
    gx: VectorSet,
    gy: VectorSet,
    v_upper: f64,
}

impl PolynomialGame {
    pub fn new(forms: PolynomialForms, v_upper: f64) -> Result<Self> {
        if !(v_upper.is_finite() && v_upper > 0.0) {
            return Err(Error::config("v_upper", "must be positive"));
        }
        Ok(PolynomialGame {
            gx: VectorSet::simplex(forms.dim_x())?,
            gy: VectorSet::simplex(forms.dim_y())?,
            forms,
            v_upper,
        })
    }

    pub fn forms(&self) -> &PolynomialForms {
        &self.forms
    }

    pub fn stack(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(x.len() + y.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), y.len()).copy_from(y);
        z
    }

    /// Product support of one blockwise draw: `[e_i; e_j]` with weight `x_i y_j`.
    pub fn draw_support(x: &DVector<f64>, y: &DVector<f64>) -> Vec<SupportAtom<SparseVec>> {
        let ax = ScalarSampler::new(x.as_slice()).atoms();
        let ay = ScalarSampler::new(y.as_slice()).atoms();
        let mut out = Vec::with_capacity(ax.len() * ay.len());
        for a in &ax {
            for b in &ay {
                out.push(SupportAtom {
                    point: a.point.concat(&b.point),
                    weight: a.weight * b.weight,
                });
            }
        }
        out
    }

    /// Gradient-based gap `max_j ∇_yφ_j − ⟨∇_yφ, y⟩ + ⟨∇_xφ, x⟩ − min_i ∇_xφ_i`,
    /// an upper bound on the duality gap when `φ` is convex-concave.
    pub fn linearized_gap(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let f = self
            .forms
            .eval_f_exact(&Self::stack(x, y), &mut CostCounters::default())?;
        let (gx, gy) = self.forms.split(&f);
        let grad_y = -gy;
        Ok(grad_y.max() - grad_y.dot(y) + gx.dot(x) - gx.min())
    }
}

impl SaddlePoint for PolynomialGame {
    type GX = VectorSet;
    type GY = VectorSet;

    fn geom_x(&self) -> &VectorSet {
        &self.gx
    }

    fn geom_y(&self) -> &VectorSet {
        &self.gy
    }

    fn degree(&self) -> usize {
        self.forms.degree()
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
        let f = self.forms.eval_f_exact(&Self::stack(x, y), counters)?;
        Ok(self.forms.split(&f))
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
        let sx = ScalarSampler::new(x.as_slice());
        let sy = ScalarSampler::new(y.as_slice());
        counters.flops_f += sx.setup_cost() + sy.setup_cost();
        let per = self.forms.degree().saturating_sub(1);
        let rounds = kx.max(ky);
        let mut xs = Vec::with_capacity(kx);
        let mut ys = Vec::with_capacity(ky);
        for t in 0..rounds {
            let draws: Vec<SparseVec> = (0..per)
                .map(|_| sx.draw(rng).concat(&sy.draw(rng)))
                .collect();
            let g = self.forms.estimate_g(&draws, counters)?;
            let (gx, gy) = self.forms.split(&g);
            if t < kx {
                xs.push(gx);
            }
            if t < ky {
                ys.push(gy);
            }
        }
        counters.oracle_samples += (per * rounds) as u64;
        crate::oracle::recombine(&xs, &ys)
    }

    fn certificate(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.linearized_gap(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MultilinearForm;
    use crate::solver::{run_dmp, run_smp, Budget, HorizonMode, OracleKind, SmpSetup};

    fn zero_game() -> PolynomialGame {
        let forms = PolynomialForms::new(2, 3, vec![MultilinearForm::zero(5, 0)]).unwrap();
        PolynomialGame::new(forms, 1.0).unwrap()
    }

    #[test]
    fn zero_polynomial_stays_at_center() {
        let g = zero_game();
        let setup = SmpSetup::with_defaults(&g, 1, 1, 1.0, HorizonMode::Rolling).unwrap();
        let mut budget = Budget::new(5, 0.0, 1);
        budget.record_trace = true;
        let run = run_smp(
            &g,
            &setup,
            OracleKind::Randomized { kx: 1, ky: 1 },
            &budget,
            3,
        )
        .unwrap();
        assert_eq!(run.gap_history[0], (1, 0.0));
        assert!((&run.averaged_x - DVector::from_element(2, 0.5)).amax() < 1e-12);
        assert!((&run.averaged_y - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-12);
        let run = run_dmp(&g, &setup, &budget).unwrap();
        assert_eq!(run.iterations, 1);
        assert_eq!(run.final_gap(), 0.0);
    }
}
