use nalgebra::DMatrix;
use rand::RngCore;

use super::{
    half_ky_fan_spread, sample_capped_simplex, solve_separable, Geometry, PowerDgf, SpectrumSet,
    DOMAIN_TOL,
};
use crate::error::{Error, Result};
use crate::linalg::{assemble_sym, flops, random_orthogonal, SymEigen};
use crate::solver::CostCounters;

/// Symmetric matrix with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPoint {
    pub elem: DMatrix<f64>,
    pub eig: SymEigen,
}

/// `{x ∈ 𝕊^m : 0 ⪯ x ⪯ I, Tr x = k}`; `k = 1` is the spectahedron.
#[derive(Debug, Clone)]
pub struct SpectralSet {
    m: usize,
    k: usize,
    dgf: PowerDgf,
}

impl SpectralSet {
    pub fn spectahedron(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Argument("spectahedron dimension must be ≥ 1".into()));
        }
        Ok(SpectralSet {
            m,
            k: 1,
            dgf: PowerDgf::spectahedron(m),
        })
    }

    pub fn trace_box(m: usize, k: usize) -> Result<Self> {
        if k == 0 || 2 * k > m {
            return Err(Error::Argument(format!(
                "trace-k box needs 1 ≤ k ≤ m/2, got m={m}, k={k}"
            )));
        }
        Ok(SpectralSet {
            m,
            k,
            dgf: PowerDgf::trace_k_box(m, k),
        })
    }

    pub fn with_dgf(mut self, dgf: PowerDgf) -> Self {
        self.dgf = dgf;
        self
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn trace(&self) -> usize {
        self.k
    }

    fn constraint(&self) -> SpectrumSet {
        if self.k == 1 {
            SpectrumSet::Simplex
        } else {
            SpectrumSet::Capped { k: self.k }
        }
    }

    /// Point `W · Diag(spectrum) · Wᵀ`.
    pub fn point_from_eigen(&self, vectors: DMatrix<f64>, values: Vec<f64>) -> SymPoint {
        let elem = assemble_sym(&vectors, &values);
        SymPoint {
            elem,
            eig: SymEigen {
                vectors,
                values: values.into(),
            },
        }
    }

    fn spectrum_violation(&self, values: &[f64]) -> f64 {
        let trace: f64 = values.iter().sum();
        let mut v = (trace - self.k as f64).abs();
        for &l in values {
            v = v.max(-l);
            if self.k > 1 {
                v = v.max(l - 1.0);
            }
        }
        v.max(0.0)
    }
}

impl Geometry for SpectralSet {
    type Elem = DMatrix<f64>;
    type Point = SymPoint;

    fn name(&self) -> &'static str {
        if self.k == 1 {
            "spectahedron"
        } else {
            "trace-k box"
        }
    }

    fn elem(point: &SymPoint) -> &DMatrix<f64> {
        &point.elem
    }

    fn decompose(&self, elem: &DMatrix<f64>) -> Result<SymPoint> {
        if elem.shape() != (self.m, self.m) {
            return Err(Error::Shape(format!(
                "expected {0}x{0} matrix, got {1}x{2}",
                self.m,
                elem.nrows(),
                elem.ncols()
            )));
        }
        let v = self.violation(elem);
        if v > DOMAIN_TOL {
            return Err(Error::DomainViolation {
                domain: self.name(),
                violation: v,
            });
        }
        Ok(SymPoint {
            elem: elem.clone(),
            eig: SymEigen::new(elem)?,
        })
    }

    fn center(&self) -> SymPoint {
        let c = self.k as f64 / self.m as f64;
        self.point_from_eigen(DMatrix::identity(self.m, self.m), vec![c; self.m])
    }

    fn dgf_value(&self, point: &SymPoint) -> f64 {
        self.dgf.value(point.eig.values.iter().copied())
    }

    fn dgf_grad(&self, point: &SymPoint) -> DMatrix<f64> {
        point.eig.assemble_with(|l| self.dgf.grad_term(l))
    }

    fn prox(
        &self,
        z: &SymPoint,
        xi: &DMatrix<f64>,
        counters: &mut CostCounters,
    ) -> Result<SymPoint> {
        if xi.shape() != (self.m, self.m) {
            return Err(Error::Shape("prox input has the wrong size".into()));
        }
        let g = xi - self.dgf_grad(z);
        let eig = SymEigen::new(&g)?;
        let gamma: Vec<f64> = eig.values.iter().copied().collect();
        let upsilon = solve_separable(&gamma, &self.dgf, self.constraint())?;
        counters.flops_prox += flops::sym_eigen(self.m) + 2 * flops::matmul(self.m, self.m, self.m);
        Ok(self.point_from_eigen(eig.vectors, upsilon))
    }

    fn omega_radius(&self) -> f64 {
        self.dgf.omega_radius()
    }

    /// Gauge of `½(X − X)` on trace-zero matrices: `max(2‖λ‖_∞, ‖λ‖₁/k)`,
    /// which is the nuclear norm when `k = 1`.
    fn norm(&self, h: &DMatrix<f64>) -> f64 {
        let vals = crate::linalg::sym_eigenvalues(h).unwrap_or_default();
        let inf = vals.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        let one: f64 = vals.iter().map(|l| l.abs()).sum();
        (2.0 * inf).max(one / self.k as f64)
    }

    fn dual_norm(&self, g: &DMatrix<f64>) -> f64 {
        let mut vals = crate::linalg::sym_eigenvalues(g).unwrap_or_default();
        half_ky_fan_spread(&mut vals, self.k)
    }

    fn violation(&self, elem: &DMatrix<f64>) -> f64 {
        if elem.shape() != (self.m, self.m) {
            return f64::INFINITY;
        }
        let asym = (elem - elem.transpose()).abs().max();
        match crate::linalg::sym_eigenvalues(elem) {
            Ok(vals) => self.spectrum_violation(&vals).max(asym),
            Err(_) => f64::INFINITY,
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> SymPoint {
        let w = random_orthogonal(rng, self.m);
        let values = sample_capped_simplex(rng, self.m, self.k);
        self.point_from_eigen(w, values)
    }

    fn dgf(&self) -> Option<&PowerDgf> {
        Some(&self.dgf)
    }
}
