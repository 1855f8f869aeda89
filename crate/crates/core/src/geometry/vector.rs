use nalgebra::DVector;
use rand::{Rng, RngCore};

use super::{
    half_ky_fan_spread, sample_capped_simplex, solve_separable, Geometry, PowerDgf, SpectrumSet,
    DOMAIN_TOL,
};
use crate::error::{Error, Result};
use crate::solver::CostCounters;

/// `{u ∈ ℝ^n : 0 ≤ u ≤ 1, Σu = k}`; `k = 1` is the standard simplex.
#[derive(Debug, Clone)]
pub struct VectorSet {
    n: usize,
    k: usize,
    dgf: PowerDgf,
}

impl VectorSet {
    pub fn simplex(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("simplex dimension must be ≥ 1".into()));
        }
        Ok(VectorSet {
            n,
            k: 1,
            dgf: PowerDgf::simplex(n),
        })
    }

    pub fn box_trace(n: usize, k: usize) -> Result<Self> {
        if k == 0 || 2 * k > n {
            return Err(Error::Argument(format!(
                "box-trace set needs 1 ≤ k ≤ n/2, got n={n}, k={k}"
            )));
        }
        Ok(VectorSet {
            n,
            k,
            dgf: PowerDgf::box_trace_vector(n, k),
        })
    }

    pub fn with_dgf(mut self, dgf: PowerDgf) -> Self {
        self.dgf = dgf;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn trace(&self) -> usize {
        self.k
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() == self.n {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "expected vector of length {}, got {}",
                self.n,
                v.len()
            )))
        }
    }
}

impl Geometry for VectorSet {
    type Elem = DVector<f64>;
    type Point = DVector<f64>;

    fn name(&self) -> &'static str {
        if self.k == 1 {
            "simplex"
        } else {
            "box-trace set"
        }
    }

    fn elem(point: &DVector<f64>) -> &DVector<f64> {
        point
    }

    fn decompose(&self, elem: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(elem)?;
        let v = self.violation(elem);
        if v > DOMAIN_TOL {
            return Err(Error::DomainViolation {
                domain: self.name(),
                violation: v,
            });
        }
        Ok(elem.clone())
    }

    fn center(&self) -> DVector<f64> {
        DVector::from_element(self.n, self.k as f64 / self.n as f64)
    }

    fn dgf_value(&self, point: &DVector<f64>) -> f64 {
        self.dgf.value(point.iter().copied())
    }

    fn dgf_grad(&self, point: &DVector<f64>) -> DVector<f64> {
        point.map(|s| self.dgf.grad_term(s))
    }

    fn prox(
        &self,
        z: &DVector<f64>,
        xi: &DVector<f64>,
        counters: &mut CostCounters,
    ) -> Result<DVector<f64>> {
        self.check_len(xi)?;
        let g = xi - self.dgf_grad(z);
        let set = if self.k == 1 {
            SpectrumSet::Simplex
        } else {
            SpectrumSet::Capped { k: self.k }
        };
        let v = solve_separable(g.as_slice(), &self.dgf, set)?;
        counters.flops_prox += 20 * self.n as u64;
        Ok(DVector::from_vec(v))
    }

    fn omega_radius(&self) -> f64 {
        self.dgf.omega_radius()
    }

    /// `max(2‖h‖_∞, ‖h‖₁/k)`; the ℓ₁ norm on differences when `k = 1`.
    fn norm(&self, h: &DVector<f64>) -> f64 {
        let inf = h.amax();
        (2.0 * inf).max(h.lp_norm(1) / self.k as f64)
    }

    fn dual_norm(&self, g: &DVector<f64>) -> f64 {
        let mut vals: Vec<f64> = g.iter().copied().collect();
        half_ky_fan_spread(&mut vals, self.k)
    }

    fn violation(&self, elem: &DVector<f64>) -> f64 {
        if elem.len() != self.n {
            return f64::INFINITY;
        }
        let mut v = (elem.sum() - self.k as f64).abs();
        for &x in elem.iter() {
            v = v.max(-x);
            if self.k > 1 {
                v = v.max(x - 1.0);
            }
        }
        if elem.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        v
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_vec(sample_capped_simplex(rng, self.n, self.k))
    }

    fn dgf(&self) -> Option<&PowerDgf> {
        Some(&self.dgf)
    }
}

/// Box `lo ≤ x ≤ hi` with `ω = ½‖x‖₂²`.
#[derive(Debug, Clone)]
pub struct EuclideanBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl EuclideanBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape(
                "box bounds must be nonempty and of equal length".into(),
            ));
        }
        if lo
            .iter()
            .zip(hi.iter())
            .any(|(a, b)| a > b || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::Argument(
                "box bounds must be finite with lo ≤ hi".into(),
            ));
        }
        Ok(EuclideanBox { lo, hi })
    }

    pub fn unit(n: usize) -> Result<Self> {
        Self::new(DVector::zeros(n), DVector::from_element(n, 1.0))
    }

    fn clip(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lo[i], self.hi[i]))
    }
}

impl Geometry for EuclideanBox {
    type Elem = DVector<f64>;
    type Point = DVector<f64>;

    fn name(&self) -> &'static str {
        "Euclidean box"
    }

    fn elem(point: &DVector<f64>) -> &DVector<f64> {
        point
    }

    fn decompose(&self, elem: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.violation(elem);
        if v > DOMAIN_TOL {
            return Err(Error::DomainViolation {
                domain: self.name(),
                violation: v,
            });
        }
        Ok(elem.clone())
    }

    fn center(&self) -> DVector<f64> {
        self.clip(&DVector::zeros(self.lo.len()))
    }

    fn dgf_value(&self, point: &DVector<f64>) -> f64 {
        0.5 * point.norm_squared()
    }

    fn dgf_grad(&self, point: &DVector<f64>) -> DVector<f64> {
        point.clone()
    }

    fn prox(
        &self,
        z: &DVector<f64>,
        xi: &DVector<f64>,
        counters: &mut CostCounters,
    ) -> Result<DVector<f64>> {
        if xi.len() != self.lo.len() {
            return Err(Error::Shape("prox input has the wrong length".into()));
        }
        counters.flops_prox += 2 * xi.len() as u64;
        Ok(self.clip(&(z - xi)))
    }

    fn omega_radius(&self) -> f64 {
        let (mut max, mut min) = (0.0, 0.0);
        for (a, b) in self.lo.iter().zip(self.hi.iter()) {
            max += 0.5 * a.abs().max(b.abs()).powi(2);
            min += 0.5 * (0.0f64.clamp(*a, *b)).powi(2);
        }
        (2.0 * (max - min)).sqrt()
    }

    fn norm(&self, h: &DVector<f64>) -> f64 {
        h.norm()
    }

    fn dual_norm(&self, g: &DVector<f64>) -> f64 {
        g.norm()
    }

    fn violation(&self, elem: &DVector<f64>) -> f64 {
        if elem.len() != self.lo.len() || elem.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        (0..elem.len()).fold(0.0f64, |v, i| {
            v.max(self.lo[i] - elem[i]).max(elem[i] - self.hi[i])
        })
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.lo.len(), |i, _| {
            let r: f64 = rng.random();
            match r {
                r if r < 0.1 => self.lo[i],
                r if r < 0.2 => self.hi[i],
                _ => self.lo[i] + rng.random::<f64>() * (self.hi[i] - self.lo[i]),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bregman_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euclidean_box_prox_is_clip() {
        let b = EuclideanBox::unit(3).unwrap();
        let z = DVector::from_vec(vec![0.2, 0.5, 0.9]);
        let xi = DVector::from_vec(vec![0.5, -0.2, -0.4]);
        let mut c = CostCounters::default();
        let w = b.prox(&z, &xi, &mut c).unwrap();
        assert_eq!(w, DVector::from_vec(vec![0.0, 0.7, 1.0]));
    }

    #[test]
    fn euclidean_bregman_is_half_squared_distance() {
        let b = EuclideanBox::unit(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = b.sample(&mut rng);
        let w = b.sample(&mut rng);
        let v = bregman_distance(&b, &z, &w).unwrap();
        assert!((v - 0.5 * (&w - &z).norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn simplex_prox_zero_and_feasible() {
        let s = VectorSet::simplex(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = CostCounters::default();
        for _ in 0..50 {
            let z = s.sample(&mut rng);
            let w = s.prox(&z, &DVector::zeros(6), &mut c).unwrap();
            assert!((&w - &z).amax() < 1e-9);
            let xi = crate::linalg::gaussian_vector(&mut rng, 6) * 5.0;
            let w = s.prox(&z, &xi, &mut c).unwrap();
            assert!(s.violation(&w) < 1e-12);
        }
    }

    #[test]
    fn box_trace_symmetric_input() {
        let s = VectorSet::box_trace(6, 2).unwrap();
        let mut c = CostCounters::default();
        let w = s
            .prox(&s.center(), &DVector::from_element(6, 2.5), &mut c)
            .unwrap();
        assert!((&w - DVector::from_element(6, 1.0 / 3.0)).amax() < 1e-12);
    }
}
