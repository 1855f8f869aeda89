//! Minimizing the largest eigenvalue of a quadratic matrix pencil
//!
//! ```text
//! 𝒜(x) = Σ_i [a_iᵀ x_jᵀ q_i x_j a_i + b_iᵀ x_j c_i + c_iᵀ x_jᵀ b_i] + d,   j = j(i)
//! ```
//!
//! over the unit nuclear ball of block-diagonal `x`, posed as the cubic saddle
//! point problem `min_x max_y Tr(y 𝒜(x))` with `y` in the spectahedron.
//!
//! Shapes: `x_j` is `m_j × n_j`, `a_i, c_i` are `n_j × m`, `b_i` is `m_j × m`,
//! `q_i` is symmetric PSD `m_j × m_j` and `d` is symmetric `m × m`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::serial::{read_file, write_file, Decoder, Encoder, Encoding};
use crate::error::{Error, Result};
use crate::geometry::{BlockNuclearBall, BlockPoint, BlockStructure, SpectralSet, SymPoint};
use crate::linalg::{flops, gaussian_matrix, spectral_norm, symmetrize, BlockDiag, SymEigen};
use crate::oracle::{ScalarSampler, SupportAtom};
use crate::solver::{stream_rng, streams, CostCounters, SaddlePoint};

const MAGIC: &[u8; 8] = b"SMPPNCL1";
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PencilSizes {
    pub m: usize,
    pub block_rows: Vec<usize>,
    pub block_cols: Vec<usize>,
    /// Number of terms `I`; term `i` uses block `i mod J`.
    pub terms: usize,
}

impl PencilSizes {
    /// `J` square `ν × ν` blocks, one term per block.
    pub fn uniform(m: usize, nu: usize, blocks: usize) -> Self {
        PencilSizes {
            m,
            block_rows: vec![nu; blocks],
            block_cols: vec![nu; blocks],
            terms: blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("m", "must be ≥ 1"));
        }
        if self.block_rows.is_empty() || self.block_rows.len() != self.block_cols.len() {
            return Err(Error::config(
                "blocks",
                "need matching, nonempty row and column sizes",
            ));
        }
        if self
            .block_rows
            .iter()
            .chain(&self.block_cols)
            .any(|&s| s == 0)
        {
            return Err(Error::config("blocks", "block sizes must be ≥ 1"));
        }
        if self.terms < self.block_rows.len() {
            return Err(Error::config(
                "terms",
                "every block must appear in some term (I ≥ J)",
            ));
        }
        Ok(())
    }
}

/// Data of one pencil; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilInstance {
    m: usize,
    structure: BlockStructure,
    jmap: Vec<usize>,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    d: DMatrix<f64>,
    by_block: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PencilCertificate {
    /// `λ_max(𝒜(x))`
    pub phi_plus: f64,
    /// Lower bound on `min_x' φ(x', y)` from the linearization at `x`.
    pub phi_minus: f64,
    pub gap: f64,
}

impl PencilInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        structure: BlockStructure,
        jmap: Vec<usize>,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let terms = jmap.len();
        let nblocks = structure.num_blocks();
        if [a.len(), b.len(), c.len(), q.len()]
            .iter()
            .any(|&l| l != terms)
        {
            return Err(Error::Shape("one a, b, c, q per term required".into()));
        }
        if d.shape() != (m, m) {
            return Err(Error::Shape(format!("d must be {m}x{m}")));
        }
        let mut by_block = vec![Vec::new(); nblocks];
        for (i, &j) in jmap.iter().enumerate() {
            if j >= nblocks {
                return Err(Error::Shape(format!(
                    "term {i} refers to block {j} of {nblocks}"
                )));
            }
            by_block[j].push(i);
            let (r, cc) = (structure.rows()[j], structure.cols()[j]);
            let ok = a[i].shape() == (cc, m)
                && b[i].shape() == (r, m)
                && c[i].shape() == (cc, m)
                && q[i].shape() == (r, r);
            if !ok {
                return Err(Error::Shape(format!(
                    "data of term {i} do not match block {j}"
                )));
            }
        }
        if let Some(j) = by_block.iter().position(Vec::is_empty) {
            return Err(Error::Argument(format!("block {j} appears in no term")));
        }
        let all = a
            .iter()
            .chain(&b)
            .chain(&c)
            .chain(&q)
            .chain(std::iter::once(&d));
        if !all.clone().all(|mat| mat.iter().all(|v| v.is_finite())) {
            return Err(Error::Argument("pencil data must be finite".into()));
        }
        if (&d - d.transpose()).amax() > PSD_TOL {
            return Err(Error::Argument("d must be symmetric".into()));
        }
        for (i, qi) in q.iter().enumerate() {
            if (qi - qi.transpose()).amax() > PSD_TOL {
                return Err(Error::Argument(format!("q_{i} must be symmetric")));
            }
            let lmin = SymEigen::new(qi)?.values.min();
            if lmin < -PSD_TOL {
                return Err(Error::Argument(format!(
                    "q_{i} must be positive semidefinite (λ_min = {lmin:e})"
                )));
            }
        }
        Ok(PencilInstance {
            m,
            structure,
            jmap,
            a,
            b,
            c,
            q,
            d,
            by_block,
        })
    }

    /// Gaussian data normalized to unit spectral norm; `q_i = gᵀg` rescaled.
    pub fn generate(sizes: &PencilSizes, seed: u64) -> Result<Self> {
        sizes.validate()?;
        let mut rng = stream_rng(seed, streams::INSTANCE);
        let structure = BlockStructure::new(sizes.block_rows.clone(), sizes.block_cols.clone())?;
        let nblocks = structure.num_blocks();
        let m = sizes.m;
        let unit = |g: DMatrix<f64>| {
            let s = spectral_norm(&g);
            if s > 0.0 {
                g / s
            } else {
                g
            }
        };
        let jmap: Vec<usize> = (0..sizes.terms).map(|i| i % nblocks).collect();
        let (mut a, mut b, mut c, mut q) = (vec![], vec![], vec![], vec![]);
        for &j in &jmap {
            let (r, cc) = (structure.rows()[j], structure.cols()[j]);
            a.push(unit(gaussian_matrix(&mut rng, cc, m)));
            b.push(unit(gaussian_matrix(&mut rng, r, m)));
            c.push(unit(gaussian_matrix(&mut rng, cc, m)));
            let g = gaussian_matrix(&mut rng, r, r);
            q.push(unit(symmetrize(&g.tr_mul(&g))));
        }
        let d = unit(symmetrize(&gaussian_matrix(&mut rng, m, m)));
        Self::new(m, structure, jmap, a, b, c, q, d)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_terms(&self) -> usize {
        self.jmap.len()
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.jmap[i]
    }

    /// `K = max_j |{i : j(i) = j}|`.
    pub fn block_multiplicity(&self) -> usize {
        self.by_block.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `(a_i, b_i, c_i, q_i)`.
    pub fn term(&self, i: usize) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.a[i], &self.b[i], &self.c[i], &self.q[i])
    }

    pub fn offset(&self) -> &DMatrix<f64> {
        &self.d
    }

    fn check_x(&self, x: &BlockDiag) -> Result<()> {
        if self.structure.conforms(x) {
            Ok(())
        } else {
            Err(Error::Shape("x does not match the block structure".into()))
        }
    }

    fn check_y(&self, y: &DMatrix<f64>) -> Result<()> {
        if y.shape() == (self.m, self.m) {
            Ok(())
        } else {
            Err(Error::Shape(format!("y must be {0}x{0}", self.m)))
        }
    }

    /// `𝒜(x)`, exactly symmetric.
    pub fn eval_a(&self, x: &BlockDiag) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let mut out = DMatrix::zeros(self.m, self.m);
        for (i, &j) in self.jmap.iter().enumerate() {
            let xj = &x.0[j];
            let xa = xj * &self.a[i];
            let qxa = &self.q[i] * &xa;
            out += xa.tr_mul(&qxa);
            let bxc = self.b[i].tr_mul(&(xj * &self.c[i]));
            out += &bxc + bxc.transpose();
        }
        out += &self.d;
        Ok(symmetrize(&out))
    }

    /// Arithmetic model of one evaluation of `𝒜`.
    pub fn eval_a_cost(&self) -> u64 {
        let m = self.m;
        self.jmap
            .iter()
            .map(|&j| {
                let (r, c) = (self.structure.rows()[j], self.structure.cols()[j]);
                2 * flops::matmul(r, c, m) + flops::matmul(r, r, m) + 2 * flops::matmul(m, r, m)
            })
            .sum::<u64>()
            + 3 * (m * m) as u64
    }

    pub fn phi(&self, x: &BlockDiag, y: &DMatrix<f64>) -> Result<f64> {
        self.check_y(y)?;
        Ok(y.dot(&self.eval_a(x)?))
    }

    /// `F_x = 2·Diag{Σ_{j(i)=j} [q_i x_j a_i y a_iᵀ + b_i y c_iᵀ]}`.
    pub fn grad_x(&self, x: &BlockDiag, y: &DMatrix<f64>) -> Result<BlockDiag> {
        self.check_x(x)?;
        self.check_y(y)?;
        let mut out = self.structure.zeros();
        for (i, &j) in self.jmap.iter().enumerate() {
            let ay = &self.a[i] * y;
            let ayat = &ay * self.a[i].transpose();
            out.0[j] += (&self.q[i] * &x.0[j]) * ayat * 2.0;
            out.0[j] += (&self.b[i] * y) * self.c[i].transpose() * 2.0;
        }
        Ok(out)
    }

    pub fn grad_x_cost(&self) -> u64 {
        let m = self.m;
        self.jmap
            .iter()
            .map(|&j| {
                let (r, c) = (self.structure.rows()[j], self.structure.cols()[j]);
                flops::matmul(c, m, m)
                    + flops::matmul(c, m, c)
                    + flops::matmul(r, r, c)
                    + flops::matmul(r, c, c)
                    + flops::matmul(r, m, m)
                    + flops::matmul(r, m, c)
            })
            .sum()
    }

    /// Exact `F = (F_x, −𝒜(x))`.
    pub fn field(&self, x: &BlockDiag, y: &DMatrix<f64>) -> Result<(BlockDiag, DMatrix<f64>)> {
        Ok((self.grad_x(x, y)?, -self.eval_a(x)?))
    }

    pub fn field_cost(&self) -> u64 {
        self.grad_x_cost() + self.eval_a_cost()
    }

    /// `φ⁺ = λ_max(𝒜(x))`, `φ⁻ = φ(x, y) − ⟨x, g⟩ − max_j ‖g_j‖₂` with `g = F_x(x, y)`.
    pub fn certificate(&self, x: &BlockDiag, y: &DMatrix<f64>) -> Result<PencilCertificate> {
        self.check_y(y)?;
        let a = self.eval_a(x)?;
        let phi_plus = SymEigen::new(&a)?.max();
        let g = self.grad_x(x, y)?;
        let dual = g.0.iter().map(spectral_norm).fold(0.0, f64::max);
        let phi_minus = y.dot(&a) - crate::linalg::Space::dot(x, &g) - dual;
        Ok(PencilCertificate {
            phi_plus,
            phi_minus,
            gap: phi_plus - phi_minus,
        })
    }

    pub fn to_bytes(&self, encoding: Encoding) -> Vec<u8> {
        let mut e = Encoder::new(encoding, MAGIC);
        e.uint(self.num_terms());
        e.uint(self.structure.num_blocks());
        e.uint(self.m);
        e.newline();
        e.uints(self.structure.rows());
        e.uints(self.structure.cols());
        e.uints(&self.jmap);
        for i in 0..self.num_terms() {
            e.matrix(&self.a[i]);
            e.matrix(&self.b[i]);
            e.matrix(&self.c[i]);
            e.matrix(&self.q[i]);
        }
        e.matrix(&self.d);
        e.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        const CAP: usize = 1 << 24;
        let mut dec = Decoder::new(data, MAGIC)?;
        let (terms, nblocks, m) = (dec.uint()?, dec.uint()?, dec.uint()?);
        if terms > CAP || nblocks > CAP || m > CAP {
            return Err(Error::Format("header sizes are implausibly large".into()));
        }
        let rows = dec.uints(nblocks)?;
        let cols = dec.uints(nblocks)?;
        let jmap = dec.uints(terms)?;
        if rows.len() != nblocks || cols.len() != nblocks || jmap.len() != terms {
            return Err(Error::Format(
                "header lists disagree with the declared sizes".into(),
            ));
        }
        if jmap.iter().any(|&j| j >= nblocks) {
            return Err(Error::Format("block index out of range".into()));
        }
        let structure = BlockStructure::new(rows.clone(), cols.clone())?;
        let (mut a, mut b, mut c, mut q) = (vec![], vec![], vec![], vec![]);
        for &j in &jmap {
            a.push(dec.matrix(cols[j], m)?);
            b.push(dec.matrix(rows[j], m)?);
            c.push(dec.matrix(cols[j], m)?);
            q.push(dec.matrix(rows[j], rows[j])?);
        }
        let d = dec.matrix(m, m)?;
        dec.finish()?;
        Self::new(m, structure, jmap, a, b, c, q, d)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> Result<()> {
        write_file(path, &self.to_bytes(encoding))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Unbiased estimate of `F` from `2·max(kx, ky)` draws; pair `ℓ` is
    /// `(draws[2ℓ], draws[2ℓ+1])`, `G_x` averages the first `kx` pairs and
    /// `G_y` the first `ky`.
    pub fn estimate(
        &self,
        draws: &[PencilAtom],
        kx: usize,
        ky: usize,
        counters: &mut CostCounters,
    ) -> Result<(BlockDiag, DMatrix<f64>)> {
        if kx == 0 || ky == 0 {
            return Err(Error::Argument("multiplicities must be ≥ 1".into()));
        }
        if draws.len() != 2 * kx.max(ky) {
            return Err(Error::Argument(format!(
                "expected {} draws, got {}",
                2 * kx.max(ky),
                draws.len()
            )));
        }
        let mut gx = self.structure.zeros();
        let mut gy = DMatrix::zeros(self.m, self.m);
        let mut cost = 0u64;
        for (l, pair) in draws.chunks_exact(2).enumerate() {
            if l < kx {
                cost += self.add_gx(&pair[0], &pair[1], &mut gx);
            }
            if l < ky {
                cost += self.add_gy(&pair[0], &pair[1], &mut gy);
            }
        }
        gx.0.iter_mut().for_each(|blk| *blk /= kx as f64);
        gy /= -(ky as f64);
        gy -= &self.d;
        counters.flops_f += cost + 2 * (self.m * self.m) as u64;
        Ok((gx, symmetrize(&gy)))
    }

    /// Contribution of one pair to `G_x`.
    fn add_gx(&self, z1: &PencilAtom, z2: &PencilAtom, gx: &mut BlockDiag) -> u64 {
        let m = self.m;
        let mut cost = 0;
        // 2 b_i w¹w¹ᵀ c_iᵀ over every term
        if let Some((s, w)) = &z1.y {
            for (i, &j) in self.jmap.iter().enumerate() {
                let bw = &self.b[i] * w;
                let cw = &self.c[i] * w;
                gx.0[j].ger(2.0 * s, &bw, &cw, 1.0);
                cost += flops::matmul(bw.len() + cw.len(), m, 1) + (bw.len() * cw.len()) as u64;
            }
        }
        // q_i ξ a_i η a_iᵀ with (ξ¹, η²) and (ξ², η¹)
        for (xi, eta) in [(z1, z2), (z2, z1)] {
            let (Some(x), Some((s2, w))) = (&xi.x, &eta.y) else {
                continue;
            };
            for &i in &self.by_block[x.block] {
                let p = &self.a[i] * w;
                let qu = &self.q[i] * &x.u;
                let coef = x.scale * s2 * x.v.dot(&p);
                gx.0[x.block].ger(coef, &qu, &p, 1.0);
                cost += flops::matmul(p.len(), m, 1)
                    + flops::matmul(qu.len(), qu.len(), 1)
                    + (2 * qu.len() * p.len()) as u64;
            }
        }
        cost
    }

    /// Contribution of one pair to `Σ (𝒜(x) − d)`-estimate, before averaging.
    fn add_gy(&self, z1: &PencilAtom, z2: &PencilAtom, acc: &mut DMatrix<f64>) -> u64 {
        let m = self.m;
        let Some(x1) = &z1.x else {
            return 0;
        };
        let mut cost = 0;
        for &i in &self.by_block[x1.block] {
            let bu = self.b[i].tr_mul(&x1.u);
            let cv = self.c[i].tr_mul(&x1.v);
            acc.ger(x1.scale, &bu, &cv, 1.0);
            acc.ger(x1.scale, &cv, &bu, 1.0);
            cost += flops::matmul(m, x1.u.len() + x1.v.len(), 1) + 2 * (m * m) as u64;
        }
        if let Some(x2) = z2.x.as_ref().filter(|x2| x2.block == x1.block) {
            for &i in &self.by_block[x1.block] {
                let quq = x1.u.dot(&(&self.q[i] * &x2.u));
                let al = self.a[i].tr_mul(&x1.v);
                let be = self.a[i].tr_mul(&x2.v);
                let coef = 0.5 * x1.scale * x2.scale * quq;
                acc.ger(coef, &al, &be, 1.0);
                acc.ger(coef, &be, &al, 1.0);
                let r = x1.u.len();
                cost +=
                    (r * r + r) as u64 + 2 * flops::matmul(m, x1.v.len(), 1) + 2 * (m * m) as u64;
            }
        }
        cost
    }
}

/// Rank-one `x`-atom `scale · u vᵀ` living in a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneBlock {
    pub block: usize,
    pub scale: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// One draw `ζ = (ξ, η)`: `ξ` rank-one block-sparse (or zero), `η = s·w wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilAtom {
    pub x: Option<RankOneBlock>,
    pub y: Option<(f64, DVector<f64>)>,
}

impl PencilAtom {
    /// Dense `(ξ, η)` for checks.
    pub fn to_dense(&self, structure: &BlockStructure, m: usize) -> (BlockDiag, DMatrix<f64>) {
        let mut x = structure.zeros();
        if let Some(r) = &self.x {
            x.0[r.block].ger(r.scale, &r.u, &r.v, 0.0);
        }
        let mut y = DMatrix::zeros(m, m);
        if let Some((s, w)) = &self.y {
            y.ger(*s, w, w, 0.0);
        }
        (x, y)
    }
}

/// `P_z` built from the cached decompositions of `z = (x, y)`.
#[derive(Debug, Clone)]
pub struct PencilSampler<'a> {
    x: &'a BlockPoint,
    y: &'a SymPoint,
    /// concatenated spectrum position → (block, column)
    columns: Vec<(usize, usize)>,
    sx: ScalarSampler,
    sy: ScalarSampler,
}

impl<'a> PencilSampler<'a> {
    pub fn new(x: &'a BlockPoint, y: &'a SymPoint) -> Self {
        let mut columns = Vec::new();
        let mut spectrum = Vec::new();
        for (j, f) in x.factors.iter().enumerate() {
            for (l, &s) in f.s.iter().enumerate() {
                columns.push((j, l));
                spectrum.push(s);
            }
        }
        let lambda: Vec<f64> = y.eig.values.iter().map(|&l| l.max(0.0)).collect();
        PencilSampler {
            x,
            y,
            columns,
            sx: ScalarSampler::new(&spectrum),
            sy: ScalarSampler::new(&lambda),
        }
    }

    /// Cumulative tables only; the decompositions come with the point.
    pub fn setup_cost(&self) -> u64 {
        self.sx.setup_cost() + self.sy.setup_cost()
    }

    /// Arithmetic model of one draw: two bisections plus copying the columns.
    pub fn draw_cost(&self) -> u64 {
        let log2 = |n: usize| (usize::BITS - n.max(1).leading_zeros()) as u64;
        let nu = self
            .x
            .factors
            .iter()
            .map(|f| f.u.nrows() + f.v.nrows())
            .max()
            .unwrap_or(0);
        log2(self.sx.dim()) + log2(self.sy.dim()) + (self.y.elem.nrows() + nu) as u64
    }

    fn x_atom(&self, idx: usize, value: f64) -> RankOneBlock {
        let (j, l) = self.columns[idx];
        let f = &self.x.factors[j];
        RankOneBlock {
            block: j,
            scale: value,
            u: f.u.column(l).into_owned(),
            v: f.v.column(l).into_owned(),
        }
    }

    fn y_atom(&self, idx: usize, value: f64) -> (f64, DVector<f64>) {
        (value, self.y.eig.vectors.column(idx).into_owned())
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> PencilAtom {
        let xs = self.sx.draw(rng);
        let ys = self.sy.draw(rng);
        PencilAtom {
            x: xs.entries.first().map(|&(i, v)| self.x_atom(i, v)),
            y: ys.entries.first().map(|&(i, v)| self.y_atom(i, v)),
        }
    }

    /// The full product support with probabilities.
    pub fn atoms(&self) -> Vec<SupportAtom<PencilAtom>> {
        let ax = self.sx.atoms();
        let ay = self.sy.atoms();
        let mut out = Vec::with_capacity(ax.len() * ay.len());
        for a in &ax {
            for b in &ay {
                out.push(SupportAtom {
                    point: PencilAtom {
                        x: a.point.entries.first().map(|&(i, v)| self.x_atom(i, v)),
                        y: b.point.entries.first().map(|&(i, v)| self.y_atom(i, v)),
                    },
                    weight: a.weight * b.weight,
                });
            }
        }
        out
    }
}

/// The pencil as a saddle point problem on nuclear ball × spectahedron.
#[derive(Debug, Clone)]
pub struct PencilProblem {
    instance: PencilInstance,
    gx: BlockNuclearBall,
    gy: SpectralSet,
    v_upper: f64,
}

impl PencilProblem {
    /// Scale-factor bound 1, valid for unit-norm data.
    pub fn new(instance: PencilInstance) -> Result<Self> {
        Self::with_scale_bound(instance, 1.0)
    }

    pub fn with_scale_bound(instance: PencilInstance, v_upper: f64) -> Result<Self> {
        if !(v_upper.is_finite() && v_upper > 0.0) {
            return Err(Error::config("v_upper", "must be positive"));
        }
        Ok(PencilProblem {
            gx: BlockNuclearBall::new(instance.structure().clone()),
            gy: SpectralSet::spectahedron(instance.m())?,
            instance,
            v_upper,
        })
    }

    pub fn instance(&self) -> &PencilInstance {
        &self.instance
    }
}

impl SaddlePoint for PencilProblem {
    type GX = BlockNuclearBall;
    type GY = SpectralSet;

    fn geom_x(&self) -> &BlockNuclearBall {
        &self.gx
    }

    fn geom_y(&self) -> &SpectralSet {
        &self.gy
    }

    fn degree(&self) -> usize {
        3
    }

    fn scale_bound(&self) -> f64 {
        self.v_upper
    }

    fn exact_field(
        &self,
        x: &BlockPoint,
        y: &SymPoint,
        counters: &mut CostCounters,
    ) -> Result<(BlockDiag, DMatrix<f64>)> {
        counters.f_exact_evals += 1;
        counters.flops_f += self.instance.field_cost();
        self.instance.field(&x.elem, &y.elem)
    }

    fn sample_field(
        &self,
        x: &BlockPoint,
        y: &SymPoint,
        kx: usize,
        ky: usize,
        rng: &mut dyn RngCore,
        counters: &mut CostCounters,
    ) -> Result<(BlockDiag, DMatrix<f64>)> {
        let sampler = PencilSampler::new(x, y);
        let n = 2 * kx.max(ky);
        let draws: Vec<PencilAtom> = (0..n).map(|_| sampler.draw(rng)).collect();
        counters.oracle_samples += n as u64;
        counters.flops_f += sampler.setup_cost() + n as u64 * sampler.draw_cost();
        self.instance.estimate(&draws, kx, ky, counters)
    }

    fn certificate(&self, x: &BlockDiag, y: &DMatrix<f64>) -> Result<f64> {
        Ok(self.instance.certificate(x, y)?.gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::linalg::Space;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_instance() -> PencilInstance {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        PencilInstance::new(
            1,
            BlockStructure::uniform(1, 1).unwrap(),
            vec![0],
            vec![one(1.0)],
            vec![one(0.0)],
            vec![one(0.0)],
            vec![one(1.0)],
            one(0.0),
        )
        .unwrap()
    }

    fn naive_a(inst: &PencilInstance, x: &BlockDiag) -> DMatrix<f64> {
        let m = inst.m();
        let mut out = inst.offset().clone();
        for i in 0..inst.num_terms() {
            let (a, b, c, q) = inst.term(i);
            let xj = &x.0[inst.block_of(i)];
            for r in 0..m {
                for s in 0..m {
                    let mut v = 0.0;
                    for p in 0..xj.nrows() {
                        for pp in 0..xj.nrows() {
                            let left: f64 = (0..xj.ncols()).map(|k| xj[(p, k)] * a[(k, r)]).sum();
                            let right: f64 = (0..xj.ncols()).map(|k| xj[(pp, k)] * a[(k, s)]).sum();
                            v += left * q[(p, pp)] * right;
                        }
                        for k in 0..xj.ncols() {
                            v += b[(p, r)] * xj[(p, k)] * c[(k, s)]
                                + c[(k, r)] * xj[(p, k)] * b[(p, s)];
                        }
                    }
                    out[(r, s)] += v;
                }
            }
        }
        out
    }

    fn random_point(p: &PencilProblem, rng: &mut ChaCha8Rng) -> (BlockPoint, SymPoint) {
        (p.geom_x().sample(rng), p.geom_y().sample(rng))
    }

    #[test]
    fn scalar_case_values() {
        let inst = scalar_instance();
        let x = BlockDiag(vec![DMatrix::from_element(1, 1, 0.5)]);
        let y = DMatrix::from_element(1, 1, 1.0);
        assert!((inst.eval_a(&x).unwrap()[(0, 0)] - 0.25).abs() < 1e-15);
        let (fx, fy) = inst.field(&x, &y).unwrap();
        assert!((fx.0[0][(0, 0)] - 1.0).abs() < 1e-15);
        assert!((fy[(0, 0)] + 0.25).abs() < 1e-15);
        let zero = BlockDiag(vec![DMatrix::zeros(1, 1)]);
        let cert = inst.certificate(&zero, &y).unwrap();
        assert_eq!((cert.phi_plus, cert.phi_minus, cert.gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn scalar_case_estimate_by_hand() {
        // x = 0.5 and y = 1 with atoms ξ = ±0.5-weighted unit vectors
        let inst = scalar_instance();
        let e = DVector::from_element(1, 1.0);
        let atom = |sx: f64, sy: f64| PencilAtom {
            x: Some(RankOneBlock {
                block: 0,
                scale: sx,
                u: e.clone(),
                v: e.clone(),
            }),
            y: Some((sy, e.clone())),
        };
        let mut c = CostCounters::default();
        let (gx, gy) = inst
            .estimate(&[atom(0.5, 1.0), atom(0.3, 2.0)], 1, 1, &mut c)
            .unwrap();
        // G_x = ξ¹η² + ξ²η¹, G_y = −ξ¹ξ²
        assert!((gx.0[0][(0, 0)] - (0.5 * 2.0 + 0.3 * 1.0)).abs() < 1e-15);
        assert!((gy[(0, 0)] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn a_matches_naive_sum_and_vanishes_to_d() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 11).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (x, _) = random_point(&p, &mut rng);
            let diff = inst.eval_a(&x.elem).unwrap() - naive_a(&inst, &x.elem);
            assert!(diff.amax() < 1e-12);
        }
        let zero = inst.structure().zeros();
        assert_eq!(inst.eval_a(&zero).unwrap(), *inst.offset());
        let (fx, _) = inst.field(&zero, &DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(fx.norm_fro(), 0.0);
    }

    #[test]
    fn generated_instance_invariants() {
        let sizes = PencilSizes {
            m: 6,
            block_rows: vec![2, 3, 1],
            block_cols: vec![2, 1, 3],
            terms: 5,
        };
        let inst = PencilInstance::generate(&sizes, 4).unwrap();
        assert_eq!(inst.block_multiplicity(), 2);
        for i in 0..inst.num_terms() {
            let (a, b, c, q) = inst.term(i);
            for mat in [a, b, c, q] {
                assert!(spectral_norm(mat) <= 1.0 + 1e-10);
            }
            assert!(SymEigen::new(q).unwrap().values.min() >= -1e-12);
        }
        assert!(spectral_norm(inst.offset()) <= 1.0 + 1e-10);
        assert_eq!(inst, PencilInstance::generate(&sizes, 4).unwrap());
        assert_ne!(inst, PencilInstance::generate(&sizes, 5).unwrap());
    }

    #[test]
    fn rejects_bad_data() {
        let sizes = PencilSizes::uniform(3, 1, 2);
        let inst = PencilInstance::generate(&sizes, 0).unwrap();
        let mut q = inst.q.clone();
        q[0] = DMatrix::from_element(1, 1, -1.0);
        let bad = PencilInstance::new(
            3,
            inst.structure.clone(),
            inst.jmap.clone(),
            inst.a.clone(),
            inst.b.clone(),
            inst.c.clone(),
            q,
            inst.d.clone(),
        );
        assert!(matches!(bad, Err(Error::Argument(_))));
        let not_onto = PencilInstance::new(
            3,
            inst.structure.clone(),
            vec![0, 0],
            inst.a.clone(),
            inst.b.clone(),
            inst.c.clone(),
            inst.q.clone(),
            inst.d.clone(),
        );
        assert!(not_onto.is_err());
        assert!(PencilSizes::uniform(3, 1, 0).validate().is_err());
    }

    #[test]
    fn field_matches_finite_differences() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(6, 2, 4), 3).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..10 {
            let (x, y) = random_point(&p, &mut rng);
            let (fx, fy) = inst.field(&x.elem, &y.elem).unwrap();
            for j in 0..4 {
                for r in 0..2 {
                    for c in 0..2 {
                        let mut xp = x.elem.clone();
                        let mut xm = x.elem.clone();
                        xp.0[j][(r, c)] += h;
                        xm.0[j][(r, c)] -= h;
                        let fd = (inst.phi(&xp, &y.elem).unwrap()
                            - inst.phi(&xm, &y.elem).unwrap())
                            / (2.0 * h);
                        assert!((fd - fx.0[j][(r, c)]).abs() < 1e-5);
                    }
                }
            }
            for r in 0..6 {
                for c in 0..6 {
                    let mut e = DMatrix::zeros(6, 6);
                    e[(r, c)] += 0.5 * h;
                    e[(c, r)] += 0.5 * h;
                    let fd = (inst.phi(&x.elem, &(&y.elem + &e)).unwrap()
                        - inst.phi(&x.elem, &(&y.elem - &e)).unwrap())
                        / (2.0 * h);
                    // directional derivative along the symmetric unit perturbation
                    let dir = -0.5 * (fy[(r, c)] + fy[(c, r)]);
                    assert!((fd - dir).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn phi_is_convex_in_x() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 8).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let (x1, y) = random_point(&p, &mut rng);
            let (x2, _) = random_point(&p, &mut rng);
            let th: f64 = rng.random();
            let mut mid = x1.elem.scaled(th);
            mid.axpy(1.0 - th, &x2.elem);
            let lhs = inst.phi(&mid, &y.elem).unwrap();
            let rhs = th * inst.phi(&x1.elem, &y.elem).unwrap()
                + (1.0 - th) * inst.phi(&x2.elem, &y.elem).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn sampler_support_is_exact_and_feasible() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 1).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_point(&p, &mut rng);
        let s = PencilSampler::new(&x, &y);
        let atoms = s.atoms();
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut ex = inst.structure().zeros();
        let mut ey = DMatrix::zeros(5, 5);
        for a in &atoms {
            let (ax, ay) = a.point.to_dense(inst.structure(), 5);
            assert!(p.geom_x().violation(&ax) <= 1e-9);
            assert!(p.geom_y().violation(&ay) <= 1e-9);
            ex.axpy(a.weight, &ax);
            ey += ay * a.weight;
        }
        assert!(ex.minus(&x.elem).norm_fro() < 1e-12);
        assert!((ey - &y.elem).amax() < 1e-12);
    }

    #[test]
    fn rank_one_point_gives_deterministic_atom() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(4, 2, 2), 1).unwrap();
        let p = PencilProblem::new(inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = p.geom_x().center();
        x.factors[1] = crate::linalg::SignedSvd::new(&gaussian_matrix(&mut rng, 2, 2)).unwrap();
        x.factors[1].s = DVector::from_vec(vec![1.0, 0.0]);
        let x = p.geom_x().point_from_factors(x.factors);
        let y = p.geom_y().center();
        let s = PencilSampler::new(&x, &y);
        for _ in 0..20 {
            let (ax, _) = s.draw(&mut rng).to_dense(p.geom_x().structure(), 4);
            assert!(ax.minus(&x.elem).norm_fro() < 1e-12);
        }
        // uniform y: every basis projector equally likely
        let ys = s.atoms().iter().filter(|a| a.point.y.is_some()).count();
        assert_eq!(ys, 4);
        assert!(s.atoms().iter().all(|a| (a.weight - 0.25).abs() < 1e-15));
    }

    #[test]
    fn unit_mass_draws_reproduce_field() {
        // a rank-one x and a rank-one y have single-atom distributions
        let inst = PencilInstance::generate(&PencilSizes::uniform(4, 2, 2), 2).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = p.geom_x().center();
        x.factors[0] = crate::linalg::SignedSvd::new(&gaussian_matrix(&mut rng, 2, 2)).unwrap();
        x.factors[0].s = DVector::from_vec(vec![0.0, -0.7]);
        let x = p.geom_x().point_from_factors(x.factors);
        let w = crate::linalg::random_orthogonal(&mut rng, 4);
        let y = p.geom_y().point_from_eigen(w, vec![0.0, 0.0, 1.0, 0.0]);
        let s = PencilSampler::new(&x, &y);
        let draws: Vec<_> = (0..6).map(|_| s.draw(&mut rng)).collect();
        let (gx, gy) = inst
            .estimate(&draws, 3, 2, &mut CostCounters::default())
            .unwrap();
        let (fx, fy) = inst.field(&x.elem, &y.elem).unwrap();
        assert!(gx.minus(&fx).norm_fro() < 1e-12);
        assert!((gy - fy).amax() < 1e-12);
    }

    #[test]
    fn enumerated_expectation_equals_field() {
        for (m, nu, blocks, seed) in [(5, 2, 3, 1u64), (6, 2, 3, 2), (4, 1, 2, 3)] {
            let inst =
                PencilInstance::generate(&PencilSizes::uniform(m, nu, blocks), seed).unwrap();
            let p = PencilProblem::new(inst.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let (x, y) = random_point(&p, &mut rng);
            let atoms = PencilSampler::new(&x, &y).atoms();
            let mut ex = inst.structure().zeros();
            let mut ey = DMatrix::zeros(m, m);
            let mut c = CostCounters::default();
            for a in &atoms {
                for b in &atoms {
                    let pair = [a.point.clone(), b.point.clone()];
                    let (gx, gy) = inst.estimate(&pair, 1, 1, &mut c).unwrap();
                    ex.axpy(a.weight * b.weight, &gx);
                    ey += gy * (a.weight * b.weight);
                }
            }
            let (fx, fy) = inst.field(&x.elem, &y.elem).unwrap();
            assert!(
                ex.minus(&fx).norm_fro() < 1e-10,
                "{}",
                ex.minus(&fx).norm_fro()
            );
            assert!((ey - fy).amax() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_mean_within_three_standard_errors() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(5, 2, 3), 12).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (x, y) = random_point(&p, &mut rng);
        let (fx, fy) = inst.field(&x.elem, &y.elem).unwrap();
        let flat = |gx: &BlockDiag, gy: &DMatrix<f64>| -> Vec<f64> {
            gx.0.iter()
                .flat_map(|b| b.iter().copied())
                .chain(gy.iter().copied())
                .collect()
        };
        let target = flat(&fx, &fy);
        let n = 100_000;
        let mut sum = vec![0.0; target.len()];
        let mut sq = vec![0.0; target.len()];
        let mut c = CostCounters::default();
        for _ in 0..n {
            let (gx, gy) = p.sample_field(&x, &y, 1, 1, &mut rng, &mut c).unwrap();
            for (k, v) in flat(&gx, &gy).into_iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        let nf = n as f64;
        for k in 0..target.len() {
            let mean = sum[k] / nf;
            let var = (sq[k] / nf - mean * mean).max(0.0);
            let se = (var / nf).sqrt();
            assert!(
                (mean - target[k]).abs() <= 3.0 * se + 1e-12,
                "entry {k}: {mean} vs {}",
                target[k]
            );
        }
        assert_eq!(c.oracle_samples, 2 * n as u64);
    }

    #[test]
    fn certificate_bounds_grid_gap() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(4, 1, 2), 21).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let steps = 200;
        for _ in 0..5 {
            let (x, y) = random_point(&p, &mut rng);
            let cert = inst.certificate(&x.elem, &y.elem).unwrap();
            assert!(cert.gap >= -1e-9);
            // min over the ℓ1 diamond |x1| + |x2| ≤ 1 of the convex φ(·, y)
            let mut best = f64::INFINITY;
            for a in 0..=steps {
                let x1 = -1.0 + 2.0 * a as f64 / steps as f64;
                let room = 1.0 - x1.abs();
                for b in 0..=steps {
                    let x2 = room * (-1.0 + 2.0 * b as f64 / steps as f64);
                    let xt = BlockDiag(vec![
                        DMatrix::from_element(1, 1, x1),
                        DMatrix::from_element(1, 1, x2),
                    ]);
                    best = best.min(inst.phi(&xt, &y.elem).unwrap());
                }
            }
            let grid_gap = cert.phi_plus - best;
            assert!(cert.gap >= grid_gap - 1e-6);
            assert!(cert.phi_minus <= best + 1e-9);
        }
    }

    #[test]
    fn constant_pencil_certificate_is_tight() {
        let base = PencilInstance::generate(&PencilSizes::uniform(4, 2, 2), 30).unwrap();
        let zeros = |mats: &[DMatrix<f64>]| mats.iter().map(|m| m * 0.0).collect::<Vec<_>>();
        let inst = PencilInstance::new(
            4,
            base.structure.clone(),
            base.jmap.clone(),
            zeros(&base.a),
            zeros(&base.b),
            zeros(&base.c),
            zeros(&base.q),
            base.d.clone(),
        )
        .unwrap();
        let eig = SymEigen::new(&base.d).unwrap();
        let top = eig.vectors.column(0).into_owned();
        let y = &top * top.transpose();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = p.geom_x().sample(&mut rng);
        let cert = inst.certificate(&x.elem, &y).unwrap();
        assert!((cert.phi_plus - eig.max()).abs() < 1e-12);
        assert!(cert.gap.abs() < 1e-12);
    }

    #[test]
    fn serialization_round_trips() {
        let sizes = PencilSizes {
            m: 4,
            block_rows: vec![2, 1],
            block_cols: vec![1, 2],
            terms: 3,
        };
        let inst = PencilInstance::generate(&sizes, 77).unwrap();
        for enc in [Encoding::Text, Encoding::Binary] {
            let bytes = inst.to_bytes(enc);
            assert_eq!(PencilInstance::from_bytes(&bytes).unwrap(), inst);
            assert!(PencilInstance::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        }
        let text = inst.to_bytes(Encoding::Text);
        assert!(text.starts_with(b"SMPPNCL1\n3 2 4\n"));
    }

    #[test]
    fn randomized_counters_follow_cost_model() {
        let inst = PencilInstance::generate(&PencilSizes::uniform(8, 2, 10), 1).unwrap();
        let p = PencilProblem::new(inst.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = random_point(&p, &mut rng);
        let mut exact = CostCounters::default();
        p.exact_field(&x, &y, &mut exact).unwrap();
        assert_eq!(exact.f_exact_evals, 1);
        let mut rand_c = CostCounters::default();
        p.sample_field(&x, &y, 1, 1, &mut rng, &mut rand_c).unwrap();
        assert_eq!(rand_c.f_exact_evals, 0);
        assert_eq!(rand_c.oracle_samples, 2);
        assert!(rand_c.flops_f < exact.flops_f);
    }
}
