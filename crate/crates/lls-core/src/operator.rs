//! Tensor-product operator algebra on truncated site spaces.
//!
//! Operators live on the tensor factor of their support rectangle as dense
//! complex matrices and are embedded into larger regions (or the full
//! lattice) with identities on the complement sites. The site ordering
//! inside every tensor product is lexicographic in lattice coordinates,
//! with the lexicographically smallest site as the most significant
//! Kronecker factor — one convention everywhere.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, Rectangle};

/// Dense complex matrix type used throughout.
pub type CMat = DMatrix<Complex<f64>>;
/// Dense complex vector type.
pub type CVec = DVector<Complex<f64>>;

/// Real scalar promoted to a complex matrix entry.
pub fn cf(x: f64) -> Complex<f64> {
    Complex::new(x, 0.0)
}

/// A truncated on-site model: diagonal Hamiltonian with ground value 0 and
/// first excited value ≥ 1; the vacuum Ω is the first basis vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBasis {
    /// Site Hilbert-space dimension n_s ≥ 2.
    pub site_dim: usize,
    /// Diagonal of the on-site Hamiltonian: h[0] = 0, h[i] ≥ 1 for i ≥ 1.
    pub h_diag: Vec<f64>,
}

impl SiteBasis {
    /// Validated constructor enforcing the gap normalization.
    pub fn new(h_diag: Vec<f64>) -> Result<Self> {
        if h_diag.len() < 2 {
            return Err(Error::OperatorValidation(
                "site dimension must be ≥ 2".into(),
            ));
        }
        if h_diag[0].abs() > 1e-12 {
            return Err(Error::OperatorValidation(format!(
                "ground value must be 0, got {}",
                h_diag[0]
            )));
        }
        if h_diag[1..].iter().any(|&e| e < 1.0 - 1e-12) {
            return Err(Error::OperatorValidation(
                "excited values must be ≥ 1 (gap normalization)".into(),
            ));
        }
        Ok(SiteBasis {
            site_dim: h_diag.len(),
            h_diag,
        })
    }
}

/// A dense operator on the tensor factor of its support rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOperator {
    /// The rectangle of sites the operator acts on (identity elsewhere).
    pub support: Rectangle,
    /// Matrix of dimension site_dim^{#sites in support}.
    pub matrix: CMat,
    /// Set when the operator is known Hermitian (checked at construction).
    pub hermitian: bool,
}

impl LocalOperator {
    /// Construct, checking the dimension and (if flagged) Hermiticity.
    pub fn new(support: Rectangle, matrix: CMat, site_dim: usize, hermitian: bool) -> Result<Self> {
        let expect = site_dim.pow(support.site_count() as u32);
        if matrix.nrows() != expect || matrix.ncols() != expect {
            return Err(Error::OperatorValidation(format!(
                "matrix is {}×{}, support {} needs {expect}",
                matrix.nrows(),
                matrix.ncols(),
                support.label()
            )));
        }
        if hermitian {
            let dev = (&matrix - matrix.adjoint()).norm();
            let scale = matrix.norm().max(1.0);
            if dev > 1e-12 * scale {
                return Err(Error::OperatorValidation(format!(
                    "hermitian flag set but ‖M − M†‖/‖M‖ = {:.3e}",
                    dev / scale
                )));
            }
        }
        Ok(LocalOperator {
            support,
            matrix,
            hermitian,
        })
    }

    /// The zero operator on a support.
    pub fn zero(support: Rectangle, site_dim: usize) -> Self {
        let dim = site_dim.pow(support.site_count() as u32);
        LocalOperator {
            support,
            matrix: CMat::zeros(dim, dim),
            hermitian: true,
        }
    }

    /// The identity on a support.
    pub fn identity(support: Rectangle, site_dim: usize) -> Self {
        let dim = site_dim.pow(support.site_count() as u32);
        LocalOperator {
            support,
            matrix: CMat::identity(dim, dim),
            hermitian: true,
        }
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Spectral norm (largest singular value).
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.matrix)
    }
}

/// A (possibly lazily represented) operator on the full lattice space.
#[derive(Debug, Clone)]
pub struct GlobalOperator {
    pub lattice: LatticeSpec,
    pub site_dim: usize,
    pub repr: GlobalRepr,
}

/// Dense matrix, or an implicit sum of embedded local terms (for dimensions
/// past the dense threshold, applied matrix-free).
#[derive(Debug, Clone)]
pub enum GlobalRepr {
    Dense(CMat),
    Terms(Vec<LocalOperator>),
}

impl GlobalOperator {
    /// Full Hilbert-space dimension site_dim^{N^d}.
    pub fn dim(&self) -> usize {
        self.site_dim.pow(self.lattice.site_count() as u32)
    }

    /// Apply the operator to a vector (dense multiply or term-by-term).
    pub fn matvec(&self, v: &CVec) -> CVec {
        match &self.repr {
            GlobalRepr::Dense(m) => m * v,
            GlobalRepr::Terms(terms) => {
                let mut out = CVec::zeros(self.dim());
                let full = self.lattice.full_rectangle();
                for term in terms {
                    apply_embedded(term, &full, self.site_dim, v, &mut out);
                }
                out
            }
        }
    }

    /// Materialize as a dense matrix (summing terms if needed).
    pub fn to_dense(&self) -> Result<CMat> {
        match &self.repr {
            GlobalRepr::Dense(m) => Ok(m.clone()),
            GlobalRepr::Terms(terms) => {
                let full = self.lattice.full_rectangle();
                let mut sum = CMat::zeros(self.dim(), self.dim());
                for term in terms {
                    sum += embed(term, &full, self.site_dim)?.matrix;
                }
                Ok(sum)
            }
        }
    }
}

/// Positions of the support's sites within the region's lexicographic site
/// list, or an error when the support is not contained.
fn support_positions(support: &Rectangle, region: &Rectangle) -> Result<Vec<usize>> {
    if !region.contains(support) {
        return Err(Error::SupportNotContained(
            support.label(),
            region.label(),
        ));
    }
    let region_sites = region.sites();
    support
        .sites()
        .iter()
        .map(|s| {
            region_sites
                .iter()
                .position(|r| r == s)
                .ok_or_else(|| Error::SupportNotContained(support.label(), region.label()))
        })
        .collect()
}

/// Per-position strides of the region's mixed-radix basis indexing
/// (position 0 = lexicographically smallest site = most significant digit).
fn strides(num_sites: usize, site_dim: usize) -> Vec<usize> {
    (0..num_sites)
        .map(|p| site_dim.pow((num_sites - 1 - p) as u32))
        .collect()
}

/// Offsets contributed by a factor's composite indices when its sites sit at
/// the given positions of the enclosing region.
fn factor_offsets(positions: &[usize], region_strides: &[usize], site_dim: usize) -> Vec<usize> {
    let m = positions.len();
    let dim = site_dim.pow(m as u32);
    let mut out = vec![0usize; dim];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut rest = idx;
        let mut off = 0usize;
        for (p, &pos) in positions.iter().enumerate() {
            let digit = rest / site_dim.pow((m - 1 - p) as u32);
            rest %= site_dim.pow((m - 1 - p) as u32);
            off += digit * region_strides[pos];
        }
        *slot = off;
    }
    out
}

/// Kronecker embedding of a local operator into a larger region, with
/// identities on the complement sites.
pub fn embed(op: &LocalOperator, region: &Rectangle, site_dim: usize) -> Result<LocalOperator> {
    if op.support == *region {
        return Ok(op.clone());
    }
    let positions = support_positions(&op.support, region)?;
    let n = region.site_count();
    let region_strides = strides(n, site_dim);
    let comp_positions: Vec<usize> =
        (0..n).filter(|p| !positions.contains(p)).collect();

    let sup_off = factor_offsets(&positions, &region_strides, site_dim);
    let comp_off = factor_offsets(&comp_positions, &region_strides, site_dim);

    let dim = site_dim.pow(n as u32);
    let mut out = CMat::zeros(dim, dim);
    for sr in 0..sup_off.len() {
        for sc in 0..sup_off.len() {
            let v = op.matrix[(sr, sc)];
            if v.norm_sqr() == 0.0 {
                continue;
            }
            for &c in &comp_off {
                out[(sup_off[sr] + c, sup_off[sc] + c)] += v;
            }
        }
    }
    LocalOperator::new(region.clone(), out, site_dim, false).map(|mut e| {
        e.hermitian = op.hermitian;
        e
    })
}

/// Apply an embedded local operator to a region vector, accumulating into
/// `out` — the matrix-free analogue of `embed` for large spaces.
fn apply_embedded(op: &LocalOperator, region: &Rectangle, site_dim: usize, v: &CVec, out: &mut CVec) {
    let positions = support_positions(&op.support, region)
        .expect("term supports are validated at construction");
    let n = region.site_count();
    let region_strides = strides(n, site_dim);
    let comp_positions: Vec<usize> = (0..n).filter(|p| !positions.contains(p)).collect();
    let sup_off = factor_offsets(&positions, &region_strides, site_dim);
    let comp_off = factor_offsets(&comp_positions, &region_strides, site_dim);

    for &c in &comp_off {
        for (sr, &or_) in sup_off.iter().enumerate() {
            let mut acc = Complex::new(0.0, 0.0);
            for (sc, &oc) in sup_off.iter().enumerate() {
                let m = op.matrix[(sr, sc)];
                if m.norm_sqr() != 0.0 {
                    acc += m * v[oc + c];
                }
            }
            out[or_ + c] += acc;
        }
    }
}

/// Diagonal of H⁰ over a region: for each product-basis index, the sum of
/// on-site energies of its digits.
pub fn h0_diag(region: &Rectangle, basis: &SiteBasis) -> Vec<f64> {
    let n = region.site_count();
    let dim = basis.site_dim.pow(n as u32);
    let mut out = vec![0.0; dim];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut rest = idx;
        let mut sum = 0.0;
        for p in 0..n {
            let stride = basis.site_dim.pow((n - 1 - p) as u32);
            sum += basis.h_diag[rest / stride];
            rest %= stride;
        }
        *slot = sum;
    }
    out
}

/// H⁰ over a region: the sum of embedded on-site Hamiltonians, diagonal in
/// the product eigenbasis.
pub fn h0(region: &Rectangle, basis: &SiteBasis) -> LocalOperator {
    let diag = h0_diag(region, basis);
    let dim = diag.len();
    let mut m = CMat::zeros(dim, dim);
    for (i, &e) in diag.iter().enumerate() {
        m[(i, i)] = cf(e);
    }
    LocalOperator {
        support: region.clone(),
        matrix: m,
        hermitian: true,
    }
}

/// Occupancy diagonal over a region: for each product-basis index, the
/// number of sites NOT in their vacuum state (the operator Σ_j P⊥_{Ω_j}).
pub fn occupancy_diag(region: &Rectangle, site_dim: usize) -> Vec<f64> {
    let n = region.site_count();
    let dim = site_dim.pow(n as u32);
    let mut out = vec![0.0; dim];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut rest = idx;
        let mut count = 0.0;
        for p in 0..n {
            let stride = site_dim.pow((n - 1 - p) as u32);
            if rest / stride != 0 {
                count += 1.0;
            }
            rest %= stride;
        }
        *slot = count;
    }
    out
}

/// Projector onto the all-vacuum state of a region's factor (rank 1).
pub fn projector_minus(region: &Rectangle, site_dim: usize) -> LocalOperator {
    let dim = site_dim.pow(region.site_count() as u32);
    let mut m = CMat::zeros(dim, dim);
    m[(0, 0)] = cf(1.0);
    LocalOperator {
        support: region.clone(),
        matrix: m,
        hermitian: true,
    }
}

/// The complement projector 1 − P⁻ on a region's factor.
pub fn projector_plus(region: &Rectangle, site_dim: usize) -> LocalOperator {
    let dim = site_dim.pow(region.site_count() as u32);
    let mut m = CMat::identity(dim, dim);
    m[(0, 0)] = cf(0.0);
    LocalOperator {
        support: region.clone(),
        matrix: m,
        hermitian: true,
    }
}

/// Spectral norm via the Hermitian eigenproblem of A†A.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    // Cheap exact path for diagonal matrices.
    let mut is_diag = true;
    'outer: for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].norm_sqr() != 0.0 {
                is_diag = false;
                break 'outer;
            }
        }
    }
    if is_diag {
        return (0..m.nrows()).map(|i| m[(i, i)].norm()).fold(0.0, f64::max);
    }
    let gram = m.adjoint() * m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.max(0.0)))
        .sqrt()
}

/// Scale a matrix symmetrically by a diagonal weight: D M D.
pub fn scale_sym(m: &CMat, w: &[f64]) -> CMat {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] *= cf(w[i] * w[j]);
        }
    }
    out
}

/// The weighted norm ‖(H⁰_region + 1)^{−1/2} V (H⁰_region + 1)^{−1/2}‖:
/// the smallness measure adapted to relatively bounded interactions.
pub fn weighted_norm(v: &LocalOperator, region: &Rectangle, basis: &SiteBasis) -> Result<f64> {
    let emb = embed(v, region, basis.site_dim)?;
    let w: Vec<f64> = h0_diag(region, basis)
        .iter()
        .map(|&e| 1.0 / (e + 1.0).sqrt())
        .collect();
    Ok(spectral_norm(&scale_sym(&emb.matrix, &w)))
}

/// Vacuum-sector selector for the auxiliary weighted norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    Plus,
    Minus,
}

/// Auxiliary weighted norm with occupancy weights:
/// ‖(π+1)^{−1/2}(H⁰+1)^{−1/2} P^{(left)} V P^{(right)} (H⁰+1)^{−1/2}(π+1)^{−1/2}‖
/// where π counts excited sites over the region.
pub fn aux_weighted_norm(
    v: &LocalOperator,
    region: &Rectangle,
    basis: &SiteBasis,
    left: Sector,
    right: Sector,
) -> Result<f64> {
    let emb = embed(v, region, basis.site_dim)?;
    let occ = occupancy_diag(region, basis.site_dim);
    let w: Vec<f64> = h0_diag(region, basis)
        .iter()
        .zip(occ.iter())
        .map(|(&e, &p)| 1.0 / ((e + 1.0).sqrt() * (p + 1.0).sqrt()))
        .collect();
    // The sector projectors are diagonal: index 0 is the all-vacuum state.
    let keep = |sector: Sector, idx: usize| match sector {
        Sector::Minus => idx == 0,
        Sector::Plus => idx != 0,
    };
    let mut m = emb.matrix;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !keep(left, i) || !keep(right, j) {
                m[(i, j)] = cf(0.0);
            }
        }
    }
    Ok(spectral_norm(&scale_sym(&m, &w)))
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending and
/// eigenvector columns permuted to match.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = m.nrows();
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Unitary from an anti-Hermitian generator: e^S = U e^{−iθ} U† where
/// iS = U θ U† is the Hermitian eigendecomposition (exactly unitary).
pub fn exp_anti_hermitian(s: &CMat) -> Result<CMat> {
    let dev = (s + s.adjoint()).norm();
    if dev > 1e-10 * (1.0 + s.norm()) {
        return Err(Error::OperatorValidation(format!(
            "generator is not anti-Hermitian: ‖S + S†‖ = {dev:.3e}"
        )));
    }
    let a = s.map(|z| Complex::new(0.0, 1.0) * z); // iS, Hermitian
    let (theta, u) = hermitian_eigen(&a);
    let n = s.nrows();
    let mut phase = CMat::zeros(n, n);
    for (i, &t) in theta.iter().enumerate() {
        phase[(i, i)] = Complex::new(0.0, -t).exp();
    }
    Ok(&u * phase * u.adjoint())
}

/// Unitary conjugation e^S K e^{−S}; preserves the spectrum.
pub fn conjugate(k: &CMat, s: &CMat) -> Result<CMat> {
    let u = exp_anti_hermitian(s)?;
    Ok(&u * k * u.adjoint())
}

/// Diagnostics of a truncated adjoint series evaluation.
#[derive(Debug, Clone)]
pub struct AdjointSeries {
    /// The partial sum Σ_{n=1..terms_used} adⁿS(B)/n!.
    pub sum: CMat,
    /// Number of commutator terms actually summed.
    pub terms_used: usize,
    /// Conservative tail bound ‖last term‖ · e^{2‖S‖}.
    pub tail_bound: f64,
}

/// The adjoint series Σ_{n≥1} adⁿS(B)/n!, truncated when the term norm
/// drops below `tail_tol` or after `n_max` terms (error if still large).
pub fn adjoint_series(s: &CMat, b: &CMat, n_max: usize, tail_tol: f64) -> Result<AdjointSeries> {
    let mut sum = CMat::zeros(b.nrows(), b.ncols());
    let mut term = b.clone();
    let mut last_norm = f64::INFINITY;
    let s_norm = spectral_norm(s);
    for n in 1..=n_max {
        term = (s * &term - &term * s) / cf(n as f64);
        sum += &term;
        // Spectral norm: invariant under embedding, so truncation decisions
        // agree whether a series is evaluated on a sub-factor or globally.
        last_norm = spectral_norm(&term);
        if last_norm < tail_tol {
            return Ok(AdjointSeries {
                sum,
                terms_used: n,
                tail_bound: last_norm * (2.0 * s_norm).exp(),
            });
        }
    }
    Err(Error::SeriesNonConvergence {
        n_max,
        last_norm,
    })
}
