//! Independent oracles and the numeric inequality suite for finished runs.
//!
//! Everything here consumes immutable run artifacts: exact diagonalization
//! of the assembled Hamiltonian, spectrum comparison against the
//! reconstructed final table, quadratic-form and operator-norm inequality
//! checks with explicit constants, weighted-norm decay bounds per step and
//! key, and a coupling scan reporting the empirically certified range.
//! Inequalities whose constants are not explicit are measured and reported,
//! never asserted against invented values.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{off_diagonal_part, reconstruct, run, RunOptions, RunOutput, StepSnapshot};
use crate::error::{Error, Result};
use crate::lattice::{order_cmp, sub_rectangles, LatticeSpec, Rectangle};
use crate::model::{assemble_hamiltonian, bonds, InitialData, ModelSpec};
use crate::operator::{
    aux_weighted_norm, cf, embed, h0_diag, hermitian_eigen, occupancy_diag, projector_plus,
    spectral_norm, weighted_norm, CMat, CVec, GlobalOperator, LocalOperator, Sector, SiteBasis,
};

/// Hamiltonians at or below this dimension are materialized densely;
/// larger ones stay as lazy term sums with matrix-free application.
pub const DENSE_THRESHOLD: usize = 4096;

/// Additive slack on every inequality check.
pub const CHECK_SLACK: f64 = 1e-10;

/// One evaluated inequality with both sides retained for audit.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
    /// Self-describing identifier of the inequality being checked.
    pub anchor: String,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, anchor: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            passed: lhs <= rhs + CHECK_SLACK,
            anchor: anchor.into(),
        }
    }
}

/// A measured ratio whose theoretical constant is not explicit; reported,
/// not asserted (except where a generous cap is documented).
#[derive(Debug, Clone, Serialize)]
pub struct MeasuredRatio {
    pub name: String,
    pub value: f64,
    pub anchor: String,
}

/// Spectra of the original and reconstructed-final Hamiltonians.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub spectrum_original: Vec<f64>,
    pub spectrum_final: Vec<f64>,
    pub max_abs_dev: f64,
    pub gap_original: f64,
    pub gap_final: f64,
    /// ‖(K̃ − ⟨Ω|K̃|Ω⟩) ⊗Ω‖ on the reconstructed final Hamiltonian.
    pub ground_vector_residual: f64,
}

/// How much of the spectrum to compute.
#[derive(Debug, Clone, Copy)]
pub enum HowMany {
    All,
    Lowest(usize),
}

/// Exact diagonalization: dense below [`DENSE_THRESHOLD`], Lanczos with
/// full reorthogonalization above. Returns eigenvalues sorted ascending
/// and the ground vector; residual certified to 1e-9·‖K‖.
pub fn exact_diagonalize(k: &GlobalOperator, how: HowMany) -> Result<(Vec<f64>, CVec)> {
    let dim = k.dim();
    if dim <= DENSE_THRESHOLD {
        let dense = k.to_dense()?;
        let (mut evals, evecs) = hermitian_eigen(&dense);
        let scale = evals.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let tol = 1e-9 * (1.0 + scale);
        // The pure-Rust eigensolver occasionally leaves one pair at ~1e-8
        // residual; polish with shifted inverse iteration.
        let (lam0, ground) =
            refine_eigenpair(&dense, evals[0], &evecs.column(0).into_owned(), tol / 10.0);
        evals[0] = lam0;
        let residual = (&dense * &ground - &ground * cf(lam0)).norm();
        if residual > tol {
            return Err(Error::EigensolverFailure { residual });
        }
        let kept = match how {
            HowMany::All => evals,
            HowMany::Lowest(m) => evals.into_iter().take(m).collect(),
        };
        Ok((kept, ground))
    } else {
        let want = match how {
            HowMany::All => {
                return Err(Error::DimensionBudget {
                    dim,
                    budget: DENSE_THRESHOLD,
                })
            }
            HowMany::Lowest(m) => m,
        };
        lanczos_lowest(k, want)
    }
}

/// Polish an approximate eigenpair by shifted inverse iteration followed
/// by Rayleigh-quotient updates; returns the original pair unchanged if it
/// is already below the target residual.
fn refine_eigenpair(m: &CMat, lambda: f64, v: &CVec, target: f64) -> (f64, CVec) {
    let n = m.nrows();
    let mut lam = lambda;
    let mut vec = v.clone();
    for _ in 0..3 {
        let residual = (m * &vec - &vec * cf(lam)).norm();
        if residual <= target {
            break;
        }
        // Shift slightly off the eigenvalue to keep the solve nonsingular.
        let shift = lam + residual * 1e-3 + 1e-14;
        let shifted = m - CMat::identity(n, n) * cf(shift);
        let lu = nalgebra::linalg::LU::new(shifted);
        match lu.solve(&vec) {
            Some(x) => {
                let nx = x.norm();
                if !nx.is_finite() || nx == 0.0 {
                    break;
                }
                vec = x.unscale(nx);
                lam = vec.dotc(&(m * &vec)).re;
            }
            None => break,
        }
    }
    (lam, vec)
}

/// Lanczos with full (twice-repeated) reorthogonalization on the
/// matrix-free representation; deterministic start vector.
fn lanczos_lowest(k: &GlobalOperator, want: usize) -> Result<(Vec<f64>, CVec)> {
    let dim = k.dim();
    let max_iter = dim.min(2 * want.max(1) + 120);
    let mut vs: Vec<CVec> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut v = CVec::from_fn(dim, |i, _| cf(1.0 + 0.5 * ((i as f64) * 0.7).sin()));
    let n0 = v.norm();
    v = v.unscale(n0);
    vs.push(v);
    for it in 0..max_iter {
        let mut w = k.matvec(&vs[it]);
        alphas.push(vs[it].dotc(&w).re);
        for _ in 0..2 {
            for u in &vs {
                let c = u.dotc(&w);
                w -= u * c;
            }
        }
        let beta = w.norm();
        if beta < 1e-12 {
            break;
        }
        betas.push(beta);
        vs.push(w.unscale(beta));
    }
    let m = alphas.len();
    let mut tri = CMat::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = cf(alphas[i]);
        if i + 1 < m {
            tri[(i, i + 1)] = cf(betas[i]);
            tri[(i + 1, i)] = cf(betas[i]);
        }
    }
    let (theta, y) = hermitian_eigen(&tri);
    let ritz = |col: usize| -> CVec {
        let mut out = CVec::zeros(dim);
        for (i, u) in vs.iter().take(m).enumerate() {
            out += u * y[(i, col)];
        }
        out
    };
    let ground = ritz(0);
    let scale = theta
        .iter()
        .fold(0.0f64, |a, &e| a.max(e.abs()));
    let residual = (k.matvec(&ground) - &ground * cf(theta[0])).norm();
    if residual > 1e-9 * (1.0 + scale) {
        return Err(Error::EigensolverFailure { residual });
    }
    Ok((theta.into_iter().take(want).collect(), ground))
}

/// Diagonalize original and reconstructed-final Hamiltonians and compare.
pub fn oracle_report(
    original: &GlobalOperator,
    final_recon: &GlobalOperator,
) -> Result<OracleReport> {
    let how = if original.dim() <= DENSE_THRESHOLD {
        HowMany::All
    } else {
        HowMany::Lowest(64)
    };
    let (spec_o, _) = exact_diagonalize(original, how)?;
    let (spec_f, _) = exact_diagonalize(final_recon, how)?;
    let n = spec_o.len().min(spec_f.len());
    let max_abs_dev = (0..n)
        .map(|i| (spec_o[i] - spec_f[i]).abs())
        .fold(0.0f64, f64::max);
    let gap = |s: &[f64]| if s.len() > 1 { s[1] - s[0] } else { 0.0 };
    // ⊗Ω is basis index 0 in the product ordering.
    let dim = final_recon.dim();
    let mut e0 = CVec::zeros(dim);
    e0[0] = cf(1.0);
    let kv = final_recon.matvec(&e0);
    let vac_energy = kv[0].re;
    let ground_vector_residual = (kv - e0 * cf(vac_energy)).norm();
    Ok(OracleReport {
        gap_original: gap(&spec_o),
        gap_final: gap(&spec_f),
        spectrum_original: spec_o,
        spectrum_final: spec_f,
        max_abs_dev,
        ground_vector_residual,
    })
}

/// Spectrum agreement, per-step and final gaps, ground-vector residual,
/// and nondegeneracy — the main structural statements.
pub fn check_theorem_main(out: &RunOutput, oracle: &OracleReport) -> Vec<BoundCheck> {
    let mut checks = Vec::new();
    let k_norm = oracle
        .spectrum_original
        .iter()
        .fold(0.0f64, |a, &e| a.max(e.abs()));
    checks.push(BoundCheck::new(
        "unitary-equivalence-spectrum",
        oracle.max_abs_dev,
        1e-8 * (1.0 + k_norm),
        "spectrum-preserved-under-conjugation-chain",
    ));
    checks.push(BoundCheck::new(
        "final-gap-at-least-half",
        0.5,
        oracle.gap_final,
        "gap-half-certified-range",
    ));
    checks.push(BoundCheck::new(
        "ground-nondegeneracy",
        0.5,
        oracle.gap_final,
        "second-minus-first-eigenvalue-at-least-half",
    ));
    checks.push(BoundCheck::new(
        "ground-vector-residual",
        oracle.ground_vector_residual,
        1e-8,
        "all-vacuum-is-final-eigenvector",
    ));
    for rec in &out.records {
        checks.push(BoundCheck::new(
            format!("step-gap-{}", rec.step.label()),
            0.5,
            rec.gap,
            "gap-half-certified-range",
        ));
    }
    checks
}

/// 1 − 3t Σ_{l≥1} t^{(l−1)/4} (l+1)^{2d−1}, summed to convergence.
pub fn gap_lemma_coefficient(t: f64, d: usize) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for l in 1..100_000usize {
        let term = t.powf((l as f64 - 1.0) / 4.0) * ((l + 1) as f64).powi(2 * d as i32 - 1);
        sum += term;
        if term < 1e-16 * (1.0 + sum) {
            break;
        }
    }
    1.0 - 3.0 * t * sum
}

/// Quadratic-form floor for every step: P⁺(G−E)P⁺ − coeff·H⁰P⁺ ⪰ −1e-10,
/// with coeff the convergent series coefficient above.
pub fn check_gap_lemma(
    history: &[StepSnapshot],
    basis: &SiteBasis,
    t: f64,
    d: usize,
) -> Result<Vec<BoundCheck>> {
    let coeff = gap_lemma_coefficient(t, d);
    let mut checks = vec![BoundCheck::new(
        "gap-coefficient-value",
        0.0,
        coeff.max(0.0),
        "gap-series-coefficient-nonnegative-part",
    )];
    for snap in history {
        let g = &snap.g;
        let e = snap.series.energy;
        let h = h0_diag(&snap.step, basis);
        let dim = g.matrix.nrows();
        // P⁺ zeroes the all-vacuum row/column (index 0).
        let mut m = g.matrix.clone();
        for i in 0..dim {
            m[(i, i)] -= cf(e + coeff * h[i]);
        }
        for i in 0..dim {
            m[(0, i)] = cf(0.0);
            m[(i, 0)] = cf(0.0);
        }
        let (evals, _) = hermitian_eigen(&m);
        checks.push(BoundCheck::new(
            format!("gap-quadratic-form-floor-{}", snap.step.label()),
            -evals[0],
            0.0,
            "gap-quadratic-form-floor",
        ));
    }
    Ok(checks)
}

/// Decay-regime classification of a (step, key) pair by circumferences.
fn decay_bound(step: &Rectangle, key: &Rectangle, t: f64, x_d: u32) -> Result<(String, f64, bool)> {
    let k = step.circumference();
    let r = key.circumference();
    let k_star = (r as f64).powf(0.25).floor() as usize;
    let k_star2 = r - k_star;
    let tr = t.powf((r as f64 - 1.0) / 3.0);
    let rf = r as f64;
    Ok(if k < k_star {
        ("decay-regime-1".into(), tr / rf.powi(x_d as i32 + 2), true)
    } else if k < k_star2 {
        (
            "decay-regime-2".into(),
            2.0 * tr / rf.powi(x_d as i32 + 2),
            false,
        )
    } else if order_cmp(step, key)? == std::cmp::Ordering::Less {
        (
            "decay-regime-3b".into(),
            48.0 * tr / rf.powi(x_d as i32),
            false,
        )
    } else {
        (
            "decay-regime-3c".into(),
            96.0 * tr / rf.powi(x_d as i32),
            false,
        )
    })
}

/// Weighted-norm decay bounds for every recorded (step, key) pair, the
/// auxiliary-norm bound in the large-step regime, the working-hypothesis
/// bound t^{(r−1)/4}, and the base case ‖V_bond‖ ≤ 1.
pub fn check_norm_decay(
    out: &RunOutput,
    basis: &SiteBasis,
    t: f64,
    x_d: u32,
    skipped: &mut Vec<String>,
) -> Result<Vec<BoundCheck>> {
    let mut checks = Vec::new();
    // Base case: the initial bond entries.
    if let Some(first) = out.history.first() {
        for (key, entry) in &first.table_before.entries {
            if key.circumference() == 1 {
                checks.push(BoundCheck::new(
                    format!("decay-base-case-{}", key.label()),
                    weighted_norm(entry, key, basis)?,
                    1.0,
                    "initial-bond-weighted-norm-at-most-one",
                ));
            }
        }
    }
    let d = out.final_table.lattice.d;
    for (ordinal, rec) in out.records.iter().enumerate() {
        // Table state after this step, for auxiliary-norm evaluation.
        let table_after = if ordinal + 1 < out.history.len() {
            &out.history[ordinal + 1].table_before
        } else {
            &out.final_table
        };
        for (key, norm) in &rec.weighted_norms {
            let r = key.circumference();
            if r == 0 {
                continue;
            }
            let (regime, bound, skip) = decay_bound(&rec.step, key, t, x_d)?;
            if skip {
                skipped.push(format!(
                    "{regime} empty at this scale: step {} key {}",
                    rec.step.label(),
                    key.label()
                ));
            } else {
                checks.push(BoundCheck::new(
                    format!("{regime}-{}-{}", rec.step.label(), key.label()),
                    *norm,
                    bound,
                    regime.clone(),
                ));
            }
            // Auxiliary sector-projected norm bound in the regime where the
            // step is large but still precedes the target.
            if regime == "decay-regime-3b" {
                if let Some(entry) = table_after.entries.get(key) {
                    let mut aux_max = 0.0f64;
                    for left in [Sector::Plus, Sector::Minus] {
                        for right in [Sector::Plus, Sector::Minus] {
                            aux_max =
                                aux_max.max(aux_weighted_norm(entry, key, basis, left, right)?);
                        }
                    }
                    let tr = t.powf((r as f64 - 1.0) / 3.0);
                    checks.push(BoundCheck::new(
                        format!("decay-regime-3a-{}-{}", rec.step.label(), key.label()),
                        aux_max,
                        3.0 * tr / (r as f64).powi(x_d as i32 + 2 * d as i32),
                        "decay-regime-3a",
                    ));
                }
            }
            // Working hypothesis feeding the gap argument.
            checks.push(BoundCheck::new(
                format!("decay-working-hypothesis-{}-{}", rec.step.label(), key.label()),
                *norm,
                t.powf((r as f64 - 1.0) / 4.0),
                "decay-working-hypothesis",
            ));
        }
    }
    Ok(checks)
}

/// Per-step explicit-constant inequalities (series term norms, diagonal
/// update factor, resolvent weights, quadratic-form bound) plus measured
/// ratios for the constants the theory leaves implicit.
pub fn check_explicit_constants(
    history: &[StepSnapshot],
    basis: &SiteBasis,
    t: f64,
    checks: &mut Vec<BoundCheck>,
    measured: &mut Vec<MeasuredRatio>,
) -> Result<()> {
    // Certified lower bound on every step gap in the theorem regime.
    let delta = 0.5f64;
    for snap in history {
        let step = &snap.step;
        let label = step.label();
        let site_dim = snap.table_before.site_dim;
        let h = h0_diag(step, basis);
        let dim = snap.g.matrix.nrows();
        let sqrt_w: Vec<f64> = h.iter().map(|&e| (e + 1.0).sqrt()).collect();

        // Per-order series bounds.
        for (j, (s_j, v_j)) in snap
            .series
            .s_terms
            .iter()
            .zip(snap.series.v_terms.iter())
            .enumerate()
        {
            let v_op = LocalOperator {
                support: step.clone(),
                matrix: v_j.clone(),
                hermitian: false,
            };
            let v_norm = weighted_norm(&v_op, step, basis)?;
            checks.push(BoundCheck::new(
                format!("series-term-norm-{label}-j{}", j + 1),
                spectral_norm(s_j),
                (2.0 * 2.0f64.sqrt() / delta) * v_norm,
                "series-term-norm-2sqrt2-over-gap",
            ));
            let mut s_weighted = s_j.clone();
            for c in 0..dim {
                for r in 0..dim {
                    s_weighted[(r, c)] *= cf(sqrt_w[c]);
                }
            }
            checks.push(BoundCheck::new(
                format!("series-term-weighted-{label}-j{}", j + 1),
                spectral_norm(&s_weighted),
                ((2.0 + 2.0f64.sqrt()) / delta) * v_norm,
                "series-term-weighted-2plus-sqrt2-over-gap",
            ));
        }

        // Diagonal update gains at most a factor 2 in the weighted norm.
        let before = snap.table_before.get_or_zero(step);
        let before_norm = weighted_norm(&before, step, basis)?;
        let after_op = LocalOperator {
            support: step.clone(),
            matrix: snap.series.diag_sum.clone(),
            hermitian: true,
        };
        checks.push(BoundCheck::new(
            format!("diag-update-factor-2-{label}"),
            weighted_norm(&after_op, step, basis)?,
            2.0 * before_norm,
            "diag-update-factor-2",
        ));

        // Resolvent weights on the non-vacuum range of G.
        let (evals, evecs) = hermitian_eigen(&snap.g.matrix);
        let vac = (0..dim)
            .max_by(|&a, &b| {
                evecs[(0, a)]
                    .norm_sqr()
                    .partial_cmp(&evecs[(0, b)].norm_sqr())
                    .unwrap()
            })
            .unwrap();
        let e = snap.series.energy;
        let resolvent_power = |p: f64| -> CMat {
            let mut m = CMat::zeros(dim, dim);
            for i in 0..dim {
                if i == vac {
                    continue;
                }
                let col = evecs.column(i);
                let w = (evals[i] - e).powf(-p);
                for a in 0..dim {
                    for b in 0..dim {
                        m[(a, b)] += col[a] * col[b].conj() * cf(w);
                    }
                }
            }
            // Right-multiply by (H⁰+1)^{1/2} (diagonal).
            for c in 0..dim {
                for r in 0..dim {
                    m[(r, c)] *= cf(sqrt_w[c]);
                }
            }
            m
        };
        checks.push(BoundCheck::new(
            format!("resolvent-half-weight-{label}"),
            spectral_norm(&resolvent_power(0.5)),
            2.0f64.sqrt() / delta.sqrt(),
            "resolvent-half-weight",
        ));
        checks.push(BoundCheck::new(
            format!("resolvent-full-weight-{label}"),
            spectral_norm(&resolvent_power(1.0)),
            2.0f64.sqrt() / delta,
            "resolvent-full-weight",
        ));

        // Quadratic-form bound: P⁺(G−E)P⁺ ⪰ (Δ/2)(H⁰+1)P⁺.
        let mut qm = snap.g.matrix.clone();
        for i in 0..dim {
            qm[(i, i)] -= cf(e + (delta / 2.0) * (h[i] + 1.0));
        }
        for i in 0..dim {
            qm[(0, i)] = cf(0.0);
            qm[(i, 0)] = cf(0.0);
        }
        let (qe, _) = hermitian_eigen(&qm);
        checks.push(BoundCheck::new(
            format!("g-quadratic-form-half-gap-{label}"),
            -qe[0],
            0.0,
            "g-quadratic-form-half-gap",
        ));

        // Vacuum energy equals t times the sum of vacuum expectations of
        // the smaller block-diagonalized potentials inside the step.
        let mut vac_sum = 0.0;
        for (key, entry) in &snap.table_before.entries {
            if key.circumference() >= 1
                && key.circumference() < step.circumference()
                && step.contains(key)
            {
                vac_sum += entry.matrix[(0, 0)].re;
            }
        }
        checks.push(BoundCheck::new(
            format!("vacuum-energy-sum-{label}"),
            (e - t * vac_sum).abs(),
            1e-10 * (1.0 + e.abs()),
            "vacuum-energy-equals-sum-of-expectations",
        ));

        // Occupancy inequalities on the step rectangle (all diagonal).
        let occ = occupancy_diag(step, site_dim);
        let pplus = projector_plus(step, site_dim);
        let min_gap1 = (0..dim)
            .map(|i| occ[i] - pplus.matrix[(i, i)].re)
            .fold(f64::INFINITY, f64::min);
        checks.push(BoundCheck::new(
            format!("occupancy-dominates-plus-{label}"),
            -min_gap1,
            0.0,
            "occupancy-dominates-plus",
        ));
        let subs = sub_rectangles(step);
        let max_l = step.circumference();
        for l in 1..=max_l {
            let mut plus_sum = vec![0.0f64; dim];
            let mut h_sum = vec![0.0f64; dim];
            let mut any = false;
            for sub in subs.iter().filter(|s| s.circumference() == l) {
                any = true;
                let p_emb = embed(&projector_plus(sub, site_dim), step, site_dim)?;
                let h_emb = embed(&crate::operator::h0(sub, basis), step, site_dim)?;
                for i in 0..dim {
                    plus_sum[i] += p_emb.matrix[(i, i)].re;
                    h_sum[i] += h_emb.matrix[(i, i)].re;
                }
            }
            if !any {
                continue;
            }
            let cap = ((l + 1) as f64).powi(basis_dim_exponent(step));
            let min2 = (0..dim)
                .map(|i| cap * occ[i] - plus_sum[i])
                .fold(f64::INFINITY, f64::min);
            checks.push(BoundCheck::new(
                format!("occupancy-count-cap-{label}-l{l}"),
                -min2,
                0.0,
                "occupancy-count-cap",
            ));
            let cap00 = ((l + 1) as f64).powi(2 * step.dim() as i32 - 1);
            let min3 = (0..dim)
                .map(|i| cap00 * h[i] - h_sum[i])
                .fold(f64::INFINITY, f64::min);
            checks.push(BoundCheck::new(
                format!("h0-shape-sum-cap-{label}-l{l}"),
                -min3,
                0.0,
                "h0-shape-sum-cap",
            ));
        }

        // Reverse auxiliary bound: plain weighted norm of the sector-split
        // potential is at most (sites+1) times the occupancy-weighted norm.
        if before_norm > 1e-13 {
            let off = LocalOperator {
                support: step.clone(),
                matrix: off_diagonal_part(&before.matrix),
                hermitian: true,
            };
            let off_norm = weighted_norm(&off, step, basis)?;
            if off_norm > 1e-13 {
                let mut aux_max = 0.0f64;
                for (l, r) in [(Sector::Plus, Sector::Minus), (Sector::Minus, Sector::Plus)] {
                    aux_max = aux_max.max(aux_weighted_norm(&off, step, basis, l, r)?);
                }
                checks.push(BoundCheck::new(
                    format!("aux-reverse-bound-{label}"),
                    off_norm,
                    (step.site_count() as f64 + 1.0) * aux_max,
                    "aux-reverse-bound-occupancy-cap",
                ));
            }
        }

        // Measured ratios for constants the theory leaves implicit.
        if t > 0.0 && before_norm > 1e-13 {
            measured.push(MeasuredRatio {
                name: format!("tail-ratio-s-total-{label}"),
                value: spectral_norm(&snap.series.s_total) / (t * before_norm),
                anchor: "tail-ratio-s-total-over-t-vnorm".into(),
            });
            // Tail of the generator beyond first order.
            let mut tail = snap.series.s_total.clone();
            if let Some(s1) = snap.series.s_terms.first() {
                tail -= s1 * cf(t);
            }
            measured.push(MeasuredRatio {
                name: format!("tail-ratio-vsquare-{label}"),
                value: spectral_norm(&tail) / (t * before_norm * before_norm),
                anchor: "tail-ratio-vsquare".into(),
            });
            let mut st_weighted = snap.series.s_total.clone();
            for c in 0..dim {
                for r in 0..dim {
                    st_weighted[(r, c)] *= cf(sqrt_w[c]);
                }
            }
            measured.push(MeasuredRatio {
                name: format!("tail-ratio-s-hest-{label}"),
                value: spectral_norm(&st_weighted) / (t * before_norm),
                anchor: "tail-ratio-s-hest".into(),
            });
            // Auxiliary inductive ratio, asserted only under a generous cap.
            let off = LocalOperator {
                support: step.clone(),
                matrix: off_diagonal_part(&before.matrix),
                hermitian: true,
            };
            let denom = aux_weighted_norm(&off, step, basis, Sector::Plus, Sector::Minus)?;
            if denom > 1e-13 {
                let occ_w: Vec<f64> = occ.iter().map(|&p| 1.0 / (p + 1.0).sqrt()).collect();
                let mut num = resolvent_num(&evals, &evecs, vac, e, &off.matrix, dim);
                for r in 0..dim {
                    for c in 0..dim {
                        num[(r, c)] *= cf(sqrt_w[r] * occ_w[r]);
                    }
                }
                let ratio = spectral_norm(&num) / denom;
                measured.push(MeasuredRatio {
                    name: format!("inductive-aux-ratio-{label}"),
                    value: ratio,
                    anchor: "inductive-aux-ratio".into(),
                });
                checks.push(BoundCheck::new(
                    format!("inductive-aux-cap-{label}"),
                    ratio,
                    1e3,
                    "inductive-aux-generous-cap",
                ));
            }
        }
    }
    Ok(())
}

/// (G−E)^{−1} P⁺ V P⁻ with the resolvent over non-vacuum eigenpairs.
fn resolvent_num(
    evals: &[f64],
    evecs: &CMat,
    vac: usize,
    e: f64,
    v: &CMat,
    dim: usize,
) -> CMat {
    // P⁻ = |0⟩⟨0| in the product basis: keep only column 0 of V.
    let mut vp = CMat::zeros(dim, dim);
    for r in 0..dim {
        vp[(r, 0)] = v[(r, 0)];
    }
    let mut out = CMat::zeros(dim, dim);
    for i in 0..dim {
        if i == vac {
            continue;
        }
        let col = evecs.column(i);
        let w = 1.0 / (evals[i] - e);
        // |u⟩⟨u| V P⁻ accumulated column by column.
        let coef = col.dotc(&vp.column(0).into_owned());
        for r in 0..dim {
            out[(r, 0)] += col[r] * coef * cf(w);
        }
    }
    out
}

/// Exponent for the occupancy count cap: d on the step's lattice.
fn basis_dim_exponent(step: &Rectangle) -> i32 {
    step.dim() as i32
}

/// Relative form-boundedness of the bond potential on random unit vectors:
/// |⟨φ, Wφ⟩| ≤ a·⟨φ, (H⁰+1)φ⟩ with a the normalization target.
pub fn check_form_bound(
    data: &InitialData,
    lattice: &LatticeSpec,
    a: f64,
    n_vectors: usize,
    seed: u64,
) -> Result<BoundCheck> {
    let bond = bonds(lattice)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Precondition("lattice has no bonds".into()))?;
    let w = crate::model::build_pair_potential(data, &bond)?;
    let h = h0_diag(&bond, &data.basis);
    let dim = w.matrix.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || {
        let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
        (-2.0 * u1.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut worst = 0.0f64;
    for _ in 0..n_vectors {
        let mut phi = CVec::from_fn(dim, |_, _| nalgebra::Complex::new(gauss(), gauss()));
        let n = phi.norm();
        phi = phi.unscale(n);
        let wphi = &w.matrix * &phi;
        let num = phi.dotc(&wphi).re.abs();
        let den: f64 = (0..dim).map(|i| (h[i] + 1.0) * phi[i].norm_sqr()).sum();
        worst = worst.max(num / den);
    }
    Ok(BoundCheck::new(
        "form-bound-random-vectors",
        worst,
        a,
        "relative-form-bound-on-random-unit-vectors",
    ))
}

/// Which check suites to run; the coupling scan certifies exactly the
/// selected set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct SuiteSelection {
    pub theorem_main: bool,
    pub gap_lemma: bool,
    pub norm_decay: bool,
    pub explicit_constants: bool,
    pub form_bound: bool,
}

impl Default for SuiteSelection {
    fn default() -> Self {
        Self {
            theorem_main: true,
            gap_lemma: true,
            norm_decay: true,
            explicit_constants: true,
            form_bound: true,
        }
    }
}

impl SuiteSelection {
    /// Everything except the decay bounds, whose theoretical coupling
    /// threshold lies far below desk-scale couplings (see README).
    pub fn without_norm_decay() -> Self {
        Self {
            norm_decay: false,
            ..Self::default()
        }
    }
}

/// Options for the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationOptions {
    /// Decay exponent; defaults to 20·d when zero.
    pub x_d: u32,
    pub seed: u64,
    pub form_bound_vectors: usize,
    pub suites: SuiteSelection,
}

impl Default for VerificationOptions {
    fn default() -> Self {
        Self {
            x_d: 0,
            seed: 7,
            form_bound_vectors: 200,
            suites: SuiteSelection::default(),
        }
    }
}

/// The complete verification output for one run.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<BoundCheck>,
    pub measured: Vec<MeasuredRatio>,
    pub oracle: OracleReport,
    pub skipped: Vec<String>,
    pub n_passed: usize,
    pub n_failed: usize,
    pub passed: bool,
}

/// Run every suite against a finished run.
pub fn verify_run(
    lattice: &LatticeSpec,
    data: &InitialData,
    t: f64,
    out: &RunOutput,
    opts: &VerificationOptions,
) -> Result<VerificationReport> {
    let x_d = if opts.x_d == 0 {
        20 * lattice.d as u32
    } else {
        opts.x_d
    };
    let original = assemble_hamiltonian(lattice, data, t)?;
    let final_recon = reconstruct(&out.final_table)?;
    let oracle = oracle_report(&original, &final_recon)?;
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let mut measured = Vec::new();
    if opts.suites.theorem_main {
        checks.extend(check_theorem_main(out, &oracle));
    }
    if opts.suites.gap_lemma {
        checks.extend(check_gap_lemma(&out.history, &data.basis, t, lattice.d)?);
    }
    if opts.suites.norm_decay {
        checks.extend(check_norm_decay(out, &data.basis, t, x_d, &mut skipped)?);
    }
    if opts.suites.explicit_constants {
        check_explicit_constants(&out.history, &data.basis, t, &mut checks, &mut measured)?;
    }
    if opts.suites.form_bound {
        checks.push(check_form_bound(
            data,
            lattice,
            data.normalization_report,
            opts.form_bound_vectors,
            opts.seed,
        )?);
    }
    let n_passed = checks.iter().filter(|c| c.passed).count();
    let n_failed = checks.len() - n_passed;
    Ok(VerificationReport {
        n_passed,
        n_failed,
        passed: n_failed == 0,
        checks,
        measured,
        oracle,
        skipped,
    })
}

/// One grid point of a coupling scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanEntry {
    pub t: f64,
    pub passed: bool,
    pub n_failed: usize,
    pub first_failure: Option<String>,
}

/// Scan output: per-t results, the certified frontier (largest grid t such
/// that it and every smaller grid t pass), and per-check failure onsets.
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub entries: Vec<ScanEntry>,
    pub frontier: Option<f64>,
    pub failure_frontier: BTreeMap<String, f64>,
}

/// Run the full pipeline and suite for each grid coupling.
pub fn t_scan(
    lattice: &LatticeSpec,
    model: &ModelSpec,
    t_grid: &[f64],
    run_opts: &RunOptions,
    vopts: &VerificationOptions,
) -> Result<ScanReport> {
    let data = InitialData::new(lattice, model)?;
    let mut ts: Vec<f64> = t_grid.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut entries = Vec::new();
    let mut failure_frontier: BTreeMap<String, f64> = BTreeMap::new();
    for &t in &ts {
        let entry = match run(lattice, &data, t, run_opts)
            .and_then(|out| verify_run(lattice, &data, t, &out, vopts))
        {
            Ok(report) => {
                for c in report.checks.iter().filter(|c| !c.passed) {
                    failure_frontier.entry(c.anchor.clone()).or_insert(t);
                }
                ScanEntry {
                    t,
                    passed: report.passed,
                    n_failed: report.n_failed,
                    first_failure: report
                        .checks
                        .iter()
                        .find(|c| !c.passed)
                        .map(|c| c.name.clone()),
                }
            }
            Err(err) => {
                failure_frontier.entry("run-error".into()).or_insert(t);
                ScanEntry {
                    t,
                    passed: false,
                    n_failed: 1,
                    first_failure: Some(err.to_string()),
                }
            }
        };
        entries.push(entry);
    }
    let mut frontier = None;
    for e in &entries {
        if e.passed {
            frontier = Some(e.t);
        } else {
            break;
        }
    }
    Ok(ScanReport {
        entries,
        frontier,
        failure_frontier,
    })
}
