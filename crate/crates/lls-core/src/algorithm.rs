//! The iterative block-diagonalization loop.
//!
//! Rectangles are processed in the total step order. At each step J_{k,q}
//! the already-diagonalized interior produces a local Hamiltonian G with
//! vacuum energy E; a recursive series yields an anti-Hermitian generator
//! S = Σ_j t^j (S)_j whose conjugation kills the off-diagonal part of the
//! step's potential; the table is then updated in three cases: rectangles
//! not containing the step keep their entries verbatim, the step rectangle
//! receives the diagonal series, and every strictly larger rectangle gains
//! adjoint-series contributions from its growth-set members.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    enumerate_rectangles, g_set, step_sequence, LatticeSpec, Rectangle, StepIndex,
};
use crate::model::InitialData;
use crate::operator::{
    adjoint_series, cf, embed, spectral_norm, weighted_norm, CMat, GlobalOperator, GlobalRepr,
    LocalOperator,
};

/// Entries below this Frobenius norm are dropped from the table after an
/// update (transient numerical zeros never create keys).
pub const DROP_TOL: f64 = 1e-14;

/// Absolute tolerance for "this entry is block-diagonal" checks.
pub const BLOCK_DIAG_TOL: f64 = 1e-10;

/// The map rectangle → effective potential, evolved step by step.
///
/// Single-site keys carry the on-site Hamiltonians (never multiplied by t);
/// keys with circumference ≥ 1 carry interaction potentials that enter the
/// Hamiltonian with a factor t. Absent keys are zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialTable {
    /// The last step whose update produced this table (sentinel initially).
    pub step: StepIndex,
    pub lattice: LatticeSpec,
    pub site_dim: usize,
    /// Coupling strength multiplying every interaction entry on reconstruction.
    pub t: f64,
    #[serde(with = "entries_serde")]
    pub entries: BTreeMap<Rectangle, LocalOperator>,
}

/// JSON maps need string keys, so table entries round-trip as a pair list.
mod entries_serde {
    use super::{BTreeMap, LocalOperator, Rectangle};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<Rectangle, LocalOperator>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Rectangle, LocalOperator>, D::Error> {
        let pairs = Vec::<(Rectangle, LocalOperator)>::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl PotentialTable {
    /// An empty table tagged with the initial sentinel.
    pub fn empty(lattice: LatticeSpec, site_dim: usize, t: f64) -> Self {
        PotentialTable {
            step: StepIndex::Initial,
            lattice,
            site_dim,
            t,
            entries: BTreeMap::new(),
        }
    }

    /// The entry at a key, or the zero operator on that support.
    pub fn get_or_zero(&self, key: &Rectangle) -> LocalOperator {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| LocalOperator::zero(key.clone(), self.site_dim))
    }
}

/// ‖P⁺ M P⁻‖ ∨ ‖P⁻ M P⁺‖ on the operator's own support: the all-vacuum
/// state is basis index 0, so these blocks are the first column/row minus
/// the corner entry.
pub fn off_diagonal_norm(m: &CMat) -> f64 {
    let mut col = 0.0f64;
    let mut row = 0.0f64;
    for i in 1..m.nrows() {
        col += m[(i, 0)].norm_sqr();
        row += m[(0, i)].norm_sqr();
    }
    col.sqrt().max(row.sqrt())
}

/// Replace M by its block-diagonal part P⁺MP⁺ + P⁻MP⁻.
pub fn block_diagonal_part(m: &CMat) -> CMat {
    let mut out = m.clone();
    for i in 1..m.nrows() {
        out[(i, 0)] = cf(0.0);
        out[(0, i)] = cf(0.0);
    }
    out
}

/// The off-diagonal part P⁺MP⁻ + P⁻MP⁺.
pub fn off_diagonal_part(m: &CMat) -> CMat {
    m - block_diagonal_part(m)
}

/// The local Hamiltonian of a step: on-site terms over the step rectangle
/// plus t times every strictly smaller-circumference potential inside it —
/// all of which are already block-diagonal, so G commutes with P^(±).
pub fn build_g(step_rect: &Rectangle, table: &PotentialTable) -> Result<LocalOperator> {
    let site_dim = table.site_dim;
    let dim = site_dim.pow(step_rect.site_count() as u32);
    let mut g = CMat::zeros(dim, dim);
    let circ = step_rect.circumference();
    for (key, entry) in &table.entries {
        if !step_rect.contains(key) {
            continue;
        }
        let kc = key.circumference();
        if kc == 0 {
            g += embed(entry, step_rect, site_dim)?.matrix;
        } else if kc < circ {
            // Precondition: interior potentials are block-diagonalized.
            let off = off_diagonal_norm(&entry.matrix);
            if off > BLOCK_DIAG_TOL {
                return Err(Error::InvariantBreach(format!(
                    "entry {} feeding G at step {} has off-diagonal norm {off:.3e}",
                    key.label(),
                    step_rect.label()
                )));
            }
            g += embed(entry, step_rect, site_dim)?.matrix * cf(table.t);
        }
    }
    LocalOperator::new(step_rect.clone(), g, site_dim, true)
}

/// The vacuum energy E = ⟨⊗Ω, G ⊗Ω⟩, asserting that the all-vacuum state
/// is genuinely invariant: ‖(G − E)P⁻‖ must be negligible.
pub fn ground_energy(g: &LocalOperator) -> Result<f64> {
    let e = g.matrix[(0, 0)].re;
    let mut residual = g.matrix[(0, 0)].im.abs().powi(2);
    for i in 1..g.dim() {
        residual += g.matrix[(i, 0)].norm_sqr();
    }
    let residual = residual.sqrt();
    if residual > BLOCK_DIAG_TOL * (1.0 + e.abs()) {
        return Err(Error::InvariantBreach(format!(
            "‖(G − E)P⁻‖ = {residual:.3e} at support {}",
            g.support.label()
        )));
    }
    Ok(e)
}

/// Truncation and gap parameters for the generator series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesOptions {
    /// Maximum series order (both for (S)_j and for adjoint series).
    pub j_max: usize,
    /// Stop when ‖t^j (S)_j‖ (or an adjoint term) drops below this.
    pub tail_tol: f64,
    /// Hard floor for the spectral gap of G above E in the excited sector.
    pub gap_floor: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            j_max: 24,
            tail_tol: 1e-13,
            gap_floor: 0.25,
        }
    }
}

/// Everything the series solve produces for one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesState {
    /// (V)_j term matrices, j = 1.. (index 0 holds (V)_1 = V).
    pub v_terms: Vec<CMat>,
    /// (S)_j term matrices (anti-Hermitian, purely off-diagonal).
    pub s_terms: Vec<CMat>,
    /// The summed generator S = Σ t^j (S)_j on the step support.
    pub s_total: CMat,
    /// The case-(b) replacement Σ t^{j−1} (V)_j^{diag}.
    pub diag_sum: CMat,
    pub converged: bool,
    /// Norm of the last weighted term ‖t^j (S)_j‖.
    pub tail_estimate: f64,
    pub terms_used: usize,
    /// Spectral gap of G above E in the excited sector.
    pub gap: f64,
    pub energy: f64,
}

/// Memoized sums over compositions: value(kind, p, m) is the sum over all
/// (r_1, …, r_p) with r_i ≥ 1 and Σ r_i = m of ad S_{r_1} ∘ … ∘ ad S_{r_p}
/// applied to G (kind 0) or V (kind 1). Generators are appended as the
/// orders are solved; memoized values only ever reference earlier ones.
struct CompositionSums {
    s: Vec<CMat>,
    g: CMat,
    v: CMat,
    memo: HashMap<(u8, usize, usize), CMat>,
}

impl CompositionSums {
    fn comm(a: &CMat, b: &CMat) -> CMat {
        a * b - b * a
    }

    fn value(&mut self, kind: u8, p: usize, m: usize) -> CMat {
        debug_assert!(p >= 1 && m >= p);
        if let Some(hit) = self.memo.get(&(kind, p, m)) {
            return hit.clone();
        }
        let out = if p == 1 {
            let base = if kind == 0 { &self.g } else { &self.v };
            Self::comm(&self.s[m - 1], base)
        } else {
            let mut acc = CMat::zeros(self.g.nrows(), self.g.ncols());
            for r in 1..=m - p + 1 {
                let inner = self.value(kind, p - 1, m - r);
                acc += Self::comm(&self.s[r - 1], &inner);
            }
            acc
        };
        self.memo.insert((kind, p, m), out.clone());
        out
    }
}

/// Solve the recursive generator series for one step.
///
/// Order j: (V)_j collects all nested adjoints of lower-order generators
/// applied to G (p ≥ 2 factors, orders summing to j) and to V (p ≥ 1
/// factors, orders summing to j−1), each weighted 1/p!; then
/// (S)_j = (G−E)^{−1} P⁺ (V)_j P⁻ − h.c., with the resolvent realized as a
/// pseudo-inverse over the non-vacuum eigenpairs of G.
pub fn lie_schwinger_series(
    g: &LocalOperator,
    e: f64,
    v: &LocalOperator,
    t: f64,
    opts: &SeriesOptions,
) -> Result<SeriesState> {
    let dim = g.dim();
    let (eigenvalues, u) = crate::operator::hermitian_eigen(&g.matrix);
    // The vacuum eigenvector is the one carrying the all-vacuum state.
    let vac = (0..dim)
        .max_by(|&a, &b| {
            u[(0, a)]
                .norm_sqr()
                .partial_cmp(&u[(0, b)].norm_sqr())
                .unwrap()
        })
        .expect("nonempty spectrum");
    let gap = (0..dim)
        .filter(|&i| i != vac)
        .map(|i| eigenvalues[i] - e)
        .fold(f64::INFINITY, f64::min);
    if gap < opts.gap_floor {
        return Err(Error::GapCollapse {
            gap,
            floor: opts.gap_floor,
            step: g.support.label(),
        });
    }
    // (G − E)^{-1} restricted to the excited sector.
    let mut ginv = CMat::zeros(dim, dim);
    for i in 0..dim {
        if i == vac {
            continue;
        }
        let col = u.column(i);
        let w = cf(1.0 / (eigenvalues[i] - e));
        for r in 0..dim {
            for c in 0..dim {
                ginv[(r, c)] += col[r] * col[c].conj() * w;
            }
        }
    }

    let mut v_terms: Vec<CMat> = vec![v.matrix.clone()];
    let mut s_terms: Vec<CMat> = Vec::new();
    let mut s_total = CMat::zeros(dim, dim);
    let mut diag_sum = CMat::zeros(dim, dim);
    let mut norms: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut tail_estimate = f64::INFINITY;

    let mut sums = CompositionSums {
        s: Vec::new(),
        g: g.matrix.clone(),
        v: v.matrix.clone(),
        memo: HashMap::new(),
    };
    let mut factorial = vec![1.0f64; opts.j_max + 2];
    for i in 1..factorial.len() {
        factorial[i] = factorial[i - 1] * i as f64;
    }

    for j in 1..=opts.j_max {
        let v_j = if j == 1 {
            v.matrix.clone()
        } else {
            let mut acc = CMat::zeros(dim, dim);
            for p in 2..=j {
                acc += sums.value(0, p, j) / cf(factorial[p]);
            }
            for p in 1..=j - 1 {
                acc += sums.value(1, p, j - 1) / cf(factorial[p]);
            }
            acc
        };
        v_terms.push(v_j.clone());
        // a = (G−E)^{-1} P⁺ (V)_j P⁻ : the first column of (V)_j with the
        // corner removed, mapped through the excited-sector resolvent.
        let mut vcol = v_j.column(0).clone_owned();
        vcol[0] = cf(0.0);
        let acol = &ginv * vcol;
        let mut s_j = CMat::zeros(dim, dim);
        for r in 0..dim {
            s_j[(r, 0)] += acol[r];
            s_j[(0, r)] -= acol[r].conj();
        }
        s_terms.push(s_j.clone());
        sums.s.push(s_j.clone());
        let tj = t.powi(j as i32);
        s_total += &s_j * cf(tj);
        diag_sum += block_diagonal_part(&v_j) * cf(t.powi(j as i32 - 1));
        // Weight of this order in both the generator and the table update.
        // Parity-symmetric models zero out every other generator term, so a
        // single small order is not proof of convergence: require two
        // consecutive negligible orders (and count the potential term too).
        let term_norm = if j == 1 {
            tj.abs() * spectral_norm(&s_j)
        } else {
            (tj.abs() * spectral_norm(&s_j))
                .max(t.powi(j as i32 - 1).abs() * spectral_norm(&v_j))
        };
        norms.push(term_norm);
        tail_estimate = term_norm;
        let n = norms.len();
        if n >= 2 && norms[n - 1] < opts.tail_tol && norms[n - 2] < opts.tail_tol {
            converged = true;
            break;
        }
        if term_norm > opts.tail_tol
            && n >= 3
            && norms[n - 1] >= norms[n - 2]
            && norms[n - 2] >= norms[n - 3]
        {
            return Err(Error::SeriesDivergence { order: j });
        }
    }
    // v_terms carries (V)_1 at index 0 and one entry per computed order.
    v_terms.remove(0);

    Ok(SeriesState {
        terms_used: s_terms.len(),
        v_terms,
        s_terms,
        s_total,
        diag_sum,
        converged,
        tail_estimate,
        gap,
        energy: e,
    })
}

/// Apply the three-case table update for one step.
///
/// (a) keys not containing the step rectangle are copied verbatim;
/// (b) the step key is replaced by the diagonal series Σ t^{j−1}(V)_j^{diag};
/// (c) every strictly larger key gains Σ_{J' ∈ growth set} 𝒜_S(V_{J'}),
///     with 𝒜 the truncated adjoint series of the step generator.
/// Entries whose norm falls below `DROP_TOL` are removed.
pub fn update_potentials(
    step_rect: &Rectangle,
    table: &PotentialTable,
    series: &SeriesState,
    opts: &SeriesOptions,
) -> Result<PotentialTable> {
    let site_dim = table.site_dim;
    let mut out = PotentialTable {
        step: StepIndex::Step(step_rect.clone()),
        lattice: table.lattice,
        site_dim,
        t: table.t,
        entries: BTreeMap::new(),
    };
    // Case (a): everything except the step key is copied verbatim; keys
    // strictly containing the step may additionally grow in case (c) below.
    for (key, entry) in &table.entries {
        if key != step_rect {
            out.entries.insert(key.clone(), entry.clone());
        }
    }
    let diag = LocalOperator::new(step_rect.clone(), series.diag_sum.clone(), site_dim, true)?;
    if diag.matrix.norm() >= DROP_TOL {
        out.entries.insert(step_rect.clone(), diag);
    }
    // Case (c): strictly larger rectangles gain growth-set contributions.
    if series.s_total.norm() > 0.0 {
        let targets = enumerate_rectangles(
            &table.lattice,
            Some(&|r: &Rectangle| r.contains_strictly(step_rect)),
        );
        for target in targets {
            let members = g_set(step_rect, &target)?;
            let present: Vec<&Rectangle> = members
                .iter()
                .filter(|m| table.entries.contains_key(*m))
                // Disjoint members commute with S and contribute zero.
                .filter(|m| m.overlaps(step_rect))
                .collect();
            if present.is_empty() {
                continue;
            }
            let s_local = LocalOperator::new(
                step_rect.clone(),
                series.s_total.clone(),
                site_dim,
                false,
            )?;
            let s_emb = embed(&s_local, &target, site_dim)?;
            let dim = s_emb.dim();
            let mut gain = CMat::zeros(dim, dim);
            for member in present {
                let v_emb = embed(&table.entries[member], &target, site_dim)?;
                let a = adjoint_series(&s_emb.matrix, &v_emb.matrix, opts.j_max, opts.tail_tol)?;
                gain += a.sum;
            }
            let mut new_entry = out.entries.remove(&target).map(|e| e.matrix).unwrap_or_else(
                || CMat::zeros(dim, dim),
            );
            new_entry += gain;
            if new_entry.norm() >= DROP_TOL {
                out.entries
                    .insert(target.clone(), LocalOperator::new(target.clone(), new_entry, site_dim, true)?);
            }
        }
    }
    out.entries.retain(|_, v| v.matrix.norm() >= DROP_TOL);
    Ok(out)
}

/// Per-step diagnostics persisted into run reports.
///
/// Wall time is kept out of the serialized form so identical runs produce
/// byte-identical records; aggregate timing lives in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: Rectangle,
    /// 0-based position in the global step sequence.
    pub ordinal: usize,
    pub energy: f64,
    pub gap: f64,
    pub terms_used: usize,
    pub converged: bool,
    pub tail_estimate: f64,
    /// Weighted norm of every table entry over its own support, after the
    /// step's update (sorted by key).
    pub weighted_norms: Vec<(Rectangle, f64)>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Everything retained about one executed step for later verification and
/// re-expansion: the table it consumed, its G/E, and the full series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSnapshot {
    pub step: Rectangle,
    pub table_before: PotentialTable,
    pub g: LocalOperator,
    pub series: SeriesState,
}

/// Options for a full run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunOptions {
    pub series: SeriesOptions,
    /// Retain per-step snapshots (tables, generators) for verification.
    pub keep_history: bool,
    /// Assert each step gap ≥ ½ − 1e-10 whenever 0 ≤ t ≤ this threshold;
    /// outside it the gap is only recorded.
    pub gap_assert_threshold: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            series: SeriesOptions::default(),
            keep_history: true,
            gap_assert_threshold: 0.05,
        }
    }
}

/// The complete product of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub final_table: PotentialTable,
    pub records: Vec<StepRecord>,
    /// One snapshot per step when history is kept (empty otherwise).
    pub history: Vec<StepSnapshot>,
}

/// Execute the full step loop over every rectangle of the lattice.
pub fn run(
    lattice: &LatticeSpec,
    data: &InitialData,
    t: f64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let mut table = crate::model::initial_table(lattice, data, t)?;
    let mut records = Vec::new();
    let mut history = Vec::new();
    for (ordinal, rect) in step_sequence(lattice).into_iter().enumerate() {
        let started = Instant::now();
        let g = build_g(&rect, &table)?;
        let e = ground_energy(&g)?;
        let v = table.get_or_zero(&rect);
        let series = lie_schwinger_series(&g, e, &v, t, &opts.series)?;
        if (0.0..=opts.gap_assert_threshold).contains(&t) && series.gap < 0.5 - 1e-10 {
            return Err(Error::GapCollapse {
                gap: series.gap,
                floor: 0.5,
                step: rect.label(),
            });
        }
        let new_table = update_potentials(&rect, &table, &series, &opts.series)?;
        let mut weighted_norms = Vec::new();
        for (key, entry) in &new_table.entries {
            weighted_norms.push((key.clone(), weighted_norm(entry, key, &data.basis)?));
        }
        records.push(StepRecord {
            step: rect.clone(),
            ordinal,
            energy: e,
            gap: series.gap,
            terms_used: series.terms_used,
            converged: series.converged,
            tail_estimate: series.tail_estimate,
            weighted_norms,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if opts.keep_history {
            history.push(StepSnapshot {
                step: rect.clone(),
                table_before: table.clone(),
                g,
                series,
            });
        } else {
            history.clear();
        }
        table = new_table;
    }
    Ok(RunOutput {
        final_table: table,
        records,
        history,
    })
}

/// Reassemble the global Hamiltonian from a table:
/// Σ single-site entries + t · Σ interaction entries, each embedded.
pub fn reconstruct(table: &PotentialTable) -> Result<GlobalOperator> {
    let mut terms = Vec::new();
    for (key, entry) in &table.entries {
        if key.circumference() == 0 {
            terms.push(entry.clone());
        } else {
            terms.push(LocalOperator {
                support: entry.support.clone(),
                matrix: &entry.matrix * cf(table.t),
                hermitian: entry.hermitian,
            });
        }
    }
    let global = GlobalOperator {
        lattice: table.lattice,
        site_dim: table.site_dim,
        repr: GlobalRepr::Terms(terms),
    };
    if global.dim() <= crate::verify::DENSE_THRESHOLD {
        let dense = global.to_dense()?;
        Ok(GlobalOperator {
            lattice: table.lattice,
            site_dim: table.site_dim,
            repr: GlobalRepr::Dense(dense),
        })
    } else {
        Ok(global)
    }
}
