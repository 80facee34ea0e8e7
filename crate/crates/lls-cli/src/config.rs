//! Run configuration: one TOML file, validated ranges, a hard dimension cap.
//!
//! The config is re-serialized to canonical JSON before hashing, so the
//! manifest hash is stable under whitespace/key-order changes in the TOML
//! source. The only environment override honored anywhere is the output
//! directory (`--out`); everything else lives in the file or explicit flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use lls_core::algorithm::{RunOptions, SeriesOptions};
use lls_core::lattice::LatticeSpec;
use lls_core::model::ModelSpec;
use lls_core::verify::{SuiteSelection, VerificationOptions};

/// Default hard cap on the full Hilbert-space dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 1 << 16;

/// Lattice geometry section.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatticeSection {
    /// Spatial dimension d ≥ 1.
    pub d: usize,
    /// Sites per side N ≥ 2.
    #[serde(alias = "N")]
    pub n: usize,
}

/// Series solver knobs; every field optional, defaults match the library.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesSection {
    pub j_max: Option<usize>,
    pub tail_tol: Option<f64>,
    pub gap_floor: Option<f64>,
}

impl SeriesSection {
    /// Merge onto the library defaults.
    pub fn to_options(self) -> SeriesOptions {
        let mut opts = SeriesOptions::default();
        if let Some(j) = self.j_max {
            opts.j_max = j;
        }
        if let Some(tol) = self.tail_tol {
            opts.tail_tol = tol;
        }
        if let Some(floor) = self.gap_floor {
            opts.gap_floor = floor;
        }
        opts
    }
}

/// Artifact emission controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    /// Directory all artifacts are written into (created if absent).
    pub directory: PathBuf,
    /// Also dump oracle spectra; implies `keep_tables`.
    pub debug_dump: bool,
    /// Persist the full run output (tables, generators, series) so
    /// `verify` can re-check without re-running the step loop.
    pub keep_tables: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            debug_dump: false,
            keep_tables: false,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub model: ModelSpec,
    /// Coupling for a single run (exactly one of `t` / `t_grid` for `run`
    /// / `scan` respectively; `--t` overrides).
    pub t: Option<f64>,
    /// Coupling grid for `scan`.
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub series: SeriesSection,
    /// Which verification suites run (all by default).
    #[serde(default)]
    pub checks: SuiteSelection,
    #[serde(default)]
    pub output: OutputSection,
    /// Seed for the randomized form-bound vectors.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Hard cap on the full Hilbert-space dimension.
    #[serde(default = "default_dimension_cap")]
    pub max_dimension: usize,
}

fn default_seed() -> u64 {
    7
}

fn default_dimension_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

impl RunConfig {
    /// Parse from TOML text.
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Range-check every field and the total Hilbert dimension.
    pub fn validate(&self) -> anyhow::Result<LatticeSpec> {
        let lattice = LatticeSpec::new(self.lattice.d, self.lattice.n)
            .map_err(|e| anyhow::anyhow!("lattice: {e}"))?;
        if self.lattice.d > 3 {
            anyhow::bail!("lattice: d = {} exceeds the supported range 1..=3", self.lattice.d);
        }
        self.model
            .validate()
            .map_err(|e| anyhow::anyhow!("model: {e}"))?;
        check_dimension(&lattice, self.model.n_s, self.max_dimension)?;
        if let Some(t) = self.t {
            check_coupling("t", t)?;
        }
        if let Some(grid) = &self.t_grid {
            if grid.is_empty() {
                anyhow::bail!("t_grid must be non-empty");
            }
            for &t in grid {
                check_coupling("t_grid entry", t)?;
            }
        }
        let series = self.series.to_options();
        if series.j_max == 0 || series.j_max > 200 {
            anyhow::bail!("series.j_max must lie in 1..=200");
        }
        if !(series.tail_tol > 0.0 && series.tail_tol < 1e-3) {
            anyhow::bail!("series.tail_tol must lie in (0, 1e-3)");
        }
        if !(series.gap_floor > 0.0 && series.gap_floor <= 0.5) {
            anyhow::bail!("series.gap_floor must lie in (0, 0.5]");
        }
        Ok(lattice)
    }

    /// Library run options for this config.
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            series: self.series.to_options(),
            ..RunOptions::default()
        }
    }

    /// Library verification options for this config.
    pub fn verification_options(&self) -> VerificationOptions {
        VerificationOptions {
            seed: self.seed,
            suites: self.checks,
            ..VerificationOptions::default()
        }
    }

    /// Canonical JSON form: the hashing and persistence format.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON, hex-encoded.
    pub fn hash(&self) -> String {
        fnv1a64(self.canonical_json().as_bytes())
    }
}

fn check_coupling(name: &str, t: f64) -> anyhow::Result<()> {
    if !(t.is_finite() && (0.0..1.0).contains(&t)) {
        anyhow::bail!("{name} = {t} must lie in [0, 1)");
    }
    Ok(())
}

/// Full Hilbert dimension n_s^(N^d), rejecting anything over the cap.
pub fn check_dimension(lattice: &LatticeSpec, n_s: usize, cap: usize) -> anyhow::Result<usize> {
    let sites = lattice.site_count();
    let mut dim: usize = 1;
    for _ in 0..sites {
        dim = dim
            .checked_mul(n_s)
            .filter(|&d| d <= cap)
            .ok_or_else(|| {
                anyhow::anyhow!(
                    "Hilbert dimension {n_s}^{sites} exceeds the hard cap {cap}"
                )
            })?;
    }
    Ok(dim)
}

/// FNV-1a 64-bit hash, hex-encoded (stable, dependency-free).
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// The documented schema, printed by `dump-config-schema`.
pub const CONFIG_SCHEMA: &str = r#"# Run configuration schema (TOML). All artifact paths are relative to
# output.directory. Exactly one of `t` (for `run`) / `t_grid` (for `scan`)
# is required unless overridden with --t.

seed = 7                 # u64; seeds the randomized form-bound vectors
max_dimension = 65536    # hard cap on the full Hilbert-space dimension
t = 0.02                 # coupling in [0, 1); used by `run`
# t_grid = [0.005, 0.01, 0.02]   # coupling grid; used by `scan`

[lattice]
d = 2                    # spatial dimension, 1..=3
n = 2                    # sites per side, >= 2 (alias: N)

[model]
kind = "harmonic_phi4"   # or "custom_diagonal" (then h_diag, coupling_diag)
n_s = 4                  # site truncation dimension, >= 2
oscillator_basis_size = 60      # ladder basis before truncation
coupling_normalization = 0.5    # target weighted norm of the bond, (0, 1]

[series]                 # optional; defaults shown
j_max = 24               # 1..=200
tail_tol = 1e-13         # (0, 1e-3)
gap_floor = 0.25         # (0, 0.5]

[checks]                 # optional; all true by default
theorem_main = true
gap_lemma = true
norm_decay = true        # the per-key decay bounds; see README on ranges
explicit_constants = true
form_bound = true

[output]                 # optional
directory = "out"        # artifact directory
debug_dump = false       # also dump oracle spectra; implies keep_tables
keep_tables = false      # persist full tables so `verify` skips the run
"#;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        t = 0.0
        [lattice]
        d = 1
        n = 2
        [model]
        kind = "harmonic_phi4"
        n_s = 2
    "#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.max_dimension, DEFAULT_DIMENSION_CAP);
        assert_eq!(cfg.model.oscillator_basis_size, 60);
        assert!(cfg.checks.norm_decay);
    }

    #[test]
    fn hash_is_stable_under_reserialization() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let reparsed: RunConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg.hash(), reparsed.hash());
        // And under TOML cosmetics.
        let shuffled = r#"
            [model]
            n_s = 2
            kind = "harmonic_phi4"
            [lattice]
            n = 2
            d = 1
        "#;
        let mut other = RunConfig::from_toml(shuffled).unwrap();
        other.t = Some(0.0);
        assert_eq!(cfg.hash(), other.hash());
    }

    #[test]
    fn bad_configs_are_rejected_with_pointed_messages() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.lattice.n = 1;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("lattice"), "{msg}");

        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.t = Some(1.5);
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.lattice = LatticeSection { d: 2, n: 5 };
        cfg.model.n_s = 4; // 4^25 blows the cap
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("hard cap"), "{msg}");
    }

    #[test]
    fn schema_round_trips_through_the_parser() {
        let cfg = RunConfig::from_toml(CONFIG_SCHEMA).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lattice.d, 2);
        assert_eq!(cfg.model.n_s, 4);
        assert_eq!(cfg.t, Some(0.02));
    }
}
