//! Artifact persistence and experiment orchestration.
//!
//! Every file is written atomically (temp file in the same directory, then
//! rename). Step records and verification reports are deterministic byte
//! streams for a fixed config + seed; wall-clock data lives only in the
//! manifest. Exit codes: 0 all selected checks pass, 1 a check failed or
//! the run aborted (partial artifacts remain), 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lls_core::algorithm::{run, RunOutput, StepRecord};
use lls_core::lattice::LatticeSpec;
use lls_core::model::InitialData;
use lls_core::verify::{t_scan, verify_run, ScanReport, VerificationReport};

use crate::config::RunConfig;

/// Version stamp on every serialized artifact line/object.
pub const SCHEMA_VERSION: u32 = 1;

/// Artifact file names inside the output directory.
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const VERIFICATION_FILE: &str = "verification.json";
pub const RECHECK_FILE: &str = "verification_recheck.json";
pub const TABLES_FILE: &str = "tables.json";
pub const SPECTRA_FILE: &str = "spectra.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const GAP_CSV: &str = "gap_vs_step.csv";
pub const NORM_CSV: &str = "norm_vs_circumference.csv";
pub const SCAN_FILE: &str = "scan.json";
pub const SCAN_CSV: &str = "scan_frontier.csv";

/// Write-temp-then-rename; the rename is atomic on POSIX filesystems.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Index entry for one step record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepIndexEntry {
    pub ordinal: usize,
    pub step: String,
    /// 1-based line number inside the step-record file.
    pub line: usize,
}

/// Pass/fail roll-up copied into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub n_passed: usize,
    pub n_failed: usize,
    pub passed: bool,
}

/// Everything about a finished (or aborted) experiment except the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    /// The only timestamps in any artifact live here.
    pub created_unix_seconds: u64,
    pub wall_seconds: f64,
    /// "complete" or "error".
    pub status: String,
    pub error: Option<String>,
    pub step_record_file: String,
    pub steps: Vec<StepIndexEntry>,
    pub verification: Option<VerificationSummary>,
}

impl RunManifest {
    fn new(config_hash: String) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            created_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds: 0.0,
            status: "error".into(),
            error: None,
            step_record_file: STEPS_FILE.into(),
            steps: Vec::new(),
            verification: None,
        }
    }
}

#[derive(Serialize)]
struct StepLine<'a> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a StepRecord,
}

/// One step per line, each tagged with the schema version.
fn render_steps(records: &[StepRecord]) -> anyhow::Result<String> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(&StepLine {
            schema_version: SCHEMA_VERSION,
            record,
        })?);
        out.push('\n');
    }
    Ok(out)
}

fn step_index(records: &[StepRecord]) -> Vec<StepIndexEntry> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| StepIndexEntry {
            ordinal: r.ordinal,
            step: r.step.label(),
            line: i + 1,
        })
        .collect()
}

fn max_weighted_norm(record: &StepRecord) -> f64 {
    record
        .weighted_norms
        .iter()
        .fold(0.0f64, |acc, (_, n)| acc.max(*n))
}

/// Summary CSV: per step, the gap, the largest table-entry weighted norm,
/// and how many step-scoped checks (name contains the step label) passed.
fn render_summary_csv(records: &[StepRecord], report: &VerificationReport) -> String {
    let mut out = String::from("step_index,step,gap,max_weighted_norm,pass_count\n");
    for r in records {
        let label = r.step.label();
        let passes = report
            .checks
            .iter()
            .filter(|c| c.passed && c.name.contains(&label))
            .count();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.ordinal,
            label,
            r.gap,
            max_weighted_norm(r),
            passes
        ));
    }
    out
}

fn render_gap_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step_index,step,gap,energy\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.ordinal, r.step.label(), r.gap, r.energy));
    }
    out
}

/// Largest weighted norm per circumference class in the final table.
fn render_norm_csv(records: &[StepRecord]) -> String {
    let mut by_circ: std::collections::BTreeMap<usize, f64> = Default::default();
    if let Some(last) = records.last() {
        for (key, norm) in &last.weighted_norms {
            let c = key.circumference();
            let slot = by_circ.entry(c).or_insert(0.0);
            *slot = slot.max(*norm);
        }
    }
    let mut out = String::from("circumference,max_weighted_norm\n");
    for (c, n) in by_circ {
        out.push_str(&format!("{c},{n}\n"));
    }
    out
}

fn render_scan_csv(scan: &ScanReport) -> String {
    let mut out = String::from("t,passed,n_failed,first_failure\n");
    for e in &scan.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.t,
            e.passed,
            e.n_failed,
            e.first_failure.as_deref().unwrap_or("")
        ));
    }
    out.push_str(&format!(
        "frontier,{},,\n",
        scan.frontier.map_or(String::from("none"), |f| f.to_string())
    ));
    out
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> anyhow::Result<()> {
    write_atomic(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)?.as_bytes(),
    )
}

fn abort(dir: &Path, mut manifest: RunManifest, started: Instant, err: anyhow::Error) -> i32 {
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.error = Some(format!("{err:#}"));
    if let Err(write_err) = write_manifest(dir, &manifest) {
        eprintln!("error: could not persist manifest: {write_err:#}");
    }
    eprintln!("error: {err:#}");
    1
}

/// Execute one run end to end; returns the process exit code.
pub fn run_experiment(cfg: &RunConfig, dir: &Path) -> anyhow::Result<i32> {
    let lattice = cfg.validate().map_err(ConfigError)?;
    let t = cfg
        .t
        .ok_or_else(|| ConfigError(anyhow::anyhow!("`run` needs `t` (or --t)")))?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.canonical_json().as_bytes())?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(cfg.hash());

    let data = match InitialData::new(&lattice, &cfg.model) {
        Ok(d) => d,
        Err(e) => return Ok(abort(dir, manifest, started, e.into())),
    };
    let out = match run(&lattice, &data, t, &cfg.run_options()) {
        Ok(o) => o,
        Err(e) => return Ok(abort(dir, manifest, started, e.into())),
    };
    write_atomic(&dir.join(STEPS_FILE), render_steps(&out.records)?.as_bytes())?;
    manifest.steps = step_index(&out.records);

    let report = match verify_run(&lattice, &data, t, &out, &cfg.verification_options()) {
        Ok(r) => r,
        Err(e) => return Ok(abort(dir, manifest, started, e.into())),
    };
    persist_verification(dir, &out, &report)?;
    if cfg.output.keep_tables || cfg.output.debug_dump {
        write_atomic(&dir.join(TABLES_FILE), serde_json::to_string(&out)?.as_bytes())?;
    }
    if cfg.output.debug_dump {
        let spectra = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "spectrum_original": report.oracle.spectrum_original,
            "spectrum_final": report.oracle.spectrum_final,
        });
        write_atomic(&dir.join(SPECTRA_FILE), spectra.to_string().as_bytes())?;
    }

    manifest.status = "complete".into();
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.verification = Some(VerificationSummary {
        n_passed: report.n_passed,
        n_failed: report.n_failed,
        passed: report.passed,
    });
    write_manifest(dir, &manifest)?;
    println!(
        "run complete: {} steps, {} checks passed, {} failed → {}",
        manifest.steps.len(),
        report.n_passed,
        report.n_failed,
        if report.passed { "PASS" } else { "FAIL" }
    );
    for check in report.checks.iter().filter(|c| !c.passed) {
        println!("  FAIL {} (lhs {:.6e} > rhs {:.6e})", check.name, check.lhs, check.rhs);
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn persist_verification(
    dir: &Path,
    out: &RunOutput,
    report: &VerificationReport,
) -> anyhow::Result<()> {
    write_atomic(
        &dir.join(VERIFICATION_FILE),
        render_verification(report)?.as_bytes(),
    )?;
    write_atomic(
        &dir.join(SUMMARY_CSV),
        render_summary_csv(&out.records, report).as_bytes(),
    )?;
    write_atomic(&dir.join(GAP_CSV), render_gap_csv(&out.records).as_bytes())?;
    write_atomic(&dir.join(NORM_CSV), render_norm_csv(&out.records).as_bytes())?;
    Ok(())
}

/// The canonical byte form of a verification report.
pub fn render_verification(report: &VerificationReport) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Scan over the config's coupling grid; returns the process exit code.
pub fn scan_experiment(cfg: &RunConfig, dir: &Path) -> anyhow::Result<i32> {
    let lattice = cfg.validate().map_err(ConfigError)?;
    let grid = match (&cfg.t_grid, cfg.t) {
        (Some(g), _) => g.clone(),
        (None, Some(t)) => vec![t],
        (None, None) => {
            return Err(ConfigError(anyhow::anyhow!("`scan` needs `t_grid` (or `t`)")).into())
        }
    };
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.canonical_json().as_bytes())?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(cfg.hash());

    let scan = match t_scan(
        &lattice,
        &cfg.model,
        &grid,
        &cfg.run_options(),
        &cfg.verification_options(),
    ) {
        Ok(s) => s,
        Err(e) => return Ok(abort(dir, manifest, started, e.into())),
    };
    write_atomic(&dir.join(SCAN_FILE), serde_json::to_string_pretty(&scan)?.as_bytes())?;
    write_atomic(&dir.join(SCAN_CSV), render_scan_csv(&scan).as_bytes())?;

    let all_passed = scan.entries.iter().all(|e| e.passed);
    manifest.status = "complete".into();
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.verification = Some(VerificationSummary {
        n_passed: scan.entries.iter().filter(|e| e.passed).count(),
        n_failed: scan.entries.iter().filter(|e| !e.passed).count(),
        passed: all_passed,
    });
    write_manifest(dir, &manifest)?;
    println!(
        "scan complete: {} grid points, frontier = {}",
        scan.entries.len(),
        scan.frontier.map_or(String::from("none"), |f| f.to_string())
    );
    Ok(if all_passed { 0 } else { 1 })
}

/// Re-run verification against persisted tables (no step-loop recomputation)
/// and compare byte-for-byte with the stored report.
pub fn verify_artifacts(dir: &Path) -> anyhow::Result<i32> {
    let cfg: RunConfig = serde_json::from_str(
        &fs::read_to_string(dir.join(CONFIG_FILE))
            .with_context(|| format!("no {} in {}", CONFIG_FILE, dir.display()))?,
    )
    .map_err(|e| ConfigError(e.into()))?;
    let lattice = cfg.validate().map_err(ConfigError)?;
    let t = cfg
        .t
        .ok_or_else(|| ConfigError(anyhow::anyhow!("persisted config lacks `t`")))?;
    let tables_path = dir.join(TABLES_FILE);
    if !tables_path.exists() {
        return Err(ConfigError(anyhow::anyhow!(
            "{} is missing — re-run with output.keep_tables = true (or --debug-dump)",
            tables_path.display()
        ))
        .into());
    }
    let out: RunOutput = serde_json::from_str(&fs::read_to_string(&tables_path)?)?;
    let data = InitialData::new(&lattice, &cfg.model)?;
    let report = verify_run(&lattice, &data, t, &out, &cfg.verification_options())?;
    let rendered = render_verification(&report)?;
    write_atomic(&dir.join(RECHECK_FILE), rendered.as_bytes())?;
    let stored = fs::read_to_string(dir.join(VERIFICATION_FILE)).unwrap_or_default();
    let identical = stored == rendered;
    println!(
        "recheck: {} passed, {} failed → {}; report {} the stored one",
        report.n_passed,
        report.n_failed,
        if report.passed { "PASS" } else { "FAIL" },
        if identical { "matches" } else { "DIFFERS from" }
    );
    Ok(if report.passed && identical { 0 } else { 1 })
}

/// Count translation-equivalence classes of rectangles (shape vectors k
/// with Σ k_j = l), realized by enumeration on an l+1 lattice.
pub fn count_shapes(d: usize, l: usize) -> anyhow::Result<usize> {
    let lattice = LatticeSpec::new(d, l + 2)?;
    let mut shapes: std::collections::BTreeSet<Vec<usize>> = Default::default();
    for r in lls_core::lattice::enumerate_rectangles(&lattice, Some(&|r| r.circumference() == l)) {
        shapes.insert(r.k.clone());
    }
    Ok(shapes.len())
}

/// Wrapper distinguishing configuration errors (exit 2) from runtime errors.
#[derive(Debug)]
pub struct ConfigError(pub anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Resolve output directory precedence: flag > config.
pub fn resolve_out_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.directory.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_count_matches_compositions() {
        // Number of k ∈ ℕ₀^d with Σk = l is C(l+d−1, d−1).
        assert_eq!(count_shapes(2, 3).unwrap(), 4);
        assert_eq!(count_shapes(1, 4).unwrap(), 1);
        assert_eq!(count_shapes(3, 2).unwrap(), 6);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("lls-atomic-{}", std::process::id()));
        let path = dir.join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_extension("tmp").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
