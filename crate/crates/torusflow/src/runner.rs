//! Configuration, hashing, persistence and the CLI entry point.
//!
//! A run is fully determined by `(RunConfig, seed)`: the config is a
//! versioned TOML tree (unknown keys are hard errors), its canonical
//! serialization is hashed with SHA-256, and every output file carries
//! that hash. Exit codes: 0 ok, 1 configuration error, 2 numerical
//! failure.

use crate::dispersionless::{lil_statistics, period, return_time};
use crate::energy::{
    chain_identity_check, commutator_decomposition, dt_energy_rhs, energy_breakdown,
    fd_dt_energy, SIGN_CONVENTION,
};
use crate::estimates::{
    chaos_moment_growth, convolution_sum, partition_function, transport_diagnostic,
    ChaosFunctional, EventCondition, EventDescriptor,
};
use crate::flow::{evolve, FlowConfig, Scheme};
use crate::gaussian::{sample_indexed, MeasureSpec, Variant};
use crate::lp::DyadicSystem;
use crate::spectral::PhasePair;
use crate::varbound::{optimize_drift, DriftFamily};
use crate::{Result, TfError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub measure: MeasureSpec,
    #[serde(default)]
    pub sample: SampleCfg,
    #[serde(default)]
    pub evolve: EvolveCfg,
    #[serde(default)]
    pub energy_check: CountCfg,
    #[serde(default)]
    pub dt_identity: DtIdentityCfg,
    #[serde(default)]
    pub commutator: CountCfg,
    #[serde(default)]
    pub chaos_moments: ChaosCfg,
    #[serde(default)]
    pub convolution: ConvolutionCfg,
    #[serde(default)]
    pub partition: PartitionCfg,
    #[serde(default)]
    pub transport: TransportCfg,
    #[serde(default)]
    pub varbound: VarboundCfg,
    #[serde(default)]
    pub dispersionless: DispersionlessCfg,
    #[serde(default)]
    pub lil: LilCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCfg {
    pub count: usize,
}
impl Default for SampleCfg {
    fn default() -> Self {
        SampleCfg { count: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveCfg {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub record_every: usize,
    /// Initial data: a measure sample scaled by this factor.
    pub amplitude: f64,
}
impl Default for EvolveCfg {
    fn default() -> Self {
        EvolveCfg {
            dt: 1e-3,
            t_final: 1.0,
            scheme: Scheme::StrangSplit,
            record_every: 100,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountCfg {
    pub count: usize,
}
impl Default for CountCfg {
    fn default() -> Self {
        CountCfg { count: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtIdentityCfg {
    pub count: usize,
    /// Base step for the Richardson finite difference.
    pub h: f64,
}
impl Default for DtIdentityCfg {
    fn default() -> Self {
        DtIdentityCfg { count: 20, h: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosCfg {
    pub functional: ChaosFunctional,
    pub p_list: Vec<u32>,
    pub samples: usize,
    pub eps: f64,
}
impl Default for ChaosCfg {
    fn default() -> Self {
        ChaosCfg {
            functional: ChaosFunctional::HolderU,
            p_list: vec![2, 4, 8],
            samples: 1000,
            eps: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvolutionCfg {
    pub points: Vec<[i32; 3]>,
    pub alpha: f64,
    pub beta: f64,
    pub m_cut: i64,
    pub eps: f64,
}
impl Default for ConvolutionCfg {
    fn default() -> Self {
        ConvolutionCfg {
            points: vec![[4, 0, 0], [16, 0, 0], [64, 0, 0]],
            alpha: 1.0,
            beta: 1.2,
            m_cut: 200,
            eps: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionCfg {
    pub samples: usize,
    /// Sweep block: one run record per cutoff, one summary table.
    pub n_values: Vec<u32>,
}
impl Default for PartitionCfg {
    fn default() -> Self {
        PartitionCfg {
            samples: 500,
            n_values: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportCfg {
    pub t: f64,
    pub samples: usize,
    pub dt: f64,
    pub event: EventDescriptor,
}
impl Default for TransportCfg {
    fn default() -> Self {
        TransportCfg {
            t: 0.5,
            samples: 500,
            dt: 1e-2,
            event: EventDescriptor {
                conditions: vec![EventCondition::PairWeighted { max: 45.0 }],
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarboundCfg {
    pub m_steps: usize,
    pub family: DriftFamily,
    pub iters: usize,
    pub batch: usize,
}
impl Default for VarboundCfg {
    fn default() -> Self {
        VarboundCfg {
            m_steps: 4,
            family: DriftFamily::PiecewiseStateFeedback,
            iters: 10,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionlessCfg {
    pub h0_values: Vec<f64>,
    pub k_values: Vec<u32>,
    pub tol: f64,
}
impl Default for DispersionlessCfg {
    fn default() -> Self {
        DispersionlessCfg {
            h0_values: vec![0.25, 1.0, 4.0],
            k_values: vec![3, 5],
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LilCfg {
    pub r: u32,
    pub samples: usize,
    /// Grid-unit lags, strictly decreasing.
    pub lags: Vec<usize>,
    pub m_grid: usize,
}
impl Default for LilCfg {
    fn default() -> Self {
        LilCfg {
            r: 0,
            samples: 1000,
            lags: vec![32, 16, 8, 4, 2],
            m_grid: 540,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubKind {
    Sample,
    Evolve,
    EnergyCheck,
    DtIdentity,
    Commutator,
    ChaosMoments,
    Convolution,
    Partition,
    Transport,
    Varbound,
    Dispersionless,
    Lil,
}

impl SubKind {
    pub fn name(self) -> &'static str {
        match self {
            SubKind::Sample => "sample",
            SubKind::Evolve => "evolve",
            SubKind::EnergyCheck => "energy-check",
            SubKind::DtIdentity => "dt-identity",
            SubKind::Commutator => "commutator",
            SubKind::ChaosMoments => "chaos-moments",
            SubKind::Convolution => "convolution",
            SubKind::Partition => "partition",
            SubKind::Transport => "transport",
            SubKind::Varbound => "varbound",
            SubKind::Dispersionless => "dispersionless",
            SubKind::Lil => "lil",
        }
    }
}

/// Built-in defaults tuned per subcommand so that every experiment runs
/// without a config file.
pub fn default_config(kind: SubKind) -> RunConfig {
    let measure = match kind {
        SubKind::DtIdentity | SubKind::EnergyCheck | SubKind::Commutator => MeasureSpec {
            d: 2,
            s: 2.7,
            k: 3,
            n: 16,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::Evolve => MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 32,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::ChaosMoments | SubKind::Convolution => MeasureSpec {
            d: 3,
            s: 2.6,
            k: 3,
            n: 32,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::Partition => MeasureSpec {
            d: 2,
            s: 2.6,
            k: 5,
            n: 64,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::Transport => MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 2,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::Varbound => MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 8,
            q: 1,
            variant: Variant::Nu,
        },
        SubKind::Lil => MeasureSpec {
            d: 2,
            s: 1.0,
            k: 3,
            n: 256,
            q: 1,
            variant: Variant::Mu,
        },
        _ => MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 16,
            q: 1,
            variant: Variant::Nu,
        },
    };
    RunConfig {
        version: CONFIG_VERSION,
        experiment: None,
        seed: 0,
        out: None,
        measure,
        sample: Default::default(),
        evolve: Default::default(),
        energy_check: Default::default(),
        dt_identity: Default::default(),
        commutator: Default::default(),
        chaos_moments: Default::default(),
        convolution: Default::default(),
        partition: Default::default(),
        transport: Default::default(),
        varbound: Default::default(),
        dispersionless: Default::default(),
        lil: Default::default(),
    }
}

/// Load the config (or defaults) and fold in CLI overrides; the hash is
/// taken after overrides so it identifies what actually ran.
pub fn load_config(
    kind: SubKind,
    path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| TfError::Config(format!("{}: {e}", p.display())))?
        }
        None => default_config(kind),
    };
    if cfg.version != CONFIG_VERSION {
        return Err(TfError::Config(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            cfg.version
        )));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = Some(o.to_path_buf());
    }
    cfg.measure.validate()?;
    Ok(cfg)
}

/// SHA-256 of the canonical (struct-ordered JSON) serialization.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(canon.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub code_version: String,
    pub subcommand: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub sign_convention: String,
    pub outputs: Vec<String>,
    pub summary: Value,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// CSV writer; every file starts with the config hash.
fn write_csv(path: &Path, hash: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash={hash}")?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn write_json(path: &Path, hash: &str, value: &Value) -> Result<()> {
    let wrapped = json!({ "config_hash": hash, "report": value });
    std::fs::write(path, serde_json::to_string_pretty(&wrapped).map_err(|e| TfError::Serde(e.to_string()))?)?;
    Ok(())
}

const FIELD_MAGIC: &[u8; 4] = b"TFLD";
const FIELD_VERSION: u32 = 1;

/// Versioned binary field-pair format: magic, version, config hash
/// (64 hex bytes), d, cutoff, then the `u` and `v` coefficients as
/// little-endian (re, im) doubles in the grid's lexicographic order.
pub fn write_field_pair(path: &Path, hash: &str, pair: &PhasePair) -> Result<()> {
    let grid = pair.grid();
    let mut buf = Vec::new();
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    buf.extend_from_slice(hash.as_bytes());
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&grid.cutoff().to_le_bytes());
    for f in [&pair.u, &pair.v] {
        for c in f.coeffs() {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_field_pair(path: &Path) -> Result<(PhasePair, String)> {
    let buf = std::fs::read(path)?;
    let fail = |m: &str| TfError::Serde(format!("{}: {m}", path.display()));
    if buf.len() < 76 || &buf[0..4] != FIELD_MAGIC {
        return Err(fail("not a field file"));
    }
    let ver = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if ver != FIELD_VERSION {
        return Err(fail("unsupported field format version"));
    }
    let hash = String::from_utf8(buf[8..72].to_vec()).map_err(|_| fail("bad hash"))?;
    let d = u32::from_le_bytes(buf[72..76].try_into().unwrap()) as usize;
    let cutoff = u32::from_le_bytes(buf[76..80].try_into().unwrap());
    let grid = crate::spectral::FrequencyGrid::new(d, cutoff);
    let need = 80 + 2 * grid.len() * 16;
    if buf.len() != need {
        return Err(fail("truncated field file"));
    }
    let mut pair = PhasePair::zero(grid.clone());
    let mut off = 80;
    for f in [&mut pair.u, &mut pair.v] {
        for c in f.coeffs_mut() {
            let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
            *c = num_complex::Complex64::new(re, im);
            off += 16;
        }
    }
    Ok((pair, hash))
}

/// Execute one experiment into `dir`; returns (summary, output paths).
pub fn execute(kind: SubKind, cfg: &RunConfig, dir: &Path) -> Result<(Value, Vec<PathBuf>)> {
    std::fs::create_dir_all(dir)?;
    let hash = config_hash(cfg);
    let spec = &cfg.measure;
    let seed = cfg.seed;
    match kind {
        SubKind::Sample => {
            let mut outputs = Vec::new();
            let mut norms = Vec::new();
            for i in 0..cfg.sample.count {
                let s = sample_indexed(spec, seed, i as u64);
                let path = dir.join(format!("sample_{i:04}.tfld"));
                write_field_pair(&path, &hash, &s.pair)?;
                let side = dir.join(format!("sample_{i:04}.json"));
                write_json(
                    &side,
                    &hash,
                    &json!({ "seed": seed, "sample_idx": i, "measure": spec }),
                )?;
                norms.push(crate::spectral::weighted_pair_norm_sq(&s.pair, spec.s).sqrt());
                outputs.push(path);
                outputs.push(side);
            }
            let (mean, se) = crate::quad::mean_and_se(&norms);
            Ok((
                json!({ "count": cfg.sample.count, "mean_weighted_norm": mean, "se": se }),
                outputs,
            ))
        }
        SubKind::Evolve => {
            let mut p0 = sample_indexed(spec, seed, 0).pair;
            p0.u.scale(cfg.evolve.amplitude);
            p0.v.scale(cfg.evolve.amplitude);
            let fc = FlowConfig {
                spec: *spec,
                dt: cfg.evolve.dt,
                scheme: cfg.evolve.scheme,
                t_final: cfg.evolve.t_final,
                record_every: cfg.evolve.record_every,
            };
            let traj = evolve(&p0, &fc)?;
            let rows: Vec<String> = traj
                .times
                .iter()
                .zip(&traj.hamiltonians)
                .zip(&traj.norms)
                .map(|((t, h), n)| format!("{t},{h},{n}"))
                .collect();
            let path = dir.join("trajectory.csv");
            write_csv(&path, &hash, "t,hamiltonian,pair_norm", &rows)?;
            let h0 = traj.hamiltonians.first().copied().unwrap_or(0.0);
            let drift = traj
                .hamiltonians
                .iter()
                .map(|h| (h - h0).abs())
                .fold(0.0f64, f64::max)
                / h0.abs().max(1e-300);
            Ok((
                json!({ "hamiltonian_rel_drift": drift, "steps": rows.len(), "sigma_monitor": traj.sigma_monitor }),
                vec![path],
            ))
        }
        SubKind::EnergyCheck => {
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for i in 0..cfg.energy_check.count {
                let pair = sample_indexed(spec, seed, i as u64).pair;
                let b = energy_breakdown(&pair, spec);
                let (r1, r2) = b.identity_residuals();
                let chain = chain_identity_check(&pair, spec);
                worst = worst.max(r1).max(r2).max(chain);
                rows.push(format!(
                    "{i},{},{},{},{},{r1},{r2},{chain}",
                    b.quadratic_part, b.wick_term, b.potential_term, b.renormalized
                ));
            }
            let path = dir.join("energy_check.csv");
            write_csv(
                &path,
                &hash,
                "sample,quadratic,wick,potential,renormalized,residual_r,residual_total,chain_residual",
                &rows,
            )?;
            Ok((json!({ "max_residual": worst, "count": cfg.energy_check.count }), vec![path]))
        }
        SubKind::DtIdentity => {
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for i in 0..cfg.dt_identity.count {
                let pair = sample_indexed(spec, seed, i as u64).pair;
                let rhs = dt_energy_rhs(&pair, spec);
                let fd = fd_dt_energy(&pair, spec, cfg.dt_identity.h)?;
                let rel = (fd - rhs).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
                rows.push(format!("{i},{rhs},{fd},{rel}"));
            }
            let path = dir.join("dt_identity.csv");
            write_csv(&path, &hash, "sample,analytic_rhs,fd_derivative,rel_residual", &rows)?;
            Ok((
                json!({ "max_rel_residual": worst, "count": cfg.dt_identity.count }),
                vec![path],
            ))
        }
        SubKind::Commutator => {
            let grid = spec.grid();
            let sys = DyadicSystem::new(grid.clone());
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for i in 0..cfg.commutator.count {
                let pair = sample_indexed(spec, seed, i as u64).pair;
                let parts = commutator_decomposition(&pair.v, &pair.u, spec.s, &sys);
                // Reconstruction: lhs - f1 - f2 - remainder is exact
                // bookkeeping; report its size against the lhs.
                let mut rec = parts.lhs.clone();
                rec.axpy(-1.0, &parts.f1);
                rec.axpy(-1.0, &parts.f2);
                rec.axpy(-1.0, &parts.remainder);
                let res = (rec.l2_norm_sq() / parts.lhs.l2_norm_sq().max(1e-300)).sqrt();
                worst = worst.max(res);
                rows.push(format!(
                    "{i},{},{},{},{res}",
                    parts.lhs.l2_norm_sq().sqrt(),
                    parts.f1.l2_norm_sq().sqrt(),
                    parts.remainder.l2_norm_sq().sqrt()
                ));
            }
            let path = dir.join("commutator.csv");
            write_csv(&path, &hash, "sample,lhs_l2,f1_l2,remainder_l2,reconstruction_rel", &rows)?;
            Ok((json!({ "max_reconstruction_rel": worst }), vec![path]))
        }
        SubKind::ChaosMoments => {
            let c = &cfg.chaos_moments;
            let report = chaos_moment_growth(spec, c.functional, &c.p_list, c.samples, seed, c.eps)?;
            let rows: Vec<String> = report
                .p_list
                .iter()
                .zip(report.centered.iter().zip(&report.raw))
                .map(|(p, (cm, rm))| {
                    format!("{p},{},{},{},{}", cm.mean, cm.std_error, rm.mean, rm.std_error)
                })
                .collect();
            let csv = dir.join("moments.csv");
            write_csv(&csv, &hash, "p,centered,centered_se,raw,raw_se", &rows)?;
            let js = dir.join("chaos_report.json");
            write_json(&js, &hash, &serde_json::to_value(&report).map_err(|e| TfError::Serde(e.to_string()))?)?;
            Ok((
                json!({
                    "fitted_exponent": report.fitted_exponent,
                    "fitted_exponent_raw": report.fitted_exponent_raw,
                    "l2_mc": report.l2_mc.mean,
                    "l2_exact": report.l2_exact,
                }),
                vec![csv, js],
            ))
        }
        SubKind::Convolution => {
            let c = &cfg.convolution;
            let mut rows = Vec::new();
            let mut ratios = Vec::new();
            for n in &c.points {
                let r = convolution_sum(*n, c.alpha, c.beta, c.m_cut, c.eps)?;
                ratios.push(r.bound_ratio);
                rows.push(format!(
                    "{};{};{},{},{},{}",
                    n[0], n[1], n[2], r.cube_sum, r.tail_bound, r.bound_ratio
                ));
            }
            let path = dir.join("convolution.csv");
            write_csv(&path, &hash, "n,cube_sum,tail_bound,bound_ratio", &rows)?;
            let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
            Ok((json!({ "max_bound_ratio": max_ratio }), vec![path]))
        }
        SubKind::Partition => {
            let c = &cfg.partition;
            let report = partition_function(spec, c.samples, &c.n_values, seed)?;
            let mut rows = Vec::new();
            let mut records = Vec::new();
            for (j, n) in report.n_list.iter().enumerate() {
                let lz = &report.log_z[j];
                let lp = report.lp_log_norms[j];
                let jen = &report.jensen_rhs[j];
                rows.push(format!(
                    "{n},{},{},{},{},{},{},{}",
                    lz.mean, lz.std_error, lp[0], lp[1], lp[2], jen.mean, jen.std_error
                ));
                // One record per sweep point.
                let rec = dir.join(format!("partition_n{n}.json"));
                write_json(
                    &rec,
                    &hash,
                    &json!({ "n": n, "log_z": lz, "lp_log_norms": lp, "jensen_rhs": jen }),
                )?;
                records.push(rec);
            }
            let table = dir.join("partition_summary.csv");
            write_csv(
                &table,
                &hash,
                "n,log_z,log_z_se,log_l1,log_l2,log_l4,jensen_rhs,jensen_se",
                &rows,
            )?;
            let mut outputs = vec![table];
            outputs.extend(records);
            Ok((
                json!({
                    "log_z": report.log_z.iter().map(|e| e.mean).collect::<Vec<_>>(),
                    "l2_diffs": report.l2_diffs,
                }),
                outputs,
            ))
        }
        SubKind::Transport => {
            let c = &cfg.transport;
            let report = transport_diagnostic(spec, &c.event, c.t, c.samples, seed, c.dt)?;
            let path = dir.join("transport.json");
            write_json(&path, &hash, &serde_json::to_value(&report).map_err(|e| TfError::Serde(e.to_string()))?)?;
            Ok((
                json!({
                    "rho_flow_forward": report.rho_flow_forward.mean,
                    "rho_flow_cov": report.rho_flow_cov.mean,
                    "agreement_sigma": report.agreement_sigma,
                    "rare_event": report.rare_event,
                }),
                vec![path],
            ))
        }
        SubKind::Varbound => {
            let c = &cfg.varbound;
            let out = optimize_drift(spec, c.m_steps, c.family, c.iters, c.batch, seed)?;
            let rows: Vec<String> = out
                .trace
                .iter()
                .map(|(it, m, se)| format!("{it},{m},{se}"))
                .collect();
            let trace = dir.join("varbound_trace.csv");
            write_csv(&trace, &hash, "iter,bound,std_error", &rows)?;
            let js = dir.join("varbound.json");
            write_json(&js, &hash, &serde_json::to_value(&out).map_err(|e| TfError::Serde(e.to_string()))?)?;
            Ok((
                json!({
                    "bound": out.bound.mean,
                    "bound_se": out.bound.std_error,
                    "zero_drift": out.zero_drift.mean,
                }),
                vec![trace, js],
            ))
        }
        SubKind::Dispersionless => {
            let c = &cfg.dispersionless;
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for &k in &c.k_values {
                for &h0 in &c.h0_values {
                    let tq = period(h0, k)?;
                    let to = return_time(h0, k, c.tol)?;
                    let rel = (tq - to).abs() / to;
                    worst = worst.max(rel);
                    rows.push(format!("{k},{h0},{tq},{to},{rel}"));
                }
            }
            let path = dir.join("periods.csv");
            write_csv(&path, &hash, "k,h0,period_quadrature,period_ode,rel_diff", &rows)?;
            Ok((json!({ "max_rel_diff": worst }), vec![path]))
        }
        SubKind::Lil => {
            let c = &cfg.lil;
            let report = lil_statistics(spec, c.r, c.samples, &c.lags, c.m_grid, seed)?;
            let rows: Vec<String> = report
                .h_grid
                .iter()
                .zip(&report.mean_log_max)
                .map(|(h, m)| format!("{h},{m}"))
                .collect();
            let path = dir.join("lil.csv");
            write_csv(&path, &hash, "h,mean_log_max_increment", &rows)?;
            Ok((
                json!({
                    "fitted_exponent": report.fitted_exponent,
                    "theory_exponent": report.theory_exponent,
                }),
                vec![path],
            ))
        }
    }
}

/// Run one subcommand end to end: resolve config, execute, and persist
/// the run record.
pub fn run(kind: SubKind, cfg: &RunConfig) -> Result<RunRecord> {
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", kind.name())));
    let hash = config_hash(cfg);
    let started = now_unix();
    let (summary, outputs) = execute(kind, cfg, &dir)?;
    let record = RunRecord {
        config_hash: hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: kind.name().to_string(),
        started_unix: started,
        finished_unix: now_unix(),
        sign_convention: SIGN_CONVENTION.to_string(),
        outputs: outputs
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect(),
        summary,
    };
    let rec_path = dir.join("run_record.json");
    std::fs::write(
        &rec_path,
        serde_json::to_string_pretty(&record).map_err(|e| TfError::Serde(e.to_string()))?,
    )?;
    Ok(record)
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Draw Gaussian samples and persist the fields.
    Sample(CommonArgs),
    /// Integrate the truncated flow and record conservation diagnostics.
    Evolve(CommonArgs),
    /// Renormalized-energy breakdown identities on random samples.
    EnergyCheck(CommonArgs),
    /// Finite-difference check of the energy time-derivative identity.
    DtIdentity(CommonArgs),
    /// Paraproduct commutator decomposition residuals.
    Commutator(CommonArgs),
    /// Moment growth of norm functionals under the measure.
    ChaosMoments(CommonArgs),
    /// Brute-force convolution sums with tail bounds.
    Convolution(CommonArgs),
    /// Log-space partition function across a cutoff ladder.
    Partition(CommonArgs),
    /// Dual transport estimators for flowed events.
    Transport(CommonArgs),
    /// Variational drift-optimization bound on -log Z.
    Varbound(CommonArgs),
    /// Dispersionless ODE period/return-time tables.
    Dispersionless(CommonArgs),
    /// Law-of-iterated-logarithm increment statistics.
    Lil(CommonArgs),
}

impl Cmd {
    pub fn split(&self) -> (SubKind, &CommonArgs) {
        match self {
            Cmd::Sample(a) => (SubKind::Sample, a),
            Cmd::Evolve(a) => (SubKind::Evolve, a),
            Cmd::EnergyCheck(a) => (SubKind::EnergyCheck, a),
            Cmd::DtIdentity(a) => (SubKind::DtIdentity, a),
            Cmd::Commutator(a) => (SubKind::Commutator, a),
            Cmd::ChaosMoments(a) => (SubKind::ChaosMoments, a),
            Cmd::Convolution(a) => (SubKind::Convolution, a),
            Cmd::Partition(a) => (SubKind::Partition, a),
            Cmd::Transport(a) => (SubKind::Transport, a),
            Cmd::Varbound(a) => (SubKind::Varbound, a),
            Cmd::Dispersionless(a) => (SubKind::Dispersionless, a),
            Cmd::Lil(a) => (SubKind::Lil, a),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "torusflow", version, about = "Spectral experiments on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

/// CLI entry; returns the process exit code (0 ok / 1 config / 2 numerical).
pub fn main_entry() -> i32 {
    crate::parallel::configure_threads();
    let cli = Cli::parse();
    let (kind, args) = cli.cmd.split();
    let cfg = match load_config(kind, args.config.as_deref(), args.seed, args.out.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run(kind, &cfg) {
        Ok(rec) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&rec.summary).unwrap_or_default()
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                TfError::Numerical(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = default_config(SubKind::Sample);
        let b = default_config(SubKind::Sample);
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = default_config(SubKind::Sample);
        c.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "version = 1\nnot_a_key = 3\n[measure]\nd = 2\ns = 2.6\nk = 3\nn = 4\nq = 1\nvariant = \"nu\"\n",
        )
        .unwrap();
        assert!(load_config(SubKind::Sample, Some(&path), None, None).is_err());
    }

    #[test]
    fn config_roundtrip_toml() {
        let cfg = default_config(SubKind::Partition);
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config_hash(&cfg), config_hash(&back));
    }

    #[test]
    fn field_pair_roundtrip() {
        let cfg = default_config(SubKind::Transport);
        let pair = sample_indexed(&cfg.measure, 5, 0).pair;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tfld");
        write_field_pair(&path, &config_hash(&cfg), &pair).unwrap();
        let (back, hash) = read_field_pair(&path).unwrap();
        assert_eq!(hash, config_hash(&cfg));
        for (a, b) in pair.u.coeffs().iter().zip(back.u.coeffs()) {
            assert_eq!(a, b);
        }
        for (a, b) in pair.v.coeffs().iter().zip(back.v.coeffs()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let mut cfg = default_config(SubKind::DtIdentity);
        cfg.measure.n = 4;
        cfg.dt_identity.count = 3;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (s1, _) = execute(SubKind::DtIdentity, &cfg, d1.path()).unwrap();
        let (s2, _) = execute(SubKind::DtIdentity, &cfg, d2.path()).unwrap();
        assert_eq!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
        // And the CSV artifacts agree byte-for-byte.
        let a = std::fs::read(d1.path().join("dt_identity.csv")).unwrap();
        let b = std::fs::read(d2.path().join("dt_identity.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_sweep_emits_per_cutoff_records() {
        let mut cfg = default_config(SubKind::Partition);
        cfg.measure.n = 8;
        cfg.partition.samples = 50;
        cfg.partition.n_values = vec![4, 8];
        let dir = tempfile::tempdir().unwrap();
        let (_, outputs) = execute(SubKind::Partition, &cfg, dir.path()).unwrap();
        assert!(outputs.iter().any(|p| p.ends_with("partition_n4.json")));
        assert!(outputs.iter().any(|p| p.ends_with("partition_n8.json")));
        assert!(dir.path().join("partition_summary.csv").exists());
        // Summary CSV starts with the config hash.
        let text = std::fs::read_to_string(dir.path().join("partition_summary.csv")).unwrap();
        assert!(text.starts_with(&format!("# config_hash={}", config_hash(&cfg))));
    }

    #[test]
    fn run_record_lists_existing_outputs() {
        let mut cfg = default_config(SubKind::EnergyCheck);
        cfg.measure.n = 4;
        cfg.energy_check.count = 2;
        let dir = tempfile::tempdir().unwrap();
        cfg.out = Some(dir.path().to_path_buf());
        let rec = run(SubKind::EnergyCheck, &cfg).unwrap();
        assert_eq!(rec.subcommand, "energy-check");
        assert!(!rec.outputs.is_empty());
        for o in &rec.outputs {
            assert!(std::path::Path::new(o).exists(), "missing output {o}");
        }
        assert!(dir.path().join("run_record.json").exists());
    }
}
