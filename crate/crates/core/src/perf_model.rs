//! Analytical cost model: operation-count formulas for each security
//! function, SF vs offloaded (RSF) processing-time composition, reduction
//! percentages, the cost table, and host microbenchmarks.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto_suite::{ops, ops::OpCounts};

pub mod queue;

pub use queue::{simulate_queue, Abandonment, ArrivalProcess, QueueConfig, QueueReport};

const PAPER_TIMINGS: &str = include_str!("../data/paper_timings.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("timing for {0} is missing")]
    MissingPrimitive(Primitive),
    #[error("timing {field} is negative ({value})")]
    NegativeTiming { field: String, value: f64 },
    #[error("T_SF must be positive, got {0}")]
    NonPositiveSfTime(f64),
    #[error("invalid timing table: {0}")]
    Parse(String),
    #[error("invalid queue configuration: {0}")]
    InvalidQueue(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Primitive {
    Pairing,
    ExpG1,
    MulG1,
    ExpG2,
    MulG2,
    ExpGt,
    MulGt,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Pairing => "pairing",
            Primitive::ExpG1 => "exp_g1",
            Primitive::MulG1 => "mul_g1",
            Primitive::ExpG2 => "exp_g2",
            Primitive::MulG2 => "mul_g2",
            Primitive::ExpGt => "exp_gt",
            Primitive::MulGt => "mul_gt",
        })
    }
}

/// Per-platform primitive times in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveTimings {
    #[serde(default)]
    pub label: String,
    pub pairing: Option<f64>,
    pub exp_g1: Option<f64>,
    pub mul_g1: Option<f64>,
    pub exp_g2: Option<f64>,
    pub mul_g2: Option<f64>,
    pub exp_gt: Option<f64>,
    pub mul_gt: Option<f64>,
    /// Diffie-Hellman key agreement.
    pub dh_ms: Option<f64>,
    /// One symmetric encryption or decryption of a short input.
    pub sym_enc_ms: Option<f64>,
}

impl PrimitiveTimings {
    pub fn get(&self, p: Primitive) -> Option<f64> {
        match p {
            Primitive::Pairing => self.pairing,
            Primitive::ExpG1 => self.exp_g1,
            Primitive::MulG1 => self.mul_g1,
            Primitive::ExpG2 => self.exp_g2,
            Primitive::MulG2 => self.mul_g2,
            Primitive::ExpGt => self.exp_gt,
            Primitive::MulGt => self.mul_gt,
        }
    }

    /// `t_RSF^D = t_DH + t_Enc`: the device's share of one offloaded function.
    pub fn device_rsf_time(&self) -> f64 {
        self.dh_ms.unwrap_or(0.0) + self.sym_enc_ms.unwrap_or(0.0)
    }

    fn check(&self, row: &str) -> Result<(), PerfError> {
        let fields = [
            ("pairing", self.pairing),
            ("exp_g1", self.exp_g1),
            ("mul_g1", self.mul_g1),
            ("exp_g2", self.exp_g2),
            ("mul_g2", self.mul_g2),
            ("exp_gt", self.exp_gt),
            ("mul_gt", self.mul_gt),
            ("dh_ms", self.dh_ms),
            ("sym_enc_ms", self.sym_enc_ms),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(PerfError::NegativeTiming {
                        field: format!("{row}.{name}"),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyConstants {
    /// t_COM^D: device-to-device communication time.
    pub device_device_ms: f64,
    /// t_COM^{D-SA}: device-to-SA communication time (request and response).
    pub device_sa_ms: f64,
    /// t_attach^D, excluded from T_RSF unless set.
    #[serde(default)]
    pub attach_ms: f64,
}

impl LatencyConstants {
    pub const ZERO: LatencyConstants = LatencyConstants {
        device_device_ms: 0.0,
        device_sa_ms: 0.0,
        attach_ms: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Paper,
    Reconstructed,
    HostMeasured,
    File,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Paper => "paper",
            Provenance::Reconstructed => "reconstructed",
            Provenance::HostMeasured => "host-measured",
            Provenance::File => "file",
        })
    }
}

/// Published result cells keyed by function, for discrepancy flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCells {
    pub gs_sign: f64,
    pub gs_verify: f64,
    pub abe_encrypt: f64,
    pub abe_decrypt: f64,
}

impl PhaseCells {
    pub fn get(&self, phase: SfPhase) -> f64 {
        match phase {
            SfPhase::GsSign => self.gs_sign,
            SfPhase::GsVerify => self.gs_verify,
            SfPhase::AbeEncrypt => self.abe_encrypt,
            SfPhase::AbeDecrypt => self.abe_decrypt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportedCells {
    pub sf_device: PhaseCells,
    pub sf_sa: PhaseCells,
    pub t_sf: PhaseCells,
    pub t_rsf: PhaseCells,
    pub reduction_percent: PhaseCells,
    pub abe_attributes: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub provenance: Provenance,
    pub device: PrimitiveTimings,
    pub sa: PrimitiveTimings,
    pub latency: LatencyConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<ReportedCells>,
}

impl TimingTable {
    /// The shipped constants from the published evaluation.
    pub fn paper() -> TimingTable {
        Self::from_toml_str(PAPER_TIMINGS).expect("bundled timing table is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<TimingTable, PerfError> {
        let table: TimingTable =
            toml::from_str(text).map_err(|e| PerfError::Parse(e.message().to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("timing table serializes")
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        self.device.check("device")?;
        self.sa.check("sa")?;
        let lat = [
            ("latency.device_device_ms", self.latency.device_device_ms),
            ("latency.device_sa_ms", self.latency.device_sa_ms),
            ("latency.attach_ms", self.latency.attach_ms),
        ];
        for (field, value) in lat {
            if !(value >= 0.0) {
                return Err(PerfError::NegativeTiming {
                    field: field.into(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// The four security-function phases the cost model covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SfPhase {
    GsSign,
    GsVerify,
    AbeEncrypt,
    AbeDecrypt,
}

impl SfPhase {
    pub const ALL: [SfPhase; 4] = [
        SfPhase::GsSign,
        SfPhase::GsVerify,
        SfPhase::AbeEncrypt,
        SfPhase::AbeDecrypt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SfPhase::GsSign => "gs-sign",
            SfPhase::GsVerify => "gs-verify",
            SfPhase::AbeEncrypt => "abe-encrypt",
            SfPhase::AbeDecrypt => "abe-decrypt",
        }
    }
}

/// A named linear combination of primitive counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountFormula {
    pub name: String,
    pub terms: Vec<(Primitive, u64)>,
}

/// `ceil(log2 n)`, zero for `n <= 1`.
pub fn ceil_log2(n: u32) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(32 - (n - 1).leading_zeros())
    }
}

impl OpCountFormula {
    /// The published per-phase cost formula. `n_attrs` is only used by ABE.
    ///
    /// Verification's third term is read as target-group exponentiations;
    /// that is the reading that reproduces the published SA cell.
    pub fn for_phase(phase: SfPhase, n_attrs: u32) -> Self {
        use Primitive::*;
        let n = u64::from(n_attrs);
        let terms = match phase {
            SfPhase::GsSign => vec![(ExpG1, 9), (MulG1, 3), (ExpGt, 3), (Pairing, 3)],
            SfPhase::GsVerify => vec![(ExpG1, 8), (MulG1, 4), (ExpGt, 5), (Pairing, 4)],
            SfPhase::AbeEncrypt => vec![(ExpG1, n + 1), (MulG1, 1)],
            SfPhase::AbeDecrypt => {
                let k = ceil_log2(n_attrs);
                vec![(Pairing, k), (MulGt, k)]
            }
        };
        let name = match phase {
            SfPhase::AbeEncrypt | SfPhase::AbeDecrypt => {
                format!("{}(N_a={n_attrs})", phase.name())
            }
            _ => phase.name().to_string(),
        };
        Self { name, terms }
    }

    /// A formula from counts recorded by the instrumentation layer.
    pub fn from_counts(name: impl Into<String>, c: &OpCounts) -> Self {
        use Primitive::*;
        let terms = [
            (Pairing, c.pairing),
            (ExpG1, c.exp_g1),
            (MulG1, c.mul_g1),
            (ExpG2, c.exp_g2),
            (MulG2, c.mul_g2),
            (ExpGt, c.exp_gt),
            (MulGt, c.mul_gt),
        ]
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .collect();
        Self {
            name: name.into(),
            terms,
        }
    }

    pub fn count(&self, p: Primitive) -> u64 {
        self.terms
            .iter()
            .filter(|(q, _)| *q == p)
            .map(|(_, n)| n)
            .sum()
    }
}

impl fmt::Display for OpCountFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|(p, n)| format!("{n}*{p}")).collect();
        write!(f, "{}: {}", self.name, parts.join(" + "))
    }
}

/// Evaluates the formula against a platform's timings.
pub fn predict_sf_time(
    formula: &OpCountFormula,
    timings: &PrimitiveTimings,
) -> Result<f64, PerfError> {
    formula.terms.iter().try_fold(0.0, |acc, (p, n)| {
        timings
            .get(*p)
            .map(|t| acc + *n as f64 * t)
            .ok_or(PerfError::MissingPrimitive(*p))
    })
}

/// `T_SF = t_SF^D + t_COM^D`.
pub fn compose_sf_time(t_sf_device: f64, latency: &LatencyConstants) -> f64 {
    t_sf_device + latency.device_device_ms
}

/// `T_RSF = t_attach^D + t_RSF^D + t_SF^SA + t_COM^D + t_COM^{D-SA}`.
pub fn compose_rsf_time(t_rsf_device: f64, t_sf_sa: f64, latency: &LatencyConstants) -> f64 {
    latency.attach_ms + t_rsf_device + t_sf_sa + latency.device_device_ms + latency.device_sa_ms
}

pub fn reduction_percent(t_sf: f64, t_rsf: f64) -> Result<f64, PerfError> {
    if !(t_sf > 0.0) {
        return Err(PerfError::NonPositiveSfTime(t_sf));
    }
    Ok(100.0 * (t_sf - t_rsf) / t_sf)
}

/// One line of the cost table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEntry {
    pub quantity: &'static str,
    pub function: &'static str,
    pub value: f64,
    pub paper_value: Option<f64>,
    pub provenance: Provenance,
    pub flag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostTable {
    pub source: Provenance,
    pub abe_attributes: u32,
    pub entries: Vec<CostEntry>,
}

const MS_TOLERANCE: f64 = 0.05;
const PERCENT_TOLERANCE: f64 = 0.01;

impl CostTable {
    /// Builds the table for `n_attrs` ABE attributes. When the timing table
    /// carries published cells, every computed value is compared with its
    /// cell; where they disagree the table also carries the value composed
    /// from the published upstream cells, so both readings are visible.
    pub fn build(table: &TimingTable, n_attrs: u32) -> Result<CostTable, PerfError> {
        let computed_prov = match table.provenance {
            Provenance::Paper => Provenance::Reconstructed,
            p => p,
        };
        let reported = table.reported.as_ref();
        let lat = &table.latency;
        let mut entries = Vec::new();

        let mut push = |quantity: &'static str,
                        phase: SfPhase,
                        value: f64,
                        paper: Option<f64>,
                        percent: bool,
                        alt: Option<f64>| {
            let matches = |v: f64, p: f64| {
                if percent {
                    (v - p).abs() <= PERCENT_TOLERANCE
                } else {
                    (v - p).abs() <= MS_TOLERANCE
                }
            };
            match paper {
                None => entries.push(CostEntry {
                    quantity,
                    function: phase.name(),
                    value,
                    paper_value: None,
                    provenance: computed_prov,
                    flag: String::new(),
                }),
                Some(p) if matches(value, p) => entries.push(CostEntry {
                    quantity,
                    function: phase.name(),
                    value,
                    paper_value: Some(p),
                    provenance: computed_prov,
                    flag: "ok".into(),
                }),
                Some(p) => {
                    entries.push(CostEntry {
                        quantity,
                        function: phase.name(),
                        value,
                        paper_value: Some(p),
                        provenance: computed_prov,
                        flag: format!("DISCREPANCY residual {:+.3}", p - value),
                    });
                    if let Some(a) = alt {
                        let flag = if matches(a, p) {
                            "ok (from published cells)".to_string()
                        } else {
                            format!("DISCREPANCY residual {:+.3} (from published cells)", p - a)
                        };
                        entries.push(CostEntry {
                            quantity,
                            function: phase.name(),
                            value: a,
                            paper_value: Some(p),
                            provenance: Provenance::Paper,
                            flag,
                        });
                    }
                }
            }
        };

        for phase in SfPhase::ALL {
            let formula = OpCountFormula::for_phase(phase, n_attrs);
            let t_dev = predict_sf_time(&formula, &table.device)?;
            let t_sa = predict_sf_time(&formula, &table.sa)?;
            let t_sf = compose_sf_time(t_dev, lat);
            let t_rsf = compose_rsf_time(table.device.device_rsf_time(), t_sa, lat);
            let red = reduction_percent(t_sf, t_rsf)?;

            let cell = |f: fn(&ReportedCells) -> &PhaseCells| {
                reported
                    .filter(|r| r.abe_attributes == n_attrs || !is_abe(phase))
                    .map(|r| f(r).get(phase))
            };
            let p_dev = cell(|r| &r.sf_device);
            let p_sa = cell(|r| &r.sf_sa);
            let p_tsf = cell(|r| &r.t_sf);
            let p_trsf = cell(|r| &r.t_rsf);
            let p_red = cell(|r| &r.reduction_percent);

            push("t_SF^D", phase, t_dev, p_dev, false, None);
            push("t_SF^SA", phase, t_sa, p_sa, false, None);
            push(
                "T_SF",
                phase,
                t_sf,
                p_tsf,
                false,
                p_dev.map(|d| compose_sf_time(d, lat)),
            );
            push(
                "T_RSF",
                phase,
                t_rsf,
                p_trsf,
                false,
                p_sa.map(|s| compose_rsf_time(table.device.device_rsf_time(), s, lat)),
            );
            let alt_red = match (p_tsf, p_trsf) {
                (Some(a), Some(b)) => Some(reduction_percent(a, b)?),
                _ => None,
            };
            push("reduction_%", phase, red, p_red, true, alt_red);
        }
        Ok(CostTable {
            source: table.provenance,
            abe_attributes: n_attrs,
            entries,
        })
    }

    pub fn lookup(
        &self,
        quantity: &str,
        phase: SfPhase,
        provenance: Provenance,
    ) -> Option<&CostEntry> {
        self.entries.iter().find(|e| {
            e.quantity == quantity && e.function == phase.name() && e.provenance == provenance
        })
    }

    pub fn discrepancies(&self) -> impl Iterator<Item = &CostEntry> {
        self.entries
            .iter()
            .filter(|e| e.flag.starts_with("DISCREPANCY"))
    }

    /// CSV: `quantity,function,value,paper_value,provenance,flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,function,value,paper_value,provenance,flag\n");
        for e in &self.entries {
            let paper = e.paper_value.map(|p| format!("{p:.3}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{:.3},{},{},{}",
                e.quantity, e.function, e.value, paper, e.provenance, e.flag
            )
            .expect("string write");
        }
        out
    }

    /// Human-readable layout: one column per function.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "Computation costs (source: {}, ABE with {} attributes)",
            self.source, self.abe_attributes
        )
        .expect("string write");
        writeln!(
            out,
            "{:<12} {:>14} {:>14} {:>14} {:>14}  provenance",
            "", "gs-sign", "gs-verify", "abe-encrypt", "abe-decrypt"
        )
        .expect("string write");
        let quantities = ["t_SF^D", "t_SF^SA", "T_SF", "T_RSF", "reduction_%"];
        let provs: BTreeSet<Provenance> = self.entries.iter().map(|e| e.provenance).collect();
        for q in quantities {
            for prov in &provs {
                let cells: Vec<Option<&CostEntry>> = SfPhase::ALL
                    .iter()
                    .map(|ph| self.lookup(q, *ph, *prov))
                    .collect();
                if cells.iter().all(Option::is_none) {
                    continue;
                }
                let mut line = format!("{q:<12}");
                for c in &cells {
                    match c {
                        Some(e) => {
                            let mark = if e.flag.starts_with("DISCREPANCY") {
                                "*"
                            } else {
                                " "
                            };
                            write!(line, " {:>13.3}{mark}", e.value).expect("string write");
                        }
                        None => write!(line, " {:>14}", "-").expect("string write"),
                    }
                }
                writeln!(out, "{line}  {prov}").expect("string write");
            }
        }
        let flagged: Vec<&CostEntry> = self.discrepancies().collect();
        if !flagged.is_empty() {
            writeln!(out, "\n* discrepancies against published cells:").expect("string write");
            for e in flagged {
                writeln!(
                    out,
                    "  {} {} [{}]: {:.3} vs published {:.3} ({})",
                    e.quantity,
                    e.function,
                    e.provenance,
                    e.value,
                    e.paper_value.unwrap_or(f64::NAN),
                    e.flag
                )
                .expect("string write");
            }
        }
        out
    }
}

fn is_abe(phase: SfPhase) -> bool {
    matches!(phase, SfPhase::AbeEncrypt | SfPhase::AbeDecrypt)
}

/// Times each pairing-group primitive on this host (median of `samples`
/// runs) and returns a table whose device and SA rows both hold the host
/// figures. Latencies are copied from `latency`.
pub fn microbench(samples: usize, latency: LatencyConstants) -> TimingTable {
    use crate::crypto_suite::{
        dh_agree, dh_generate, rng_from_seed, sym_encrypt, BilinearSuite, SessionKey,
    };
    let suite = BilinearSuite;
    let mut rng = rng_from_seed(0xBE7C);
    let samples = samples.max(1);
    let s = suite.random_nonzero_scalar(&mut rng);
    let g1 = suite.g1() * suite.random_nonzero_scalar(&mut rng);
    let g2 = suite.g2() * suite.random_nonzero_scalar(&mut rng);
    let gt = suite.pairing(&g1, &g2);

    fn median_ms(samples: usize, mut f: impl FnMut()) -> f64 {
        let mut v: Vec<f64> = (0..samples)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2].max(f64::MIN_POSITIVE)
    }

    let a = dh_generate(&mut rng);
    let b = dh_generate(&mut rng);
    let key = SessionKey::from_bytes(&[3u8; 32]).expect("32 bytes");
    let input = [0x5Au8; 20];
    let row = PrimitiveTimings {
        label: "host".into(),
        pairing: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::pairing(&g1, &g2));
        })),
        exp_g1: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::g1_exp(&g1, &s));
        })),
        mul_g1: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::g1_mul(&g1, &g1));
        })),
        exp_g2: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::g2_exp(&g2, &s));
        })),
        mul_g2: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::g2_mul(&g2, &g2));
        })),
        exp_gt: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::gt_exp(&gt, &s));
        })),
        mul_gt: Some(median_ms(samples, || {
            let _ = std::hint::black_box(ops::gt_mul(&gt, &gt));
        })),
        dh_ms: Some(median_ms(samples, || {
            let _ = std::hint::black_box(dh_agree(&a, b.public()).expect("valid point"));
        })),
        sym_enc_ms: Some(median_ms(samples, || {
            let _ = std::hint::black_box(sym_encrypt(&key, &input, &mut rng_from_seed(1)));
        })),
    };
    TimingTable {
        provenance: Provenance::HostMeasured,
        device: row.clone(),
        sa: row,
        latency,
        reported: None,
    }
}
