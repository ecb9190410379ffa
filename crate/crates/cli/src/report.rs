//! JSON report document written by every command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rndscore::engine::gradcheck::OpCheck;
use rndscore::rnd::RndReport;
use rndscore::Result;
use serde::Serialize;

use crate::config::{AblateAxis, AxisValue, ExperimentConfig, SweepKind, SynthKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

pub const TOOL: Tool = Tool {
    name: "rndscore",
    version: env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputRecord>,
    pub results: Results,
    /// Curve files relative to the output directory.
    pub curves: Vec<String>,
    pub duration_seconds: f64,
}

impl ReportDocument {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Results {
    Score(Box<RndReport>),
    Sweep(SweepResult),
    Ablate(AblateResult),
    Baseline(BaselineResult),
    Synth(SynthResult),
    Gradcheck(GradcheckResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Scores strictly increase along the grid.
    Ordered,
    Unordered,
}

#[derive(Debug, Clone, Serialize)]
pub struct Baselines {
    /// `distinct_<n>` keyed values.
    pub distinct: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub score: f64,
    pub stddev: Option<f64>,
    pub ci95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Baselines>,
    pub report: RndReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseReference {
    pub score: f64,
    pub ci95: Option<f64>,
    /// The highest grid point scores strictly above the noise.
    pub exceeded_by_last: bool,
    pub report: RndReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_reference: Option<Box<NoiseReference>>,
}

impl SweepResult {
    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    /// Grid indices sorted by score.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.points[a].score.total_cmp(&self.points[b].score));
        idx
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblatePoint {
    pub value: AxisValue,
    pub sweep: SweepResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateResult {
    pub axis: AblateAxis,
    pub points: Vec<AblatePoint>,
    /// Ordered when every grid value gives an ordered sweep.
    pub verdict: Verdict,
    /// Every grid value ranks the sweep the same way.
    pub rankings_agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineResult {
    pub sequences: usize,
    #[serde(flatten)]
    pub values: Baselines,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthResult {
    pub kind: SynthKind,
    pub examples: usize,
    pub fingerprint: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckResult {
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub checks: Vec<OpCheck>,
}

pub fn verdict(scores: &[f64]) -> Verdict {
    if scores.windows(2).all(|w| w[0] < w[1]) {
        Verdict::Ordered
    } else {
        Verdict::Unordered
    }
}
