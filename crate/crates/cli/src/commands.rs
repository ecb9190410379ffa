//! The six commands. Each one resolves to a [`ReportDocument`] written to
//! the output directory together with its curve files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rndscore::baselines::{distinct_n, self_bleu};
use rndscore::data::save_tensor_file;
use rndscore::data::save_token_files;
use rndscore::engine::gradcheck::{self, run_suite};
use rndscore::rnd::{rnd_score, RndReport};
use rndscore::synth::{gen_mixture, gen_noise, gen_truncated, gen_zipf_corpus, vocab_truncate};
use rndscore::{Dataset, Error, Result, TokenDataset};

use crate::config::{ExperimentConfig, SweepKind, SynthKind};
use crate::report::{
    verdict, AblatePoint, AblateResult, BaselineResult, Baselines, GradcheckResult, InputRecord,
    NoiseReference, ReportDocument, Results, SweepPoint, SweepResult, SynthResult, Verdict,
    SCHEMA_VERSION, TOOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Score,
    Sweep,
    Ablate,
    Baseline,
    Synth,
    Gradcheck,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Score => "score",
            Task::Sweep => "sweep",
            Task::Ablate => "ablate",
            Task::Baseline => "baseline",
            Task::Synth => "synth",
            Task::Gradcheck => "gradcheck",
        }
    }
}

/// Output of one command before it is stamped into a report.
struct Produced {
    results: Results,
    inputs: Vec<InputRecord>,
    curves: Vec<String>,
}

/// Runs `task` under `config`, writing the report and curves into
/// `config.out`.
pub fn execute(task: Task, config: &ExperimentConfig) -> Result<ReportDocument> {
    let start = Instant::now();
    let out = config.out.as_path();
    let produced = match task {
        Task::Score => score(config, out)?,
        Task::Sweep => {
            let mut inputs = Vec::new();
            let mut curves = Vec::new();
            let result = sweep(config, out, "curves", &mut inputs, &mut curves)?;
            Produced {
                results: Results::Sweep(result),
                inputs,
                curves,
            }
        }
        Task::Ablate => ablate(config, out)?,
        Task::Baseline => baseline(config)?,
        Task::Synth => synth(config, out)?,
        Task::Gradcheck => Produced {
            results: Results::Gradcheck(gradcheck_suite(config.gradcheck.seed)?),
            inputs: Vec::new(),
            curves: Vec::new(),
        },
    };
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        command: task.name().to_string(),
        config: config.clone(),
        inputs: produced.inputs,
        results: produced.results,
        curves: produced.curves,
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    doc.write(out)?;
    Ok(doc)
}

fn write_curves(out: &Path, rel: &str, report: &RndReport) -> Result<()> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    report.write_curves(&mut w)?;
    w.flush()?;
    Ok(())
}

fn score(config: &ExperimentConfig, out: &Path) -> Result<Produced> {
    let dataset = config.data.load(config.network.max_seq_len)?;
    let spec = config.network.spec_for(&dataset)?;
    let report = rnd_score(&dataset, &spec, &config.train, config.threads)?;
    write_curves(out, "curves.csv", &report)?;
    let path = config.data.path.clone().or_else(|| config.data.corpus.clone());
    Ok(Produced {
        inputs: vec![InputRecord {
            role: "dataset".into(),
            fingerprint: dataset.fingerprint().to_string(),
            path,
        }],
        results: Results::Score(Box::new(report)),
        curves: vec!["curves.csv".into()],
    })
}

fn compute_baselines(corpus: &TokenDataset, config: &ExperimentConfig) -> Result<Baselines> {
    let mut distinct = BTreeMap::new();
    for &n in &config.baseline.distinct {
        distinct.insert(format!("distinct_{n}"), distinct_n(corpus, n)?);
    }
    let self_bleu = match config.baseline.self_bleu {
        0 => None,
        n => Some(self_bleu(corpus, n)?),
    };
    Ok(Baselines { distinct, self_bleu })
}

/// The datasets of a sweep in grid order.
fn sweep_datasets(config: &ExperimentConfig) -> Result<Vec<(f64, Dataset)>> {
    let grid = config.sweep.grid()?;
    match config.sweep.kind {
        SweepKind::Truncation => grid
            .into_iter()
            .map(|t| Ok((t, gen_truncated(&config.generator.truncated(t))?.into())))
            .collect(),
        SweepKind::Modes => grid
            .into_iter()
            .map(|m| Ok((m, gen_mixture(&config.generator.mixture(m as usize))?.into())))
            .collect(),
        SweepKind::Vocab => {
            let base = gen_zipf_corpus(&config.corpus.spec())?;
            grid.into_iter()
                .map(|k| Ok((k, vocab_truncate(&base, k as usize)?.into())))
                .collect()
        }
    }
}

fn sweep(
    config: &ExperimentConfig,
    out: &Path,
    curve_dir: &str,
    inputs: &mut Vec<InputRecord>,
    curves: &mut Vec<String>,
) -> Result<SweepResult> {
    let kind = config.sweep.kind;
    if kind == SweepKind::Vocab && config.sweep.noise_reference {
        return Err(Error::config("sweep.noise_reference", "only tensor sweeps have a noise reference"));
    }
    let mut points = Vec::new();
    for (value, dataset) in sweep_datasets(config)? {
        let spec = config.network.spec_for(&dataset)?;
        let report = rnd_score(&dataset, &spec, &config.train, config.threads)?;
        let rel = format!("{curve_dir}/{kind}-{value}.csv");
        write_curves(out, &rel, &report)?;
        curves.push(rel);
        inputs.push(InputRecord {
            role: format!("{kind}={value}"),
            fingerprint: dataset.fingerprint().to_string(),
            path: None,
        });
        let baselines = match &dataset {
            Dataset::Tokens(corpus) => Some(compute_baselines(corpus, config)?),
            Dataset::Tensor(_) => None,
        };
        points.push(SweepPoint {
            value,
            score: report.score,
            stddev: report.stddev,
            ci95: report.ci95,
            baselines,
            report,
        });
    }
    let noise_reference = if config.sweep.noise_reference {
        let g = &config.generator;
        let dataset: Dataset = gen_noise(&g.shape, g.n, g.noise_seed)?.into();
        let spec = config.network.spec_for(&dataset)?;
        let report = rnd_score(&dataset, &spec, &config.train, config.threads)?;
        let rel = format!("{curve_dir}/noise.csv");
        write_curves(out, &rel, &report)?;
        curves.push(rel);
        inputs.push(InputRecord {
            role: "noise".into(),
            fingerprint: dataset.fingerprint().to_string(),
            path: None,
        });
        Some(Box::new(NoiseReference {
            score: report.score,
            ci95: report.ci95,
            exceeded_by_last: points.last().is_some_and(|p| p.score > report.score),
            report,
        }))
    } else {
        None
    };
    let scores: Vec<f64> = points.iter().map(|p| p.score).collect();
    Ok(SweepResult {
        kind,
        verdict: verdict(&scores),
        points,
        noise_reference,
    })
}

fn ablate(config: &ExperimentConfig, out: &Path) -> Result<Produced> {
    let axis = config
        .ablate
        .axis
        .ok_or_else(|| Error::config("ablate.axis", "choose an axis: epochs, window, runs, train_size or arch"))?;
    if config.ablate.values.is_empty() {
        return Err(Error::config("ablate.values", "the grid is empty"));
    }
    let mut inputs = Vec::new();
    let mut curves = Vec::new();
    let mut points = Vec::new();
    for value in &config.ablate.values {
        let c = value.apply(axis, config)?;
        let dir = format!("curves/{axis}-{value}");
        let sweep = sweep(&c, out, &dir, &mut inputs, &mut curves)?;
        points.push(AblatePoint {
            value: value.clone(),
            sweep,
        });
    }
    // Sweeps share their datasets, so keep one record per fingerprint.
    let mut seen = std::collections::HashSet::new();
    inputs.retain(|r| seen.insert((r.role.clone(), r.fingerprint.clone())));
    let all_ordered = points.iter().all(|p| p.sweep.verdict == Verdict::Ordered);
    let first = points[0].sweep.ranking();
    let rankings_agree = points.iter().all(|p| p.sweep.ranking() == first);
    Ok(Produced {
        results: Results::Ablate(AblateResult {
            axis,
            points,
            verdict: if all_ordered { Verdict::Ordered } else { Verdict::Unordered },
            rankings_agree,
        }),
        inputs,
        curves,
    })
}

fn baseline(config: &ExperimentConfig) -> Result<Produced> {
    let corpus = match config.data.load(None)? {
        Dataset::Tokens(c) => c,
        Dataset::Tensor(_) => {
            return Err(Error::config("data", "baselines need a token corpus (`corpus` and `vocab`)"))
        }
    };
    let values = compute_baselines(&corpus, config)?;
    Ok(Produced {
        inputs: vec![InputRecord {
            role: "corpus".into(),
            fingerprint: corpus.fingerprint().to_string(),
            path: config.data.corpus.clone(),
        }],
        results: Results::Baseline(BaselineResult {
            sequences: corpus.len(),
            values,
        }),
        curves: Vec::new(),
    })
}

fn synth(config: &ExperimentConfig, out: &Path) -> Result<Produced> {
    fs::create_dir_all(out)?;
    let g = &config.generator;
    let kind = config.synth.kind;
    let tensor = match kind {
        SynthKind::Truncated => Some(gen_truncated(&g.truncated(g.truncation))?),
        SynthKind::Mixture => Some(gen_mixture(&g.mixture(g.modes))?),
        SynthKind::Noise => Some(gen_noise(&g.shape, g.n, g.noise_seed)?),
        SynthKind::Zipf => None,
    };
    let (files, examples, fingerprint) = match tensor {
        Some(d) => {
            let name = format!("{kind}.rndt");
            save_tensor_file(out.join(&name), &d)?;
            (vec![name], d.len(), d.fingerprint().to_string())
        }
        None => {
            let mut corpus = gen_zipf_corpus(&config.corpus.spec())?;
            if let Some(k) = config.corpus.top_k {
                corpus = vocab_truncate(&corpus, k)?;
            }
            save_token_files(&corpus, out.join("corpus.txt"), out.join("vocab.txt"))?;
            (
                vec!["corpus.txt".into(), "vocab.txt".into()],
                corpus.len(),
                corpus.fingerprint().to_string(),
            )
        }
    };
    Ok(Produced {
        results: Results::Synth(SynthResult {
            kind,
            examples,
            fingerprint,
            files,
        }),
        inputs: Vec::new(),
        curves: Vec::new(),
    })
}

pub fn gradcheck_suite(seed: u64) -> Result<GradcheckResult> {
    let checks = run_suite(seed)?;
    Ok(GradcheckResult {
        epsilon: gradcheck::EPSILON,
        tolerance: gradcheck::TOLERANCE,
        passed: checks.iter().all(|c| c.passed()),
        checks,
    })
}

/// A few human-readable lines for the terminal.
pub fn summary(doc: &ReportDocument) -> String {
    let mut s = String::new();
    let interval = |score: f64, ci: Option<f64>| match ci {
        Some(c) => format!("{score:.4} ± {c:.4}"),
        None => format!("{score:.4}"),
    };
    match &doc.results {
        Results::Score(r) => {
            s += &format!("score {} over {} runs\n", interval(r.score, r.ci95), r.per_run.len());
        }
        Results::Sweep(sw) => {
            for p in &sw.points {
                s += &format!("{}={}: {}\n", sw.kind, p.value, interval(p.score, p.ci95));
            }
            if let Some(n) = &sw.noise_reference {
                s += &format!("noise: {}\n", interval(n.score, n.ci95));
            }
            s += &format!("verdict: {}\n", verdict_name(sw.verdict));
        }
        Results::Ablate(a) => {
            for p in &a.points {
                let scores: Vec<String> = p.sweep.scores().iter().map(|v| format!("{v:.4}")).collect();
                s += &format!("{}={}: [{}] {}\n", a.axis, p.value, scores.join(", "), verdict_name(p.sweep.verdict));
            }
            s += &format!("verdict: {}\n", verdict_name(a.verdict));
        }
        Results::Baseline(b) => {
            for (k, v) in &b.values.distinct {
                s += &format!("{k}: {v:.6}\n");
            }
            if let Some(v) = b.values.self_bleu {
                s += &format!("self_bleu: {v:.6}\n");
            }
        }
        Results::Synth(r) => {
            s += &format!("{} examples -> {}\n", r.examples, r.files.join(", "));
        }
        Results::Gradcheck(g) => {
            for c in &g.checks {
                let mark = if c.passed() { "ok" } else { "FAIL" };
                s += &format!("{:<24} {:.3e} {mark}\n", c.op, c.max_rel_error);
            }
        }
    }
    s
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Ordered => "ordered",
        Verdict::Unordered => "unordered",
    }
}
