//! Config-driven runs: checks, synthesis, closed-loop scenarios and the
//! comparison table.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, Realization, DEFAULT_PATH_SAMPLES};
use crate::embedding::{Embedding, Weights};
use crate::error::{Error, Result};
use crate::grid::{Grid, SchedulingRange};
use crate::params::CmgParams;
use crate::reduced::{Mode, ReducedModel};
use crate::sim::{simulate, SimConfig, SimSummary, SimTrace};
use crate::synthesis::{solve, Design, GainTable, SynthesisOptions, SynthesisProblem, SynthesisResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// TOML file with model parameters; the identified table when absent.
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub params_file: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub checks: CheckSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub weights: Option<Weights>,
    #[serde(default = "all_controllers")]
    pub controllers: Vec<Realization>,
    #[serde(default = "default_path_samples")]
    pub path_samples: usize,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_check_samples")]
    pub samples: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection { samples: default_check_samples() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    #[serde(default = "default_design")]
    pub design: Design,
    #[serde(default = "both_embeddings")]
    pub embeddings: Vec<Embedding>,
    #[serde(default = "default_points")]
    pub points_per_axis: usize,
    /// Scheduling ranges; the mode's operating ranges when absent.
    #[serde(default)]
    pub range: Option<SchedulingRange>,
    #[serde(default)]
    pub options: SynthesisOptions,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection {
            design: default_design(),
            embeddings: both_embeddings(),
            points_per_axis: default_points(),
            range: None,
            options: SynthesisOptions::default(),
        }
    }
}

/// A named simulation case; the name sits beside the simulation keys.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub sim: SimConfig,
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let name = match table.remove("name") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("scenario name must be a string")),
            None => return Err(D::Error::missing_field("name")),
        };
        let sim = toml::Value::Table(table).try_into::<SimConfig>().map_err(D::Error::custom)?;
        Ok(Scenario { name, sim })
    }
}

fn all_controllers() -> Vec<Realization> {
    Realization::ALL.to_vec()
}

fn default_path_samples() -> usize {
    DEFAULT_PATH_SAMPLES
}

fn default_check_samples() -> usize {
    1000
}

fn default_design() -> Design {
    Design::Stabilize
}

fn both_embeddings() -> Vec<Embedding> {
    vec![Embedding::Lpv, Embedding::Npv]
}

fn default_points() -> usize {
    3
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `params_file` is resolved against it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(p) = &cfg.params_file {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.params_file = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self.mode;
        if self.controllers.is_empty() {
            return Err(Error::Config("no controllers selected".into()));
        }
        if self.path_samples == 0 {
            return Err(Error::Config("path_samples must be at least 1".into()));
        }
        if self.checks.samples == 0 {
            return Err(Error::Config("checks.samples must be at least 1".into()));
        }
        if self.synthesis.embeddings.is_empty() {
            return Err(Error::Config("no embeddings selected for synthesis".into()));
        }
        self.synthesis.options.validate()?;
        self.grid()?;
        self.weights().check(mode)?;
        let mut names = HashSet::new();
        for s in &self.scenarios {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!(
                    "scenario name '{}' must be non-empty and use only letters, digits, '_' or '-'",
                    s.name
                )));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate scenario '{}'", s.name)));
            }
            s.sim.validate(mode).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("scenario '{}': {m}", s.name)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Parameters as written, without validation; see [`RunConfig::model`].
    pub fn params(&self) -> Result<CmgParams<f64>> {
        match &self.params_file {
            None => Ok(CmgParams::table()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn model(&self) -> Result<ReducedModel<f64>> {
        let p = self.params()?;
        p.validate()?;
        Ok(ReducedModel::new(p, self.mode))
    }

    pub fn weights(&self) -> Weights {
        self.weights.clone().unwrap_or_else(|| Weights::default_for(self.mode))
    }

    pub fn grid(&self) -> Result<Grid> {
        let range = self.synthesis.range.clone().unwrap_or_else(|| SchedulingRange::default_for(self.mode));
        if range.dim() != self.mode.schedule_names().len() {
            return Err(Error::Config(format!(
                "{} schedules on {} variables, range has {}",
                self.mode,
                self.mode.schedule_names().len(),
                range.dim()
            )));
        }
        range.validate()?;
        Grid::new(range, self.synthesis.points_per_axis)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// File name of a result for one embedding.
pub fn result_file_name(emb: Embedding) -> String {
    format!("result_{}.json", emb.name())
}

/// Solves the configured design for each selected embedding.
pub fn synthesize(cfg: &RunConfig) -> Result<Vec<SynthesisResult>> {
    let model = cfg.model()?;
    cfg.synthesis
        .embeddings
        .iter()
        .map(|&emb| {
            let pb = SynthesisProblem::build(
                &model,
                emb,
                cfg.synthesis.design,
                cfg.grid()?,
                cfg.weights(),
                cfg.synthesis.options.clone(),
            )?;
            solve(&pb)
        })
        .collect()
}

/// One simulated (scenario, controller) pair.
#[derive(Clone, Debug)]
pub struct Run {
    pub scenario: String,
    pub decimation: usize,
    pub trace: SimTrace,
    pub summary: SimSummary,
}

impl Run {
    pub fn trace_file_name(&self) -> String {
        format!("{}_{}.csv", self.scenario, self.summary.controller.name())
    }
}

/// Runs every configured scenario under every configured controller.
///
/// Each controller takes its gains from the result of its embedding. Runs
/// execute in parallel; the output order is scenario-major and fixed.
pub fn simulate_all(cfg: &RunConfig, results: &[SynthesisResult]) -> Result<Vec<Run>> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("config has no [[scenario]] entries".into()));
    }
    let model = cfg.model()?;
    for r in results {
        if r.mode != cfg.mode {
            return Err(Error::Mismatch(format!("result is for {}, config is for {}", r.mode, cfg.mode)));
        }
        if let Some(p) = &r.params {
            if *p != model.params {
                return Err(Error::Mismatch("result was designed for different model parameters".into()));
            }
        }
    }
    let controllers = cfg
        .controllers
        .iter()
        .map(|&kind| {
            let res = pick_result(results, kind.embedding())?;
            let c = Controller::new(kind, model, GainTable::from_result(res)?, cfg.path_samples)?;
            Ok((c, res.alpha, res.w.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.scenarios.len()).flat_map(|s| (0..controllers.len()).map(move |c| (s, c))).collect();
    jobs.par_iter()
        .map(|&(s, c)| {
            let sc = &cfg.scenarios[s];
            let (ctrl, alpha, w) = &controllers[c];
            let trace = simulate(ctrl, &cfg.weights(), &sc.sim)?;
            let summary = SimSummary::from_trace(&sc.name, &trace, &sc.sim, *alpha, Some(w))?;
            Ok(Run { scenario: sc.name.clone(), decimation: sc.sim.decimation, trace, summary })
        })
        .collect()
}

fn pick_result(results: &[SynthesisResult], emb: Embedding) -> Result<&SynthesisResult> {
    let mut it = results.iter().filter(|r| r.embedding == emb);
    let first = it
        .next()
        .ok_or_else(|| Error::Config(format!("no {} synthesis result supplied", emb.name().to_uppercase())))?;
    if it.next().is_some() {
        return Err(Error::Config(format!("more than one {} result supplied", emb.name().to_uppercase())));
    }
    Ok(first)
}

/// Reads a summary file holding either one summary or a list of them.
pub fn read_summaries(path: &Path) -> Result<Vec<SimSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(v) = serde_json::from_str::<Vec<SimSummary>>(&text) {
        return Ok(v);
    }
    serde_json::from_str::<SimSummary>(&text)
        .map(|s| vec![s])
        .map_err(|e| Error::Config(format!("{}: not a summary file: {e}", path.display())))
}

/// Comparison of runs laid out as embedding, gain bound, realization and
/// cost. Diverged runs show `unstable` in place of the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Comparison {
    pub fn new(summaries: &[SimSummary]) -> Result<Self> {
        if summaries.len() < 2 {
            return Err(Error::Config(format!("compare needs at least two summaries, got {}", summaries.len())));
        }
        let header =
            ["scenario", "mode", "embedding", "alpha", "realization", "horizon", "J_T"].map(String::from).to_vec();
        let rows = summaries
            .iter()
            .map(|s| {
                vec![
                    s.scenario.clone(),
                    s.mode.to_string(),
                    s.embedding.name().to_uppercase(),
                    s.alpha.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
                    s.controller.label().to_string(),
                    format!("{}", s.horizon),
                    if s.unstable { "unstable".to_string() } else { format!("{:.4}", s.cost) },
                ]
            })
            .collect();
        Ok(Comparison { header, rows })
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| self.rows.iter().map(|r| r[c].chars().count()).chain([self.header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        crate::io::csv_bytes(&self.header, &self.rows)
    }
}
