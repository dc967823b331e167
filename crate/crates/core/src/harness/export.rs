use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::config::{ExperimentConfig, PointSpec};
use super::metrics::{summarize, MetricsRecord, Summary};
use super::runner::run_point;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// CSV files carry the config on their first line behind this prefix.
const CSV_CONFIG_PREFIX: &str = "# config=";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format {s:?}, expected csv or json")),
        }
    }
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
}

impl ResultsFile {
    pub fn new(config: ExperimentConfig, records: Vec<MetricsRecord>) -> Self {
        ResultsFile {
            version: CODE_VERSION.to_string(),
            config_hash: config_hash(&config),
            config,
            records,
        }
    }

    pub fn summaries(&self) -> Vec<Summary> {
        summarize(&self.records)
    }

    pub fn safety_violations(&self) -> u64 {
        self.records
            .iter()
            .map(|r| r.safety_violations + r.invalid_global_entries)
            .sum()
    }
}

/// `(x, y, series)` triples: alpha against mean latency and mean TPM.
pub fn plot_data(summaries: &[Summary]) -> Vec<(f64, f64, String)> {
    let mut out = Vec::new();
    for s in summaries {
        let series = format!("{}/{}", s.protocol, s.mechanism);
        out.push((s.alpha, s.latency_mean, format!("latency:{series}")));
        out.push((s.alpha, s.tpm_mean, format!("tpm:{series}")));
    }
    out
}

fn csv_records(records: &[MetricsRecord], out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.{csv,json}`, `summary.csv` and `plot.csv` into `dir` and
/// returns the path of the results file.
pub fn write_results(results: &ResultsFile, dir: &Path, format: OutputFormat) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = match format {
        OutputFormat::Json => {
            let path = dir.join("results.json");
            let text = serde_json::to_string_pretty(results)?;
            fs::write(&path, text + "\n")?;
            path
        }
        OutputFormat::Csv => {
            let path = dir.join("results.csv");
            let mut file = fs::File::create(&path)?;
            writeln!(file, "{CSV_CONFIG_PREFIX}{}", serde_json::to_string(&results.config)?)?;
            csv_records(&results.records, file)?;
            path
        }
    };
    let summaries = results.summaries();
    csv_rows(&dir.join("summary.csv"), &summaries)?;
    csv_rows(&dir.join("plot.csv"), plot_data(&summaries))?;
    Ok(path)
}

/// Reads a file written by [`write_results`]; the format follows the extension.
pub fn read_results(path: &Path) -> anyhow::Result<ResultsFile> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let mut reader = BufReader::new(fs::File::open(path).with_context(|| format!("reading {}", path.display()))?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let Some(json) = first.trim_end().strip_prefix(CSV_CONFIG_PREFIX) else {
        bail!("{} does not start with an embedded config", path.display());
    };
    let config: ExperimentConfig = serde_json::from_str(json)?;
    let records = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<MetricsRecord>, _>>()?;
    let file = ResultsFile::new(config, records);
    if let Some(r) = file.records.iter().find(|r| r.config_hash != file.config_hash) {
        bail!("row {} was produced by config {}, file embeds {}", r.index, r.config_hash, file.config_hash);
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub original: MetricsRecord,
    pub regenerated: MetricsRecord,
    /// The two records serialize to the same bytes.
    pub identical: bool,
}

/// Re-runs row `row` of a results file from its embedded config.
pub fn replay(path: &Path, row: usize) -> anyhow::Result<ReplayOutcome> {
    let file = read_results(path)?;
    let Some(original) = file.records.iter().find(|r| r.index == row).cloned() else {
        bail!("{} has no row {row}", path.display());
    };
    let point = PointSpec {
        protocol: original.protocol,
        mechanism: original.mechanism,
        alpha: original.alpha,
    };
    let regenerated = run_point(&file.config, &point, original.trial, original.index)?;
    let identical = serde_json::to_vec(&original)? == serde_json::to_vec(&regenerated)?;
    Ok(ReplayOutcome {
        original,
        regenerated,
        identical,
    })
}
