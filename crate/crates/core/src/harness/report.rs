//! Report rows and their CSV files.
//!
//! `results.csv` holds one row per evaluated cell: sweep rows carry the test
//! channel and scale, the per-seed training return is a `train` row (scale
//! 0), heatmap cells are `heatmap` rows whose scale is the cell index
//! `ix·|grid_y| + iy` (coordinates in `heatmap.csv`), and a seed whose
//! training aborted leaves a single `failed` row of zeros.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const RESULTS_FILE: &str = "results.csv";
pub const AUC_FILE: &str = "auc.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";

pub const RESULTS_HEADER: &str =
    "experiment_id,env,variant,seed,channel,scale,mean_return,std_return,n_episodes,training_return";
pub const AUC_HEADER: &str = "experiment_id,env,variant,seed,channel,auc";
pub const HEATMAP_HEADER: &str =
    "experiment_id,env,variant,seed,param_x,mult_x,param_y,mult_y,mean_return,std_return,n_episodes";

/// `channel` value of training-return rows.
pub const TRAIN_CHANNEL: &str = "train";
/// `channel` value of heatmap rows.
pub const HEATMAP_CHANNEL: &str = "heatmap";
/// `channel` value of the marker left by an aborted training run.
pub const FAILED_CHANNEL: &str = "failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub env: String,
    pub variant: String,
    pub seed: u64,
    pub channel: String,
    pub scale: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_episodes: usize,
    pub training_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub experiment_id: String,
    pub env: String,
    pub variant: String,
    pub seed: u64,
    pub channel: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub experiment_id: String,
    pub env: String,
    pub variant: String,
    pub seed: u64,
    pub param_x: String,
    pub mult_x: f64,
    pub param_y: String,
    pub mult_y: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_episodes: usize,
}

/// Everything written to the CSV files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub rows: Vec<ReportRow>,
    pub auc: Vec<AucRow>,
    pub heatmap: Vec<HeatmapRow>,
}

fn channel_rank(c: &str) -> usize {
    match c {
        "obs" => 0,
        "act" => 1,
        "env" => 2,
        "dom" => 3,
        TRAIN_CHANNEL => 4,
        HEATMAP_CHANNEL => 5,
        FAILED_CHANNEL => 6,
        _ => 7,
    }
}

fn key_order(a: (&str, &str, u64, &str), b: (&str, &str, u64, &str)) -> Ordering {
    a.0.cmp(b.0)
        .then_with(|| a.1.cmp(b.1))
        .then(a.2.cmp(&b.2))
        .then(channel_rank(a.3).cmp(&channel_rank(b.3)))
        .then_with(|| a.3.cmp(b.3))
}

impl ReportSet {
    /// Deterministic order: env, variant, seed, channel, scale (experiment
    /// id breaks remaining ties).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            key_order(
                (&a.env, &a.variant, a.seed, &a.channel),
                (&b.env, &b.variant, b.seed, &b.channel),
            )
            .then(a.scale.total_cmp(&b.scale))
            .then_with(|| a.experiment_id.cmp(&b.experiment_id))
        });
        self.auc.sort_by(|a, b| {
            key_order(
                (&a.env, &a.variant, a.seed, &a.channel),
                (&b.env, &b.variant, b.seed, &b.channel),
            )
            .then_with(|| a.experiment_id.cmp(&b.experiment_id))
        });
        self.heatmap.sort_by(|a, b| {
            key_order((&a.env, &a.variant, a.seed, ""), (&b.env, &b.variant, b.seed, ""))
                .then(a.mult_x.total_cmp(&b.mult_x))
                .then(a.mult_y.total_cmp(&b.mult_y))
                .then_with(|| a.experiment_id.cmp(&b.experiment_id))
        });
    }

    pub fn extend(&mut self, other: ReportSet) {
        self.rows.extend(other.rows);
        self.auc.extend(other.auc);
        self.heatmap.extend(other.heatmap);
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialises rows to CSV text with `header`; an empty slice gives the
/// header alone.
pub fn to_csv<R: Serialize>(header: &str, rows: &[R]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err(Path::new("<memory>")))?;
    }
    let body = w.into_inner().map_err(|e| HarnessError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })?;
    let mut out = String::with_capacity(header.len() + 1 + body.len());
    out.push_str(header);
    out.push('\n');
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

/// Parses CSV text written by [`to_csv`]; the header must match exactly.
pub fn from_csv<R: for<'de> Deserialize<'de>>(header: &str, text: &str, path: &Path) -> Result<Vec<R>, HarnessError> {
    let first = text.lines().next().unwrap_or("");
    if first.trim_end() != header {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header `{first}`, expected `{header}`"),
        });
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

/// Writes `contents` to `path` through a temporary file and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `results.csv`, `auc.csv` and `heatmap.csv` (sorted) into `dir`.
pub fn write_report_set(set: &ReportSet, dir: &Path) -> Result<(), HarnessError> {
    let mut sorted = set.clone();
    sorted.sort();
    write_atomic(&dir.join(RESULTS_FILE), to_csv(RESULTS_HEADER, &sorted.rows)?.as_bytes())?;
    write_atomic(&dir.join(AUC_FILE), to_csv(AUC_HEADER, &sorted.auc)?.as_bytes())?;
    write_atomic(&dir.join(HEATMAP_FILE), to_csv(HEATMAP_HEADER, &sorted.heatmap)?.as_bytes())?;
    Ok(())
}

/// Reads the CSV files of one output directory. `results.csv` is required;
/// missing `auc.csv`/`heatmap.csv` read as empty.
pub fn read_report_set(dir: &Path) -> Result<ReportSet, HarnessError> {
    let results = dir.join(RESULTS_FILE);
    let rows = from_csv(RESULTS_HEADER, &read_to_string(&results)?, &results)?;
    let optional = |name: &str, header: &str| -> Result<String, HarnessError> {
        let p = dir.join(name);
        if p.exists() {
            read_to_string(&p)
        } else {
            Ok(format!("{header}\n"))
        }
    };
    let auc_path = dir.join(AUC_FILE);
    let heat_path = dir.join(HEATMAP_FILE);
    Ok(ReportSet {
        rows,
        auc: from_csv(AUC_HEADER, &optional(AUC_FILE, AUC_HEADER)?, &auc_path)?,
        heatmap: from_csv(HEATMAP_HEADER, &optional(HEATMAP_FILE, HEATMAP_HEADER)?, &heat_path)?,
    })
}
