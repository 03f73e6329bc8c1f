//! CSV result tables.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chart::Bar;
use crate::error::{LabError, Result};

/// One meta-test run, as written by `fewshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub paradigm: String,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub budget: f64,
    pub regime: String,
    pub n_way: usize,
    pub m_shot: usize,
    pub q_size: usize,
    pub episodes: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub seed: u64,
    /// Only filled when timing is requested, so result files stay reproducible.
    pub wall_s: Option<f64>,
    /// Estimated fine-tuning GMACs per episode.
    pub gmacs: f64,
}

/// One cell of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub paradigm: String,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub budget: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode_index: usize,
    pub seed: u64,
    pub accuracy: f64,
}

pub fn paradigm_label(paradigm: &str, budget: f64) -> String {
    if budget == 1.0 {
        paradigm.to_string()
    } else {
        format!("{paradigm} ({}%)", budget * 100.0)
    }
}

impl ResultRow {
    pub fn bar(&self) -> Bar {
        Bar {
            group: format!("{}-way {}-shot", self.n_way, self.m_shot),
            series: paradigm_label(&self.paradigm, self.budget),
            mean: self.mean_acc,
            std: self.std_acc,
        }
    }
}

impl SweepRow {
    pub fn bar(&self) -> Bar {
        Bar {
            group: format!("eps={}", self.epsilon),
            series: format!("a={} b={}", self.a, self.b),
            mean: self.mean_acc,
            std: self.std_acc,
        }
    }
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Into::into)
}

pub fn save_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    write_rows(std::io::BufWriter::new(f), rows).map_err(|e| match e {
        LabError::Csv(c) => LabError::Format {
            path: path.to_path_buf(),
            msg: c.to_string(),
        },
        e => e,
    })
}

/// A table read back from disk, recognized by its header.
#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Results(Vec<ResultRow>),
    Sweep(Vec<SweepRow>),
    Episodes(Vec<EpisodeRow>),
}

const RESULT_HEADER: &str =
    "paradigm,a,b,epsilon,budget,regime,n_way,m_shot,q_size,episodes,mean_acc,std_acc,seed,wall_s,gmacs";
const SWEEP_HEADER: &str = "paradigm,a,b,epsilon,budget,N,M,mean_acc,std_acc,episodes,seed";
const EPISODE_HEADER: &str = "episode_index,seed,accuracy";

impl Table {
    pub fn parse(text: &str, path: &Path) -> Result<Table> {
        let header = text.lines().next().unwrap_or("").trim_end_matches('\r');
        let wrap = |e: LabError| match e {
            LabError::Csv(c) => LabError::Parse {
                path: path.to_path_buf(),
                line: c.position().map_or(0, |p| p.line() as usize),
                msg: c.to_string(),
            },
            e => e,
        };
        let bytes = text.as_bytes();
        match header {
            RESULT_HEADER => read_rows(bytes).map(Table::Results).map_err(wrap),
            SWEEP_HEADER => read_rows(bytes).map(Table::Sweep).map_err(wrap),
            EPISODE_HEADER => read_rows(bytes).map(Table::Episodes).map_err(wrap),
            _ => Err(LabError::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("unrecognized table header '{header}'"),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Table::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        match self {
            Table::Results(r) => r.len(),
            Table::Sweep(r) => r.len(),
            Table::Episodes(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Table::Results(_) => "results",
            Table::Sweep(_) => "sweep",
            Table::Episodes(_) => "episodes",
        }
    }

    /// Appends `other` if both tables share a schema.
    pub fn extend(&mut self, other: Table) -> std::result::Result<(), String> {
        match (self, other) {
            (Table::Results(a), Table::Results(b)) => a.extend(b),
            (Table::Sweep(a), Table::Sweep(b)) => a.extend(b),
            (Table::Episodes(a), Table::Episodes(b)) => a.extend(b),
            (a, b) => return Err(format!("cannot combine {} and {} tables", a.kind(), b.kind())),
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Table::Results(r) => write_rows(w, r),
            Table::Sweep(r) => write_rows(w, r),
            Table::Episodes(r) => write_rows(w, r),
        }
    }

    /// Bars for the chart; an episode table is one bar per episode.
    pub fn bars(&self) -> Vec<Bar> {
        match self {
            Table::Results(r) => r.iter().map(ResultRow::bar).collect(),
            Table::Sweep(r) => r.iter().map(SweepRow::bar).collect(),
            Table::Episodes(r) => r
                .iter()
                .map(|e| Bar {
                    group: "episodes".into(),
                    series: format!("#{}", e.episode_index),
                    mean: e.accuracy,
                    std: 0.0,
                })
                .collect(),
        }
    }

    /// Plain aligned text for the terminal.
    pub fn render_text(&self) -> String {
        let mut buf = Vec::new();
        let _ = self.write(&mut buf);
        let text = String::from_utf8_lossy(&buf);
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
