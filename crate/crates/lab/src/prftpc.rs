//! `PRFTPC v1` plain-text point cloud files.
//!
//! ```text
//! PRFTPC v1 <n_clouds> <n_points> <n_classes>
//! label <name>
//! x y z        (n_points lines, 17 significant digits)
//! ...
//! ```
//!
//! The generation manifest and the class order live next to the data in
//! `<file>.manifest.json`. Without it, classes are numbered by first
//! appearance.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pointrft_core::shapes::{self, GenerationManifest};
use pointrft_core::{Dataset, PointCloud};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const HEADER: &str = "PRFTPC";
pub const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub class_names: Vec<String>,
    pub generation: Option<GenerationManifest>,
}

/// `data.prftpc` -> `data.prftpc.manifest.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_prftpc<W: Write>(w: &mut W, data: &Dataset) -> io::Result<()> {
    let n_points = data.clouds.first().map_or(0, PointCloud::len);
    writeln!(w, "{HEADER} {VERSION} {} {} {}", data.len(), n_points, data.num_classes())?;
    for c in &data.clouds {
        writeln!(w, "label {}", data.class_names[c.label.unwrap_or(0)])?;
        for p in &c.points {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

fn check_writable(data: &Dataset) -> pointrft_core::Result<()> {
    use pointrft_core::Error;
    data.validate()?;
    let n = data.clouds.first().map_or(0, PointCloud::len);
    if let Some(c) = data.clouds.iter().find(|c| c.len() != n) {
        return Err(Error::Validation(format!(
            "{}: {} points, file format needs a uniform {n}",
            c.source_id,
            c.len()
        )));
    }
    if data.clouds.iter().any(|c| c.label.is_none()) {
        return Err(Error::Validation("unlabelled cloud".into()));
    }
    if let Some(name) = data.class_names.iter().find(|n| n.is_empty() || n.contains(char::is_whitespace)) {
        return Err(Error::Validation(format!("class name {name:?} is empty or contains whitespace")));
    }
    Ok(())
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    check_writable(data)?;
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_prftpc(&mut w, data)
        .and_then(|_| w.flush())
        .map_err(|e| LabError::io(path, e))?;
    let manifest = DataManifest {
        class_names: data.class_names.clone(),
        generation: data.manifest.clone(),
    };
    crate::records::write_json(&sidecar_path(path), &manifest)
}

struct Lines<R> {
    inner: io::Lines<R>,
    line: usize,
    path: PathBuf,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, msg: impl Into<String>) -> LabError {
        LabError::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(LabError::io(&self.path, e)),
            None => Err(self.err("unexpected end of file")),
        }
    }
}

fn parse_count(tok: Option<&str>, what: &str, lines: &Lines<impl BufRead>) -> Result<usize> {
    tok.ok_or_else(|| lines.err(format!("header is missing {what}")))?
        .parse()
        .map_err(|_| lines.err(format!("bad {what} in header")))
}

/// Parses a PRFTPC stream. `class_names` fixes the label order when known;
/// `path` only labels errors.
pub fn read_prftpc<R: BufRead>(r: R, class_names: Option<&[String]>, path: &Path) -> Result<Dataset> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
        path: path.to_path_buf(),
    };
    let header = lines.next()?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(HEADER) {
        return Err(lines.err(format!("expected '{HEADER}' header")));
    }
    match tok.next() {
        Some(VERSION) => {}
        other => return Err(lines.err(format!("unsupported version {other:?}"))),
    }
    let n_clouds = parse_count(tok.next(), "n_clouds", &lines)?;
    let n_points = parse_count(tok.next(), "n_points", &lines)?;
    let n_classes = parse_count(tok.next(), "n_classes", &lines)?;
    if tok.next().is_some() {
        return Err(lines.err("trailing tokens in header"));
    }

    let fixed = class_names.is_some();
    let mut names: Vec<String> = class_names.map(<[String]>::to_vec).unwrap_or_default();
    if fixed && names.len() != n_classes {
        return Err(lines.err(format!("header says {n_classes} classes, manifest lists {}", names.len())));
    }
    let mut clouds = Vec::with_capacity(n_clouds);
    for idx in 0..n_clouds {
        let l = lines.next()?;
        let name = l
            .strip_prefix("label ")
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| lines.err("expected 'label <name>'"))?;
        let label = match names.iter().position(|n| n == name) {
            Some(k) => k,
            None if fixed => return Err(lines.err(format!("class '{name}' is not in the manifest"))),
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        if label >= n_classes {
            return Err(lines.err(format!("more than {n_classes} distinct classes")));
        }
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let l = lines.next()?;
            let mut p = [0.0; 3];
            let mut it = l.split_whitespace();
            for v in &mut p {
                *v = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| lines.err("expected 'x y z'"))?;
            }
            if it.next().is_some() {
                return Err(lines.err("more than three coordinates"));
            }
            points.push(p);
        }
        clouds.push(PointCloud::new(points, Some(label), shapes::source_id(&names[label], idx)));
    }
    if let Some(Ok(extra)) = lines.inner.next() {
        if !extra.trim().is_empty() {
            lines.line += 1;
            return Err(lines.err("data after the last declared cloud"));
        }
    }
    if names.len() != n_classes {
        return Err(lines.err(format!("header says {n_classes} classes, found {}", names.len())));
    }
    Ok(Dataset {
        clouds,
        class_names: names,
        manifest: None,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let sidecar = sidecar_path(path);
    let manifest: Option<DataManifest> = if sidecar.exists() {
        Some(crate::records::read_json(&sidecar)?)
    } else {
        None
    };
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut data = read_prftpc(
        BufReader::new(f),
        manifest.as_ref().map(|m| m.class_names.as_slice()),
        path,
    )?;
    data.manifest = manifest.and_then(|m| m.generation);
    data.validate()?;
    Ok(data)
}
