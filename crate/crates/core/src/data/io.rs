//! Dataset directory layout:
//!
//! ```text
//! meta.json      {"n": .., "m": .., "c": .., "dims": [..], "has_labels": ..}
//! view_<v>.csv   n rows of d_v comma-separated floats, v = 1..m, no header
//! labels.csv     n rows, one integer class id each (optional)
//! mask.csv       n rows of m comma-separated 0/1 values (optional)
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MaskMatrix, MultiViewDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub c: Option<usize>,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub has_labels: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Reads a headerless numeric CSV. `width`, when given, is enforced on
/// every row.
pub fn read_matrix_csv(path: &Path, width: Option<usize>) -> Result<Tensor> {
    let text = read_text(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = width;
    for (line, l) in data_lines(&text) {
        let before = data.len();
        for cell in l.split(',') {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            data.push(v);
        }
        let got = data.len() - before;
        match cols {
            Some(c) if c != got => {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("expected {c} columns, found {got}"),
                })
            }
            None => cols = Some(got),
            _ => {}
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "file contains no rows".into(),
        });
    }
    Tensor::new(vec![rows, cols.unwrap_or(0)], data)
}

pub fn write_matrix_csv(path: &Path, x: &Tensor) -> Result<()> {
    let mut s = String::with_capacity(x.numel() * 20);
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(line, l)| {
            l.parse::<usize>().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected a non-negative integer label, found {l:?}"),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(s, "{l}").unwrap();
    }
    write_text(path, &s)
}

pub fn read_mask(path: &Path) -> Result<MaskMatrix> {
    let text = read_text(path)?;
    let mut w = Vec::new();
    let mut m = None;
    let mut n = 0;
    for (line, l) in data_lines(&text) {
        let before = w.len();
        for cell in l.split(',') {
            match cell.trim() {
                "0" => w.push(0),
                "1" => w.push(1),
                other => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line,
                        msg: format!("mask entries must be 0 or 1, found {other:?}"),
                    })
                }
            }
        }
        let got = w.len() - before;
        if *m.get_or_insert(got) != got {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected {} columns, found {got}", m.unwrap()),
            });
        }
        n += 1;
    }
    MaskMatrix::new(n, m.unwrap_or(0), w)
}

pub fn write_mask(path: &Path, mask: &MaskMatrix) -> Result<()> {
    let mut s = String::with_capacity(mask.n() * mask.m() * 2);
    for i in 0..mask.n() {
        for (v, x) in mask.row(i).iter().enumerate() {
            if v > 0 {
                s.push(',');
            }
            write!(s, "{x}").unwrap();
        }
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_str(&read_text(&meta_path)?).map_err(|e| Error::Json {
        path: meta_path.clone(),
        source: e,
    })?;
    if meta.dims.len() != meta.m {
        return Err(Error::Parse {
            path: meta_path,
            line: 1,
            msg: format!("m = {} but {} dims listed", meta.m, meta.dims.len()),
        });
    }
    let mut views = Vec::with_capacity(meta.m);
    for (v, &d) in meta.dims.iter().enumerate() {
        let path = dir.join(format!("view_{}.csv", v + 1));
        let x = read_matrix_csv(&path, Some(d))?;
        if x.shape()[0] != meta.n {
            return Err(Error::Parse {
                path,
                line: x.shape()[0],
                msg: format!("found {} rows, expected n = {}", x.shape()[0], meta.n),
            });
        }
        views.push(x);
    }
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let l = read_labels(&labels_path)?;
        if l.len() != meta.n {
            return Err(Error::Parse {
                path: labels_path,
                line: l.len(),
                msg: format!("found {} labels, expected n = {}", l.len(), meta.n),
            });
        }
        Some(l)
    } else if meta.has_labels {
        return Err(Error::io(
            labels_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "meta.json declares labels but the file is missing"),
        ));
    } else {
        None
    };
    MultiViewDataset::new(views, labels, meta.c)
}

pub fn save_dataset(dataset: &MultiViewDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        n: dataset.n(),
        m: dataset.m(),
        c: dataset.classes(),
        dims: dataset.dims(),
        has_labels: dataset.labels().is_some(),
    };
    write_text(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serialises"),
    )?;
    for (v, x) in dataset.views().iter().enumerate() {
        write_matrix_csv(&dir.join(format!("view_{}.csv", v + 1)), x)?;
    }
    if let Some(l) = dataset.labels() {
        write_labels(&dir.join("labels.csv"), l)?;
    }
    Ok(())
}
