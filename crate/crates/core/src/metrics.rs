//! Rank correlation, absolute error, and per-class evaluation reports.
//!
//! ```
//! use protopop::metrics::spearman;
//!
//! assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5);
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(v) = y.iter().chain(y_hat).find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {v}")));
    }
    Ok(())
}

/// Pearson correlation of average ranks.
pub fn spearman(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    if y.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} samples", y.len())));
    }
    let (a, b) = (average_ranks(y), average_ranks(y_hat));
    let mean = (y.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (ra, rb) in a.iter().zip(&b) {
        let (da, db) = (ra - mean, rb - mean);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("all values tied".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    if y.is_empty() {
        return Err(Error::invalid("mae of zero samples"));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub n: usize,
    /// `None` when fewer than two samples or all values tied.
    pub src: Option<f64>,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub src: Option<f64>,
    pub mae: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn optional_src(y: &[f64], y_hat: &[f64]) -> Result<Option<f64>> {
    match spearman(y, y_hat) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Overall and per-class metrics; `class_names[classes[i]]` names sample `i`.
pub fn per_class_report(y: &[f64], y_hat: &[f64], classes: &[usize], class_names: &[String]) -> Result<EvalReport> {
    check_lengths(y, y_hat)?;
    if classes.len() != y.len() {
        return Err(Error::invalid("one class label per sample required"));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= class_names.len()) {
        return Err(Error::invalid(format!("class index {c} has no name")));
    }
    let mut per_class = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| classes[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let yc: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let pc: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
        per_class.push(ClassMetrics {
            class: name.clone(),
            n: idx.len(),
            src: optional_src(&yc, &pc)?,
            mae: mae(&yc, &pc)?,
        });
    }
    Ok(EvalReport {
        n: y.len(),
        src: optional_src(y, y_hat)?,
        mae: mae(y, y_hat)?,
        per_class,
    })
}

fn fmt_src(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |s| format!("{s:.4}"))
}

/// Left-aligned first column, right-aligned numeric columns.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_class
            .iter()
            .map(|c| {
                vec![
                    c.class.clone(),
                    c.n.to_string(),
                    fmt_src(c.src),
                    format!("{:.4}", c.mae),
                ]
            })
            .collect();
        rows.push(vec![
            "overall".into(),
            self.n.to_string(),
            fmt_src(self.src),
            format!("{:.4}", self.mae),
        ]);
        format_table(&["class", "n", "SRC", "MAE"], &rows)
    }
}
