//! Accuracy metrics and the combined speed/accuracy/memory score.
//!
//! Every metric takes an optional validity mask (row-major, one entry per
//! pixel); pixels whose ground truth is not finite are always skipped.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{FieldEstimate, FieldKind};
use crate::tensor::Scalar;

/// Outlier threshold in pixels.
pub const OUTLIER_PX: f64 = 3.0;
/// Outlier threshold relative to the ground-truth magnitude.
pub const OUTLIER_REL: f64 = 0.05;

/// Per-pixel `(error, gt magnitude)` over valid pixels.
fn pixel_errors<T: Scalar>(
    pred: &FieldEstimate<T>,
    gt: &FieldEstimate<T>,
    mask: Option<&[bool]>,
) -> Result<Vec<(f64, f64)>> {
    if pred.kind() != gt.kind() || pred.values().shape() != gt.values().shape() {
        return Err(Error::dim(format!(
            "prediction {} {:?} vs ground truth {} {:?}",
            pred.kind().name(),
            pred.values().shape(),
            gt.kind().name(),
            gt.values().shape()
        )));
    }
    let n = pred.height() * pred.width();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::dim(format!("mask has {} entries for {n} pixels", m.len())));
        }
    }
    let c = pred.kind().channels();
    let (p, g) = (pred.values().data(), gt.values().data());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let mut err2 = 0.0;
        let mut mag2 = 0.0;
        let mut finite = true;
        for ch in 0..c {
            let gv = g[ch * n + k].to_f64_lossy();
            finite &= gv.is_finite();
            let d = p[ch * n + k].to_f64_lossy() - gv;
            err2 += d * d;
            mag2 += gv * gv;
        }
        if finite {
            out.push((err2.sqrt(), mag2.sqrt()));
        }
    }
    Ok(out)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn require_kind<T: Scalar>(pred: &FieldEstimate<T>, kind: FieldKind, metric: &str) -> Result<()> {
    if pred.kind() != kind {
        return Err(Error::Metric(format!("{metric} is defined for {} only", kind.name())));
    }
    Ok(())
}

fn no_valid() -> Error {
    Error::Metric("no valid ground-truth pixels".into())
}

/// Mean end-point error in pixels: Euclidean for flow, absolute for disparity.
pub fn epe<T: Scalar>(pred: &FieldEstimate<T>, gt: &FieldEstimate<T>, mask: Option<&[bool]>) -> Result<f64> {
    let errs = pixel_errors(pred, gt, mask)?;
    mean(errs.iter().map(|e| e.0)).ok_or_else(no_valid)
}

/// EPE restricted to ground-truth motion in `[0, 10)`, `[10, 40)` and
/// `[40, ∞)` pixels; empty buckets are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeEpe {
    pub s_0_10: Option<f64>,
    pub s_10_40: Option<f64>,
    pub s_40plus: Option<f64>,
}

pub fn epe_by_motion_range<T: Scalar>(
    pred: &FieldEstimate<T>,
    gt: &FieldEstimate<T>,
    mask: Option<&[bool]>,
) -> Result<RangeEpe> {
    require_kind(pred, FieldKind::Flow, "motion-range EPE")?;
    let errs = pixel_errors(pred, gt, mask)?;
    let bucket = |lo: f64, hi: f64| mean(errs.iter().filter(|e| e.1 >= lo && e.1 < hi).map(|e| e.0));
    Ok(RangeEpe {
        s_0_10: bucket(0.0, 10.0),
        s_10_40: bucket(10.0, 40.0),
        s_40plus: bucket(40.0, f64::INFINITY),
    })
}

fn outlier_percent(errs: &[(f64, f64)]) -> Result<f64> {
    if errs.is_empty() {
        return Err(no_valid());
    }
    let bad = errs
        .iter()
        .filter(|(e, m)| *e > OUTLIER_PX && *e > OUTLIER_REL * m)
        .count();
    Ok(100.0 * bad as f64 / errs.len() as f64)
}

/// Percentage of valid flow pixels whose error exceeds both 3 px and 5% of
/// the ground-truth magnitude.
pub fn f1_all<T: Scalar>(pred: &FieldEstimate<T>, gt: &FieldEstimate<T>, mask: Option<&[bool]>) -> Result<f64> {
    require_kind(pred, FieldKind::Flow, "F1-all")?;
    outlier_percent(&pixel_errors(pred, gt, mask)?)
}

/// Disparity counterpart of [`f1_all`].
pub fn d1<T: Scalar>(pred: &FieldEstimate<T>, gt: &FieldEstimate<T>, mask: Option<&[bool]>) -> Result<f64> {
    require_kind(pred, FieldKind::Disparity, "D1")?;
    outlier_percent(&pixel_errors(pred, gt, mask)?)
}

/// `fps / (epe · ln(memory_mb))`; higher is better.
pub fn somer(fps: f64, epe: f64, memory_mb: f64) -> Result<f64> {
    if !(fps > 0.0 && fps.is_finite()) || !(epe > 0.0 && epe.is_finite()) {
        return Err(Error::domain(format!(
            "somer needs positive finite fps and epe, got {fps} and {epe}"
        )));
    }
    if !(memory_mb > 1.0 && memory_mb.is_finite()) {
        return Err(Error::domain(format!("somer needs memory above 1 MB, got {memory_mb}")));
    }
    Ok(fps / (epe * memory_mb.ln()))
}

/// Evaluation summary; absent fields are omitted from the JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_all: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_0_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_10_40: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_40plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_mb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub somer: Option<f64>,
}

impl MetricReport {
    /// Fills fps and memory and recomputes `somer` when all three inputs are
    /// in its domain.
    pub fn with_performance(mut self, fps: Option<f64>, memory_mb: Option<f64>) -> Self {
        self.fps = fps;
        self.memory_mb = memory_mb;
        self.somer = match (fps, self.epe, memory_mb) {
            (Some(f), Some(e), Some(m)) => somer(f, e, m).ok(),
            _ => None,
        };
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned two-column text table of the present fields.
    pub fn to_table(&self) -> String {
        let rows = [
            ("epe (px)", self.epe),
            ("f1_all (%)", self.f1_all),
            ("d1 (%)", self.d1),
            ("s_0_10 (px)", self.s_0_10),
            ("s_10_40 (px)", self.s_10_40),
            ("s_40plus (px)", self.s_40plus),
            ("fps", self.fps),
            ("memory_mb", self.memory_mb),
            ("somer", self.somer),
        ];
        let mut out = String::new();
        for (name, v) in rows {
            if let Some(v) = v {
                let _ = writeln!(out, "{name:<14} {v:>12.4}");
            }
        }
        out
    }
}

/// Accuracy metrics appropriate to the field kind.
pub fn evaluate<T: Scalar>(
    pred: &FieldEstimate<T>,
    gt: &FieldEstimate<T>,
    mask: Option<&[bool]>,
) -> Result<MetricReport> {
    let mut r = MetricReport {
        epe: Some(epe(pred, gt, mask)?),
        ..Default::default()
    };
    match pred.kind() {
        FieldKind::Flow => {
            let ranges = epe_by_motion_range(pred, gt, mask)?;
            r.f1_all = Some(f1_all(pred, gt, mask)?);
            r.s_0_10 = ranges.s_0_10;
            r.s_10_40 = ranges.s_10_40;
            r.s_40plus = ranges.s_40plus;
        }
        FieldKind::Disparity => r.d1 = Some(d1(pred, gt, mask)?),
    }
    Ok(r)
}
