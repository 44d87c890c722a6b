//! Report serialisation: JSON, the one-line summary table and sweep CSV.

use std::io::Write;

use pdq_core::score::FG_BG_READING;
use pdq_core::simharness::SweepResult;
use pdq_core::{Dataset, EvaluationReport, FrameAssignment, MapReport};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairJson {
    pub gt: usize,
    pub det: usize,
    pub ppdq: f64,
    pub sp: f64,
    pub lbl: f64,
    pub fg: f64,
    pub bg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameJson {
    pub image_id: u32,
    pub tp: Vec<PairJson>,
    /// Detection indices into the submitted file.
    pub fp: Vec<usize>,
    /// Annotation indices within the image.
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
}

impl From<&FrameAssignment<f64>> for FrameJson {
    fn from(a: &FrameAssignment<f64>) -> Self {
        Self {
            image_id: a.frame.0,
            tp: a
                .pairs
                .iter()
                .map(|p| PairJson {
                    gt: p.gt,
                    det: p.det,
                    ppdq: p.quality.ppdq,
                    sp: p.quality.spatial,
                    lbl: p.quality.label,
                    fg: (-p.quality.fg_loss).exp(),
                    bg: (-p.quality.bg_loss).exp(),
                })
                .collect(),
            fp: a.fp_det.clone(),
            fn_: a.fn_gt.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassApJson {
    pub class_id: usize,
    pub name: String,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportJson {
    pub pdq: f64,
    pub ppdq: f64,
    pub sp: f64,
    pub lbl: f64,
    pub fg: f64,
    pub bg: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tau: f64,
    pub weight: f64,
    pub epsilon: f64,
    pub p_min: f64,
    pub fg_bg_reading: &'static str,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_ap: Option<Vec<ClassApJson>>,
    pub per_frame: Vec<FrameJson>,
}

impl ReportJson {
    pub fn new(
        report: &EvaluationReport<f64>,
        epsilon: f64,
        p_min: f64,
        map: Option<&MapReport>,
        dataset: &Dataset,
    ) -> Self {
        let s = &report.summary;
        Self {
            pdq: s.pdq,
            ppdq: s.avg_ppdq,
            sp: s.avg_spatial,
            lbl: s.avg_label,
            fg: s.avg_fg_quality,
            bg: s.avg_bg_quality,
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            tau: report.tau,
            weight: report.weight,
            epsilon,
            p_min,
            fg_bg_reading: FG_BG_READING,
            warnings: report.warnings.clone(),
            map: map.map(|m| m.map),
            per_class_ap: map.map(|m| {
                m.per_class
                    .iter()
                    .map(|c| ClassApJson {
                        class_id: c.class_id,
                        name: dataset.class_names.get(c.class_id).cloned().unwrap_or_default(),
                        ap: c.ap,
                    })
                    .collect()
            }),
            per_frame: report.per_frame.iter().map(FrameJson::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serialisable") + "\n"
    }

    /// Header and one row, scores in percent.
    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:.3}", 100.0 * v);
        let mut header = vec!["PDQ", "pPDQ", "Sp", "Lbl", "FG", "BG", "TP", "FP", "FN"];
        let mut row = vec![
            pct(self.pdq),
            pct(self.ppdq),
            pct(self.sp),
            pct(self.lbl),
            pct(self.fg),
            pct(self.bg),
            self.tp.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
        ];
        if let Some(m) = self.map {
            header.push("mAP");
            row.push(m.map_or_else(|| "-".to_string(), pct));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!(
            "{}\n{}\n",
            line(header.into_iter().map(String::from).collect()),
            line(row)
        )
    }
}

pub const SWEEP_CSV_HEADER: [&str; 14] = [
    "experiment",
    "parameter",
    "value",
    "repetition",
    "pdq",
    "map",
    "ppdq",
    "sp",
    "lbl",
    "fg",
    "bg",
    "tp",
    "fp",
    "fn",
];

/// One row per (grid value, repetition); `map` is empty when not computed.
pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    for r in &result.rows {
        w.write_record([
            result.experiment.name().to_string(),
            result.parameter.to_string(),
            r.value.to_string(),
            r.repetition.to_string(),
            r.pdq.to_string(),
            r.map.map(|m| m.to_string()).unwrap_or_default(),
            r.ppdq.to_string(),
            r.sp.to_string(),
            r.lbl.to_string(),
            r.fg.to_string(),
            r.bg.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
