//! Per-class F-measure and overall accuracy, dataset files, and the synthetic
//! toy-face generator.

mod io;
mod toyface;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{ensure, Error, Result};
use crate::pipeline::LabelMap;

pub use io::{load_image, load_labels, save_image, save_labelmap, DatasetManifest};
pub use toyface::{
    boundary_noise, generate_toy_faces, toy_face, ToyFaceConfig, CLASS_BACKGROUND, CLASS_HAIR, CLASS_NAMES,
    CLASS_SKIN,
};

/// Confusion counts, `counts[gt][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_dims(pred, gt)?;
        pred.check_classes(self.classes)?;
        gt.check_classes(self.classes)?;
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(TP, FP, FN)` for class `k`.
    pub fn tp_fp_fn(&self, k: usize) -> (u64, u64, u64) {
        let tp = self.count(k, k);
        let fp = (0..self.classes).map(|g| self.count(g, k)).sum::<u64>() - tp;
        let fn_ = (0..self.classes).map(|p| self.count(k, p)).sum::<u64>() - tp;
        (tp, fp, fn_)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.count(k, k)).sum()
    }
}

/// Precision, recall and F from raw counts, with P, R, F taken as 0 when undefined.
pub fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn check_dims(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    ensure(pred.height() == gt.height() && pred.width() == gt.width(), || {
        format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )
    })
}

/// `(precision, recall, F)` of one class on one image.
pub fn f_measure(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<(f64, f64, f64)> {
    check_dims(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p == class_id, g == class_id) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(prf(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Counts summed over every pixel of every image before computing P, R, F.
    #[default]
    Micro,
    /// P, R, F computed per image and averaged over images.
    Macro,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Micro => "micro",
            Aggregation::Macro => "macro",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Aggregation::Micro),
            "macro" => Ok(Aggregation::Macro),
            other => Err(Error::invalid(format!("unknown aggregation {other:?}, expected micro or macro"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub overall_accuracy: f64,
}

impl EvalReport {
    /// Micro-aggregated report of pooled counts.
    pub fn from_confusion(c: &Confusion) -> Self {
        let mut r = EvalReport {
            aggregation: Aggregation::Micro,
            precision: Vec::new(),
            recall: Vec::new(),
            f: Vec::new(),
            overall_accuracy: if c.total() == 0 {
                0.0
            } else {
                c.correct() as f64 / c.total() as f64
            },
        };
        for k in 0..c.classes() {
            let (tp, fp, fn_) = c.tp_fp_fn(k);
            let (p, rc, f) = prf(tp, fp, fn_);
            r.precision.push(p);
            r.recall.push(rc);
            r.f.push(f);
        }
        r
    }

    pub fn classes(&self) -> usize {
        self.f.len()
    }

    pub fn mean_f(&self) -> f64 {
        self.f.iter().sum::<f64>() / self.f.len().max(1) as f64
    }

    /// `key = value` lines; floats use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "classes = {}", self.classes()).unwrap();
        writeln!(s, "aggregation = {}", self.aggregation.as_str()).unwrap();
        for k in 0..self.classes() {
            writeln!(s, "f_class_{k} = {}", self.f[k]).unwrap();
            writeln!(s, "precision_{k} = {}", self.precision[k]).unwrap();
            writeln!(s, "recall_{k} = {}", self.recall[k]).unwrap();
        }
        writeln!(s, "overall_accuracy = {}", self.overall_accuracy).unwrap();
        s
    }

    /// Inverse of [`EvalReport::to_text`]. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("report line {}: expected key = value", i + 1)))?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |key: &str| -> Result<&(usize, String)> {
            fields
                .get(key)
                .ok_or_else(|| Error::invalid(format!("report is missing field {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            v.parse()
                .map_err(|_| Error::invalid(format!("report line {line}: {key} = {v:?} is not a number")))
        };
        let (line, classes) = get("classes")?;
        let classes: usize = classes
            .parse()
            .map_err(|_| Error::invalid(format!("report line {line}: bad class count")))?;
        let aggregation = match fields.get("aggregation") {
            Some((_, v)) => Aggregation::parse(v)?,
            None => Aggregation::Micro,
        };
        let mut r = EvalReport {
            aggregation,
            precision: Vec::with_capacity(classes),
            recall: Vec::with_capacity(classes),
            f: Vec::with_capacity(classes),
            overall_accuracy: num("overall_accuracy")?,
        };
        for k in 0..classes {
            r.f.push(num(&format!("f_class_{k}"))?);
            r.precision.push(num(&format!("precision_{k}"))?);
            r.recall.push(num(&format!("recall_{k}"))?);
        }
        Ok(r)
    }

    /// Percentages laid out one column per class F plus overall accuracy, in a
    /// single row labelled `method`.
    pub fn render_table(&self, method: &str, class_names: &[String]) -> String {
        let names: Vec<String> = (0..self.classes())
            .map(|k| format!("F-{}", class_names.get(k).cloned().unwrap_or_else(|| k.to_string())))
            .collect();
        let mut header = format!("{:<12}", "Method");
        for n in &names {
            write!(header, " {n:>12}").unwrap();
        }
        write!(header, " {:>12}", "Overall").unwrap();
        let mut row = format!("{method:<12}");
        for f in &self.f {
            write!(row, " {:>12.2}", 100.0 * f).unwrap();
        }
        write!(row, " {:>12.2}", 100.0 * self.overall_accuracy).unwrap();
        format!("{header}\n{row}\n")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Per-class report over aligned prediction and ground-truth lists.
pub fn evaluate(preds: &[LabelMap], gts: &[LabelMap], classes: usize, aggregation: Aggregation) -> Result<EvalReport> {
    ensure(!preds.is_empty(), || "nothing to evaluate".into())?;
    ensure(preds.len() == gts.len(), || {
        format!("{} predictions for {} ground-truth maps", preds.len(), gts.len())
    })?;
    let mut pooled = Confusion::new(classes);
    let mut per_image = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        let mut c = Confusion::new(classes);
        c.add(p, g).map_err(|e| Error::invalid(format!("image {i}: {e}")))?;
        pooled.merge(&c);
        per_image.push(c);
    }
    let mut report = EvalReport::from_confusion(&pooled);
    if aggregation == Aggregation::Macro {
        let n = per_image.len() as f64;
        for k in 0..classes {
            let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
            for c in &per_image {
                let (tp, fp, fn_) = c.tp_fp_fn(k);
                let (p, r, f) = prf(tp, fp, fn_);
                ps += p;
                rs += r;
                fs += f;
            }
            report.precision[k] = ps / n;
            report.recall[k] = rs / n;
            report.f[k] = fs / n;
        }
        report.aggregation = Aggregation::Macro;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(v.len() / w, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = lm(2, &[0, 1, 2, 1]);
        assert_eq!(f_measure(&g, &g, 1).unwrap(), (1.0, 1.0, 1.0));
        let r = evaluate(&[g.clone()], &[g], 3, Aggregation::Micro).unwrap();
        assert_eq!(r.f, vec![1.0; 3]);
        assert_eq!(r.overall_accuracy, 1.0);
    }

    #[test]
    fn absent_class_has_zero_recall() {
        let g = lm(2, &[0, 1, 1, 1]);
        let p = lm(2, &[0, 0, 0, 0]);
        let (pr, r, f) = f_measure(&p, &g, 1).unwrap();
        assert_eq!((pr, r, f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_counts() {
        // class 1: TP=1, FP=1, FN=0
        let g = lm(3, &[1, 0, 0]);
        let p = lm(3, &[1, 1, 0]);
        let (pr, r, f) = f_measure(&p, &g, 1).unwrap();
        assert_eq!(pr, 0.5);
        assert_eq!(r, 1.0);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dims_must_match() {
        let a = lm(2, &[0, 0]);
        let b = lm(1, &[0, 0]);
        assert!(matches!(f_measure(&a, &b, 0), Err(Error::InvalidArgument(_))));
        assert!(evaluate(&[a.clone()], &[], 2, Aggregation::Micro).is_err());
    }

    #[test]
    fn micro_is_pooled_and_macro_averages() {
        let g1 = lm(4, &[1, 1, 0, 0]);
        let p1 = lm(4, &[1, 0, 0, 0]);
        let g2 = lm(4, &[1, 0, 0, 0]);
        let p2 = lm(4, &[1, 1, 1, 0]);
        let micro = evaluate(&[p1.clone(), p2.clone()], &[g1.clone(), g2.clone()], 2, Aggregation::Micro).unwrap();
        // pooled class 1: TP = 2, FP = 2, FN = 1
        let (p, r, f) = prf(2, 2, 1);
        assert_eq!((micro.precision[1], micro.recall[1], micro.f[1]), (p, r, f));
        let (_, _, f1) = f_measure(&p1, &g1, 1).unwrap();
        let (_, _, f2) = f_measure(&p2, &g2, 1).unwrap();
        assert_ne!(f, (f1 + f2) / 2.0);
        let mac = evaluate(&[p1, p2], &[g1, g2], 2, Aggregation::Macro).unwrap();
        assert!((mac.f[1] - (f1 + f2) / 2.0).abs() < 1e-15);
        assert_eq!(mac.overall_accuracy, micro.overall_accuracy);
        assert_eq!(micro.overall_accuracy, 5.0 / 8.0);
    }

    #[test]
    fn all_background_accuracy_is_background_fraction() {
        let g = lm(4, &[0, 1, 2, 0, 0, 0, 1, 2]);
        let p = LabelMap::filled(2, 4, 0);
        let r = evaluate(&[p], &[g], 3, Aggregation::Micro).unwrap();
        assert_eq!(r.overall_accuracy, 4.0 / 8.0);
    }

    #[test]
    fn report_text_roundtrips() {
        let r = EvalReport {
            aggregation: Aggregation::Macro,
            precision: vec![0.1, 1.0 / 3.0, 0.0],
            recall: vec![0.7, 2.0 / 7.0, 1.0],
            f: vec![0.123456789012345, 0.5, 0.0],
            overall_accuracy: 0.9528,
        };
        assert_eq!(EvalReport::parse(&r.to_text()).unwrap(), r);
        assert!(EvalReport::parse("classes = 1\n").is_err());
    }

    #[test]
    fn table_has_one_column_per_class() {
        let g = lm(2, &[0, 1, 2, 1]);
        let r = evaluate(&[g.clone()], &[g], 3, Aggregation::Micro).unwrap();
        let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
        let t = r.render_table("full", &names);
        assert!(t.contains("F-skin") && t.contains("F-hair") && t.contains("Overall"));
        assert_eq!(t.matches("100.00").count(), 4);
    }
}
