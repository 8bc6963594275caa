//! Accuracy, per-class precision/recall/F1, macro-F1 and confusion analysis.
//!
//! Precision, recall and F1 are 0 whenever their denominator is 0. Macro-F1 is
//! the unweighted mean of the per-class F1 values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Instance, Polarity, CLASS_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    /// Rows are gold classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    /// Share of errors where the gold or the predicted class is neutral.
    pub neutral_error_fraction: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score class-index predictions against gold class indices for the three polarity classes.
pub fn evaluate(predictions: &[usize], golds: &[usize]) -> Result<EvalReport> {
    evaluate_classes(predictions, golds, CLASS_COUNT)
}

pub fn evaluate_classes(predictions: &[usize], golds: &[usize], classes: usize) -> Result<EvalReport> {
    if predictions.len() != golds.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::validation("nothing to evaluate"));
    }
    if let Some(bad) = predictions.iter().chain(golds).find(|&&c| c >= classes) {
        return Err(Error::validation(format!("class {bad} outside 0..{classes}")));
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        confusion[g][p] += 1;
    }
    let total = predictions.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();

    let mut precision = Vec::with_capacity(classes);
    let mut recall = Vec::with_capacity(classes);
    let mut f1 = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..classes).map(|g| confusion[g][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let macro_f1 = f1.iter().sum::<f64>() / classes as f64;

    let neutral = Polarity::Neutral.class_index();
    let errors = total - correct;
    let neutral_errors = predictions
        .iter()
        .zip(golds)
        .filter(|(&p, &g)| p != g && (p == neutral || g == neutral))
        .count();

    Ok(EvalReport {
        accuracy: ratio(correct, total),
        precision,
        recall,
        f1,
        macro_f1,
        confusion,
        neutral_error_fraction: ratio(neutral_errors, errors),
    })
}

impl EvalReport {
    pub fn examples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn class_name(c: usize) -> String {
    Polarity::from_class_index(c)
        .map(|p| p.name().to_string())
        .unwrap_or_else(|| format!("class{c}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples   {}", self.examples())?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "macro-F1   {:.4}", self.macro_f1)?;
        writeln!(f, "neutral-related errors {:.4}", self.neutral_error_fraction)?;
        writeln!(f)?;
        writeln!(f, "{:<10} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1")?;
        for c in 0..self.f1.len() {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                class_name(c),
                self.precision[c],
                self.recall[c],
                self.f1[c]
            )?;
        }
        writeln!(f)?;
        write!(f, "{:<14}", "gold\\pred")?;
        for c in 0..self.confusion.len() {
            write!(f, " {:>9}", class_name(c))?;
        }
        writeln!(f)?;
        for (g, row) in self.confusion.iter().enumerate() {
            write!(f, "{:<14}", class_name(g))?;
            for n in row {
                write!(f, " {n:>9}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCase<'a> {
    pub index: usize,
    pub instance: &'a Instance,
    pub predicted: Polarity,
    pub gold: Polarity,
}

/// Misclassified instances, in corpus order.
pub fn error_cases<'a>(instances: &'a [Instance], predictions: &[usize]) -> Result<Vec<ErrorCase<'a>>> {
    if instances.len() != predictions.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} instances",
            predictions.len(),
            instances.len()
        )));
    }
    instances
        .iter()
        .zip(predictions)
        .enumerate()
        .filter(|(_, (inst, &p))| inst.label.class_index() != p)
        .map(|(index, (instance, &p))| {
            let predicted = Polarity::from_class_index(p)
                .ok_or_else(|| Error::validation(format!("class {p} is not a polarity")))?;
            Ok(ErrorCase {
                index,
                instance,
                predicted,
                gold: instance.label,
            })
        })
        .collect()
}

/// Errors of one model on instances that every model in `others` classified correctly.
pub fn error_cases_fixed_by<'a>(
    instances: &'a [Instance],
    predictions: &[usize],
    others: &[&[usize]],
) -> Result<Vec<ErrorCase<'a>>> {
    for o in others {
        if o.len() != instances.len() {
            return Err(Error::validation("comparison predictions are misaligned"));
        }
    }
    Ok(error_cases(instances, predictions)?
        .into_iter()
        .filter(|e| {
            others
                .iter()
                .all(|o| o[e.index] == e.gold.class_index())
        })
        .collect())
}
