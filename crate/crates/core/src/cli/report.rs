//! CSV and summary text. Floats are written with 17 significant digits in
//! scientific notation, independent of locale.

use std::path::Path;

use crate::entanglement::{EntropyRow, SpectrumRow};
use crate::fsutil::write_atomic;
use crate::training::EpochRecord;
use crate::Result;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
    for r in history {
        let test = r.test.as_ref().map_or(String::new(), |t| num(t.accuracy));
        out.push_str(&format!("{},{},{},{}\n", r.epoch, num(r.train.loss), num(r.train.accuracy), test));
    }
    out
}

fn percent(v: f64) -> String {
    format!("{:.3}%", 100.0 * v)
}

/// Final accuracies as a table row: `2x2 | 99.967% | 94.690%`, with a bond
/// dimension column for SBPS.
pub fn summary(title: &str, block: &str, chi: Option<usize>, history: &[EpochRecord], note: &str) -> String {
    let last = history.last();
    let mut out = format!("# {title}\n");
    if let Some(r) = last {
        out.push_str(&format!("# accuracies after epoch {}\n", r.epoch));
    }
    if !note.is_empty() {
        out.push_str(&format!("# {note}\n"));
    }
    let header = match chi {
        Some(_) => "block | chi | training accuracy | test accuracy",
        None => "block | training accuracy | test accuracy",
    };
    out.push_str(header);
    out.push('\n');
    if let Some(r) = last {
        let test = r.test.as_ref().map_or("-".to_string(), |t| percent(t.accuracy));
        match chi {
            Some(c) => out.push_str(&format!("{block} | {c} | {} | {test}\n", percent(r.train.accuracy))),
            None => out.push_str(&format!("{block} | {} | {test}\n", percent(r.train.accuracy))),
        }
    }
    out
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("n_sigma,alpha,lambda_sq,tol\n");
    for row in rows {
        for (a, l) in row.result.lambdas.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", row.n_sigma, a + 1, num(l * l), num(row.result.tol)));
        }
    }
    out
}

/// One row per spectrum: its entropy, labelled with the region it belongs to.
pub fn spectrum_entropy_csv(region: &str, rows: &[SpectrumRow]) -> String {
    let mut out = String::from("L,mean_S,std_S,n_partitions,n_sigma,tol\n");
    for row in rows {
        out.push_str(&format!(
            "{region},{},{},1,{},{}\n",
            num(row.result.entropy),
            num(0.0),
            row.n_sigma,
            num(row.result.tol)
        ));
    }
    out
}

pub fn entropy_csv(rows: &[EntropyRow], n_sigma: usize, tol: f64) -> String {
    let mut out = String::from("L,mean_S,std_S,n_partitions,n_sigma,tol\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.l,
            num(row.mean),
            num(row.std),
            row.n_partitions,
            n_sigma,
            num(tol)
        ));
    }
    out
}
