//! Ensembling: combine per-model posteriors or hard votes into a final
//! prediction. The two rules (unweighted average, majority vote) are
//! interchangeable strategies behind the `Combiner` trait.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::registry::Registry;

/// One model's output for one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// Probability vector of length C.
    Posterior(Vec<f64>),
    /// Hard class decision.
    Hard(usize),
}

impl Prediction {
    pub fn hard_vote(&self) -> usize {
        match self {
            Prediction::Posterior(p) => argmax(p),
            Prediction::Hard(c) => *c,
        }
    }
}

fn validate_posteriors<'a>(
    posteriors: impl Iterator<Item = &'a [f64]>,
    num_classes: usize,
) -> Result<()> {
    for (i, p) in posteriors.enumerate() {
        if p.len() != num_classes {
            return Err(Error::contract(format!(
                "posterior {i} has {} entries, expected {num_classes}",
                p.len()
            )));
        }
        if p.iter().any(|&x| x < 0.0) {
            return Err(Error::contract(format!("posterior {i} has a negative entry")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "posterior {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Argmax of the elementwise mean of the posterior vectors; ties go to the
/// lowest class index. (Any positive rescaling of the mean leaves the
/// argmax unchanged, so mean-over-models and sum conventions agree.)
pub fn ensemble_ua(posteriors: &[Vec<f64>], num_classes: usize) -> Result<usize> {
    if posteriors.is_empty() {
        return Err(Error::contract("ensemble of zero models".to_string()));
    }
    validate_posteriors(posteriors.iter().map(|p| p.as_slice()), num_classes)?;
    let m = posteriors.len() as f64;
    let mean: Vec<f64> = (0..num_classes)
        .map(|c| posteriors.iter().map(|p| p[c]).sum::<f64>() / m)
        .collect();
    Ok(argmax(&mean))
}

/// Class with the most votes; ties go to the lowest class index.
pub fn ensemble_mv(votes: &[usize], num_classes: usize) -> Result<usize> {
    if votes.is_empty() {
        return Err(Error::contract("ensemble of zero models".to_string()));
    }
    let mut counts = vec![0usize; num_classes];
    for &v in votes {
        if v >= num_classes {
            return Err(Error::contract(format!(
                "vote {v} out of range for {num_classes} classes"
            )));
        }
        counts[v] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// An ensembling rule over one example's M model outputs.
pub trait Combiner: Send + Sync {
    fn name(&self) -> &'static str;
    fn combine(&self, outputs: &[Prediction], num_classes: usize) -> Result<usize>;
}

struct UnweightedAverage;

impl Combiner for UnweightedAverage {
    fn name(&self) -> &'static str {
        "ua"
    }

    fn combine(&self, outputs: &[Prediction], num_classes: usize) -> Result<usize> {
        let posteriors: Result<Vec<Vec<f64>>> = outputs
            .iter()
            .map(|o| match o {
                Prediction::Posterior(p) => Ok(p.clone()),
                Prediction::Hard(_) => Err(Error::config(
                    "unweighted-average ensembling needs posterior predictions".to_string(),
                )),
            })
            .collect();
        ensemble_ua(&posteriors?, num_classes)
    }
}

struct MajorityVote;

impl Combiner for MajorityVote {
    fn name(&self) -> &'static str {
        "mv"
    }

    fn combine(&self, outputs: &[Prediction], num_classes: usize) -> Result<usize> {
        let votes: Vec<usize> = outputs.iter().map(Prediction::hard_vote).collect();
        ensemble_mv(&votes, num_classes)
    }
}

/// Ensemble rules, keyed by CLI name.
pub fn combiners() -> Registry<dyn Combiner> {
    let mut registry: Registry<dyn Combiner> = Registry::new("ensemble method");
    registry.register("ua", Box::new(UnweightedAverage));
    registry.register("mv", Box::new(MajorityVote));
    registry
}

/// One scored example in a prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub gold: usize,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub label_names: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

const PREDICTIONS_HEADER: &str = "#predictions";
const PREDICTIONS_VERSION: &str = "v1";

impl PredictionFile {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!(
            "{PREDICTIONS_HEADER}\t{PREDICTIONS_VERSION}\t{}\n",
            self.label_names.join(",")
        );
        for row in &self.rows {
            out.push_str(&row.id);
            out.push('\t');
            out.push_str(&self.label_names[row.gold]);
            match &row.prediction {
                Prediction::Posterior(p) => {
                    for v in p {
                        out.push('\t');
                        out.push_str(&format!("{v}"));
                    }
                }
                Prediction::Hard(c) => {
                    out.push('\t');
                    out.push_str(&self.label_names[*c]);
                }
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = raw.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format("prediction file is empty".to_string()))?;
        let mut parts = header.split('\t');
        if parts.next() != Some(PREDICTIONS_HEADER) {
            return Err(Error::format(format!(
                "expected `{PREDICTIONS_HEADER}` header in `{}`",
                path.display()
            )));
        }
        let version = parts.next().unwrap_or("");
        if version != PREDICTIONS_VERSION {
            return Err(Error::format(format!(
                "unsupported prediction file version `{version}`"
            )));
        }
        let label_names: Vec<String> = parts
            .next()
            .unwrap_or("")
            .split(',')
            .map(str::to_string)
            .filter(|s| !s.is_empty())
            .collect();
        if label_names.len() < 2 {
            return Err(Error::format(
                "prediction header must declare at least two labels".to_string(),
            ));
        }
        let label_index = |s: &str, line: usize| -> Result<usize> {
            label_names
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| Error::data(line, format!("unknown label `{s}`")))
        };
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(Error::data(line_no, "expected id, gold, and predictions"));
            }
            let id = fields[0].to_string();
            let gold = label_index(fields[1], line_no)?;
            let prediction = if fields.len() == 3 && label_names.iter().any(|l| l == fields[2]) {
                Prediction::Hard(label_index(fields[2], line_no)?)
            } else if fields.len() - 2 == label_names.len() {
                let values: std::result::Result<Vec<f64>, _> =
                    fields[2..].iter().map(|s| s.parse::<f64>()).collect();
                Prediction::Posterior(values.map_err(|e| {
                    Error::data(line_no, format!("bad posterior value: {e}"))
                })?)
            } else {
                return Err(Error::data(
                    line_no,
                    format!(
                        "expected {} posterior values or one hard label, got {} fields",
                        label_names.len(),
                        fields.len() - 2
                    ),
                ));
            };
            rows.push(PredictionRow {
                id,
                gold,
                prediction,
            });
        }
        Ok(PredictionFile { label_names, rows })
    }
}

/// Combines several aligned prediction files into final per-example
/// classes. Files must declare identical label sets and agree on example
/// ids row by row.
pub fn combine_files(
    files: &[PredictionFile],
    combiner: &dyn Combiner,
) -> Result<Vec<PredictionRow>> {
    let first = files
        .first()
        .ok_or_else(|| Error::config("no prediction files given".to_string()))?;
    for file in &files[1..] {
        if file.label_names != first.label_names {
            return Err(Error::config(format!(
                "label sets differ: {:?} vs {:?}",
                first.label_names, file.label_names
            )));
        }
        if file.rows.len() != first.rows.len() {
            let shorter = file.rows.len().min(first.rows.len());
            let id = first
                .rows
                .get(shorter)
                .or_else(|| file.rows.get(shorter))
                .map(|r| r.id.clone())
                .unwrap_or_default();
            return Err(Error::Alignment { id });
        }
    }
    let num_classes = first.num_classes();
    let mut combined = Vec::with_capacity(first.rows.len());
    for i in 0..first.rows.len() {
        let id = &first.rows[i].id;
        for file in files {
            if &file.rows[i].id != id {
                return Err(Error::Alignment { id: id.clone() });
            }
            if file.rows[i].gold != first.rows[i].gold {
                return Err(Error::data(
                    i + 2,
                    format!("gold labels disagree for example `{id}`"),
                ));
            }
        }
        let outputs: Vec<Prediction> =
            files.iter().map(|f| f.rows[i].prediction.clone()).collect();
        let class = combiner.combine(&outputs, num_classes)?;
        combined.push(PredictionRow {
            id: id.clone(),
            gold: first.rows[i].gold,
            prediction: Prediction::Hard(class),
        });
    }
    Ok(combined)
}
