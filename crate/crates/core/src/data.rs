//! Dataset types, TSV/corpus IO, and the synthetic cloze generator used for
//! desk-scale experiments.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, PLACEHOLDER, TARGET};

/// One cloze example: the emotion word was removed and replaced by the
/// `<target>` placeholder at `target_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClozeExample {
    pub label: usize,
    pub tokens: Vec<String>,
    pub target_index: usize,
}

/// A labeled message without a placeholder requirement (sentiment data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub label: usize,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClozeDataset {
    pub label_names: Vec<String>,
    pub examples: Vec<ClozeExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub label_names: Vec<String>,
    pub examples: Vec<LabeledText>,
}

const LABELS_HEADER: &str = "#labels";

fn parse_header(first_line: Option<&str>) -> Result<Vec<String>> {
    let line = first_line.ok_or_else(|| Error::format("dataset file is empty".to_string()))?;
    let mut parts = line.splitn(2, '\t');
    if parts.next() != Some(LABELS_HEADER) {
        return Err(Error::format(format!(
            "expected `{LABELS_HEADER}<TAB>label0,label1,...` header, got `{line}`"
        )));
    }
    let labels: Vec<String> = parts
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if labels.len() < 2 {
        return Err(Error::format(
            "dataset header must declare at least two labels".to_string(),
        ));
    }
    Ok(labels)
}

fn split_record(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let mut parts = line.splitn(2, '\t');
    let label = parts.next().unwrap_or("");
    let text = parts
        .next()
        .ok_or_else(|| Error::data(line_no, "expected `<label><TAB><text>`"))?;
    Ok((label, text))
}

fn label_index(label_names: &[String], label: &str, line_no: usize) -> Result<usize> {
    label_names
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::data(line_no, format!("unknown label `{label}`")))
}

/// Loads a cloze TSV. Each body line must contain exactly one placeholder.
pub fn load_cloze_tsv(path: impl AsRef<Path>) -> Result<ClozeDataset> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = raw.lines().enumerate();
    let label_names = parse_header(lines.next().map(|(_, l)| l))?;
    let mut examples = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (label, text) = split_record(line, line_no)?;
        let label = label_index(&label_names, label, line_no)?;
        let tokens = text::tokenize(text);
        let targets: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == TARGET)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(Error::data(
                line_no,
                format!(
                    "expected exactly one `{PLACEHOLDER}` placeholder, found {}",
                    targets.len()
                ),
            ));
        }
        examples.push(ClozeExample {
            label,
            tokens,
            target_index: targets[0],
        });
    }
    Ok(ClozeDataset {
        label_names,
        examples,
    })
}

/// Loads a labeled-text TSV (same shape, no placeholder requirement).
pub fn load_labeled_tsv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = raw.lines().enumerate();
    let label_names = parse_header(lines.next().map(|(_, l)| l))?;
    let mut examples = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (label, text) = split_record(line, line_no)?;
        let label = label_index(&label_names, label, line_no)?;
        let tokens = text::tokenize(text);
        if tokens.is_empty() {
            return Err(Error::data(line_no, "empty message"));
        }
        examples.push(LabeledText { label, tokens });
    }
    Ok(LabeledDataset {
        label_names,
        examples,
    })
}

fn render_cloze_text(example: &ClozeExample) -> String {
    example
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == example.target_index {
                PLACEHOLDER.to_string()
            } else {
                t.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_cloze_tsv(path: impl AsRef<Path>, dataset: &ClozeDataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{LABELS_HEADER}\t{}\n", dataset.label_names.join(","));
    for ex in &dataset.examples {
        out.push_str(&dataset.label_names[ex.label]);
        out.push('\t');
        out.push_str(&render_cloze_text(ex));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn save_labeled_tsv(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{LABELS_HEADER}\t{}\n", dataset.label_names.join(","));
    for ex in &dataset.examples {
        out.push_str(&dataset.label_names[ex.label]);
        out.push('\t');
        out.push_str(&ex.tokens.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads an unlabeled corpus: one message per line. Returns `(line_no,
/// tokens)` pairs; blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<(usize, Vec<String>)>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, text::tokenize(l)))
        .collect())
}

pub fn save_corpus(path: impl AsRef<Path>, lines: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for line in lines {
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Which unlabeled corpus the generator emits alongside the labeled sets:
/// class-word lines only, a half/half mixture, or generic filler text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Emo,
    Mixed,
    Generic,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emo" => Ok(CorpusKind::Emo),
            "mixed" => Ok(CorpusKind::Mixed),
            "generic" => Ok(CorpusKind::Generic),
            other => Err(Error::config(format!(
                "unknown corpus kind `{other}` (available: emo, mixed, generic)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub vocab_size: usize,
    pub corpus_kind: CorpusKind,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 6,
            train_per_class: 400,
            dev_per_class: 100,
            vocab_size: 72,
            corpus_kind: CorpusKind::Emo,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub label_names: Vec<String>,
    pub train: ClozeDataset,
    pub dev: ClozeDataset,
    /// Unlabeled token lines; in `Emo` kind these are the examples with the
    /// placeholder replaced by the class word.
    pub corpus: Vec<Vec<String>>,
    /// Per-class cue tokens; disjoint across classes by construction.
    pub cue_tokens: Vec<Vec<String>>,
}

const CUES_PER_CLASS: usize = 3;
const EMOTION_NAMES: [&str; 6] = ["anger", "disgust", "fear", "joy", "sadness", "surprise"];

/// Deterministic synthetic cloze data. Each class owns a disjoint cue-token
/// set; every example carries at least one cue of its class, shared filler
/// tokens, and one placeholder. The paired corpus substitutes a
/// class-specific word for the placeholder.
pub fn generate_synthetic_cloze(config: &SyntheticConfig) -> Result<Synthetic> {
    let c = config.num_classes;
    if c < 2 {
        return Err(Error::config(format!("num_classes must be >= 2, got {c}")));
    }
    if config.vocab_size < 10 * c {
        return Err(Error::config(format!(
            "vocab_size must be >= 10 * num_classes = {}, got {}",
            10 * c,
            config.vocab_size
        )));
    }
    if config.train_per_class == 0 {
        return Err(Error::config("train_per_class must be >= 1".to_string()));
    }

    let label_names: Vec<String> = if c == 6 {
        EMOTION_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..c).map(|i| format!("class{i}")).collect()
    };
    let cue_tokens: Vec<Vec<String>> = (0..c)
        .map(|cls| {
            (0..CUES_PER_CLASS)
                .map(|j| format!("cue{cls}{}", (b'a' + j as u8) as char))
                .collect()
        })
        .collect();
    let filler_count = config.vocab_size - c * (CUES_PER_CLASS + 1);
    let fillers: Vec<String> = (0..filler_count).map(|i| format!("w{i}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let draw_example = |rng: &mut ChaCha8Rng, label: usize| -> ClozeExample {
        let len = rng.gen_range(6..=12usize);
        let target_index = rng.gen_range(1..len); // keep some left context
        let num_cues = rng.gen_range(1..=2usize);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
            .collect();
        tokens[target_index] = TARGET.to_string();
        // place cues on non-target positions
        let mut cue_positions: Vec<usize> = (0..len).filter(|&i| i != target_index).collect();
        for k in 0..num_cues.min(cue_positions.len()) {
            let pick = rng.gen_range(0..cue_positions.len());
            let pos = cue_positions.swap_remove(pick);
            let cue = &cue_tokens[label][k % CUES_PER_CLASS];
            tokens[pos] = cue.clone();
        }
        ClozeExample {
            label,
            tokens,
            target_index,
        }
    };

    let mut train = Vec::new();
    for label in 0..c {
        for _ in 0..config.train_per_class {
            train.push(draw_example(&mut rng, label));
        }
    }
    let mut dev = Vec::new();
    for label in 0..c {
        for _ in 0..config.dev_per_class {
            dev.push(draw_example(&mut rng, label));
        }
    }

    let emo_line = |ex: &ClozeExample| -> Vec<String> {
        let mut line = ex.tokens.clone();
        line[ex.target_index] = label_names[ex.label].clone();
        line
    };
    let all_examples: Vec<&ClozeExample> = train.iter().chain(dev.iter()).collect();
    let generic_line = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(6..=12usize);
        (0..len)
            .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
            .collect()
    };
    let corpus: Vec<Vec<String>> = match config.corpus_kind {
        CorpusKind::Emo => all_examples.iter().map(|ex| emo_line(ex)).collect(),
        CorpusKind::Generic => (0..all_examples.len())
            .map(|_| generic_line(&mut rng))
            .collect(),
        CorpusKind::Mixed => all_examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                if i % 2 == 0 {
                    emo_line(ex)
                } else {
                    generic_line(&mut rng)
                }
            })
            .collect(),
    };

    Ok(Synthetic {
        train: ClozeDataset {
            label_names: label_names.clone(),
            examples: train,
        },
        dev: ClozeDataset {
            label_names: label_names.clone(),
            examples: dev,
        },
        label_names,
        corpus,
        cue_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            num_classes: 3,
            train_per_class: 20,
            dev_per_class: 5,
            vocab_size: 40,
            corpus_kind: CorpusKind::Emo,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let a = generate_synthetic_cloze(&small_config()).unwrap();
        let b = generate_synthetic_cloze(&small_config()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn six_class_default_is_balanced() {
        let config = SyntheticConfig {
            train_per_class: 400,
            dev_per_class: 100,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic_cloze(&config).unwrap();
        assert_eq!(data.train.examples.len(), 2400);
        assert_eq!(data.dev.examples.len(), 600);
        let mut counts = vec![0usize; 6];
        for ex in &data.train.examples {
            counts[ex.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 400));
    }

    #[test]
    fn cue_tokens_are_disjoint_across_classes() {
        let data = generate_synthetic_cloze(&small_config()).unwrap();
        // scan the generated examples: any cue token may only occur in
        // examples of its own class
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (cls, cues) in data.cue_tokens.iter().enumerate() {
            for cue in cues {
                owner.insert(cue.as_str(), cls);
            }
        }
        let mut seen: HashMap<&str, HashSet<usize>> = HashMap::new();
        for ex in data.train.examples.iter().chain(&data.dev.examples) {
            for t in &ex.tokens {
                if let Some(&cls) = owner.get(t.as_str()) {
                    assert_eq!(cls, ex.label, "cue {t} leaked into class {}", ex.label);
                    seen.entry(t.as_str()).or_default().insert(ex.label);
                }
            }
        }
        for (_, classes) in seen {
            assert_eq!(classes.len(), 1);
        }
    }

    #[test]
    fn every_example_has_exactly_one_target_and_a_cue() {
        let data = generate_synthetic_cloze(&small_config()).unwrap();
        for ex in data.train.examples.iter().chain(&data.dev.examples) {
            let targets = ex.tokens.iter().filter(|t| t.as_str() == TARGET).count();
            assert_eq!(targets, 1);
            assert_eq!(ex.tokens[ex.target_index], TARGET);
            let cues = ex
                .tokens
                .iter()
                .filter(|t| data.cue_tokens[ex.label].contains(t))
                .count();
            assert!(cues >= 1);
        }
    }

    #[test]
    fn corpus_replaces_placeholder_with_class_word() {
        let data = generate_synthetic_cloze(&small_config()).unwrap();
        assert_eq!(
            data.corpus.len(),
            data.train.examples.len() + data.dev.examples.len()
        );
        for (line, ex) in data.corpus.iter().zip(&data.train.examples) {
            assert_eq!(line[ex.target_index], data.label_names[ex.label]);
            assert!(!line.contains(&TARGET.to_string()));
        }
    }

    #[test]
    fn parameter_bounds_are_validated() {
        let mut config = small_config();
        config.num_classes = 1;
        assert!(matches!(
            generate_synthetic_cloze(&config),
            Err(Error::Config(_))
        ));
        let mut config = small_config();
        config.vocab_size = 5;
        assert!(generate_synthetic_cloze(&config).is_err());
    }

    #[test]
    fn cloze_tsv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("emocloze-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("train.tsv");
        let data = generate_synthetic_cloze(&small_config()).unwrap();
        save_cloze_tsv(&path, &data.train).unwrap();
        let loaded = load_cloze_tsv(&path).unwrap();
        assert_eq!(loaded, data.train);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_placeholder_is_rejected_with_line_number() {
        let dir = std::env::temp_dir().join(format!("emocloze-data2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.tsv");
        std::fs::write(
            &path,
            "#labels\ta,b\na\tok [#TARGETWORD#] fine\nb\tno placeholder here\n",
        )
        .unwrap();
        let err = load_cloze_tsv(&path).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 3),
            other => panic!("expected data error, got {other}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn double_placeholder_is_rejected() {
        let dir = std::env::temp_dir().join(format!("emocloze-data3-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad2.tsv");
        std::fs::write(
            &path,
            "#labels\ta,b\na\t[#TARGETWORD#] and [#TARGETWORD#]\n",
        )
        .unwrap();
        let err = load_cloze_tsv(&path).unwrap_err();
        assert!(matches!(err, Error::Data { line: 2, .. }));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_label_is_rejected_with_line_number() {
        let dir = std::env::temp_dir().join(format!("emocloze-data4-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad3.tsv");
        std::fs::write(&path, "#labels\ta,b\nzzz\tsome [#TARGETWORD#] text\n").unwrap();
        let err = load_cloze_tsv(&path).unwrap_err();
        assert!(matches!(err, Error::Data { line: 2, .. }));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn example_line_parses_target_index() {
        let dir = std::env::temp_dir().join(format!("emocloze-data5-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.tsv");
        std::fs::write(
            &path,
            "#labels\tanger,disgust,fear,joy,sadness,surprise\nsadness\tI feel [#TARGETWORD#] today\n",
        )
        .unwrap();
        let data = load_cloze_tsv(&path).unwrap();
        assert_eq!(data.examples.len(), 1);
        assert_eq!(data.examples[0].target_index, 2);
        assert_eq!(data.examples[0].label, 4);
        std::fs::remove_dir_all(&dir).ok();
    }
}
