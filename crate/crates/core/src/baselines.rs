//! Non-neural baselines: TF-IDF bag-of-words and bag-of-embeddings
//! centroids, fed to a one-vs-rest linear max-margin classifier. The two
//! feature extractors are interchangeable strategies behind `Featurizer`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::Tensor;
use crate::text::{Vocabulary, UNK_ID};

/// Sparse feature vector over vocabulary dimensions; zero entries are not
/// stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        SparseVector { entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &w)| (i, w))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, w)| w * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize(&mut self) {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for (_, w) in &mut self.entries {
                *w /= norm;
            }
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, w)| w * dense.get(i).copied().unwrap_or(0.0))
            .sum()
    }
}

/// Smoothed inverse document frequencies: `ln((1+N)/(1+df)) + 1`.
#[derive(Clone, Debug)]
pub struct IdfTable {
    pub idf: Vec<f64>,
}

/// TF-IDF vectors (raw counts times smoothed idf, L2-normalized) for every
/// document, plus the idf table fitted on this corpus.
pub fn bow_tfidf(docs: &[Vec<usize>], vocab: &Vocabulary) -> (Vec<SparseVector>, IdfTable) {
    let v = vocab.len();
    let n = docs.len();
    let mut df = vec![0u64; v];
    for doc in docs {
        let mut seen = vec![false; v];
        for &id in doc {
            if id < v && !seen[id] {
                seen[id] = true;
                df[id] += 1;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();

    let vectors = docs
        .iter()
        .map(|doc| {
            let mut counts = vec![0.0f64; v];
            for &id in doc {
                if id < v {
                    counts[id] += 1.0;
                }
            }
            let mut sv = SparseVector::new(
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0.0)
                    .map(|(i, &c)| (i, c * idf[i]))
                    .collect(),
            );
            sv.normalize();
            sv
        })
        .collect();
    (vectors, IdfTable { idf })
}

/// Applies a fitted idf table to a new document.
pub fn bow_tfidf_transform(doc: &[usize], idf: &IdfTable) -> SparseVector {
    let v = idf.idf.len();
    let mut counts = vec![0.0f64; v];
    for &id in doc {
        if id < v {
            counts[id] += 1.0;
        }
    }
    let mut sv = SparseVector::new(
        counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(i, &c)| (i, c * idf.idf[i]))
            .collect(),
    );
    sv.normalize();
    sv
}

/// Mean of the embedding rows of the in-vocabulary tokens; OOV tokens use
/// the `<unk>` row; an empty token list gives the zero vector.
pub fn boe_centroid(tokens: &[String], matrix: &Tensor, vocab: &Vocabulary) -> Vec<f64> {
    let dim = matrix.shape()[1];
    let mut centroid = vec![0.0; dim];
    if tokens.is_empty() {
        return centroid;
    }
    for token in tokens {
        let id = vocab.id_of(token).unwrap_or(UNK_ID);
        for (c, &x) in centroid.iter_mut().zip(&matrix.values()[id * dim..(id + 1) * dim]) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= tokens.len() as f64;
    }
    centroid
}

/// One-vs-rest linear classifiers trained by full-batch subgradient
/// descent on L2-regularized hinge loss; the regularization strength maps
/// the conventional `C` as `lambda = 1 / (C * N)`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    /// Per-class weight rows, one extra column for the bias.
    pub weights: Vec<Vec<f64>>,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct MaxMarginConfig {
    pub c: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for MaxMarginConfig {
    fn default() -> Self {
        MaxMarginConfig {
            c: 0.6,
            epochs: 200,
            lr: 0.5,
        }
    }
}

pub fn train_linear_maxmargin(
    features: &[SparseVector],
    labels: &[usize],
    num_classes: usize,
    dim: usize,
    config: &MaxMarginConfig,
    seed: u64,
) -> Result<LinearModel> {
    if features.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::config("empty training set".to_string()));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::config(
            "max-margin training needs at least two classes present".to_string(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let _ = ChaCha8Rng::seed_from_u64(seed); // zero init; seed kept for interface stability
    let n = features.len();
    let lambda = 1.0 / (config.c * n as f64);
    // bias as an extra always-1 feature
    let width = dim + 1;
    let mut weights = vec![vec![0.0f64; width]; num_classes];

    for epoch in 0..config.epochs {
        let lr = config.lr / (1.0 + epoch as f64 * 0.1);
        for (class, w) in weights.iter_mut().enumerate() {
            let mut grad = vec![0.0f64; width];
            // lambda * w from the regularizer
            for (g, &wi) in grad.iter_mut().zip(w.iter()) {
                *g = lambda * wi;
            }
            for (sv, &label) in features.iter().zip(labels) {
                let y = if label == class { 1.0 } else { -1.0 };
                let score = sv.dot(&w[..dim]) + w[dim];
                if y * score < 1.0 {
                    // subgradient of mean hinge
                    for &(i, x) in sv.entries() {
                        grad[i] -= y * x / n as f64;
                    }
                    grad[dim] -= y / n as f64;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= lr * g;
            }
        }
    }
    Ok(LinearModel { weights, dim })
}

/// Argmax over per-class scores; ties go to the lowest class index.
pub fn predict_linear(features: &[SparseVector], model: &LinearModel) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(features.len());
    for sv in features {
        if let Some(&(max_idx, _)) = sv.entries().last() {
            if max_idx >= model.dim {
                return Err(Error::shape(format!(
                    "feature index {max_idx} out of range for width {}",
                    model.dim
                )));
            }
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (class, w) in model.weights.iter().enumerate() {
            let score = sv.dot(&w[..model.dim]) + w[model.dim];
            if score > best_score {
                best_score = score;
                best = class;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Feature-extraction strategy for the baseline classifier.
pub trait Featurizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fits on the training documents and returns `(features, transform)`;
    /// the transform maps unseen documents into the same space.
    fn fit(
        &self,
        train_tokens: &[Vec<String>],
        vocab: &Vocabulary,
        embeddings: Option<&Tensor>,
    ) -> Result<(Vec<SparseVector>, Box<dyn Fn(&[String]) -> SparseVector>, usize)>;
}

/// TF-IDF bag-of-words features.
struct BowTfidf;

impl Featurizer for BowTfidf {
    fn name(&self) -> &'static str {
        "bow"
    }

    fn fit(
        &self,
        train_tokens: &[Vec<String>],
        vocab: &Vocabulary,
        _embeddings: Option<&Tensor>,
    ) -> Result<(Vec<SparseVector>, Box<dyn Fn(&[String]) -> SparseVector>, usize)> {
        let docs: Vec<Vec<usize>> = train_tokens.iter().map(|t| vocab.encode(t)).collect();
        let (features, idf) = bow_tfidf(&docs, vocab);
        let dim = vocab.len();
        let vocab = vocab.clone();
        let transform = Box::new(move |tokens: &[String]| {
            bow_tfidf_transform(&vocab.encode(tokens), &idf)
        });
        Ok((features, transform, dim))
    }
}

/// Centroid-of-embeddings features; requires a trained embedding matrix.
struct BoeCentroid;

impl Featurizer for BoeCentroid {
    fn name(&self) -> &'static str {
        "boe"
    }

    fn fit(
        &self,
        train_tokens: &[Vec<String>],
        vocab: &Vocabulary,
        embeddings: Option<&Tensor>,
    ) -> Result<(Vec<SparseVector>, Box<dyn Fn(&[String]) -> SparseVector>, usize)> {
        let matrix = embeddings
            .ok_or_else(|| {
                Error::config("the boe featurizer requires trained embeddings".to_string())
            })?
            .clone();
        let dim = matrix.shape()[1];
        let features = train_tokens
            .iter()
            .map(|t| SparseVector::from_dense(&boe_centroid(t, &matrix, vocab)))
            .collect();
        let vocab = vocab.clone();
        let transform = Box::new(move |tokens: &[String]| {
            SparseVector::from_dense(&boe_centroid(tokens, &matrix, &vocab))
        });
        Ok((features, transform, dim))
    }
}

/// Baseline featurizers, keyed by CLI name.
pub fn featurizers() -> Registry<dyn Featurizer> {
    let mut registry: Registry<dyn Featurizer> = Registry::new("baseline featurizer");
    registry.register("bow", Box::new(BowTfidf));
    registry.register("boe", Box::new(BoeCentroid));
    registry
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(corpus: &[Vec<String>]) -> Vocabulary {
        Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap()
    }

    #[test]
    fn idf_of_everywhere_token_is_exactly_one() {
        let corpus: Vec<Vec<String>> = (0..4)
            .map(|i| vec!["common".to_string(), format!("unique{i}")])
            .collect();
        let vocab = vocab_of(&corpus);
        let docs: Vec<Vec<usize>> = corpus.iter().map(|t| vocab.encode(t)).collect();
        let (_, idf) = bow_tfidf(&docs, &vocab);
        let id = vocab.id_of("common").unwrap();
        assert_eq!(idf.idf[id], 1.0);
    }

    #[test]
    fn tfidf_vectors_are_unit_or_zero_norm() {
        let corpus: Vec<Vec<String>> = vec![
            vec!["a".into(), "b".into(), "a".into()],
            vec!["c".into()],
            vec![],
        ];
        let vocab = vocab_of(&corpus);
        let docs: Vec<Vec<usize>> = corpus.iter().map(|t| vocab.encode(t)).collect();
        let (vectors, _) = bow_tfidf(&docs, &vocab);
        assert!((vectors[0].l2_norm() - 1.0).abs() < 1e-12);
        assert!((vectors[1].l2_norm() - 1.0).abs() < 1e-12);
        assert_eq!(vectors[2].l2_norm(), 0.0); // empty document -> zero vector
    }

    #[test]
    fn centroid_of_single_token_is_its_row() {
        let corpus: Vec<Vec<String>> = vec![vec!["x".into(), "y".into()]];
        let vocab = vocab_of(&corpus);
        let dim = 3;
        let matrix = Tensor::matrix(
            vocab.len(),
            dim,
            (0..vocab.len() * dim).map(|i| i as f64).collect(),
        )
        .unwrap();
        let id = vocab.id_of("x").unwrap();
        let centroid = boe_centroid(&["x".to_string()], &matrix, &vocab);
        assert_eq!(centroid, matrix.values()[id * dim..(id + 1) * dim].to_vec());
    }

    #[test]
    fn centroid_is_mean_and_permutation_invariant() {
        let corpus: Vec<Vec<String>> = vec![vec!["u".into(), "v".into()]];
        let vocab = vocab_of(&corpus);
        let dim = 2;
        let matrix = Tensor::matrix(
            vocab.len(),
            dim,
            (0..vocab.len() * dim).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let a = boe_centroid(&["u".into(), "v".into()], &matrix, &vocab);
        let b = boe_centroid(&["v".into(), "u".into()], &matrix, &vocab);
        assert_eq!(a, b);
        let iu = vocab.id_of("u").unwrap();
        let iv = vocab.id_of("v").unwrap();
        for d in 0..dim {
            let expected =
                (matrix.values()[iu * dim + d] + matrix.values()[iv * dim + d]) / 2.0;
            assert!((a[d] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_tokens_give_zero_centroid() {
        let corpus: Vec<Vec<String>> = vec![vec!["z".into()]];
        let vocab = vocab_of(&corpus);
        let matrix = Tensor::matrix(vocab.len(), 2, vec![1.0; vocab.len() * 2]).unwrap();
        assert_eq!(boe_centroid(&[], &matrix, &vocab), vec![0.0, 0.0]);
    }

    /// Separable 2-D points: class 0 around (1, 0), class 1 around (-1, 0).
    fn separable_points() -> (Vec<SparseVector>, Vec<usize>) {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64) * 0.01;
            features.push(SparseVector::from_dense(&[1.0 + jitter, jitter]));
            labels.push(0);
            features.push(SparseVector::from_dense(&[-1.0 - jitter, -jitter]));
            labels.push(1);
        }
        (features, labels)
    }

    #[test]
    fn separable_points_reach_full_training_accuracy() {
        let (features, labels) = separable_points();
        let model =
            train_linear_maxmargin(&features, &labels, 2, 2, &MaxMarginConfig::default(), 0)
                .unwrap();
        let predictions = predict_linear(&features, &model).unwrap();
        assert_eq!(predictions, labels);
    }

    #[test]
    fn duplicated_training_points_keep_the_decision_function() {
        let (features, labels) = separable_points();
        let model =
            train_linear_maxmargin(&features, &labels, 2, 2, &MaxMarginConfig::default(), 0)
                .unwrap();
        let mut doubled_features = features.clone();
        doubled_features.extend(features.iter().cloned());
        let mut doubled_labels = labels.clone();
        doubled_labels.extend(labels.iter().copied());
        let doubled = train_linear_maxmargin(
            &doubled_features,
            &doubled_labels,
            2,
            2,
            &MaxMarginConfig::default(),
            0,
        )
        .unwrap();
        // the average hinge loss is scale invariant; predictions agree
        let probes: Vec<SparseVector> = (0..40)
            .map(|i| {
                let x = (i as f64 - 20.0) / 5.0;
                SparseVector::from_dense(&[x, 0.3 * x])
            })
            .collect();
        assert_eq!(
            predict_linear(&probes, &model).unwrap(),
            predict_linear(&probes, &doubled).unwrap()
        );
    }

    #[test]
    fn zero_epoch_training_predicts_class_zero_everywhere() {
        let (features, labels) = separable_points();
        let config = MaxMarginConfig {
            epochs: 0,
            ..MaxMarginConfig::default()
        };
        let model = train_linear_maxmargin(&features, &labels, 2, 2, &config, 0).unwrap();
        let predictions = predict_linear(&features, &model).unwrap();
        assert!(predictions.iter().all(|&p| p == 0));
    }

    #[test]
    fn single_class_data_is_rejected() {
        let features = vec![SparseVector::from_dense(&[1.0])];
        let labels = vec![0];
        assert!(train_linear_maxmargin(
            &features,
            &labels,
            2,
            1,
            &MaxMarginConfig::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn predict_matches_dot_product_oracle() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let model = LinearModel {
            weights: (0..3)
                .map(|_| (0..dim + 1).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            dim,
        };
        for _ in 0..10 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sv = SparseVector::from_dense(&x);
            let predicted = predict_linear(std::slice::from_ref(&sv), &model).unwrap()[0];
            // brute-force score computation
            let mut scores = Vec::new();
            for w in &model.weights {
                let s: f64 = x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[dim];
                scores.push(s);
            }
            let oracle = crate::model::argmax(&scores);
            assert_eq!(predicted, oracle);
        }
    }

    #[test]
    fn featurizer_registry_has_both_strategies() {
        let registry = featurizers();
        assert!(registry.get("bow").is_some());
        assert!(registry.get("boe").is_some());
        assert!(registry.get("tfidf").is_none());
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let model = LinearModel {
            weights: vec![vec![0.0; 3]],
            dim: 2,
        };
        let sv = SparseVector::from_dense(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            predict_linear(std::slice::from_ref(&sv), &model),
            Err(Error::Shape(_))
        ));
    }
}
