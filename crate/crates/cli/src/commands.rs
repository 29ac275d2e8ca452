//! Subcommand implementations. Each returns the process exit code on
//! success; errors bubble up and map to exit codes in `main`.

use std::collections::BTreeMap;
use std::process::ExitCode;

use emocloze::checkpoint::{Checkpoint, ModelKind};
use emocloze::data::{
    generate_synthetic_cloze, load_cloze_tsv, load_corpus, load_labeled_tsv, save_cloze_tsv,
    save_corpus, save_labeled_tsv, ClozeDataset, CorpusKind, LabeledDataset, SyntheticConfig,
};
use emocloze::ensemble::{combine_files, combiners, Prediction, PredictionFile, PredictionRow};
use emocloze::error::{Error, Result};
use emocloze::gradcheck::run_suite;
use emocloze::metrics::{confusion_matrix, macro_f1};
use emocloze::model::{LmConfig, ModelConfig};
use emocloze::optim::AdamConfig;
use emocloze::pretrain::{
    export_text, finetune_language_model, train_language_model, train_sentiment, train_word2vec,
    LmTrainOptions, SentimentOptions, SkipGramConfig,
};
use emocloze::transfer::{
    fine_tune, transfer_schemes, Encoded, FtMode, SchemeContext, TrainConfig,
};

use crate::settings::FileSettings;
use crate::{
    EnsembleArgs, EvaluateArgs, FinetuneArgs, GenDataArgs, GradcheckArgs, ModelArgs,
    PretrainEmbArgs, PretrainLmArgs, PretrainSentArgs, TrainArgs,
};

const OK: ExitCode = ExitCode::SUCCESS;

fn resolve_model(args: &ModelArgs, file: &FileSettings) -> Result<ModelConfig> {
    let defaults = ModelConfig::default();
    Ok(ModelConfig {
        vocab_size: 0, // filled by the scheme or trainer
        embedding_dim: file.resolve(args.embedding_dim, "embedding-dim", defaults.embedding_dim)?,
        lstm_size: file.resolve(args.lstm_size, "lstm-size", defaults.lstm_size)?,
        num_lstm_layers: file.resolve(args.lstm_layers, "lstm-layers", defaults.num_lstm_layers)?,
        bidirectional: file.resolve_flag(args.bidirectional, "bidirectional")?,
        num_classes: defaults.num_classes,
        embedding_noise: file.resolve(
            args.embedding_noise,
            "embedding-noise",
            defaults.embedding_noise,
        )?,
        embedding_dropout: file.resolve(
            args.embedding_dropout,
            "embedding-dropout",
            defaults.embedding_dropout,
        )?,
        lstm_dropout: file.resolve(args.lstm_dropout, "lstm-dropout", defaults.lstm_dropout)?,
        use_concat: false,
    })
}

fn resolve_train(args: &TrainArgs, file: &FileSettings) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        batch_size: file.resolve(args.batch_size, "batch-size", defaults.batch_size)?,
        clip_norm: file.resolve(args.clip_norm, "clip-norm", defaults.clip_norm)?,
        max_epochs: file.resolve(args.epochs, "epochs", defaults.max_epochs)?,
        patience: file.resolve(args.patience, "patience", defaults.patience)?,
        optimizer: AdamConfig {
            lr: file.resolve(args.lr, "lr", AdamConfig::default().lr)?,
            ..AdamConfig::default()
        },
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
    })
}

fn resolve_ft_mode(
    ft_mode: Option<&str>,
    sgu_n: Option<usize>,
    sgu_k: Option<usize>,
    file: &FileSettings,
) -> Result<FtMode> {
    let mode = match ft_mode {
        Some(m) => m.to_string(),
        None => file.resolve(None, "ft-mode", "simple".to_string())?,
    };
    match mode.as_str() {
        "simple" => Ok(FtMode::Simple),
        "sgu" => {
            let n = file.resolve(sgu_n, "sgu-n", 3)?;
            let k = file.resolve(sgu_k, "sgu-k", 5)?;
            // validate now so bad schedules fail before training starts
            emocloze::transfer::SguSchedule::new(n, k)?;
            Ok(FtMode::Sgu { n, k })
        }
        other => Err(Error::config(format!(
            "unknown fine-tune mode `{other}` (available: simple, sgu)"
        ))),
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let file = FileSettings::load(args.config.as_deref())?;
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        num_classes: file.resolve(args.classes, "classes", defaults.num_classes)?,
        train_per_class: file.resolve(
            args.train_per_class,
            "train-per-class",
            defaults.train_per_class,
        )?,
        dev_per_class: file.resolve(args.dev_per_class, "dev-per-class", defaults.dev_per_class)?,
        vocab_size: file.resolve(args.vocab_size, "vocab-size", defaults.vocab_size)?,
        corpus_kind: file
            .resolve(
                args.corpus_kind,
                "corpus-kind",
                // default flavor: class-word lines
                "emo".to_string(),
            )?
            .parse::<CorpusKind>()?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
    };
    let data = generate_synthetic_cloze(&config)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let train_path = args.out_dir.join("train.tsv");
    let dev_path = args.out_dir.join("dev.tsv");
    let corpus_path = args.out_dir.join("corpus.txt");
    let labeled_path = args.out_dir.join("labeled.tsv");
    save_cloze_tsv(&train_path, &data.train)?;
    save_cloze_tsv(&dev_path, &data.dev)?;
    save_corpus(&corpus_path, &data.corpus)?;
    // labeled variant: the corpus lines with their class labels, for
    // classifier pretraining
    let labeled = LabeledDataset {
        label_names: data.label_names.clone(),
        examples: data
            .train
            .examples
            .iter()
            .map(|ex| {
                let mut tokens = ex.tokens.clone();
                tokens[ex.target_index] = data.label_names[ex.label].clone();
                emocloze::data::LabeledText {
                    label: ex.label,
                    tokens,
                }
            })
            .collect(),
    };
    save_labeled_tsv(&labeled_path, &labeled)?;

    println!(
        "generated {} train / {} dev examples over {} classes (seed {})",
        data.train.examples.len(),
        data.dev.examples.len(),
        config.num_classes,
        config.seed
    );
    for (label, cues) in data.label_names.iter().zip(&data.cue_tokens) {
        println!("  class {label}: cues {}", cues.join(", "));
    }
    println!(
        "wrote {}, {}, {} ({} lines), {}",
        train_path.display(),
        dev_path.display(),
        corpus_path.display(),
        data.corpus.len(),
        labeled_path.display()
    );
    Ok(OK)
}

pub fn pretrain_emb(args: PretrainEmbArgs) -> Result<ExitCode> {
    let file = FileSettings::load(args.config.as_deref())?;
    let defaults = SkipGramConfig::default();
    let config = SkipGramConfig {
        dim: file.resolve(args.dim, "dim", defaults.dim)?,
        window: file.resolve(args.window, "window", defaults.window)?,
        negatives: file.resolve(args.negatives, "negatives", defaults.negatives)?,
        min_count: file.resolve(args.min_count, "min-count", defaults.min_count)?,
        epochs: file.resolve(args.epochs, "epochs", defaults.epochs)?,
        lr: file.resolve(args.lr, "lr", defaults.lr)?,
    };
    let seed = file.resolve(args.seed, "seed", 7)?;
    let corpus_lines = load_corpus(&args.corpus)?;
    let corpus: Vec<Vec<String>> = corpus_lines.into_iter().map(|(_, t)| t).collect();
    let trained = train_word2vec(&corpus, &config, seed)?;

    let mut metrics = BTreeMap::new();
    if let Some(&final_loss) = trained.epoch_losses.last() {
        metrics.insert("final_loss".to_string(), final_loss);
    }
    let ckpt = Checkpoint::from_embedding(&trained.matrix, trained.vocab.clone(), metrics);
    ckpt.write(&args.out)?;
    if let Some(text_out) = &args.text_out {
        export_text(&trained, text_out)?;
    }
    println!(
        "trained {}-dim embeddings over {} tokens; final loss {:.4}",
        config.dim,
        trained.vocab.len(),
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("wrote {}", args.out.display());
    Ok(OK)
}

pub fn pretrain_lm(args: PretrainLmArgs) -> Result<ExitCode> {
    let file = FileSettings::load(args.training.config.as_deref())?;
    let train = resolve_train(&args.training, &file)?;
    let model_args = resolve_model(&args.model, &file)?;
    if model_args.bidirectional {
        return Err(Error::config(
            "language models are unidirectional".to_string(),
        ));
    }
    let corpus = load_corpus(&args.corpus)?;

    let (ckpt, perplexity) = match &args.init_from {
        None => {
            let options = LmTrainOptions {
                model: LmConfig {
                    vocab_size: 0,
                    embedding_dim: model_args.embedding_dim,
                    lstm_size: model_args.lstm_size,
                    num_lstm_layers: model_args.num_lstm_layers,
                    embedding_noise: model_args.embedding_noise,
                    embedding_dropout: model_args.embedding_dropout,
                    lstm_dropout: model_args.lstm_dropout,
                },
                vocab_max: Some(file.resolve(args.vocab_max, "vocab-max", 50_000)?),
                min_count: file.resolve(args.min_count, "min-count", 1)?,
                train: train.clone(),
            };
            let trained = train_language_model(&corpus, &options, train.seed)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("perplexity".to_string(), trained.final_perplexity);
            (
                Checkpoint::from_lm(&trained.model, trained.vocab, trained.history, metrics),
                trained.final_perplexity,
            )
        }
        Some(init_path) => {
            let source = Checkpoint::read(init_path)?;
            let mut model = source.to_lm()?;
            let vocab = source.meta.vocabulary.clone();
            let mode = resolve_ft_mode(args.ft_mode.as_deref(), args.sgu_n, args.sgu_k, &file)?;
            let policy = mode.policy()?;
            let (history, perplexity) =
                finetune_language_model(&mut model, &vocab, &corpus, policy.as_ref(), &train)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("perplexity".to_string(), perplexity);
            (
                Checkpoint::from_lm(&model, vocab, history, metrics),
                perplexity,
            )
        }
    };
    ckpt.write(&args.out)?;
    println!(
        "language model over {} tokens; training perplexity {:.4}",
        ckpt.meta.vocabulary.len(),
        perplexity
    );
    println!("wrote {}", args.out.display());
    Ok(OK)
}

pub fn pretrain_sent(args: PretrainSentArgs) -> Result<ExitCode> {
    let file = FileSettings::load(args.training.config.as_deref())?;
    let train_config = resolve_train(&args.training, &file)?;
    let model = resolve_model(&args.model, &file)?;
    let dataset = load_labeled_tsv(&args.train)?;
    let embeddings = match &args.embeddings {
        Some(path) => Some(Checkpoint::read(path)?),
        None => None,
    };
    let options = SentimentOptions {
        model,
        train: train_config.clone(),
        freeze_embedding: match args.freeze_embedding {
            Some(v) => v,
            None => file.resolve_flag(false, "freeze-embedding")?,
        },
    };
    let trained = train_sentiment(&dataset, embeddings.as_ref(), &options, train_config.seed)?;
    let last_f1 = trained
        .history
        .last()
        .and_then(|r| r.train_macro_f1)
        .unwrap_or(0.0);
    let mut metrics = BTreeMap::new();
    metrics.insert("train_macro_f1".to_string(), last_f1);
    let ckpt = Checkpoint::from_classifier(
        &trained.model,
        trained.vocab.clone(),
        trained.history,
        metrics,
    );
    ckpt.write(&args.out)?;
    println!(
        "sentiment classifier over {} classes; train macro-F1 {:.4}",
        dataset.label_names.len(),
        last_f1
    );
    println!("wrote {}", args.out.display());
    Ok(OK)
}

pub fn finetune(args: FinetuneArgs) -> Result<ExitCode> {
    let file = FileSettings::load(args.training.config.as_deref())?;
    let train_config = resolve_train(&args.training, &file)?;
    let mut model_config = resolve_model(&args.model, &file)?;
    model_config.use_concat = file.resolve_flag(args.concat, "concat")?;
    // reject impossible combinations before any training
    if model_config.use_concat && model_config.bidirectional {
        return Err(Error::config(
            "the concatenation method requires a unidirectional model".to_string(),
        ));
    }
    let mode = resolve_ft_mode(args.ft_mode.as_deref(), args.sgu_n, args.sgu_k, &file)?;

    let train_data = load_cloze_tsv(&args.train)?;
    let dev_data = load_cloze_tsv(&args.dev)?;
    if dev_data.label_names != train_data.label_names {
        return Err(Error::config(format!(
            "train and dev label sets differ: {:?} vs {:?}",
            train_data.label_names, dev_data.label_names
        )));
    }
    model_config.num_classes = train_data.label_names.len();

    let source = match &args.source {
        Some(path) => Some(Checkpoint::read(path)?),
        None => None,
    };
    let scheme_name = match &args.scheme {
        Some(name) => name.clone(),
        None => match source.as_ref().map(|c| c.meta.kind) {
            None => "random".to_string(),
            Some(ModelKind::Embedding) => "p-emb".to_string(),
            Some(ModelKind::Classifier) => "p-sent".to_string(),
            Some(ModelKind::LanguageModel) => "p-lm".to_string(),
        },
    };
    let registry = transfer_schemes();
    let scheme = registry.resolve(&scheme_name)?;
    let ctx = SchemeContext {
        source: source.as_ref(),
        train: &train_data,
        model: model_config,
        seed: train_config.seed,
        freeze_embedding: args.freeze_embedding,
    };
    let (mut model, vocab) = scheme.build(&ctx)?;

    let encode = |dataset: &ClozeDataset| -> Vec<Encoded> {
        dataset
            .examples
            .iter()
            .map(|e| Encoded::from_cloze(e, &vocab))
            .collect()
    };
    let train_encoded = encode(&train_data);
    let dev_encoded = encode(&dev_data);

    let policy = mode.policy()?;
    let history = fine_tune(
        &mut model,
        &train_encoded,
        &dev_encoded,
        policy.as_ref(),
        &train_config,
    )?;

    for record in &history.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  dev-f1 {:.4}  frozen [{}]",
            record.epoch,
            record.train_loss,
            record.dev_macro_f1.unwrap_or(0.0),
            record.frozen.join(",")
        );
    }
    println!(
        "best dev macro-F1 {:.4} at epoch {} (scheme {scheme_name}, mode {})",
        history.best_dev_f1,
        history.best_epoch,
        policy.name()
    );

    let mut metrics = BTreeMap::new();
    metrics.insert("best_dev_macro_f1".to_string(), history.best_dev_f1);
    metrics.insert("best_epoch".to_string(), history.best_epoch as f64);
    let ckpt = Checkpoint::from_classifier(&model, vocab, history.epochs, metrics);
    ckpt.write(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(OK)
}

fn print_confusion(matrix: &[Vec<u64>], labels: &[String]) {
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(4).max(5);
    print!("{:>width$} ", "gold\\pred");
    for l in labels {
        print!("{l:>width$} ");
    }
    println!();
    for (g, row) in matrix.iter().enumerate() {
        print!("{:>width$} ", labels[g]);
        for &count in row {
            print!("{count:>width$} ");
        }
        println!();
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::read(&args.model)?;
    let model = ckpt.to_classifier()?;
    let vocab = &ckpt.meta.vocabulary;
    let data = load_cloze_tsv(&args.data)?;
    if data.label_names.len() != model.config.num_classes {
        return Err(Error::config(format!(
            "dataset declares {} labels but the model has {} classes",
            data.label_names.len(),
            model.config.num_classes
        )));
    }

    let mut rows = Vec::with_capacity(data.examples.len());
    let mut predictions = Vec::with_capacity(data.examples.len());
    let mut golds = Vec::with_capacity(data.examples.len());
    for (i, example) in data.examples.iter().enumerate() {
        let encoded = Encoded::from_cloze(example, vocab);
        let output = model.forward(&encoded.ids, encoded.target_index)?;
        predictions.push(emocloze::model::argmax(&output.posterior));
        golds.push(example.label);
        rows.push(PredictionRow {
            id: format!("e{i}"),
            gold: example.label,
            prediction: Prediction::Posterior(output.posterior),
        });
    }
    let f1 = macro_f1(&predictions, &golds, model.config.num_classes)?;
    let matrix = confusion_matrix(&predictions, &golds, model.config.num_classes)?;

    let prediction_file = PredictionFile {
        label_names: data.label_names.clone(),
        rows,
    };
    prediction_file.write(&args.predictions_out)?;

    println!("examples: {}", data.examples.len());
    println!("macro-F1: {f1:.6}");
    print_confusion(&matrix, &data.label_names);
    println!("wrote {}", args.predictions_out.display());
    Ok(OK)
}

pub fn ensemble(args: EnsembleArgs) -> Result<ExitCode> {
    let registry = combiners();
    let combiner = registry.resolve(&args.method)?;
    let files: Result<Vec<PredictionFile>> =
        args.predictions.iter().map(PredictionFile::read).collect();
    let files = files?;
    let combined = combine_files(&files, combiner)?;

    let num_classes = files[0].num_classes();
    let predictions: Vec<usize> = combined.iter().map(|r| r.prediction.hard_vote()).collect();
    let golds: Vec<usize> = combined.iter().map(|r| r.gold).collect();
    let f1 = macro_f1(&predictions, &golds, num_classes)?;

    let out_file = PredictionFile {
        label_names: files[0].label_names.clone(),
        rows: combined,
    };
    out_file.write(&args.out)?;

    println!(
        "combined {} files with {} over {} examples",
        files.len(),
        combiner.name(),
        predictions.len()
    );
    println!("macro-F1: {f1:.6}");
    println!("wrote {}", args.out.display());
    Ok(OK)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let started = std::time::Instant::now();
    let reports = run_suite(args.seeds, args.eps, args.tolerance)?;
    let mut all_pass = true;
    for report in &reports {
        println!(
            "{:<12} max rel err {:>12.3e} over {} seeds  {}",
            report.layer,
            report.max_rel_err,
            report.seeds,
            if report.pass { "ok" } else { "FAIL" }
        );
        all_pass &= report.pass;
    }
    println!(
        "checked {} layer kinds in {:.2}s (eps {:.1e}, tolerance {:.1e})",
        reports.len(),
        started.elapsed().as_secs_f64(),
        args.eps,
        args.tolerance
    );
    if all_pass {
        Ok(OK)
    } else {
        Ok(ExitCode::from(1))
    }
}

