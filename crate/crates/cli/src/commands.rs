use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dpdlgmm::data::{
    load_csv, load_idx_images, make_synthetic_mixture, mask_labels, split, write_csv, Dataset, DatasetMeta,
};
use dpdlgmm::engine::{argmax, predict_many, responsibilities_for, TraceRecord, Trainer};
use dpdlgmm::metrics::{accuracy, adjusted_rand_index, matched_accuracy};
use dpdlgmm::model::{sample_cluster, EmissionKind};
use dpdlgmm::rng::seeded;

use crate::checkpoint::Checkpoint;
use crate::config::{mixture_spec, parse_pairs, DataSource, RunConfig};
use crate::CliError;

/// Scores of the trained model on the held-out test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutScores {
    pub rows: usize,
    /// Predicted cluster equals the label directly (meaningful when labels were clamped).
    pub accuracy: f64,
    /// Accuracy after the best one-to-one matching of clusters to classes.
    pub matched_accuracy: f64,
    pub ari: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub trace_csv: PathBuf,
    pub trace: Vec<TraceRecord<f64>>,
    pub converged: bool,
    pub train_rows: usize,
    /// Clusters holding more than a twentieth of the training mass.
    pub active_clusters: usize,
    pub train_ari: Option<f64>,
    pub train_matched_accuracy: Option<f64>,
    pub test: Option<HeldOutScores>,
}

/// Options for commands that read a CSV of inputs.
#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Column to drop from the inputs (and use as labels where relevant).
    pub label_column: Option<String>,
    /// Monte-Carlo samples; defaults to the checkpoint's `predict_samples`.
    pub samples: Option<usize>,
    /// Random seed; defaults to the checkpoint's training seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterChoice {
    /// 1-based cluster id.
    One(usize),
    All,
}

impl std::str::FromStr for ClusterChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "all" {
            return Ok(ClusterChoice::All);
        }
        s.parse()
            .map(ClusterChoice::One)
            .map_err(|_| CliError::Usage(format!("cluster must be a positive integer or \"all\", found {s:?}")))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset<f64>> {
    let data = match &cfg.data {
        DataSource::Csv { path, label_column } => load_csv(path, label_column.as_deref())?,
        DataSource::Idx {
            images,
            labels,
            binarize,
        } => load_idx_images(images, labels.as_deref(), *binarize)?,
        DataSource::Synthetic(spec) => make_synthetic_mixture(spec)?,
    };
    if data.is_empty() {
        return Err(CliError::Data("training data has no rows".into()).into());
    }
    check_emission_support(&data.x, cfg.train.architecture.emission)?;
    Ok(data)
}

fn check_emission_support(x: &[Vec<f64>], emission: EmissionKind) -> Result<()> {
    if emission == EmissionKind::Bernoulli {
        if let Some((n, _)) = x
            .iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|&v| v != 0.0 && v != 1.0))
        {
            return Err(CliError::Data(format!(
                "row {n} is not binary; Bernoulli emission needs 0/1 data (set binarize for images)"
            ))
            .into());
        }
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| {
        CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trace(path: &Path, trace: &[TraceRecord<f64>], truncation: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["iter".to_string(), "elbo".to_string()];
    header.extend((1..=truncation).map(|t| format!("N_{t}")));
    header.push("seconds".into());
    w.write_record(&header)?;
    for r in trace {
        let mut row = vec![r.iter.to_string(), real(r.elbo)];
        row.extend(r.counts.iter().map(|&c| real(c)));
        row.push(format!("{:.3}", r.seconds));
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn checkpoint_of(trainer: &Trainer<'_, f64>, cfg: &RunConfig) -> Checkpoint {
    Checkpoint {
        config_text: cfg.to_text(),
        theta: trainer.theta().clone(),
        state: trainer.state().clone(),
        rng: trainer.rng().clone(),
        elbo_seed: trainer.elbo_seed(),
        svi_steps: trainer.svi_steps() as u64,
        trace: trainer.trace().to_vec(),
    }
}

fn held_out_scores(truth: &[usize], predicted: &[usize]) -> Result<HeldOutScores> {
    Ok(HeldOutScores {
        rows: truth.len(),
        accuracy: accuracy(truth, predicted)?,
        matched_accuracy: matched_accuracy(truth, predicted)?,
        ari: adjusted_rand_index(truth, predicted)?,
    })
}

/// Runs a training job described by a config file and writes its outputs.
///
/// The output directory receives `checkpoint.bin`, `trace.csv`,
/// `assignments.csv`, `summary.txt`, numbered checkpoints at the configured
/// cadence and, when a test split exists, `test_predictions.csv`.
pub fn cmd_train(config_path: &Path) -> Result<TrainReport> {
    let cfg = RunConfig::load(config_path)?;
    train_with_config(&cfg)
}

pub fn train_with_config(cfg: &RunConfig) -> Result<TrainReport> {
    let data = load_dataset(cfg)?;
    let (train_set, _valid, test_set) = split(&data, cfg.split, cfg.split_seed)?;
    if train_set.is_empty() {
        return Err(CliError::Data("the train split is empty".into()).into());
    }
    let truth = train_set.full_labels().ok();
    let clamp = if cfg.label_fraction > 0.0 {
        let masked = mask_labels(&train_set, cfg.label_fraction, cfg.label_seed)
            .context("label_fraction > 0 needs fully labelled data")?;
        masked.labels
    } else {
        None
    };

    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;

    let x = &train_set.x;
    let mut trainer = match &cfg.resume {
        None => Trainer::new(x, clamp.as_deref(), cfg.train.clone())?,
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.state.phi.rows() != x.len() {
                return Err(CliError::Data(format!(
                    "checkpoint {} holds {} rows but the training split has {}",
                    path.display(),
                    ckpt.state.phi.rows(),
                    x.len()
                ))
                .into());
            }
            let mut t = Trainer::from_parts(x, cfg.train.clone(), ckpt.theta, ckpt.state, ckpt.rng, ckpt.elbo_seed)?;
            t.restore_history(ckpt.trace, ckpt.svi_steps as usize);
            t
        }
    };

    let truncation = cfg.train.truncation;
    let trace_csv = cfg.output_dir.join("trace.csv");
    let mut converged = trainer.converged();
    while !converged && trainer.trace().len() < cfg.train.max_outer_iters {
        if let Err(e) = trainer.outer_iteration() {
            // Keep what was learned about the run before failing.
            write_trace(&trace_csv, trainer.trace(), truncation)?;
            return Err(e.into());
        }
        let iter = trainer.trace().len();
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
            checkpoint_of(&trainer, cfg).save(&cfg.output_dir.join(format!("checkpoint_{iter:04}.bin")))?;
        }
        converged = trainer.converged();
    }
    let checkpoint = cfg.output_dir.join("checkpoint.bin");
    let ckpt = checkpoint_of(&trainer, cfg);
    ckpt.save(&checkpoint)?;
    write_trace(&trace_csv, trainer.trace(), truncation)?;

    let phi = &trainer.state().phi;
    let hard = phi.hard_assignments();
    let counts = phi.counts();
    let n = x.len() as f64;
    let active_clusters = counts.iter().filter(|&&c| c > n / 20.0).count();
    let mut w = csv_writer(&cfg.output_dir.join("assignments.csv"))?;
    w.write_record(["row", "cluster", "label"])?;
    for (i, &c) in hard.iter().enumerate() {
        let label = truth.as_ref().map_or(String::new(), |t| (t[i] + 1).to_string());
        w.write_record([(i + 1).to_string(), (c + 1).to_string(), label])?;
    }
    w.flush()?;

    let (train_ari, train_matched_accuracy) = match &truth {
        Some(t) => (Some(adjusted_rand_index(t, &hard)?), Some(matched_accuracy(t, &hard)?)),
        None => (None, None),
    };

    let test = if test_set.is_empty() {
        None
    } else {
        let probs = predict_many(
            &test_set.x,
            &trainer.state().gamma,
            &trainer.state().nets,
            trainer.theta(),
            cfg.predict_samples,
            &mut seeded(cfg.train.seed ^ 0x7e57),
        )?;
        let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let test_truth = test_set.full_labels().ok();
        write_predictions(&cfg.output_dir.join("test_predictions.csv"), &probs, test_truth.as_deref())?;
        match test_truth {
            Some(t) => Some(held_out_scores(&t, &predicted)?),
            None => None,
        }
    };

    let last = trainer.trace().last();
    let mut summary = String::new();
    summary += &format!("converged = {converged}\n");
    summary += &format!("iterations = {}\n", trainer.trace().len());
    summary += &format!("final_elbo = {}\n", last.map_or(f64::NAN, |r| r.elbo));
    summary += &format!("train_rows = {}\n", x.len());
    summary += &format!("active_clusters = {active_clusters}\n");
    if let (Some(a), Some(m)) = (train_ari, train_matched_accuracy) {
        summary += &format!("train_ari = {a}\ntrain_matched_accuracy = {m}\n");
    }
    if let Some(s) = &test {
        summary += &format!(
            "test_rows = {}\ntest_accuracy = {}\ntest_matched_accuracy = {}\ntest_ari = {}\n",
            s.rows, s.accuracy, s.matched_accuracy, s.ari
        );
    }
    let summary_path = cfg.output_dir.join("summary.txt");
    fs::write(&summary_path, summary).map_err(|e| CliError::Io {
        path: summary_path,
        source: e,
    })?;

    Ok(TrainReport {
        output_dir: cfg.output_dir.clone(),
        checkpoint,
        trace_csv,
        trace: trainer.trace().to_vec(),
        converged,
        train_rows: x.len(),
        active_clusters,
        train_ari,
        train_matched_accuracy,
        test,
    })
}

fn write_predictions(path: &Path, probs: &[Vec<f64>], labels: Option<&[usize]>) -> Result<()> {
    if probs.is_empty() {
        create_file(path)?;
        return Ok(());
    }
    let t = probs[0].len();
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = (1..=t).map(|k| format!("p_{k}")).collect();
    header.push("cluster".into());
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (n, p) in probs.iter().enumerate() {
        let mut row: Vec<String> = p.iter().map(|&v| real(v)).collect();
        row.push((argmax(p) + 1).to_string());
        if let Some(l) = labels {
            row.push((l[n] + 1).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_inputs(ckpt: &Checkpoint, data_path: &Path, opts: &ReadOptions) -> Result<Dataset<f64>> {
    if !data_path.exists() {
        return Err(CliError::MissingPath {
            key: "data".into(),
            path: data_path.to_path_buf(),
        }
        .into());
    }
    let data = load_csv(data_path, opts.label_column.as_deref())?;
    if !data.is_empty() && data.dim() != ckpt.theta.data_dim() {
        return Err(dpdlgmm::Error::Dimension {
            context: "input columns",
            expected: ckpt.theta.data_dim(),
            found: data.dim(),
        }
        .into());
    }
    check_emission_support(&data.x, ckpt.theta.emission_kind())?;
    Ok(data)
}

fn sampling(ckpt: &Checkpoint, opts: &ReadOptions) -> Result<(usize, u64)> {
    let cfg = ckpt.config()?;
    let samples = opts.samples.unwrap_or(cfg.predict_samples);
    if samples == 0 {
        return Err(CliError::Usage("samples must be at least 1".into()).into());
    }
    Ok((samples, opts.seed.unwrap_or(cfg.train.seed)))
}

/// Writes per-cluster predictive probabilities and the argmax cluster
/// (1-based) of every input row. Returns the number of rows.
pub fn cmd_predict(checkpoint: &Path, data_path: &Path, out: &Path, opts: &ReadOptions) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = read_inputs(&ckpt, data_path, opts)?;
    let (samples, seed) = sampling(&ckpt, opts)?;
    let probs = predict_many(
        &data.x,
        &ckpt.state.gamma,
        &ckpt.state.nets,
        &ckpt.theta,
        samples,
        &mut seeded(seed),
    )?;
    write_predictions(out, &probs, None)?;
    Ok(probs.len())
}

/// Ancestral samples from one cluster (1-based) or `count` from every cluster.
pub fn cmd_generate(checkpoint: &Path, which: ClusterChoice, count: usize, out: &Path, seed: Option<u64>) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let truncation = ckpt.theta.truncation();
    let clusters: Vec<usize> = match which {
        ClusterChoice::All => (0..truncation).collect(),
        ClusterChoice::One(k) if (1..=truncation).contains(&k) => vec![k - 1],
        ClusterChoice::One(k) => {
            return Err(CliError::Usage(format!("cluster {k} outside 1..={truncation}")).into());
        }
    };
    let seed = seed.unwrap_or(ckpt.config()?.train.seed);
    let mut rng = seeded(seed);
    let mut x = Vec::with_capacity(count * clusters.len());
    let mut labels = Vec::with_capacity(count * clusters.len());
    for &t in &clusters {
        for _ in 0..count {
            x.push(sample_cluster(&ckpt.theta, t, &mut rng)?.0);
            labels.push(Some(t));
        }
    }
    if x.is_empty() {
        create_file(out)?;
        return Ok(0);
    }
    let rows = x.len();
    write_csv(out, &Dataset::new(x, Some(labels), DatasetMeta::default())?)?;
    Ok(rows)
}

/// Recognition means of layer `layer` (1-based, bottom-up) under each row's
/// most responsible cluster, followed by the full responsibility row.
pub fn cmd_export_latents(checkpoint: &Path, data_path: &Path, layer: usize, out: &Path, opts: &ReadOptions) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let depth = ckpt.theta.depth();
    if !(1..=depth).contains(&layer) {
        return Err(CliError::Usage(format!("layer {layer} outside 1..={depth}")).into());
    }
    let data = read_inputs(&ckpt, data_path, opts)?;
    let (samples, seed) = sampling(&ckpt, opts)?;
    let phi = responsibilities_for(
        &data.x,
        &ckpt.state.gamma,
        &ckpt.state.nets,
        &ckpt.theta,
        samples,
        &mut seeded(seed),
    )?;
    if phi.is_empty() {
        create_file(out)?;
        return Ok(0);
    }
    let width = ckpt.theta.dims()[layer];
    let mut w = csv_writer(out)?;
    let mut header = vec!["cluster".to_string()];
    header.extend((1..=width).map(|j| format!("mu_{j}")));
    header.extend((1..=ckpt.theta.truncation()).map(|t| format!("phi_{t}")));
    w.write_record(&header)?;
    for (xn, row) in data.x.iter().zip(&phi) {
        let t = argmax(row);
        let (g, _) = ckpt.state.nets.head(t, layer - 1).head_forward(xn)?;
        let mut fields = vec![(t + 1).to_string()];
        fields.extend(g.mean().iter().map(|&v| real(v)));
        fields.extend(row.iter().map(|&v| real(v)));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(phi.len())
}

/// Writes the synthetic mixture described by the `synth_*` keys of a config
/// file (other keys are accepted and ignored) as CSV with a `label` column.
pub fn cmd_synth(config_path: &Path, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(config_path).map_err(|e| CliError::Io {
        path: config_path.to_path_buf(),
        source: e,
    })?;
    let map = parse_pairs(&text, &config_path.display().to_string())?;
    let spec = mixture_spec(&map)?;
    let data = make_synthetic_mixture::<f64>(&spec)?;
    write_csv(out, &data)?;
    Ok(data.len())
}
