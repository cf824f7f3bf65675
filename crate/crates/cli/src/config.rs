//! Run configuration files.
//!
//! A config file is plain text with one `key = value` pair per line. Blank
//! lines and everything after `#` are ignored, keys are case-sensitive, and a
//! key may appear at most once. Relative paths are resolved against the
//! directory of the config file. Lists are comma-separated; `none` denotes an
//! empty list or an unset optional value. The full set of keys is documented
//! in the README; [`RunConfig::to_text`] writes every key in canonical form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpdlgmm::data::{MixtureSpec, Nonlinearity};
use dpdlgmm::engine::{PhiInit, SviConfig, TrainConfig};
use dpdlgmm::model::{Architecture, EmissionKind};

use crate::CliError;

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_column: Option<String>,
    },
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
        binarize: Option<f64>,
    },
    Synthetic(MixtureSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig<f64>,
    pub data: DataSource,
    /// Train / validation / test ratios.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Share of training rows whose labels are kept and clamped.
    pub label_fraction: f64,
    pub label_seed: u64,
    pub output_dir: PathBuf,
    /// Write a numbered checkpoint every this many outer iterations (0: final only).
    pub checkpoint_every: usize,
    /// Monte-Carlo samples used when scoring held-out data.
    pub predict_samples: usize,
    pub resume: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "data",
    "data_path",
    "label_column",
    "idx_images",
    "idx_labels",
    "binarize",
    "synth_clusters",
    "synth_per_cluster",
    "synth_latent_dim",
    "synth_data_dim",
    "synth_separation",
    "synth_nonlinearity",
    "synth_noise",
    "synth_seed",
    "split",
    "split_seed",
    "label_fraction",
    "label_seed",
    "truncation",
    "eta",
    "alpha",
    "samples",
    "epochs",
    "max_iters",
    "tol",
    "seed",
    "grad_batch",
    "phi_threshold",
    "grad_clip",
    "init",
    "latent_dims",
    "hidden",
    "emission",
    "svi_batch_size",
    "svi_tau",
    "svi_kappa",
    "output_dir",
    "checkpoint_every",
    "predict_samples",
    "resume",
];

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key = value` lines into a map, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| CliError::Syntax {
            origin: origin.to_string(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, found {line:?}")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(syntax(format!("unknown key {key:?}")));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(syntax(format!("key {key:?} given twice")));
        }
    }
    Ok(map)
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
    base: &'a Path,
    check_paths: bool,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self
            .raw(key)
            .ok_or_else(|| invalid(format!("missing required key {key:?}")))?;
        v.parse().map_err(|_| invalid(format!("{key}: cannot parse {v:?}")))
    }

    fn optional_f64(&self, key: &str, default: Option<f64>) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("none") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| invalid(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        if v == "none" || v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| invalid(format!("{key}: cannot parse element {s:?}")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| {
            let p = Path::new(v);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base.join(p)
            }
        })
    }

    fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.path(key) {
            Some(p) if self.check_paths && !p.exists() => Err(CliError::MissingPath { key: key.to_string(), path: p }),
            other => Ok(other),
        }
    }
}

fn parse_nonlinearity(v: &str) -> Result<Nonlinearity, CliError> {
    match v {
        "tanh" => Ok(Nonlinearity::Tanh),
        "linear" => Ok(Nonlinearity::Linear),
        _ => Err(invalid(format!("synth_nonlinearity: expected tanh or linear, found {v:?}"))),
    }
}

fn parse_emission(v: &str) -> Result<EmissionKind, CliError> {
    match v {
        "gaussian" => Ok(EmissionKind::Gaussian),
        "bernoulli" => Ok(EmissionKind::Bernoulli),
        _ => Err(invalid(format!("emission: expected gaussian or bernoulli, found {v:?}"))),
    }
}

fn parse_init(v: &str) -> Result<PhiInit<f64>, CliError> {
    if v == "kmeans++" {
        return Ok(PhiInit::KMeansPlusPlus);
    }
    if let Some(c) = v.strip_prefix("dirichlet:") {
        let c: f64 = c
            .parse()
            .map_err(|_| invalid(format!("init: cannot parse concentration {c:?}")))?;
        return Ok(PhiInit::Dirichlet(c));
    }
    Err(invalid(format!("init: expected kmeans++ or dirichlet:<c>, found {v:?}")))
}

/// Synthetic mixture settings from `synth_*` keys; all of them are required.
pub fn mixture_spec(map: &BTreeMap<String, String>) -> Result<MixtureSpec, CliError> {
    let r = Reader {
        map,
        base: Path::new("."),
        check_paths: false,
    };
    let spec = MixtureSpec {
        clusters: r.required("synth_clusters")?,
        per_cluster: r.required("synth_per_cluster")?,
        latent_dim: r.required("synth_latent_dim")?,
        data_dim: r.required("synth_data_dim")?,
        separation: r.required("synth_separation")?,
        nonlinearity: parse_nonlinearity(r.raw("synth_nonlinearity").unwrap_or("tanh"))?,
        noise_scale: r.required("synth_noise")?,
        seed: r.parsed("synth_seed", 0)?,
    };
    if spec.clusters == 0 || spec.per_cluster == 0 || spec.latent_dim == 0 || spec.data_dim == 0 {
        return Err(invalid("synthetic cluster count, size and dimensions must be positive"));
    }
    if !(spec.separation >= 0.0) || !(spec.noise_scale >= 0.0) {
        return Err(invalid("synth_separation and synth_noise must be non-negative"));
    }
    Ok(spec)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses config text; relative paths are resolved against `base` and
    /// input paths must exist.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, CliError> {
        Self::parse_with(text, origin, base, true)
    }

    /// Like [`RunConfig::parse`], optionally skipping the existence check on
    /// input paths (used for the copy stored in a checkpoint).
    pub fn parse_with(text: &str, origin: &str, base: &Path, check_paths: bool) -> Result<Self, CliError> {
        let map = parse_pairs(text, origin)?;
        let r = Reader {
            map: &map,
            base,
            check_paths,
        };
        let d = TrainConfig::<f64>::default();

        let data = match r.raw("data").unwrap_or("csv") {
            "csv" => DataSource::Csv {
                path: r
                    .existing_path("data_path")?
                    .ok_or_else(|| invalid("data = csv needs data_path"))?,
                label_column: r.raw("label_column").filter(|v| *v != "none").map(str::to_string),
            },
            "idx" => DataSource::Idx {
                images: r
                    .existing_path("idx_images")?
                    .ok_or_else(|| invalid("data = idx needs idx_images"))?,
                labels: r.existing_path("idx_labels")?,
                binarize: r.optional_f64("binarize", None)?,
            },
            "synthetic" => DataSource::Synthetic(mixture_spec(&map)?),
            other => return Err(invalid(format!("data: expected csv, idx or synthetic, found {other:?}"))),
        };

        // Top layer first in the file, bottom-up in memory.
        let mut latent: Vec<usize> = r.list("latent_dims")?.unwrap_or_else(|| d.architecture.latent_dims.clone());
        latent.reverse();
        let architecture = Architecture {
            latent_dims: latent,
            hidden: r.list("hidden")?.unwrap_or_else(|| d.architecture.hidden.clone()),
            emission: parse_emission(r.raw("emission").unwrap_or("gaussian"))?,
        };

        let svi = match r.raw("svi_batch_size") {
            None => None,
            Some(_) => Some(SviConfig {
                batch_size: r.required("svi_batch_size")?,
                tau: r.parsed("svi_tau", 1.0)?,
                kappa: r.parsed("svi_kappa", 0.75)?,
            }),
        };

        let train = TrainConfig {
            truncation: r.parsed("truncation", d.truncation)?,
            eta: r.parsed("eta", d.eta)?,
            alpha: r.parsed("alpha", d.alpha)?,
            samples: r.parsed("samples", d.samples)?,
            epochs: r.parsed("epochs", d.epochs)?,
            max_outer_iters: r.parsed("max_iters", d.max_outer_iters)?,
            elbo_rel_tol: r.parsed("tol", d.elbo_rel_tol)?,
            seed: r.parsed("seed", d.seed)?,
            grad_batch: r.parsed("grad_batch", d.grad_batch)?,
            phi_threshold: r.parsed("phi_threshold", d.phi_threshold)?,
            grad_clip: r.optional_f64("grad_clip", d.grad_clip)?,
            init: match r.raw("init") {
                None => d.init,
                Some(v) => parse_init(v)?,
            },
            architecture,
            svi,
        };

        let split: Vec<f64> = r.list("split")?.unwrap_or_else(|| vec![1.0, 0.0, 0.0]);
        let split: [f64; 3] = split
            .try_into()
            .map_err(|_| invalid("split needs exactly three ratios"))?;

        let cfg = RunConfig {
            train,
            data,
            split,
            split_seed: r.parsed("split_seed", 0)?,
            label_fraction: r.parsed("label_fraction", 0.0)?,
            label_seed: r.parsed("label_seed", 0)?,
            output_dir: r.path("output_dir").unwrap_or_else(|| base.join("out")),
            checkpoint_every: r.parsed("checkpoint_every", 0)?,
            predict_samples: r.parsed("predict_samples", 32)?,
            resume: r.existing_path("resume")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|r| !(*r >= 0.0)) || !(self.split[0] > 0.0) || total > 1.0 + 1e-12 {
            return Err(invalid("split ratios must be non-negative, sum to at most 1, with a positive train share"));
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return Err(invalid("label_fraction must lie in [0, 1]"));
        }
        if self.predict_samples == 0 {
            return Err(invalid("predict_samples must be at least 1"));
        }
        if let DataSource::Idx { binarize: Some(c), .. } = self.data {
            if !(0.0..1.0).contains(&c) {
                return Err(invalid("binarize threshold must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Canonical text holding every key, readable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &Path| p.display().to_string();
        let list = |v: &[usize]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
            }
        };
        match &self.data {
            DataSource::Csv { path: p, label_column } => {
                put("data", "csv".into());
                put("data_path", path(p));
                put("label_column", label_column.clone().unwrap_or_else(|| "none".into()));
            }
            DataSource::Idx { images, labels, binarize } => {
                put("data", "idx".into());
                put("idx_images", path(images));
                if let Some(l) = labels {
                    put("idx_labels", path(l));
                }
                put("binarize", binarize.map_or("none".into(), |c| format!("{c:?}")));
            }
            DataSource::Synthetic(s) => {
                put("data", "synthetic".into());
                put("synth_clusters", s.clusters.to_string());
                put("synth_per_cluster", s.per_cluster.to_string());
                put("synth_latent_dim", s.latent_dim.to_string());
                put("synth_data_dim", s.data_dim.to_string());
                put("synth_separation", format!("{:?}", s.separation));
                put(
                    "synth_nonlinearity",
                    match s.nonlinearity {
                        Nonlinearity::Tanh => "tanh",
                        Nonlinearity::Linear => "linear",
                    }
                    .into(),
                );
                put("synth_noise", format!("{:?}", s.noise_scale));
                put("synth_seed", s.seed.to_string());
            }
        }
        put(
            "split",
            self.split.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(", "),
        );
        put("split_seed", self.split_seed.to_string());
        put("label_fraction", format!("{:?}", self.label_fraction));
        put("label_seed", self.label_seed.to_string());
        let t = &self.train;
        put("truncation", t.truncation.to_string());
        put("eta", format!("{:?}", t.eta));
        put("alpha", format!("{:?}", t.alpha));
        put("samples", t.samples.to_string());
        put("epochs", t.epochs.to_string());
        put("max_iters", t.max_outer_iters.to_string());
        put("tol", format!("{:?}", t.elbo_rel_tol));
        put("seed", t.seed.to_string());
        put("grad_batch", t.grad_batch.to_string());
        put("phi_threshold", format!("{:?}", t.phi_threshold));
        put("grad_clip", t.grad_clip.map_or("none".into(), |c| format!("{c:?}")));
        put(
            "init",
            match t.init {
                PhiInit::KMeansPlusPlus => "kmeans++".into(),
                PhiInit::Dirichlet(c) => format!("dirichlet:{c:?}"),
            },
        );
        let mut top_down = t.architecture.latent_dims.clone();
        top_down.reverse();
        put("latent_dims", list(&top_down));
        put("hidden", list(&t.architecture.hidden));
        put(
            "emission",
            match t.architecture.emission {
                EmissionKind::Gaussian => "gaussian",
                EmissionKind::Bernoulli => "bernoulli",
            }
            .into(),
        );
        if let Some(s) = &t.svi {
            put("svi_batch_size", s.batch_size.to_string());
            put("svi_tau", format!("{:?}", s.tau));
            put("svi_kappa", format!("{:?}", s.kappa));
        }
        put("output_dir", path(&self.output_dir));
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("predict_samples", self.predict_samples.to_string());
        if let Some(r) = &self.resume {
            put("resume", path(r));
        }
        out
    }
}
