//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `DPDLGMMC`, a `u32` format version, then the
//! sections below in order. Integers are little-endian `u64` unless noted,
//! reals are little-endian IEEE-754 `f64` bit patterns, vectors are a length
//! followed by their elements, and strings are a byte length followed by
//! UTF-8.
//!
//! 1. config echo (string, canonical `key = value` text)
//! 2. generative parameters: cluster count, then per cluster the top mean and
//!    variance, the layer maps, the noise parameters and the emission network
//! 3. recognition networks: per cluster, per layer a Gaussian head
//! 4. stick posterior `γ1`, `γ2` and concentration `η`
//! 5. responsibilities (rows, truncation, values, labels with `u64::MAX` for none)
//! 6. running sufficient statistics
//! 7. generator state: 32-byte seed, stream, `u128` word position; ELBO
//!    noise seed; SVI step count
//! 8. trace records (iteration, ELBO, counts, seconds)
//!
//! The file must end exactly after the trace.

use std::fs;
use std::path::Path;

use dpdlgmm::engine::{
    HeadStack, InferenceNets, Responsibilities, StickPosterior, SufficientStats, TraceRecord,
    VariationalState,
};
use dpdlgmm::model::{ClusterParams, Emission, GenerativeParams};
use dpdlgmm::nn::{Activation, DenseLayer, GaussianHead, Mlp};
use dpdlgmm::rng::EngineRng;
use rand::SeedableRng;

use crate::config::RunConfig;
use crate::CliError;

pub const MAGIC: &[u8; 8] = b"DPDLGMMC";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or to use a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub theta: GenerativeParams<f64>,
    pub state: VariationalState<f64>,
    pub rng: EngineRng,
    pub elbo_seed: u64,
    pub svi_steps: u64,
    pub trace: Vec<TraceRecord<f64>>,
}

impl Checkpoint {
    /// The run configuration stored in the checkpoint. Input paths are not
    /// required to exist.
    pub fn config(&self) -> Result<RunConfig, CliError> {
        RunConfig::parse_with(&self.config_text, "checkpoint config", Path::new("/"), false)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&VERSION.to_le_bytes());
        w.string(&self.config_text);

        w.len(self.theta.truncation());
        for c in self.theta.clusters() {
            w.reals(&c.top_mean);
            w.reals(&c.top_var);
            w.len(c.layer_maps().len());
            for m in c.layer_maps() {
                w.mlp(m);
            }
            w.len(c.noise_raw().len());
            for r in c.noise_raw() {
                w.reals(r);
            }
            match c.emission() {
                Emission::Bernoulli(m) => {
                    w.byte(0);
                    w.mlp(m);
                }
                Emission::Gaussian(h) => {
                    w.byte(1);
                    w.head(h);
                }
            }
        }

        let nets = &self.state.nets;
        w.len(nets.truncation());
        for c in nets.clusters() {
            w.len(c.layers.len());
            for h in &c.layers {
                w.head(h);
            }
        }

        w.reals(self.state.gamma.gamma1());
        w.reals(self.state.gamma.gamma2());
        w.real(self.state.eta);

        let phi = &self.state.phi;
        w.len(phi.rows());
        w.len(phi.truncation());
        for n in 0..phi.rows() {
            for &v in phi.row(n) {
                w.real(v);
            }
        }
        for l in phi.labels() {
            w.u64(l.map_or(u64::MAX, |y| y as u64));
        }

        let stats = &self.state.stats;
        w.reals(&stats.counts);
        w.len(stats.mean_sums.len());
        for (m, s) in stats.mean_sums.iter().zip(&stats.sq_sums) {
            w.reals(m);
            w.reals(s);
        }

        w.buf.extend_from_slice(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.buf.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w.u64(self.elbo_seed);
        w.u64(self.svi_steps);

        w.len(self.trace.len());
        for r in &self.trace {
            w.len(r.iter);
            w.real(r.elbo);
            w.reals(&r.counts);
            w.real(r.seconds);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(r.fail("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(r.fail(&format!("unsupported format version {version}, expected {VERSION}")));
        }
        let config_text = r.string()?;

        let truncation = r.len()?;
        let mut clusters = Vec::with_capacity(truncation.min(1 << 16));
        for _ in 0..truncation {
            let top_mean = r.reals()?;
            let top_var = r.reals()?;
            let maps = r.len()?;
            let layer_maps = (0..maps).map(|_| r.mlp()).collect::<Result<Vec<_>, _>>()?;
            let noise = r.len()?;
            let noise_raw = (0..noise).map(|_| r.reals()).collect::<Result<Vec<_>, _>>()?;
            let emission = match r.byte()? {
                0 => Emission::Bernoulli(r.mlp()?),
                1 => Emission::Gaussian(r.head()?),
                k => return Err(r.fail(&format!("unknown emission tag {k}"))),
            };
            clusters.push(
                ClusterParams::new(top_mean, top_var, layer_maps, noise_raw, emission).map_err(|e| r.fail(&e.to_string()))?,
            );
        }
        let theta = GenerativeParams::new(clusters).map_err(|e| r.fail(&e.to_string()))?;

        let net_clusters = r.len()?;
        let mut stacks = Vec::with_capacity(net_clusters.min(1 << 16));
        for _ in 0..net_clusters {
            let layers = r.len()?;
            let layers = (0..layers).map(|_| r.head()).collect::<Result<Vec<_>, _>>()?;
            stacks.push(HeadStack { layers });
        }
        let nets = InferenceNets::new(stacks).map_err(|e| r.fail(&e.to_string()))?;

        let g1 = r.reals()?;
        let g2 = r.reals()?;
        let gamma = StickPosterior::new(g1, g2).map_err(|e| r.fail(&e.to_string()))?;
        let eta = r.real()?;

        let rows = r.len()?;
        let width = r.len()?;
        let mut phi_rows = Vec::with_capacity(rows.min(1 << 24));
        for _ in 0..rows {
            phi_rows.push((0..width).map(|_| r.real()).collect::<Result<Vec<_>, _>>()?);
        }
        let labels = (0..rows)
            .map(|_| r.u64().map(|v| (v != u64::MAX).then_some(v as usize)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut phi = if rows == 0 {
            Responsibilities::uniform(0, width)
        } else {
            Responsibilities::from_rows(&phi_rows).map_err(|e| r.fail(&e.to_string()))?
        };
        phi.clamp(&labels).map_err(|e| r.fail(&e.to_string()))?;

        let counts = r.reals()?;
        let stat_rows = r.len()?;
        let mut mean_sums = Vec::with_capacity(stat_rows.min(1 << 16));
        let mut sq_sums = Vec::with_capacity(stat_rows.min(1 << 16));
        for _ in 0..stat_rows {
            mean_sums.push(r.reals()?);
            sq_sums.push(r.reals()?);
        }
        let stats = SufficientStats {
            counts,
            mean_sums,
            sq_sums,
        };

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = EngineRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let elbo_seed = r.u64()?;
        let svi_steps = r.u64()?;

        let records = r.len()?;
        let mut trace = Vec::with_capacity(records.min(1 << 20));
        for _ in 0..records {
            trace.push(TraceRecord {
                iter: r.len()?,
                elbo: r.real()?,
                counts: r.reals()?,
                seconds: r.real()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.fail(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        if phi.truncation() != theta.truncation() || nets.truncation() != theta.truncation() {
            return Err(r.fail("sections disagree on the truncation level"));
        }
        if gamma.truncation() != theta.truncation() || stats.counts.len() != theta.truncation() {
            return Err(r.fail("sections disagree on the truncation level"));
        }
        Ok(Checkpoint {
            config_text,
            theta,
            state: VariationalState {
                phi,
                gamma,
                nets,
                eta,
                stats,
            },
            rng,
            elbo_seed,
            svi_steps,
            trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::Io {
            path: tmp.clone(),
            source: e,
        })?;
        fs::rename(&tmp, path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn byte(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn real(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn reals(&mut self, v: &[f64]) {
        self.len(v.len());
        for &x in v {
            self.real(x);
        }
    }

    fn string(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn layer(&mut self, l: &DenseLayer<f64>) {
        self.len(l.in_dim());
        self.len(l.out_dim());
        self.byte(match l.activation() {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        });
        self.reals(l.weights());
        self.reals(l.bias());
    }

    fn mlp(&mut self, m: &Mlp<f64>) {
        self.len(m.in_dim());
        self.len(m.layers().len());
        for l in m.layers() {
            self.layer(l);
        }
    }

    fn head(&mut self, h: &GaussianHead<f64>) {
        self.mlp(h.trunk());
        self.layer(h.mean_layer());
        self.layer(h.raw_var_layer());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn fail(&self, message: &str) -> CliError {
        CliError::Checkpoint {
            origin: self.origin.to_string(),
            message: format!("{message} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], CliError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CliError> {
        let v = self.u64()?;
        // Any length must fit in what is left of the file.
        if v > self.bytes.len() as u64 {
            return Err(self.fail(&format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    fn real(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self) -> Result<Vec<f64>, CliError> {
        let n = self.len()?;
        (0..n).map(|_| self.real()).collect()
    }

    fn string(&mut self) -> Result<String, CliError> {
        let n = self.len()?;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes).map_err(|_| self.fail("config echo is not UTF-8"))
    }

    fn layer(&mut self) -> Result<DenseLayer<f64>, CliError> {
        let in_dim = self.len()?;
        let out_dim = self.len()?;
        let activation = match self.byte()? {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            k => return Err(self.fail(&format!("unknown activation tag {k}"))),
        };
        let weights = self.reals()?;
        let bias = self.reals()?;
        DenseLayer::new(weights, bias, in_dim, out_dim, activation).map_err(|e| self.fail(&e.to_string()))
    }

    fn mlp(&mut self) -> Result<Mlp<f64>, CliError> {
        let in_dim = self.len()?;
        let n = self.len()?;
        let layers = (0..n).map(|_| self.layer()).collect::<Result<Vec<_>, _>>()?;
        Mlp::new(in_dim, layers).map_err(|e| self.fail(&e.to_string()))
    }

    fn head(&mut self) -> Result<GaussianHead<f64>, CliError> {
        let trunk = self.mlp()?;
        let mean = self.layer()?;
        let raw_var = self.layer()?;
        GaussianHead::new(trunk, mean, raw_var).map_err(|e| self.fail(&e.to_string()))
    }
}
