//! Training loop with partial-view sampling and Adam.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, SpatialIndex};
use crate::ingest::{fuse, load_dataset, resample, sample_frames, Capture};
use crate::model::{Checkpoint, ModelConfig, Network};
use crate::ndiff::{BnMode, Tape, Var};
use crate::objective::{eval_metrics, overall_loss, LossBreakdown, LossInputs, LossWeights, DEFAULT_TAU_MM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Cosine-anneal to this step size over the run; constant when unset.
    pub final_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled, applied as `w -= lr·wd·w`.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            final_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Partial clouds per step. Captures repeat within a batch only when
    /// there are fewer captures than slots.
    pub batch_size: usize,
    pub k_min: usize,
    /// Defaults to every frame of the capture.
    pub k_max: Option<usize>,
    /// Frames per fixed validation input are drawn from `1..=val_k_max`.
    pub val_k_max: usize,
    /// Fuse every frame instead of a random subset.
    pub full_views: bool,
    /// Smoothing terms on the coarse mesh as well as the fine one.
    pub smooth_coarse: bool,
    pub tau_mm: f64,
    pub seed: Option<u64>,
    pub deterministic: bool,
    /// Dataset root with `train/` and `val/` captures.
    pub data: PathBuf,
    /// Receives `best/`, `final/` and `metrics.jsonl`.
    pub out: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 100,
            batch_size: 1,
            k_min: 1,
            k_max: None,
            val_k_max: 3,
            full_views: false,
            smooth_coarse: false,
            tau_mm: DEFAULT_TAU_MM,
            seed: Some(0),
            deterministic: true,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("train config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| match e {
            Error::Parameter(msg) => Error::Validation(msg),
            other => other,
        };
        self.model.validate().map_err(invalid)?;
        self.weights.validate().map_err(invalid)?;
        let o = &self.optimizer;
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("step size must be positive, got {}", o.lr));
        }
        if let Some(f) = o.final_lr {
            if !(f >= 0.0 && f.is_finite()) {
                return bad(format!("final step size must be non-negative, got {f}"));
            }
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", o.beta1, o.beta2));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("eps must be positive and weight decay non-negative".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.k_min == 0 || self.k_max.is_some_and(|k| k < self.k_min) || self.val_k_max == 0 {
            return bad(format!(
                "frame counts need 1 ≤ k_min ≤ k_max, got k_min={} k_max={:?} val_k_max={}",
                self.k_min, self.k_max, self.val_k_max
            ));
        }
        if !(self.tau_mm > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau_mm));
        }
        if self.deterministic && self.seed.is_none() {
            return bad("deterministic mode requires a seed".into());
        }
        if self.data.as_os_str().is_empty() || self.out.as_os_str().is_empty() {
            return bad("data and out paths must be non-empty".into());
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay over a flat parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimizerConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter in `params` with its gradient.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (c.beta1, c.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Dimension(format!("tensor {k} changed size")));
            }
            for i in 0..m.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                let w = p[i] as f64;
                p[i] = (w - update - lr * c.weight_decay * w) as f32;
            }
        }
        Ok(())
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub coarse: f64,
    pub fine: f64,
    pub normal: f64,
    pub laplacian: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_dc_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_fscore: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

/// Mean validation metrics over the fixed validation inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValSummary {
    pub dc_mm: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
}

struct TrainSample {
    capture: Capture,
    gt: SpatialIndex,
    full: Option<PointCloud>,
}

struct ValSample {
    input: PointCloud,
    gt: PointCloud,
}

/// In-memory training state.
pub struct Trainer {
    config: TrainConfig,
    net: Network<f32>,
    adam: Adam,
    train: Vec<TrainSample>,
    val: Vec<ValSample>,
    rng: ChaCha8Rng,
    total_steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: Vec<Capture>, val: Vec<Capture>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyInput("no training captures".into()));
        }
        let seed = config.seed.unwrap_or_else(rand::random);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(&config.model, seed)?;
        let sizes: Vec<usize> = net
            .arrays()
            .iter()
            .filter(|a| a.trainable)
            .map(|a| a.array.numel())
            .collect();
        let adam = Adam::new(config.optimizer.clone(), &sizes);

        let mut samples = Vec::with_capacity(train.len());
        for (i, capture) in train.into_iter().enumerate() {
            capture.validate()?;
            let gt = SpatialIndex::from_cloud(capture.gt().map_err(|e| ctx(e, "training", i))?)?;
            let k_max = config.k_max.unwrap_or(capture.len());
            if config.k_min > capture.len() || k_max > capture.len() {
                return Err(Error::Validation(format!(
                    "training capture {i} has {} frames, sampling asks for {}..={k_max}",
                    capture.len(),
                    config.k_min
                )));
            }
            let full = if config.full_views {
                let all: Vec<usize> = (0..capture.len()).collect();
                Some(non_empty(fuse(&capture, &all)?, i)?)
            } else {
                None
            };
            samples.push(TrainSample { capture, gt, full });
        }

        // validation inputs are drawn once from their own stream
        let mut vrng = ChaCha8Rng::seed_from_u64(seed);
        vrng.set_stream(1);
        let mut vals = Vec::with_capacity(val.len());
        for (i, capture) in val.into_iter().enumerate() {
            capture.validate()?;
            let gt = capture.gt().map_err(|e| ctx(e, "validation", i))?.clone();
            let k_max = config.val_k_max.min(capture.len());
            let frames = sample_frames(&mut vrng, capture.len(), 1, k_max)?;
            let fused = non_empty(fuse(&capture, &frames)?, i)?;
            let input = resample(&fused, config.model.input_points, &mut vrng)?;
            vals.push(ValSample { input, gt });
        }

        let steps_per_epoch = samples.len().div_ceil(config.batch_size);
        rng.set_stream(0);
        Ok(Trainer {
            total_steps: steps_per_epoch * config.epochs,
            config,
            net,
            adam,
            train: samples,
            val: vals,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn steps_done(&self) -> u64 {
        self.adam.steps()
    }

    fn lr(&self) -> f64 {
        let o = &self.config.optimizer;
        match o.final_lr {
            None => o.lr,
            Some(end) => {
                let t = self.adam.steps() as f64 / self.total_steps.max(1) as f64;
                end + 0.5 * (o.lr - end) * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }

    fn draw_input(&mut self, i: usize) -> Result<PointCloud> {
        let n = self.config.model.input_points;
        let s = &self.train[i];
        let fused = match &s.full {
            Some(full) => full.clone(),
            None => {
                let k_max = self.config.k_max.unwrap_or(s.capture.len());
                let frames = sample_frames(&mut self.rng, s.capture.len(), self.config.k_min, k_max)?;
                let cloud = fuse(&s.capture, &frames)?;
                if cloud.is_empty() {
                    return Err(Error::EmptyInput(format!(
                        "training capture {i} frames {frames:?} contain no masked depth"
                    )));
                }
                cloud
            }
        };
        resample(&fused, n, &mut self.rng)
    }

    /// One optimizer step over the captures in `batch`.
    pub fn step(&mut self, batch: &[usize]) -> Result<LossBreakdown> {
        let step = self.adam.steps();
        let clouds = batch
            .iter()
            .map(|&i| self.draw_input(i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape);
        let input = tape.constant(self.net.input_array(&refs)?);
        let out = self.net.forward(&mut tape, &vars, input, BnMode::Train)?;

        let vc = self.config.model.coarse_vertices();
        let vd = self.config.model.fine_vertices();
        let inv = 1.0 / batch.len() as f32;
        let mut total: Option<Var> = None;
        let mut sum = LossBreakdown::default();
        for (b, &i) in batch.iter().enumerate() {
            let coarse = tape.gather_rows(out.coarse, &(b * vc..(b + 1) * vc).collect::<Vec<_>>())?;
            let fine = tape.gather_rows(out.fine, &(b * vd..(b + 1) * vd).collect::<Vec<_>>())?;
            let inputs = LossInputs {
                coarse,
                fine,
                coarse_topology: self.net.coarse_topology(),
                fine_topology: self.net.fine_topology(),
                gt: &self.train[i].gt,
                smooth_coarse: self.config.smooth_coarse,
            };
            let (loss, parts) = overall_loss(&mut tape, &inputs, &self.config.weights)?;
            let loss = tape.scale(loss, inv);
            total = Some(match total {
                None => loss,
                Some(t) => tape.add(t, loss)?,
            });
            sum.coarse += parts.coarse;
            sum.fine += parts.fine;
            sum.normal += parts.normal;
            sum.laplacian += parts.laplacian;
        }
        let total = total.ok_or_else(|| Error::EmptyInput("empty batch".into()))?;
        let n = batch.len() as f64;
        let mean = LossBreakdown {
            coarse: sum.coarse / n,
            fine: sum.fine / n,
            normal: sum.normal / n,
            laplacian: sum.laplacian / n,
            total: tape.data(total)[0] as f64,
        };
        if !mean.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}: {mean:?}")));
        }
        tape.backward(total)?;

        let trainable: Vec<(usize, Var)> = self
            .net
            .arrays()
            .iter()
            .zip(&vars)
            .enumerate()
            .filter(|(_, (a, _))| a.trainable)
            .map(|(k, (_, &v))| (k, v))
            .collect();
        let longest = self.net.arrays().iter().map(|a| a.array.data().len()).max().unwrap_or(0);
        let zeros = vec![0.0f32; longest];
        let mut grads = Vec::with_capacity(trainable.len());
        for &(k, v) in &trainable {
            // Parameters that only feed zero-weight loss terms get no gradient.
            let g = tape.grad(v).unwrap_or(&zeros[..self.net.arrays()[k].array.data().len()]);
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {}[{bad}] at step {step}",
                    self.net.arrays()[k].name
                )));
            }
            grads.push(g);
        }
        let lr = self.lr();
        self.net.apply_stats(&out.stats);
        let mut params: Vec<&mut [f32]> = self
            .net
            .arrays_mut()
            .iter_mut()
            .filter(|a| a.trainable)
            .map(|a| a.array.data_mut())
            .collect();
        self.adam.step(&mut params, &grads, lr)?;
        Ok(mean)
    }

    /// `⌈n / batch_size⌉` steps over shuffled passes of the training
    /// captures; the last batch is topped up from a fresh pass.
    pub fn epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let lr = self.lr();
        let n = self.train.len();
        let b = self.config.batch_size;
        let steps = n.div_ceil(b);
        let mut order: Vec<usize> = Vec::with_capacity(steps * b);
        while order.len() < steps * b {
            let mut pass: Vec<usize> = (0..n).collect();
            pass.shuffle(&mut self.rng);
            order.extend(pass);
        }
        order.truncate(steps * b);
        let mut sum = LossBreakdown::default();
        let batches: Vec<Vec<usize>> = order.chunks(b).map(<[usize]>::to_vec).collect();
        for batch in &batches {
            let l = self.step(batch)?;
            sum.coarse += l.coarse;
            sum.fine += l.fine;
            sum.normal += l.normal;
            sum.laplacian += l.laplacian;
            sum.total += l.total;
        }
        let n = batches.len() as f64;
        let val = self.validate()?;
        Ok(EpochRecord {
            epoch,
            steps: batches.len(),
            lr,
            coarse: sum.coarse / n,
            fine: sum.fine / n,
            normal: sum.normal / n,
            laplacian: sum.laplacian / n,
            total: sum.total / n,
            val_dc_mm: val.map(|v| v.dc_mm),
            val_fscore: val.map(|v| v.fscore),
            val_precision: val.map(|v| v.precision),
            val_recall: val.map(|v| v.recall),
            wall_time_s: (!self.config.deterministic).then(|| start.elapsed().as_secs_f64()),
        })
    }

    /// Inference-mode metrics on the fixed validation inputs.
    pub fn validate(&self) -> Result<Option<ValSummary>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let mut acc = ValSummary {
            dc_mm: 0.0,
            fscore: 0.0,
            precision: 0.0,
            recall: 0.0,
        };
        for v in &self.val {
            let pred = self.net.predict(&v.input)?;
            let r = eval_metrics(&pred.fine, &v.gt, self.config.tau_mm)?;
            acc.dc_mm += r.dc_mm;
            acc.fscore += r.fscore;
            acc.precision += r.precision;
            acc.recall += r.recall;
        }
        let n = self.val.len() as f64;
        Ok(Some(ValSummary {
            dc_mm: acc.dc_mm / n,
            fscore: acc.fscore / n,
            precision: acc.precision / n,
            recall: acc.recall / n,
        }))
    }

    /// Runs every epoch, handing each record to `on_epoch`. Returns the
    /// best validation D_c seen and the network state at that epoch.
    pub fn run(
        &mut self,
        mut on_epoch: impl FnMut(&EpochRecord, &Network<f32>, bool) -> Result<()>,
    ) -> Result<Option<(f64, Network<f32>)>> {
        let mut best: Option<(f64, Network<f32>)> = None;
        for epoch in 0..self.config.epochs {
            let record = self.epoch(epoch)?;
            let improved = match (record.val_dc_mm, &best) {
                (Some(dc), None) => dc.is_finite(),
                (Some(dc), Some((b, _))) => dc < *b,
                _ => false,
            };
            if improved {
                best = Some((record.val_dc_mm.expect("checked"), self.net.clone()));
            }
            on_epoch(&record, &self.net, improved)?;
        }
        Ok(best)
    }
}

fn ctx(e: Error, split: &str, i: usize) -> Error {
    match e {
        Error::Validation(msg) => Error::Validation(format!("{split} capture {i}: {msg}")),
        other => other,
    }
}

fn non_empty(cloud: PointCloud, i: usize) -> Result<PointCloud> {
    if cloud.is_empty() {
        Err(Error::EmptyInput(format!("capture {i} has no masked depth pixels")))
    } else {
        Ok(cloud)
    }
}

/// Output locations of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub log: PathBuf,
    pub best: Option<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub best_val_dc_mm: Option<f64>,
}

/// Loads the dataset and trains, writing outputs under `config.out`.
pub fn train_from_config(config: &TrainConfig) -> Result<TrainOutputs> {
    config.validate()?;
    let (train, val) = load_dataset(&config.data)?;
    train_to_dir(config, train, val)
}

/// As [`train_from_config`] with captures already in memory.
pub fn train_to_dir(config: &TrainConfig, train: Vec<Capture>, val: Vec<Capture>) -> Result<TrainOutputs> {
    let mut trainer = Trainer::new(config.clone(), train, val)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log = out.join("metrics.jsonl");
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    let best_dir = out.join("best");
    let best = trainer.run(|record, net, improved| {
        let line = serde_json::to_string(record).map_err(|e| Error::format(&log, e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&log, e))?;
        if improved {
            Checkpoint::from_network(net).save(&best_dir)?;
        }
        Ok(())
    })?;
    let final_dir = out.join("final");
    Checkpoint::from_network(trainer.network()).save(&final_dir)?;
    Ok(TrainOutputs {
        log,
        best: best.as_ref().map(|_| best_dir),
        final_checkpoint: final_dir,
        best_val_dc_mm: best.map(|b| b.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{gen_synthetic, split_counts};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig::tiny(),
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(OptimizerConfig::default(), &[3]);
        let mut p = [1.0f32, -2.0, 0.5];
        let g = [0.3f32, -4.0, 0.0];
        adam.step(&mut [&mut p[..]], &[&g[..]], 0.1).unwrap();
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = Adam::new(OptimizerConfig::default(), &[2]);
        let mut p = vec![3.0f32, -1.0];
        for _ in 0..2000 {
            let g: Vec<f32> = p.iter().map(|x| 2.0 * (x - 0.5)).collect();
            adam.step(&mut [&mut p[..]], &[&g[..]], 0.01).unwrap();
        }
        assert!(p.iter().all(|x| (x - 0.5).abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let zero = TrainConfig {
            weights: LossWeights {
                coarse: 0.0,
                fine: 0.0,
                normal: 0.0,
                laplacian: 0.0,
            },
            ..TrainConfig::default()
        };
        assert!(zero.validate().is_err());
        let mut c = TrainConfig::default();
        c.optimizer.lr = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            seed: None,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            out: PathBuf::new(),
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());

        let parsed = TrainConfig::from_json(r#"{"epochs": 3, "optimizer": {"lr": 0.01}}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.optimizer.beta2, 0.999);
        assert!(TrainConfig::from_json(r#"{"weights": {"coarse":0,"fine":0,"normal":0,"laplacian":0}}"#).is_err());
    }

    #[test]
    fn deterministic_runs_match() {
        let data = gen_synthetic(3, 5).unwrap();
        let (nt, _) = split_counts(5);
        let run = || {
            let mut t = Trainer::new(tiny_config(), data[..nt].to_vec(), data[nt..].to_vec()).unwrap();
            let mut records = Vec::new();
            t.run(|r, _, _| {
                records.push(r.clone());
                Ok(())
            })
            .unwrap();
            (records, Checkpoint::from_network(t.network()))
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(a.len(), 2);
        assert!(a[0].val_dc_mm.is_some() && a[0].wall_time_s.is_none());
    }

    #[test]
    fn writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_synthetic(4, 3).unwrap();
        let config = TrainConfig {
            out: dir.path().join("run"),
            ..tiny_config()
        };
        let out = train_to_dir(&config, data[..2].to_vec(), data[2..].to_vec()).unwrap();
        let text = fs::read_to_string(&out.log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for l in lines {
            let r: EpochRecord = serde_json::from_str(l).unwrap();
            assert!(r.total.is_finite());
        }
        Checkpoint::load(&out.final_checkpoint).unwrap();
        Checkpoint::load(out.best.as_ref().unwrap()).unwrap();
    }

    #[test]
    fn missing_ground_truth_is_rejected() {
        let mut data = gen_synthetic(5, 1).unwrap();
        data[0].gt = None;
        assert!(Trainer::new(tiny_config(), data, vec![]).is_err());
    }

    #[test]
    fn unreached_parameters_stay_fixed() {
        let data = gen_synthetic(6, 2).unwrap();
        let mut config = tiny_config();
        config.weights.coarse = 0.0;
        let mut t = Trainer::new(config, data, vec![]).unwrap();
        let coarse = |t: &Trainer| {
            let a = t.network().arrays().iter().find(|a| a.name == "prototype.coarse").unwrap();
            a.array.data().to_vec()
        };
        let before = coarse(&t);
        t.epoch(0).unwrap();
        assert!(t.steps_done() > 0);
        assert_eq!(coarse(&t), before);
    }
}
