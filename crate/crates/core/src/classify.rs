//! One-vs-rest linear SVMs with logistic calibration.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::mix_seed;
use crate::error::{Error, Result};
use crate::io::{put_string, write_atomic, ByteReader};

const MODEL_MAGIC: &[u8; 4] = b"TLMD";
const MODEL_VERSION: u32 = 1;
const POSTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Soft-margin weight; the regularizer is `1 / (C n)`.
    pub c: f64,
    pub epochs: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { c: 1.0, epochs: 200, seed: 0 }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) || self.epochs == 0 {
            return Err(Error::Config(format!("classifier needs C > 0 and epochs > 0, got {} / {}", self.c, self.epochs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// Per class `(slope, intercept)`: posterior `1 / (1 + exp(-(slope * s + intercept)))`.
    pub calibration: Vec<(f64, f64)>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for (c, label) in self.classes.iter().enumerate() {
            put_string(&mut out, label);
            for w in &self.weights[c] {
                out.extend_from_slice(&(*w as f32).to_le_bytes());
            }
            let (a, b) = self.calibration[c];
            for v in [self.biases[c], a, b] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format(format!("{}: not a model file", path.display())));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("{}: unsupported model version {version}", path.display())));
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut m = LinearModel { classes: Vec::new(), weights: Vec::new(), biases: Vec::new(), calibration: Vec::new() };
        for _ in 0..n {
            m.classes.push(r.string()?);
            m.weights.push((0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?);
            m.biases.push(r.f32()?.into());
            m.calibration.push((r.f32()?.into(), r.f32()?.into()));
        }
        r.finish()?;
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Regularized hinge objective `lambda/2 |w|^2 + mean(max(0, 1 - y s))`,
/// with the bias treated as one more weight.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * (dot(w, w) + b * b);
    let loss: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0)).sum();
    reg + loss / xs.len() as f64
}

/// Binary hinge-loss SVM by stochastic subgradient steps of size
/// `1 / (lambda t)`, returning the average of all iterates and the
/// objective of that average after every epoch.
fn train_binary(xs: &[Vec<f64>], ys: &[f64], lambda: f64, epochs: usize, seed: u64) -> (Vec<f64>, f64, Vec<f64>) {
    let (n, dim) = (xs.len(), xs[0].len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(epochs);
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = ys[i] * (dot(&w, &xs[i]) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                for (v, x) in w.iter_mut().zip(&xs[i]) {
                    *v += eta * ys[i] * x;
                }
                b += eta * ys[i];
            }
            let k = 1.0 / t as f64;
            for (a, v) in avg_w.iter_mut().zip(&w) {
                *a += (v - *a) * k;
            }
            avg_b += (b - avg_b) * k;
        }
        trace.push(hinge_objective(&avg_w, avg_b, xs, ys, lambda));
    }
    (avg_w, avg_b, trace)
}

/// Platt scaling: logistic fit of labels on decision values with smoothed
/// targets, by Newton's method with backtracking.
pub fn fit_platt(scores: &[f64], positive: &[bool]) -> (f64, f64) {
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = positive.iter().map(|p| if *p { hi } else { lo }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(s, t)| {
                let z = a * s + b;
                // log(1 + exp(z)) - t z, computed stably
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - t * z
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut f = nll(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (s, t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let d = p - t;
            let q = p * (1.0 - p);
            ga += d * s;
            gb += d;
            haa += q * s * s;
            hab += q * s;
            hbb += q;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = nll(na, nb);
            if nf < f - 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn check_training_set<S: AsRef<str>>(hists: &[Vec<f64>], labels: &[S]) -> Result<(Vec<String>, usize)> {
    if hists.len() != labels.len() {
        return Err(Error::Shape(format!("{} histograms but {} labels", hists.len(), labels.len())));
    }
    if hists.is_empty() {
        return Err(Error::InsufficientData { have: 0, need: 2 });
    }
    let dim = hists[0].len();
    if hists.iter().any(|h| h.len() != dim || h.iter().any(|v| !v.is_finite())) {
        return Err(Error::Shape("histograms must share one dimension and be finite".into()));
    }
    let mut classes: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(format!("need at least two classes, got {:?}", classes)));
    }
    Ok((classes, dim))
}

pub struct TrainedModel {
    pub model: LinearModel,
    /// Per class, the objective of the averaged iterate after each epoch.
    pub objective_traces: Vec<Vec<f64>>,
}

pub fn train<S: AsRef<str> + Sync>(hists: &[Vec<f64>], labels: &[S], cfg: &ClassifierConfig) -> Result<LinearModel> {
    train_with_trace(hists, labels, cfg).map(|t| t.model)
}

pub fn train_with_trace<S: AsRef<str> + Sync>(
    hists: &[Vec<f64>],
    labels: &[S],
    cfg: &ClassifierConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let (classes, _) = check_training_set(hists, labels)?;
    let lambda = 1.0 / (cfg.c * hists.len() as f64);
    let per_class: Vec<(Vec<f64>, f64, (f64, f64), Vec<f64>)> = classes
        .par_iter()
        .enumerate()
        .map(|(ci, class)| {
            let positive: Vec<bool> = labels.iter().map(|l| l.as_ref() == class).collect();
            let ys: Vec<f64> = positive.iter().map(|p| if *p { 1.0 } else { -1.0 }).collect();
            let (w, b, trace) = train_binary(hists, &ys, lambda, cfg.epochs, mix_seed(cfg.seed, ci as u64, 1));
            let scores: Vec<f64> = hists.iter().map(|x| dot(&w, x) + b).collect();
            let cal = fit_platt(&scores, &positive);
            (w, b, cal, trace)
        })
        .collect();
    let mut model = LinearModel { classes, weights: Vec::new(), biases: Vec::new(), calibration: Vec::new() };
    let mut objective_traces = Vec::new();
    for (w, b, cal, trace) in per_class {
        model.weights.push(w);
        model.biases.push(b);
        model.calibration.push(cal);
        objective_traces.push(trace);
    }
    Ok(TrainedModel { model, objective_traces })
}

/// Class index with the highest posterior (ties to the lowest index) and
/// the normalized posteriors.
pub fn predict(model: &LinearModel, x: &[f64]) -> (usize, Vec<f64>) {
    let mut post: Vec<f64> = model
        .scores(x)
        .iter()
        .zip(&model.calibration)
        .map(|(s, (a, b))| sigmoid(a * s + b).clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR))
        .collect();
    let total: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= total);
    let mut best = 0;
    for (i, p) in post.iter().enumerate() {
        if *p > post[best] {
            best = i;
        }
    }
    (best, post)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
}

pub fn evaluate<S: AsRef<str>>(model: &LinearModel, hists: &[Vec<f64>], labels: &[S]) -> Result<EvalReport> {
    if hists.len() != labels.len() {
        return Err(Error::Shape(format!("{} histograms but {} labels", hists.len(), labels.len())));
    }
    let n = model.classes.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (h, l) in hists.iter().zip(labels) {
        if h.len() != model.dim() {
            return Err(Error::Shape(format!("histogram dim {} but model expects {}", h.len(), model.dim())));
        }
        let truth = model
            .classes
            .iter()
            .position(|c| c == l.as_ref())
            .ok_or_else(|| Error::Config(format!("label {:?} was not seen in training", l.as_ref())))?;
        confusion[truth][predict(model, h).0] += 1;
    }
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    let accuracy = if hists.is_empty() { 0.0 } else { correct as f64 / hists.len() as f64 };
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[i] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalReport { classes: model.classes.clone(), accuracy, confusion, per_class_accuracy })
}

impl EvalReport {
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        write!(out, "true\\predicted").unwrap();
        for c in &self.classes {
            write!(out, ",{c}").unwrap();
        }
        writeln!(out).unwrap();
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            write!(out, "{c}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out).unwrap();
        }
        write_atomic(path, &out)
    }

    /// Row-normalized heat map, white for 0 and dark blue for 1, as a
    /// binary PPM with `cell` pixels per matrix entry.
    pub fn write_confusion_ppm(&self, path: &Path, cell: usize) -> Result<()> {
        let n = self.classes.len();
        let side = (n * cell).max(1);
        let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            for x in 0..side {
                let (i, j) = (y / cell.max(1), x / cell.max(1));
                let row: usize = self.confusion.get(i).map_or(0, |r| r.iter().sum());
                let v = if row == 0 { 0.0 } else { self.confusion[i][j] as f64 / row as f64 };
                let shade = |full: f64| (255.0 - v * (255.0 - full)).round() as u8;
                out.extend_from_slice(&[shade(8.0), shade(48.0), shade(107.0)]);
            }
        }
        write_atomic(path, &out)
    }
}
