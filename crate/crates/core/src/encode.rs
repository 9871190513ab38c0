//! Visual vocabularies and bag-of-words encoding.
//!
//! Local encoding keeps one codebook per (joint, descriptor kind) and builds
//! one histogram segment per pair; global encoding collapses every
//! trajectory into a single segment per kind. Codebook pools can be chosen
//! among random trajectory subsets by classifier confidence on the sampled
//! videos and ambiguity on held-out videos.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig};
use crate::descriptors::{DescriptorBlock, DescriptorKind};
use crate::error::{Error, Result};
use crate::localize::{ClusterAssignment, Membership};

/// Joint id used for codebooks and segments of the global encoding.
pub const GLOBAL_JOINT: i32 = -1;

const CODEBOOK_MAGIC: &[u8; 4] = b"TLCB";
const CODEBOOK_VERSION: u32 = 1;
const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster SSE after each assignment step.
    pub sse_trace: Vec<f64>,
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Config("k-means needs at least one cluster".into()));
    }
    if features.len() < k {
        return Err(Error::InsufficientData { have: features.len(), need: k });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("k-means features differ in dimension".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Shape("k-means features must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = features.len();

    let mut centroids = vec![features[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = features[pick].clone();
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &c));
        }
        centroids.push(c);
    }

    let mut sse_trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let assigned: Vec<(usize, f64)> = features.par_iter().map(|f| nearest(&centroids, f)).collect();
        sse_trace.push(assigned.iter().map(|a| a.1).sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, (c, _)) in features.iter().zip(&assigned) {
            counts[*c] += 1;
            for (s, v) in sums[*c].iter_mut().zip(f) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        let mut movement: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // re-seed an empty cluster at the worst-served point
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .max_by(|a, b| assigned[*a].1.total_cmp(&assigned[*b].1).then(b.cmp(a)))
                    .unwrap_or(0);
                taken[far] = true;
                features[far].clone()
            };
            movement = movement.max(sq_dist(&centroids[c], &next).sqrt());
            centroids[c] = next;
        }
        if movement < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans { centroids, sse_trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub kind: DescriptorKind,
    pub joint: i32,
    pub words: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(kind: DescriptorKind, joint: i32, words: Vec<Vec<f64>>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Config(format!("codebook {kind}/{joint} has no words")));
        }
        let dim = words[0].len();
        if words.iter().any(|w| w.len() != dim || w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Format(format!("codebook {kind}/{joint} has ragged or non-finite words")));
        }
        Ok(Codebook { kind, joint, words })
    }

    /// Learns `k` words. With fewer than `k` training vectors the learned
    /// words are repeated up to `k` (repeats never win a vote); with none,
    /// every word is the zero vector.
    pub fn train(kind: DescriptorKind, joint: i32, features: &[Vec<f64>], dim: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("codebooks need at least one word".into()));
        }
        let mut words = if features.is_empty() {
            vec![vec![0.0; dim]]
        } else {
            kmeans(features, k.min(features.len()), seed)?.centroids
        };
        let learned = words.len();
        for i in learned..k {
            words.push(words[i % learned].clone());
        }
        Codebook::new(kind, joint, words)
    }

    pub fn k(&self) -> usize {
        self.words.len()
    }

    pub fn dim(&self) -> usize {
        self.words[0].len()
    }

    pub fn quantize(&self, x: &[f64]) -> usize {
        nearest(&self.words, x).0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub books: Vec<Codebook>,
}

impl CodebookSet {
    pub fn get(&self, joint: i32, kind: DescriptorKind) -> Result<&Codebook> {
        self.books
            .iter()
            .find(|b| b.joint == joint && b.kind == kind)
            .ok_or_else(|| Error::Config(format!("no codebook for joint {joint}, kind {kind}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.books.len() as u32).to_le_bytes());
        for b in &self.books {
            out.push(b.kind.code());
            out.extend_from_slice(&b.joint.to_le_bytes());
            out.extend_from_slice(&(b.k() as u32).to_le_bytes());
            out.extend_from_slice(&(b.dim() as u32).to_le_bytes());
            for v in b.words.iter().flatten() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        crate::io::write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let mut r = crate::io::ByteReader::new(&bytes, path);
        if r.take(4)? != CODEBOOK_MAGIC {
            return Err(Error::Format(format!("{}: not a codebook file", path.display())));
        }
        let version = r.u32()?;
        if version != CODEBOOK_VERSION {
            return Err(Error::Format(format!("{}: unsupported codebook version {version}", path.display())));
        }
        let count = r.u32()?;
        let mut books = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let kind = DescriptorKind::from_code(r.u8()?)?;
            let joint = r.i32()?;
            let k = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let mut words = Vec::with_capacity(k);
            for _ in 0..k {
                words.push((0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?);
            }
            books.push(Codebook::new(kind, joint, words)?);
        }
        r.finish()?;
        Ok(CodebookSet { books })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub joint: i32,
    pub kind: DescriptorKind,
    pub len: usize,
}

/// Concatenated per-(joint, kind) word histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
}

impl FeatureHistogram {
    fn empty(books: &CodebookSet, joints: &[i32], kinds: &[DescriptorKind]) -> Result<Self> {
        let mut segments = Vec::with_capacity(joints.len() * kinds.len());
        for &joint in joints {
            for &kind in kinds {
                segments.push(Segment { joint, kind, len: books.get(joint, kind)?.k() });
            }
        }
        let total = segments.iter().map(|s| s.len).sum();
        Ok(FeatureHistogram { segments, values: vec![0.0; total] })
    }

    fn offset(&self, joint: i32, kind: DescriptorKind) -> Option<(usize, usize)> {
        let mut off = 0;
        for s in &self.segments {
            if s.joint == joint && s.kind == kind {
                return Some((off, s.len));
            }
            off += s.len;
        }
        None
    }

    pub fn segment(&self, joint: i32, kind: DescriptorKind) -> Option<&[f64]> {
        self.offset(joint, kind).map(|(o, l)| &self.values[o..o + l])
    }

    fn vote(&mut self, joint: i32, block: &DescriptorBlock, books: &CodebookSet) -> Result<()> {
        let book = books.get(joint, block.kind)?;
        if book.dim() != block.dim() {
            return Err(Error::Shape(format!(
                "{} descriptor has dim {} but its codebook expects {}",
                block.kind,
                block.dim(),
                book.dim()
            )));
        }
        if let Some((o, _)) = self.offset(joint, block.kind) {
            self.values[o + book.quantize(&block.values)] += 1.0;
        }
        Ok(())
    }

    fn normalize_segments(&mut self) {
        let mut off = 0;
        for s in &self.segments {
            let seg = &mut self.values[off..off + s.len];
            let total: f64 = seg.iter().sum();
            if total > 0.0 {
                seg.iter_mut().for_each(|v| *v /= total);
            }
            off += s.len;
        }
    }
}

/// Local bag of words: every assigned trajectory votes into the segments of
/// its joint. `joint_ids[j]` is the id of the joint that
/// `Membership::Assigned(j)` refers to.
pub fn encode_local(
    descriptors: &[Vec<DescriptorBlock>],
    assignment: &ClusterAssignment,
    joint_ids: &[i32],
    books: &CodebookSet,
    kinds: &[DescriptorKind],
) -> Result<FeatureHistogram> {
    if assignment.members.len() != descriptors.len() {
        return Err(Error::Shape(format!(
            "{} assignments for {} trajectories",
            assignment.members.len(),
            descriptors.len()
        )));
    }
    let mut h = FeatureHistogram::empty(books, joint_ids, kinds)?;
    for (blocks, m) in descriptors.iter().zip(&assignment.members) {
        if let Membership::Assigned(j) = m {
            let joint = *joint_ids
                .get(*j)
                .ok_or_else(|| Error::Shape(format!("assignment to joint index {j} out of range")))?;
            for b in blocks.iter().filter(|b| kinds.contains(&b.kind)) {
                h.vote(joint, b, books)?;
            }
        }
    }
    h.normalize_segments();
    Ok(h)
}

/// Global bag of words: one segment per kind fed by every trajectory.
pub fn encode_global(
    descriptors: &[Vec<DescriptorBlock>],
    books: &CodebookSet,
    kinds: &[DescriptorKind],
) -> Result<FeatureHistogram> {
    let mut h = FeatureHistogram::empty(books, &[GLOBAL_JOINT], kinds)?;
    for b in descriptors.iter().flatten().filter(|b| kinds.contains(&b.kind)) {
        h.vote(GLOBAL_JOINT, b, books)?;
    }
    h.normalize_segments();
    Ok(h)
}

fn check_posteriors(p: &[f64]) -> Result<()> {
    if let Some(bad) = p.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        return Err(Error::Config(format!("posterior {bad} outside (0, 1]")));
    }
    Ok(())
}

/// Median log posterior of the true labels.
pub fn confidence(posteriors: &[f64]) -> Result<f64> {
    check_posteriors(posteriors)?;
    if posteriors.is_empty() {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    let mut logs: Vec<f64> = posteriors.iter().map(|p| p.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let n = logs.len();
    Ok(if n % 2 == 1 { logs[n / 2] } else { 0.5 * (logs[n / 2 - 1] + logs[n / 2]) })
}

/// Summed log posterior of the true labels.
pub fn ambiguity(posteriors: &[f64]) -> Result<f64> {
    check_posteriors(posteriors)?;
    Ok(posteriors.iter().map(|p| p.ln()).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    /// Words per codebook.
    pub words: usize,
    /// Encode with one global codebook per kind instead of per joint.
    pub global: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig { words: 128, global: false, seed: 0 }
    }
}

/// One training video as seen by codebook construction.
#[derive(Debug, Clone)]
pub struct PoolVideo {
    pub label: String,
    pub descriptors: Vec<Vec<DescriptorBlock>>,
    pub assignment: ClusterAssignment,
}

/// Learns all codebooks from the trajectories listed in `subset[v]` for each
/// video `v` (`None` means every trajectory). Local codebooks only see
/// trajectories assigned to their joint.
pub fn build_codebooks(
    videos: &[&PoolVideo],
    subset: Option<&[Vec<usize>]>,
    joint_ids: &[i32],
    kinds: &[DescriptorKind],
    dims: &[usize],
    cfg: &BowConfig,
) -> Result<CodebookSet> {
    let keys: Vec<(i32, usize)> = if cfg.global {
        (0..kinds.len()).map(|k| (GLOBAL_JOINT, k)).collect()
    } else {
        joint_ids.iter().flat_map(|&j| (0..kinds.len()).map(move |k| (j, k))).collect()
    };
    let books: Vec<Result<Codebook>> = keys
        .par_iter()
        .map(|&(joint, ki)| {
            let kind = kinds[ki];
            let mut feats = Vec::new();
            for (v, video) in videos.iter().enumerate() {
                let all: Vec<usize>;
                let idx: &[usize] = match subset {
                    Some(s) => &s[v],
                    None => {
                        all = (0..video.descriptors.len()).collect();
                        &all
                    }
                };
                for &i in idx {
                    let keep = joint == GLOBAL_JOINT
                        || matches!(video.assignment.members.get(i), Some(Membership::Assigned(j)) if joint_ids.get(*j) == Some(&joint));
                    if !keep {
                        continue;
                    }
                    if let Some(b) = video.descriptors[i].iter().find(|b| b.kind == kind) {
                        feats.push(b.values.clone());
                    }
                }
            }
            let seed = mix_seed(cfg.seed, joint as u64, kind.code() as u64);
            Codebook::train(kind, joint, &feats, dims[ki], cfg.words, seed)
        })
        .collect();
    Ok(CodebookSet { books: books.into_iter().collect::<Result<_>>()? })
}

pub fn encode_video(
    video: &PoolVideo,
    books: &CodebookSet,
    joint_ids: &[i32],
    kinds: &[DescriptorKind],
    cfg: &BowConfig,
) -> Result<FeatureHistogram> {
    if cfg.global {
        encode_global(&video.descriptors, books, kinds)
    } else {
        encode_local(&video.descriptors, &video.assignment, joint_ids, books, kinds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Trajectories drawn per video for a candidate pool.
    pub sample_size: usize,
    pub candidates: usize,
    pub holdout_fraction: f64,
    /// Weight of the ambiguity term; `None` means `1 / |holdout|`.
    pub lambda: Option<f64>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { sample_size: 2000, candidates: 1, holdout_fraction: 0.3, lambda: None, seed: 0 }
    }
}

impl SelectionConfig {
    pub fn validate(&self, words: usize) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::Config("selection needs at least one candidate".into()));
        }
        if self.sample_size < words {
            return Err(Error::Config(format!(
                "sample size {} is smaller than the codebook size {words}",
                self.sample_size
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!("holdout fraction {} outside (0, 1)", self.holdout_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub confidence: f64,
    pub ambiguity: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: usize,
    /// Per candidate, per video, the sampled trajectory indices.
    pub subsets: Vec<Vec<Vec<usize>>>,
    pub scores: Vec<CandidateScore>,
    /// Video indices used to fit the classifier (`M_r`) and held out.
    pub sampled_videos: Vec<usize>,
    pub holdout_videos: Vec<usize>,
}

impl Selection {
    pub fn chosen_subset(&self) -> &[Vec<usize>] {
        &self.subsets[self.chosen]
    }
}

/// Stratified split of video indices into (sampled, holdout); every class
/// keeps at least one sampled video.
fn stratified_split(labels: &[&str], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut classes: Vec<&str> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let (mut fit, mut hold) = (Vec::new(), Vec::new());
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(rng);
        let n_hold = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        hold.extend_from_slice(&idx[..n_hold]);
        fit.extend_from_slice(&idx[n_hold..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    (fit, hold)
}

fn true_posteriors(model: &classify::LinearModel, hists: &[Vec<f64>], labels: &[&str]) -> Vec<f64> {
    hists
        .iter()
        .zip(labels)
        .map(|(h, l)| {
            let (_, post) = classify::predict(model, h);
            model.classes.iter().position(|c| c == l).map_or(f64::MIN_POSITIVE, |i| post[i].max(f64::MIN_POSITIVE))
        })
        .collect()
}

/// Scores `cfg.candidates` random trajectory pools and picks the one
/// maximizing `C + lambda * A`. Ties go to the lowest candidate index.
pub fn select_codebook_pool(
    videos: &[PoolVideo],
    joint_ids: &[i32],
    kinds: &[DescriptorKind],
    dims: &[usize],
    bow: &BowConfig,
    sel: &SelectionConfig,
    cls: &ClassifierConfig,
) -> Result<Selection> {
    sel.validate(bow.words)?;
    let labels: Vec<&str> = videos.iter().map(|v| v.label.as_str()).collect();
    {
        let mut distinct = labels.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::DegenerateLabels(format!("{} class(es) in the training pool", distinct.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
    let (fit, hold) = stratified_split(&labels, sel.holdout_fraction, &mut rng);
    let subsets: Vec<Vec<Vec<usize>>> = (0..sel.candidates)
        .map(|_| {
            videos
                .iter()
                .map(|v| {
                    let mut idx: Vec<usize> = (0..v.descriptors.len()).collect();
                    idx.shuffle(&mut rng);
                    idx.truncate(sel.sample_size);
                    idx.sort_unstable();
                    idx
                })
                .collect()
        })
        .collect();
    let lambda = sel.lambda.unwrap_or(if hold.is_empty() { 0.0 } else { 1.0 / hold.len() as f64 });

    let fit_videos: Vec<&PoolVideo> = fit.iter().map(|&i| &videos[i]).collect();
    let scores: Vec<Result<CandidateScore>> = subsets
        .par_iter()
        .map(|subset| {
            let fit_subset: Vec<Vec<usize>> = fit.iter().map(|&i| subset[i].clone()).collect();
            let books = build_codebooks(&fit_videos, Some(&fit_subset), joint_ids, kinds, dims, bow)?;
            let encode = |ids: &[usize]| -> Result<Vec<Vec<f64>>> {
                ids.iter().map(|&i| Ok(encode_video(&videos[i], &books, joint_ids, kinds, bow)?.values)).collect()
            };
            let fit_h = encode(&fit)?;
            let fit_l: Vec<&str> = fit.iter().map(|&i| labels[i]).collect();
            let model = classify::train(&fit_h, &fit_l, cls)?;
            let c = confidence(&true_posteriors(&model, &fit_h, &fit_l))?;
            let hold_h = encode(&hold)?;
            let hold_l: Vec<&str> = hold.iter().map(|&i| labels[i]).collect();
            let a = ambiguity(&true_posteriors(&model, &hold_h, &hold_l))?;
            Ok(CandidateScore { confidence: c, ambiguity: a, objective: c + lambda * a })
        })
        .collect();
    let scores: Vec<CandidateScore> = scores.into_iter().collect::<Result<_>>()?;
    let mut chosen = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.objective > scores[chosen].objective {
            chosen = i;
        }
    }
    Ok(Selection { chosen, subsets, scores, sampled_videos: fit, holdout_videos: hold })
}
