//! Trial scoring and equal error rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::frontend::{Frontend, Waveform};
use crate::model::{embed, ParamStore};
use crate::train::{SyntheticSpeakerSet, Trial};

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Eval(format!("embedding lengths {} and {} differ", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Eval("cosine of a zero-norm embedding".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// One point of the threshold sweep: accept when `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR/FRR at every distinct score and at `+inf` (reject everything),
/// in increasing threshold order.
pub fn operating_points(labels: &[bool], scores: &[f64]) -> Result<Vec<OperatingPoint>> {
    if labels.len() != scores.len() {
        return Err(Error::Eval("labels and scores differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Eval("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval("need both target and non-target trials".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = Vec::with_capacity(scores.len() + 1);
    // Everything at or above the threshold is accepted; walking up the
    // sorted scores moves one group of equal scores to "rejected" at a time.
    let (mut rejected_pos, mut rejected_neg) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push(OperatingPoint {
            threshold: t,
            far: (n_neg - rejected_neg) as f64 / n_neg as f64,
            frr: rejected_pos as f64 / n_pos as f64,
        });
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                rejected_pos += 1;
            } else {
                rejected_neg += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold. The sweep's FAR - FRR changes sign
/// between two adjacent operating points; the rate is interpolated linearly
/// between them.
pub fn eer(labels: &[bool], scores: &[f64]) -> Result<(f64, f64)> {
    let points = operating_points(labels, scores)?;
    let diff = |p: &OperatingPoint| p.far - p.frr;
    let i = points
        .iter()
        .position(|p| diff(p) <= 0.0)
        .expect("the reject-all point has FAR - FRR = -1");
    if i == 0 {
        // Only possible when the lowest threshold already balances.
        return Ok((points[0].far, points[0].threshold));
    }
    let (a, b) = (points[i - 1], points[i]);
    let alpha = diff(&a) / (diff(&a) - diff(&b));
    let rate = a.far + alpha * (b.far - a.far);
    let threshold = if b.threshold.is_finite() {
        a.threshold + alpha * (b.threshold - a.threshold)
    } else {
        a.threshold
    };
    Ok((rate, threshold))
}

/// Parses `label enroll test` lines; blank lines and `#` comments skipped.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = parts[..] else {
            return Err(Error::Eval(format!("line {}: expected `label enroll test`", n + 1)));
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Eval(format!("line {}: label {other:?} is not 0 or 1", n + 1))),
        };
        out.push(Trial {
            label,
            enroll: enroll.to_string(),
            test: test.to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Eval("trial list is empty".into()));
    }
    Ok(out)
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    parse_trials(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn render_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let _ = writeln!(out, "{} {} {}", t.label, t.enroll, t.test);
    }
    out
}

/// Where evaluation finds the audio of an utterance id.
pub trait UtteranceSource {
    fn waveform(&self, id: &str) -> Result<Waveform>;
}

impl UtteranceSource for SyntheticSpeakerSet {
    fn waveform(&self, id: &str) -> Result<Waveform> {
        self.trial
            .iter()
            .chain(&self.train)
            .find(|u| u.id == id)
            .map(|u| u.wave.clone())
            .ok_or_else(|| Error::Eval(format!("unknown utterance {id}")))
    }
}

/// `<root>/<id>.wav` files.
#[derive(Clone, Debug)]
pub struct WavDir {
    pub root: PathBuf,
}

impl UtteranceSource for WavDir {
    fn waveform(&self, id: &str) -> Result<Waveform> {
        let path = self.root.join(format!("{id}.wav"));
        if !path.is_file() {
            return Err(Error::Eval(format!("unknown utterance {id} (no {})", path.display())));
        }
        Waveform::read_wav(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_trials: usize,
    pub n_target: usize,
    pub scores: Vec<ScoredTrial>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "EER {:.2}% at threshold {:.4} over {} trials ({} target, {} non-target)",
            100.0 * self.eer,
            self.threshold,
            self.n_trials,
            self.n_target,
            self.n_trials - self.n_target
        )
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "eer,threshold,n_trials,n_target\n{:.6},{:.6},{},{}\n",
            self.eer, self.threshold, self.n_trials, self.n_target
        )
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("label,enroll,test,score\n");
        for s in &self.scores {
            let _ = writeln!(out, "{},{},{},{:.6}", s.trial.label, s.trial.enroll, s.trial.test, s.score);
        }
        out
    }
}

/// Full-length eval-mode embeddings of every utterance named in `trials`.
pub fn embed_trials(
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    trials: &[Trial],
    source: &dyn UtteranceSource,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut model = store.clone();
    let frontend = Frontend::new();
    let mut out = BTreeMap::new();
    for id in trials.iter().flat_map(|t| [&t.enroll, &t.test]) {
        if out.contains_key(id) {
            continue;
        }
        let feats = frontend.fbank(&source.waveform(id)?)?;
        out.insert(id.clone(), embed(&mut model, cfg, &feats)?);
    }
    Ok(out)
}

/// Cosine-scores every trial (no score normalization) and computes the EER.
pub fn evaluate(
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    trials: &[Trial],
    source: &dyn UtteranceSource,
) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::Eval("trial list is empty".into()));
    }
    let emb = embed_trials(store, cfg, trials, source)?;
    let scores = trials
        .iter()
        .map(|t| {
            Ok(ScoredTrial {
                trial: t.clone(),
                score: cosine(&emb[&t.enroll], &emb[&t.test])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = scores.iter().map(|s| s.trial.label == 1).collect();
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let (rate, threshold) = eer(&labels, &values)?;
    Ok(EvalReport {
        eer: rate,
        threshold,
        n_trials: scores.len(),
        n_target: labels.iter().filter(|&&l| l).count(),
        scores,
    })
}
