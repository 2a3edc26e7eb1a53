//! Numerical continuity audit over any codec.
//!
//! Each metric is evaluated on seeded box families at a sweep of shrinking
//! steps. Gaps use the infinity norm on encodings of boxes that were moved
//! to the origin and scaled to unit diagonal (both boxes use the reference
//! box's center and diagonal). Angle-valued components are compared raw.

use std::f64::consts::{FRAC_PI_4, PI};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::Codec;
use crate::cobb;
use crate::error::{invalid, Error, Result};
use crate::geom::{adjust_side, iou_oracle, rotate, OrientedBox};

/// Slack allowed when checking that gaps shrink with the step.
pub const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    NearHorizontal,
    NearSquare,
    NearDiagonal,
    Random,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::NearHorizontal,
        Family::NearSquare,
        Family::NearDiagonal,
        Family::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::NearHorizontal => "near-horizontal",
            Family::NearSquare => "near-square",
            Family::NearDiagonal => "near-diagonal",
            Family::Random => "random",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Family::NearHorizontal => 0x6e68,
            Family::NearSquare => 0x6e73,
            Family::NearDiagonal => 0x6e64,
            Family::Random => 0x726e,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Rotation,
    Aspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: Vec<f64>,
    pub families: Vec<Family>,
    pub samples: usize,
    pub seed: u64,
    pub target_threshold: f64,
    pub loss_threshold: f64,
    /// Smallest roundtrip IoU accepted by the completeness check.
    pub completeness_iou: f64,
    pub perturbation: f64,
    /// Robustness passes when the worst `1 - IoU` is at most `k * perturbation`.
    pub robustness_k: f64,
    /// Random perturbation directions per sample.
    pub directions: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: vec![1e-3, 1e-4, 1e-5],
            families: Family::ALL.to_vec(),
            samples: 64,
            seed: 7,
            target_threshold: 1e-3,
            loss_threshold: 1e-6,
            completeness_iou: 1.0 - 1e-6,
            perturbation: 1e-4,
            robustness_k: 100.0,
            directions: 8,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("steps must be positive"));
        }
        if self.steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("steps must be strictly decreasing"));
        }
        if self.samples == 0 || self.directions == 0 {
            return Err(invalid("samples and directions must be at least 1"));
        }
        if self.families.is_empty() {
            return Err(invalid("at least one family is required"));
        }
        if !(self.perturbation.is_finite() && self.perturbation >= 0.0) {
            return Err(invalid("perturbation must be non-negative"));
        }
        Ok(())
    }
}

/// Seeded boxes of one family. Even samples sit exactly on the boundary.
pub fn sample_family(family: Family, samples: usize, seed: u64) -> Vec<OrientedBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ family.salt().wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..samples)
        .map(|k| {
            let (cx, cy) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let u: f64 = rng.random_range(-1.0..1.0);
            let long = rng.random_range(1.0..20.0);
            let (w, h, theta) = match family {
                Family::NearHorizontal => {
                    let short = long / rng.random_range(1.5..6.0);
                    let theta = if k % 2 == 0 { 0.0 } else { u * 1e-3 };
                    let (w, h) = if (k / 2) % 2 == 0 { (long, short) } else { (short, long) };
                    (w, h, theta)
                }
                Family::NearSquare => {
                    let ratio = if k % 2 == 0 { 1.0 } else { 1.0 + u * 1e-3 };
                    let t = rng.random_range(0.0..PI);
                    // every fourth sample is a square at exactly 45 degrees
                    (long, long * ratio, if k % 4 == 2 { FRAC_PI_4 } else { t })
                }
                Family::NearDiagonal => {
                    let (a, b) = (long, long / rng.random_range(1.5..6.0));
                    // angle where the acreage ratio is exactly 0.5
                    let half = 0.5 * (2.0 * a * b / (a * a + b * b)).asin();
                    let base = match k % 4 {
                        0 => FRAC_PI_4,
                        1 => FRAC_PI_4 + u * 1e-3,
                        2 => half,
                        _ => half + u * 1e-3,
                    };
                    let theta = if (k / 4) % 2 == 0 { base } else { PI - base };
                    let (w, h) = if (k / 8) % 2 == 0 { (a, b) } else { (b, a) };
                    (w, h, theta)
                }
                Family::Random => (long, long / rng.random_range(1.0..8.0), rng.random_range(0.0..PI)),
            };
            OrientedBox::new(cx, cy, w, h, theta).expect("family parameters are valid")
        })
        .collect()
}

/// Moves a box into the frame of `reference` scaled to unit diagonal.
pub fn normalize_to(b: &OrientedBox, reference: &OrientedBox) -> Result<OrientedBox> {
    b.normalized(reference.center(), 1.0 / reference.diagonal())
}

fn transformed(b: &OrientedBox, t: Transform, delta: f64) -> Result<Vec<OrientedBox>> {
    Ok(match t {
        Transform::Rotation => vec![rotate(b, delta)],
        Transform::Aspect => adjust_side(b, 1.0 + delta)?.to_vec(),
    })
}

fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Target,
    Loss,
}

/// Gap for one sample, one signed step. Aspect gaps sum over both adjusted boxes.
pub fn pointwise_gap(
    codec: &dyn Codec,
    quantity: Quantity,
    transform: Transform,
    b: &OrientedBox,
    signed_delta: f64,
) -> Result<f64> {
    let reference = codec.encode_values(&normalize_to(b, b)?)?;
    let mut total = 0.0;
    for moved in transformed(b, transform, signed_delta)? {
        let e = codec.encode_values(&normalize_to(&moved, b)?)?;
        total += match quantity {
            Quantity::Target => inf_norm(&reference, &e),
            Quantity::Loss => codec.loss(&e, &reference)?,
        };
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepGap {
    pub delta: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub family: Family,
    pub sample: usize,
    #[serde(rename = "box")]
    pub bx: OrientedBox,
    pub delta: f64,
    /// `+1` or `-1` for transform probes.
    pub sign: f64,
    /// Unit perturbation direction, robustness probes only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub steps: Vec<StepGap>,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub codec: String,
    pub seed: u64,
    pub norm: String,
    pub metrics: Vec<MetricResult>,
}

impl MetricReport {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.metrics.iter().all(|m| m.verdict == Verdict::Pass)
    }
}

/// Names of the six metrics in report order.
pub const METRIC_NAMES: [&str; 6] = ["tar_r", "tar_a", "loss_r", "loss_a", "dec_c", "dec_r"];

/// Pass iff the finest gap is within `threshold` and gaps never grow as steps shrink.
pub fn sweep_verdict(steps: &[StepGap], threshold: f64) -> Verdict {
    let monotone = steps.windows(2).all(|w| w[1].gap <= w[0].gap + MONOTONE_SLACK);
    let finest = steps.last().map_or(f64::INFINITY, |s| s.gap);
    Verdict::from_bool(monotone && finest <= threshold)
}

fn families_with_samples(cfg: &ProbeConfig) -> Vec<(Family, Vec<OrientedBox>)> {
    cfg.families
        .iter()
        .map(|&f| (f, sample_family(f, cfg.samples, cfg.seed)))
        .collect()
}

fn probe_sweep(
    codec: &dyn Codec,
    quantity: Quantity,
    transform: Transform,
    cfg: &ProbeConfig,
    name: &str,
) -> Result<MetricResult> {
    cfg.validate()?;
    let families = families_with_samples(cfg);
    let mut steps = Vec::with_capacity(cfg.steps.len());
    let mut witness = None;
    for &delta in &cfg.steps {
        let mut worst = (f64::NEG_INFINITY, None);
        for (family, boxes) in &families {
            for (i, b) in boxes.iter().enumerate() {
                for sign in [1.0, -1.0] {
                    let g = pointwise_gap(codec, quantity, transform, b, sign * delta)?;
                    if g > worst.0 {
                        worst = (
                            g,
                            Some(Witness {
                                family: *family,
                                sample: i,
                                bx: *b,
                                delta,
                                sign,
                                direction: None,
                            }),
                        );
                    }
                }
            }
        }
        steps.push(StepGap { delta, gap: worst.0 });
        // keep the witness of the finest step
        witness = worst.1;
    }
    let threshold = match quantity {
        Quantity::Target => cfg.target_threshold,
        Quantity::Loss => cfg.loss_threshold,
    };
    let verdict = sweep_verdict(&steps, threshold);
    debug!("{} {name}: {steps:?} -> {verdict:?}", codec.descriptor().name);
    Ok(MetricResult {
        name: name.into(),
        steps,
        verdict,
        witness,
    })
}

pub fn probe_target_continuity(codec: &dyn Codec, transform: Transform, cfg: &ProbeConfig) -> Result<MetricResult> {
    let name = match transform {
        Transform::Rotation => "tar_r",
        Transform::Aspect => "tar_a",
    };
    probe_sweep(codec, Quantity::Target, transform, cfg, name)
}

pub fn probe_loss_continuity(codec: &dyn Codec, transform: Transform, cfg: &ProbeConfig) -> Result<MetricResult> {
    let name = match transform {
        Transform::Rotation => "loss_r",
        Transform::Aspect => "loss_a",
    };
    probe_sweep(codec, Quantity::Loss, transform, cfg, name)
}

/// IoU between a box and its roundtrip, both in the normalized frame.
pub fn roundtrip_iou(codec: &dyn Codec, b: &OrientedBox) -> Result<f64> {
    let n = normalize_to(b, b)?;
    let back = codec.decode(&codec.encode_values(&n)?)?;
    iou_oracle(&n, &back)
}

/// Worst roundtrip IoU; the single step records `1 - worst` at delta 0.
pub fn check_decoding_completeness(codec: &dyn Codec, cfg: &ProbeConfig) -> Result<MetricResult> {
    cfg.validate()?;
    let mut worst = (f64::INFINITY, None);
    for (family, boxes) in families_with_samples(cfg) {
        for (i, b) in boxes.iter().enumerate() {
            let iou = roundtrip_iou(codec, b).unwrap_or(0.0);
            if iou < worst.0 {
                worst = (
                    iou,
                    Some(Witness {
                        family,
                        sample: i,
                        bx: *b,
                        delta: 0.0,
                        sign: 0.0,
                        direction: None,
                    }),
                );
            }
        }
    }
    Ok(MetricResult {
        name: "dec_c".into(),
        steps: vec![StepGap {
            delta: 0.0,
            gap: 1.0 - worst.0,
        }],
        verdict: Verdict::from_bool(worst.0 >= cfg.completeness_iou),
        witness: worst.1,
    })
}

/// `1 - IoU(x, decode(encode(x) + delta * direction))` in the normalized frame.
/// A failed decode counts as no overlap.
pub fn perturbed_loss_of_iou(codec: &dyn Codec, b: &OrientedBox, direction: &[f64], magnitude: f64) -> Result<f64> {
    let n = normalize_to(b, b)?;
    let mut e = codec.encode_values(&n)?;
    if direction.len() != e.len() {
        return Err(invalid("direction length does not match the encoding"));
    }
    for (v, d) in e.iter_mut().zip(direction) {
        *v += magnitude * d;
    }
    Ok(match codec.decode(&e) {
        Ok(back) => 1.0 - iou_oracle(&n, &back).unwrap_or(0.0),
        Err(_) => 1.0,
    })
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn probe_decoding_robustness(codec: &dyn Codec, cfg: &ProbeConfig, perturbation: f64) -> Result<MetricResult> {
    cfg.validate()?;
    if !(perturbation.is_finite() && perturbation >= 0.0) {
        return Err(invalid("perturbation must be non-negative"));
    }
    let dim = codec.descriptor().dim;
    let mut worst = (f64::NEG_INFINITY, None);
    for (family, boxes) in families_with_samples(cfg) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(family.salt()));
        for (i, b) in boxes.iter().enumerate() {
            for _ in 0..cfg.directions {
                let dir = unit_direction(&mut rng, dim);
                let g = perturbed_loss_of_iou(codec, b, &dir, perturbation)?;
                if g > worst.0 {
                    worst = (
                        g,
                        Some(Witness {
                            family,
                            sample: i,
                            bx: *b,
                            delta: perturbation,
                            sign: 1.0,
                            direction: Some(dir),
                        }),
                    );
                }
            }
        }
    }
    let gap = worst.0.max(0.0);
    Ok(MetricResult {
        name: "dec_r".into(),
        steps: vec![StepGap {
            delta: perturbation,
            gap,
        }],
        verdict: Verdict::from_bool(gap <= cfg.robustness_k * perturbation),
        witness: worst.1,
    })
}

/// Recomputes the gap recorded by a witness.
pub fn replay(codec: &dyn Codec, metric: &str, w: &Witness) -> Result<f64> {
    let signed = w.sign * w.delta;
    match metric {
        "tar_r" => pointwise_gap(codec, Quantity::Target, Transform::Rotation, &w.bx, signed),
        "tar_a" => pointwise_gap(codec, Quantity::Target, Transform::Aspect, &w.bx, signed),
        "loss_r" => pointwise_gap(codec, Quantity::Loss, Transform::Rotation, &w.bx, signed),
        "loss_a" => pointwise_gap(codec, Quantity::Loss, Transform::Aspect, &w.bx, signed),
        "dec_c" => Ok(1.0 - roundtrip_iou(codec, &w.bx).unwrap_or(0.0)),
        "dec_r" => {
            let dir = w
                .direction
                .as_deref()
                .ok_or_else(|| invalid("robustness witness has no direction"))?;
            perturbed_loss_of_iou(codec, &w.bx, dir, w.delta)
        }
        other => Err(invalid(format!("unknown metric '{other}'"))),
    }
}

/// Normalized average error: mean squared error over the squared truth range.
pub fn nae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if truths.is_empty() || predictions.len() != truths.len() {
        return Err(invalid("need equally many predictions and truths, at least one"));
    }
    let lo = truths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::UndefinedNormalization);
    }
    let range2 = (hi - lo) * (hi - lo);
    let sum: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t) / range2).sum();
    Ok(sum / truths.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaeResult {
    pub group: String,
    pub nae: f64,
}

/// NAE per named parameter group; each row of `predictions`/`truths` is one sample.
pub fn nae_by_group(groups: &[&str], predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<NaeResult>> {
    groups
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let column = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
                rows.iter()
                    .map(|r| r.get(j).copied().ok_or_else(|| invalid("row too short")))
                    .collect()
            };
            Ok(NaeResult {
                group: g.to_string(),
                nae: nae(&column(predictions)?, &column(truths)?)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouCheck {
    pub samples: usize,
    pub max_abs_diff: f64,
    /// `(w, h, rs)` where the largest difference occurred.
    pub worst: (f64, f64, f64),
}

/// Closed-form candidate IoU matrix against polygon clipping on seeded `(w, h, rs)`.
pub fn iou_check(samples: usize, seed: u64) -> Result<IouCheck> {
    if samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = IouCheck {
        samples,
        max_abs_diff: 0.0,
        worst: (1.0, 1.0, 0.5),
    };
    for _ in 0..samples {
        // unit diagonal, aspect up to 20 either way
        let a: f64 = rng.random_range(-3.0f64..3.0).exp();
        let (w, h) = (a / a.hypot(1.0), 1.0 / a.hypot(1.0));
        let rs = rng.random_range(1e-7..=0.5);
        let closed = cobb::iou_matrix(w, h, rs)?;
        let oracle = cobb::oracle_iou_matrix(w, h, rs)?;
        for i in 0..4 {
            for j in 0..4 {
                let d = (closed.m[i][j] - oracle.m[i][j]).abs();
                if d > out.max_abs_diff {
                    out.max_abs_diff = d;
                    out.worst = (w, h, rs);
                }
            }
        }
    }
    Ok(out)
}

pub fn audit_codec(codec: &dyn Codec, cfg: &ProbeConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let metrics = vec![
        probe_target_continuity(codec, Transform::Rotation, cfg)?,
        probe_target_continuity(codec, Transform::Aspect, cfg)?,
        probe_loss_continuity(codec, Transform::Rotation, cfg)?,
        probe_loss_continuity(codec, Transform::Aspect, cfg)?,
        check_decoding_completeness(codec, cfg)?,
        probe_decoding_robustness(codec, cfg, cfg.perturbation)?,
    ];
    Ok(MetricReport {
        codec: codec.descriptor().name,
        seed: cfg.seed,
        norm: "inf".into(),
        metrics,
    })
}

pub fn run_audit(codecs: &[&dyn Codec], cfg: &ProbeConfig) -> Result<Vec<MetricReport>> {
    codecs.iter().map(|c| audit_codec(*c, cfg)).collect()
}
