//! Reference box representations behind one codec interface.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::cobb::{self, CobbVector};
use crate::error::{invalid, Result};
use crate::geom::{min_area_rect, outer_hbb, vertices_of, OrientedBox, Point2};
use crate::target::{cobb_loss, smooth_l1, LossWeights, TargetVector, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecDescriptor {
    pub name: String,
    pub dim: usize,
    /// Whether every box is claimed to be representable exactly.
    pub decodes_exactly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub values: Vec<f64>,
    pub codec: CodecDescriptor,
}

pub trait Codec: Send + Sync {
    fn descriptor(&self) -> CodecDescriptor;

    fn component_names(&self) -> Vec<String>;

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>>;

    fn decode(&self, values: &[f64]) -> Result<OrientedBox>;

    /// Loss between two encodings; smooth-L1 with unit beta unless overridden.
    fn loss(&self, pred: &[f64], target: &[f64]) -> Result<f64> {
        check_len(pred, self.descriptor().dim)?;
        check_len(target, self.descriptor().dim)?;
        Ok(pred.iter().zip(target).map(|(a, b)| smooth_l1(a - b, 1.0)).sum())
    }

    fn encode(&self, b: &OrientedBox) -> Result<Encoding> {
        Ok(Encoding {
            values: self.encode_values(b)?,
            codec: self.descriptor(),
        })
    }
}

fn check_len(v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(invalid(format!("expected {dim} values, got {}", v.len())));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(invalid("encoding entries must be finite"));
    }
    Ok(())
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// The continuous encoding, exposed through the common interface.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cobb;

impl Codec for Cobb {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "cobb".into(),
            dim: 9,
            decodes_exactly: true,
        }
    }

    fn component_names(&self) -> Vec<String> {
        names(&["xc", "yc", "w", "h", "rs", "s0", "s1", "s2", "s3"])
    }

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>> {
        Ok(cobb::encode(b)?.to_array().to_vec())
    }

    fn decode(&self, values: &[f64]) -> Result<OrientedBox> {
        check_len(values, 9)?;
        cobb::decode(&CobbVector::from_array(values)?)
    }

    /// Composite loss on sig targets against a unit proposal at the origin.
    fn loss(&self, pred: &[f64], target: &[f64]) -> Result<f64> {
        let to_target = |v: &[f64]| -> Result<TargetVector> {
            check_len(v, 9)?;
            let c = CobbVector::from_array(v)?;
            if c.w <= 0.0 || c.h <= 0.0 {
                return Err(invalid("extents must be positive"));
            }
            Ok(TargetVector {
                tx: c.xc,
                ty: c.yc,
                tw: c.w.ln(),
                th: c.h.ln(),
                rt: 2.0 * c.rs,
                st: c.scores.map(|s| s.max(0.0).powi(2)),
                variant: Variant::Sig,
                lambda: 2.0,
            })
        };
        cobb_loss(&to_target(pred)?, &to_target(target)?, &LossWeights::default())
    }
}

/// Angle limited to `[-π/4, π/4)` by swapping side labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct Acute;

impl Codec for Acute {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "acute".into(),
            dim: 5,
            decodes_exactly: true,
        }
    }

    fn component_names(&self) -> Vec<String> {
        names(&["cx", "cy", "w", "h", "theta"])
    }

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>> {
        let k = ((b.theta() + FRAC_PI_4) / FRAC_PI_2).floor();
        let t = b.theta() - k * FRAC_PI_2;
        let (w, h) = if k as i64 % 2 == 1 {
            (b.h_side(), b.w_side())
        } else {
            (b.w_side(), b.h_side())
        };
        Ok(vec![b.cx(), b.cy(), w, h, t])
    }

    fn decode(&self, v: &[f64]) -> Result<OrientedBox> {
        check_len(v, 5)?;
        OrientedBox::new(v[0], v[1], v[2], v[3], v[4])
    }
}

/// Angle of the long side in `[-π/2, π/2)`.
fn long_edge_angle(b: &OrientedBox) -> f64 {
    let phi = if b.w_side() >= b.h_side() {
        b.theta()
    } else {
        b.theta() + FRAC_PI_2
    };
    (phi + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2
}

/// `(cx, cy, long, short, φ)`. Squares take the angle of the first side.
#[derive(Debug, Clone, Copy, Default)]
pub struct LongEdge;

impl Codec for LongEdge {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "long-edge".into(),
            dim: 5,
            decodes_exactly: true,
        }
    }

    fn component_names(&self) -> Vec<String> {
        names(&["cx", "cy", "long", "short", "theta"])
    }

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>> {
        let (long, short) = if b.w_side() >= b.h_side() {
            (b.w_side(), b.h_side())
        } else {
            (b.h_side(), b.w_side())
        };
        Ok(vec![b.cx(), b.cy(), long, short, long_edge_angle(b)])
    }

    fn decode(&self, v: &[f64]) -> Result<OrientedBox> {
        check_len(v, 5)?;
        OrientedBox::new(v[0], v[1], v[2], v[3], v[4])
    }
}

/// Long-edge box with the angle replaced by a circularly smoothed label.
#[derive(Debug, Clone, Copy)]
pub struct Csl {
    bins: usize,
    sigma_bins: f64,
}

impl Default for Csl {
    fn default() -> Self {
        Self {
            bins: 90,
            sigma_bins: 2.0,
        }
    }
}

impl Csl {
    pub fn new(bins: usize, sigma_bins: f64) -> Result<Self> {
        if bins < 4 {
            return Err(invalid(format!("need at least 4 bins, got {bins}")));
        }
        if !(sigma_bins.is_finite() && sigma_bins > 0.0) {
            return Err(invalid("window sigma must be positive"));
        }
        Ok(Self { bins, sigma_bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_width(&self) -> f64 {
        PI / self.bins as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        -FRAC_PI_2 + i as f64 * self.bin_width()
    }

    /// Periodic Gaussian window centered on `phi`, period π.
    pub fn label(&self, phi: f64) -> Vec<f64> {
        let sigma = self.sigma_bins * self.bin_width();
        (0..self.bins)
            .map(|i| {
                let d = (phi - self.bin_center(i) + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
                (-0.5 * (d / sigma).powi(2)).exp()
            })
            .collect()
    }
}

impl Codec for Csl {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "csl".into(),
            dim: 4 + self.bins,
            decodes_exactly: false,
        }
    }

    fn component_names(&self) -> Vec<String> {
        let mut n = names(&["cx", "cy", "long", "short"]);
        n.extend((0..self.bins).map(|i| format!("bin{i}")));
        n
    }

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>> {
        let mut v = LongEdge.encode_values(b)?;
        let phi = v.pop().unwrap_or(0.0);
        v.extend(self.label(phi));
        Ok(v)
    }

    fn decode(&self, v: &[f64]) -> Result<OrientedBox> {
        check_len(v, 4 + self.bins)?;
        let bin = cobb::argmax(&v[4..]);
        OrientedBox::new(v[0], v[1], v[2], v[3], self.bin_center(bin))
    }
}

/// Outer box plus the fractional position of one vertex on each side.
///
/// Sides are top, right, bottom, left; each fraction runs from the side's
/// first corner in the order top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlidingVertex;

impl GlidingVertex {
    pub fn offsets(b: &OrientedBox) -> [f64; 4] {
        let hbb = outer_hbb(b);
        let (x0, y0) = (hbb.xc - 0.5 * hbb.w, hbb.yc - 0.5 * hbb.h);
        let (x1, y1) = (hbb.xc + 0.5 * hbb.w, hbb.yc + 0.5 * hbb.h);
        let tol = 1e-12 * hbb.diagonal();
        let pts = vertices_of(b);
        let side = |on: &dyn Fn(&Point2) -> bool, frac: &dyn Fn(&Point2) -> f64| {
            pts.vertices()
                .iter()
                .filter(|p| on(p))
                .map(|p| frac(p).clamp(0.0, 1.0))
                .fold(f64::INFINITY, f64::min)
        };
        [
            side(&|p| (p.y - y0).abs() <= tol, &|p| (p.x - x0) / hbb.w),
            side(&|p| (p.x - x1).abs() <= tol, &|p| (p.y - y0) / hbb.h),
            side(&|p| (p.y - y1).abs() <= tol, &|p| (x1 - p.x) / hbb.w),
            side(&|p| (p.x - x0).abs() <= tol, &|p| (y1 - p.y) / hbb.h),
        ]
    }
}

impl Codec for GlidingVertex {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "gv".into(),
            dim: 8,
            decodes_exactly: true,
        }
    }

    fn component_names(&self) -> Vec<String> {
        names(&["xc", "yc", "w", "h", "a_top", "a_right", "a_bottom", "a_left"])
    }

    fn encode_values(&self, b: &OrientedBox) -> Result<Vec<f64>> {
        let hbb = outer_hbb(b);
        let mut v = vec![hbb.xc, hbb.yc, hbb.w, hbb.h];
        v.extend(Self::offsets(b));
        Ok(v)
    }

    fn decode(&self, v: &[f64]) -> Result<OrientedBox> {
        check_len(v, 8)?;
        let (w, h) = (v[2], v[3]);
        if w <= 0.0 || h <= 0.0 {
            return Err(invalid(format!("extents must be positive, got {w} x {h}")));
        }
        let (x0, y0) = (v[0] - 0.5 * w, v[1] - 0.5 * h);
        let (x1, y1) = (v[0] + 0.5 * w, v[1] + 0.5 * h);
        let a = [v[4], v[5], v[6], v[7]].map(|t| t.clamp(0.0, 1.0));
        let quad = [
            Point2::new(x0 + a[0] * w, y0),
            Point2::new(x1, y0 + a[1] * h),
            Point2::new(x1 - a[2] * w, y1),
            Point2::new(x0, y1 - a[3] * h),
        ];
        min_area_rect(&quad)
    }
}

/// Names accepted by [`codec_by_name`].
pub const CODEC_NAMES: [&str; 5] = ["cobb", "acute", "long-edge", "csl", "gv"];

pub fn codec_by_name(name: &str) -> Result<Box<dyn Codec>> {
    Ok(match name {
        "cobb" => Box::new(Cobb),
        "acute" => Box::new(Acute),
        "long-edge" | "longedge" => Box::new(LongEdge),
        "csl" => Box::new(Csl::default()),
        "gv" | "gliding-vertex" => Box::new(GlidingVertex),
        other => return Err(invalid(format!("unknown codec '{other}'"))),
    })
}
