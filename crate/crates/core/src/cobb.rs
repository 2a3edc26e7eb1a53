//! The nine-parameter continuous OBB encoding.
//!
//! A box is described by its outer horizontal box `(xc, yc, w, h)`, the
//! sliding ratio `rs` and four IoU scores against the four rectangles that
//! share the same outer box and sliding ratio. The candidate rectangles are
//! indexed in a fixed construction order; candidates 0 and 3 have acreage
//! ratio at most 0.5, candidates 1 and 2 at least 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::geom::{
    iou_oracle, outer_hbb, vertices_of, ConvexQuad, HorizontalBox, OrientedBox, Point2,
};

/// Sliding-ratio values within this distance outside `[0, 0.5]` are clamped.
pub const RS_CLAMP_SLACK: f64 = 1e-12;

/// Scores within this distance of the maximum count as ties in `classify`.
const CLASSIFY_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobbVector {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
    pub rs: f64,
    pub scores: [f64; 4],
}

impl CobbVector {
    pub fn hbb(&self) -> HorizontalBox {
        HorizontalBox {
            xc: self.xc,
            yc: self.yc,
            w: self.w,
            h: self.h,
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let s = self.scores;
        [self.xc, self.yc, self.w, self.h, self.rs, s[0], s[1], s[2], s[3]]
    }

    pub fn from_array(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(invalid(format!("expected 9 values, got {}", v.len())));
        }
        Ok(Self {
            xc: v[0],
            yc: v[1],
            w: v[2],
            h: v[3],
            rs: v[4],
            scores: [v[5], v[6], v[7], v[8]],
        })
    }
}

/// The four rectangles sharing one outer box and sliding ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSet {
    pub candidates: [ConvexQuad; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouMatrix {
    pub m: [[f64; 4]; 4],
}

impl IouMatrix {
    pub fn row(&self, i: usize) -> [f64; 4] {
        self.m[i]
    }
}

/// Which side of 0.5 the acreage ratio lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaBranch {
    /// `ra <= 0.5`, candidates 0 and 3.
    Below,
    /// `ra >= 0.5`, candidates 1 and 2.
    Above,
}

fn check_rs(rs: f64) -> Result<f64> {
    if !rs.is_finite() || !(-RS_CLAMP_SLACK..=0.5 + RS_CLAMP_SLACK).contains(&rs) {
        return Err(invalid(format!("sliding ratio {rs} outside [0, 0.5]")));
    }
    Ok(rs.clamp(0.0, 0.5))
}

fn check_extents(w: f64, h: f64) -> Result<()> {
    if !(w.is_finite() && h.is_finite()) || w <= 0.0 || h <= 0.0 {
        return Err(invalid(format!("extents must be positive, got {w} x {h}")));
    }
    Ok(())
}

/// `1 - 4 ρ² rs (1 - rs)` written as a sum of non-negative terms.
fn discriminant(rho: f64, rs: f64) -> f64 {
    let t = 1.0 - 2.0 * rs;
    (1.0 - rho * rho) + rho * rho * t * t
}

/// `(1 - sqrt(1 - 4 ρ² rs (1 - rs))) / 2` without cancellation.
fn cross_ratio(rho: f64, rs: f64) -> f64 {
    let d = discriminant(rho, rs);
    2.0 * rho * rho * rs * (1.0 - rs) / (1.0 + d.sqrt())
}

/// Half-offsets `(x_s, y_s)` of the vertices on the top and right sides.
fn vertex_offsets(w: f64, h: f64, rs: f64) -> (f64, f64) {
    if w >= h {
        let rho = h / w;
        (0.5 * discriminant(rho, rs).sqrt() * w, 0.5 * (1.0 - 2.0 * rs) * h)
    } else {
        let rho = w / h;
        (0.5 * (1.0 - 2.0 * rs) * w, 0.5 * discriminant(rho, rs).sqrt() * h)
    }
}

pub fn sliding_ratio(b: &OrientedBox) -> Result<f64> {
    let hbb = outer_hbb(b);
    if hbb.w <= 0.0 || hbb.h <= 0.0 {
        return Err(degenerate("outer box has zero extent"));
    }
    let q = vertices_of(b);
    let mut coords: [f64; 4] = if hbb.w < hbb.h {
        q.vertices().map(|p| p.x)
    } else {
        q.vertices().map(|p| p.y)
    };
    coords.sort_by(f64::total_cmp);
    let extent = if hbb.w < hbb.h { hbb.w } else { hbb.h };
    Ok(((coords[1] - coords[0]) / extent).clamp(0.0, 0.5))
}

pub fn acreage_ratio(b: &OrientedBox) -> f64 {
    let hbb = outer_hbb(b);
    b.area() / (hbb.w * hbb.h)
}

pub fn four_candidates(hbb: &HorizontalBox, rs: f64) -> Result<CandidateSet> {
    check_extents(hbb.w, hbb.h)?;
    let rs = check_rs(rs)?;
    let (xs, ys) = vertex_offsets(hbb.w, hbb.h, rs);
    let (xc, yc, hw, hh) = (hbb.xc, hbb.yc, 0.5 * hbb.w, 0.5 * hbb.h);
    // top, right, bottom, left vertices; signs of the (top x, right y) offsets
    let build = |sx: f64, sy: f64| {
        ConvexQuad::from_ordered([
            Point2::new(xc + sx * xs, yc - hh),
            Point2::new(xc + hw, yc + sy * ys),
            Point2::new(xc - sx * xs, yc + hh),
            Point2::new(xc - hw, yc - sy * ys),
        ])
    };
    Ok(CandidateSet {
        candidates: [
            build(-1.0, 1.0),
            build(1.0, 1.0),
            build(-1.0, -1.0),
            build(1.0, -1.0),
        ],
    })
}

/// Index of the candidate reproducing `b`; ties go to the lowest index.
pub fn classify(b: &OrientedBox) -> Result<usize> {
    let set = four_candidates(&outer_hbb(b), sliding_ratio(b)?)?;
    let ious = set.candidates.map(|c| iou_oracle(b, &c).unwrap_or(0.0));
    let best = ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ious
        .iter()
        .position(|&v| v >= best - CLASSIFY_TIE)
        .unwrap_or(0))
}

/// Closed-form `(IoU01, IoU02, IoU03, IoU12)` for `w >= h`.
fn closed_form_pairs(w: f64, h: f64, rsx: f64, rsy: f64) -> [f64; 4] {
    let l1 = (rsx * w).hypot(rsy * h);
    let l2 = ((1.0 - rsx) * w).hypot((1.0 - rsy) * h);
    let l3 = (rsx * w).hypot((1.0 - rsy) * h);
    let l4 = ((1.0 - rsx) * w).hypot(rsy * h);

    let i01 = (1.0 - (1.0 - 2.0 * rsx) * rsx * w * w / ((1.0 - rsy) * h * h)) * l1 * l2;
    let iou01 = i01 / (l1 * l2 + l3 * l4 - i01);

    let i02 = (1.0 - (1.0 - 2.0 * rsy) * rsy * h * h / ((1.0 - rsx) * w * w)) * l1 * l2;
    let iou02 = i02 / (l1 * l2 + l3 * l4 - i02);

    let num = rsx + rsy - 2.0 * rsx * rsy;
    let i03 = num * num / ((1.0 - rsx) * (1.0 - rsy)) * w * h / 2.0;
    let iou03 = if i03 != 0.0 {
        i03 / (2.0 * l1 * l2 - i03)
    } else {
        0.0
    };

    let h1 = 0.5 * w - (0.5 - rsy) / (1.0 - rsy) * rsx * w;
    let h2 = 0.5 * h - (0.5 - rsx) / (1.0 - rsx) * rsy * h;
    let tan_a = ((0.5 - rsx) / (1.0 - rsx) * l4) / (l3 / (2.0 * (1.0 - rsy)));
    let tan_b = ((0.5 - rsy) / (1.0 - rsy) * l3) / (l4 / (2.0 * (1.0 - rsx)));
    let iou12 = if tan_a * tan_b != 0.0 {
        let i12 = 2.0 * tan_a * tan_b / (tan_a + tan_b) * (h1 * h1 + h2 * h2) + 2.0 * h1 * h2;
        i12 / (2.0 * l3 * l4 - i12)
    } else {
        2.0 * h1 * h2 / (2.0 * l3 * l4 - 2.0 * h1 * h2)
    };

    [iou01, iou02, iou03, iou12].map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
}

/// Pairwise IoUs of the four candidates from the closed-form expressions.
pub fn iou_matrix(w: f64, h: f64, rs: f64) -> Result<IouMatrix> {
    check_extents(w, h)?;
    let rs = check_rs(rs)?;
    let [i01, i02, i03, i12] = if w >= h {
        closed_form_pairs(w, h, cross_ratio(h / w, rs), rs)
    } else {
        // Transposing the frame keeps candidates 0 and 3 and swaps 1 with 2.
        let [t01, t02, t03, t12] = closed_form_pairs(h, w, cross_ratio(w / h, rs), rs);
        [t02, t01, t03, t12]
    };
    Ok(IouMatrix {
        m: [
            [1.0, i01, i02, i03],
            [i01, 1.0, i12, i02],
            [i02, i12, 1.0, i01],
            [i03, i02, i01, 1.0],
        ],
    })
}

/// Pairwise IoUs of the four candidates by polygon clipping.
pub fn oracle_iou_matrix(w: f64, h: f64, rs: f64) -> Result<IouMatrix> {
    let set = four_candidates(&HorizontalBox::new(0.0, 0.0, w, h)?, rs)?;
    let mut m = [[1.0; 4]; 4];
    for i in 0..4 {
        for j in 0..i {
            let v = iou_oracle(&set.candidates[i], &set.candidates[j])?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(IouMatrix { m })
}

pub fn encode(b: &OrientedBox) -> Result<CobbVector> {
    let hbb = outer_hbb(b);
    if hbb.w <= 0.0 || hbb.h <= 0.0 {
        return Err(degenerate("outer box has zero extent"));
    }
    let rs = sliding_ratio(b)?;
    let class = classify(b)?;
    let m = iou_matrix(hbb.w, hbb.h, rs)?;
    Ok(CobbVector {
        xc: hbb.xc,
        yc: hbb.yc,
        w: hbb.w,
        h: hbb.h,
        rs,
        scores: m.row(class),
    })
}

/// Index of the largest score; the first maximum wins.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Builds the rectangle for one candidate index.
pub fn candidate_box(hbb: &HorizontalBox, rs: f64, class: usize) -> Result<OrientedBox> {
    if class > 3 {
        return Err(invalid(format!("candidate index {class} out of range")));
    }
    four_candidates(hbb, rs)?.candidates[class].to_rectangle()
}

pub fn decode(v: &CobbVector) -> Result<OrientedBox> {
    check_extents(v.w, v.h)?;
    if !(v.xc.is_finite() && v.yc.is_finite()) || !v.scores.iter().all(|s| s.is_finite()) {
        return Err(invalid("vector entries must be finite"));
    }
    if !v.rs.is_finite() {
        return Err(invalid("sliding ratio must be finite"));
    }
    candidate_box(&v.hbb(), v.rs.clamp(0.0, 0.5), argmax(&v.scores))
}

fn aspect(w: f64, h: f64) -> f64 {
    (w / h).min(h / w)
}

/// Sliding ratio from acreage ratio via `4 rs (1 - rs) = RHS(ra, r_wh)`.
pub fn rs_from_ra(ra: f64, w: f64, h: f64) -> Result<f64> {
    check_extents(w, h)?;
    if !ra.is_finite() || !(min_acreage_ratio(w, h)?..=1.0).contains(&ra) {
        return Err(invalid(format!("acreage ratio {ra} not attainable")));
    }
    let r2 = aspect(w, h).powi(2);
    let q = ra * (1.0 - ra);
    let s = ((1.0 + r2).powi(2) - 16.0 * r2 * q).max(0.0).sqrt();
    // 1 - RHS = 2 (1 - 2 ra)^2 / (S + 1 - r^2); take the root in [0, 0.5]
    let denom = s + 1.0 - r2;
    let t = (1.0 - 2.0 * ra).abs();
    let root = if denom > 0.0 {
        t * (2.0 / denom).sqrt()
    } else {
        0.0
    };
    Ok((0.5 * (1.0 - root)).clamp(0.0, 0.5))
}

/// Inverse of [`rs_from_ra`] on the chosen branch.
pub fn ra_from_rs(rs: f64, w: f64, h: f64, branch: RaBranch) -> Result<f64> {
    check_extents(w, h)?;
    let rs = check_rs(rs)?;
    let r2 = aspect(w, h).powi(2);
    let k = 4.0 * rs * (1.0 - rs);
    // sqrt(1 - 4 ra (1 - ra)) = (1 - 2 rs) sqrt(1 - r^2 K)
    let root = (1.0 - 2.0 * rs) * (1.0 - r2 * k).max(0.0).sqrt();
    Ok(match branch {
        RaBranch::Below => 0.5 * (1.0 - root),
        RaBranch::Above => 0.5 * (1.0 + root),
    })
}

/// Infimum of the acreage ratio for an outer box of this shape.
///
/// A thin rectangle along the diagonal fits any outer box, so the infimum is
/// 0 for every aspect; the value is not attained by a box of positive area.
pub fn min_acreage_ratio(w: f64, h: f64) -> Result<f64> {
    check_extents(w, h)?;
    Ok(0.0)
}
