//! Proposal-relative regression targets and the composite loss.

use serde::{Deserialize, Serialize};

use crate::cobb::{self, CobbVector};
use crate::error::{degenerate, invalid, Error, Result};
use crate::geom::{iou_oracle, HorizontalBox, OrientedBox, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalKind {
    Horizontal,
    Oriented,
}

/// A proposal region. `theta_p` is zero for horizontal proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub kind: ProposalKind,
    pub xp: f64,
    pub yp: f64,
    pub wp: f64,
    pub hp: f64,
    pub theta_p: f64,
}

impl Proposal {
    pub fn horizontal(xp: f64, yp: f64, wp: f64, hp: f64) -> Result<Self> {
        Self::build(ProposalKind::Horizontal, xp, yp, wp, hp, 0.0)
    }

    pub fn oriented(xp: f64, yp: f64, wp: f64, hp: f64, theta_p: f64) -> Result<Self> {
        Self::build(ProposalKind::Oriented, xp, yp, wp, hp, theta_p)
    }

    fn build(kind: ProposalKind, xp: f64, yp: f64, wp: f64, hp: f64, theta_p: f64) -> Result<Self> {
        if ![xp, yp, wp, hp, theta_p].iter().all(|v| v.is_finite()) {
            return Err(invalid("proposal fields must be finite"));
        }
        if wp <= 0.0 || hp <= 0.0 {
            return Err(degenerate(format!("proposal extents {wp} x {hp}")));
        }
        Ok(Self {
            kind,
            xp,
            yp,
            wp,
            hp,
            theta_p,
        })
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.xp, self.yp)
    }

    fn angle(&self) -> f64 {
        match self.kind {
            ProposalKind::Horizontal => 0.0,
            ProposalKind::Oriented => self.theta_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `rt = 2 rs`
    Sig,
    /// Logarithmic target, branch chosen by the acreage ratio.
    Ln,
}

impl Variant {
    pub fn default_lambda(self) -> f64 {
        match self {
            Variant::Sig => 2.0,
            Variant::Ln => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub rt: f64,
    pub st: [f64; 4],
    pub variant: Variant,
    pub lambda: f64,
}

impl TargetVector {
    pub fn box_terms(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            smooth_l1_beta: 1.0,
        }
    }
}

fn rt_from_rs(rs: f64, class: usize, variant: Variant) -> f64 {
    match variant {
        Variant::Sig => 2.0 * rs,
        // candidates 0 and 3 are the ra <= 0.5 branch
        Variant::Ln if class == 0 || class == 3 => 1.0 + rs.log2(),
        Variant::Ln => 1.0 + (1.0 - rs).log2(),
    }
}

/// Recovers `rs` from a (possibly out-of-range) predicted `rt`.
pub fn rs_from_rt(rt: f64, variant: Variant) -> f64 {
    let rs = match variant {
        Variant::Sig => 0.5 * rt.clamp(0.0, 1.0),
        Variant::Ln => {
            let rt = rt.min(1.0);
            if rt < 0.0 {
                (rt - 1.0).exp2()
            } else {
                1.0 - (rt - 1.0).exp2()
            }
        }
    };
    rs.clamp(0.0, 0.5)
}

pub fn encode_target(
    gt: &OrientedBox,
    proposal: &Proposal,
    variant: Variant,
    lambda: f64,
) -> Result<TargetVector> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let local = gt.rotated_about(proposal.center(), -proposal.angle())?;
    let v = cobb::encode(&local)?;
    let class = cobb::argmax(&v.scores);
    Ok(TargetVector {
        tx: (v.xc - proposal.xp) / proposal.wp,
        ty: (v.yc - proposal.yp) / proposal.hp,
        tw: (v.w / proposal.wp).ln(),
        th: (v.h / proposal.hp).ln(),
        rt: rt_from_rs(v.rs, class, variant),
        st: v.scores.map(|s| s.max(0.0).powf(lambda)),
        variant,
        lambda,
    })
}

pub fn decode_target(t: &TargetVector, proposal: &Proposal) -> Result<OrientedBox> {
    let w = proposal.wp * t.tw.exp();
    let h = proposal.hp * t.th.exp();
    if !(w.is_finite() && h.is_finite()) || w <= 0.0 || h <= 0.0 {
        return Err(invalid(format!("recovered extents {w} x {h} are not positive")));
    }
    let v = CobbVector {
        xc: proposal.xp + t.tx * proposal.wp,
        yc: proposal.yp + t.ty * proposal.hp,
        w,
        h,
        rs: rs_from_rt(t.rt, t.variant),
        // powers are monotone, so argmax over st picks the same class
        scores: t.st,
    };
    cobb::decode(&v)?.rotated_about(proposal.center(), proposal.angle())
}

pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_sum(a: &[f64], b: &[f64], beta: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| smooth_l1(x - y, beta)).sum()
}

pub fn cobb_loss(pred: &TargetVector, target: &TargetVector, weights: &LossWeights) -> Result<f64> {
    if pred.variant != target.variant || pred.lambda != target.lambda {
        return Err(invalid("prediction and target use different variants"));
    }
    let beta = weights.smooth_l1_beta;
    if !(beta > 0.0) || weights.w2 < 0.0 || weights.w3 < 0.0 || weights.w4 < 0.0 {
        return Err(invalid("loss weights must be non-negative and beta positive"));
    }
    Ok(weights.w2 * smooth_l1_sum(&pred.box_terms(), &target.box_terms(), beta)
        + weights.w3 * smooth_l1(pred.rt - target.rt, beta)
        + weights.w4 * smooth_l1_sum(&pred.st, &target.st, beta))
}

/// Parameterization probed by [`sensitivity_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensitivityFn {
    /// The logarithmic sliding-ratio target.
    RLn,
    /// `1 + log2(ra)`, decoded through the rs/ra relation.
    FLnOfRa,
}

fn decode_probe(f: SensitivityFn, r: f64, hbb: &HorizontalBox) -> Result<OrientedBox> {
    if !r.is_finite() || r > 1.0 {
        return Err(invalid(format!("probe parameter {r} outside (-inf, 1]")));
    }
    let (rs, below) = match f {
        SensitivityFn::RLn => (rs_from_rt(r, Variant::Ln), r < 0.0),
        SensitivityFn::FLnOfRa => {
            let ra = (r - 1.0).exp2();
            (cobb::rs_from_ra(ra, hbb.w, hbb.h)?, ra < 0.5)
        }
    };
    // at rs = 0.5 candidate 0 meets 2 (wide boxes) or 1 (tall boxes)
    let above = if hbb.w >= hbb.h { 2 } else { 1 };
    cobb::candidate_box(hbb, rs, if below { 0 } else { above })
}

/// `(1 - IoU(dec(r), dec(r + eps))) / eps` for a fixed outer box.
pub fn sensitivity_probe(f: SensitivityFn, r: f64, eps: f64, hbb: &HorizontalBox) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let a = decode_probe(f, r, hbb)?;
    let b = decode_probe(f, r + eps, hbb)?;
    let iou = iou_oracle(&a, &b).map_err(|_: Error| degenerate("probe decoded to zero area"))?;
    Ok((1.0 - iou) / eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::iou_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_6, PI};

    fn bx(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, h, t).unwrap()
    }

    #[test]
    fn axis_box_on_its_own_proposal() {
        let p = Proposal::horizontal(0.0, 0.0, 4.0, 2.0).unwrap();
        let t = encode_target(&bx(0.0, 0.0, 4.0, 2.0, 0.0), &p, Variant::Sig, 2.0).unwrap();
        assert_eq!(t.box_terms(), [0.0; 4]);
        assert_eq!(t.rt, 0.0);
        // the axis box is candidate 1; candidate 2 coincides with it at rs = 0
        assert_eq!(t.st, [0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn rt_examples() {
        assert_eq!(rt_from_rs(0.25, 0, Variant::Sig), 0.5);
        assert_eq!(rt_from_rs(0.25, 3, Variant::Ln), -1.0);
        assert!((rt_from_rs(0.25, 1, Variant::Ln) - (1.0 + 0.75f64.log2())).abs() < 1e-15);
        assert_eq!(rt_from_rs(0.5, 0, Variant::Ln), 0.0);
        assert_eq!(rt_from_rs(0.5, 2, Variant::Ln), 0.0);
        assert_eq!(rs_from_rt(0.0, Variant::Ln), 0.5);
        assert_eq!(rs_from_rt(-1.0, Variant::Ln), 0.25);
        assert_eq!(rs_from_rt(5.0, Variant::Ln), 0.0);
        assert_eq!(rs_from_rt(1.7, Variant::Sig), 0.5);
        assert_eq!(rs_from_rt(-0.2, Variant::Sig), 0.0);
    }

    #[test]
    fn ln_branch_follows_acreage_ratio() {
        // a thin diagonal box has ra < 0.5
        let b = bx(0.0, 0.0, 6.0, 0.5, 0.6);
        assert!(cobb::acreage_ratio(&b) < 0.5);
        let p = Proposal::horizontal(0.0, 0.0, 5.0, 4.0).unwrap();
        let t = encode_target(&b, &p, Variant::Ln, 1.0).unwrap();
        assert!(t.rt < 0.0);
        let back = decode_target(&t, &p).unwrap();
        assert!(iou_oracle(&b, &back).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn oriented_proposal_coincident_with_box() {
        let gt = bx(0.0, 0.0, 4.0, 2.0, FRAC_PI_6);
        let p = Proposal::oriented(0.0, 0.0, 4.0, 2.0, FRAC_PI_6).unwrap();
        for variant in [Variant::Sig, Variant::Ln] {
            let t = encode_target(&gt, &p, variant, variant.default_lambda()).unwrap();
            for v in t.box_terms() {
                assert!(v.abs() < 1e-12, "{t:?}");
            }
            let expected_rt = if variant == Variant::Sig { 0.0 } else { 1.0 };
            assert!((t.rt - expected_rt).abs() < 1e-12);
            assert!((t.st[1] - 1.0).abs() < 1e-12 && (t.st[2] - 1.0).abs() < 1e-12);
            assert!(t.st[0] < 1e-12 && t.st[3] < 1e-12);
        }
    }

    #[test]
    fn zero_target_decodes_to_proposal() {
        let p = Proposal::horizontal(0.0, 0.0, 4.0, 2.0).unwrap();
        let t = TargetVector {
            tx: 0.0,
            ty: 0.0,
            tw: 0.0,
            th: 0.0,
            rt: 0.0,
            st: [0.0, 1.0, 0.0, 0.0],
            variant: Variant::Sig,
            lambda: 2.0,
        };
        let b = decode_target(&t, &p).unwrap();
        assert!(iou_oracle(&b, &bx(0.0, 0.0, 4.0, 2.0, 0.0)).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn decode_rejects_non_positive_extent() {
        let p = Proposal::horizontal(0.0, 0.0, 4.0, 2.0).unwrap();
        let mut t = encode_target(&bx(0.0, 0.0, 4.0, 2.0, 0.3), &p, Variant::Sig, 2.0).unwrap();
        t.tw = f64::NEG_INFINITY;
        assert!(matches!(decode_target(&t, &p), Err(Error::InvalidArgument(_))));
    }

    fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
        bx(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(1.0..40.0),
            rng.random_range(1.0..40.0),
            rng.random_range(0.0..PI),
        )
    }

    #[test]
    fn roundtrip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..10_000 {
            let gt = random_box(&mut rng);
            let c = gt.center();
            let (dx, dy) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let (pw, ph) = (rng.random_range(2.0..30.0), rng.random_range(2.0..30.0));
            let p = if i % 2 == 0 {
                Proposal::horizontal(c.x + dx, c.y + dy, pw, ph).unwrap()
            } else {
                Proposal::oriented(c.x + dx, c.y + dy, pw, ph, rng.random_range(-PI..PI)).unwrap()
            };
            for variant in [Variant::Sig, Variant::Ln] {
                let t = encode_target(&gt, &p, variant, variant.default_lambda()).unwrap();
                let back = decode_target(&t, &p).unwrap();
                let iou = iou_oracle(&gt, &back).unwrap();
                assert!(iou >= 1.0 - 1e-9, "{gt:?} {p:?} {variant:?} iou {iou}");
            }
        }
    }

    #[test]
    fn translation_and_scale_equivariance() {
        let gt = bx(3.0, -1.0, 5.0, 2.0, 0.4);
        let p = Proposal::horizontal(2.0, 0.0, 6.0, 3.0).unwrap();
        let t = encode_target(&gt, &p, Variant::Ln, 1.0).unwrap();
        let s = 2.5;
        let gt2 = bx(3.0 * s + 7.0, -s - 4.0, 5.0 * s, 2.0 * s, 0.4);
        let p2 = Proposal::horizontal(2.0 * s + 7.0, -4.0, 6.0 * s, 3.0 * s).unwrap();
        let t2 = encode_target(&gt2, &p2, Variant::Ln, 1.0).unwrap();
        for (a, b) in t.box_terms().iter().zip(t2.box_terms()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.rt - t2.rt).abs() < 1e-12);
    }

    #[test]
    fn rotating_box_and_proposal_together() {
        let gt = bx(3.0, 1.0, 5.0, 2.0, 0.4);
        let p = Proposal::oriented(2.0, 0.0, 6.0, 3.0, 0.3).unwrap();
        let t = encode_target(&gt, &p, Variant::Sig, 2.0).unwrap();
        for phi in [0.1, 1.0, 2.5, -0.7] {
            let g2 = gt.rotated_about(p.center(), phi).unwrap();
            let p2 = Proposal::oriented(p.xp, p.yp, p.wp, p.hp, p.theta_p + phi).unwrap();
            let t2 = encode_target(&g2, &p2, Variant::Sig, 2.0).unwrap();
            let a = [t.tx, t.ty, t.tw, t.th, t.rt, t.st[0], t.st[1], t.st[2], t.st[3]];
            let b = [t2.tx, t2.ty, t2.tw, t2.th, t2.rt, t2.st[0], t2.st[1], t2.st[2], t2.st[3]];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "{phi}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn loss_examples() {
        let p = Proposal::horizontal(0.0, 0.0, 4.0, 3.0).unwrap();
        let t = encode_target(&bx(0.5, 0.2, 4.0, 2.0, 0.7), &p, Variant::Sig, 2.0).unwrap();
        let w = LossWeights::default();
        assert_eq!(cobb_loss(&t, &t, &w).unwrap(), 0.0);
        let mut q = t;
        q.rt += 1.0;
        assert!((cobb_loss(&q, &t, &w).unwrap() - 0.5).abs() < 1e-12);
        let w3 = LossWeights { w3: 3.0, ..w };
        assert!((cobb_loss(&q, &t, &w3).unwrap() - 1.5).abs() < 1e-12);
        let mut other = t;
        other.variant = Variant::Ln;
        assert!(cobb_loss(&t, &other, &w).is_err());
    }

    // Second path: flatten to a plain vector and use the piecewise definition.
    fn loss_by_hand(a: &TargetVector, b: &TargetVector, w: &LossWeights) -> f64 {
        let fa = [a.tx, a.ty, a.tw, a.th, a.rt, a.st[0], a.st[1], a.st[2], a.st[3]];
        let fb = [b.tx, b.ty, b.tw, b.th, b.rt, b.st[0], b.st[1], b.st[2], b.st[3]];
        let wts = [w.w2, w.w2, w.w2, w.w2, w.w3, w.w4, w.w4, w.w4, w.w4];
        let mut total = 0.0;
        for k in 0..9 {
            let d = (fa[k] - fb[k]).abs();
            let term = if d >= w.smooth_l1_beta {
                d - w.smooth_l1_beta / 2.0
            } else {
                d * d / (2.0 * w.smooth_l1_beta)
            };
            total += wts[k] * term;
        }
        total
    }

    #[test]
    fn loss_matches_second_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LossWeights {
            w2: 0.7,
            w3: 1.3,
            w4: 2.0,
            smooth_l1_beta: 0.4,
        };
        for _ in 0..500 {
            let p = Proposal::horizontal(0.0, 0.0, 20.0, 20.0).unwrap();
            let a = encode_target(&random_box(&mut rng).with_center(1.0, 2.0).unwrap(), &p, Variant::Ln, 1.0)
                .unwrap();
            let b = encode_target(&random_box(&mut rng).with_center(-1.0, 0.0).unwrap(), &p, Variant::Ln, 1.0)
                .unwrap();
            let l = cobb_loss(&a, &b, &w).unwrap();
            assert!((l - loss_by_hand(&a, &b, &w)).abs() <= 1e-12 * l.max(1.0));
        }
    }

    #[test]
    fn sensitivity_examples() {
        let sq = HorizontalBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mid = sensitivity_probe(SensitivityFn::RLn, 0.5, 1e-4, &sq).unwrap();
        let high = sensitivity_probe(SensitivityFn::RLn, 0.9, 1e-4, &sq).unwrap();
        assert!(mid.is_finite() && high.is_finite() && mid > 0.0 && high > 0.0);
        let ratio = mid / high;
        assert!((0.1..10.0).contains(&ratio), "{mid} {high}");

        let r = sensitivity_probe(SensitivityFn::RLn, 1e-3, 1e-4, &sq).unwrap();
        let f = sensitivity_probe(SensitivityFn::FLnOfRa, 1e-3, 1e-4, &sq).unwrap();
        assert!(f >= 10.0 * r, "{f} vs {r}");

        // r + eps leaves the domain
        assert!(sensitivity_probe(SensitivityFn::RLn, 1.0, 1e-4, &sq).is_err());
        assert!(sensitivity_probe(SensitivityFn::RLn, 0.2, 0.0, &sq).is_err());
    }

    #[test]
    fn probe_branch_switch_is_seamless() {
        for (w, h) in [(3.0, 2.0), (2.0, 3.0), (1.0, 1.0)] {
            let hbb = HorizontalBox::new(0.0, 0.0, w, h).unwrap();
            let v = sensitivity_probe(SensitivityFn::RLn, -1e-7, 2e-7, &hbb).unwrap();
            assert!(v < 10.0, "{w}x{h}: {v}");
        }
    }

    #[test]
    fn sensitivity_is_zero_for_identical_decodes() {
        let sq = HorizontalBox::new(0.0, 0.0, 2.0, 1.0).unwrap();
        // r + eps rounds back to r
        assert_eq!(sensitivity_probe(SensitivityFn::RLn, 0.5, 1e-20, &sq).unwrap(), 0.0);
        assert_eq!(sensitivity_probe(SensitivityFn::FLnOfRa, 0.5, 1e-20, &sq).unwrap(), 0.0);
    }
}
