use std::f64::consts::{FRAC_PI_4, PI};

use proptest::prelude::*;

use cobb::baselines::{Acute, Codec, Csl, GlidingVertex, LongEdge};
use cobb::cobb::{
    acreage_ratio, decode, encode, four_candidates, iou_matrix, oracle_iou_matrix, ra_from_rs, rs_from_ra,
    sliding_ratio, RaBranch,
};
use cobb::geom::{iou_oracle, outer_hbb, vertices_of, HorizontalBox, OrientedBox};
use cobb::io::parse_dota_line;
use cobb::target::{cobb_loss, decode_target, encode_target, LossWeights, Proposal, Variant};

fn any_box() -> impl Strategy<Value = OrientedBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.2..30.0f64, 0.2..30.0f64, -4.0..4.0f64)
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let ab = iou_oracle(&a, &b).unwrap();
        let ba = iou_oracle(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((iou_oracle(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertices_fit_outer_box(b in any_box()) {
        let q = vertices_of(&b);
        prop_assert!((q.area() - b.area()).abs() <= 1e-9 * b.area());
        let hbb = outer_hbb(&b);
        for p in q.vertices() {
            prop_assert!((p.x - hbb.xc).abs() <= 0.5 * hbb.w + 1e-9);
            prop_assert!((p.y - hbb.yc).abs() <= 0.5 * hbb.h + 1e-9);
        }
        prop_assert_eq!(b.canonicalize(), b);
    }

    #[test]
    fn candidates_share_outer_box_and_ratio(w in 0.1..10.0f64, h in 0.1..10.0f64, rs in 1e-6..0.5f64) {
        let hbb = HorizontalBox::new(1.0, -2.0, w, h).unwrap();
        let set = four_candidates(&hbb, rs).unwrap();
        for c in set.candidates {
            let b = c.to_rectangle().unwrap();
            let o = outer_hbb(&b);
            let tol = 1e-9 * hbb.diagonal();
            prop_assert!((o.xc - hbb.xc).abs() < tol && (o.yc - hbb.yc).abs() < tol);
            prop_assert!((o.w - w).abs() < tol && (o.h - h).abs() < tol);
            prop_assert!((sliding_ratio(&b).unwrap() - rs).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_matrix_matches_oracle(w in 0.05..1.0f64, h in 0.05..1.0f64, rs in 1e-7..0.5f64) {
        let c = iou_matrix(w, h, rs).unwrap();
        let o = oracle_iou_matrix(w, h, rs).unwrap();
        for i in 0..4 {
            prop_assert_eq!(c.m[i][i], 1.0);
            for j in 0..4 {
                prop_assert_eq!(c.m[i][j], c.m[j][i]);
                prop_assert!((c.m[i][j] - o.m[i][j]).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn cobb_roundtrip(b in any_box()) {
        let back = decode(&encode(&b).unwrap()).unwrap();
        prop_assert!(iou_oracle(&b, &back).unwrap() >= 1.0 - 1e-9);
    }

    #[test]
    fn cobb_translation_shifts_only_center(b in any_box(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
        let moved = b.with_center(b.cx() + dx, b.cy() + dy).unwrap();
        let (e, f) = (encode(&b).unwrap(), encode(&moved).unwrap());
        prop_assert!((f.xc - e.xc - dx).abs() < 1e-9 && (f.yc - e.yc - dy).abs() < 1e-9);
        prop_assert!((f.rs - e.rs).abs() < 1e-9);
        for k in 0..4 {
            prop_assert!((f.scores[k] - e.scores[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_permutes_scores(b in any_box()) {
        let m = OrientedBox::new(b.cx(), b.cy(), b.w_side(), b.h_side(), PI - b.theta()).unwrap();
        let (e, f) = (encode(&b).unwrap(), encode(&m).unwrap());
        prop_assert!((e.rs - f.rs).abs() < 1e-9 && (e.w - f.w).abs() < 1e-9 && (e.h - f.h).abs() < 1e-9);
        // reflection pairs candidates 0 with 3 and 1 with 2
        for k in 0..4 {
            prop_assert!((e.scores[k] - f.scores[3 - k]).abs() < 1e-9, "{:?} {:?}", e.scores, f.scores);
        }
    }

    #[test]
    fn rs_ra_inverse_per_branch(w in 0.1..5.0f64, h in 0.1..5.0f64, rs in 0.0..=0.5f64) {
        for branch in [RaBranch::Below, RaBranch::Above] {
            let ra = ra_from_rs(rs, w, h, branch).unwrap();
            prop_assert!((rs_from_ra(ra, w, h).unwrap() - rs).abs() < 1e-7);
        }
    }

    #[test]
    fn measured_rs_follows_from_measured_ra(b in any_box()) {
        let hbb = outer_hbb(&b);
        let rs = rs_from_ra(acreage_ratio(&b), hbb.w, hbb.h).unwrap();
        prop_assert!((rs - sliding_ratio(&b).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn target_roundtrip_and_loss(b in any_box(), dx in -3.0..3.0f64, dy in -3.0..3.0f64,
                                 pw in 1.0..30.0f64, ph in 1.0..30.0f64, tp in -3.0..3.0f64, oriented: bool, ln: bool) {
        let p = if oriented {
            Proposal::oriented(b.cx() + dx, b.cy() + dy, pw, ph, tp).unwrap()
        } else {
            Proposal::horizontal(b.cx() + dx, b.cy() + dy, pw, ph).unwrap()
        };
        let variant = if ln { Variant::Ln } else { Variant::Sig };
        let t = encode_target(&b, &p, variant, variant.default_lambda()).unwrap();
        prop_assert!(t.st.iter().all(|s| (0.0..=1.0).contains(s)));
        match variant {
            Variant::Sig => prop_assert!((0.0..=1.0).contains(&t.rt)),
            Variant::Ln => prop_assert!(t.rt <= 1.0),
        }
        let back = decode_target(&t, &p).unwrap();
        prop_assert!(iou_oracle(&b, &back).unwrap() >= 1.0 - 1e-9);
        let w = LossWeights::default();
        prop_assert_eq!(cobb_loss(&t, &t, &w).unwrap(), 0.0);
        let mut q = t;
        q.tx += 1e-3;
        prop_assert!(cobb_loss(&q, &t, &w).unwrap() > 0.0);
    }

    #[test]
    fn exact_baselines_roundtrip(b in any_box()) {
        for c in [&Acute as &dyn Codec, &LongEdge, &GlidingVertex] {
            let back = c.decode(&c.encode_values(&b).unwrap()).unwrap();
            prop_assert!(iou_oracle(&b, &back).unwrap() >= 1.0 - 1e-9, "{}", c.descriptor().name);
        }
    }

    #[test]
    fn csl_error_is_at_most_half_a_bin(b in any_box()) {
        let csl = Csl::default();
        let back = csl.decode(&csl.encode_values(&b).unwrap()).unwrap();
        let phi = |x: &OrientedBox| LongEdge.encode_values(x).unwrap()[4];
        let d = (phi(&back) - phi(&b) + PI / 2.0).rem_euclid(PI) - PI / 2.0;
        // squares may come back a quarter turn apart, which is the same box
        let d = if (b.w_side() - b.h_side()).abs() < 1e-12 { d.rem_euclid(PI / 2.0).min(PI / 2.0 - d.rem_euclid(PI / 2.0)) } else { d.abs() };
        prop_assert!(d <= 0.5 * csl.bin_width() + 1e-9);
    }

    #[test]
    fn dota_parser_never_panics(s in "\\PC{0,80}") {
        let _ = parse_dota_line(&s, 1);
    }

    #[test]
    fn dota_parser_reads_numbers(v in proptest::array::uniform8(-1e4..1e4f64), d in 0i64..3) {
        let line = format!("{} {} {} {} {} {} {} {} plane {d}", v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
        let r = parse_dota_line(&line, 3).unwrap();
        prop_assert_eq!(r.difficulty, d);
        let mut xs: Vec<f64> = r.quad.iter().map(|p| p.x).collect();
        let mut orig = vec![v[0], v[2], v[4], v[6]];
        xs.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        prop_assert_eq!(xs, orig);
    }
}

#[test]
fn rs_from_ra_is_monotone_on_each_branch() {
    for aspect in [1.0, 0.999, 0.9, 0.75, 0.5, 0.3, 0.1] {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let ra = 0.5 * i as f64 / 1000.0;
            let rs = rs_from_ra(ra, 1.0, aspect).unwrap();
            assert!(rs > prev, "aspect {aspect} ra {ra}");
            prev = rs;
        }
    }
}

/// Decoded boxes as the outer box crosses w = h at fixed rs.
fn branch_switch_loss(rs: f64, eps: f64) -> f64 {
    let wide = cobb::cobb::candidate_box(&HorizontalBox::new(0.0, 0.0, 1.0 + eps, 1.0).unwrap(), rs, 0).unwrap();
    let tall = cobb::cobb::candidate_box(&HorizontalBox::new(0.0, 0.0, 1.0 - eps, 1.0).unwrap(), rs, 0).unwrap();
    1.0 - iou_oracle(&wide, &tall).unwrap()
}

#[test]
fn square_outer_box_switch_is_smooth_away_from_half() {
    for rs in [0.05, 0.2, 0.35, 0.45] {
        assert!(branch_switch_loss(rs, 1e-6) <= 1e-4, "rs {rs}");
    }
}

#[test]
fn square_outer_box_switch_at_half_scales_like_a_square_root() {
    // at rs = 0.5 the vertex offset is sqrt(w^2 - h^2) / 2
    let a = branch_switch_loss(0.5, 1e-6);
    let b = branch_switch_loss(0.5, 1e-8);
    assert!(a > 1e-4, "{a}");
    assert!((a / b - 10.0).abs() < 1.0, "{a} {b}");
    let sq = OrientedBox::new(0.0, 0.0, 1.0, 1.0, FRAC_PI_4).unwrap();
    assert!((sliding_ratio(&sq).unwrap() - 0.5).abs() < 1e-12);
}
