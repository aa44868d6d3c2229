use proptest::prelude::*;
use tfcount::geometry::BBox;
use tfcount::mask::{BinaryMask, MaskProposal};
use tfcount::matching::{
    cosine, count, pool_mask_feature, refine_prototype, transductive_update, FeatureMap, MaskInterp, Prototype,
    ScoredProposal,
};

fn scored(similarities: &[f64]) -> Vec<ScoredProposal> {
    similarities
        .iter()
        .map(|&s| {
            let mut p = ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), vec![s]);
            p.similarity = s;
            p
        })
        .collect()
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_symmetric(a in prop::collection::vec(-5.0f64..5.0, 1..16), b in prop::collection::vec(-5.0f64..5.0, 1..16)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let c = cosine(a, b);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(b, a));
    }

    #[test]
    fn count_never_rises_with_theta(sims in prop::collection::vec(-1.0f64..=1.0, 0..50), n_ref in 0usize..5, t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
        let s = scored(&sims);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(count(&s, hi, n_ref).count <= count(&s, lo, n_ref).count);
        prop_assert_eq!(count(&s, 1.0, n_ref).count, n_ref);
    }

    #[test]
    fn update_stays_between_prototype_and_selected(
        proto in prop::collection::vec(-1.0f64..1.0, 4),
        feats in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 0..12),
        delta in -0.9f64..0.9,
    ) {
        let p = Prototype { vector: proto.clone(), support_count: 3.0, update_round: 0 };
        let s: Vec<ScoredProposal> = feats
            .iter()
            .map(|f| {
                let mut sp = ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), f.clone());
                sp.similarity = cosine(&proto, f);
                sp
            })
            .collect();
        let u = transductive_update(&p, &s, delta);
        let chosen: Vec<&ScoredProposal> = s.iter().filter(|x| x.similarity > delta).collect();
        prop_assert_eq!(u.support_count, 3.0 + chosen.len() as f64);
        prop_assert_eq!(u.update_round, 1);
        for j in 0..4 {
            let vals = std::iter::once(proto[j]).chain(chosen.iter().map(|c| c.feature[j]));
            let (lo, hi) = vals.fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v), h.max(v)));
            prop_assert!(u.vector[j] >= lo - 1e-12 && u.vector[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn pooling_a_constant_map_returns_the_constant(
        w in 2usize..60, h in 2usize..60, gw in 1usize..12, gh in 1usize..12,
        x0 in 0usize..60, y0 in 0usize..60, bw in 1usize..30, bh in 1usize..30,
        hard in any::<bool>(),
    ) {
        let (gw, gh) = (gw.min(w), gh.min(h));
        let (x0, y0) = (x0 % w, y0 % h);
        let mask = BinaryMask::from_box(w, h, BBox::new(x0, y0, (x0 + bw).min(w), (y0 + bh).min(h)));
        let fm = FeatureMap::new(gh, gw, 3, [0.5f32, -2.0, 7.25].repeat(gw * gh), w, h).unwrap();
        let interp = if hard { MaskInterp::Hard } else { MaskInterp::Soft };
        let f = pool_mask_feature(&fm, &mask, interp);
        prop_assert!((f[0] - 0.5).abs() < 1e-12 && (f[1] + 2.0).abs() < 1e-12 && (f[2] - 7.25).abs() < 1e-12);
    }
}

#[test]
fn zero_rounds_leave_the_prototype_alone() {
    let p = Prototype { vector: vec![1.0, 0.0], support_count: 3.0, update_round: 0 };
    let s = vec![ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), vec![0.9, 0.1])];
    let (q, rescored) = refine_prototype(p.clone(), s, 0.5, 0);
    assert_eq!(q, p);
    assert!((rescored[0].similarity - 0.9 / (0.82f64).sqrt()).abs() < 1e-12);
    assert_eq!(rescored[0].proposal.similarity, Some(rescored[0].similarity));
}

#[test]
fn rounds_accumulate_support() {
    let p = Prototype { vector: vec![1.0, 0.0], support_count: 3.0, update_round: 0 };
    let s = vec![
        ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), vec![1.0, 0.2]),
        ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), vec![-1.0, 0.0]),
    ];
    let (q, _) = refine_prototype(p, s, 0.5, 2);
    assert_eq!(q.update_round, 2);
    assert_eq!(q.support_count, 5.0);
    // Round 1: (3*[1,0] + [1,0.2]) / 4; round 2 adds the same feature again.
    let r1 = [1.0, 0.05];
    let r2 = [(4.0 * r1[0] + 1.0) / 5.0, (4.0 * r1[1] + 0.2) / 5.0];
    assert!((q.vector[0] - r2[0]).abs() < 1e-12 && (q.vector[1] - r2[1]).abs() < 1e-12);
}
