use proptest::prelude::*;
use tfcount::geometry::BBox;
use tfcount::image::RawImage;
use tfcount::mask::{BinaryMask, MaskProposal, Origin};
use tfcount::proposals::{filter_and_dedup, grid_prompts, multiscale_expand, remap_to_original, ProposalSet};

fn boxed(w: usize, h: usize, b: BBox, conf: f32) -> MaskProposal {
    MaskProposal::new(BinaryMask::from_box(w, h, b), conf)
}

fn arb_box(w: usize, h: usize) -> impl Strategy<Value = BBox> {
    (0..w - 1, 0..h - 1, 1usize..20, 1usize..20)
        .prop_map(move |(x, y, bw, bh)| BBox::new(x, y, (x + bw).min(w), (y + bh).min(h)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tiles_partition_any_image(w in 3usize..90, h in 3usize..90, n_p in 1usize..4) {
        let n_p = n_p.min(w.min(h));
        let img = RawImage::filled(w, h, [1, 2, 3]).unwrap();
        let tiles = multiscale_expand(&img, n_p).unwrap();
        let mut cover = vec![0u32; w * h];
        for (i, t) in tiles.iter().enumerate() {
            prop_assert_eq!((t.transform.row, t.transform.col), (i / n_p, i % n_p));
            let r = t.transform.region;
            for y in r.y..r.bottom() {
                for x in r.x..r.right() {
                    cover[y * w + x] += 1;
                }
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn remapped_masks_stay_in_their_tile(w in 16usize..80, h in 16usize..80, n_p in 2usize..4, bits in prop::collection::vec(any::<bool>(), 64)) {
        let img = RawImage::filled(w, h, [0, 0, 0]).unwrap();
        for t in multiscale_expand(&img, n_p).unwrap() {
            let tile_mask = BinaryMask::from_fn_in(w, h, BBox::new(0, 0, w, h), |x, y| bits[(x * 8 / w) + 8 * (y * 8 / h)]);
            let m = remap_to_original(&MaskProposal::new(tile_mask, 0.9), &t.transform);
            prop_assert_eq!(m.origin, Origin::Tile { row: t.transform.row, col: t.transform.col });
            let r = t.transform.region;
            prop_assert!(m.mask.pixels().all(|p| r.contains(p.x, p.y)));
        }
    }

    #[test]
    fn dedup_leaves_no_duplicates_and_is_idempotent(
        boxes in prop::collection::vec((arb_box(40, 40), 0.0f32..1.0), 0..12),
        thr in 0.3f64..0.95,
    ) {
        let cands: Vec<MaskProposal> = boxes.iter().map(|(b, c)| boxed(40, 40, *b, *c)).collect();
        let once = filter_and_dedup(ProposalSet::new(vec![], cands.clone(), 40, 40), thr);
        prop_assert!(once.background_removed);
        prop_assert!(once.candidate_masks.len() <= cands.len());
        for (i, a) in once.candidate_masks.iter().enumerate() {
            for b in &once.candidate_masks[i + 1..] {
                prop_assert!(a.mask.iou(&b.mask) < thr);
            }
        }
        let twice = filter_and_dedup(once.clone(), thr);
        prop_assert_eq!(twice.candidate_masks, once.candidate_masks);
    }

    #[test]
    fn grid_prompts_are_inside(w in 1usize..300, h in 1usize..300, side in 1usize..40) {
        let pts = grid_prompts(w, h, side);
        prop_assert_eq!(pts.len(), side * side);
        prop_assert!(pts.iter().all(|p| p.x < w && p.y < h));
    }
}

#[test]
fn reference_duplicates_are_excluded() {
    let refs = vec![boxed(50, 50, BBox::new(10, 10, 20, 20), 1.0)];
    let cands = vec![
        boxed(50, 50, BBox::new(0, 0, 50, 50), 0.9),
        boxed(50, 50, BBox::new(10, 10, 20, 21), 0.9),
        boxed(50, 50, BBox::new(30, 30, 40, 40), 0.9),
    ];
    let out = filter_and_dedup(ProposalSet::new(refs, cands, 50, 50), 0.8);
    assert_eq!(out.candidate_masks.len(), 1);
    assert_eq!(out.candidate_masks[0].bbox(), BBox::new(30, 30, 40, 40));
}
