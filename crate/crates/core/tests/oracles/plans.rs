use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchplan_core::attention::{
    apply_plan, build_plan, AttentionMap, AttentionWeightPlan, RelationSpan, TokenSpan, WeightEntry,
};
use sketchplan_core::geometry::RasterMask;

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RasterMask {
    loop {
        let p: f64 = rng.random_range(0.05..0.6);
        let m = RasterMask::from_bits(w, h, (0..w * h).map(|_| rng.random_bool(p)).collect()).unwrap();
        if !m.is_empty() {
            return m;
        }
    }
}

fn random_span(rng: &mut ChaCha8Rng, prompt_id: u32) -> TokenSpan {
    let start = rng.random_range(0..6);
    TokenSpan::new(prompt_id, start, start + rng.random_range(1..4)).unwrap()
}

pub fn relation_pattern_over_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (w, h) = (rng.random_range(4..20), rng.random_range(4..20));
        let mi = random_mask(&mut rng, w, h);
        let mj = random_mask(&mut rng, w, h);
        let (ci, cj, cij) = (random_span(&mut rng, 0), random_span(&mut rng, 1), random_span(&mut rng, 2));
        let (lr, lrel) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let plan = build_plan(
            &[(mi.clone(), ci), (mj.clone(), cj)],
            &[RelationSpan { subject: 0, object: 1, span: cij }],
            lr,
            lrel,
        )
        .unwrap();
        assert_eq!(plan.entries.len(), 5);
        let pos: Vec<&WeightEntry> = plan.entries.iter().filter(|e| e.lambda == lr).collect();
        assert_eq!(pos.len(), 2);
        assert_eq!((&pos[0].mask, pos[0].span), (&mi, ci));
        assert_eq!((&pos[1].mask, pos[1].span), (&mj, cj));

        let joint = RasterMask::from_fn(w, h, |x, y| mi.get(x, y) || mj.get(x, y)).unwrap();
        let only_j = RasterMask::from_fn(w, h, |x, y| joint.get(x, y) && !mi.get(x, y)).unwrap();
        let only_i = RasterMask::from_fn(w, h, |x, y| joint.get(x, y) && !mj.get(x, y)).unwrap();
        let rel = &plan.entries[2..];
        assert_eq!((&rel[0].mask, rel[0].span, rel[0].lambda), (&joint, cij, lrel));
        assert_eq!((&rel[1].mask, rel[1].span, rel[1].lambda), (&only_j, ci, -lrel));
        assert_eq!((&rel[2].mask, rel[2].span, rel[2].lambda), (&only_i, cj, -lrel));
    }
}

fn random_plan(rng: &mut ChaCha8Rng, w: u32, h: u32, tokens: u32) -> AttentionWeightPlan {
    let entries = (0..rng.random_range(1..8))
        .map(|_| {
            let start = rng.random_range(0..tokens);
            WeightEntry {
                mask: random_mask(rng, w, h),
                span: TokenSpan::new(0, start, rng.random_range(start + 1..=tokens)).unwrap(),
                lambda: rng.random_range(-3.0..3.0),
            }
        })
        .collect();
    AttentionWeightPlan {
        latent_width: w,
        latent_height: h,
        entries,
    }
}

pub fn apply_plan_is_local_and_additive() {
    let (w, h, t) = (16u32, 16u32, 8u32);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start = Instant::now();
    for _ in 0..50 {
        let values: Vec<f64> = (0..w * h * t).map(|_| rng.random_range(-4.0..4.0)).collect();
        let map = AttentionMap::from_values(w, h, t as usize, vec![0], values).unwrap();
        let plan = random_plan(&mut rng, w, h, t);
        let out = apply_plan(&map, &plan).unwrap();

        for y in 0..h {
            for x in 0..w {
                for c in 0..t {
                    let mut expected = map.get(x, y, c as usize);
                    let mut touched = false;
                    for e in &plan.entries {
                        if e.mask.get(x, y) && c >= e.span.start && c < e.span.end {
                            expected += e.lambda;
                            touched = true;
                        }
                    }
                    let got = out.get(x, y, c as usize);
                    if touched {
                        assert_eq!(got, expected);
                    } else {
                        assert_eq!(got.to_bits(), map.get(x, y, c as usize).to_bits());
                    }
                }
            }
        }

        let mut stepwise = map.clone();
        for e in &plan.entries {
            let single = AttentionWeightPlan {
                entries: vec![e.clone()],
                ..plan.clone()
            };
            stepwise = apply_plan(&stepwise, &single).unwrap();
        }
        assert_eq!(stepwise, out);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
}
