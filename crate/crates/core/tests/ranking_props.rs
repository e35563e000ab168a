mod common;

use e2fl_core::codec::{decode_ranking, encode_ranking};
use e2fl_core::ranking::{
    argsort, mask_size, position_square_norm, ranking_to_mask, reorder_scores, spearman_distance, vote, Ranking,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn vote_matches_brute_force_borda() {
    common::vote_matches_borda(1000, 2024).unwrap();
}

fn ranking_strategy(max_d: usize) -> impl Strategy<Value = Ranking> {
    prop::collection::vec(1..=max_d, 1..=3).prop_flat_map(|dims| {
        dims.into_iter()
            .map(|d| Just((0..d as u32).collect::<Vec<_>>()).prop_shuffle())
            .collect::<Vec<_>>()
            .prop_map(|layers| Ranking::new(layers).unwrap())
    })
}

fn same_shape(dims: Vec<usize>, n: usize) -> impl Strategy<Value = Vec<Ranking>> {
    let one = dims
        .into_iter()
        .map(|d| Just((0..d as u32).collect::<Vec<_>>()).prop_shuffle())
        .collect::<Vec<_>>()
        .prop_map(|layers| Ranking::new(layers).unwrap());
    prop::collection::vec(one, n)
}

fn voters() -> impl Strategy<Value = Vec<Ranking>> {
    (prop::collection::vec(1usize..=9, 1..=3), 1usize..=7).prop_flat_map(|(dims, n)| same_shape(dims, n))
}

proptest! {
    #[test]
    fn vote_is_anonymous(vs in voters(), seed in any::<u64>()) {
        let mut shuffled = vs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(vote(&vs).unwrap(), vote(&shuffled).unwrap());
    }

    #[test]
    fn vote_consensus_and_duplication(vs in voters(), copies in 1usize..4) {
        let r = &vs[0];
        prop_assert_eq!(&vote(std::iter::repeat_n(r, copies)).unwrap(), r);
        // Repeating every voter the same number of times leaves the outcome unchanged.
        let doubled: Vec<&Ranking> = vs.iter().chain(vs.iter()).collect();
        prop_assert_eq!(vote(doubled).unwrap(), vote(&vs).unwrap());
    }

    #[test]
    fn vote_output_is_valid(vs in voters()) {
        let out = vote(&vs).unwrap();
        prop_assert!(Ranking::new(out.layers().to_vec()).is_ok());
        prop_assert!(out.is_congruent(&vs[0]));
    }

    #[test]
    fn fixed_norm(r in ranking_strategy(40)) {
        for layer in r.layers() {
            let d = layer.len() as u64;
            prop_assert_eq!(position_square_norm(layer), d * (d - 1) * (2 * d - 1) / 6);
        }
    }

    #[test]
    fn spearman_is_a_metric(trip in prop::collection::vec(1usize..=8, 1..=2).prop_flat_map(|d| same_shape(d, 3))) {
        let (a, b, c) = (&trip[0], &trip[1], &trip[2]);
        let d = |x: &Ranking, y: &Ranking| spearman_distance(x, y).unwrap();
        prop_assert_eq!(d(a, a), 0);
        prop_assert_eq!(d(a, b) == 0, a == b);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert!(d(a, c) <= d(a, b) + d(b, c));
    }

    #[test]
    fn reorder_then_argsort_round_trips(r in ranking_strategy(30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<Vec<f64>> = r.layers().iter().map(|l| {
            // Distinct values: a shuffled arithmetic sequence with jitter below the spacing.
            let mut v: Vec<f64> = (0..l.len()).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
            v.shuffle(&mut rng);
            v
        }).collect();
        let out = reorder_scores(&scores, &r).unwrap();
        let back: Vec<Vec<u32>> = out.iter().map(|l| argsort(l).unwrap()).collect();
        prop_assert_eq!(back.as_slice(), r.layers());
        for (a, b) in out.iter().zip(&scores) {
            let (mut a, mut b) = (a.clone(), b.clone());
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn mask_popcount_and_top_entries(r in ranking_strategy(50), k in 1u32..=100) {
        let k = k as f64;
        let m = ranking_to_mask(&r, k).unwrap();
        for (bits, layer) in m.layers().iter().zip(r.layers()) {
            let t = mask_size(layer.len(), k);
            prop_assert_eq!(bits.iter().filter(|&&b| b).count(), t);
            for (pos, &e) in layer.iter().enumerate() {
                prop_assert_eq!(bits[e as usize], pos >= layer.len() - t);
            }
        }
    }

    #[test]
    fn codec_round_trip(r in ranking_strategy(300)) {
        prop_assert_eq!(decode_ranking(&encode_ranking(&r)).unwrap(), r);
    }
}
