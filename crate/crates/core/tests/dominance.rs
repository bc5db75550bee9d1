mod common;

use esbilr::instance::Node;
use esbilr::pricing::labeling::{label_segment, LabelingOptions, SegmentQuery};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn pruning_keeps_the_best_segment(
        shelters in 1usize..=3,
        slots in 8usize..=12,
        seed in 0u64..1000,
        k in 0usize..3,
        from_station in any::<bool>(),
        to_depot in any::<bool>(),
        depart in 0usize..4,
        len in 2usize..12,
        shift in any::<bool>(),
    ) {
        let inst = common::desk(shelters, slots, [1, 1, 1], seed, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let duals = common::random_duals(&inst, &mut rng, shift);
        let q = SegmentQuery {
            k,
            from: if from_station { Node::Station(0) } else { Node::Depot },
            depart,
            to: if to_depot { Node::Depot } else { Node::Station(0) },
            arrive: (depart + len).min(inst.t_last()),
        };
        let pruned = label_segment(&inst, &duals, &q, &LabelingOptions { prune: true, max_shelters: 4 });
        let full = label_segment(&inst, &duals, &q, &LabelingOptions { prune: false, max_shelters: 4 });
        prop_assert_eq!(pruned.as_ref().map(|p| p.rc), full.as_ref().map(|p| p.rc));
    }
}
