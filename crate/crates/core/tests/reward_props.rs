use proptest::prelude::*;
use segpref_core::longcot::Segment;
use segpref_core::rewards::{
    aggregate_lc, aggregate_spatial, aggregate_vc, LcSubscores, SpatialClaim, VcSubscores, CONTEXT_WEIGHT_ASKED,
    CONTEXT_WEIGHT_AUXILIARY,
};
use segpref_core::SegmentScores;

fn claim(r: f64, wu: f64, wc: f64) -> SpatialClaim {
    SpatialClaim {
        text: String::new(),
        correctness: r,
        uncertainty_weight: wu,
        context_weight: wc,
        segment: Segment::Desc,
    }
}

fn claim_strategy() -> impl Strategy<Value = SpatialClaim> {
    (0.0f64..=1.0, 0.8f64..=1.0, any::<bool>()).prop_map(|(r, wu, asked)| {
        claim(
            r,
            wu,
            if asked {
                CONTEXT_WEIGHT_ASKED
            } else {
                CONTEXT_WEIGHT_AUXILIARY
            },
        )
    })
}

#[test]
fn two_claim_fixture() {
    let claims = [claim(1.0, 1.0, 1.0), claim(1.0, 0.8, 0.8)];
    let s = aggregate_spatial(&claims, Segment::Desc).unwrap();
    assert!((s.value - 3.28).abs() <= 1e-12);
    assert!(!s.empty);
    let empty = aggregate_spatial(&claims, Segment::Reason).unwrap();
    assert!(empty.empty && empty.value == 0.0);
}

#[test]
fn perfect_inputs_hit_the_maxima() {
    assert_eq!(aggregate_vc(&VcSubscores::new(1.0, 1.0, 1.0, 1.0)).unwrap(), 4.0);
    assert_eq!(aggregate_lc(&LcSubscores::new(1.0, 1.0, 1.0, 1.0)).unwrap(), 4.0);
    let perfect = vec![claim(1.0, 1.0, 1.0); 7];
    assert_eq!(aggregate_spatial(&perfect, Segment::Desc).unwrap().value, 4.0);
    let s = SegmentScores::from_rewards(4.0, 4.0, 4.0, 4.0).unwrap();
    assert_eq!((s.score_desc, s.score_reason), (8.0, 8.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn spatial_is_monotone_in_every_input(
        claims in proptest::collection::vec(claim_strategy(), 1..8),
        pick in any::<prop::sample::Index>(),
        field in 0usize..3,
        bump in 0.0f64..=1.0,
    ) {
        let before = aggregate_spatial(&claims, Segment::Desc).unwrap().value;
        let mut raised = claims.clone();
        let c = &mut raised[pick.index(claims.len())];
        match field {
            0 => c.correctness = c.correctness + bump * (1.0 - c.correctness),
            1 => c.uncertainty_weight = c.uncertainty_weight + bump * (1.0 - c.uncertainty_weight),
            _ => c.context_weight = CONTEXT_WEIGHT_ASKED,
        }
        let after = aggregate_spatial(&raised, Segment::Desc).unwrap().value;
        prop_assert!(after >= before, "{} < {}", after, before);
        prop_assert!((0.0..=4.0).contains(&after));
    }

    #[test]
    fn spatial_ignores_claim_order(
        claims in proptest::collection::vec(claim_strategy(), 0..10),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = claims.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            aggregate_spatial(&claims, Segment::Desc).unwrap(),
            aggregate_spatial(&shuffled, Segment::Desc).unwrap()
        );
    }

    #[test]
    fn composites_stay_in_bounds(a in 0.0f64..=4.0, b in 0.0f64..=4.0, c in 0.0f64..=4.0, d in 0.0f64..=4.0) {
        let s = SegmentScores::from_rewards(a, b, c, d).unwrap();
        prop_assert!((0.0..=8.0).contains(&s.score_desc) && (0.0..=8.0).contains(&s.score_reason));
        prop_assert!(s.validate().is_ok());
    }
}
