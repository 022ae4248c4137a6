use nam_core::evaluator::{correct_at, tune_threshold};
use nam_core::kb::{Triple, Vocabulary};
use nam_core::math::Rng;
use nam_core::model::{ModelShape, NamParams, Variant};
use nam_core::winograd::{negatives_transmat, relation_index, CauseEffectPair, Pattern, PatternedPhrase};
use proptest::prelude::*;

fn model(variant: Variant, seed: u64) -> NamParams {
    let mut vocab = Vocabulary::new();
    for e in 0..4 {
        vocab.entities.intern(&format!("e{e}"));
    }
    for r in 0..2 {
        vocab.relations.intern(&format!("r{r}"));
    }
    let shape = ModelShape {
        variant,
        entity_dim: 3,
        relation_dim: 2,
        hidden: vec![4, 3],
    };
    NamParams::init(&shape, &vocab, None, &mut Rng::new(seed)).unwrap()
}

proptest! {
    #[test]
    fn scores_are_probabilities(seed in any::<u64>(), h in 0usize..4, r in 0usize..2, t in 0usize..4, rmnn in any::<bool>()) {
        let variant = if rmnn { Variant::Rmnn } else { Variant::Dnn };
        let s = model(variant, seed).score(Triple::new(h, r, t)).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn tuned_threshold_beats_every_data_threshold(
        mut scored in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40),
    ) {
        scored[0].1 = true;
        scored[1].1 = false;
        let tuned = tune_threshold(&scored).unwrap();
        prop_assert_eq!(correct_at(&scored, tuned.value), tuned.correct);
        for &(s, _) in &scored {
            prop_assert!(correct_at(&scored, s) <= tuned.correct);
        }
    }

    #[test]
    fn transmat_negative_keeps_tokens(seed in any::<u64>(), c in 0usize..4, e in 0usize..4) {
        let pair = CauseEffectPair {
            cause: PatternedPhrase::new("be hungry", Pattern::from_index(c)).unwrap(),
            effect: PatternedPhrase::new("eat", Pattern::from_index(e)).unwrap(),
            count: 2,
        };
        let neg = negatives_transmat(&pair, &mut Rng::new(seed));
        prop_assert_eq!(&neg.cause, &pair.cause);
        prop_assert_eq!(&neg.effect.tokens, &pair.effect.tokens);
        prop_assert_ne!(neg.effect.pattern, pair.effect.pattern);
        prop_assert!(relation_index(neg.cause.pattern, neg.effect.pattern) < 16);
    }
}
