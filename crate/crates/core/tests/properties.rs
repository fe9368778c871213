mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rnng::corpus::{generate_synthetic_corpus, parse_tree, serialize_tree, GeneratorConfig, LabelSchema};
use rnng::transition::{induce_rules, oracle_actions, replay, TransitionRuleSet};

fn rules() -> &'static TransitionRuleSet {
    static RULES: std::sync::OnceLock<TransitionRuleSet> = std::sync::OnceLock::new();
    RULES.get_or_init(|| {
        let gen = GeneratorConfig {
            train: 150,
            dev: 1,
            test: 1,
            ..GeneratorConfig::default()
        };
        induce_rules(&generate_synthetic_corpus(&gen, 3).unwrap().train)
    })
}

proptest! {
    #[test]
    fn serialization_and_oracle_round_trip(seed in any::<u64>(), max_len in 1usize..24) {
        let schema = LabelSchema::prescription();
        let tree = common::random_tree(&mut ChaCha8Rng::seed_from_u64(seed), &schema, max_len);
        prop_assert_eq!(&parse_tree(&serialize_tree(&tree), Some(&schema)).unwrap(), &tree);
        prop_assert_eq!(&replay(tree.tokens(), &oracle_actions(&tree)).unwrap(), &tree);
    }

    #[test]
    fn legal_rollouts_satisfy_rules(seed in any::<u64>(), n in 1usize..30) {
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let tree = common::random_rollout(&mut ChaCha8Rng::seed_from_u64(seed), rules(), &tokens);
        prop_assert_eq!(tree.tokens(), &tokens[..]);
        prop_assert!(tree.check_schema(&LabelSchema::prescription()).is_ok());
        prop_assert!(rules().check_tree(&tree).is_ok());
    }

    #[test]
    fn rollout_trees_replay_from_their_oracle(seed in any::<u64>(), n in 1usize..16) {
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let tree = common::random_rollout(&mut ChaCha8Rng::seed_from_u64(seed), rules(), &tokens);
        prop_assert_eq!(&replay(&tokens, &oracle_actions(&tree)).unwrap(), &tree);
    }
}
