mod common;

use common::{gradient_check, perturb, random_example, tiny_config};
use kat_core::fusion::{EncodedExample, KnowledgeTokens, ReasoningMode};
use kat_core::FusionModel64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn per_pair_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = FusionModel64::new(tiny_config(ReasoningMode::PerPair, 3)).unwrap();
    perturb(&mut model, 4, 0.2);
    let batch = vec![random_example(&mut rng, 16, 3, 2, 3), random_example(&mut rng, 16, 2, 1, 2)];
    let (worst, at) = gradient_check(&model, &batch, 1e-4, 1e-6);
    println!("max relative error {worst:e} at {at}");
    assert!(worst < 1e-4, "{worst:e} at {at}");
}

#[test]
fn concat_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut model = FusionModel64::new(tiny_config(ReasoningMode::Concat, 5)).unwrap();
    perturb(&mut model, 6, 0.2);
    let batch = vec![EncodedExample {
        knowledge: KnowledgeTokens::Concat(common::random_seq(&mut rng, 16, 9)),
        target: common::random_seq(&mut rng, 16, 3),
    }];
    let (worst, at) = gradient_check(&model, &batch, 1e-4, 1e-6);
    assert!(worst < 1e-4, "{worst:e} at {at}");
}
