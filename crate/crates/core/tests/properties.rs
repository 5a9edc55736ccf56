use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cardan::codec::{SecretMessage, StabilityIndex};
use cardan::dataset::synthesize;
use cardan::grille::{GrilleFile, Placement};
use cardan::image::{ImageShape, Rect};
use cardan::inpainting::Mode;
use cardan::models::make_oracle;
use cardan::pipeline::{extract, hide, HideConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hard_mode_always_recovers(
        key in proptest::collection::vec(any::<u8>(), 1..16),
        rows in 1usize..=16,
        cols in 1usize..=16,
        density in 0.05f64..=1.0,
        si in 0u8..=7,
        gray in any::<bool>(),
        fill in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let shape = ImageShape::new(16, 16, if gray { 1 } else { 3 });
        let si = StabilityIndex::new(si).unwrap();
        let mut grille = GrilleFile::keyed(&key, (rows, cols), density, si);
        grille.placement = Placement::At(16 - rows, 0);
        let cap = grille.padded((16, 16)).unwrap().capacity(shape.channels, si);
        let message = SecretMessage::random(&mut ChaCha8Rng::seed_from_u64(seed), (cap as f64 * fill) as usize);
        let mut config = HideConfig::new(grille.clone(), Mode::Hard);
        config.optimize.budget = 2;
        config.optimize.seed = seed;
        config.region = Some(Rect::new(2, 3, 9, 10));
        let cover = synthesize(1, shape, seed).unwrap().image(0).clone();
        let models = make_oracle(3, shape, seed).unwrap();
        let out = hide(&cover, &message, &config, &models).unwrap();
        prop_assert!(out.trace.best_is_monotone());
        prop_assert_eq!(extract(&out.stego.image, &grille, Some(message.len())).unwrap(), message);
    }

    #[test]
    fn grille_text_roundtrip(
        key in proptest::collection::vec(any::<u8>(), 1..32),
        rows in 1usize..=20,
        cols in 1usize..=20,
        density in 0.01f64..=1.0,
        si in 0u8..=7,
        length in proptest::option::of(0usize..10_000),
    ) {
        let mut grille = GrilleFile::keyed(&key, (rows, cols), density, StabilityIndex::new(si).unwrap());
        grille.length = length;
        let text = grille.to_text();
        let back = GrilleFile::parse(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back, grille);
    }
}
