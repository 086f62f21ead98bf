mod common;

use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::vq::Codebook;
use promptgen::{fit_codebook, Image, TokenGrid};
use proptest::prelude::*;

use common::{random_codebook, rng};

fn shapes(seed: u64) -> Vec<Image> {
    let spec = SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::source(3, seed)
    };
    synth_dataset(&spec).unwrap().images
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_inverts_decode(seed in any::<u64>(), h in 1usize..5, w in 1usize..5, k in 2usize..9) {
        let mut r = rng(seed);
        let book = random_codebook(k, &mut r);
        let tokens = common::random_tokens(h * w, k, &mut r);
        let grid = TokenGrid::new(h, w, tokens).unwrap();
        let image = book.decode(&grid).unwrap();
        prop_assert_eq!(book.encode(&image).unwrap(), grid);
        prop_assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn sse_never_increases_during_fit() {
    let book = fit_codebook(&shapes(0), 8, 4, 4, 12, 7).unwrap();
    let sse = book.sse_history();
    // the seeded assignment plus one entry per iteration
    assert_eq!(sse.len(), 13);
    for pair in sse.windows(2) {
        assert!(pair[1] <= pair[0], "SSE rose: {pair:?}");
    }
}

#[test]
fn fit_is_deterministic_given_seed() {
    let images = shapes(1);
    let a = fit_codebook(&images, 8, 4, 4, 6, 3).unwrap();
    let b = fit_codebook(&images, 8, 4, 4, 6, 3).unwrap();
    assert_eq!(a.codewords(), b.codewords());
}

#[test]
fn codewords_are_distinct_and_in_range() {
    let book = fit_codebook(&shapes(2), 16, 4, 4, 8, 0).unwrap();
    let words = book.codewords();
    for (i, a) in words.iter().enumerate() {
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(words[i + 1..].iter().all(|b| b != a));
    }
}

#[test]
fn reconstruction_error_bounded_by_fit_distance() {
    let images = shapes(3);
    let book = fit_codebook(&images, 8, 4, 4, 10, 1).unwrap();
    let bound = book.max_fit_distance();
    for image in &images {
        let rec = book.decode(&book.encode(image).unwrap()).unwrap();
        for y in (0..image.height()).step_by(4) {
            for x in (0..image.width()).step_by(4) {
                let err: f64 = image
                    .patch(x, y, 4, 4)
                    .iter()
                    .zip(rec.patch(x, y, 4, 4))
                    .map(|(&a, b)| (a as f64 - b as f64).powi(2))
                    .sum();
                assert!(err <= bound + 1e-9, "patch error {err} exceeds fit distance {bound}");
            }
        }
    }
}

#[test]
fn encoding_ignores_batch_order() {
    let images = shapes(4);
    let book = fit_codebook(&images, 8, 4, 4, 5, 2).unwrap();
    let forward: Vec<TokenGrid> = images.iter().map(|im| book.encode(im).unwrap()).collect();
    let mut backward: Vec<TokenGrid> = images.iter().rev().map(|im| book.encode(im).unwrap()).collect();
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn image_built_from_codewords_recovers_indices() {
    let book = Codebook::from_codewords(
        2,
        2,
        vec![vec![0.0; 12], vec![1.0; 12], vec![0.5; 12]],
    )
    .unwrap();
    let grid = TokenGrid::new(2, 3, vec![2, 0, 1, 1, 2, 0]).unwrap();
    let image = book.decode(&grid).unwrap();
    assert_eq!((image.width(), image.height()), (6, 4));
    assert_eq!(book.encode(&image).unwrap(), grid);
}

#[test]
fn thirty_two_pixel_image_gives_eight_by_eight_grid() {
    let spec = SyntheticDatasetSpec::source(1, 0);
    let images = synth_dataset(&spec).unwrap().images;
    let book = fit_codebook(&images, 4, 4, 4, 2, 0).unwrap();
    let grid = book.encode(&images[0]).unwrap();
    assert_eq!((grid.height(), grid.width()), (8, 8));
}
