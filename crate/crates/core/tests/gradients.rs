mod common;

use common::gradcheck::{
    aen_error, codebook_error, pair_nce_error, refs, toy_batch, toy_codebook, toy_decoder, toy_layout,
    vqvae_decoder_error, TOL,
};
use lens_core::sampling::{vqvae_batch_gradient, VqCoefficients};

#[test]
fn pair_nce_gradient_matches_finite_differences() {
    let err = pair_nce_error(false);
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn batch_pooled_gradient_matches_finite_differences() {
    let err = pair_nce_error(true);
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn aen_combined_loss_gradient_matches_finite_differences() {
    let err = aen_error();
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn vqvae_decoder_gradient_matches_finite_differences() {
    let err = vqvae_decoder_error();
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn codebook_gradient_is_the_codebook_term_only() {
    let lay = toy_layout();
    let coeffs = VqCoefficients {
        alpha: 1.3,
        beta: 0.25,
        gamma: 1.0,
    };
    let dec = toy_decoder(&lay, 5);
    let err = codebook_error(&dec, coeffs);
    assert!(err < TOL, "rel err {err}");

    // The decoder's weights do not leak into the code gradient.
    let (zs, xs) = toy_batch(&lay);
    let book = toy_codebook();
    let g = vqvae_batch_gradient(&dec, &book, &refs(&zs), &refs(&xs), &lay, 2.0 / 3.0, coeffs).unwrap();
    let other = toy_decoder(&lay, 6);
    let g2 = vqvae_batch_gradient(&other, &book, &refs(&zs), &refs(&xs), &lay, 2.0 / 3.0, coeffs).unwrap();
    assert_eq!(g.codebook, g2.codebook);
}

#[test]
fn decoder_gradient_ignores_quantization_coefficients() {
    let lay = toy_layout();
    let (zs, xs) = toy_batch(&lay);
    let book = toy_codebook();
    let dec = toy_decoder(&lay, 7);
    let run = |alpha, beta| {
        let c = VqCoefficients { alpha, beta, gamma: 1.0 };
        vqvae_batch_gradient(&dec, &book, &refs(&zs), &refs(&xs), &lay, 0.5, c).unwrap()
    };
    let a = run(1.0, 0.25);
    let b = run(0.0, 0.0);
    assert_eq!(a.decoder, b.decoder);
    assert!(b.codebook.iter().flatten().all(|v| *v == 0.0));
    assert!(a.codebook.iter().flatten().any(|v| *v != 0.0));
}
