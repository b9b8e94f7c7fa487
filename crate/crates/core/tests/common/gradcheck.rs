use lens_core::anomaly::{activate_output, combined_recon_loss, decoder_batch_gradient, init_decoder};
use lens_core::augment::{AugmentationConfig, AugmentedQuery};
use lens_core::contrastive::{contrastive_gradient, contrastive_loss, init_networks, PretrainConfig};
use lens_core::nn::{mlp_specs, DenseNetwork};
use lens_core::rng::rng_from_seed;
use lens_core::sampling::{nearest_code, vqvae_batch_gradient, vqvae_terms, Codebook, VqCoefficients};
use lens_core::schema::BlockLayout;
use rand::Rng;

use super::{entry, layout, max_param_error, relative_error};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn toy_layout() -> BlockLayout {
    layout(&[3, 2], 1)
}

pub fn toy_queries(lay: &BlockLayout, n: usize, seed: u64) -> Vec<AugmentedQuery> {
    let cfg = AugmentationConfig {
        negatives: 3,
        ..AugmentationConfig::default()
    };
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let x = entry(lay, &[i % 3, (i + 1) % 2], &[0.1 * i as f64]);
            AugmentedQuery::build(&x, lay, &cfg, &mut rng).unwrap()
        })
        .collect()
}

/// Glorot layers start with zero biases, which can park embeddings near the
/// origin where the cosine similarity is sharply curved.
pub fn randomize_biases(net: &mut DenseNetwork, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for (i, s) in net.parameter_slices_mut().enumerate() {
        if i % 2 == 1 {
            s.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        }
    }
}

/// Worst relative error of the PairNCE gradient over encoder and head.
pub fn pair_nce_error(batch_negatives: bool) -> f64 {
    let lay = toy_layout();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let cfg = PretrainConfig {
            encoder_widths: vec![5, 3],
            head_widths: vec![3, 3],
            seed,
            ..PretrainConfig::default()
        };
        let (mut enc, mut head) = init_networks(lay.dimension(), &cfg).unwrap();
        randomize_biases(&mut enc, seed);
        randomize_biases(&mut head, seed + 100);
        let queries = toy_queries(&lay, 3, seed);
        let g = contrastive_gradient(&enc, &head, &queries, 0.5, batch_negatives).unwrap();
        let loss = |e: &DenseNetwork, h: &DenseNetwork| contrastive_loss(e, h, &queries, 0.5, batch_negatives).unwrap();
        assert!((g.loss - loss(&enc, &head)).abs() < 1e-12);
        worst = worst
            .max(max_param_error(&enc, &g.encoder, H, |e| loss(e, &head)))
            .max(max_param_error(&head, &g.head, H, |h| loss(&enc, h)));
    }
    worst
}

pub fn toy_decoder(lay: &BlockLayout, seed: u64) -> DenseNetwork {
    let enc = DenseNetwork::glorot(&mlp_specs(lay.dimension(), &[4, 2], 0.4), &mut rng_from_seed(seed)).unwrap();
    init_decoder(&enc, 0.4, seed).unwrap()
}

pub fn toy_batch(lay: &BlockLayout) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let zs = vec![vec![0.3, -0.8], vec![-1.1, 0.4], vec![0.05, 0.9], vec![0.6, 0.6]];
    let xs = vec![
        entry(lay, &[0, 1], &[0.2]),
        entry(lay, &[2, 0], &[0.9]),
        entry(lay, &[1, 1], &[0.0]),
        entry(lay, &[0, 0], &[0.5]),
    ];
    (zs, xs)
}

pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

/// Worst relative error of the combined reconstruction gradient over several `nu`.
pub fn aen_error() -> f64 {
    let lay = toy_layout();
    let (zs, xs) = toy_batch(&lay);
    let mut worst = 0.0f64;
    for (seed, nu) in [(0, 2.0 / 3.0), (1, 0.0), (2, 1.0), (3, 0.3)] {
        let dec = toy_decoder(&lay, seed);
        let (loss, g) = decoder_batch_gradient(&dec, &refs(&zs), &refs(&xs), &lay, nu).unwrap();
        let objective = |d: &DenseNetwork| -> f64 {
            zs.iter()
                .zip(&xs)
                .map(|(z, x)| combined_recon_loss(&activate_output(&d.predict(z).unwrap(), &lay), x, &lay, nu).unwrap())
                .sum::<f64>()
                / zs.len() as f64
        };
        assert!((loss - objective(&dec)).abs() < 1e-12);
        worst = worst.max(max_param_error(&dec, &g, H, objective));
    }
    worst
}

pub fn toy_codebook() -> Codebook {
    Codebook::new(vec![vec![0.1, 0.2], vec![1.0, -1.0], vec![-0.5, 1.0]]).unwrap()
}

/// Worst relative error of the VQ-VAE decoder gradient, code assignments held fixed.
pub fn vqvae_decoder_error() -> f64 {
    let lay = toy_layout();
    let (zs, xs) = toy_batch(&lay);
    let book = toy_codebook();
    let coeffs = VqCoefficients::default();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let dec = toy_decoder(&lay, seed);
        let g = vqvae_batch_gradient(&dec, &book, &refs(&zs), &refs(&xs), &lay, 2.0 / 3.0, coeffs).unwrap();
        let objective = |d: &DenseNetwork| -> f64 {
            zs.iter()
                .zip(&xs)
                .map(|(z, x)| {
                    let k = nearest_code(z, &book).unwrap();
                    vqvae_terms(x, z, &book.vectors[k], d, &lay, 2.0 / 3.0, coeffs).unwrap().total()
                })
                .sum::<f64>()
                / zs.len() as f64
        };
        assert!((g.loss - objective(&dec)).abs() < 1e-12);
        worst = worst.max(max_param_error(&dec, &g.decoder, H, objective));
    }
    worst
}

/// Worst relative error of the codebook gradient against `alpha * ||sg[z] - c||^2`.
pub fn codebook_error(dec: &DenseNetwork, coeffs: VqCoefficients) -> f64 {
    let lay = toy_layout();
    let (zs, xs) = toy_batch(&lay);
    let book = toy_codebook();
    let g = vqvae_batch_gradient(dec, &book, &refs(&zs), &refs(&xs), &lay, 2.0 / 3.0, coeffs).unwrap();
    let codes: Vec<usize> = zs.iter().map(|z| nearest_code(z, &book).unwrap()).collect();
    let term = |b: &Codebook| -> f64 {
        zs.iter()
            .zip(&codes)
            .map(|(z, &k)| coeffs.alpha * z.iter().zip(&b.vectors[k]).map(|(a, c)| (a - c).powi(2)).sum::<f64>())
            .sum::<f64>()
            / zs.len() as f64
    };
    let mut worst = 0.0f64;
    for k in 0..book.len() {
        for d in 0..book.dim() {
            let mut plus = book.clone();
            let mut minus = book.clone();
            plus.vectors[k][d] += H;
            minus.vectors[k][d] -= H;
            let fd = (term(&plus) - term(&minus)) / (2.0 * H);
            worst = worst.max(relative_error(g.codebook[k][d], fd));
        }
    }
    worst
}
