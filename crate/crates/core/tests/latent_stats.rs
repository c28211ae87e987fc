use dgp_core::chi2::{chi_square_tail, psi_for_tail};
use dgp_core::latent::{
    fit_pca, in_ellipse, project_code, truncate, LatentCode, PcaBasis, StrengthCode, TruncationConfig,
};
use dgp_core::par::stream_rng;
use dgp_core::synth::{sample_style, SynthParams, SynthShape};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_samples(count: usize, sd: &[f64], seed: u64) -> Vec<LatentCode> {
    let mut rng = stream_rng(seed, 0);
    (0..count)
        .map(|_| {
            LatentCode(DVector::from_iterator(
                sd.len(),
                sd.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)),
            ))
        })
        .collect()
}

#[test]
fn recovers_axis_aligned_covariance() {
    let basis = fit_pca(&gaussian_samples(100_000, &[2.0, 1.0], 3)).unwrap();
    let s = basis.strengths();
    assert!((s[0] - 4.0).abs() < 0.1 && (s[1] - 1.0).abs() < 0.1, "{s}");
    let q0 = basis.components().column(0);
    let angle = q0[1].abs().atan2(q0[0].abs());
    assert!(angle < 0.05, "angle {angle}");
}

#[test]
fn recovers_mapping_covariance() {
    let gen = SynthParams::random(SynthShape::default(), 21).unwrap();
    let basis = fit_pca(&sample_style(&gen, 100_000, 5)).unwrap();
    let want = &gen.mapping * gen.mapping.transpose();
    let err = (basis.covariance() - &want).abs().max();
    assert!(err < 0.05 * want.abs().max(), "covariance error {err}");
    assert!(basis.orthonormality_error() < 1e-8);
    let mean_err = (basis.mean() - &gen.mapping_offset).abs().max();
    assert!(mean_err < 0.05);
}

#[test]
fn sample_mean_obeys_clt_bound() {
    let mut gen = SynthParams::random(
        SynthShape {
            latent_dim: 6,
            ..SynthShape::default()
        },
        2,
    )
    .unwrap();
    gen.mapping = DMatrix::identity(6, 6);
    gen.mapping_offset = DVector::zeros(6);
    let count = 100_000;
    let samples = sample_style(&gen, count, 17);
    let mut mean = DVector::<f64>::zeros(6);
    for s in &samples {
        mean += &s.0;
    }
    mean /= count as f64;
    assert!(mean.amax() < 4.0 / (count as f64).sqrt(), "{mean}");
}

#[test]
fn zero_mapping_gives_constant_samples() {
    let mut gen = SynthParams::random(SynthShape::default(), 2).unwrap();
    gen.mapping = DMatrix::zeros(8, 8);
    for s in sample_style(&gen, 50, 1) {
        assert_eq!(s.0, gen.mapping_offset);
    }
}

#[test]
fn containment_for_large_codes() {
    let gen = SynthParams::random(SynthShape::default(), 4).unwrap();
    let basis = fit_pca(&sample_style(&gen, 20_000, 8)).unwrap();
    let cfg = TruncationConfig::default();
    let mut rng = stream_rng(12, 1);
    for _ in 0..10_000 {
        let dir = DVector::<f64>::from_fn(8, |_, _| rng.sample(StandardNormal)).normalize();
        let s = StrengthCode(dir * rng.random_range(0.0..10.0 * cfg.psi()));
        let w = project_code(&s, &basis, &cfg).unwrap();
        assert!(in_ellipse(&w, &basis, &cfg).unwrap());
    }
}

#[test]
fn empirical_tail_matches_chi_square() {
    let gen = SynthParams::random(SynthShape::default(), 9).unwrap();
    let count = 100_000;
    let samples = sample_style(&gen, count, 31);
    let basis = fit_pca(&samples).unwrap();
    let psi = psi_for_tail(8, 0.05);
    let cfg = TruncationConfig::new(psi).unwrap();
    let outside = samples.iter().filter(|w| !in_ellipse(w, &basis, &cfg).unwrap()).count();
    let frac = outside as f64 / count as f64;
    let p = chi_square_tail(8, psi);
    let se = (p * (1.0 - p) / count as f64).sqrt();
    assert!((frac - p).abs() < 3.0 * se, "empirical {frac} analytic {p} se {se}");
}

#[test]
fn basis_round_trip_keeps_orthonormality() {
    let basis = fit_pca(&gaussian_samples(2000, &[3.0, 2.0, 1.0, 0.5], 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.txt");
    basis.write(&path).unwrap();
    let back = PcaBasis::read(&path).unwrap();
    assert!(back.orthonormality_error() < 1e-8);
    assert!((back.strengths() - basis.strengths()).amax() < 1e-8 * basis.strengths().amax());
}

proptest! {
    #[test]
    fn truncation_is_idempotent_and_bounded(v in prop::collection::vec(-1e3f64..1e3, 1..10), psi in 0.01f64..20.0) {
        let cfg = TruncationConfig::new(psi).unwrap();
        let once = truncate(&StrengthCode::from_slice(&v), &cfg);
        prop_assert!(once.norm() <= psi);
        prop_assert_eq!(truncate(&once, &cfg), once);
    }
}
