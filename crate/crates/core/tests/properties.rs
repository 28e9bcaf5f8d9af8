use btc_core::dicke::{spin_operator, CollectiveSpinBasis, Operator, SpinAxis};
use btc_core::scaling::{
    collapse_quality, fit_collapse, fit_power_law, scale_dataset, unscale, CollapseBounds, CollapseParams,
    ObservableKind, PowerLawModel, ScalingDataset, ScalingRecord,
};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZES: [usize; 8] = [6, 10, 20, 40, 80, 120, 160, 200];

fn ops(n: usize) -> (Operator, Operator, Operator) {
    let b = CollectiveSpinBasis::new(n).unwrap();
    (
        spin_operator(b, SpinAxis::X),
        spin_operator(b, SpinAxis::Y),
        spin_operator(b, SpinAxis::Z),
    )
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Magnetization-type data obeying `y·N^{β/ν−1} = F(N^{1/ν}(x − ω_c))`
/// exactly, then perturbed by Gaussian noise of relative size `noise`.
fn synthetic(truth: CollapseParams, noise: f64, seed: u64) -> ScalingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaling_fn = |u: f64| 0.3 + 1.0 / (1.0 + (-0.8 * u).exp());
    let mut pts = Vec::new();
    for &n in &[20usize, 40, 80, 120, 160, 200] {
        let nf = n as f64;
        for k in 0..41 {
            let x = 0.6 + 0.8 * k as f64 / 40.0;
            let u = nf.powf(1.0 / truth.nu) * (x - truth.omega_c);
            let y = scaling_fn(u) * nf.powf(1.0 - truth.shape_exponent / truth.nu);
            pts.push((n, x, y * (1.0 + noise * gaussian(&mut rng))));
        }
    }
    ScalingDataset::with_relative_error(pts, noise.max(1e-3), ObservableKind::Magnetization).unwrap()
}

const TRUTH: CollapseParams = CollapseParams {
    omega_c: 1.0,
    nu: 1.5,
    shape_exponent: 0.5,
};

fn bounds() -> CollapseBounds {
    CollapseBounds {
        lower: CollapseParams {
            omega_c: 0.8,
            nu: 0.3,
            shape_exponent: 0.0,
        },
        upper: CollapseParams {
            omega_c: 1.2,
            nu: 4.0,
            shape_exponent: 1.5,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spin_algebra_holds(n in 1usize..=50) {
        let (x, y, z) = ops(n);
        let i = C64::new(0.0, 1.0);
        let s = n as f64 / 2.0;
        let scale = s * s + 1.0;
        prop_assert!(x.commutator(&y).sub(&z.scale(i)).frobenius_norm() <= 1e-10 * scale);
        prop_assert!(y.commutator(&z).sub(&x.scale(i)).frobenius_norm() <= 1e-10 * scale);
        prop_assert!(z.commutator(&x).sub(&y.scale(i)).frobenius_norm() <= 1e-10 * scale);
        let casimir = x.compose(&x).add(&y.compose(&y)).add(&z.compose(&z));
        let expected = Operator::identity(x.basis()).scale(C64::new(s * (s + 1.0), 0.0));
        prop_assert!(casimir.sub(&expected).frobenius_norm() <= 1e-10 * scale);
    }

    #[test]
    fn unscale_inverts_scale(
        omega_c in 0.8f64..1.2,
        nu in 0.5f64..3.0,
        shape in 0.0f64..2.0,
        qfi in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let kind = if qfi { ObservableKind::Qfi } else { ObservableKind::Magnetization };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = SIZES
            .iter()
            .flat_map(|&n| (0..5).map(move |k| (n, 0.5 + 0.2 * k as f64)))
            .map(|(n, x)| (n, x, rng.random_range(0.1..10.0)))
            .collect();
        let ds = ScalingDataset::with_relative_error(pts, 0.01, kind).unwrap();
        let scaled = scale_dataset(&ds, omega_c, nu, shape).unwrap();
        let back = unscale(&scaled, kind, omega_c, nu, shape).unwrap();
        for (a, b) in ds.records().iter().zip(&back) {
            prop_assert_eq!(a.n_spins, b.n_spins);
            prop_assert!((a.x - b.x).abs() <= 1e-12 * a.x.abs().max(1.0));
            prop_assert!((a.y - b.y).abs() <= 1e-12 * a.y.abs());
            prop_assert!((a.dy - b.dy).abs() <= 1e-12 * a.dy.abs());
        }
    }

    #[test]
    fn quality_ignores_record_order(seed in any::<u64>()) {
        let ds = synthetic(TRUTH, 0.02, seed);
        let mut shuffled: Vec<ScalingRecord> = ds.records().to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let ds2 = ScalingDataset::new(shuffled, ds.kind()).unwrap();
        let q1 = collapse_quality(&scale_dataset(&ds, 1.0, 1.5, 0.5).unwrap()).unwrap();
        let q2 = collapse_quality(&scale_dataset(&ds2, 1.0, 1.5, 0.5).unwrap()).unwrap();
        prop_assert_eq!(q1, q2);
    }

    #[test]
    fn power_law_models_recover_exact_parameters(
        a in 0.1f64..5.0,
        b in 0.2f64..2.0,
        c in 0.2f64..1.5,
        offset in 0.01f64..1.0,
    ) {
        let ns: Vec<usize> = SIZES.to_vec();
        let close = |got: f64, want: f64| (got - want).abs() <= 1e-8 * want.abs().max(1.0);

        let ys: Vec<f64> = ns.iter().map(|&n| a * (n as f64).powf(b)).collect();
        let fit = fit_power_law(&ns, &ys, PowerLawModel::Power).unwrap();
        prop_assert!(close(fit.parameter("a").unwrap().value, a));
        prop_assert!(close(fit.parameter("b").unwrap().value, b));

        let model = PowerLawModel::Saturating { kappa: 1.0 };
        let ys: Vec<f64> = ns.iter().map(|&n| model.eval(&[c], n as f64)).collect();
        let fit = fit_power_law(&ns, &ys, model).unwrap();
        prop_assert!(close(fit.parameter("c").unwrap().value, c));

        let ys: Vec<f64> = ns.iter().map(|&n| PowerLawModel::OffsetPower.eval(&[a, c, offset], n as f64)).collect();
        let fit = fit_power_law(&ns, &ys, PowerLawModel::OffsetPower).unwrap();
        prop_assert!(close(fit.parameter("a").unwrap().value, a));
        prop_assert!(close(fit.parameter("b").unwrap().value, c));
        prop_assert!(close(fit.parameter("c").unwrap().value, offset));
    }
}

#[test]
fn quality_is_near_one_for_a_true_collapse_and_large_otherwise() {
    let ds = synthetic(TRUTH, 0.02, 7);
    let good = collapse_quality(&scale_dataset(&ds, 1.0, 1.5, 0.5).unwrap()).unwrap();
    assert!((0.5..2.0).contains(&good), "quality at the true exponents: {good}");
    let bad = collapse_quality(&scale_dataset(&ds, 1.0, 3.0, 0.5).unwrap()).unwrap();
    assert!(bad > 20.0 * good, "quality with ν doubled: {bad}");
}

#[test]
fn collapse_recovers_synthetic_exponents() {
    let guess = CollapseParams {
        omega_c: 0.95,
        nu: 1.2,
        shape_exponent: 0.7,
    };
    for (noise, seed) in [(0.0, 1), (0.01, 2), (0.05, 3)] {
        let ds = synthetic(TRUTH, noise, seed);
        let fit = fit_collapse(&ds, guess, bounds()).unwrap();
        let checks = [
            ("ω_c", fit.omega_c, fit.uncertainties.omega_c, TRUTH.omega_c),
            ("ν", fit.nu, fit.uncertainties.nu, TRUTH.nu),
            ("β", fit.shape_exponent, fit.uncertainties.shape_exponent, TRUTH.shape_exponent),
        ];
        for (name, got, sigma, want) in checks {
            // noiseless data has vanishing σ; allow the optimizer tolerance
            let allowed = (2.0 * sigma).max(1e-3);
            assert!(
                (got - want).abs() <= allowed,
                "noise {noise}: {name} = {got} ± {sigma}, expected {want}"
            );
        }
    }
}
