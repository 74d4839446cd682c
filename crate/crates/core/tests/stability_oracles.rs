//! Independent checks of the deviation report against dense linear algebra.

use nalgebra::DMatrix;
use proptest::prelude::*;
use stabkit::{deviation_report, ParamVector};

fn models_from(n: usize, m: usize, values: &[f64]) -> Vec<ParamVector> {
    (0..n)
        .map(|i| ParamVector::new(0, m, values[i * m..(i + 1) * m].to_vec()).unwrap())
        .collect()
}

/// Centered rows as an `n x m` matrix, centered the textbook way.
fn centered(models: &[ParamVector]) -> DMatrix<f64> {
    let n = models.len();
    let m = models[0].len();
    let mut k = DMatrix::from_fn(n, m, |i, j| models[i].as_slice()[j]);
    for j in 0..m {
        let mean = k.column(j).sum() / n as f64;
        k.column_mut(j).add_scalar_mut(-mean);
    }
    k
}

fn random_orthogonal(m: usize, seed: u64) -> DMatrix<f64> {
    let g = ParamVector::gaussian(0, m * m, 1.0, seed).unwrap();
    DMatrix::from_row_slice(m, m, g.as_slice()).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sqrt_sum_is_the_nuclear_norm(
        n in 2usize..10,
        m in 1usize..40,
        values in prop::collection::vec(-5.0f64..5.0, 400),
    ) {
        let models = models_from(n, m, &values);
        let report = deviation_report(&models).unwrap();
        let k = centered(&models);
        let sv = k.clone().svd(false, false).singular_values;
        let nuclear: f64 = sv.iter().sum();
        let frob2 = k.norm_squared();
        let scale = nuclear.max(1.0);
        prop_assert!((report.spectrum.sqrt_sum - nuclear).abs() <= 1e-9 * scale);
        prop_assert!((report.spectrum.sqrt_of_sum - frob2.sqrt()).abs() <= 1e-9 * scale);

        let mut expected: Vec<f64> = sv.iter().map(|s| s * s).collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let lmax = expected[0].max(1.0);
        for (a, b) in report.spectrum.eigenvalues.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-9 * lmax);
        }

        let row_norms: f64 = k.row_iter().map(|r| r.norm()).sum::<f64>() / n as f64;
        prop_assert!((report.deviation_l2 - row_norms).abs() <= 1e-9 * row_norms.max(1.0));
    }

    #[test]
    fn invariant_under_rotation_of_parameter_space(
        n in 2usize..8,
        m in 2usize..20,
        values in prop::collection::vec(-3.0f64..3.0, 160),
        seed in any::<u64>(),
    ) {
        let models = models_from(n, m, &values);
        let q = random_orthogonal(m, seed);
        let rotated: Vec<ParamVector> = models
            .iter()
            .map(|p| {
                let v = &q * DMatrix::from_column_slice(m, 1, p.as_slice());
                ParamVector::new(0, m, v.as_slice().to_vec()).unwrap()
            })
            .collect();
        let a = deviation_report(&models).unwrap();
        let b = deviation_report(&rotated).unwrap();
        let tol = 1e-9 * a.spectrum.eigenvalues[0].max(1.0);
        prop_assert!((a.deviation_l2 - b.deviation_l2).abs() <= 1e-9 * a.deviation_l2.max(1.0));
        prop_assert!((a.mean_model_l2 - b.mean_model_l2).abs() <= 1e-9 * a.mean_model_l2.max(1.0));
        for (x, y) in a.spectrum.eigenvalues.iter().zip(&b.spectrum.eigenvalues) {
            prop_assert!((x - y).abs() <= tol);
        }
        // Retained directions rotate with the models.
        for (u, w) in a.spectrum.directions.iter().zip(&b.spectrum.directions) {
            let qu = &q * DMatrix::from_column_slice(m, 1, u);
            let dot: f64 = qu.iter().zip(w).map(|(x, y)| x * y).sum();
            let gap_ok = a.spectrum.eigenvalues.windows(2).all(|p| p[0] - p[1] > 1e-3);
            if gap_ok {
                prop_assert!((dot.abs() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn report_scales_linearly_with_the_models() {
    let models: Vec<ParamVector> = (0..5)
        .map(|s| ParamVector::gaussian(3, 4, 1.0, s).unwrap())
        .collect();
    let scaled: Vec<ParamVector> = models
        .iter()
        .map(|p| p.with_values(p.as_slice().iter().map(|v| v * 3.0).collect()).unwrap())
        .collect();
    let a = deviation_report(&models).unwrap();
    let b = deviation_report(&scaled).unwrap();
    assert!((b.deviation_l2 / a.deviation_l2 - 3.0).abs() < 1e-12);
    assert!((b.percent_deviation - a.percent_deviation).abs() < 1e-9);
    assert!((b.spectrum.sqrt_sum / a.spectrum.sqrt_sum - 3.0).abs() < 1e-9);
}
