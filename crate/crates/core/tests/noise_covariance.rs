use stabkit::noise::noise_vector;
use stabkit::{deviation_report, privatize, NoiseMode, NoiseSpec, ParamVector};

/// Three models in five dimensions whose centered Gram matrix has
/// eigenvalues {4, 1, 0}, with directions e1 and e2.
fn toy() -> Vec<ParamVector> {
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let v1 = [1.0 / s2, -1.0 / s2, 0.0];
    let v2 = [1.0 / s6, 1.0 / s6, -2.0 / s6];
    let offset = [0.5, -1.0, 2.0, 0.25, 3.0];
    (0..3)
        .map(|i| {
            let mut row = offset;
            row[0] += 2.0 * v1[i];
            row[1] += v2[i];
            ParamVector::new(0, 5, row.to_vec()).unwrap()
        })
        .collect()
}

#[test]
fn toy_spectrum_is_four_one_zero() {
    let report = deviation_report(&toy()).unwrap();
    let ev = &report.spectrum.eigenvalues;
    assert!((ev[0] - 4.0).abs() < 1e-12);
    assert!((ev[1] - 1.0).abs() < 1e-12);
    assert!(ev[2].abs() < 1e-12);
    assert_eq!(report.spectrum.retained(), 2);
}

#[test]
fn anisotropic_covariance_in_eigenbasis() {
    let models = toy();
    let report = deviation_report(&models).unwrap();
    let (u1, u2) = (&report.spectrum.directions[0], &report.spectrum.directions[1]);
    let scale = 0.7;
    let draws = 20_000;
    let (mut c11, mut c22, mut c12, mut leak, mut total) = (0.0, 0.0, 0.0, 0.0f64, 0.0f64);
    for seed in 0..draws {
        let spec = NoiseSpec { mode: NoiseMode::Anisotropic, scale, seed };
        let (z, warning) = noise_vector(5, &report, &spec).unwrap();
        assert!(warning.is_none());
        let a: f64 = z.iter().zip(u1).map(|(x, y)| x * y).sum();
        let b: f64 = z.iter().zip(u2).map(|(x, y)| x * y).sum();
        c11 += a * a;
        c22 += b * b;
        c12 += a * b;
        let resid: f64 = z
            .iter()
            .enumerate()
            .map(|(j, x)| (x - a * u1[j] - b * u2[j]).powi(2))
            .sum();
        leak = leak.max(resid.sqrt());
        total = total.max(z.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let n = draws as f64;
    let s2 = scale * scale;
    assert!((c11 / n / (4.0 * s2) - 1.0).abs() < 0.05, "var1 {}", c11 / n);
    assert!((c22 / n / s2 - 1.0).abs() < 0.05, "var2 {}", c22 / n);
    assert!((c12 / n).abs() < 0.05 * 2.0 * s2);
    assert!(leak <= 1e-8 * total);
}

#[test]
fn privatized_model_moves_only_inside_the_span() {
    let models = toy();
    let report = deviation_report(&models).unwrap();
    let spec = NoiseSpec { mode: NoiseMode::Anisotropic, scale: 2.0, seed: 11 };
    let out = privatize(&models[0], &report, &spec).unwrap();
    let delta: Vec<f64> = out
        .params
        .as_slice()
        .iter()
        .zip(models[0].as_slice())
        .map(|(a, b)| a - b)
        .collect();
    assert!(delta[0] != 0.0 && delta[1] != 0.0);
    assert!(delta[2..].iter().all(|d| d.abs() < 1e-12));
}
