use pspo_core::gradient::{rounds_for_tolerance, ToleranceSpec};
use pspo_core::{
    curvature_along, estimate_noise_variance, psp_gradient, reduced_hessian, seed, Evaluator,
    NoisyQuadratic, ParamVector,
};

#[test]
fn noise_variance_estimate_concentrates_near_truth() {
    let q = NoisyQuadratic::new(5, 3.0);
    for s in 0..10 {
        let point = ParamVector::from_element(5, s as f64 * 0.3 - 1.0);
        let v = estimate_noise_variance(&q, &point, 10_000, seed::derive(8, 0, s)).unwrap();
        assert!((8.0..=10.0).contains(&v), "seed {s}: {v}");
    }
}

#[test]
fn estimated_variance_yields_expected_round_count() {
    let q = NoisyQuadratic::new(5, 3.0);
    let v = estimate_noise_variance(&q, &ParamVector::zeros(5), 100_000, 21).unwrap();
    let m = rounds_for_tolerance(
        &ToleranceSpec {
            epsilon: 1.0,
            sigma2: v,
            c: 0.1,
            m_max: 1_000_000,
        },
        5,
    )
    .unwrap();
    assert!(
        (m.rounds as f64 - 4500.0).abs() <= 0.03 * 4500.0,
        "{}",
        m.rounds
    );
    assert!(!m.capped);
}

#[test]
fn noisy_reduced_hessian_curvature_is_consistent() {
    // ‖x − 1‖² has curvature 2‖d̃‖² along any d̃. The probes share a
    // perturbation matrix, so the finite-difference bias cancels and only
    // noise remains.
    let q = NoisyQuadratic::new(5, 3.0);
    let ev = Evaluator::new(&q);
    let theta = ParamVector::zeros(5);
    let d = nalgebra::DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3, -0.4]);
    let dt = ParamVector::from_dvector(d.clone()).unwrap();
    let plus = ParamVector::from_dvector(&d * 1.0).unwrap();
    let minus = ParamVector::from_dvector(-&d).unwrap();
    let exact = 2.0 * d.norm_squared();
    let runs = 1000u64;
    let vals: Vec<f64> = (0..runs)
        .map(|r| {
            let ds = seed::derive(9, 0, r);
            let gp = pspo_core::gradient::psp_gradient_seeded(
                &ev,
                &plus,
                1.0,
                45,
                ds,
                seed::derive(9, 1, r),
            )
            .unwrap();
            let gm = pspo_core::gradient::psp_gradient_seeded(
                &ev,
                &minus,
                1.0,
                45,
                ds,
                seed::derive(9, 2, r),
            )
            .unwrap();
            let h = reduced_hessian(&gp.g_hat, &gm.g_hat, &dt).unwrap();
            curvature_along(&h, &dt).unwrap()
        })
        .collect();
    let n = runs as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} ± {se} vs {exact}");
    // Unshared perturbations must still give a finite estimate.
    let g = psp_gradient(&ev, &theta, 1.0, 45, 1).unwrap();
    assert!(g.g_hat.norm().is_finite());
}
