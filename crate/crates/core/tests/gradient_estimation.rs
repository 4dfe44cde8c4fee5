use proptest::prelude::*;
use pspo_core::gradient::{least_squares_gradient, min_norm_gradient};
use pspo_core::problems::noisy_quadratic_eval;
use pspo_core::{
    build_perturbations, psp_gradient, seed, Evaluator, FnObjective, NoisyQuadratic, ParamVector,
};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn columns(p: usize, m: usize, s: u64) -> Vec<Vec<f64>> {
    let delta = build_perturbations(p, m, s).unwrap();
    (0..m)
        .map(|i| delta.column(i).iter().copied().collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normal equations `(ΔΔᵀ) g = Δ δf / c`.
fn ls_oracle(cols: &[Vec<f64>], df: &[f64], c: f64) -> Vec<f64> {
    let p = cols[0].len();
    let a: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| cols.iter().map(|d| d[i] * d[j]).sum())
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..p)
        .map(|i| cols.iter().zip(df).map(|(d, f)| d[i] * f / c).sum())
        .collect();
    solve(a, b)
}

/// Minimum-norm solution of `Δᵀ g = δf / c`: restrict `g` to the column
/// space via a Gram–Schmidt basis, then solve the square system.
fn min_norm_oracle(cols: &[Vec<f64>], df: &[f64], c: f64) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for d in cols {
        let mut v = d.clone();
        for q in &basis {
            let proj = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= proj * qi);
        }
        let n = dot(&v, &v).sqrt();
        basis.push(v.iter().map(|x| x / n).collect());
    }
    let a: Vec<Vec<f64>> = cols
        .iter()
        .map(|d| basis.iter().map(|q| dot(d, q)).collect())
        .collect();
    let y = solve(a, df.iter().map(|f| f / c).collect());
    let p = cols[0].len();
    (0..p)
        .map(|i| basis.iter().zip(&y).map(|(q, yk)| q[i] * yk).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn least_squares_matches_normal_equation_oracle(
        p in 1usize..9, extra in 0usize..12, s in any::<u64>(),
        df in prop::collection::vec(-5.0f64..5.0, 21), c in 0.01f64..2.0,
    ) {
        prop_assume!(p != 2);
        let m = p + extra;
        let delta = build_perturbations(p, m, s).unwrap();
        let g = least_squares_gradient(&delta, &df[..m], c).unwrap();
        let oracle = ls_oracle(&columns(p, m, s), &df[..m], c);
        for (a, b) in g.as_slice().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn min_norm_matches_column_space_oracle(
        p in 3usize..12, s in any::<u64>(),
        df in prop::collection::vec(-5.0f64..5.0, 11), c in 0.01f64..2.0, frac in 0.0f64..1.0,
    ) {
        let m = 1 + ((p - 1) as f64 * frac) as usize;
        prop_assume!(m < p);
        let delta = build_perturbations(p, m, s).unwrap();
        let g = min_norm_gradient(&delta, &df[..m], c).unwrap();
        let oracle = min_norm_oracle(&columns(p, m, s), &df[..m], c);
        for (a, b) in g.as_slice().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // Interpolates the differences exactly.
        for (i, col) in columns(p, m, s).iter().enumerate() {
            prop_assert!((c * dot(g.as_slice(), col) - df[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_the_objective_scales_the_estimate(p in 1usize..7, m in 1usize..14, s in any::<u64>(), k in 0.1f64..20.0) {
        let base = NoisyQuadratic::new(p, 1.0);
        let scaled = FnObjective::new(p, move |x: &[f64], seed| k * noisy_quadratic_eval(x, 1.0, seed));
        let theta = ParamVector::from_element(p, 0.3);
        let g1 = psp_gradient(&Evaluator::new(&base), &theta, 0.2, m, s);
        let g2 = psp_gradient(&Evaluator::new(&scaled), &theta, 0.2, m, s);
        match (g1, g2) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.g_hat.as_slice().iter().zip(b.g_hat.as_slice()) {
                    prop_assert!((k * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} / {b:?}"),
        }
    }
}

#[test]
fn unbiased_on_noisy_linear_objective() {
    let a = [1.0, -2.0, 0.5, 3.0, -0.25, 0.0];
    let f = FnObjective::new(6, move |x: &[f64], s| {
        dot(x, &a) + noisy_quadratic_eval(&[1.0], 1.0, s)
    });
    let ev = Evaluator::new(&f);
    let theta = ParamVector::new(vec![0.5, -1.0, 2.0, 0.0, 1.0, -0.3]).unwrap();
    let n = 10_000u64;
    let mut sum = [0.0; 6];
    let mut sq = [0.0; 6];
    for r in 0..n {
        let g = psp_gradient(&ev, &theta, 0.5, 6, seed::derive(42, 0, r)).unwrap();
        for i in 0..6 {
            sum[i] += g.g_hat[i];
            sq[i] += g.g_hat[i] * g.g_hat[i];
        }
    }
    let nf = n as f64;
    for i in 0..6 {
        let mean = sum[i] / nf;
        let var = (sq[i] - nf * mean * mean) / (nf - 1.0);
        let se = (var / nf).sqrt();
        assert!(
            (mean - a[i]).abs() <= 4.0 * se,
            "coordinate {i}: mean {mean}, se {se}"
        );
    }
}

#[test]
fn error_second_moment_matches_shared_base_covariance() {
    // For f = ‖x − 1‖² + σw: δfᵢ = c gᵀΔᵢ + c²p + σ(wᵢ − w₀), so with
    // A = ΔΔᵀ and u = A⁻¹Δ1: ĝ − g = (cp − σw₀/c) u + (σ/c) A⁻¹Δw and
    // E‖ĝ − g‖² = (c²p² + σ²/c²)‖u‖² + (σ²/c²) tr A⁻¹.
    let (p, m, c, sigma) = (5usize, 4500usize, 0.1, 3.0);
    let q = NoisyQuadratic::new(p, sigma);
    let ev = Evaluator::new(&q);
    let theta = ParamVector::zeros(p);
    let runs = 200u64;
    let mut observed = Vec::new();
    let mut predicted = 0.0;
    for r in 0..runs {
        let g = psp_gradient(&ev, &theta, c, m, seed::derive(7, 1, r)).unwrap();
        observed.push(
            g.g_hat
                .as_slice()
                .iter()
                .map(|v| (v + 2.0).powi(2))
                .sum::<f64>(),
        );
        let delta = build_perturbations(p, m, g.delta_seed).unwrap();
        let d = delta.matrix();
        let a_inv = (d * d.transpose()).try_inverse().unwrap();
        let u = &a_inv * d * nalgebra::DVector::from_element(m, 1.0);
        let s2c2 = sigma * sigma / (c * c);
        predicted += (c * c * (p * p) as f64 + s2c2) * u.norm_squared() + s2c2 * a_inv.trace();
    }
    let n = runs as f64;
    predicted /= n;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - predicted).abs() <= 4.0 * se,
        "observed {mean} ± {se}, predicted {predicted}"
    );
}
