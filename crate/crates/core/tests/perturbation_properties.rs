use nalgebra::DVector;
use pspo_core::perturbation::{
    build_from_delta0, build_perturbations, flip_column, sample_delta0, PerturbationMatrix,
};
use pspo_core::seed;

fn rank(m: &PerturbationMatrix) -> usize {
    m.rank()
}

#[test]
fn sign_flip_blocks_are_full_rank_except_dimension_two() {
    for p in (1..=25usize).filter(|&p| p != 2) {
        for s in 0..100u64 {
            let d0 = sample_delta0(p, seed::derive(77, p as u64, s)).unwrap();
            let block = build_from_delta0(&d0, p).unwrap();
            assert_eq!(rank(&block), p, "p={p} seed={s}");
        }
    }
    // For p = 2 the literal construction yields two parallel columns.
    for d0 in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
        let block = build_from_delta0(&DVector::from_row_slice(&d0), 2).unwrap();
        assert_eq!(rank(&block), 1, "{d0:?}");
    }
}

#[test]
fn enumerated_sign_vectors_give_full_rank_blocks() {
    // Exhaustive over all Δ₀ for small p.
    for p in [1usize, 3, 4, 5, 6, 7, 8] {
        for bits in 0..(1u32 << p) {
            let d0 = DVector::from_fn(p, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 });
            let block = build_from_delta0(&d0, p).unwrap();
            assert_eq!(rank(&block), p, "p={p} bits={bits:b}");
        }
    }
}

#[test]
fn flipped_columns_differ_from_base_in_one_entry() {
    let d0 = sample_delta0(9, 3).unwrap();
    for j in 1..=9 {
        let col = flip_column(&d0, j).unwrap();
        let diffs: Vec<usize> = (0..9).filter(|&i| col[i] != d0[i]).collect();
        assert_eq!(diffs, vec![j - 1]);
    }
}

fn max_trace(p: usize, m: usize, draws: u64) -> f64 {
    (0..draws)
        .map(|s| {
            let delta =
                build_perturbations(p, m, seed::derive(1234, (p * 100 + m) as u64, s)).unwrap();
            delta.trace_inv_outer().expect("full rank")
        })
        .fold(0.0, f64::max)
}

#[test]
fn inverse_outer_trace_is_bounded_by_quarter_dimension() {
    for p in 4..=25usize {
        for m in p..=3 * p {
            let tr = max_trace(p, m, 50);
            assert!(tr <= p as f64 / 4.0 + 1e-9, "p={p} M={m}: {tr}");
        }
    }
    for m in [6usize, 7, 8, 9] {
        let tr = max_trace(3, m, 50);
        assert!(tr <= 0.75 + 1e-9, "p=3 M={m}: {tr}");
    }
}

#[test]
fn quarter_dimension_bound_fails_for_partial_second_block_in_three_dimensions() {
    // Columns 1−2e₁, 1−2e₂, 1−2e₃, 1−2e₁ give ΔΔᵀ = [[4,−2,−2],[−2,4,0],[−2,0,4]],
    // det 32, inverse diagonal (16, 12, 12)/32: trace 5/4 > 3/4.
    let ones = DVector::from_element(3, 1.0);
    let block = build_from_delta0(&ones, 3).unwrap();
    let mut cols: Vec<Vec<f64>> = (0..3)
        .map(|i| block.column(i).iter().copied().collect())
        .collect();
    cols.push(cols[0].clone());
    let four = PerturbationMatrix::from_columns(&cols).unwrap();
    assert!((four.trace_inv_outer().unwrap() - 1.25).abs() < 1e-12);
    assert_eq!(build_from_delta0(&ones, 4).unwrap().matrix(), four.matrix());
}

#[test]
fn multi_block_matrices_span_the_space() {
    for p in [3usize, 5, 11] {
        for m in [p, p + 1, 2 * p + 3] {
            let delta = build_perturbations(p, m, 9).unwrap();
            assert_eq!(delta.rounds(), m);
            assert_eq!(rank(&delta), p);
            assert!(delta.matrix().iter().all(|&v| v == 1.0 || v == -1.0));
        }
    }
}
