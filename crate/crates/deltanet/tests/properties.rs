//! Randomized property tests over the core invariants.

use proptest::prelude::*;

use deltanet::chunkwise::{chunkwise_delta_forward, ChunkedSequence};
use deltanet::linalg::{
    read_matrix_csv, solve_unit_lower_triangular, write_matrix_csv, Matrix,
};
use deltanet::recurrent::{delta_recurrent_forward, HeadSequence, StateMatrix};

fn finite_mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1e3f64..1e3, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..8, 1usize..8, 1usize..8, 1usize..8).prop_flat_map(|(m, k, n, p)| {
            (finite_mat(m, k), finite_mat(k, n), finite_mat(n, p))
        })
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let denom = left.abs_max().max(1.0);
        prop_assert!(left.max_abs_diff(&right) / denom <= 1e-10);
    }

    #[test]
    fn unit_lower_solve_multiplies_back(
        (l, b) in (1usize..12, 1usize..6).prop_flat_map(|(n, m)| {
            (finite_mat(n, n), finite_mat(n, m))
        })
    ) {
        let l = l.scale(1e-3); // keep the system well-conditioned
        let x = solve_unit_lower_triangular(&l, &b).unwrap();
        let mut sys = l.tril(true).unwrap();
        for i in 0..sys.rows() {
            sys[(i, i)] += 1.0;
        }
        let back = sys.matmul(&x).unwrap();
        prop_assert!(back.max_abs_diff(&b) <= 1e-11 * b.abs_max().max(1.0));
    }

    #[test]
    fn matrix_csv_round_trips_bit_exactly(
        m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(
                prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
                r * c,
            )
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
        })
    ) {
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(m, back);
    }

    #[test]
    fn chunkwise_matches_recurrent_for_any_chunking(
        (seq_data, chunk) in (2usize..24, 1usize..6, 1usize..6).prop_flat_map(|(l, dk, dv)| {
            let entries = prop::collection::vec(-1f64..1.0, l * (2 * dk + dv));
            let betas = prop::collection::vec(0f64..=1.0, l);
            ((Just((l, dk, dv)), entries, betas), 1usize..28)
        })
    ) {
        let ((dims, entries, betas), chunk_size) = (seq_data, chunk);
        let (l, dk, dv) = dims;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = entries[at..at + n].to_vec();
            at += n;
            s
        };
        let seq = HeadSequence {
            q: Matrix::from_vec(l, dk, take(l * dk)).unwrap(),
            k: Matrix::from_vec(l, dk, take(l * dk)).unwrap().l2_normalize_rows(1e-6),
            v: Matrix::from_vec(l, dv, take(l * dv)).unwrap(),
            beta: betas,
        };
        let s0 = StateMatrix::zeros(dv, dk);
        let (o_ref, s_ref) = delta_recurrent_forward(&seq, &s0).unwrap();
        let chunked = ChunkedSequence::new(&seq, chunk_size).unwrap();
        let (o, sf) = chunkwise_delta_forward(&chunked, &s0).unwrap();
        prop_assert!(o.max_abs_diff(&o_ref) <= 1e-10);
        prop_assert!(sf.matrix().max_abs_diff(s_ref.matrix()) <= 1e-10);
    }
}
