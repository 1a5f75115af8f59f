//! Storage contract of the chunkwise backward: across the whole backward pass
//! it keeps ceil(L/C) chunk-boundary states plus a constant number of working
//! states, never one state per token.
//!
//! This file holds a single test on purpose: the state counters are process
//! wide, and any concurrently running test that touches a `StateMatrix` would
//! contaminate the measurement.

use deltanet::backward::chunkwise_delta_backward;
use deltanet::chunkwise::ChunkedSequence;
use deltanet::linalg::{Matrix, Rng};
use deltanet::recurrent::{state_count, HeadSequence, StateMatrix};

#[test]
fn peak_state_count_is_boundary_states_plus_constant() {
    let mut rng = Rng::new(501);
    let mut overheads = Vec::new();
    for &(l, c) in &[(64usize, 4usize), (64, 8), (64, 16), (128, 4), (96, 32), (60, 8)] {
        let d = 8;
        let seq = HeadSequence::random(l, d, d, &mut rng);
        let chunked = ChunkedSequence::new(&seq, c).unwrap();
        let s0 = StateMatrix::zeros(d, d);
        let d_out = Matrix::random_uniform(l, d, -1.0, 1.0, &mut rng);
        let ds_final = StateMatrix::zeros(d, d);

        let before = state_count::live();
        state_count::reset_peak();
        let (grads, ds0) = chunkwise_delta_backward(&chunked, &s0, &d_out, &ds_final).unwrap();
        let peak = state_count::peak() - before;
        drop(ds0);
        assert!(grads.is_finite());

        let n_boundary = l.div_ceil(c);
        assert!(
            peak >= n_boundary,
            "L={l} C={c}: peak {peak} below boundary count {n_boundary}"
        );
        overheads.push(peak - n_boundary);
    }
    // the additive term must be a constant, not a function of L or C
    let max_overhead = *overheads.iter().max().unwrap();
    let min_overhead = *overheads.iter().min().unwrap();
    assert_eq!(
        min_overhead, max_overhead,
        "overhead varies across configs: {overheads:?}"
    );
    assert!(
        max_overhead <= 4,
        "expected O(1) working states, got {max_overhead}"
    );
}
