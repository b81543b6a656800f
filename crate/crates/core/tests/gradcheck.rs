mod common;

use common::{op_gradchecks, random_tensor, rng};
use rirecon_core::diffcore::{Tape, Tensor};

#[test]
fn every_operation_matches_finite_differences() {
    for seed in 0..100 {
        for (op, err, tol) in op_gradchecks(seed) {
            assert!(err < tol, "{op}, seed {seed}: {err}");
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[4, 7]);
        let scaled = Tensor::new(&[4, 7], x.data().iter().map(|v| v * 50.0).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(&scaled);
        let y = tape.softmax_rows(v).unwrap();
        for row in tape.value(y).chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
