use ndarray::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    for &n in &[2000usize, 4216, 8000] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Array::from_shape_fn((n, 40), |_| rng.gen::<f64>() - 0.5);
        let mut a = b.dot(&b.t());
        for i in 0..n { a[[i,i]] += (n as f64) * 0.1 + 1.0; }
        let t = Instant::now();
        peakload::linalg::cholesky_in_place(&mut a).unwrap();
        let dt = t.elapsed().as_secs_f64();
        let gflops = (n as f64).powi(3) / 3.0 / dt / 1e9;
        println!("n={n}: {dt:.2}s  ({gflops:.1} GFLOP/s)");
    }
}
