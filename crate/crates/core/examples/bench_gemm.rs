use ndarray::linalg::general_mat_mul;
use ndarray::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &n in &[512usize, 1024, 2048] {
        let a = Array::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
        let b = Array::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
        let mut c = Array::zeros((n, n));
        let t = Instant::now();
        general_mat_mul(1.0, &a, &b, 0.0, &mut c);
        let dt = t.elapsed().as_secs_f64();
        println!("gemm n={n}: {dt:.3}s ({:.1} GFLOP/s single-thread)", 2.0*(n as f64).powi(3)/dt/1e9);
    }
    // small-batch shapes an MLP uses
    let a = Array::from_shape_fn((336, 64), |_| rng.gen::<f64>() - 0.5);
    let b = Array::from_shape_fn((64, 64), |_| rng.gen::<f64>() - 0.5);
    let mut c = Array::zeros((336, 64));
    let t = Instant::now();
    for _ in 0..1000 { general_mat_mul(1.0, &a, &b, 0.0, &mut c); }
    let dt = t.elapsed().as_secs_f64();
    println!("mlp-batch gemm 336x64x64 x1000: {dt:.3}s ({:.1} GFLOP/s)", 1000.0*2.0*336.0*64.0*64.0/dt/1e9);
}
