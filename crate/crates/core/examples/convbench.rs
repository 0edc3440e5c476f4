//! Rough throughput probe for the convolution kernels.

use crpmap_core::kernels;
use std::time::Instant;

fn main() {
    // conv1b-like layer: 8->8 channels at 32^3 input, stride 1 (the heavy case)
    let (ci, co, n) = (8usize, 8usize, 32usize);
    let x: Vec<f64> = (0..ci * n * n * n).map(|i| (i % 97) as f64 * 0.01).collect();
    let w: Vec<f64> = (0..co * ci * 27).map(|i| (i % 53) as f64 * 0.01 - 0.25).collect();
    let (out_sp, pad) = kernels::same_geometry([n, n, n], 1);
    let od = [co, out_sp[0], out_sp[1], out_sp[2]];
    let mut out = vec![0.0; co * n * n * n];

    let reps = 50;
    let t0 = Instant::now();
    for _ in 0..reps {
        out.fill(0.0);
        kernels::conv3d_fwd(&x, [ci, n, n, n], &w, 1, pad, &mut out, od);
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = (co * n * n * n * ci * 27 * reps) as f64;
    println!(
        "conv3d_fwd 8->8 @32^3 stride1: {:.1} ms/rep, {:.2} GFLOP/s (sink {:.3})",
        dt / reps as f64 * 1e3,
        2.0 * macs / dt / 1e9,
        out[12345]
    );

    let t0 = Instant::now();
    let mut dx = vec![0.0; ci * n * n * n];
    for _ in 0..reps {
        dx.fill(0.0);
        kernels::conv3d_input_grad(&out, od, &w, 1, pad, &mut dx, [ci, n, n, n]);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "conv3d_input_grad: {:.1} ms/rep, {:.2} GFLOP/s (sink {:.3})",
        dt / reps as f64 * 1e3,
        2.0 * macs / dt / 1e9,
        dx[999]
    );

    let t0 = Instant::now();
    let mut dw = vec![0.0; w.len()];
    for _ in 0..reps {
        dw.fill(0.0);
        kernels::conv3d_weight_grad(&out, od, &x, [ci, n, n, n], 1, pad, &mut dw);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "conv3d_weight_grad: {:.1} ms/rep, {:.2} GFLOP/s (sink {:.3})",
        dt / reps as f64 * 1e3,
        2.0 * macs / dt / 1e9,
        dw[100]
    );
}
