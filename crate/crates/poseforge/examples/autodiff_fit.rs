//! Minimal tour of the reverse-mode autodiff engine: build a graph over a
//! parameter store, backpropagate, and take Adam steps. Fits a one-hidden-
//! layer tanh network to y = sin(3x) on 32 points.
//!
//! ```text
//! cargo run --example autodiff_fit
//! ```

use poseforge::autodiff::{AdamConfig, Graph, ParamStore, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> poseforge::Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let n = 32;
    let hidden = 16;

    // Inputs are an n x 1 column; targets an n x 1 column of sin(3x).
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let x = Tensor::from_vec(&[n, 1], xs.clone());
    let y = Tensor::from_vec(&[n, 1], xs.iter().map(|&v| (3.0 * v).sin()).collect());

    // Parameters live in a store; graphs borrow it immutably.
    let mut store = ParamStore::new();
    let mut init = |r: usize, c: usize, scale: f64| {
        Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect())
    };
    let w1 = store.add("w1", init(1, hidden, 0.8), true);
    let b1 = store.add("b1", Tensor::zeros(&[hidden]), true);
    let w2 = store.add("w2", init(hidden, 1, 0.8), true);
    let b2 = store.add("b2", Tensor::zeros(&[1]), true);
    let adam = AdamConfig::default();

    for step in 0..=800 {
        // The graph borrows the store, so gradients are applied to a clone
        // which then replaces the original once the graph is dropped.
        let (loss, updated) = {
            let mut g = Graph::new(&store, true);
            let xin = g.input(x.clone());
            let (p1, pb1) = (g.param(w1), g.param(b1));
            let (p2, pb2) = (g.param(w2), g.param(b2));
            let h = g.matmul(xin, p1);
            let h = g.add_bias(h, pb1);
            let h = g.tanh(h);
            let out = g.matmul(h, p2);
            let out = g.add_bias(out, pb2);
            let target = g.input(y.clone());
            let diff = g.sub(out, target);
            let sq = g.mul(diff, diff);
            let loss = g.mean(sq);
            let grads = g.backward(loss);
            let mut updated = store.clone();
            g.apply_grads(&grads, &mut updated);
            (g.value(loss).data()[0], updated)
        };
        store = updated;
        store.adam_step(1e-2, &adam)?;
        if step % 200 == 0 {
            println!("step {step:4}  mse {loss:.6}");
        }
    }

    // Report the largest pointwise error of the fitted function.
    let worst = xs
        .iter()
        .map(|&v| {
            let mut g2 = Graph::new(&store, false);
            let xin = g2.input(Tensor::from_vec(&[1, 1], vec![v]));
            let (p1, pb1) = (g2.param(w1), g2.param(b1));
            let (p2, pb2) = (g2.param(w2), g2.param(b2));
            let h = g2.matmul(xin, p1);
            let h = g2.add_bias(h, pb1);
            let h = g2.tanh(h);
            let out = g2.matmul(h, p2);
            let out = g2.add_bias(out, pb2);
            (g2.value(out).data()[0] - (3.0 * v).sin()).abs()
        })
        .fold(0.0f64, f64::max);
    println!("largest |prediction - sin(3x)| after fitting: {worst:.4}");
    Ok(())
}
