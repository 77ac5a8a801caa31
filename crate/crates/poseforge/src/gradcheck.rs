//! Finite-difference verification of the backward pass.
//!
//! Every operation is exercised in at least one case, and one case wires a
//! miniature version of the full pose network (convolution, batchnorm, point
//! features, feature fusion, classification and offset regression losses)
//! through a single graph. Each case compares every analytic input and
//! parameter gradient coordinate against a central difference.
//!
//! Probe points are kept away from non-smooth spots: pre-activations are
//! asserted to sit at least [`KINK_MARGIN`] from the relu kink, pooling
//! windows must have a clear winner by the same margin, and Huber residuals
//! must keep that distance from the quadratic/linear boundary. The margins
//! dwarf the probe step, so a finite difference never straddles a kink.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};

/// Central-difference step.
pub const GRADCHECK_EPSILON: f64 = 1e-6;
/// A coordinate passes when `|analytic - fd| <= tol * max(1, |analytic|, |fd|)`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Minimum distance of any probe point from the nearest non-smooth spot.
const KINK_MARGIN: f64 = 1e-3;

/// Outcome of one gradient-check case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    /// Input plus parameter coordinates compared.
    pub coords_checked: usize,
    /// Largest `|analytic - fd| / max(1, |analytic|, |fd|)` seen.
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Results of the whole suite.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn total_coords(&self) -> usize {
        self.cases.iter().map(|c| c.coords_checked).sum()
    }
}

type Builder = Box<dyn for<'s> Fn(&mut Graph<'s>, &[NodeId]) -> NodeId>;

struct Case {
    name: &'static str,
    store: ParamStore,
    inputs: Vec<Tensor>,
    train: bool,
    build: Builder,
}

/// Runs the full suite with RNG streams derived from `seed`.
pub fn run_gradcheck(seed: u64) -> GradCheckReport {
    let cases = vec![
        matmul_case(seed),
        conv2d_case(seed),
        bias_relu_case(seed),
        batchnorm_train_2d_case(seed),
        batchnorm_train_4d_case(seed),
        batchnorm_eval_case(seed),
        softmax_cross_entropy_case(seed),
        tanh_case(seed),
        huber_case(seed),
        global_max_pool_case(seed),
        max_pool2d_case(seed),
        avg_pool_case(seed),
        gather_offset_case(seed),
        elementwise_plumbing_case(seed),
        composed_network_case(seed),
    ];
    GradCheckReport {
        epsilon: GRADCHECK_EPSILON,
        tolerance: GRADCHECK_TOLERANCE,
        cases: cases.into_iter().map(run_case).collect(),
    }
}

fn run_case(case: Case) -> CaseResult {
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new(store, case.train);
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = (case.build)(&mut g, &ids);
        g.value(loss).item()
    };

    // One analytic pass.
    let mut g = Graph::new(&case.store, case.train);
    let ids: Vec<NodeId> = case.inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = (case.build)(&mut g, &ids);
    let grads = g.backward(loss);
    let input_grads: Vec<Tensor> = ids
        .iter()
        .zip(&case.inputs)
        .map(|(id, t)| {
            grads
                .wrt(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    let mut grad_sink = case.store.clone();
    g.apply_grads(&grads, &mut grad_sink);
    drop(g);

    let mut max_rel_err: f64 = 0.0;
    let mut coords = 0;
    let mut note = |analytic: f64, fd: f64| {
        let rel = (analytic - fd).abs() / 1f64.max(analytic.abs()).max(fd.abs());
        max_rel_err = max_rel_err.max(rel);
        coords += 1;
    };

    for (i, t) in case.inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[k] += GRADCHECK_EPSILON;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[k] -= GRADCHECK_EPSILON;
            let fd = (eval(&case.store, &plus) - eval(&case.store, &minus))
                / (2.0 * GRADCHECK_EPSILON);
            note(input_grads[i].data()[k], fd);
        }
    }

    let trainable: Vec<_> = case
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.value.numel()))
        .collect();
    for (pid, numel) in trainable {
        for k in 0..numel {
            let mut plus = case.store.clone();
            plus.get_mut(pid).value.data_mut()[k] += GRADCHECK_EPSILON;
            let mut minus = case.store.clone();
            minus.get_mut(pid).value.data_mut()[k] -= GRADCHECK_EPSILON;
            let fd =
                (eval(&plus, &case.inputs) - eval(&minus, &case.inputs)) / (2.0 * GRADCHECK_EPSILON);
            note(grad_sink.get(pid).grad.data()[k], fd);
        }
    }

    CaseResult {
        name: case.name.to_string(),
        coords_checked: coords,
        max_rel_err,
        pass: max_rel_err <= GRADCHECK_TOLERANCE,
    }
}

fn rng_for(seed: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn uniform(rng: &mut ChaCha12Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[mag_lo, mag_hi]` and random sign, so smooth-band
/// requirements like "away from zero" hold by construction.
fn banded(rng: &mut ChaCha12Rng, shape: &[usize], mag_lo: f64, mag_hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.gen_range(mag_lo..mag_hi);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Panics unless every element sits at least [`KINK_MARGIN`] from zero.
fn assert_away_from_zero(g: &Graph, id: NodeId, what: &str) {
    let min = g
        .value(id)
        .data()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(
        min >= KINK_MARGIN,
        "{what}: probe point too close to a relu kink (min |x| = {min:.2e})"
    );
}

/// Exact-zero ties come from saturated relus: every tied element is locally
/// constant under a probe-sized perturbation, so the pooled value is too.
fn gap_is_safe(best: f64, second: f64) -> bool {
    best - second >= KINK_MARGIN || (best == 0.0 && second == 0.0)
}

/// Panics unless, for every `[N, P, F]` column, the largest point value beats
/// the runner-up by [`KINK_MARGIN`] (or the column ties at exactly zero).
fn assert_pointwise_gap(g: &Graph, id: NodeId, what: &str) {
    let t = g.value(id);
    let (n, p, f) = (t.dim(0), t.dim(1), t.dim(2));
    for i in 0..n {
        for j in 0..f {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for k in 0..p {
                let v = t.data()[(i * p + k) * f + j];
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            assert!(
                gap_is_safe(best, second),
                "{what}: max-pool tie too close (gap = {:.2e})",
                best - second
            );
        }
    }
}

/// Panics unless every `k x k` stride-`s` window of a `[N, C, H, W]` tensor
/// has a clear winner by [`KINK_MARGIN`].
fn assert_window_gap(g: &Graph, id: NodeId, k: usize, s: usize, what: &str) {
    let t = g.value(id);
    let (n, c, h, w) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    for pi in 0..n * c {
        for oy in 0..=(h - k) / s {
            for ox in 0..=(w - k) / s {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for u in 0..k {
                    for v in 0..k {
                        let val = t.data()[(pi * h + oy * s + u) * w + ox * s + v];
                        if val > best {
                            second = best;
                            best = val;
                        } else if val > second {
                            second = val;
                        }
                    }
                }
                assert!(
                    gap_is_safe(best, second),
                    "{what}: pooling window tie too close (gap = {:.2e})",
                    best - second
                );
            }
        }
    }
}

/// Panics unless every residual keeps [`KINK_MARGIN`] distance from the
/// Huber boundary at `|r| = delta`.
fn assert_huber_margin(g: &Graph, id: NodeId, delta: f64, what: &str) {
    for &r in g.value(id).data() {
        assert!(
            (r.abs() - delta).abs() >= KINK_MARGIN,
            "{what}: residual {r:.4} too close to the huber boundary {delta}"
        );
    }
}

fn matmul_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 1);
    let a = uniform(&mut rng, &[3, 4], -2.0, 2.0);
    let b = uniform(&mut rng, &[4, 2], -2.0, 2.0);
    Case {
        name: "matmul",
        store: ParamStore::new(),
        inputs: vec![a, b],
        train: false,
        build: Box::new(|g, ids| {
            let y = g.matmul(ids[0], ids[1]);
            g.mean(y)
        }),
    }
}

fn conv2d_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 2);
    let x = uniform(&mut rng, &[2, 3, 5, 5], -1.0, 1.0);
    let w = uniform(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    Case {
        name: "conv2d",
        store: ParamStore::new(),
        inputs: vec![x, w],
        train: false,
        build: Box::new(|g, ids| {
            let y = g.conv2d(ids[0], ids[1], 2, 1);
            let m = g.mean(y);
            // Mix in a sum head so both reductions get coverage here.
            let s = g.sum(y);
            let scaled = g.scale(s, 0.01);
            g.add(m, scaled)
        }),
    }
}

fn bias_relu_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 3);
    // Pre-activations end up in [0.3, 1.7] in magnitude: safely off the kink.
    let x = banded(&mut rng, &[4, 3], 0.5, 1.5);
    let b = uniform(&mut rng, &[3], -0.2, 0.2);
    Case {
        name: "add_bias_relu",
        store: ParamStore::new(),
        inputs: vec![x, b],
        train: false,
        build: Box::new(|g, ids| {
            let pre = g.add_bias(ids[0], ids[1]);
            assert_away_from_zero(g, pre, "add_bias_relu");
            let y = g.relu(pre);
            g.mean(y)
        }),
    }
}

fn batchnorm_train_2d_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 4);
    let mut store = ParamStore::new();
    let gamma = store.add("bn.gamma", uniform(&mut rng, &[4], 0.5, 1.5), true);
    let beta = store.add("bn.beta", uniform(&mut rng, &[4], -0.3, 0.3), true);
    let rm = store.add("bn.running_mean", Tensor::zeros(&[4]), false);
    let rv = store.add("bn.running_var", Tensor::from_fn(&[4], |_| 1.0), false);
    let x = uniform(&mut rng, &[6, 4], -2.0, 2.0);
    Case {
        name: "batchnorm_train_2d",
        store,
        inputs: vec![x],
        train: true,
        build: Box::new(move |g, ids| {
            let gm = g.param(gamma);
            let bt = g.param(beta);
            let y = g.batchnorm(ids[0], gm, bt, rm, rv, 0.9, 1e-5);
            g.mean(y)
        }),
    }
}

fn batchnorm_train_4d_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 5);
    let mut store = ParamStore::new();
    let gamma = store.add("bn.gamma", uniform(&mut rng, &[2], 0.5, 1.5), true);
    let beta = store.add("bn.beta", uniform(&mut rng, &[2], -0.3, 0.3), true);
    let rm = store.add("bn.running_mean", Tensor::zeros(&[2]), false);
    let rv = store.add("bn.running_var", Tensor::from_fn(&[2], |_| 1.0), false);
    let x = uniform(&mut rng, &[4, 2, 3, 3], -2.0, 2.0);
    Case {
        name: "batchnorm_train_4d",
        store,
        inputs: vec![x],
        train: true,
        build: Box::new(move |g, ids| {
            let gm = g.param(gamma);
            let bt = g.param(beta);
            let y = g.batchnorm(ids[0], gm, bt, rm, rv, 0.9, 1e-5);
            // Square via mul so the batch-statistics coupling shows up in
            // second-order structure too.
            let sq = g.mul(y, y);
            g.mean(sq)
        }),
    }
}

fn batchnorm_eval_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 6);
    let mut store = ParamStore::new();
    let gamma = store.add("bn.gamma", uniform(&mut rng, &[3], 0.5, 1.5), true);
    let beta = store.add("bn.beta", uniform(&mut rng, &[3], -0.3, 0.3), true);
    let rm = store.add("bn.running_mean", uniform(&mut rng, &[3], -0.5, 0.5), false);
    let rv = store.add("bn.running_var", uniform(&mut rng, &[3], 0.5, 2.0), false);
    let x = uniform(&mut rng, &[1, 3], -2.0, 2.0);
    Case {
        name: "batchnorm_eval",
        store,
        inputs: vec![x],
        train: false,
        build: Box::new(move |g, ids| {
            let gm = g.param(gamma);
            let bt = g.param(beta);
            let y = g.batchnorm(ids[0], gm, bt, rm, rv, 0.9, 1e-5);
            g.mean(y)
        }),
    }
}

fn softmax_cross_entropy_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 7);
    let logits = uniform(&mut rng, &[5, 7], -3.0, 3.0);
    Case {
        name: "softmax_cross_entropy",
        store: ParamStore::new(),
        inputs: vec![logits],
        train: false,
        build: Box::new(|g, ids| {
            let p = g.softmax(ids[0]);
            let ce = g.cross_entropy(p, &[0, 3, 6, 2, 5]);
            g.mean(ce)
        }),
    }
}

fn tanh_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 8);
    let x = uniform(&mut rng, &[3, 5], -2.5, 2.5);
    Case {
        name: "tanh",
        store: ParamStore::new(),
        inputs: vec![x],
        train: false,
        build: Box::new(|g, ids| {
            let y = g.tanh(ids[0]);
            g.mean(y)
        }),
    }
}

fn huber_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 9);
    // Half the residuals live in the quadratic zone, half in the linear zone;
    // all keep a wide margin from |r| = 0.5.
    let quad = banded(&mut rng, &[4], 0.05, 0.4);
    let lin = banded(&mut rng, &[4], 0.65, 1.5);
    let mut data = quad.data().to_vec();
    data.extend_from_slice(lin.data());
    let r = Tensor::from_vec(&[8], data);
    Case {
        name: "huber",
        store: ParamStore::new(),
        inputs: vec![r],
        train: false,
        build: Box::new(|g, ids| {
            assert_huber_margin(g, ids[0], 0.5, "huber");
            let h = g.huber(ids[0], 0.5);
            g.mean(h)
        }),
    }
}

fn global_max_pool_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 10);
    let mut x = uniform(&mut rng, &[2, 6, 3], -1.0, 1.0);
    // Push each column's winner clear of the runner-up.
    let (n, p, f) = (2, 6, 3);
    for i in 0..n {
        for j in 0..f {
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..p {
                let v = x.data()[(i * p + k) * f + j];
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            x.data_mut()[(i * p + best_k) * f + j] += 0.5;
        }
    }
    Case {
        name: "global_max_pool",
        store: ParamStore::new(),
        inputs: vec![x],
        train: false,
        build: Box::new(|g, ids| {
            assert_pointwise_gap(g, ids[0], "global_max_pool");
            let y = g.global_max_pool(ids[0]);
            g.mean(y)
        }),
    }
}

fn max_pool2d_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 11);
    let mut x = uniform(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
    // Windows are disjoint at kernel = stride = 2: bump each window's max.
    let (h, w, k) = (4, 4, 2);
    for pi in 0..4 {
        for oy in 0..h / k {
            for ox in 0..w / k {
                let mut best_idx = 0;
                let mut best = f64::NEG_INFINITY;
                for u in 0..k {
                    for v in 0..k {
                        let idx = (pi * h + oy * k + u) * w + ox * k + v;
                        if x.data()[idx] > best {
                            best = x.data()[idx];
                            best_idx = idx;
                        }
                    }
                }
                x.data_mut()[best_idx] += 0.5;
            }
        }
    }
    Case {
        name: "max_pool2d",
        store: ParamStore::new(),
        inputs: vec![x],
        train: false,
        build: Box::new(|g, ids| {
            assert_window_gap(g, ids[0], 2, 2, "max_pool2d");
            let y = g.max_pool2d(ids[0], 2, 2);
            g.mean(y)
        }),
    }
}

fn avg_pool_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 12);
    let x = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    Case {
        name: "global_avg_pool2d",
        store: ParamStore::new(),
        inputs: vec![x],
        train: false,
        build: Box::new(|g, ids| {
            let y = g.global_avg_pool2d(ids[0]);
            g.mean(y)
        }),
    }
}

fn gather_offset_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 13);
    let raw = uniform(&mut rng, &[4, 5], -1.5, 1.5);
    // Targets put the residual tanh(x) - t firmly inside or outside the
    // quadratic zone of a delta = 1 Huber.
    let targets = Tensor::from_vec(&[4], vec![2.2, 0.0, -2.2, 0.0]);
    Case {
        name: "gather_tanh_huber",
        store: ParamStore::new(),
        inputs: vec![raw, targets],
        train: false,
        build: Box::new(|g, ids| {
            let picked = g.gather(ids[0], &[2, 0, 4, 1]);
            let squashed = g.tanh(picked);
            let r = g.sub(squashed, ids[1]);
            assert_huber_margin(g, r, 1.0, "gather_tanh_huber");
            let h = g.huber(r, 1.0);
            g.mean(h)
        }),
    }
}

fn elementwise_plumbing_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 14);
    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    Case {
        name: "elementwise_plumbing",
        store: ParamStore::new(),
        inputs: vec![a, b],
        train: false,
        build: Box::new(|g, ids| {
            let prod = g.mul(ids[0], ids[1]);
            let sum = g.add(ids[0], ids[1]);
            let diff = g.sub(prod, sum);
            let narrow = g.slice_cols(diff, 1, 2);
            let wide = g.concat(&[diff, narrow]);
            let flat = g.reshape(wide, &[18]);
            let scaled = g.scale(flat, 1.7);
            g.mean(scaled)
        }),
    }
}

fn composed_network_case(seed: u64) -> Case {
    let mut rng = rng_for(seed, 15);
    let mut store = ParamStore::new();
    let conv_w = store.add("conv.weight", uniform(&mut rng, &[2, 1, 3, 3], -0.6, 0.6), true);
    let bn1_g = store.add("bn1.gamma", uniform(&mut rng, &[2], 0.8, 1.2), true);
    let bn1_b = store.add("bn1.beta", uniform(&mut rng, &[2], -0.1, 0.1), true);
    let bn1_rm = store.add("bn1.running_mean", Tensor::zeros(&[2]), false);
    let bn1_rv = store.add("bn1.running_var", Tensor::from_fn(&[2], |_| 1.0), false);
    let pt_w = store.add("points.weight", uniform(&mut rng, &[3, 4], -0.8, 0.8), true);
    let pt_b = store.add("points.bias", uniform(&mut rng, &[4], -0.2, 0.2), true);
    let head_w = store.add("head.weight", uniform(&mut rng, &[6, 8], -0.7, 0.7), true);
    let head_b = store.add("head.bias", uniform(&mut rng, &[8], -0.2, 0.2), true);
    let bn2_g = store.add("bn2.gamma", uniform(&mut rng, &[8], 0.8, 1.2), true);
    let bn2_b = store.add("bn2.beta", uniform(&mut rng, &[8], -0.1, 0.1), true);
    let bn2_rm = store.add("bn2.running_mean", Tensor::zeros(&[8]), false);
    let bn2_rv = store.add("bn2.running_var", Tensor::from_fn(&[8], |_| 1.0), false);

    let image = uniform(&mut rng, &[3, 1, 6, 6], 0.0, 1.0);
    let points = uniform(&mut rng, &[3, 5, 3], -1.0, 1.0);
    let offset_targets = Tensor::from_vec(&[3], vec![2.2, 0.0, -2.2]);
    let labels = vec![1usize, 0, 3];
    let offset_bins = vec![0usize, 2, 1];

    Case {
        name: "composed_network",
        store,
        inputs: vec![image, points, offset_targets],
        train: true,
        build: Box::new(move |g, ids| {
            // Image branch: conv -> bn -> relu -> maxpool -> global avg.
            let w = g.param(conv_w);
            let conv = g.conv2d(ids[0], w, 2, 1);
            let gm1 = g.param(bn1_g);
            let bt1 = g.param(bn1_b);
            let bn1 = g.batchnorm(conv, gm1, bt1, bn1_rm, bn1_rv, 0.9, 1e-5);
            assert_away_from_zero(g, bn1, "composed: image pre-activation");
            let act1 = g.relu(bn1);
            assert_window_gap(g, act1, 2, 1, "composed: pooling input");
            let pooled = g.max_pool2d(act1, 2, 1);
            let img_feat = g.global_avg_pool2d(pooled);

            // Point branch: shared linear over points -> relu -> max pool.
            let flat_pts = g.reshape(ids[1], &[15, 3]);
            let pw = g.param(pt_w);
            let pb = g.param(pt_b);
            let lin = g.matmul(flat_pts, pw);
            let pre_pt = g.add_bias(lin, pb);
            assert_away_from_zero(g, pre_pt, "composed: point pre-activation");
            let act_pt = g.relu(pre_pt);
            let per_point = g.reshape(act_pt, &[3, 5, 4]);
            assert_pointwise_gap(g, per_point, "composed: point pooling input");
            let pt_feat = g.global_max_pool(per_point);

            // Fusion and head.
            let fused = g.concat(&[img_feat, pt_feat]);
            let hw = g.param(head_w);
            let hb = g.param(head_b);
            let head_lin = g.matmul(fused, hw);
            let head_pre = g.add_bias(head_lin, hb);
            let gm2 = g.param(bn2_g);
            let bt2 = g.param(bn2_b);
            let head_bn = g.batchnorm(head_pre, gm2, bt2, bn2_rm, bn2_rv, 0.9, 1e-5);
            assert_away_from_zero(g, head_bn, "composed: head pre-activation");
            let head_act = g.relu(head_bn);

            // Classification block plus offset block.
            let logits = g.slice_cols(head_act, 0, 5);
            let offsets = g.slice_cols(head_act, 5, 3);
            let probs = g.softmax(logits);
            let ce = g.cross_entropy(probs, &labels);
            let picked = g.gather(offsets, &offset_bins);
            let squashed = g.tanh(picked);
            let r = g.sub(squashed, ids[2]);
            assert_huber_margin(g, r, 1.0, "composed: offset residual");
            let hub = g.huber(r, 1.0);
            let per_sample = g.add(ce, hub);
            g.mean(per_sample)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run_gradcheck(7);
        for case in &report.cases {
            assert!(
                case.pass,
                "{} failed: max rel err {:.3e} over {} coords",
                case.name, case.max_rel_err, case.coords_checked
            );
        }
        assert!(report.total_coords() > 500, "suite is too small to trust");
    }

    #[test]
    fn suite_covers_composed_network() {
        let report = run_gradcheck(7);
        let composed = report
            .cases
            .iter()
            .find(|c| c.name == "composed_network")
            .expect("composed case present");
        assert!(composed.coords_checked > 200);
    }

    #[test]
    fn report_serializes_to_json() {
        let report = run_gradcheck(7);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"composed_network\""));
        assert!(json.contains("\"epsilon\""));
    }

    #[test]
    fn different_seeds_still_pass() {
        for seed in [1, 42] {
            assert!(run_gradcheck(seed).all_pass(), "seed {seed} failed");
        }
    }
}
