//! Central finite-difference verification of every analytic backward pass.
//!
//! Each layer is wrapped in a single-layer network, a random linear
//! projection of the output serves as the scalar loss, and analytic input
//! and parameter gradients are compared against (f(θ+ε) − f(θ−ε)) / 2ε at
//! ε = 1e-4 with relative error below 1e-4, over at least five random
//! shapes per layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spectral_mind::nn::{
    BatchNorm2d, Conv2d, Dense, Dropout, Flatten, Layer, Lstm, MaxPool2d, Mode, Network, Relu,
    Softmax,
};
use spectral_mind::{seeds, Tensor};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-7 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn sample_indices(len: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        (0..cap).map(|_| rng.gen_range(0..len)).collect()
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Forward with a fixed dropout mask: reseeding before each call makes the
/// mask a pure function of input shape, so finite differences see the same
/// network as the analytic backward pass.
fn fwd(net: &mut Network, x: &Tensor, dropout_seed: Option<u64>) -> Tensor {
    if let Some(s) = dropout_seed {
        net.reseed_dropout(s);
    }
    net.forward(x).unwrap()
}

fn project(y: &Tensor, w: &[f64]) -> f64 {
    y.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Check dL/dx and dL/dθ for a network under the loss L = wᵀ·flatten(y).
fn check_network(net: &mut Network, x: &Tensor, rng: &mut ChaCha8Rng, dropout_seed: Option<u64>) {
    let y0 = fwd(net, x, dropout_seed);
    let w: Vec<f64> = (0..y0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let _ = fwd(net, x, dropout_seed);
    let grad_out = Tensor::from_vec(&y0.shape, w.clone()).unwrap();
    let gx = net.backward(&grad_out).unwrap();
    let analytic_params: Vec<Vec<f64>> =
        net.params_and_grads().iter().map(|(_, g)| (*g).clone()).collect();

    for idx in sample_indices(x.len(), 24, rng) {
        let mut xp = x.clone();
        xp.data[idx] += EPS;
        let yp = fwd(net, &xp, dropout_seed);
        let mut xm = x.clone();
        xm.data[idx] -= EPS;
        let ym = fwd(net, &xm, dropout_seed);
        let fd = (project(&yp, &w) - project(&ym, &w)) / (2.0 * EPS);
        let err = rel_err(gx.data[idx], fd);
        assert!(
            err < TOL,
            "input grad [{idx}]: analytic {} vs fd {fd}, rel err {err}",
            gx.data[idx]
        );
    }

    let n_tensors = analytic_params.len();
    for k in 0..n_tensors {
        let len = analytic_params[k].len();
        for idx in sample_indices(len, 16, rng) {
            let orig = net.params_and_grads()[k].0[idx];
            net.params_and_grads()[k].0[idx] = orig + EPS;
            let yp = fwd(net, x, dropout_seed);
            net.params_and_grads()[k].0[idx] = orig - EPS;
            let ym = fwd(net, x, dropout_seed);
            net.params_and_grads()[k].0[idx] = orig;
            let fd = (project(&yp, &w) - project(&ym, &w)) / (2.0 * EPS);
            let err = rel_err(analytic_params[k][idx], fd);
            assert!(
                err < TOL,
                "param grad tensor {k} [{idx}]: analytic {} vs fd {fd}, rel err {err}",
                analytic_params[k][idx]
            );
        }
    }
}


pub fn conv2d_gradients_match_finite_differences() {
    // (batch, in_ch, out_ch, h, w, kernel, pad)
    let shapes = [
        (1usize, 1usize, 2usize, 5usize, 5usize, 3usize, 1usize),
        (2, 3, 4, 6, 4, 3, 1),
        (3, 2, 1, 4, 7, 3, 0),
        (1, 4, 3, 5, 6, 1, 0),
        (2, 1, 5, 8, 8, 3, 1),
        (1, 2, 2, 3, 3, 3, 2),
    ];
    for (case, &(n, ci, co, h, w, k, p)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(100 + case as u64, seeds::tag::INIT);
        let mut conv = Conv2d::new(ci, co, k, p);
        for v in &mut conv.weight.data {
            *v = rng.gen_range(-0.8..0.8);
        }
        for v in &mut conv.bias.data {
            *v = rng.gen_range(-0.3..0.3);
        }
        let mut net = Network::new(vec![Layer::Conv2d(conv)]);
        let x = random_tensor(&[n, ci, h, w], &mut rng);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn batchnorm_gradients_match_finite_differences() {
    let shapes = [
        (2usize, 1usize, 3usize, 3usize),
        (3, 2, 2, 4),
        (2, 4, 5, 3),
        (4, 3, 2, 2),
        (2, 2, 6, 5),
    ];
    for (case, &(n, c, h, w)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(200 + case as u64, seeds::tag::INIT);
        let mut bn = BatchNorm2d::new(c);
        for v in &mut bn.gamma.data {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in &mut bn.beta.data {
            *v = rng.gen_range(-0.5..0.5);
        }
        let mut net = Network::new(vec![Layer::BatchNorm2d(bn)]);
        let x = random_tensor(&[n, c, h, w], &mut rng);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn relu_gradients_match_finite_differences() {
    let shapes: [&[usize]; 5] =
        [&[2, 8], &[3, 1, 4, 4], &[1, 20], &[2, 2, 3, 5], &[4, 6]];
    for (case, shape) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(300 + case as u64, seeds::tag::INIT);
        let mut x = random_tensor(shape, &mut rng);
        // keep activations clear of the kink at zero
        for v in &mut x.data {
            *v += 0.05 * v.signum();
        }
        let mut net = Network::new(vec![Layer::Relu(Relu::default())]);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn maxpool_gradients_match_finite_differences() {
    let shapes = [
        (1usize, 1usize, 4usize, 4usize),
        (2, 2, 6, 4),
        (3, 1, 2, 8),
        (1, 3, 8, 8),
        (2, 2, 4, 6),
    ];
    for (case, &(n, c, h, w)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(400 + case as u64, seeds::tag::INIT);
        let x = random_tensor(&[n, c, h, w], &mut rng);
        let mut net = Network::new(vec![Layer::MaxPool2d(MaxPool2d::default())]);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn dense_gradients_match_finite_differences() {
    let shapes = [(1usize, 3usize, 2usize), (2, 8, 4), (4, 5, 5), (3, 12, 2), (5, 2, 7)];
    for (case, &(n, din, dout)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(500 + case as u64, seeds::tag::INIT);
        let mut dense = Dense::new(din, dout);
        for v in &mut dense.weight.data {
            *v = rng.gen_range(-0.8..0.8);
        }
        for v in &mut dense.bias.data {
            *v = rng.gen_range(-0.3..0.3);
        }
        let mut net = Network::new(vec![Layer::Dense(dense)]);
        let x = random_tensor(&[n, din], &mut rng);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn dropout_gradients_match_finite_differences_with_fixed_mask() {
    let shapes: [&[usize]; 5] = [&[2, 6], &[3, 10], &[1, 16], &[4, 4], &[2, 3, 5]];
    for (case, shape) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(600 + case as u64, seeds::tag::INIT);
        let drop = Dropout::new(0.4, seeds::rng(0, seeds::tag::DROPOUT)).unwrap();
        let mut net = Network::new(vec![Layer::Dropout(drop)]);
        let x = random_tensor(shape, &mut rng);
        check_network(&mut net, &x, &mut rng, Some(7_000 + case as u64));
    }
}


pub fn softmax_cross_entropy_fused_gradient_matches_finite_differences() {
    // The training loss couples softmax with cross-entropy: the gradient fed
    // into the network is (p − y)/N with respect to the logits, and the
    // softmax layer passes it through unchanged. Verify that composite.
    let shapes = [(2usize, 2usize), (3, 4), (1, 5), (4, 3), (5, 2)];
    for (case, &(n, k)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(700 + case as u64, seeds::tag::INIT);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut net = Network::new(vec![Layer::Softmax(Softmax::default())]);
        let logits = random_tensor(&[n, k], &mut rng);

        let ce = |probs: &Tensor| -> f64 {
            -(0..n).map(|b| probs.data[b * k + labels[b]].max(1e-12).ln()).sum::<f64>()
                / n as f64
        };

        let probs = net.forward(&logits).unwrap();
        let mut fused = Tensor::zeros(&[n, k]);
        for b in 0..n {
            for j in 0..k {
                let y = if labels[b] == j { 1.0 } else { 0.0 };
                fused.data[b * k + j] = (probs.data[b * k + j] - y) / n as f64;
            }
        }
        let gx = net.backward(&fused).unwrap();

        for idx in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data[idx] += EPS;
            let yp = ce(&net.forward(&lp).unwrap());
            let mut lm = logits.clone();
            lm.data[idx] -= EPS;
            let ym = ce(&net.forward(&lm).unwrap());
            let fd = (yp - ym) / (2.0 * EPS);
            let err = rel_err(gx.data[idx], fd);
            assert!(
                err < TOL,
                "case {case} logit grad [{idx}]: analytic {} vs fd {fd}, rel err {err}",
                gx.data[idx]
            );
        }
    }
}


pub fn lstm_sequence_gradients_match_finite_differences() {
    let shapes = [
        (1usize, 2usize, 2usize, 3usize),
        (2, 3, 4, 2),
        (1, 5, 3, 4),
        (3, 2, 2, 2),
        (2, 4, 5, 3),
    ];
    for (case, &(n, t, d, h)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(800 + case as u64, seeds::tag::INIT);
        let mut lstm = Lstm::new(d, h, true);
        for v in &mut lstm.w_ih.data {
            *v = rng.gen_range(-0.6..0.6);
        }
        for v in &mut lstm.w_hh.data {
            *v = rng.gen_range(-0.6..0.6);
        }
        for v in &mut lstm.bias.data {
            *v = rng.gen_range(-0.3..0.3);
        }
        let mut net = Network::new(vec![Layer::Lstm(lstm)]);
        let x = random_tensor(&[n, t, d], &mut rng);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn lstm_last_step_gradients_match_finite_differences() {
    let shapes = [
        (1usize, 3usize, 2usize, 2usize),
        (2, 2, 3, 4),
        (1, 4, 4, 3),
        (3, 3, 2, 5),
        (2, 5, 3, 2),
    ];
    for (case, &(n, t, d, h)) in shapes.iter().enumerate() {
        let mut rng = seeds::rng(900 + case as u64, seeds::tag::INIT);
        let mut lstm = Lstm::new(d, h, false);
        for v in &mut lstm.w_ih.data {
            *v = rng.gen_range(-0.6..0.6);
        }
        for v in &mut lstm.w_hh.data {
            *v = rng.gen_range(-0.6..0.6);
        }
        for v in &mut lstm.bias.data {
            *v = rng.gen_range(-0.3..0.3);
        }
        let mut net = Network::new(vec![Layer::Lstm(lstm)]);
        let x = random_tensor(&[n, t, d], &mut rng);
        check_network(&mut net, &x, &mut rng, None);
    }
}


pub fn composite_network_gradients_match_finite_differences() {
    // a miniature version of the CNN topology end to end (dropout-free)
    let mut rng = seeds::rng(1000, seeds::tag::INIT);
    let mut conv = Conv2d::new(1, 3, 3, 1);
    for v in &mut conv.weight.data {
        *v = rng.gen_range(-0.5..0.5);
    }
    let mut bn = BatchNorm2d::new(3);
    for v in &mut bn.gamma.data {
        *v = rng.gen_range(0.8..1.2);
    }
    let mut dense = Dense::new(3 * 2 * 2, 2);
    for v in &mut dense.weight.data {
        *v = rng.gen_range(-0.5..0.5);
    }
    let mut net = Network::new(vec![
        Layer::Conv2d(conv),
        Layer::BatchNorm2d(bn),
        Layer::Relu(Relu::default()),
        Layer::MaxPool2d(MaxPool2d::default()),
        Layer::Flatten(Flatten::default()),
        Layer::Dense(dense),
    ]);
    net.set_mode(Mode::Train);
    let x = random_tensor(&[2, 1, 4, 4], &mut rng);
    check_network(&mut net, &x, &mut rng, None);
}
