//! Central finite differences against the analytic backward kernels.

use fontid_core::numerics::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2d, maxpool2d_backward,
    mse_loss, relu, relu_backward, softmax_xent, ConvGeometry, Tensor,
};
use fontid_core::rng::{derived, Rng};
use rand::Rng as _;

pub const STEP: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Numeric gradient of the scalar `f` at `x`.
fn numeric(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = v - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

fn conv_case(rng: &mut Rng, i: usize) -> f64 {
    // Alternate between the direct path (stride 1, few filters) and the
    // im2col path (stride 2 or at least eight filters).
    let (stride, pad, f, k) = match i % 4 {
        0 => (1, 1, 3, 3),
        1 => (2, 0, 4, 5),
        2 => (1, 2, 9, 3),
        _ => (2, 1, 8, 3),
    };
    let b = 1 + rng.random_range(0..2);
    let c = 1 + rng.random_range(0..3);
    let (h, w) = (k + rng.random_range(1..6), k + rng.random_range(1..6));
    let geo = ConvGeometry { stride, pad };
    let x = random(&[b, c, h, w], rng);
    let kern = random(&[f, c, k, k], rng);
    let bias: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = conv2d_forward(&x, &kern, &bias, geo).unwrap();
    let r = random(y.shape(), rng);
    let g = conv2d_backward(&r, &x, &kern, geo).unwrap();
    let nx = numeric(&x, &|t| {
        dot(&conv2d_forward(t, &kern, &bias, geo).unwrap(), &r)
    });
    let nk = numeric(&kern, &|t| {
        dot(&conv2d_forward(&x, t, &bias, geo).unwrap(), &r)
    });
    let nb = numeric(&vec_tensor(&bias), &|t| {
        dot(&conv2d_forward(&x, &kern, t.data(), geo).unwrap(), &r)
    });
    relative_error(g.input.data(), &nx)
        .max(relative_error(g.kernel.data(), &nk))
        .max(relative_error(&g.bias, &nb))
}

fn fc_case(rng: &mut Rng) -> f64 {
    let (b, m, n) = (
        1 + rng.random_range(0..4),
        1 + rng.random_range(0..12),
        1 + rng.random_range(0..8),
    );
    let x = random(&[b, m], rng);
    let w = random(&[m, n], rng);
    let bias: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random(&[b, n], rng);
    let g = fc_backward(&r, &x, &w).unwrap();
    let gb: Vec<f64> = (0..n)
        .map(|j| (0..b).map(|i| r.data()[i * n + j]).sum())
        .collect();
    let nx = numeric(&x, &|t| dot(&fc_forward(t, &w, &bias).unwrap(), &r));
    let nw = numeric(&w, &|t| dot(&fc_forward(&x, t, &bias).unwrap(), &r));
    let nb = numeric(&vec_tensor(&bias), &|t| {
        dot(&fc_forward(&x, &w, t.data()).unwrap(), &r)
    });
    relative_error(g.input.data(), &nx)
        .max(relative_error(g.weight.data(), &nw))
        .max(relative_error(&g.bias, &nb))
        .max(relative_error(&gb, &nb))
}

/// Values on a shuffled grid with spacing 0.01, so no two entries of a
/// window are within the step of each other and no entry sits at zero.
fn separated(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| (i as f64 - (n / 2) as f64) * 0.01 + 0.005)
        .collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn pool_case(rng: &mut Rng) -> f64 {
    let (b, c) = (1 + rng.random_range(0..2), 1 + rng.random_range(0..3));
    let (h, w) = (2 + rng.random_range(0..7), 2 + rng.random_range(0..7));
    let x = separated(&[b, c, h, w], rng);
    let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
    let r = random(y.shape(), rng);
    let g = maxpool2d_backward(&r, &idx, x.shape()).unwrap();
    let n = numeric(&x, &|t| dot(&maxpool2d(t, 2, 2).unwrap().0, &r));
    relative_error(g.data(), &n)
}

fn relu_case(rng: &mut Rng) -> f64 {
    let len = 1 + rng.random_range(0..40);
    let x = separated(&[len], rng);
    let r = random(&[len], rng);
    let g = relu_backward(&r, &x).unwrap();
    let n = numeric(&x, &|t| dot(&relu(t), &r));
    relative_error(g.data(), &n)
}

fn xent_case(rng: &mut Rng) -> f64 {
    let (b, c) = (1 + rng.random_range(0..5), 2 + rng.random_range(0..8));
    let logits = random(&[b, c], rng).scale(3.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let (_, g) = softmax_xent(&logits, &labels).unwrap();
    let n = numeric(&logits, &|t| softmax_xent(t, &labels).unwrap().0);
    relative_error(g.data(), &n)
}

fn mse_case(rng: &mut Rng) -> f64 {
    let shape = [1 + rng.random_range(0..3), 1 + rng.random_range(0..10)];
    let pred = random(&shape, rng);
    let target = random(&shape, rng);
    let (_, g) = mse_loss(&pred, &target).unwrap();
    let n = numeric(&pred, &|t| mse_loss(t, &target).unwrap().0);
    relative_error(g.data(), &n)
}

/// (kernel, instances, worst relative error) for every backward kernel.
pub fn suite(instances: usize, seed: u64) -> Vec<(&'static str, usize, f64)> {
    type Case = fn(&mut Rng, usize) -> f64;
    let cases: [(&str, Case); 6] = [
        ("conv", conv_case),
        ("fc", |r, _| fc_case(r)),
        ("pool", |r, _| pool_case(r)),
        ("relu", |r, _| relu_case(r)),
        ("softmax-xent", |r, _| xent_case(r)),
        ("mse", |r, _| mse_case(r)),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(ci, (name, case))| {
            let worst = (0..instances)
                .map(|i| case(&mut derived(seed, (ci * 1000 + i) as u64), i))
                .fold(0.0, f64::max);
            (*name, instances, worst)
        })
        .collect()
}
