//! Exhaustive-search oracle for multilayer modularity on small graphs.
#![allow(dead_code)]

use ip2rsnn::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn random_layer(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = 0.1 + rng.random::<f64>();
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    a
}

/// Q written out term by term from the layer adjacencies.
pub fn naive_q(layers: &[Matrix], gamma: &[f64], omega: f64, labels: &[usize]) -> f64 {
    let n = layers[0].rows();
    let nl = layers.len();
    let mut two_mu = 0.0;
    let mut q = 0.0;
    for (l, a) in layers.iter().enumerate() {
        let k: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
        let two_m: f64 = k.iter().sum();
        two_mu += two_m;
        for i in 0..n {
            for j in 0..n {
                if labels[l * n + i] != labels[l * n + j] {
                    continue;
                }
                let null = if two_m > 0.0 { gamma[l] * k[i] * k[j] / two_m } else { 0.0 };
                q += a.get(i, j) - null;
            }
        }
    }
    for l in 0..nl {
        for r in 0..nl {
            if l.abs_diff(r) != 1 {
                continue;
            }
            for i in 0..n {
                two_mu += omega;
                if labels[l * n + i] == labels[r * n + i] {
                    q += omega;
                }
            }
        }
    }
    if two_mu == 0.0 {
        0.0
    } else {
        q / two_mu
    }
}

/// Best Q over all set partitions, enumerated as restricted growth strings.
pub fn exhaustive_best(layers: &[Matrix], gamma: &[f64], omega: f64) -> f64 {
    let total = layers.len() * layers[0].rows();
    let mut labels = vec![0usize; total];
    let mut maxes = vec![0usize; total];
    let mut best = f64::NEG_INFINITY;
    loop {
        best = best.max(naive_q(layers, gamma, omega, &labels));
        // advance to the next restricted growth string
        let mut i = total - 1;
        loop {
            if i == 0 {
                return best;
            }
            if labels[i] <= maxes[i - 1] {
                labels[i] += 1;
                maxes[i] = maxes[i - 1].max(labels[i]);
                for j in i + 1..total {
                    labels[j] = 0;
                    maxes[j] = maxes[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Two disjoint 3-cliques.
pub fn two_triangles() -> Matrix {
    Matrix::from_fn(6, 6, |i, j| if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 })
}

pub struct Fixture {
    pub layers: Vec<Matrix>,
    pub gamma: f64,
    pub omega: f64,
}

pub fn fixtures() -> Vec<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for (k, n) in [4, 5, 5, 6, 6, 7, 7, 7, 8, 8, 8, 8].into_iter().enumerate() {
        let density = [0.3, 0.5, 0.7][k % 3];
        out.push(Fixture {
            layers: vec![random_layer(&mut rng, n, density)],
            gamma: [1.0, 0.8, 1.3][k % 3],
            omega: 0.0,
        });
    }
    for (k, n) in [4, 4, 5, 5, 5, 5, 6, 6].into_iter().enumerate() {
        let layers = (0..2).map(|_| random_layer(&mut rng, n, 0.5)).collect();
        out.push(Fixture {
            layers,
            gamma: [1.0, 1.2][k % 2],
            omega: [0.0, 0.1, 0.5, 2.0][k % 4],
        });
    }
    out.push(Fixture {
        layers: vec![two_triangles()],
        gamma: 1.0,
        omega: 0.0,
    });
    out.push(Fixture {
        layers: vec![two_triangles(), two_triangles()],
        gamma: 1.0,
        omega: 0.3,
    });
    out
}
