//! Gaussian quadrature rules from three-term recurrences (Golub-Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

/// Gamma function by the Lanczos approximation (g = 7), valid for x >= 0.5.
pub fn gamma_fn(x: f64) -> f64 {
    assert!(x >= 0.5, "gamma_fn only implemented for x >= 0.5");
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let z = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Nodes and weights of a one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the monic
/// recurrence p_{k+1} = (x - alpha_k) p_k - beta_k p_{k-1}; weights are
/// beta_0 times the squared first eigenvector components.
fn golub_welsch(alpha: &[f64], beta: &[f64]) -> Rule1D {
    let n = alpha.len();
    let mut j = DMatrix::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = alpha[k];
        if k + 1 < n {
            let off = beta[k + 1].sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], beta[0] * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Rule1D {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Full-line rule for the weight |x|^{2 mu} e^{-x^2} (generalized Hermite).
pub fn gen_hermite(n: usize, mu: f64) -> Rule1D {
    let alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    beta[0] = gamma_fn(mu + 0.5);
    for k in 1..n {
        beta[k] = if k % 2 == 0 { (k / 2) as f64 } else { (k / 2) as f64 + mu + 0.5 };
    }
    golub_welsch(&alpha, &beta)
}

/// Positive-node half of the symmetric generalized-Hermite rule: integrates
/// int_0^inf x^{2 mu} e^{-x^2} f(x) dx exactly for even polynomials f up to
/// degree 4 n_half - 2.
pub fn gen_hermite_half(n_half: usize, mu: f64) -> Rule1D {
    let full = gen_hermite(2 * n_half, mu);
    let mut nodes = Vec::with_capacity(n_half);
    let mut weights = Vec::with_capacity(n_half);
    for (&x, &w) in full.nodes.iter().zip(&full.weights) {
        if x > 0.0 {
            nodes.push(x);
            weights.push(w);
        }
    }
    assert_eq!(nodes.len(), n_half, "even rule has no node at the origin");
    Rule1D { nodes, weights }
}

/// Weight e^{-x^2} on the real line.
pub fn hermite(n: usize) -> Rule1D {
    gen_hermite(n, 0.0)
}

/// Weight 1 on [-1, 1].
pub fn legendre(n: usize) -> Rule1D {
    let alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    beta[0] = 2.0;
    for k in 1..n {
        let kf = k as f64;
        beta[k] = kf * kf / (4.0 * kf * kf - 1.0);
    }
    golub_welsch(&alpha, &beta)
}

/// Weight 1 on [0, 1].
pub fn legendre01(n: usize) -> Rule1D {
    let base = legendre(n);
    Rule1D {
        nodes: base.nodes.iter().map(|x| (x + 1.0) / 2.0).collect(),
        weights: base.weights.iter().map(|w| w / 2.0).collect(),
    }
}
