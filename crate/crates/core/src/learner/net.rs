//! Flat-parameter forward and backward passes shared by training and
//! gradient checking.
//!
//! Linear layout: `[w_0 .. w_{d-1}, b]`.
//! MLP layout: `[W1 (h x d, row-major), b1 (h), w2 (h), b2]`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Net {
    Linear { dim: usize },
    Mlp { dim: usize, width: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target.
pub(crate) fn bce(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

impl Net {
    pub fn dim(self) -> usize {
        match self {
            Net::Linear { dim } | Net::Mlp { dim, .. } => dim,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            Net::Linear { dim } => dim + 1,
            Net::Mlp { dim, width } => width * dim + 2 * width + 1,
        }
    }

    pub fn scratch_len(self) -> usize {
        match self {
            Net::Linear { .. } => 0,
            Net::Mlp { width, .. } => width,
        }
    }

    /// Forward pass. For the MLP, `hidden` receives the activations.
    pub fn logit(self, p: &[f64], x: &[f64], hidden: &mut [f64]) -> f64 {
        match self {
            Net::Linear { dim } => dot(&p[..dim], x) + p[dim],
            Net::Mlp { dim, width } => {
                let (w1, rest) = p.split_at(width * dim);
                let (b1, rest) = rest.split_at(width);
                let (w2, b2) = rest.split_at(width);
                for (j, h) in hidden.iter_mut().enumerate() {
                    *h = (dot(&w1[j * dim..(j + 1) * dim], x) + b1[j]).tanh();
                }
                dot(w2, hidden) + b2[0]
            }
        }
    }

    /// Adds `scale * d(logit)/d(params)` to `grad`, reusing the activations
    /// left in `hidden` by the matching [`Net::logit`] call.
    pub fn backprop(self, p: &[f64], x: &[f64], hidden: &[f64], scale: f64, grad: &mut [f64]) {
        match self {
            Net::Linear { dim } => {
                for (g, xi) in grad[..dim].iter_mut().zip(x) {
                    *g += scale * xi;
                }
                grad[dim] += scale;
            }
            Net::Mlp { dim, width } => {
                let o_b1 = width * dim;
                let o_w2 = o_b1 + width;
                let o_b2 = o_w2 + width;
                for j in 0..width {
                    let h = hidden[j];
                    grad[o_w2 + j] += scale * h;
                    let dh = scale * p[o_w2 + j] * (1.0 - h * h);
                    grad[o_b1 + j] += dh;
                    for (g, xi) in grad[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                        *g += dh * xi;
                    }
                }
                grad[o_b2] += scale;
            }
        }
    }
}

/// Row-major feature matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Matrix {
    pub data: Vec<f64>,
    pub cols: usize,
}

impl Matrix {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, cols: usize) -> Self {
        let mut data = Vec::new();
        for r in rows {
            data.extend_from_slice(r);
        }
        Matrix { data, cols }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Mean cross-entropy over `idx`; when `grad` is given it is overwritten
/// with the gradient of that mean.
pub(crate) fn mean_loss(
    net: Net,
    p: &[f64],
    x: &Matrix,
    y: &[f64],
    idx: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut hidden = vec![0.0; net.scratch_len()];
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let inv = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    for &i in idx {
        let xi = x.row(i);
        let z = net.logit(p, xi, &mut hidden);
        total += bce(z, y[i]);
        if let Some(g) = grad.as_deref_mut() {
            net.backprop(p, xi, &hidden, (sigmoid(z) - y[i]) * inv, g);
        }
    }
    total * inv
}
