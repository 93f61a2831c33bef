//! Floating-point LLL reduction and Babai nearest-plane rounding.
//!
//! Lattice vectors are kept as integer coefficient rows over a fixed generating
//! basis; the real vector of a row is always recomputed through `embed`, so
//! rounding never accumulates across reduction steps.

pub(crate) struct Reduced {
    pub coeffs: Vec<Vec<i128>>,
    pub vectors: Vec<Vec<f64>>,
    star: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub_row(target: &mut [i128], src: &[i128], q: i128) {
    for (t, s) in target.iter_mut().zip(src) {
        *t -= q * s;
    }
}

/// Reduces the lattice spanned by the coefficient rows of `initial`.
pub(crate) fn lll(initial: Vec<Vec<i128>>, embed: &dyn Fn(&[i128]) -> Vec<f64>, delta: f64) -> Reduced {
    let n = initial.len();
    let mut coeffs = initial;
    let mut vectors: Vec<Vec<f64>> = coeffs.iter().map(|c| embed(c)).collect();
    let mut mu = vec![vec![0.0; n]; n];
    let mut norms = vec![0.0; n];

    let gs_row = |k: usize, vectors: &[Vec<f64>], mu: &mut [Vec<f64>], norms: &mut [f64]| {
        for j in 0..k {
            let mut s = dot(&vectors[k], &vectors[j]);
            for i in 0..j {
                s -= mu[j][i] * mu[k][i] * norms[i];
            }
            mu[k][j] = s / norms[j];
        }
        let mut b = dot(&vectors[k], &vectors[k]);
        for j in 0..k {
            b -= mu[k][j] * mu[k][j] * norms[j];
        }
        norms[k] = b.max(f64::MIN_POSITIVE);
    };

    gs_row(0, &vectors, &mut mu, &mut norms);
    let mut k = 1;
    let mut guard = 0usize;
    let limit = 200_000;
    while k < n && guard < limit {
        guard += 1;
        // size reduction, repeated because the float mu can be stale after a pass
        for _ in 0..8 {
            gs_row(k, &vectors, &mut mu, &mut norms);
            if (0..k).all(|j| mu[k][j].abs() <= 0.51) {
                break;
            }
            for j in (0..k).rev() {
                let q = mu[k][j].round();
                if q != 0.0 {
                    let qi = q as i128;
                    let src = coeffs[j].clone();
                    sub_row(&mut coeffs[k], &src, qi);
                    for i in 0..j {
                        mu[k][i] -= q * mu[j][i];
                    }
                    mu[k][j] -= q;
                }
            }
            vectors[k] = embed(&coeffs[k]);
        }
        let lovasz = (delta - mu[k][k - 1] * mu[k][k - 1]) * norms[k - 1];
        if norms[k] >= lovasz {
            k += 1;
        } else {
            coeffs.swap(k, k - 1);
            vectors.swap(k, k - 1);
            if k > 1 {
                k -= 1;
            } else {
                gs_row(0, &vectors, &mut mu, &mut norms);
            }
        }
    }
    // final orthogonalization for nearest-plane rounding
    for k in 0..n {
        gs_row(k, &vectors, &mut mu, &mut norms);
    }
    let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut s = vectors[k].clone();
        for j in 0..k {
            for (x, y) in s.iter_mut().zip(&star[j]) {
                *x -= mu[k][j] * y;
            }
        }
        star.push(s);
    }
    let norms = star.iter().map(|s| dot(s, s).max(f64::MIN_POSITIVE)).collect();
    Reduced { coeffs, vectors, star, norms }
}

impl Reduced {
    /// Coefficients (over the generating basis) of a lattice point close to `target`.
    pub fn babai(&self, target: &[f64]) -> Vec<i128> {
        let n = self.coeffs.len();
        let mut t = target.to_vec();
        let mut out = vec![0i128; self.coeffs[0].len()];
        for i in (0..n).rev() {
            let q = (dot(&t, &self.star[i]) / self.norms[i]).round();
            if q != 0.0 {
                for (x, y) in t.iter_mut().zip(&self.vectors[i]) {
                    *x -= q * y;
                }
                sub_row(&mut out, &self.coeffs[i], -(q as i128));
            }
        }
        out
    }
}
