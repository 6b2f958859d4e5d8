use rand::Rng;

use super::tensor::Tensor;

/// One standard-normal draw via Box-Muller.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

/// Normal draws truncated at two standard deviations, scaled by `std`.
pub fn truncated_normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            loop {
                let z = standard_normal(rng);
                if z.abs() <= 2.0 {
                    return z * std;
                }
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Uniform draws over `[-limit, limit]` with the Glorot limit.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Random `n x n` orthogonal matrix via modified Gram-Schmidt on a
/// Gaussian matrix (columns orthonormalized).
pub fn orthogonal_init<R: Rng>(rng: &mut R, n: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| standard_normal(rng)).collect())
        .collect();
    for j in 0..n {
        for i in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
            let prev = cols[i].clone();
            for (v, p) in cols[j].iter_mut().zip(&prev) {
                *v -= dot * p;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Degenerate draw; fall back to a unit basis vector.
            for (i, v) in cols[j].iter_mut().enumerate() {
                *v = if i == j { 1.0 } else { 0.0 };
            }
        } else {
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
        }
    }
    let mut data = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::from_vec(vec![n, n], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = truncated_normal(&mut rng, &[1000], 0.5);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn orthogonal_columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal_init(&mut rng, 16);
        for a in 0..16 {
            for b in 0..16 {
                let dot: f64 = (0..16).map(|i| q.at(&[i, a]) * q.at(&[i, b])).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "col {a} . col {b} = {dot}");
            }
        }
    }
}
