//! Dense f64 vectors and matrices, activations, initialization and the
//! seeded random stream every stochastic routine draws from.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        contract!(
            data.len() == rows * cols,
            "matrix data has {} entries, expected {rows}x{cols}",
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        contract!(rows.iter().all(|r| r.len() == cols), "ragged rows in matrix literal");
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Appends one row; the row must match the column count.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        contract!(
            row.len() == self.cols,
            "row of width {} pushed onto {}x{} matrix",
            row.len(),
            self.rows,
            self.cols
        );
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// `W x` without bounds re-checking; callers have validated shapes.
    pub(crate) fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// Accumulates `W^T g` into `out`.
    pub(crate) fn mul_vec_transposed_into(&self, g: &[f64], out: &mut [f64]) {
        for (gi, row) in g.iter().zip(self.data.chunks_exact(self.cols)) {
            if *gi == 0.0 {
                continue;
            }
            axpy(*gi, row, out);
        }
    }

    /// `self += scale * u v^T`.
    pub(crate) fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        for (ui, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            let s = scale * ui;
            if s == 0.0 {
                continue;
            }
            axpy(s, v, row);
        }
    }

    /// `self += scale * other`, shapes equal.
    pub(crate) fn add_scaled(&mut self, scale: f64, other: &Matrix) {
        axpy(scale, &other.data, &mut self.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Logistic function, evaluated on the branch that never exponentiates a
/// large positive argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vector> {
    contract!(
        w.cols == x.len() && w.rows == b.len(),
        "affine: W is {}x{}, x has {} entries, b has {}",
        w.rows,
        w.cols,
        x.len(),
        b.len()
    );
    let mut out = b.to_vec();
    w.mul_vec_into(x, &mut out);
    Ok(out)
}

/// Uniform in `[-s, s]` with `s = sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    uniform_matrix(rows, cols, s, rng)
}

pub fn uniform_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_in(-scale, scale)).collect();
    Matrix { rows, cols, data }
}

pub fn uniform_vector(dim: usize, scale: f64, rng: &mut Rng) -> Vector {
    (0..dim).map(|_| rng.uniform_in(-scale, scale)).collect()
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(dim: usize, rate: f64, rng: &mut Rng) -> Result<Vector> {
    contract!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if rate == 0.0 {
        return Ok(vec![1.0; dim]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..dim)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect())
}

/// Seeded random stream: ChaCha8 keyed by the 64-bit seed.
///
/// Floats take the top 53 bits of a `u64` draw; bounded integers use
/// rejection on the smallest covering power-of-two mask, so the stream of
/// values is fixed by the seed alone.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this one's seed and a label.
    pub fn derive(&self, label: u64) -> Rng {
        // splitmix64 finalizer over (seed, label)
        let mut z = self
            .seed
            .wrapping_add(label.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Rng::new(z ^ (z >> 31))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. Panics on `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        let n = n as u64;
        let mask = u64::MAX >> (n - 1).leading_zeros().min(63);
        let mask = if n == 1 { 0 } else { mask };
        loop {
            let v = self.next_u64() & mask;
            if v < n {
                return v as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn with probability proportional to `cumulative` increments;
    /// `cumulative` is a non-decreasing prefix-sum array with positive total.
    pub fn weighted_index(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("empty weight table");
        let target = self.uniform() * total;
        cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use proptest::prelude::*;

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(relu(&[3.5, -3.5]), vec![3.5, 0.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let s = sigmoid(-50.0);
        assert!(s > 0.0 && s < 1e-20);
        assert!(sigmoid(700.0) <= 1.0 && sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0).is_finite());
    }

    #[test]
    fn affine_examples() {
        let id = Matrix::identity(2);
        assert_eq!(affine(&id, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let z = Matrix::zeros(2, 3);
        assert_eq!(affine(&z, &[7.0, 8.0, 9.0], &[5.0, 6.0]).unwrap(), vec![5.0, 6.0]);
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(affine(&w, &[3.0, 4.0], &[1.0, 1.0]).unwrap(), vec![8.0, 7.0]);
    }

    #[test]
    fn affine_shape_error_names_shapes() {
        let w = Matrix::zeros(2, 3);
        let err = affine(&w, &[1.0, 2.0], &[0.0, 0.0]).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2 entries"), "{err}");
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let s = (6.0f64 / 200.0).sqrt();
        let m = glorot_init(100, 100, &mut Rng::new(11));
        assert!(m.as_slice().iter().all(|v| v.abs() <= s));
        assert_eq!(m, glorot_init(100, 100, &mut Rng::new(11)));
    }

    #[test]
    fn glorot_mean_monte_carlo() {
        // 2x4 draws repeated until 10^5 samples; uniform on [-s, s] has
        // variance s^2/3.
        let mut rng = Rng::new(5);
        let s = (6.0f64 / 6.0).sqrt();
        let mut sum = 0.0;
        let mut n = 0usize;
        while n < 100_000 {
            let m = glorot_init(2, 4, &mut rng);
            sum += m.as_slice().iter().sum::<f64>();
            n += 8;
        }
        let mean = sum / n as f64;
        let se = (s * s / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn dropout_examples() {
        let mut rng = Rng::new(3);
        assert_eq!(dropout_mask(4, 0.0, &mut rng).unwrap(), vec![1.0; 4]);
        let m = dropout_mask(100_000, 0.2, &mut rng).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01, "{zeros}");
        assert!(m.iter().all(|&v| v == 0.0 || v == 1.0 / 0.8));
        assert!(dropout_mask(3, 1.0, &mut rng).is_err());
        assert!(dropout_mask(3, -0.1, &mut rng).is_err());
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut rng = Rng::new(1);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[rng.below(7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
        assert_eq!(rng.below(1), 0);
    }

    #[test]
    fn weighted_index_respects_weights() {
        let mut rng = Rng::new(2);
        let cum = [1.0, 1.0, 4.0];
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[rng.weighted_index(&cum)] += 1;
        }
        assert_eq!(counts[1], 0);
        let frac = counts[2] as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let base = Rng::new(9);
        let a: Vec<u64> = (0..4).map(|_| base.derive(1).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(base.derive(1).next_u64(), base.derive(2).next_u64());
    }

    proptest! {
        #[test]
        fn relu_idempotent(v in prop::collection::vec(-1e6f64..1e6, 0..20)) {
            prop_assert_eq!(relu(&relu(&v)), relu(&v));
        }

        #[test]
        fn sigmoid_symmetry(x in -700f64..700.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn affine_linear(
            seed in any::<u64>(),
            a in -10f64..10.0,
            b in -10f64..10.0,
        ) {
            let mut rng = Rng::new(seed);
            let w = uniform_matrix(3, 4, 2.0, &mut rng);
            let x = uniform_vector(4, 5.0, &mut rng);
            let y = uniform_vector(4, 5.0, &mut rng);
            let zero = vec![0.0; 3];
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = affine(&w, &mix, &zero).unwrap();
            let fx = affine(&w, &x, &zero).unwrap();
            let fy = affine(&w, &y, &zero).unwrap();
            for i in 0..3 {
                let rhs = a * fx[i] + b * fy[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() / scale < 1e-10);
            }
        }

        #[test]
        fn seeded_streams_repeat(seed in any::<u64>()) {
            let mut a = Rng::new(seed);
            let mut b = Rng::new(seed);
            prop_assert_eq!(dropout_mask(16, 0.3, &mut a).unwrap(), dropout_mask(16, 0.3, &mut b).unwrap());
            prop_assert_eq!(glorot_init(3, 5, &mut a), glorot_init(3, 5, &mut b));
        }
    }
}
