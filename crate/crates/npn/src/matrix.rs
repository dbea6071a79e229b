//! Dense row-major `f64` matrix.
//!
//! Hand-rolled on a flat `Vec<f64>` rather than pulling in a linear-algebra
//! stack: the network needs only a handful of operations, desk-scale sizes
//! gain nothing from BLAS, and keeping every summation loop explicit pins
//! the accumulation order so single-threaded runs are bit-reproducible.
//!
//! Shape agreement is a programming invariant here, enforced with asserts;
//! fallible shape checking lives at the network layer where user
//! configuration enters.

/// Dense row-major matrix. Entry `(i, j)` lives at `data[i * cols + j]`.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "from_vec: {} values for {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// 1 x n row vector.
    pub fn row_vec(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert!(i < self.rows);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies rows `lo..hi` into a new matrix.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Matrix {
        assert!(lo <= hi && hi <= self.rows, "slice_rows {lo}..{hi} of {}", self.rows);
        Matrix {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn transposed(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`. The i-k-j loop order keeps the inner loop running over
    /// contiguous rows of both `other` and the output, which autovectorizes.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose. `self` is n x r,
    /// `other` n x c, result r x c, accumulated as a sum of rank-1 updates so
    /// every inner loop stays contiguous.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn: {}x{} ^T * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b;
                }
            }
        }
        out
    }

    /// `self * other^T`. `self` is n x k, `other` m x k, result n x m; each
    /// entry is a dot product of two contiguous rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt: {}x{} * {}x{}^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        self.assert_same_shape(other, "zip_map");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        self.assert_same_shape(other, "add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `row` (a 1 x cols matrix) to every row.
    pub fn add_row_broadcast(&mut self, row: &Matrix) {
        assert_eq!(row.rows, 1, "add_row_broadcast: row vector expected");
        assert_eq!(row.cols, self.cols, "add_row_broadcast: width mismatch");
        for i in 0..self.rows {
            for (a, &b) in self.row_mut(i).iter_mut().zip(&row.data) {
                *a += b;
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums as a 1 x cols matrix (bias gradients).
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, &x) in out.data.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    /// Per-row sums as a length-`rows` vector.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn assert_same_shape(&self, other: &Matrix, what: &str) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "{what}: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_mat_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_small_case() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let id = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(a.matmul(&id), a);
        assert_eq!(id.matmul(&a), a);
    }

    #[test]
    fn transpose_involution() {
        let a = Matrix::from_fn(4, 7, |i, j| (i as f64) * 0.3 - (j as f64) * 1.7);
        assert_eq!(a.transposed().transposed(), a);
    }

    #[test]
    fn tn_and_nt_match_explicit_transpose() {
        let a = Matrix::from_fn(5, 3, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let b = Matrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.7);
        assert_mat_close(&a.matmul_tn(&b), &a.transposed().matmul(&b), 1e-12);
        let c = Matrix::from_fn(6, 3, |i, j| (i * j) as f64 + 0.5);
        assert_mat_close(&a.matmul_nt(&c), &a.matmul(&c.transposed()), 1e-12);
    }

    #[test]
    fn col_sums_and_broadcast() {
        let mut a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.col_sums().data(), &[4.0, 6.0]);
        a.add_row_broadcast(&Matrix::row_vec(vec![10.0, 20.0]));
        assert_eq!(a.data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn gather_rows_reorders() {
        let a = Matrix::from_vec(3, 2, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let g = a.gather_rows(&[2, 0]);
        assert_eq!(g.data(), &[20.0, 21.0, 0.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch_panics() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let _ = a.matmul(&b);
    }

    // Informational: prints matmul throughput. Run with
    // `cargo test -p npn bench_matmul -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn bench_matmul_throughput() {
        let a = Matrix::from_fn(128, 784, |i, j| ((i * 31 + j * 7) % 97) as f64 * 0.01);
        let b = Matrix::from_fn(784, 100, |i, j| ((i * 13 + j * 3) % 89) as f64 * 0.01);
        let flops = 2.0 * 128.0 * 784.0 * 100.0;
        let t0 = std::time::Instant::now();
        let mut acc = 0.0;
        let reps = 50;
        for _ in 0..reps {
            acc += a.matmul(&b).at(0, 0);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "matmul 128x784x100: {:.2} GFLOP/s (checksum {acc})",
            flops * reps as f64 / dt / 1e9
        );
    }

    proptest! {
        #[test]
        fn matmul_associative(seed in 0u64..1000) {
            let f = |s: u64, i: usize, j: usize| {
                (((i * 31 + j * 17 + s as usize * 13) % 41) as f64 - 20.0) * 0.05
            };
            let a = Matrix::from_fn(3, 4, |i, j| f(seed, i, j));
            let b = Matrix::from_fn(4, 5, |i, j| f(seed + 1, i, j));
            let c = Matrix::from_fn(5, 2, |i, j| f(seed + 2, i, j));
            assert_mat_close(&a.matmul(&b).matmul(&c), &a.matmul(&b.matmul(&c)), 1e-10);
        }

        #[test]
        fn matmul_distributes_over_add(seed in 0u64..1000) {
            let f = |s: u64, i: usize, j: usize| {
                (((i * 7 + j * 29 + s as usize * 11) % 23) as f64 - 11.0) * 0.1
            };
            let a = Matrix::from_fn(3, 4, |i, j| f(seed, i, j));
            let b = Matrix::from_fn(4, 3, |i, j| f(seed + 1, i, j));
            let c = Matrix::from_fn(4, 3, |i, j| f(seed + 2, i, j));
            assert_mat_close(
                &a.matmul(&b.add(&c)),
                &a.matmul(&b).add(&a.matmul(&c)),
                1e-10,
            );
        }
    }
}
