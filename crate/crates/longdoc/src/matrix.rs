//! Dense row-major f64 matrices with allocation accounting.
//!
//! Every `Matrix` registers its buffer with a thread-local probe on
//! construction and unregisters on drop, so kernel code can be audited for
//! peak working memory and for the size of the largest single buffer it
//! ever materializes. Shape errors in these low-level ops are programmer
//! errors and panic; fallible validation lives in the public operations
//! built on top.

use std::fmt;

/// Allocation probe: tracks live bytes, peak live bytes, and the largest
/// single buffer allocated on the current thread since the last reset.
pub mod probe {
    use std::cell::Cell;

    thread_local! {
        static LIVE: Cell<u64> = const { Cell::new(0) };
        static PEAK: Cell<u64> = const { Cell::new(0) };
        static LARGEST: Cell<u64> = const { Cell::new(0) };
    }

    /// Snapshot of the probe counters.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct AllocStats {
        /// Bytes currently live.
        pub live_bytes: u64,
        /// Maximum of `live_bytes` since the last reset.
        pub peak_bytes: u64,
        /// Largest single buffer allocated since the last reset.
        pub largest_block_bytes: u64,
    }

    /// Zero all counters. Buffers allocated before the reset still
    /// decrement `live` on drop, saturating at zero.
    pub fn reset() {
        LIVE.with(|c| c.set(0));
        PEAK.with(|c| c.set(0));
        LARGEST.with(|c| c.set(0));
    }

    pub fn snapshot() -> AllocStats {
        AllocStats {
            live_bytes: LIVE.with(Cell::get),
            peak_bytes: PEAK.with(Cell::get),
            largest_block_bytes: LARGEST.with(Cell::get),
        }
    }

    pub(crate) fn on_alloc(bytes: u64) {
        LIVE.with(|c| {
            let live = c.get() + bytes;
            c.set(live);
            PEAK.with(|p| {
                if live > p.get() {
                    p.set(live);
                }
            });
        });
        LARGEST.with(|c| {
            if bytes > c.get() {
                c.set(bytes);
            }
        });
    }

    pub(crate) fn on_free(bytes: u64) {
        LIVE.with(|c| c.set(c.get().saturating_sub(bytes)));
    }

    /// Accounts for a scratch buffer that is not a `Matrix` (e.g. a plain
    /// `Vec<f64>` used as a row accumulator). Registers on creation and
    /// unregisters when the guard drops.
    pub struct ScratchGuard {
        bytes: u64,
    }

    impl ScratchGuard {
        pub fn new(bytes: u64) -> Self {
            on_alloc(bytes);
            ScratchGuard { bytes }
        }

        pub fn for_f64(len: usize) -> Self {
            Self::new(len as u64 * 8)
        }
    }

    impl Drop for ScratchGuard {
        fn drop(&mut self) {
            on_free(self.bytes);
        }
    }
}

/// Dense row-major matrix of `f64`.
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let data = vec![0.0; rows * cols];
        probe::on_alloc((rows * cols) as u64 * 8);
        Matrix { rows, cols, data }
    }

    /// Takes ownership of a flat row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match {rows}x{cols}",
            data.len()
        );
        probe::on_alloc((rows * cols) as u64 * 8);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix::from_vec(rows, cols, vec![1.0; rows * cols])
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

    pub fn byte_len(&self) -> u64 {
        (self.rows * self.cols) as u64 * 8
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (m x n) * other (n x p) -> m x p`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `self (m x n) * other^T (p x n) -> m x p`.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transpose_b shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let dot: f64 = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
                out.data[i * other.rows + j] = dot;
            }
        }
        out
    }

    /// `self^T (n x m) * other (n x p) -> m x p`.
    pub fn matmul_transpose_a(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_transpose_a shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &aki) in arow.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aki * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    /// Column sums as a 1 x cols matrix.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copies the first `n` columns into a new `rows x n` matrix.
    pub fn take_cols(&self, n: usize) -> Matrix {
        assert!(n <= self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    /// Copies columns `[start, start + n)` into a new matrix.
    pub fn col_slice(&self, start: usize, n: usize) -> Matrix {
        assert!(start + n <= self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, start + j))
    }

    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Matrix {
        // Box-Muller keeps us off rand_distr for a single use case.
        let mut m = Matrix::zeros(rows, cols);
        for v in &mut m.data {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            *v = std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        m
    }

    pub fn random_uniform(
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
        rng: &mut impl rand::Rng,
    ) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in &mut m.data {
            *v = lo + (hi - lo) * rng.random::<f64>();
        }
        m
    }
}

impl Clone for Matrix {
    fn clone(&self) -> Self {
        Matrix::from_vec(self.rows, self.cols, self.data.clone())
    }
}

impl Drop for Matrix {
    fn drop(&mut self) {
        probe::on_free(self.byte_len());
    }
}

impl PartialEq for Matrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Full buffers are unreadable in assertion output; show shape and a corner.
        write!(f, "Matrix({}x{})[", self.rows, self.cols)?;
        for i in 0..self.rows.min(3) {
            let row = self.row(i);
            write!(f, "{:?}", &row[..row.len().min(4)])?;
            if i + 1 < self.rows.min(3) {
                write!(f, ", ")?;
            }
        }
        if self.rows > 3 || self.cols > 4 {
            write!(f, ", ..")?;
        }
        write!(f, "]")
    }
}
