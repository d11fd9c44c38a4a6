//! Inner loops shared by the log-domain Sinkhorn and barycenter solvers.

/// `log sum_j exp(row[j] + v[j])`, skipping `-inf` terms.
#[inline]
pub(crate) fn log_sum_exp_shifted(row: &[f64], v: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (a, b) in row.iter().zip(v) {
        let s = a + b;
        if s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut sum = 0.0;
    for (a, b) in row.iter().zip(v) {
        sum += (a + b - max).exp();
    }
    max + sum.ln()
}

/// Dense row-major square-or-rectangular matrix kept together with its
/// transpose so that both products are contiguous row dots.
#[derive(Debug, Clone)]
pub(crate) struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
    data_t: Vec<f64>,
}

impl RowMajor {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        let mut data_t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data_t[j * rows + i] = data[i * cols + j];
            }
        }
        Self {
            rows,
            cols,
            data,
            data_t,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row `j` of the transpose, i.e. column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data_t[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}
