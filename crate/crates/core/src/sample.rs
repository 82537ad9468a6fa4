use nalgebra::DMatrix;

/// `n × N` block of draws (one column per observation) plus the metadata
/// needed to regenerate it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    /// Coordinates in rows, observations in columns; row 0 is the benchmark.
    pub data: DMatrix<f64>,
    pub seed: u64,
    pub generator_id: String,
    pub model: String,
}

impl SampleBlock {
    pub fn new(data: DMatrix<f64>, seed: u64, generator_id: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            data,
            seed,
            generator_id: generator_id.into(),
            model: model.into(),
        }
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Observation `k` as a contiguous slice of length `dim()`.
    pub fn observation(&self, k: usize) -> &[f64] {
        let n = self.dim();
        &self.data.as_slice()[k * n..(k + 1) * n]
    }

    /// All values of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Sample mean vector and covariance (denominator `N − 1`).
    pub fn moments(&self) -> (Vec<f64>, DMatrix<f64>) {
        let rows: Vec<usize> = (0..self.len()).collect();
        crate::empirical::mean_and_covariance(self, &rows)
    }
}
