use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesFrame;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use crate::time::Timestamp;

/// Numeric analysis matrix with row -> timestamp and column -> channel maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix<T> {
    pub values: DenseMatrix<T>,
    pub column_names: Vec<String>,
    pub timestamps: Vec<Timestamp>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: DenseMatrix<T>, column_names: Vec<String>, timestamps: Vec<Timestamp>) -> Result<Self> {
        if column_names.len() != values.cols() {
            return Err(Error::ShapeMismatch {
                expected: values.cols(),
                found: column_names.len(),
            });
        }
        if timestamps.len() != values.rows() {
            return Err(Error::ShapeMismatch {
                expected: values.rows(),
                found: timestamps.len(),
            });
        }
        Ok(Self {
            values,
            column_names,
            timestamps,
        })
    }

    /// Unnamed matrix with generated column names `x0, x1, ...` and row
    /// indices as timestamps. Handy for tests and synthetic data.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let values = DenseMatrix::from_rows(rows)?;
        let names = (0..values.cols()).map(|j| format!("x{j}")).collect();
        let ts = (0..values.rows() as i64).collect();
        Self::new(values, names, ts)
    }

    pub fn from_points_1d(points: &[T]) -> Self {
        let rows: Vec<Vec<T>> = points.iter().map(|&p| vec![p]).collect();
        Self::from_rows(&rows).expect("1-column rows")
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn is_finite(&self) -> bool {
        self.values.as_slice().iter().all(|v| v.is_finite())
    }
}

/// Builds the analysis matrix from `channels`, dropping every row with a
/// missing value in any of them.
pub fn build_feature_matrix<T: Scalar>(frame: &TimeSeriesFrame, channels: &[String]) -> Result<FeatureMatrix<T>> {
    let series = channels
        .iter()
        .map(|c| frame.channel(c))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(frame.len() * channels.len());
    let mut timestamps = Vec::new();
    for (i, &ts) in frame.timestamps().iter().enumerate() {
        let row: Option<Vec<f64>> = series.iter().map(|s| s[i]).collect();
        if let Some(row) = row {
            data.extend(row.into_iter().map(T::from_f64_lossy));
            timestamps.push(ts);
        }
    }
    let values = DenseMatrix::from_row_major(timestamps.len(), channels.len(), data)?;
    FeatureMatrix::new(values, channels.to_vec(), timestamps)
}
