//! Principal component analysis by eigendecomposition of the sample
//! covariance of a standardized matrix, plus the PC1/PC2 loadings report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{symmetric_eigen, DenseMatrix};
use crate::scalar::{total_cmp, Scalar};

/// Loadings below this magnitude mark a pair classification as weak.
pub const WEAK_LOADING: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel<T> {
    /// Descending, non-negative.
    pub eigenvalues: Vec<T>,
    /// One unit-norm component per column.
    pub components: DenseMatrix<T>,
    pub explained_variance_ratio: Vec<T>,
    pub column_names: Vec<String>,
}

/// `XᵀX / (m - 1)`. Assumes the columns are already centred.
pub fn covariance<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<DenseMatrix<T>> {
    let (m, n) = (matrix.rows(), matrix.cols());
    if m < 2 {
        return Err(Error::TooFewRows { needed: 2, found: m });
    }
    let denom = T::from_usize_lossy(m - 1);
    let mut cov = DenseMatrix::zeros(n, n);
    for row in matrix.values.iter_rows() {
        for a in 0..n {
            let xa = row[a];
            for b in a..n {
                cov[(a, b)] = cov[(a, b)] + xa * row[b];
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

pub fn fit_pca<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<PcaModel<T>> {
    let n = matrix.cols();
    if n == 0 {
        return Err(Error::InvalidK { k: 0, n: 0 });
    }
    let cov = covariance(matrix)?;
    let eig = symmetric_eigen(&cov)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| total_cmp(&eig.values[b], &eig.values[a]).then(a.cmp(&b)));

    let trace = (0..n).map(|i| cov[(i, i)]).fold(T::zero(), |a, b| a + b);
    let floor = -T::from_f64_lossy(1e-8) * trace.abs().max(T::one());
    let mut eigenvalues = Vec::with_capacity(n);
    let mut components = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.values[src];
        if lambda < floor || !lambda.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "covariance eigenvalue {lambda} is negative"
            )));
        }
        eigenvalues.push(lambda.max(T::zero()));

        let mut v = eig.vectors.column(src);
        // largest-magnitude entry positive; magnitudes within sqrt(epsilon)
        // of the largest tie, and ties go to the lowest index
        let largest = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let cutoff = largest * (T::one() - T::epsilon().sqrt());
        let pivot = v.iter().position(|x| x.abs() >= cutoff).unwrap_or(0);
        if v[pivot] < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.into_iter().enumerate() {
            components[(i, dst)] = x;
        }
    }

    let total = eigenvalues.iter().fold(T::zero(), |a, &b| a + b);
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|&l| if total > T::zero() { l / total } else { T::zero() })
        .collect();

    Ok(PcaModel {
        eigenvalues,
        components,
        explained_variance_ratio,
        column_names: matrix.column_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcSelection {
    Manual(usize),
    ScreeGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeChoice<T> {
    pub k: usize,
    /// Eigenvalue per component index, for plotting.
    pub curve: Vec<T>,
}

/// Manual count, or the count before the largest eigenvalue drop.
pub fn select_pc_count<T: Scalar>(model: &PcaModel<T>, method: PcSelection) -> Result<ScreeChoice<T>> {
    let n = model.eigenvalues.len();
    let curve = model.eigenvalues.clone();
    let k = match method {
        PcSelection::Manual(k) => {
            if k == 0 || k > n {
                return Err(Error::InvalidK { k, n });
            }
            k
        }
        PcSelection::ScreeGap => {
            let mut best = 1;
            let mut best_gap = None;
            for i in 1..n {
                let gap = curve[i - 1] - curve[i];
                if best_gap.map_or(true, |g| gap > g) {
                    best_gap = Some(gap);
                    best = i;
                }
            }
            best
        }
    };
    Ok(ScreeChoice { k, curve })
}

impl<T: Scalar> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Scores on the first `k` components; column `j` is `X · v_j`.
    pub fn project(&self, matrix: &FeatureMatrix<T>, k: usize) -> Result<FeatureMatrix<T>> {
        let n = self.n_components();
        if matrix.column_names != self.column_names {
            return Err(Error::SchemaMismatch);
        }
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        let scores = matrix.values.matmul(&self.components.leading_columns(k))?;
        let names = (1..=k).map(|j| format!("PC{j}")).collect();
        FeatureMatrix::new(scores, names, matrix.timestamps.clone())
    }

    /// Maps scores back into standardized feature space.
    pub fn reconstruct(&self, scores: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let k = scores.cols();
        if k == 0 || k > self.n_components() {
            return Err(Error::InvalidK {
                k,
                n: self.n_components(),
            });
        }
        let back = scores
            .values
            .matmul(&self.components.leading_columns(k).transpose())?;
        FeatureMatrix::new(back, self.column_names.clone(), scores.timestamps.clone())
    }

    fn weight(&self, channel: usize, pc: usize) -> T {
        if pc < self.n_components() {
            self.components[(channel, pc)]
        } else {
            T::zero()
        }
    }

    pub fn loadings(&self) -> LoadingsReport {
        LoadingsReport::from_weights(
            self.column_names
                .iter()
                .enumerate()
                .map(|(i, name)| ChannelLoading {
                    channel: name.clone(),
                    pc1: self.weight(i, 0).to_f64_lossy(),
                    pc2: self.weight(i, 1).to_f64_lossy(),
                })
                .collect(),
        )
    }
}

pub fn project<T: Scalar>(model: &PcaModel<T>, matrix: &FeatureMatrix<T>, k: usize) -> Result<FeatureMatrix<T>> {
    model.project(matrix, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationClass {
    Direct,
    Inverse,
    #[serde(rename = "none")]
    Uncorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLoading {
    pub channel: String,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub a: String,
    pub b: String,
    pub class: CorrelationClass,
    /// Some involved loading has magnitude below [`WEAK_LOADING`].
    pub weak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingsReport {
    pub loadings: Vec<ChannelLoading>,
}

fn positive(w: f64) -> bool {
    w >= 0.0
}

impl LoadingsReport {
    pub fn from_weights(loadings: Vec<ChannelLoading>) -> Self {
        Self { loadings }
    }

    fn get(&self, channel: &str) -> Result<&ChannelLoading> {
        self.loadings
            .iter()
            .find(|l| l.channel == channel)
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))
    }

    /// Same sign on both PCs: direct; opposite on exactly one: inverse;
    /// opposite on both: none. Zero counts as positive.
    pub fn classify(&self, a: &str, b: &str) -> Result<PairCorrelation> {
        let (la, lb) = (self.get(a)?, self.get(b)?);
        let same1 = positive(la.pc1) == positive(lb.pc1);
        let same2 = positive(la.pc2) == positive(lb.pc2);
        let class = match (same1, same2) {
            (true, true) => CorrelationClass::Direct,
            (false, false) => CorrelationClass::Uncorrelated,
            _ => CorrelationClass::Inverse,
        };
        let weak = [la.pc1, la.pc2, lb.pc1, lb.pc2]
            .iter()
            .any(|w| w.abs() < WEAK_LOADING);
        Ok(PairCorrelation {
            a: a.to_string(),
            b: b.to_string(),
            class,
            weak,
        })
    }

    /// Every unordered channel pair, in column order.
    pub fn all_pairs(&self) -> Vec<PairCorrelation> {
        let mut out = Vec::new();
        for (i, a) in self.loadings.iter().enumerate() {
            for b in &self.loadings[i + 1..] {
                out.push(self.classify(&a.channel, &b.channel).expect("channels present"));
            }
        }
        out
    }
}

pub fn correlation_class<T: Scalar>(model: &PcaModel<T>, a: &str, b: &str) -> Result<PairCorrelation> {
    model.loadings().classify(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessing::standardize;

    #[test]
    fn covariance_hand_computed() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let c = covariance(&x).unwrap();
        assert_eq!(c.as_slice(), &[2.0, -2.0, -2.0, 2.0]);
        let one = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(covariance(&one), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn identical_columns_are_perfectly_correlated() {
        let raw = FeatureMatrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]]).unwrap();
        let (x, _) = standardize(&raw).unwrap();
        let c = covariance(&x).unwrap();
        for v in c.as_slice() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let model = fit_pca(&x).unwrap();
        assert!((model.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!(model.eigenvalues[1].abs() < 1e-12);
        let h = 1.0 / 2f64.sqrt();
        assert!((model.components[(0, 0)] - h).abs() < 1e-12);
        assert!((model.components[(1, 0)] - h).abs() < 1e-12);

        // k = 1 keeps everything
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let z = model.project(&x, 1).unwrap();
        let back = model.reconstruct(&z).unwrap();
        assert!(back.values.max_abs_diff(&x.values) < 1e-12);
    }

    #[test]
    fn scree_gap_and_manual() {
        let model = PcaModel {
            eigenvalues: vec![5.0, 4.8, 0.1, 0.05],
            components: DenseMatrix::identity(4),
            explained_variance_ratio: vec![0.0; 4],
            column_names: (0..4).map(|i| format!("x{i}")).collect(),
        };
        assert_eq!(select_pc_count(&model, PcSelection::ScreeGap).unwrap().k, 2);
        assert_eq!(select_pc_count(&model, PcSelection::Manual(3)).unwrap().k, 3);
        assert!(matches!(
            select_pc_count(&model, PcSelection::Manual(5)),
            Err(Error::InvalidK { k: 5, n: 4 })
        ));
        assert!(select_pc_count(&model, PcSelection::Manual(0)).is_err());
    }

    #[test]
    fn project_checks_schema_and_k() {
        let raw = FeatureMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 1.0], vec![4.0, 2.0]]).unwrap();
        let (x, _) = standardize(&raw).unwrap();
        let model = fit_pca(&x).unwrap();
        let mut renamed = x.clone();
        renamed.column_names[0] = "other".into();
        assert!(matches!(model.project(&renamed, 1), Err(Error::SchemaMismatch)));
        assert!(matches!(model.project(&x, 3), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn equal_magnitude_entries_keep_their_sign_under_row_order() {
        // two standardized columns always give (1, ±1)/√2
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                vec![x, 0.3 * x + (i as f64 * 1.7).cos()]
            })
            .collect();
        let mut reversed = rows.clone();
        reversed.reverse();
        let fit = |r: &[Vec<f64>]| fit_pca(&standardize(&FeatureMatrix::from_rows(r).unwrap()).unwrap().0).unwrap();
        let (a, b) = (fit(&rows), fit(&reversed));
        assert!(a.components.max_abs_diff(&b.components) < 1e-12);
        assert!(a.components[(0, 0)] > 0.0 && a.components[(0, 1)] > 0.0);
    }

    #[test]
    fn correlation_rule_sign_table() {
        let rep = LoadingsReport::from_weights(vec![
            ChannelLoading { channel: "a".into(), pc1: 0.5, pc2: 0.5 },
            ChannelLoading { channel: "b".into(), pc1: 0.0, pc2: 0.3 },
            ChannelLoading { channel: "c".into(), pc1: -0.5, pc2: -0.3 },
        ]);
        let ab = rep.classify("a", "b").unwrap();
        assert_eq!(ab.class, CorrelationClass::Direct);
        assert!(ab.weak);
        assert_eq!(rep.classify("a", "c").unwrap().class, CorrelationClass::Uncorrelated);
        assert!(!rep.classify("a", "c").unwrap().weak);
        assert!(matches!(rep.classify("a", "zz"), Err(Error::UnknownChannel(_))));
        assert_eq!(rep.all_pairs().len(), 3);
    }
}
