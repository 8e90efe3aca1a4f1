//! Ridge regression, the two multi-output strategies and the output
//! post-processing that turns raw regressor outputs into valid labels.

use serde::{Deserialize, Serialize};

use crate::error::NumericsError;
use crate::labels::{d_to_b, Distribution4, RiskClass};
use crate::metrics::multioutput_regression_report;
use crate::numerics::{
    dot, fit_pca, fit_pca_variance, pca_transform, Cholesky, Matrix, PcaModel, Standardizer,
};

pub const MODEL_FORMAT: &str = "riskpipe-model/1";
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Linear model `x·weights + intercept` with an L2 penalty of `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

/// Ridge normal equations on centered data, factored once so several
/// targets can share the solve.
struct RidgeSystem {
    x_mean: Vec<f64>,
    /// Centered columns that carry variance; constant columns get weight 0.
    active: Vec<usize>,
    centered: Matrix,
    factor: Cholesky,
    /// Solving in sample space (`XXᵀ + λI`) rather than feature space.
    dual: bool,
    lambda: f64,
}

impl RidgeSystem {
    fn new(x: &Matrix, lambda: f64) -> Result<Self, NumericsError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(NumericsError::Dimension(format!(
                "ridge penalty must be finite and non-negative, got {lambda}"
            )));
        }
        if x.rows() == 0 {
            return Err(NumericsError::Dimension("no training rows".into()));
        }
        let x_mean = x.column_means();
        let full = x.sub_row(&x_mean);
        let active: Vec<usize> = (0..x.cols())
            .filter(|&j| {
                let (mut centered_ss, mut raw_ss) = (0.0, 0.0);
                for (r, c) in x.row_iter().zip(full.row_iter()) {
                    centered_ss += c[j] * c[j];
                    raw_ss += r[j] * r[j];
                }
                centered_ss > 1e-24 * raw_ss
            })
            .collect();
        let centered = if active.len() == x.cols() {
            full
        } else {
            let rows: Vec<Vec<f64>> = full
                .row_iter()
                .map(|r| active.iter().map(|&j| r[j]).collect())
                .collect();
            Matrix::new(x.rows(), active.len(), rows.concat())?
        };
        let dual = centered.cols() > centered.rows() && lambda > 0.0;
        let mut system = if dual {
            centered.outer_gram()
        } else {
            centered.gram()
        };
        for i in 0..system.rows() {
            system.set(i, i, system.get(i, i) + lambda);
        }
        let factor = Cholesky::factor(&system).map_err(|e| match e {
            // report the offending input column
            NumericsError::Singular { pivot } if !dual => NumericsError::Singular {
                pivot: active[pivot],
            },
            other => other,
        })?;
        Ok(RidgeSystem {
            x_mean,
            active,
            centered,
            factor,
            dual,
            lambda,
        })
    }

    fn fit(&self, y: &[f64]) -> Result<RidgeModel, NumericsError> {
        if y.len() != self.centered.rows() {
            return Err(NumericsError::Dimension(format!(
                "{} targets for {} rows",
                y.len(),
                self.centered.rows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let reduced = if self.centered.cols() == 0 {
            Vec::new()
        } else if self.dual {
            let alpha = self.factor.solve(&yc)?;
            self.centered.tr_mat_vec(&alpha)?
        } else {
            let rhs = self.centered.tr_mat_vec(&yc)?;
            let mut w = self.factor.solve(&rhs)?;
            // one refinement step against the explicit system
            let xw = self.centered.mat_vec(&w)?;
            let xtxw = self.centered.tr_mat_vec(&xw)?;
            let residual: Vec<f64> = rhs
                .iter()
                .zip(&xtxw)
                .zip(&w)
                .map(|((r, a), wi)| r - a - self.lambda * wi)
                .collect();
            let c = self.factor.solve(&residual)?;
            w.iter_mut().zip(&c).for_each(|(wi, ci)| *wi += ci);
            w
        };
        let mut weights = vec![0.0; self.x_mean.len()];
        for (&j, w) in self.active.iter().zip(reduced) {
            weights[j] = w;
        }
        Ok(RidgeModel {
            intercept: y_mean - dot(&self.x_mean, &weights),
            weights,
            lambda: self.lambda,
        })
    }
}

/// Minimum-norm least squares on centered data (pseudo-inverse solution).
fn fit_min_norm(x: &Matrix, y: &[f64]) -> Result<RidgeModel, NumericsError> {
    let x_mean = x.column_means();
    let centered = x.sub_row(&x_mean).to_nalgebra();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = nalgebra::DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let svd = centered.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * x.rows().max(x.cols()) as f64;
    let w = svd
        .solve(&yc, tol)
        .map_err(|e| NumericsError::Dimension(e.to_string()))?;
    let weights: Vec<f64> = w.iter().copied().collect();
    Ok(RidgeModel {
        intercept: y_mean - dot(&x_mean, &weights),
        weights,
        lambda: 0.0,
    })
}

/// Closed-form ridge fit with an unpenalized intercept.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel, NumericsError> {
    RidgeSystem::new(x, lambda)?.fit(y)
}

pub fn predict_ridge(m: &RidgeModel, x: &Matrix) -> Result<Vec<f64>, NumericsError> {
    if x.cols() != m.input_dim() {
        return Err(NumericsError::Dimension(format!(
            "model expects {} features, got {}",
            m.input_dim(),
            x.cols()
        )));
    }
    Ok(x.row_iter().map(|r| m.predict_row(r)).collect())
}

pub fn clip01(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDistribution {
    pub dist: Distribution4,
    /// No positive mass survived clipping; `dist` is uniform.
    pub degenerate: bool,
}

/// Clips negative outputs to zero, then rescales to sum to one.
pub fn normalize_dist(v: [f64; 4]) -> NormalizedDistribution {
    let clipped = v.map(|x| if x.is_nan() { 0.0 } else { x.max(0.0) });
    let sum: f64 = clipped.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return NormalizedDistribution {
            dist: Distribution4::uniform(),
            degenerate: true,
        };
    }
    let mut p = clipped.map(|x| x / sum);
    // fold rounding error into the largest entry so the sum is 1 to ~1 ulp
    let drift = 1.0 - p.iter().sum::<f64>();
    let top = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    p[top] = (p[top] + drift).clamp(0.0, 1.0);
    NormalizedDistribution {
        dist: Distribution4::new(p).expect("clipped and rescaled"),
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Independent,
    Chain,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" | "ind" => Ok(Strategy::Independent),
            "chain" => Ok(Strategy::Chain),
            other => Err(format!("unknown strategy {other:?} (expected independent|chain)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Independent => "independent",
            Strategy::Chain => "chain",
        })
    }
}

/// Optional dimensionality reduction of the base features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PcaSpec {
    #[default]
    None,
    Components {
        k: usize,
    },
    Variance {
        target: f64,
    },
}

impl std::fmt::Display for PcaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PcaSpec::None => f.write_str("none"),
            PcaSpec::Components { k } => write!(f, "k={k}"),
            PcaSpec::Variance { target } => write!(f, "var={target}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputConfig {
    pub lambda: f64,
    pub strategy: Strategy,
    /// Fit order of the per-class regressors (matters for chains only).
    pub order: [RiskClass; 4],
    pub pca: PcaSpec,
    pub standardize: bool,
}

impl Default for MultiOutputConfig {
    fn default() -> Self {
        MultiOutputConfig {
            lambda: DEFAULT_LAMBDA,
            strategy: Strategy::Chain,
            order: RiskClass::CHAIN_ORDER,
            pca: PcaSpec::None,
            standardize: false,
        }
    }
}

/// Base-feature transform shared by the multi-output and simple models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureTransform {
    pub base_dim: usize,
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
}

impl FeatureTransform {
    fn fit(x: &Matrix, pca: PcaSpec, standardize: bool) -> Result<(Self, Option<bool>), NumericsError> {
        let standardizer = standardize.then(|| Standardizer::fit(x));
        let scaled = match &standardizer {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        let (pca, reached) = match pca {
            PcaSpec::None => (None, None),
            PcaSpec::Components { k } => (Some(fit_pca(&scaled, k)?), None),
            PcaSpec::Variance { target } => {
                let (m, reached) = fit_pca_variance(&scaled, target)?;
                (Some(m), Some(reached))
            }
        };
        Ok((
            FeatureTransform {
                base_dim: x.cols(),
                standardizer,
                pca,
            },
            reached,
        ))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        if x.cols() != self.base_dim {
            return Err(NumericsError::Dimension(format!(
                "model expects {} features, got {}",
                self.base_dim,
                x.cols()
            )));
        }
        let scaled = match &self.standardizer {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        match &self.pca {
            Some(p) => pca_transform(p, &scaled),
            None => Ok(scaled),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.base_dim, PcaModel::n_components)
    }
}

/// Four ridge regressors mapping an embedding to a class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputModel {
    pub strategy: Strategy,
    pub order: [RiskClass; 4],
    pub lambda: f64,
    pub features: FeatureTransform,
    /// Requested cumulative-variance target when PCA was sized by variance.
    pub pca_variance_target: Option<f64>,
    /// Selected number of PCA components, if any.
    pub pca_components: Option<usize>,
    /// One model per entry of `order`.
    pub per_target: Vec<RidgeModel>,
}

pub fn fit_multi(x: &Matrix, y: &Matrix, config: &MultiOutputConfig) -> Result<MultiOutputModel, NumericsError> {
    if y.cols() != 4 || y.rows() != x.rows() {
        return Err(NumericsError::Dimension(format!(
            "targets must be {}x4, got {}x{}",
            x.rows(),
            y.rows(),
            y.cols()
        )));
    }
    let mut seen = [false; 4];
    for c in config.order {
        seen[c.index()] = true;
    }
    if seen.contains(&false) {
        return Err(NumericsError::Dimension(
            "target order must be a permutation of the four classes".into(),
        ));
    }

    let (features, _) = FeatureTransform::fit(x, config.pca, config.standardize)?;
    let base = features.apply(x)?;
    let per_target = match config.strategy {
        Strategy::Independent => {
            let system = RidgeSystem::new(&base, config.lambda)?;
            config
                .order
                .iter()
                .map(|c| system.fit(&y.column(c.index())))
                .collect::<Result<Vec<_>, _>>()?
        }
        Strategy::Chain => {
            let mut inputs = base;
            let mut models = Vec::with_capacity(4);
            for (i, c) in config.order.iter().enumerate() {
                let target = y.column(c.index());
                let model = match fit_ridge(&inputs, &target, config.lambda) {
                    // appended predictions lie in the span of the inputs, so
                    // an unpenalized chain step is rank deficient by design
                    Err(NumericsError::Singular { .. }) if i > 0 && config.lambda == 0.0 => {
                        fit_min_norm(&inputs, &target)?
                    }
                    other => other?,
                };
                if i + 1 < config.order.len() {
                    let preds = predict_ridge(&model, &inputs)?;
                    inputs = inputs.with_column(&preds);
                }
                models.push(model);
            }
            models
        }
    };

    Ok(MultiOutputModel {
        strategy: config.strategy,
        order: config.order,
        lambda: config.lambda,
        pca_variance_target: match config.pca {
            PcaSpec::Variance { target } => Some(target),
            _ => None,
        },
        pca_components: features.pca.as_ref().map(PcaModel::n_components),
        features,
        per_target,
    })
}

impl MultiOutputModel {
    pub fn input_dim(&self) -> usize {
        self.features.base_dim
    }

    /// Raw per-class outputs in canonical class order.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<[f64; 4]>, NumericsError> {
        let base = self.features.apply(x)?;
        let mut out = vec![[0.0; 4]; x.rows()];
        match self.strategy {
            Strategy::Independent => {
                for (model, class) in self.per_target.iter().zip(self.order) {
                    for (row, p) in out.iter_mut().zip(predict_ridge(model, &base)?) {
                        row[class.index()] = p;
                    }
                }
            }
            Strategy::Chain => {
                let mut inputs = base;
                for (i, (model, class)) in self.per_target.iter().zip(self.order).enumerate() {
                    let preds = predict_ridge(model, &inputs)?;
                    for (row, &p) in out.iter_mut().zip(&preds) {
                        row[class.index()] = p;
                    }
                    if i + 1 < self.per_target.len() {
                        inputs = inputs.with_column(&preds);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn predict_normalized(&self, x: &Matrix) -> Result<Vec<NormalizedDistribution>, NumericsError> {
        Ok(self.predict_raw(x)?.into_iter().map(normalize_dist).collect())
    }
}

pub fn predict_multi(m: &MultiOutputModel, x: &Matrix) -> Result<Vec<Distribution4>, NumericsError> {
    Ok(m.predict_normalized(x)?.into_iter().map(|n| n.dist).collect())
}

/// Single ridge regressor on the task-2b probability, clipped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleRidgeModel {
    pub features: FeatureTransform,
    pub ridge: RidgeModel,
}

impl SimpleRidgeModel {
    pub fn fit(x: &Matrix, b: &[f64], lambda: f64, pca: PcaSpec, standardize: bool) -> Result<Self, NumericsError> {
        let (features, _) = FeatureTransform::fit(x, pca, standardize)?;
        let ridge = fit_ridge(&features.apply(x)?, b, lambda)?;
        Ok(SimpleRidgeModel { features, ridge })
    }

    pub fn input_dim(&self) -> usize {
        self.features.base_dim
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, NumericsError> {
        Ok(clip01(&predict_ridge(&self.ridge, &self.features.apply(x)?)?))
    }
}

/// Either trained model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskModel {
    Multi(MultiOutputModel),
    Simple(SimpleRidgeModel),
}

/// One scored subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskScore {
    /// Probability of suffering (task 2b scale).
    pub b: f64,
    /// Full distribution, for multi-output models.
    pub dist: Option<Distribution4>,
}

impl RiskModel {
    pub fn input_dim(&self) -> usize {
        match self {
            RiskModel::Multi(m) => m.input_dim(),
            RiskModel::Simple(m) => m.input_dim(),
        }
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<RiskScore>, NumericsError> {
        match self {
            RiskModel::Multi(m) => Ok(predict_multi(m, x)?
                .into_iter()
                .map(|d| RiskScore {
                    b: d_to_b(&d),
                    dist: Some(d),
                })
                .collect()),
            RiskModel::Simple(m) => Ok(m
                .predict(x)?
                .into_iter()
                .map(|b| RiskScore { b, dist: None })
                .collect()),
        }
    }
}

/// Versioned on-disk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: String,
    pub config_hash: String,
    pub model: RiskModel,
}

impl ModelDocument {
    pub fn new(model: RiskModel, config_hash: impl Into<String>) -> Self {
        ModelDocument {
            version: MODEL_FORMAT.to_string(),
            config_hash: config_hash.into(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models always serialize")
    }

    pub fn from_json(raw: &str) -> Result<Self, String> {
        let doc: ModelDocument = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        if doc.version != MODEL_FORMAT {
            return Err(format!(
                "unsupported model version {:?}, expected {MODEL_FORMAT:?}",
                doc.version
            ));
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lambda: f64,
    pub strategy: Strategy,
    pub pca: PcaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub config: GridConfig,
    /// Validation mean RMSE over the four classes; `None` if the fit failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

/// Candidate axes of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub pcas: Vec<PcaSpec>,
    pub strategies: Vec<Strategy>,
    pub order: [RiskClass; 4],
    pub standardize: bool,
}

/// Trains every configuration on the training split and ranks them by
/// validation mean RMSE, best first; failed configurations sort last.
pub fn grid_search(
    train_x: &Matrix,
    train_y: &Matrix,
    val_x: &Matrix,
    val_y: &[Distribution4],
    grid: &Grid,
) -> Vec<GridResult> {
    let mut results = Vec::new();
    for &strategy in &grid.strategies {
        for &pca in &grid.pcas {
            for &lambda in &grid.lambdas {
                let config = GridConfig {
                    lambda,
                    strategy,
                    pca,
                };
                let cfg = MultiOutputConfig {
                    lambda,
                    strategy,
                    order: grid.order,
                    pca,
                    standardize: grid.standardize,
                };
                let outcome = fit_multi(train_x, train_y, &cfg)
                    .and_then(|m| predict_multi(&m, val_x))
                    .map_err(|e| e.to_string())
                    .and_then(|pred| {
                        multioutput_regression_report(&pred, val_y)
                            .map(|r| r.rmse_mean)
                            .map_err(|e| e.to_string())
                    });
                results.push(match outcome {
                    Ok(score) => GridResult {
                        config,
                        score: Some(score),
                        error: None,
                    },
                    Err(e) => GridResult {
                        config,
                        score: None,
                        error: Some(e),
                    },
                });
            }
        }
    }
    // stable: equal scores keep enumeration order
    results.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    results
}

/// Stacks distributions as an n×4 target matrix in canonical order.
pub fn distribution_matrix(rows: &[Distribution4]) -> Matrix {
    let data: Vec<[f64; 4]> = rows.iter().map(|d| *d.probs()).collect();
    Matrix::from_rows(&data).unwrap_or_else(|_| Matrix::zeros(0, 4))
}
