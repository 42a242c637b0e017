//! Neural prediction of system-optimal costs and the resulting border tolls.
//!
//! One regression network per ordered border pair learns the generalised
//! cost `C_IH` from the user-equilibrium state. Fed with system-optimum
//! features it predicts `C*_IH`; the toll is the clamped gap `C - C*`.

pub mod features;
pub mod mlp;
pub mod scaler;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::DemandProfile;
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, RegionId};
use crate::plant::{NetworkState, Trajectory};
use crate::qdue::{self, ChoiceSpec, CostMatrix, PriceMatrix, PriceProvider, QdueRun, RegionMatrix};
use crate::rng;

pub use features::{build_features, feature_len, feature_names};
pub use mlp::{Adam, Layer, Mlp};
pub use scaler::MinMaxScaler;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Tail fraction of the training set held out for validation.
    pub validation_split: f64,
    /// Fraction of all samples reserved for testing.
    pub test_fraction: f64,
    pub initial_lr: f64,
    pub decay_steps: f64,
    pub decay_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            validation_split: 0.2,
            test_fraction: 0.3,
            initial_lr: 0.01,
            decay_steps: 10000.0,
            decay_rate: 0.9,
            hidden: vec![50, 50],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{name}"), "must lie in (0, 1)"))
            }
        };
        open_unit("validation_split", self.validation_split)?;
        open_unit("test_fraction", self.test_fraction)?;
        if self.batch_size == 0 {
            return Err(Error::config(format!("{path}.batch_size"), "must be >= 1"));
        }
        for (name, v) in [
            ("initial_lr", self.initial_lr),
            ("decay_steps", self.decay_steps),
            ("decay_rate", self.decay_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{path}.{name}"), "must be positive"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(format!("{path}.hidden"), "needs at least one non-empty layer"));
        }
        Ok(())
    }

    /// Continuous exponential decay.
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.initial_lr * self.decay_rate.powf(step as f64 / self.decay_steps)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Mean absolute error on the fitted part after each epoch.
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// Samples drawn from a user-equilibrium run.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub pairs: Vec<(RegionId, RegionId)>,
    pub features: Vec<Vec<f64>>,
    /// One row per sample, one column per pair.
    pub targets: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn column(&self, rows: &[usize], pair: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            rows.iter().map(|&r| self.features[r].clone()).collect(),
            rows.iter().map(|&r| self.targets[r][pair]).collect(),
        )
    }
}

const MIN_SAMPLES: usize = 10;

/// One sample per plant step, shuffled and split into train and test sets.
pub fn build_dataset(spec: &NetworkSpec, run: &QdueRun, seed: u64, test_fraction: f64) -> Result<Dataset> {
    let steps = &run.trajectory.steps;
    if steps.len() < MIN_SAMPLES {
        return Err(Error::Numerical(format!(
            "need at least {MIN_SAMPLES} samples, the run has {}",
            steps.len()
        )));
    }
    let features: Vec<Vec<f64>> = steps
        .iter()
        .map(|s| build_features(spec, &s.state, &s.split, &s.flows))
        .collect();
    let targets: Vec<Vec<f64>> = run
        .costs
        .iter()
        .map(|c| spec.border_pairs().iter().map(|&(i, h)| c.base.get(i, h)).collect())
        .collect();
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::DATASET_STREAM));
    let n_train = ((1.0 - test_fraction) * order.len() as f64).round() as usize;
    let test = order.split_off(n_train);
    Ok(Dataset {
        feature_names: feature_names(spec),
        pairs: spec.border_pairs().to_vec(),
        features,
        targets,
        train: order,
        test,
    })
}

/// Network and input scaling for one border pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub format_version: u32,
    pub origin: usize,
    pub via: usize,
    pub scaler: MinMaxScaler,
    pub mlp: Mlp,
    pub history: LossHistory,
    pub test_mae: f64,
}

impl PairModel {
    pub fn pair(&self) -> (RegionId, RegionId) {
        (RegionId(self.origin), RegionId(self.via))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.mlp.forward(&self.scaler.transform(x)?)
    }
}

/// Fits one network; `rng_stream` selects its random stream under `seed`.
pub fn train_model(
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &TrainConfig,
    seed: u64,
    rng_stream: u64,
) -> Result<(MinMaxScaler, Mlp, LossHistory)> {
    let scaler = MinMaxScaler::fit(xs)?;
    let scaled: Vec<Vec<f64>> = xs.iter().map(|x| scaler.transform(x)).collect::<Result<_>>()?;
    let split_at = ((1.0 - config.validation_split) * scaled.len() as f64) as usize;
    if split_at == 0 || split_at == scaled.len() {
        return Err(Error::Numerical("validation split leaves an empty partition".into()));
    }
    let (fit_x, val_x) = scaled.split_at(split_at);
    let (fit_y, val_y) = ys.split_at(split_at);

    let mut rng = rng::stream(seed, rng_stream);
    let mut sizes = vec![scaler.width()];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mut mlp = Mlp::new(&sizes, &mut rng)?;
    let mut params = mlp.params();
    let mut adam = Adam::new(params.len());
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..fit_x.len()).collect();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&r| fit_x[r].as_slice()).collect();
            let by: Vec<f64> = batch.iter().map(|&r| fit_y[r]).collect();
            let (_, grad) = mlp.loss_and_gradient(&bx, &by)?;
            adam.step(&mut params, &grad, config.learning_rate(step));
            mlp.set_params(&params)?;
            step += 1;
        }
        let train = mlp.mae(fit_x, fit_y)?;
        let validation = mlp.mae(val_x, val_y)?;
        history.train.push(train);
        history.validation.push(validation);
        if !(train.is_finite() && validation.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, history });
        }
    }
    Ok((scaler, mlp, history))
}

/// One trained model per ordered border pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub models: Vec<PairModel>,
}

impl ModelSet {
    /// Trains every pair concurrently; each pair owns a random stream, so the result is order-independent.
    pub fn train(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate("training")?;
        let models = (0..dataset.pairs.len())
            .into_par_iter()
            .map(|p| {
                let (xs, ys) = dataset.column(&dataset.train, p);
                let (scaler, mlp, history) = train_model(&xs, &ys, config, seed, rng::MODEL_STREAM_BASE + p as u64)?;
                let (tx, ty) = dataset.column(&dataset.test, p);
                let mut model = PairModel {
                    format_version: MODEL_FORMAT_VERSION,
                    origin: dataset.pairs[p].0.index(),
                    via: dataset.pairs[p].1.index(),
                    scaler,
                    mlp,
                    history,
                    test_mae: f64::NAN,
                };
                let preds: Vec<f64> = tx.iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
                model.test_mae = crate::metrics::mean_absolute_error(&preds, &ty)?;
                Ok(model)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }

    pub fn get(&self, i: RegionId, h: RegionId) -> Option<&PairModel> {
        self.models.iter().find(|m| m.pair() == (i, h))
    }

    /// Input range seen in training; identical across pairs.
    pub fn scaler(&self) -> Option<&MinMaxScaler> {
        self.models.first().map(|m| &m.scaler)
    }
}

/// Source of predicted system-optimal costs.
pub trait CostPredictor: Sync {
    /// `observed` is the current untolled cost, available to predictors that need a reference.
    fn predict(&self, spec: &NetworkSpec, features: &[f64], observed: &CostMatrix) -> Result<CostMatrix>;
}

impl CostPredictor for ModelSet {
    fn predict(&self, spec: &NetworkSpec, features: &[f64], _: &CostMatrix) -> Result<CostMatrix> {
        let mut m = RegionMatrix::filled(spec.k(), f64::INFINITY);
        for &(i, h) in spec.border_pairs() {
            let model = self
                .get(i, h)
                .ok_or_else(|| Error::config("models", format!("no model for pair ({i}, {h})")))?;
            m.set(i, h, model.predict(features)?);
        }
        Ok(CostMatrix(m))
    }
}

/// Predicts exactly the observed cost, which yields zero tolls.
pub struct PerfectOracle;

impl CostPredictor for PerfectOracle {
    fn predict(&self, _: &NetworkSpec, _: &[f64], observed: &CostMatrix) -> Result<CostMatrix> {
        Ok(observed.clone())
    }
}

/// `max(0, C - C*)` on border pairs, zero elsewhere.
pub fn price_matrix(spec: &NetworkSpec, c: &CostMatrix, c_star: &CostMatrix) -> Result<PriceMatrix> {
    let mut p = PriceMatrix::zeros(spec.k());
    for &(i, h) in spec.border_pairs() {
        let gap = c.get(i, h) - c_star.get(i, h);
        if gap.is_nan() {
            return Err(Error::Numerical(format!("undefined price for pair ({i}, {h})")));
        }
        p.0.set(i, h, gap.max(0.0));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCycle {
    pub step: usize,
    pub prices: PriceMatrix,
    pub features: Vec<f64>,
}

/// Recomputes tolls at the start of every control cycle from system-optimum features.
pub struct PricingController<'a> {
    predictor: &'a dyn CostPredictor,
    reference: &'a Trajectory,
    n_c: usize,
    current: PriceMatrix,
    pub cycles: Vec<PriceCycle>,
}

impl<'a> PricingController<'a> {
    pub fn new(spec: &NetworkSpec, predictor: &'a dyn CostPredictor, reference: &'a Trajectory, n_c: usize) -> Self {
        Self {
            predictor,
            reference,
            n_c: n_c.max(1),
            current: PriceMatrix::zeros(spec.k()),
            cycles: Vec::new(),
        }
    }
}

impl PriceProvider for PricingController<'_> {
    fn prices(&mut self, spec: &NetworkSpec, state: &NetworkState, base: &CostMatrix) -> Result<Option<PriceMatrix>> {
        if state.step % self.n_c == 0 {
            let s = self
                .reference
                .steps
                .get(state.step)
                .or_else(|| self.reference.steps.last())
                .ok_or_else(|| Error::Numerical("empty system-optimum trajectory".into()))?;
            let features = build_features(spec, &s.state, &s.split, &s.flows);
            let c_star = self.predictor.predict(spec, &features, base)?;
            self.current = price_matrix(spec, base, &c_star)?;
            self.cycles.push(PriceCycle {
                step: state.step,
                prices: self.current.clone(),
                features,
            });
        }
        Ok(Some(self.current.clone()))
    }
}

#[derive(Clone, Debug)]
pub struct PricedRun {
    pub run: QdueRun,
    pub cycles: Vec<PriceCycle>,
}

/// User-equilibrium plant under tolls derived from a system-optimum reference run.
#[allow(clippy::too_many_arguments)]
pub fn run_priced(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    choice: &ChoiceSpec,
    predictor: &dyn CostPredictor,
    reference: &Trajectory,
    n_c: usize,
    horizon: usize,
    step_seconds: f64,
) -> Result<PricedRun> {
    let mut controller = PricingController::new(spec, predictor, reference, n_c);
    let run = qdue::run_qdue(spec, demand, choice, horizon, step_seconds, Some(&mut controller))?;
    Ok(PricedRun {
        run,
        cycles: controller.cycles,
    })
}

/// Mean toll while active and the active share of steps, per border pair.
pub fn average_active_prices(spec: &NetworkSpec, per_step: &[PriceMatrix]) -> Vec<(RegionId, RegionId, f64, f64)> {
    spec.border_pairs()
        .iter()
        .map(|&(i, h)| {
            let active: Vec<f64> = per_step.iter().map(|p| p.get(i, h)).filter(|&v| v > 0.0).collect();
            let mean = if active.is_empty() {
                0.0
            } else {
                active.iter().sum::<f64>() / active.len() as f64
            };
            (i, h, mean, active.len() as f64 / per_step.len().max(1) as f64)
        })
        .collect()
}

/// Mean over every active toll leaving each region; `None` where no toll was ever active.
pub fn regional_average_prices(spec: &NetworkSpec, per_step: &[PriceMatrix]) -> Vec<(RegionId, Option<f64>)> {
    spec.region_ids()
        .map(|i| {
            let active: Vec<f64> = per_step
                .iter()
                .flat_map(|p| spec.topology().neighbors(i).iter().map(move |&h| p.get(i, h)))
                .filter(|&v| v > 0.0)
                .collect();
            let mean = (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64);
            (i, mean)
        })
        .collect()
}

/// Share of prediction inputs that fall inside the training range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub per_feature: Vec<f64>,
    pub overall: f64,
}

pub fn distribution_shift(scaler: &MinMaxScaler, inputs: &[Vec<f64>]) -> ShiftReport {
    let width = scaler.width();
    let mut inside = vec![0usize; width];
    for x in inputs {
        for (j, v) in x.iter().enumerate().take(width) {
            if *v >= scaler.min[j] && *v <= scaler.max[j] {
                inside[j] += 1;
            }
        }
    }
    let n = inputs.len().max(1) as f64;
    let per_feature: Vec<f64> = inside.iter().map(|&c| c as f64 / n).collect();
    let overall = per_feature.iter().sum::<f64>() / width.max(1) as f64;
    ShiftReport { per_feature, overall }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_decays_continuously() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(0), 0.01);
        assert!((c.learning_rate(10_000) - 0.009).abs() < 1e-15);
        assert!(c.learning_rate(5_000) < 0.01 && c.learning_rate(5_000) > 0.009);
    }

    #[test]
    fn linear_target_is_learned() {
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0]).collect();
        let cfg = TrainConfig { hidden: vec![16, 16], ..TrainConfig::default() };
        let (scaler, mlp, history) = train_model(&xs, &ys, &cfg, 5, 1).unwrap();
        assert_eq!(history.train.len(), 100);
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| scaler.transform(x).unwrap()).collect();
        assert!(mlp.mae(&scaled, &ys).unwrap() < 0.05);
    }

    #[test]
    fn zero_epochs_keep_initialisation() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        let ys = vec![1.0; 20];
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (_, mlp, history) = train_model(&xs, &ys, &cfg, 9, 3).unwrap();
        let fresh = Mlp::new(&[2, 50, 50, 1], &mut rng::stream(9, 3)).unwrap();
        assert_eq!(mlp, fresh);
        assert!(history.train.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] + 2.0 * x[1]).collect();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let a = train_model(&xs, &ys, &cfg, 1, 1).unwrap();
        let b = train_model(&xs, &ys, &cfg, 1, 1).unwrap();
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn shift_report_counts_inside_entries() {
        let s = MinMaxScaler::fit(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = distribution_shift(&s, &[vec![0.5, 2.0], vec![0.1, 0.9]]);
        assert_eq!(r.per_feature, vec![1.0, 0.5]);
        assert_eq!(r.overall, 0.75);
    }
}
