//! Experiment runners.
//!
//! Seeds: replication `r` of a run with master seed `s` draws its data from
//! `derive(s, [r, STREAM, ...])` and trains with `derive(s, [r, TRAIN, ...])`.
//! Methods compared within one experiment see the same data streams.

use std::collections::BTreeMap;
use std::path::Path;

use ec2st::baselines::{lc2st_from_logits, mc2st, sc2st_from_probs, FeatureExtractor, PermutationScheme};
use ec2st::data::{split_by_ratio, BatchStream, LabeledSample, Source};
use ec2st::ec2st::{ec2st_run, ec2st_step, Ec2stConfig, Ec2stState, FixedLearner, Learner, MlpLearner, TableClassifier};
use ec2st::eprocess::Verdict;
use ec2st::models::{train, Architecture, TrainConfig};
use ec2st::mslrt::{GaussianScalarStream, GaussianSingleton, MsplitState, RunningMeanGaussian};
use ec2st::seed::{child_rng, derive};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{DataSpec, ExperimentConfig, ExperimentKind, GrowthClassifier, Method};
use crate::{HarnessError, Result};

/// Seed roles.
const STREAM: u64 = 0;
const TRAIN: u64 = 1;
const PERMUTE: u64 = 2;
const ORDER: u64 = 3;
const ROUNDS: u64 = 4;
const LC2ST_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionCurve {
    pub method: String,
    pub sample_sizes: Vec<usize>,
    pub rates: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl RejectionCurve {
    /// Rates `rejections[i] / replications` with binomial standard errors.
    pub fn from_counts(method: impl Into<String>, sample_sizes: Vec<usize>, rejections: &[usize], replications: usize) -> Self {
        let rates: Vec<f64> = rejections.iter().map(|&k| k as f64 / replications as f64).collect();
        let stderr = rates.iter().map(|p| (p * (1.0 - p) / replications as f64).sqrt()).collect();
        RejectionCurve {
            method: method.into(),
            sample_sizes,
            rates,
            stderr,
        }
    }

    pub fn rate_at(&self, sample_size: usize) -> Option<f64> {
        self.sample_sizes.iter().position(|&n| n == sample_size).map(|i| self.rates[i])
    }
}

/// One line of the per-batch log of a sequential run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub size: usize,
    /// Mixture weight (absent for the split likelihood-ratio test).
    pub lambda: Option<f64>,
    pub log_increment: f64,
    pub log_e: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub replication: usize,
    pub seed: u64,
    /// Fixed sample size for baselines, or the variant parameter (batch
    /// size, shuffle index) for sequential runs.
    pub sample_size: Option<usize>,
    pub variant: Option<String>,
    pub batches: Vec<BatchRecord>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub rejected: bool,
    pub rejected_at_batch: Option<usize>,
    pub final_log_e: Option<f64>,
    pub samples_consumed: usize,
    /// Sequential run that used its whole budget without rejecting.
    pub censored: bool,
}

impl RunRecord {
    fn sequential(method: &str, replication: usize, seed: u64, verdict: &Verdict, batches: Vec<BatchRecord>, budget: usize) -> Self {
        RunRecord {
            method: method.into(),
            replication,
            seed,
            sample_size: None,
            variant: None,
            censored: !verdict.rejected && batches.len() >= budget,
            batches,
            statistic: None,
            p_value: None,
            rejected: verdict.rejected,
            rejected_at_batch: verdict.at_batch,
            final_log_e: Some(verdict.final_log_e),
            samples_consumed: verdict.samples_consumed,
        }
    }

    fn with_variant(mut self, variant: impl Into<String>) -> Self {
        self.variant = Some(variant.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub curves: Vec<RejectionCurve>,
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, f64>,
}

impl ExperimentOutput {
    pub fn curve(&self, method: &str) -> Option<&RejectionCurve> {
        self.curves.iter().find(|c| c.method == method)
    }
}

/// Runs `kind` with `config` on a pool of `jobs` worker threads (`None` uses
/// every core). Relative CSV paths resolve against `base_dir`.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig, jobs: Option<usize>, base_dir: &Path) -> Result<ExperimentOutput> {
    config.validate(kind)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(HarnessError::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match kind {
        ExperimentKind::Type1 | ExperimentKind::Power => run_curves(kind, config, base_dir),
        ExperimentKind::StoppingTime => run_stopping_time(config, base_dir),
        ExperimentKind::LambdaAblation => run_lambda_ablation(config, base_dir),
        ExperimentKind::BatchOrder => run_batch_order(config, base_dir),
        ExperimentKind::InflationDemo => run_inflation_demo(config),
        ExperimentKind::GrowthRate => run_growth_rate(config),
    })
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    items.par_iter().map(f).collect()
}

fn batch_records(state_log: &[ec2st::ec2st::BatchLogEntry], sizes: &[usize]) -> Vec<BatchRecord> {
    state_log
        .iter()
        .zip(sizes)
        .map(|(e, &size)| BatchRecord {
            batch: e.batch,
            size,
            lambda: Some(e.lambda),
            log_increment: e.log_increment,
            log_e: e.log_e,
            rejected: e.rejected,
        })
        .collect()
}

/// E-C2ST over pre-drawn batches.
fn ec2st_on_batches<L: Learner>(
    batches: Vec<Vec<LabeledSample>>,
    config: &Ec2stConfig,
    learner: &L,
) -> Result<(Verdict, Vec<BatchRecord>)> {
    let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
    let n = batches.len();
    let (verdict, state) = ec2st_run(&mut batches.into_iter(), config, learner, n)?;
    Ok((verdict, batch_records(&state.log, &sizes)))
}

/// Rejection indicator for each grid size: rejected within the batches that
/// fit into that many samples.
fn rejected_by_size(rejected_at: Option<usize>, grid: &[usize], batch_size: usize) -> Vec<bool> {
    grid.iter()
        .map(|&n| rejected_at.is_some_and(|b| b <= n / batch_size))
        .collect()
}

fn count_curve(method: &str, grid: &[usize], flags: &[Vec<bool>]) -> RejectionCurve {
    let counts: Vec<usize> = (0..grid.len()).map(|i| flags.iter().filter(|f| f[i]).count()).collect();
    RejectionCurve::from_counts(method, grid.to_vec(), &counts, flags.len())
}

fn check_nullness(kind: ExperimentKind, config: &ExperimentConfig, source: &Source) -> Result<()> {
    let want_null = kind == ExperimentKind::Type1;
    let uses_classes = config.methods.iter().any(|m| *m != Method::Mslrt);
    if uses_classes {
        if let Some(is_null) = source.is_null() {
            if is_null != want_null {
                return Err(HarnessError::Config(if want_null {
                    "type1 needs identical class distributions".into()
                } else {
                    "power needs different class distributions".into()
                }));
            }
        }
    }
    if config.methods.contains(&Method::Mslrt) {
        let same = config.mslrt.data_mean == config.mslrt.null_mean;
        if same != want_null {
            return Err(HarnessError::Config(if want_null {
                "type1 needs mslrt.data_mean equal to mslrt.null_mean".into()
            } else {
                "power needs mslrt.data_mean different from mslrt.null_mean".into()
            }));
        }
    }
    Ok(())
}

fn source_for(config: &ExperimentConfig, base_dir: &Path, needs_classes: bool) -> Result<Source> {
    if !needs_classes {
        return Ok(Source::Blob(Default::default()));
    }
    config.data.source(base_dir)
}

fn stream_seed(config: &ExperimentConfig, r: usize, extra: &[u64]) -> u64 {
    let mut c = vec![r as u64, STREAM];
    c.extend_from_slice(extra);
    derive(config.seed, &c)
}

fn train_seed(config: &ExperimentConfig, r: usize, extra: &[u64]) -> u64 {
    let mut c = vec![r as u64, TRAIN];
    c.extend_from_slice(extra);
    derive(config.seed, &c)
}

fn draw_batches(source: &Source, batch_size: usize, balanced: bool, seed: u64, count: usize) -> Result<Vec<Vec<LabeledSample>>> {
    let stream = BatchStream::new(source.clone(), batch_size, balanced, seed)?;
    Ok(stream.take(count).collect())
}

enum Job {
    Sequential { method: Method, replication: usize },
    Baselines { replication: usize, size_index: usize },
}

fn run_curves(kind: ExperimentKind, config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    let needs_classes = config.methods.iter().any(|m| *m != Method::Mslrt);
    let source = source_for(config, base_dir, needs_classes)?;
    check_nullness(kind, config, &source)?;
    let grid = config.grid();
    let max_batches = config.grid_batches();
    let baselines: Vec<Method> = config.methods.iter().copied().filter(|m| m.is_baseline()).collect();

    let mut jobs = Vec::new();
    for &m in &config.methods {
        if !m.is_baseline() {
            jobs.extend((0..config.replications).map(|r| Job::Sequential { method: m, replication: r }));
        }
    }
    if !baselines.is_empty() {
        for r in 0..config.replications {
            jobs.extend((0..grid.len()).map(|i| Job::Baselines {
                replication: r,
                size_index: i,
            }));
        }
    }

    let results: Vec<Vec<RunRecord>> = par_map(&jobs, |job| match *job {
        Job::Sequential { method, replication } => {
            let rec = match method {
                Method::Ec2st => ec2st_replication(config, &source, replication, max_batches)?,
                Method::Mslrt => mslrt_replication(config, replication, max_batches)?,
                _ => unreachable!(),
            };
            Ok(vec![rec])
        }
        Job::Baselines { replication, size_index } => {
            baseline_replication(config, &source, &baselines, replication, grid[size_index])
        }
    })?;
    let runs: Vec<RunRecord> = results.into_iter().flatten().collect();

    let mut curves = Vec::new();
    for &m in &config.methods {
        let flags: Vec<Vec<bool>> = if m.is_baseline() {
            (0..config.replications)
                .map(|r| {
                    grid.iter()
                        .map(|&n| {
                            runs.iter()
                                .any(|x| x.method == m.name() && x.replication == r && x.sample_size == Some(n) && x.rejected)
                        })
                        .collect()
                })
                .collect()
        } else {
            runs.iter()
                .filter(|x| x.method == m.name())
                .map(|x| rejected_by_size(x.rejected_at_batch, &grid, config.batch_size))
                .collect()
        };
        curves.push(count_curve(m.name(), &grid, &flags));
    }
    let mut summary = BTreeMap::new();
    for c in &curves {
        if let Some(last) = c.rates.last() {
            summary.insert(format!("{}_rate_at_max", c.method), *last);
        }
    }
    Ok(ExperimentOutput {
        kind,
        curves,
        runs,
        summary,
    })
}

fn ec2st_replication(config: &ExperimentConfig, source: &Source, r: usize, max_batches: usize) -> Result<RunRecord> {
    let seed = stream_seed(config, r, &[]);
    let batches = draw_batches(source, config.batch_size, config.balanced, seed, max_batches)?;
    let cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[]));
    let (verdict, log) = ec2st_on_batches(batches, &cfg, &config.learner)?;
    Ok(RunRecord::sequential("ec2st", r, seed, &verdict, log, max_batches))
}

fn mslrt_replication(config: &ExperimentConfig, r: usize, max_batches: usize) -> Result<RunRecord> {
    let seed = stream_seed(config, r, &[]);
    let stream = GaussianScalarStream::new(config.mslrt.data_mean, config.batch_size, seed)?;
    let null = GaussianSingleton {
        mean: config.mslrt.null_mean,
    };
    let mut state = MsplitState::new(config.alpha)?;
    let mut log = Vec::new();
    for batch in stream.take(max_batches) {
        let inc = state.step(&batch, &RunningMeanGaussian, &null)?;
        log.push(BatchRecord {
            batch: state.batches,
            size: batch.len(),
            lambda: None,
            log_increment: inc.log(),
            log_e: state.process.log_e(),
            rejected: state.process.rejected_at().is_some(),
        });
        if state.process.rejected_at().is_some() {
            break;
        }
    }
    Ok(RunRecord::sequential("mslrt", r, seed, &state.verdict(), log, max_batches))
}

/// Trains one classifier on the 5:1:1 split of the first `n` samples of the
/// replication's stream and runs every requested baseline on its test fold.
fn baseline_replication(
    config: &ExperimentConfig,
    source: &Source,
    methods: &[Method],
    r: usize,
    n: usize,
) -> Result<Vec<RunRecord>> {
    let seed = stream_seed(config, r, &[]);
    let batches = draw_batches(source, config.batch_size, config.balanced, seed, n.div_ceil(config.batch_size))?;
    let mut data: Vec<LabeledSample> = batches.concat();
    data.truncate(n);
    let model_seed = train_seed(config, r, &[n as u64]);
    let outcomes = fixed_horizon_tests(config, &data, methods, model_seed, derive(config.seed, &[r as u64, PERMUTE, n as u64]))?;
    Ok(outcomes
        .into_iter()
        .map(|(m, stat, p)| RunRecord {
            method: m.name().into(),
            replication: r,
            seed,
            sample_size: Some(n),
            variant: None,
            batches: Vec::new(),
            statistic: Some(stat),
            p_value: Some(p),
            rejected: p <= config.alpha,
            rejected_at_batch: None,
            final_log_e: None,
            samples_consumed: data.len(),
            censored: false,
        })
        .collect())
}

fn baseline_arch(learner: &MlpLearner, input_dim: usize) -> Architecture {
    Architecture {
        input_dim,
        hidden: learner.hidden.clone(),
        layer_norm: learner.layer_norm,
        standardize_inputs: learner.standardize_inputs,
    }
}

/// `(method, statistic, p-value)` per baseline. A test fold with a single
/// class cannot be tested and yields `p = 1`.
fn fixed_horizon_tests(
    config: &ExperimentConfig,
    data: &[LabeledSample],
    methods: &[Method],
    model_seed: u64,
    perm_seed: u64,
) -> Result<Vec<(Method, f64, f64)>> {
    let parts = split_by_ratio(data, &config.baselines.split);
    let (train_set, val_set, test_set) = (&parts[0], &parts[1], &parts[2]);
    let ones = test_set.iter().filter(|s| s.y == 1).count();
    let untestable = train_set.is_empty() || val_set.is_empty() || ones == 0 || ones == test_set.len();
    if untestable {
        return Ok(methods.iter().map(|&m| (m, f64::NAN, 1.0)).collect());
    }
    let train_cfg = TrainConfig {
        seed: model_seed,
        ..config.learner.train.clone()
    };
    let (model, _) = train(&baseline_arch(&config.learner, data[0].x.len()), train_set, val_set, &train_cfg)?;
    let labels = ec2st::data::labels(test_set);
    let mut out = Vec::new();
    for (i, &m) in methods.iter().enumerate() {
        let scheme = PermutationScheme::Random {
            count: config.baselines.permutations,
            seed: derive(perm_seed, &[i as u64]),
        };
        let res = match m {
            Method::Sc2st => {
                let probs = test_set.iter().map(|s| model.predict_prob(&s.x)).collect::<ec2st::Result<Vec<_>>>()?;
                sc2st_from_probs(&probs, &labels, &scheme)?
            }
            Method::Lc2st => {
                let logits = test_set.iter().map(|s| model.forward(&s.x)).collect::<ec2st::Result<Vec<_>>>()?;
                lc2st_from_logits(&logits, &labels, &scheme)?
            }
            Method::Mc2st => {
                let fx = FeatureExtractor::new(&model);
                let (c0, c1): (Vec<LabeledSample>, Vec<LabeledSample>) = test_set.iter().cloned().partition(|s| s.y == 0);
                mc2st(&fx.extract(&c0)?, &fx.extract(&c1)?, config.baselines.bandwidth, &scheme)?
            }
            _ => unreachable!(),
        };
        out.push((m, res.statistic, res.p_value));
    }
    Ok(out)
}

fn run_stopping_time(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    let source = config.data.source(base_dir)?;
    let st = &config.stopping_time;
    let jobs: Vec<(usize, usize)> = st
        .batch_sizes
        .iter()
        .flat_map(|&bs| (0..config.replications).map(move |r| (bs, r)))
        .collect();
    let runs = par_map(&jobs, |&(bs, r)| {
        let budget = st.budget / bs;
        let seed = stream_seed(config, r, &[bs as u64]);
        let batches = draw_batches(&source, bs, config.balanced, seed, budget)?;
        let cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[bs as u64]));
        let (verdict, log) = ec2st_on_batches(batches, &cfg, &config.learner)?;
        let mut rec = RunRecord::sequential("ec2st", r, seed, &verdict, log, budget).with_variant(format!("batch_size={bs}"));
        rec.sample_size = Some(bs);
        Ok(rec)
    })?;

    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    for &bs in &st.batch_sizes {
        let budget = st.budget / bs;
        let group: Vec<&RunRecord> = runs.iter().filter(|x| x.sample_size == Some(bs)).collect();
        let grid: Vec<usize> = (1..=budget).map(|k| k * bs).collect();
        let flags: Vec<Vec<bool>> = group
            .iter()
            .map(|x| grid.iter().map(|&n| x.rejected && x.samples_consumed <= n).collect())
            .collect();
        curves.push(count_curve(&format!("ec2st_bs{bs}"), &grid, &flags));
        let r = group.len() as f64;
        // censored runs count with their full budget
        let steps: f64 = group.iter().map(|x| x.batches.len() as f64).sum::<f64>() / r;
        let samples: f64 = group.iter().map(|x| x.samples_consumed as f64).sum::<f64>() / r;
        let censored = group.iter().filter(|x| x.censored).count() as f64 / r;
        summary.insert(format!("mean_steps_bs{bs}"), steps);
        summary.insert(format!("mean_samples_bs{bs}"), samples);
        summary.insert(format!("censored_fraction_bs{bs}"), censored);
    }
    Ok(ExperimentOutput {
        kind: ExperimentKind::StoppingTime,
        curves,
        runs,
        summary,
    })
}

fn run_lambda_ablation(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    let source = config.data.source(base_dir)?;
    let grid = config.grid();
    let max_batches = config.grid_batches();
    let mut variants: Vec<(String, Option<f64>)> = config
        .lambda_ablation
        .lambdas
        .iter()
        .map(|&l| (format!("ec2st_lambda={l}"), Some(l)))
        .collect();
    if config.lambda_ablation.adaptive {
        variants.push(("ec2st_adaptive".into(), None));
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..config.replications).map(move |r| (v, r)))
        .collect();
    let runs = par_map(&jobs, |&(v, r)| {
        let seed = stream_seed(config, r, &[]);
        let batches = draw_batches(&source, config.batch_size, config.balanced, seed, max_batches)?;
        let mut cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[]));
        if let Some(l) = variants[v].1 {
            cfg.initial_lambda = l;
            cfg.adapt_lambda = false;
            cfg.lambda_bounds = (cfg.lambda_bounds.0.min(l), cfg.lambda_bounds.1.max(l));
        }
        let (verdict, log) = ec2st_on_batches(batches, &cfg, &config.learner)?;
        Ok(RunRecord::sequential("ec2st", r, seed, &verdict, log, max_batches).with_variant(variants[v].0.clone()))
    })?;
    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    for (name, _) in &variants {
        let flags: Vec<Vec<bool>> = runs
            .iter()
            .filter(|x| x.variant.as_deref() == Some(name))
            .map(|x| rejected_by_size(x.rejected_at_batch, &grid, config.batch_size))
            .collect();
        let c = count_curve(name, &grid, &flags);
        if let Some(last) = c.rates.last() {
            summary.insert(format!("{name}_rate_at_max"), *last);
        }
        curves.push(c);
    }
    Ok(ExperimentOutput {
        kind: ExperimentKind::LambdaAblation,
        curves,
        runs,
        summary,
    })
}

fn run_batch_order(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    let source = config.data.source(base_dir)?;
    let grid = config.grid();
    let max_batches = config.grid_batches();
    let shuffles = config.batch_order.shuffles;
    let jobs: Vec<(usize, usize)> = (0..shuffles)
        .flat_map(|k| (0..config.replications).map(move |r| (k, r)))
        .collect();
    let runs = par_map(&jobs, |&(k, r)| {
        let seed = stream_seed(config, r, &[]);
        let batches = draw_batches(&source, config.batch_size, config.balanced, seed, max_batches)?;
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut child_rng(config.seed, &[r as u64, ORDER, k as u64]));
        let mut slots: Vec<Option<Vec<LabeledSample>>> = batches.into_iter().map(Some).collect();
        let reordered: Vec<Vec<LabeledSample>> = order.iter().map(|&i| slots[i].take().unwrap_or_default()).collect();
        let cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[]));
        let (verdict, log) = ec2st_on_batches(reordered, &cfg, &config.learner)?;
        let mut rec = RunRecord::sequential("ec2st", r, seed, &verdict, log, max_batches).with_variant(format!("order={k}"));
        rec.sample_size = Some(k);
        Ok(rec)
    })?;

    let per_order: Vec<RejectionCurve> = (0..shuffles)
        .map(|k| {
            let flags: Vec<Vec<bool>> = runs
                .iter()
                .filter(|x| x.sample_size == Some(k))
                .map(|x| rejected_by_size(x.rejected_at_batch, &grid, config.batch_size))
                .collect();
            count_curve(&format!("ec2st_order{k}"), &grid, &flags)
        })
        .collect();
    let kf = shuffles as f64;
    let mut mean = vec![0.0; grid.len()];
    let mut sd = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        mean[i] = per_order.iter().map(|c| c.rates[i]).sum::<f64>() / kf;
        if shuffles > 1 {
            sd[i] = (per_order.iter().map(|c| (c.rates[i] - mean[i]).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt();
        }
    }
    let max_dev = per_order
        .iter()
        .flat_map(|c| c.rates.iter().zip(&mean).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let mut curves = per_order;
    curves.push(RejectionCurve {
        method: "ec2st_order_mean".into(),
        sample_sizes: grid.clone(),
        rates: mean.clone(),
        stderr: sd.iter().map(|s| s / kf.sqrt()).collect(),
    });
    for (name, sign) in [("ec2st_order_lower95", -1.0), ("ec2st_order_upper95", 1.0)] {
        curves.push(RejectionCurve {
            method: name.into(),
            sample_sizes: grid.clone(),
            rates: mean.iter().zip(&sd).map(|(m, s)| (m + sign * 1.96 * s).clamp(0.0, 1.0)).collect(),
            stderr: vec![0.0; grid.len()],
        });
    }
    let mut summary = BTreeMap::new();
    summary.insert("max_deviation_from_mean".into(), max_dev);
    summary.insert("max_dispersion_sd".into(), sd.iter().copied().fold(0.0, f64::max));
    Ok(ExperimentOutput {
        kind: ExperimentKind::BatchOrder,
        curves,
        runs,
        summary,
    })
}

/// Two-sided pooled-variance Student t-test.
pub fn student_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::Config("a t-test needs at least two points per sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ss = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let se = (ss / df * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

fn gaussian_draw<R: Rng>(mean: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + z
        })
        .collect()
}

fn run_inflation_demo(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let DataSpec::Gaussian(g) = &config.data else {
        return Err(HarnessError::Config("the inflation demo needs gaussian data".into()));
    };
    if !g.is_null() {
        return Err(HarnessError::Config("the inflation demo needs identical class means".into()));
    }
    let inf = &config.inflation;
    let rounds = inf.rounds;

    let reps: Vec<usize> = (0..config.replications).collect();
    let per_rep = par_map(&reps, |&r| {
        let seed = derive(config.seed, &[r as u64, ROUNDS]);
        let mut rng = ec2st::seed::rng(seed);
        let mut batches = Vec::with_capacity(rounds);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut ttest_log = Vec::with_capacity(rounds);
        let mut ttest_at = None;
        for round in 1..=rounds {
            let n = rng.random_range(inf.min_batch..=inf.max_batch);
            let mut batch = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let x = gaussian_draw(g.mean0, g.dim, &mut rng);
                a.push(x[0]);
                batch.push(LabeledSample { x, y: 0 });
            }
            for _ in 0..n {
                let x = gaussian_draw(g.mean1, g.dim, &mut rng);
                b.push(x[0]);
                batch.push(LabeledSample { x, y: 1 });
            }
            batch.shuffle(&mut rng);
            batches.push(batch);
            let p = student_t_test(&a, &b)?;
            if ttest_at.is_none() && p <= config.alpha {
                ttest_at = Some(round);
            }
            ttest_log.push(p);
        }
        let consumed = a.len() + b.len();
        let ttest = RunRecord {
            method: "ttest_naive".into(),
            replication: r,
            seed,
            sample_size: None,
            variant: None,
            batches: Vec::new(),
            statistic: None,
            p_value: ttest_log.get(ttest_at.unwrap_or(rounds) - 1).copied(),
            rejected: ttest_at.is_some(),
            rejected_at_batch: ttest_at,
            final_log_e: None,
            samples_consumed: consumed,
            censored: ttest_at.is_none(),
        };
        let mut out = vec![ttest];
        if inf.ec2st {
            let cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[]));
            let (verdict, log) = ec2st_on_batches(batches, &cfg, &config.learner)?;
            out.push(RunRecord::sequential("ec2st", r, seed, &verdict, log, rounds));
        }
        if inf.lc2st_batches > 0 {
            out.push(naive_lc2st(config, r)?);
        }
        Ok(out)
    })?;
    let runs: Vec<RunRecord> = per_rep.into_iter().flatten().collect();

    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    let mut methods = vec![("ttest_naive", rounds)];
    if inf.ec2st {
        methods.push(("ec2st", rounds));
    }
    if inf.lc2st_batches > 0 {
        methods.push(("lc2st_naive", inf.lc2st_batches));
    }
    for (name, horizon) in methods {
        let grid: Vec<usize> = (1..=horizon).collect();
        let flags: Vec<Vec<bool>> = runs
            .iter()
            .filter(|x| x.method == name)
            .map(|x| grid.iter().map(|&k| x.rejected_at_batch.is_some_and(|b| b <= k)).collect())
            .collect();
        let c = count_curve(name, &grid, &flags);
        summary.insert(format!("{name}_type1_at_end"), *c.rates.last().unwrap_or(&0.0));
        curves.push(c);
    }
    Ok(ExperimentOutput {
        kind: ExperimentKind::InflationDemo,
        curves,
        runs,
        summary,
    })
}

/// L-C2ST recomputed on all data after each batch, stopping at the first
/// `p ≤ α`.
fn naive_lc2st(config: &ExperimentConfig, r: usize) -> Result<RunRecord> {
    let inf = &config.inflation;
    let source = config.data.source(Path::new("."))?;
    let seed = derive(config.seed, &[r as u64, LC2ST_STREAM]);
    let batches = draw_batches(&source, inf.lc2st_batch_size, true, seed, inf.lc2st_batches)?;
    let mut data = Vec::new();
    let mut rejected_at = None;
    let mut last_p = 1.0;
    for (k, batch) in batches.into_iter().enumerate() {
        data.extend(batch);
        let tests = fixed_horizon_tests(
            config,
            &data,
            &[Method::Lc2st],
            train_seed(config, r, &[LC2ST_STREAM, k as u64]),
            derive(config.seed, &[r as u64, PERMUTE, LC2ST_STREAM, k as u64]),
        )?;
        last_p = tests[0].2;
        if last_p <= config.alpha {
            rejected_at = Some(k + 1);
            break;
        }
    }
    Ok(RunRecord {
        method: "lc2st_naive".into(),
        replication: r,
        seed,
        sample_size: None,
        variant: None,
        batches: Vec::new(),
        statistic: None,
        p_value: Some(last_p),
        rejected: rejected_at.is_some(),
        rejected_at_batch: rejected_at,
        final_log_e: None,
        samples_consumed: data.len(),
        censored: rejected_at.is_none(),
    })
}

/// Runs all `max_batches` batches without stopping and returns the final
/// state.
fn run_unstopped<L: Learner>(
    batches: Vec<Vec<LabeledSample>>,
    cfg: &Ec2stConfig,
    learner: &L,
) -> Result<(Ec2stState<L::Model>, Vec<usize>)> {
    let sizes = batches.iter().map(Vec::len).collect();
    let mut state = Ec2stState::new(cfg)?;
    for b in batches {
        ec2st_step(&mut state, b, cfg, learner)?;
    }
    Ok((state, sizes))
}

fn run_growth_rate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let DataSpec::DiscreteToy(table) = &config.data else {
        return Err(HarnessError::Config("the growth-rate diagnostic needs a discrete_toy table".into()));
    };
    table.validate()?;
    let source = Source::DiscreteToy(table.clone());
    let mi = table.mutual_information();
    let oracle = TableClassifier {
        probs: (0..table.table.len()).map(|x| table.posterior(x)).collect(),
    };
    let m = config.max_batches;
    let reps: Vec<usize> = (0..config.replications).collect();
    let runs = par_map(&reps, |&r| {
        let seed = stream_seed(config, r, &[]);
        let batches = draw_batches(&source, config.batch_size, config.balanced, seed, m)?;
        let cfg = config.ec2st.config(config.alpha, train_seed(config, r, &[]));
        let (log, verdict, sizes) = match config.growth_rate.classifier {
            GrowthClassifier::Oracle => {
                let (s, z) = run_unstopped(batches, &cfg, &FixedLearner(oracle.clone()))?;
                (s.log.clone(), s.verdict(), z)
            }
            GrowthClassifier::Mlp => {
                let (s, z) = run_unstopped(batches, &cfg, &config.learner)?;
                (s.log.clone(), s.verdict(), z)
            }
        };
        Ok(RunRecord::sequential("ec2st", r, seed, &verdict, batch_records(&log, &sizes), m))
    })?;
    let per_sample: Vec<f64> = runs
        .iter()
        .map(|x| x.final_log_e.unwrap_or(0.0) / x.samples_consumed.max(1) as f64)
        .collect();
    let rf = per_sample.len() as f64;
    let estimate = per_sample.iter().sum::<f64>() / rf;
    let sd = if per_sample.len() > 1 {
        (per_sample.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt()
    } else {
        0.0
    };
    let mc_std = sd / rf.sqrt();
    let grid: Vec<usize> = (1..=m).map(|k| k * config.batch_size).collect();
    let flags: Vec<Vec<bool>> = runs
        .iter()
        .map(|x| rejected_by_size(x.rejected_at_batch, &grid, config.batch_size))
        .collect();
    let mut summary = BTreeMap::new();
    summary.insert("per_sample_log_growth".into(), estimate);
    summary.insert("mc_std".into(), mc_std);
    summary.insert("mutual_information".into(), mi);
    summary.insert("bound_holds".into(), if estimate <= mi + 3.0 * mc_std { 1.0 } else { 0.0 });
    Ok(ExperimentOutput {
        kind: ExperimentKind::GrowthRate,
        curves: vec![count_curve("ec2st", &grid, &flags)],
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_reference_values() {
        // equal samples
        assert_eq!(student_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        // t = -sqrt(6)/... checked against the closed form for df = 4
        let p = student_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        // t = -3/sqrt(2/3) = -3.674..., two-sided p for df 4
        let t: f64 = 3.0 / (2.0f64 / 3.0).sqrt();
        let expect = 2.0 * StudentsT::new(0.0, 1.0, 4.0).unwrap().sf(t);
        assert!((p - expect).abs() < 1e-15);
        assert!((p - 0.021311641128756).abs() < 1e-9, "{p}");
    }

    #[test]
    fn curve_rates_and_errors() {
        let c = RejectionCurve::from_counts("m", vec![10, 20], &[0, 5], 10);
        assert_eq!(c.rates, vec![0.0, 0.5]);
        assert_eq!(c.stderr[0], 0.0);
        assert!((c.stderr[1] - 0.025f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn size_flags_use_whole_batches() {
        assert_eq!(rejected_by_size(Some(3), &[90, 180, 270, 300], 90), vec![false, false, true, true]);
        assert_eq!(rejected_by_size(None, &[90], 90), vec![false]);
    }
}
