//! One runner per subcommand. Each writes its CSV (and parameter) files into
//! the output directory and returns their names for the manifest.

use std::path::Path;

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use vrbound::models::blr::geometric_grid;
use vrbound::models::data::{bundled_digits, synthetic_regression};
use vrbound::models::{BNNModel, BLRModel, VAEModel};
use vrbound::trainer::params::{load_params, save_params, NamedTensor};
use vrbound::trainer::{mean_field_init, EvalRecord, EvalSpec, RunRecord};
use vrbound::{
    bias_simulation, evaluate, quadrature_oracle, renyi_gaussian, train, weight_diagnostics, AlphaSetting, Dataset,
    GridSpec, Inference, JointModel, JointObjective, NoiseDraw, ReparamMap, TrainConfig, Variational,
};

use crate::config::{BiasSimSection, BlrSection, BnnSection, DatasetSection, DivergenceSection, EvalSection, VaeSection};
use crate::ConfigError;

/// Files written by a run and the hash of the dataset it read, if any.
#[derive(Debug, Default)]
pub struct Produced {
    pub outputs: Vec<String>,
    pub dataset_hash: Option<String>,
}

impl Produced {
    fn add(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct DivergenceRow {
    alpha: AlphaSetting,
    divergence: f64,
    quadrature: String,
}

pub fn divergence(s: &DivergenceSection, dir: &Path) -> Result<Produced> {
    let mut w = writer(dir, "divergence.csv")?;
    for &alpha in &s.alphas {
        let closed = renyi_gaussian(&s.p, &s.q, alpha)?;
        let quad = match s.quadrature_step {
            Some(step) if alpha.is_finite() && s.p.dim() <= 2 => {
                let grid = GridSpec::auto(&s.p, &s.q, alpha.value(), step);
                Some(quadrature_oracle(&s.p, &s.q, alpha.value(), &grid)?)
            }
            _ => None,
        };
        w.serialize(DivergenceRow {
            alpha,
            divergence: closed,
            quadrature: fmt_opt(quad),
        })?;
    }
    w.flush()?;
    let mut p = Produced::default();
    p.add("divergence.csv");
    Ok(p)
}

pub fn bias_sim(s: &BiasSimSection, seed: u64, dir: &Path) -> Result<Produced> {
    let table = bias_simulation(&s.p, &s.q, &s.alphas, &s.ks, s.repeats, seed)?;
    table.to_csv(dir.join("bias.csv"))?;
    let mut p = Produced::default();
    p.add("bias.csv");
    Ok(p)
}

/// Reads `dataset.path` with its column roles and splits it; `None` when no
/// path is configured.
fn load_dataset(d: &DatasetSection, seed: u64) -> Result<Option<Dataset>> {
    let Some(path) = &d.path else {
        return Ok(None);
    };
    let data = Dataset::from_csv(path, &d.columns).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(split(data, d, seed)?))
}

fn split(data: Dataset, d: &DatasetSection, seed: u64) -> Result<Dataset> {
    Ok(match d.train_rows {
        Some(n) => data.with_ordered_split(n)?,
        None => data.with_random_split(d.test_fraction, seed)?,
    })
}

pub fn blr_demo(s: &BlrSection, d: &DatasetSection, dir: &Path) -> Result<Produced> {
    let mut produced = Produced::default();
    let model = match &d.path {
        Some(path) => {
            let data = Dataset::from_csv(path, &d.columns).with_context(|| format!("reading {}", path.display()))?;
            produced.dataset_hash = Some(data.content_hash());
            BLRModel::new(data, s.sigma)?
        }
        None => BLRModel::synthetic(s.data_seed).with_sigma(s.sigma)?,
    };
    let exact = model.exact_posterior()?;
    let dim = model.dim();

    let fits = s
        .alphas
        .iter()
        .map(|&a| Ok((a, model.mean_field_fit(a)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = writer(dir, "blr_fits.csv")?;
    let mut header = vec!["alpha".to_string()];
    header.extend((0..dim).map(|i| format!("mean_{i}")));
    header.extend((0..dim).map(|i| format!("var_{i}")));
    header.extend(["bound".to_string(), "log_evidence".to_string()]);
    w.write_record(&header)?;
    let mut exact_row = vec!["exact".to_string()];
    exact_row.extend(exact.posterior.mean().iter().map(f64::to_string));
    exact_row.extend(exact.posterior.variances().iter().map(f64::to_string));
    exact_row.extend([exact.log_evidence.to_string(), exact.log_evidence.to_string()]);
    w.write_record(&exact_row)?;
    for (a, q) in &fits {
        let bound = vrbound::exact_vr_bound_blr(&model, q, a.value())?.value;
        let mut row = vec![a.to_string()];
        row.extend(q.mean().iter().map(f64::to_string));
        row.extend(q.variances().iter().map(f64::to_string));
        row.extend([bound.to_string(), exact.log_evidence.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    produced.add("blr_fits.csv");

    let g = &s.sigma_grid;
    let sigmas = geometric_grid(g.lo, g.hi, g.points);
    let curve = model.sigma_curve(&sigmas, &s.alphas)?;
    let mut w = writer(dir, "blr_sigma.csv")?;
    let mut header = vec!["sigma".to_string(), "log_evidence".to_string()];
    header.extend(s.alphas.iter().map(|a| format!("bound_alpha={a}")));
    w.write_record(&header)?;
    for point in &curve {
        let mut row = vec![point.sigma.to_string(), point.log_evidence.to_string()];
        row.extend(point.bounds.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    produced.add("blr_sigma.csv");

    if dim == 2 && s.contour_points >= 2 {
        let mean = exact.posterior.mean();
        let sd = exact.posterior.variances().map(f64::sqrt);
        let n = s.contour_points;
        let axis = |i: usize, k: usize| {
            let h = s.contour_half_width * sd[i];
            mean[i] - h + 2.0 * h * k as f64 / (n - 1) as f64
        };
        let mut w = writer(dir, "blr_contours.csv")?;
        let mut header = vec!["theta_0".to_string(), "theta_1".to_string(), "log_exact".to_string()];
        header.extend(fits.iter().map(|(a, _)| format!("log_q_alpha={a}")));
        w.write_record(&header)?;
        for i in 0..n {
            for j in 0..n {
                let t = [axis(0, i), axis(1, j)];
                let mut row = vec![t[0].to_string(), t[1].to_string(), exact.posterior.log_pdf(&t).to_string()];
                row.extend(fits.iter().map(|(_, q)| q.log_pdf(&t).to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        produced.add("blr_contours.csv");
    }
    Ok(produced)
}

fn write_record(record: &RunRecord, dir: &Path, produced: &mut Produced) -> Result<()> {
    record.steps_to_csv(dir.join("steps.csv"))?;
    produced.add("steps.csv");
    record.evals_to_csv(dir.join("evals.csv"))?;
    produced.add("evals.csv");
    Ok(())
}

#[derive(Serialize)]
struct PredictiveRow {
    split: &'static str,
    log_likelihood: f64,
    rmse: f64,
}

pub fn bnn_train(s: &BnnSection, d: &DatasetSection, config: &TrainConfig, dir: &Path) -> Result<Produced> {
    let mut produced = Produced::default();
    let data = match load_dataset(d, config.seed)? {
        Some(data) => data,
        None => split(
            synthetic_regression(d.synthetic_rows, d.synthetic_dim, d.synthetic_noise, config.seed),
            d,
            config.seed,
        )?,
    };
    if data.targets().is_none() {
        return Err(ConfigError("bnn-train needs a target column (dataset.columns.target)".into()).into());
    }
    produced.dataset_hash = Some(data.content_hash());
    let standardizer = data.fit_standardizer();
    let (train_set, test_set) = (data.train().standardized(&standardizer), data.test().standardized(&standardizer));
    let model = BNNModel::new(data.dim(), s.hidden);
    let latent = model.latent_dim();
    let mut init = mean_field_init(&model, s.init_log_scale, &[s.init_log_noise]);
    // break the symmetry between hidden units
    let jitter = NoiseDraw::generate(config.seed, u64::MAX, latent);
    for (m, e) in init.iter_mut().zip(&jitter.eps) {
        *m = 0.1 * e;
    }
    let out = train(Inference::Posterior(&model), &train_set, config, init)?;

    let q = ReparamMap::from_params(&out.params[..2 * latent]);
    let log_noise = out.params[2 * latent];
    let mut w = writer(dir, "predictive.csv")?;
    for (name, set) in [("train", &train_set), ("test", &test_set)] {
        if set.is_empty() {
            continue;
        }
        let score = model.predictive_score(&q, log_noise, set, s.predictive_samples, config.seed ^ 0x5eed);
        w.serialize(PredictiveRow {
            split: name,
            log_likelihood: score.log_likelihood,
            rmse: score.rmse,
        })?;
    }
    w.flush()?;
    produced.add("predictive.csv");
    write_record(&out.record, dir, &mut produced)?;
    std::fs::write(dir.join("standardizer.json"), serde_json::to_string_pretty(&standardizer)?)?;
    produced.add("standardizer.json");
    save_params(
        dir.join("params.bin"),
        &[
            NamedTensor::vector("mean", out.params[..latent].to_vec()),
            NamedTensor::vector("log_scale", out.params[latent..2 * latent].to_vec()),
            NamedTensor::vector("log_noise_sd", vec![log_noise]),
        ],
    )?;
    produced.add("params.bin");
    Ok(produced)
}

fn vae_data(d: &DatasetSection, seed: u64) -> Result<Dataset> {
    Ok(load_dataset(d, seed)?.unwrap_or_else(bundled_digits))
}

fn vae_model(s: &VaeSection, data: &Dataset) -> VAEModel {
    VAEModel::new(data.dim(), s.latent_dim, s.hidden, s.likelihood)
}

pub fn vae_train(s: &VaeSection, d: &DatasetSection, config: &TrainConfig, dir: &Path) -> Result<Produced> {
    let mut produced = Produced::default();
    let data = vae_data(d, config.seed)?;
    produced.dataset_hash = Some(data.content_hash());
    let model = vae_model(s, &data);
    let enc = model.encoder();
    let init = model.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut out = train(Inference::Amortized(&model), &data.train(), config, init)?;

    let test = data.test();
    if !test.is_empty() {
        let spec = EvalSpec {
            alphas: vec![],
            ks: vec![],
            k_ref: config.eval_k,
            repeats: 1,
            seed: config.seed ^ 0xe7a1,
        };
        let table = evaluate(&model, &enc, &out.params, &test, &spec)?;
        out.record.evals.push(EvalRecord {
            alpha: AlphaSetting::ZERO,
            k: config.eval_k,
            mean: table.reference_mean,
            stderr: table.reference_stderr,
        });
    }
    write_record(&out.record, dir, &mut produced)?;
    let n_enc = enc.num_params();
    save_params(
        dir.join("params.bin"),
        &[
            NamedTensor::vector("encoder", out.params[..n_enc].to_vec()),
            NamedTensor::vector("decoder", out.params[n_enc..].to_vec()),
        ],
    )?;
    produced.add("params.bin");
    Ok(produced)
}

#[derive(Serialize)]
struct WeightRow {
    rank: usize,
    mean_weight: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    k_ref: usize,
    reference_mean: f64,
    reference_stderr: f64,
    diagnostics_k: usize,
    median_max_weight: f64,
    mean_log_weight_ratio: f64,
}

pub fn eval(s: &EvalSection, v: &VaeSection, d: &DatasetSection, seed: u64, dir: &Path) -> Result<Produced> {
    let Some(path) = &s.params else {
        return Err(ConfigError("eval needs a parameter file (eval.params or --params)".into()).into());
    };
    let mut produced = Produced::default();
    let data = vae_data(d, seed)?;
    produced.dataset_hash = Some(data.content_hash());
    let model = vae_model(v, &data);
    let enc = model.encoder();
    let tensors = load_params(path).with_context(|| format!("reading {}", path.display()))?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.data.clone())
            .ok_or_else(|| vrbound::Error::ParamFormat(format!("no tensor named {name:?}")))
    };
    let mut params = find("encoder")?;
    params.extend(find("decoder")?);
    let expected = enc.num_params() + model.num_params();
    if params.len() != expected {
        return Err(ConfigError(format!(
            "parameter file holds {} values but the configured VAE has {expected}",
            params.len()
        ))
        .into());
    }

    let test = data.test();
    let spec = EvalSpec {
        alphas: s.alphas.clone(),
        ks: s.ks.clone(),
        k_ref: s.k_ref,
        repeats: s.repeats,
        seed,
    };
    let table = evaluate(&model, &enc, &params, &test, &spec)?;
    table.to_csv(dir.join("eval.csv"))?;
    produced.add("eval.csv");

    let k = s.diagnostics_k;
    let mut w_max = Vec::with_capacity(test.len());
    let mut log_ratio = 0.0;
    let mut profile = vec![0.0; k.min(10)];
    for i in 0..test.len() {
        let obj = JointObjective::datapoint(&model, &enc, &test, i);
        let noise = NoiseDraw::batch(seed ^ 0xd1a6, (i as u64) << 24, k, v.latent_dim);
        let diag = weight_diagnostics(&vrbound::gradient::log_weights(&obj, &params, &noise)?);
        w_max.push(diag.max_weight());
        log_ratio += diag.log_ratio / test.len() as f64;
        for (acc, x) in profile.iter_mut().zip(&diag.sorted) {
            *acc += x / test.len() as f64;
        }
    }
    w_max.sort_by(f64::total_cmp);
    let n = w_max.len();
    let median = if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        w_max[n / 2]
    } else {
        0.5 * (w_max[n / 2 - 1] + w_max[n / 2])
    };
    let mut w = writer(dir, "weights.csv")?;
    for (rank, &mean_weight) in profile.iter().enumerate() {
        w.serialize(WeightRow {
            rank: rank + 1,
            mean_weight,
        })?;
    }
    w.flush()?;
    produced.add("weights.csv");
    let summary = EvalSummary {
        k_ref: s.k_ref,
        reference_mean: table.reference_mean,
        reference_stderr: table.reference_stderr,
        diagnostics_k: k,
        median_max_weight: median,
        mean_log_weight_ratio: log_ratio,
    };
    std::fs::write(dir.join("eval_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    produced.add("eval_summary.json");
    Ok(produced)
}
