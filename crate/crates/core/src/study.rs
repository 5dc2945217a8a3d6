//! Scripted comparative studies over the toy environments: model-error
//! comparisons, coverage-vs-uncertainty sweeps, and end-to-end planning
//! benchmarks. Every study is a pure function of (inputs, seed list) and its
//! CSV output is byte-stable across reruns.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{neighborhood_drop, split, OfflineDataset};
use crate::dynamics::max_aleatoric_uncertainty;
use crate::error::{ensure_finite, Error, Result};
use crate::mdp::{policy_return, value_iteration, TabularMdp, TabularPolicy};
use crate::planner::{plan_tabular, visitation_uncertainty};
use crate::rng::{stream, STREAM_SPLIT};
use crate::training::{train_nll_only, train_vipo, TrainConfig, TrainedModel};

/// One aggregated measurement: a (condition, metric) cell with its per-seed
/// values retained so aggregation is always recomputable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub condition: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub per_seed: Vec<f64>,
}

impl StudyRow {
    fn from_values(condition: &str, metric: &str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a study row needs at least one seed"));
        }
        for v in &values {
            ensure_finite(*v, "study metric")?;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Ok(Self {
            condition: condition.to_string(),
            metric: metric.to_string(),
            mean,
            std,
            n_seeds: values.len(),
            per_seed: values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_json: String,
    pub seeds: Vec<u64>,
    /// SHA-256 over the input dataset's serialized transitions and the config.
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub name: String,
    pub rows: Vec<StudyRow>,
    pub provenance: Provenance,
}

impl StudyResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("study,condition,metric,mean,std,n_seeds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12e},{:.12e},{}\n",
                self.name, r.condition, r.metric, r.mean, r.std, r.n_seeds
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study result serializes")
    }

    pub fn row(&self, condition: &str, metric: &str) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.metric == metric)
    }
}

fn content_hash(dataset: &OfflineDataset, config_json: &str) -> String {
    let mut hasher = Sha256::new();
    for t in &dataset.transitions {
        hasher.update(serde_json::to_string(t).expect("transition serializes"));
        hasher.update(b"\n");
    }
    hasher.update(config_json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn seed_list(base: u64, n_seeds: usize) -> Vec<u64> {
    (0..n_seeds as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Average ranks with ties sharing their midpoint.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation between two equally long sequences.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("rank correlation needs two sequences of equal length ≥ 2"));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::invalid("rank correlation is undefined for constant sequences"));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// One-sided paired sign test: probability of at least `wins` successes out
/// of `n` fair coin flips. Small values mean the win pattern is unlikely
/// under the no-difference null.
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    if wins > n {
        return 0.0;
    }
    // Σ_{k=wins..n} C(n,k) / 2^n with C built incrementally
    let mut coeff = 1.0f64; // C(n, 0)
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += coeff;
        }
        coeff = coeff * (n - k) as f64 / (k + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

/// Trains the λ=0 and penalized variants per seed on a shared 90% split and
/// reports each model's prediction error on the shared 10% holdout.
pub fn study_model_error(
    dataset: &OfflineDataset,
    config_nll: &TrainConfig,
    config_vipo: &TrainConfig,
    n_seeds: usize,
) -> Result<StudyResult> {
    if n_seeds < 2 {
        return Err(Error::invalid("model-error study needs at least 2 seeds"));
    }
    config_nll.validate()?;
    config_vipo.validate()?;
    let seeds = seed_list(config_vipo.seed, n_seeds);
    let mut nll_errors = Vec::with_capacity(n_seeds);
    let mut vipo_errors = Vec::with_capacity(n_seeds);
    for &seed in &seeds {
        let (train, holdout) = split(dataset, 0.9, stream(seed, STREAM_SPLIT))?;
        if holdout.is_empty() {
            return Err(Error::invalid("dataset too small to hold out 10%"));
        }
        let mut cfg_a = config_nll.clone();
        cfg_a.seed = seed;
        let (model_a, _) = train_nll_only(&train, &cfg_a)?;
        nll_errors.push(model_a.prediction_error(&holdout.transitions)?);

        let mut cfg_b = config_vipo.clone();
        cfg_b.seed = seed;
        let (model_b, _) = train_vipo(&train, &cfg_b)?;
        vipo_errors.push(model_b.prediction_error(&holdout.transitions)?);
    }
    let config_json = serde_json::to_string(&(config_nll, config_vipo))?;
    let rows = vec![
        StudyRow::from_values("nll_only", "held_out_prediction_error", nll_errors)?,
        StudyRow::from_values("vipo", "held_out_prediction_error", vipo_errors)?,
    ];
    Ok(StudyResult {
        name: "model_error".into(),
        rows,
        provenance: Provenance {
            input_hash: content_hash(dataset, &config_json),
            config_json,
            seeds,
        },
    })
}

/// For each drop ratio and seed: thin the dataset around fixed anchors, train
/// an ensemble, and measure the mean worst-member predictive spread at the
/// anchor pairs. Appends a per-seed rank-correlation row ("trend").
pub fn study_uncertainty_sweep(
    dataset: &OfflineDataset,
    drop_ratios: &[f64],
    radius: f64,
    n_anchors: usize,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<StudyResult> {
    if drop_ratios.is_empty() {
        return Err(Error::invalid("need at least one drop ratio"));
    }
    if drop_ratios.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("drop ratios must be sorted ascending"));
    }
    config.validate()?;
    let seeds = seed_list(config.seed, n_seeds.max(1));
    // per_ratio[i][j] = mean anchor uncertainty for ratio i, seed j
    let mut per_ratio: Vec<Vec<f64>> = vec![Vec::new(); drop_ratios.len()];
    for &seed in &seeds {
        for (i, &ratio) in drop_ratios.iter().enumerate() {
            // the same seed fixes anchors and removal order across ratios
            let (thinned, anchors, _) =
                neighborhood_drop(dataset, n_anchors, radius, ratio, seed)?;
            let mut cfg = config.clone();
            cfg.seed = seed;
            let (model, _) = train_vipo(&thinned, &cfg)?;
            let ensemble = model
                .as_ensemble()
                .ok_or_else(|| Error::invalid("uncertainty sweep needs continuous data"))?;
            let mut total = 0.0;
            for anchor in &anchors {
                total += max_aleatoric_uncertainty(ensemble, &anchor.s, &anchor.a)?;
            }
            per_ratio[i].push(total / anchors.len() as f64);
        }
    }
    let mut rows = Vec::with_capacity(drop_ratios.len() + 1);
    for (i, &ratio) in drop_ratios.iter().enumerate() {
        rows.push(StudyRow::from_values(
            &format!("drop_{ratio:.2}"),
            "mean_max_aleatoric",
            per_ratio[i].clone(),
        )?);
    }
    if drop_ratios.len() >= 2 {
        let mut trend = Vec::with_capacity(seeds.len());
        for j in 0..seeds.len() {
            let curve: Vec<f64> = per_ratio.iter().map(|v| v[j]).collect();
            trend.push(spearman(drop_ratios, &curve)?);
        }
        rows.push(StudyRow::from_values(
            "trend",
            "spearman_ratio_vs_uncertainty",
            trend,
        )?);
    }
    let config_json = serde_json::to_string(&(config, drop_ratios, radius, n_anchors))?;
    Ok(StudyResult {
        name: "uncertainty_sweep".into(),
        rows,
        provenance: Provenance {
            input_hash: content_hash(dataset, &config_json),
            config_json,
            seeds,
        },
    })
}

/// Plans on a trained tabular model with count-based pessimism and judges the
/// resulting policy on the true MDP. The injectable core of the benchmark.
pub fn benchmark_policy_value(
    mdp: &TabularMdp,
    model: &TrainedModel,
    dataset: &OfflineDataset,
    beta: f64,
) -> Result<f64> {
    let tabular = model
        .as_tabular()
        .ok_or_else(|| Error::invalid("benchmark planning expects a tabular model"))?;
    let u = visitation_uncertainty(dataset)?;
    let plan = plan_tabular(tabular, &u, beta, mdp.gamma, 1e-9)?;
    policy_return(mdp, &plan.policy)
}

/// Coverage-quality grades: behavior = mix(optimal, uniform) at these weights.
pub const QUALITY_GRADES: &[(&str, f64)] = &[("random", 0.0), ("medium", 0.5), ("expert", 0.9)];

/// Full model-substitution benchmark: for every environment × data quality,
/// train λ=0 and penalized models on the same data and plan with identical
/// settings; report true-environment returns for both arms plus the behavior
/// and optimal references.
pub fn study_benchmark(
    envs: &[(String, TabularMdp)],
    qualities: &[(String, f64)],
    config: &TrainConfig,
    beta: f64,
    n_episodes: usize,
    horizon: usize,
    n_seeds: usize,
) -> Result<StudyResult> {
    if n_seeds < 2 {
        return Err(Error::invalid("benchmark study needs at least 2 seeds"));
    }
    if envs.is_empty() || qualities.is_empty() {
        return Err(Error::invalid("need at least one environment and quality grade"));
    }
    config.validate()?;
    let seeds = seed_list(config.seed, n_seeds);
    let mut rows = Vec::new();
    let mut hasher_input = String::new();
    for (env_name, mdp) in envs {
        let (_, optimal) = value_iteration(mdp, 1e-10);
        let uniform = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        for (quality, weight) in qualities {
            let behavior = optimal.mix(&uniform, *weight);
            let condition = format!("{env_name}/{quality}");
            let behavior_return = policy_return(mdp, &behavior)?;
            let optimal_return = policy_return(mdp, &optimal)?;
            let mut nll_returns = Vec::with_capacity(n_seeds);
            let mut vipo_returns = Vec::with_capacity(n_seeds);
            for &seed in &seeds {
                let ds = crate::dataset::collect(mdp, &behavior, n_episodes, horizon, seed)?;
                let mut cfg = config.clone();
                cfg.seed = seed;
                let (nll_model, _) = train_nll_only(&ds, &cfg)?;
                nll_returns.push(benchmark_policy_value(mdp, &nll_model, &ds, beta)?);
                let (vipo_model, _) = train_vipo(&ds, &cfg)?;
                vipo_returns.push(benchmark_policy_value(mdp, &vipo_model, &ds, beta)?);
                hasher_input.push_str(&format!("{condition}:{seed};"));
            }
            rows.push(StudyRow::from_values(
                &condition,
                "nll_return",
                nll_returns,
            )?);
            rows.push(StudyRow::from_values(
                &condition,
                "vipo_return",
                vipo_returns,
            )?);
            rows.push(StudyRow::from_values(
                &condition,
                "behavior_return",
                vec![behavior_return; n_seeds],
            )?);
            rows.push(StudyRow::from_values(
                &condition,
                "optimal_return",
                vec![optimal_return; n_seeds],
            )?);
        }
    }
    let config_json = serde_json::to_string(&(config, beta, n_episodes, horizon))?;
    let mut hasher = Sha256::new();
    hasher.update(hasher_input.as_bytes());
    hasher.update(config_json.as_bytes());
    let digest = hasher.finalize();
    Ok(StudyResult {
        name: "benchmark".into(),
        rows,
        provenance: Provenance {
            input_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            config_json,
            seeds,
        },
    })
}

/// Hand-rolled static SVG line plot: one polyline per series over shared axes.
pub fn line_plot_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const M: f64 = 60.0;
    const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if points.is_empty() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        title
    );
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    ));
    svg.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x0:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x1:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{y0:.3}</text>\n\
         <text x=\"{}\" y=\"{M}\" font-size=\"11\" text-anchor=\"end\">{y1:.3}</text>\n",
        H - M + 18.0,
        W - M,
        H - M + 18.0,
        M - 6.0,
        H - M,
        M - 6.0
    ));
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            W - M + 4.0,
            M + 16.0 * k as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
