//! Subcommand implementations. Every artifact embeds the resolved
//! configuration and seed, so any number in any output file can be traced
//! back to the run that produced it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use egpssm::checkpoint;
use egpssm::data::{self, format_f64, Sequence};
use egpssm::numerics::{DiagGaussian, Mat};
use egpssm::ssm::{
    self, build_model, count_params, evaluate_forecast, CountSpec, Model, ModelKind,
};
use egpssm::train::{fit, pack, TrainRecord};
use egpssm::{Error, Result};

use crate::args::{BenchmarkArgs, GenDataArgs, PredictArgs, TrainArgs};
use crate::config::RunConfig;
use crate::svg::{line_chart, Series};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serialize json: {e}")))?;
    write_file(path, &format!("{text}\n"))
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

// ---------------------------------------------------------------------------
// gen-data

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let seqs = if args.max_abs > 0.0 {
        data::gen_kink_stable(args.n_seq, args.len, args.seed, args.max_abs)?
    } else {
        data::gen_kink(args.n_seq, args.len, args.seed)?
    };
    let header = vec![
        "generator: kink".to_string(),
        format!("seed: {}", args.seed),
        format!("n_seq: {}", args.n_seq),
        format!("len: {}", args.len),
        format!("max_abs: {}", args.max_abs),
    ];
    for seq in &seqs {
        let mut comments = header.clone();
        comments.push(format!("sequence: {}", seq.name));
        data::write_csv(&args.out.join(format!("{}.csv", seq.name)), seq, &comments)?;
    }
    println!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Resolve training sequences from the `[data]` section.
pub fn training_sequences(cfg: &RunConfig) -> Result<Vec<Sequence>> {
    match cfg.data.kind.as_str() {
        "kink" => {
            if cfg.data.max_abs > 0.0 {
                data::gen_kink_stable(cfg.data.n_seq, cfg.data.t_len, cfg.data.seed, cfg.data.max_abs)
            } else {
                data::gen_kink(cfg.data.n_seq, cfg.data.t_len, cfg.data.seed)
            }
        }
        "csv" => {
            if cfg.data.paths.is_empty() {
                return Err(Error::InvalidConfig("data.kind = \"csv\" needs data.paths".into()));
            }
            let mut out = Vec::new();
            for p in &cfg.data.paths {
                let seq = data::load_csv(Path::new(p))?;
                if cfg.data.standardize {
                    let (train, _, _) = data::split_standardize(&seq, cfg.data.train_frac)?;
                    out.push(train);
                } else {
                    let split = (seq.len() as f64 * cfg.data.train_frac).floor() as usize;
                    if split < 2 {
                        return Err(Error::SequenceTooShort { len: seq.len(), needed: 4 });
                    }
                    out.push(seq.slice(0, split));
                }
            }
            Ok(out)
        }
        other => Err(Error::InvalidConfig(format!("unknown data.kind: {other}"))),
    }
}

fn train_log_csv(log: &[TrainRecord]) -> String {
    let mut out = String::from("iteration,elbo,kl_u,kl_x0,wall_ms\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.iteration,
            format_f64(r.elbo),
            format_f64(r.kl_u),
            format_f64(r.kl_x0),
            r.wall_ms
        ));
    }
    out
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    args.apply_overrides(&mut cfg);
    ensure_dir(&args.out)?;

    let seqs = training_sequences(&cfg)?;
    let mut model = build_model(&cfg.build_config()?, &seqs)?;
    let train_cfg = cfg.train_config();
    let log = fit(&mut model, &seqs, &train_cfg)?;

    let ckpt_path = args.out.join("checkpoint.toml");
    checkpoint::save(&model, &ckpt_path)?;
    write_file(&args.out.join("train_log.csv"), &train_log_csv(&log))?;
    let curve = Series {
        name: cfg.model.kind.clone(),
        points: log.iter().map(|r| (r.iteration as f64, r.elbo)).collect(),
    };
    write_file(
        &args.out.join("elbo.svg"),
        &line_chart("training objective", "iteration", "elbo", &[curve]),
    )?;
    let report = serde_json::json!({
        "command": "train",
        "config": config_echo(&cfg),
        "seed": cfg.train.seed,
        "n_sequences": seqs.len(),
        "n_params": pack(&model).len(),
        "final_elbo": log.last().map(|r| r.elbo),
        "artifacts": {
            "checkpoint": "checkpoint.toml",
            "train_log": "train_log.csv",
            "elbo_chart": "elbo.svg",
        },
    });
    write_json(&args.out.join("report.json"), &report)?;
    println!(
        "trained {} for {} iterations; final elbo {}",
        cfg.model.kind,
        log.len(),
        log.last().map_or(f64::NAN, |r| r.elbo)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

fn predictions_csv(pred_mean: &Mat<f64>, pred_var: &Mat<f64>, truth: &Mat<f64>, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    let d = pred_mean.cols;
    let mut cols = vec!["t".to_string()];
    for j in 1..=d {
        cols.push(format!("y{j}_mean"));
        cols.push(format!("y{j}_var"));
        cols.push(format!("y{j}_true"));
    }
    out.push_str(&cols.join(","));
    out.push('\n');
    for t in 0..pred_mean.rows {
        let mut fields = vec![format!("{}", t + 1)];
        for j in 0..d {
            fields.push(format_f64(pred_mean.get(t, j)));
            fields.push(format_f64(pred_var.get(t, j)));
            fields.push(format_f64(truth.get(t, j)));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let model = checkpoint::load(&args.checkpoint)?;
    let seeds = args.seed_list()?;
    let mut comments = vec![
        "command: predict".to_string(),
        // File name only: reports must be byte-identical across identical
        // runs regardless of where the checkpoint directory lives.
        format!("checkpoint: {}", checkpoint_name(&args.checkpoint)),
        format!("seeds: {:?}", seeds),
        format!("n_mc: {}", args.n_mc),
    ];

    let (rmses, persistence_rmse, first_pred, truth, mode) = match (&args.data, args.kink_seed) {
        (Some(path), None) => predict_csv(args, &model, path, &seeds)?,
        (None, Some(kink_seed)) => predict_kink(args, &model, kink_seed, &seeds)?,
        _ => {
            return Err(Error::InvalidConfig(
                "predict needs exactly one of --data <csv> or --kink-seed <seed>".into(),
            ))
        }
    };
    comments.push(format!("mode: {mode}"));

    let (pred_mean, pred_var) = first_pred;
    write_file(
        &args.out.join("predictions.csv"),
        &predictions_csv(&pred_mean, &pred_var, &truth, &comments),
    )?;
    let (rmse_mean, rmse_std) = mean_std(&rmses);
    let report = serde_json::json!({
        "command": "predict",
        "checkpoint": checkpoint_name(&args.checkpoint),
        "mode": mode,
        "seeds": seeds,
        "n_mc": args.n_mc,
        "rmse_mean": rmse_mean,
        "rmse_std": rmse_std,
        "rmse_per_seed": rmses,
        "persistence_rmse": persistence_rmse,
    });
    write_json(&args.out.join("rmse.json"), &report)?;
    println!("rmse_mean {rmse_mean} rmse_std {rmse_std} persistence {persistence_rmse}");
    Ok(())
}

fn checkpoint_name(path: &std::path::Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

type PredictOutput = (Vec<f64>, f64, (Mat<f64>, Mat<f64>), Mat<f64>, String);

/// Synthetic protocol: condition on the first observation of a fresh test
/// sequence, then forecast the remainder.
fn predict_kink(
    args: &PredictArgs,
    model: &Model<f64>,
    kink_seed: u64,
    seeds: &[u64],
) -> Result<PredictOutput> {
    let test = data::gen_kink_stable(1, args.len, kink_seed, 20.0)?.remove(0);
    let mut rmses = Vec::new();
    let mut first = None;
    let mut persistence = 0.0;
    for &seed in seeds {
        let eval = evaluate_forecast(model, &test, args.n_mc, seed)?;
        rmses.push(eval.rmse);
        persistence = eval.persistence_rmse;
        if first.is_none() {
            first = Some((eval.pred_mean, eval.pred_var));
        }
    }
    let truth = test.slice(1, test.len()).y;
    Ok((rmses, persistence, first.unwrap(), truth, "kink".into()))
}

/// Real-data protocol: re-synchronize on the training half of the file with
/// the checkpoint's `q(x0)`, then forecast the held-out half.
fn predict_csv(
    args: &PredictArgs,
    model: &Model<f64>,
    path: &PathBuf,
    seeds: &[u64],
) -> Result<PredictOutput> {
    let seq = data::load_csv(path)?;
    let (train, test) = if args.no_standardize {
        let split = (seq.len() as f64 * args.train_frac).floor() as usize;
        if split < 2 || split >= seq.len() {
            return Err(Error::SequenceTooShort { len: seq.len(), needed: 4 });
        }
        (seq.slice(0, split), seq.slice(split, seq.len()))
    } else {
        let (a, b, _) = data::split_standardize(&seq, args.train_frac)?;
        (a, b)
    };
    let q0 = model
        .x0_var()
        .first()
        .ok_or_else(|| Error::InvalidConfig("checkpoint holds no q(x0)".into()))?;
    let init = DiagGaussian {
        mean: q0.mean.clone(),
        var: q0.log_var.iter().map(|v| v.exp()).collect(),
    };
    let horizon = test.len();
    let future_c = if test.d_c() > 0 { Some(&test.c) } else { None };
    let mut rmses = Vec::new();
    let mut first = None;
    for &seed in seeds {
        let (mean, var) =
            ssm::forecast(model, &init, &train, future_c, horizon, args.n_mc, seed)?;
        rmses.push(ssm::rmse(&mean, &test.y)?);
        if first.is_none() {
            first = Some((mean, var));
        }
    }
    let persist = ssm::persistence_forecast(train.y.row(train.len() - 1), horizon);
    let persistence = ssm::rmse(&persist, &test.y)?;
    Ok((rmses, persistence, first.unwrap(), test.y, "csv".into()))
}

// ---------------------------------------------------------------------------
// benchmark

fn timing_data(d_x: usize, t_len: usize) -> Vec<Sequence> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut y = Mat::zeros(t_len, d_x);
    for t in 0..t_len {
        for j in 0..d_x {
            y.set(t, j, data::standard_normal(&mut rng));
        }
    }
    vec![Sequence { y, c: Mat::zeros(t_len, 0), name: "bench".into() }]
}

fn time_forward_elbo(kind: &str, d_x: usize, m: usize, t_len: usize) -> Result<f64> {
    let seqs = timing_data(d_x, t_len);
    let cfg = egpssm::ssm::BuildConfig {
        model: kind.into(),
        d_x,
        m,
        ..egpssm::ssm::BuildConfig::default()
    };
    let model = build_model(&cfg, &seqs)?;
    // one warm-up evaluation, then best of two timed runs
    egpssm::ssm::elbo(&model, &seqs, 1, 0)?;
    let mut best = f64::INFINITY;
    for rep in 0..2 {
        let start = Instant::now();
        egpssm::ssm::elbo(&model, &seqs, 1, rep)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

fn count_spec(kind: ModelKind, d_x: usize, args: &BenchmarkArgs) -> CountSpec {
    // ARD kernel over the latent state: variance + d_x lengthscales
    let theta = args.theta.unwrap_or(d_x + 1);
    CountSpec {
        kind,
        d_x,
        m: args.m,
        q_latent: Some(args.q_latent.unwrap_or(d_x)),
        theta_gp: theta,
        eta: args.eta,
        c: args.c,
    }
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let dims = args.dim_list()?;
    let models = args.model_list()?;

    let mut counts = String::from("model,d_x,m,theta_gp,eta,c,q_latent,params_total,complexity_class\n");
    for kind_name in &models {
        let kind: ModelKind = kind_name.parse()?;
        for &d in &dims {
            let spec = count_spec(kind, d, args);
            let report = count_params(&spec)?;
            counts.push_str(&format!(
                "{kind_name},{d},{},{},{},{},{},{},{}\n",
                spec.m,
                spec.theta_gp,
                spec.eta,
                spec.c,
                spec.q_latent.unwrap(),
                format_f64(report.params_total),
                report.complexity_class
            ));
        }
    }
    write_file(&args.out.join("counts.csv"), &counts)?;

    if !args.skip_timing {
        let mut timing = String::from("model,d_x,m,t_len,elbo_wall_ms\n");
        let mut series = Vec::new();
        for kind_name in &models {
            if kind_name == "odgpssm" {
                continue; // counted, not implemented
            }
            let mut points = Vec::new();
            for &d in &dims {
                let ms = time_forward_elbo(kind_name, d, args.m, args.t)?;
                timing.push_str(&format!("{kind_name},{d},{},{},{ms:.3}\n", args.m, args.t));
                points.push((d as f64, ms));
            }
            series.push(Series { name: kind_name.clone(), points });
        }
        write_file(&args.out.join("timing.csv"), &timing)?;
        if args.svg {
            write_file(
                &args.out.join("timing.svg"),
                &line_chart("forward elbo wall-time", "d_x", "ms", &series),
            )?;
        }
    }
    let report = serde_json::json!({
        "command": "benchmark",
        "dims": dims,
        "m": args.m,
        "t": args.t,
        "models": models,
        "artifacts": {
            "counts": "counts.csv",
            "timing": if args.skip_timing { serde_json::Value::Null } else { "timing.csv".into() },
        },
    });
    write_json(&args.out.join("report.json"), &report)?;
    println!("benchmark artifacts in {}", args.out.display());
    Ok(())
}
