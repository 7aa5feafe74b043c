use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stagewise_core::bc::{eval_policy, train_bc, BcReport, PolicyConfig, PolicyModel, POLICY_VERSION};
use stagewise_core::checkpoint::{self, Metadata};
use stagewise_core::dataset::{self, read_json, read_jsonl, write_json, write_jsonl, Dataset, Quality};
use stagewise_core::estimator::{train, EstimatorModel, HeadSpec, ESTIMATOR_VERSION};
use stagewise_core::eval::{demo_mse, evaluate_rollouts, EvalReport, RolloutClass};
use stagewise_core::labeling::{compute_priors, label_dataset, PriorProfile, ProgressLabel};
use stagewise_core::predictor::{progress_curve, ConstantPredictor, LearnedPredictor, OraclePredictor, ProgressPredictor};
use stagewise_core::rabc::weight_dataset;
use stagewise_core::sampler::{build_training_set, effective_gap, SampleRecord, SamplerConfig, SequenceSample};
use stagewise_core::sim::{gen_experts, gen_rollout_set, gen_suboptimal, write_dataset, SimTrajectory};
use stagewise_core::trajectory::{filter_dataset, split_dataset, FilterReport, Split, Trajectory};
use stagewise_core::{Error, Exec};

use crate::config::Config;
use crate::{Cli, Command, PredictorArgs, WeightArgs};

const PRIORS_FILE: &str = "priors.json";
const FILTER_FILE: &str = "filter.json";
const CLASSES_FILE: &str = "classes.jsonl";
const TRACES_FILE: &str = "traces.jsonl";
const MODEL_FILE: &str = "estimator.json";
const TRAIN_REPORT_FILE: &str = "train_report.tsv";
const SPLIT_FILE: &str = "split.json";
const DEMO_EVAL_FILE: &str = "demo_eval.json";
const BC_TABLE_FILE: &str = "bc_comparison.tsv";

/// Provenance written next to every command's outputs. Contains no
/// timestamps so reruns are byte-identical.
#[derive(Debug, Serialize)]
struct Stamp<'a> {
    command: &'a str,
    seed: Option<u64>,
    versions: BTreeMap<&'static str, &'static str>,
    config: &'a Config,
}

fn write_stamp(dir: &Path, command: &str, config: &Config) -> Result<()> {
    let versions = BTreeMap::from([
        ("stagewise", env!("CARGO_PKG_VERSION")),
        ("estimator", ESTIMATOR_VERSION),
        ("policy", POLICY_VERSION),
    ]);
    let stamp = Stamp {
        command,
        seed: config.seed,
        versions,
        config,
    };
    write_json(dir.join("stamp.json"), &stamp)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ClassRow {
    rollout_id: String,
    class: RolloutClass,
}

pub fn run(cli: Cli, exec: Exec) -> Result<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    config.apply_seed(cli.seed);
    match cli.command {
        Command::Gen {
            out,
            experts,
            suboptimal,
            rollouts,
        } => {
            let g = &mut config.gen;
            g.experts = experts.unwrap_or(g.experts);
            g.suboptimal = suboptimal.unwrap_or(g.suboptimal);
            g.rollouts_per_class = rollouts.unwrap_or(g.rollouts_per_class);
            gen(&out, &config, exec)
        }
        Command::Label { dataset, out } => label(&dataset, &out, &config, exec),
        Command::Sample {
            dataset,
            labels,
            out,
            per_trajectory,
            min_length_policy,
        } => {
            if let Some(n) = per_trajectory {
                config.train.per_trajectory = n;
            }
            if let Some(p) = min_length_policy {
                config.train.min_length_policy = p.into();
            }
            sample(&dataset, &labels, &out, &config, exec)
        }
        Command::TrainReward {
            dataset,
            labels,
            out,
            epochs,
            per_trajectory,
            holdout,
            min_length_policy,
        } => {
            if let Some(e) = epochs {
                config.estimator.epochs = e;
            }
            if let Some(n) = per_trajectory {
                config.train.per_trajectory = n;
            }
            if let Some(h) = holdout {
                config.train.holdout = h;
            }
            if let Some(p) = min_length_policy {
                config.train.min_length_policy = p.into();
            }
            train_reward(&dataset, &labels, &out, &config, exec)
        }
        Command::EvalDemo {
            checkpoint,
            dataset,
            labels,
            split,
            out,
        } => eval_demo(&checkpoint, &dataset, &labels, split.as_deref(), out.as_deref(), &config, exec),
        Command::EvalRollout {
            traces,
            dataset,
            truth,
            predictor,
            out,
        } => eval_rollout(traces.as_deref(), dataset.as_deref(), truth.as_deref(), &predictor, out.as_deref(), &config, exec),
        Command::Weigh {
            dataset,
            predictor,
            weights,
            out,
        } => {
            apply_weights(&mut config, &weights);
            weigh(&dataset, &predictor, &out, &config, exec)
        }
        Command::TrainBc {
            dataset,
            holdout,
            mode,
            weight_mode,
            seeds,
            epochs,
            predictor,
            weights,
            out,
        } => {
            apply_weights(&mut config, &weights);
            if let Some(w) = weight_mode {
                config.bc.weight_mode = w.into();
            }
            if let Some(e) = epochs {
                config.bc.epochs = e;
            }
            let seeds = if seeds.is_empty() { vec![config.bc.seed] } else { seeds };
            train_bc_cmd(&dataset, holdout.as_deref(), &mode.modes(), &seeds, &predictor, &out, &config, exec)
        }
        Command::Report { run } => report(&run),
    }
}

fn apply_weights(config: &mut Config, args: &WeightArgs) {
    if let Some(k) = args.kappa {
        config.weights.kappa = k;
    }
    if let Some(d) = args.delta {
        config.weights.delta = d;
    }
}

fn gen(out: &Path, config: &Config, exec: Exec) -> Result<()> {
    let g = &config.gen;
    let mut demos: Vec<SimTrajectory> = gen_experts(&config.sim, g.experts, exec)?;
    demos.extend(gen_suboptimal(&config.sim, g.suboptimal, exec)?);
    let manifest = write_dataset(out.join("demos"), "demos", &config.sim, &demos)?;
    log::info!("wrote {} demonstrations to {}", manifest.trajectories.len(), out.join("demos").display());

    if g.rollouts_per_class > 0 {
        let n = g.rollouts_per_class;
        let set = gen_rollout_set(&config.sim, n, n, n, exec)?;
        let dir = out.join("rollouts");
        write_dataset(&dir, "rollouts", &config.sim, &set)?;
        write_jsonl(
            dir.join(CLASSES_FILE),
            set.iter().map(|s| ClassRow {
                rollout_id: s.trajectory.id.clone(),
                class: s.rollout_class().expect("rollout quality"),
            }),
        )?;
        dataset::write_traces(
            dir.join(TRACES_FILE),
            set.iter().map(|s| (s.trajectory.id.as_str(), s.truth.as_slice())),
        )?;
        log::info!("wrote {} rollouts to {}", set.len(), dir.display());
    }
    write_stamp(out, "gen", config)
}

fn label(dataset_dir: &Path, out: &Path, config: &Config, exec: Exec) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let report = filter_dataset(&ds.annotations, &ds.manifest.protocol, &ds.trajectories, exec)?;
    for (id, reasons) in &report.rejected {
        let why: Vec<String> = reasons.iter().map(ToString::to_string).collect();
        log::info!("rejected {id}: {}", why.join("; "));
    }
    let kept: Vec<_> = ds
        .annotations
        .iter()
        .filter(|a| report.kept.contains(&a.trajectory_id))
        .cloned()
        .collect();
    let priors = compute_priors(&kept, &ds.trajectories)?;
    let labeled = label_dataset(&kept, &ds.trajectories, &priors, exec)?;
    for (id, labels) in &labeled.labels {
        dataset::write_labels(out.join("labels").join(format!("{id}.jsonl")), labels)?;
    }
    write_json(out.join(FILTER_FILE), &report)?;
    write_json(out.join(PRIORS_FILE), &priors)?;
    write_json(out.join("summary.json"), &labeled.summary)?;
    log::info!(
        "kept {} of {} trajectories; alpha = {:?}",
        report.kept.len(),
        ds.annotations.len(),
        priors.alpha
    );
    write_stamp(out, "label", config)
}

struct Labeled {
    priors: PriorProfile,
    kept: Vec<String>,
    labels: BTreeMap<String, Vec<ProgressLabel>>,
}

fn load_labels(dir: &Path) -> Result<Labeled> {
    let priors: PriorProfile = read_json(dir.join(PRIORS_FILE))?;
    let report: FilterReport = read_json(dir.join(FILTER_FILE))?;
    let mut labels = BTreeMap::new();
    for id in &report.kept {
        labels.insert(id.clone(), dataset::read_labels(dir.join("labels").join(format!("{id}.jsonl")))?);
    }
    Ok(Labeled {
        priors,
        kept: report.kept,
        labels,
    })
}

fn items<'a>(ds: &'a Dataset, labeled: &'a Labeled, ids: &[String]) -> Result<Vec<(&'a Trajectory, &'a [ProgressLabel])>> {
    ids.iter()
        .map(|id| {
            let t = ds
                .trajectory(id)
                .ok_or_else(|| Error::Validation(format!("labels reference unknown trajectory `{id}`")))?;
            Ok((t, labeled.labels[id].as_slice()))
        })
        .collect()
}

fn task_vocab(config: &Config, ds: &Dataset) -> Vec<String> {
    let mut vocab = config.estimator.task_vocab.clone();
    for t in &ds.trajectories {
        if !vocab.contains(&t.task_id) {
            vocab.push(t.task_id.clone());
        }
    }
    vocab
}

/// Windows for `items`, honouring the minimum-length policy per trajectory.
fn draw_windows(
    items: &[(&Trajectory, &[ProgressLabel])],
    sampler: &SamplerConfig,
    vocab: &[String],
    per_trajectory: usize,
    config: &Config,
    exec: Exec,
) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for item in items {
        let gap = effective_gap(sampler, &item.0.id, item.0.len(), config.train.min_length_policy)?;
        let cfg = SamplerConfig {
            gap,
            ..sampler.clone()
        };
        out.extend(build_training_set(std::slice::from_ref(item), &cfg, vocab, per_trajectory, exec)?);
    }
    Ok(out)
}

fn sample(dataset_dir: &Path, labels_dir: &Path, out: &Path, config: &Config, exec: Exec) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let labeled = load_labels(labels_dir)?;
    let items = items(&ds, &labeled, &labeled.kept)?;
    let vocab = task_vocab(config, &ds);
    let samples = draw_windows(&items, &config.sampler, &vocab, config.train.per_trajectory, config, exec)?;
    write_jsonl(out.join("samples.jsonl"), samples.iter().map(SampleRecord::from))?;
    log::info!("wrote {} windows", samples.len());
    write_stamp(out, "sample", config)
}

fn train_reward(dataset_dir: &Path, labels_dir: &Path, out: &Path, config: &Config, exec: Exec) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let labeled = load_labels(labels_dir)?;
    let split = split_dataset(&labeled.kept, config.train.holdout, config.sampler.seed)?;
    let vocab = task_vocab(config, &ds);

    let train_items = items(&ds, &labeled, &split.train)?;
    let test_items = items(&ds, &labeled, &split.test)?;
    let samples = draw_windows(&train_items, &config.sampler, &vocab, config.train.per_trajectory, config, exec)?;
    let val_sampler = SamplerConfig {
        p_perturb: 0.0,
        p_rewind: 0.0,
        ..config.sampler.clone()
    };
    let validation = draw_windows(&test_items, &val_sampler, &vocab, config.train.per_trajectory.div_ceil(4), config, exec)?;

    let mut est = config.estimator.clone();
    est.feature_dim = ds.manifest.feature_dim;
    est.task_vocab = vocab;
    est.scheme_id = labeled.priors.scheme_id.clone();
    est.heads.retain(|h| h.scheme_id != est.scheme_id);
    est.heads.push(HeadSpec {
        scheme_id: est.scheme_id.clone(),
        stages: labeled.priors.num_stages(),
    });
    let mut model = EstimatorModel::new(est)?;
    log::info!("training on {} windows ({} parameters)", samples.len(), model.num_params());
    let report = train(&mut model, &samples, &validation, &labeled.priors, exec)?;

    let mut meta = Metadata::new();
    meta.insert("train_trajectories".into(), split.train.len().into());
    meta.insert("train_windows".into(), samples.len().into());
    checkpoint::save_estimator(out.join(MODEL_FILE), &model, std::slice::from_ref(&labeled.priors), meta)?;
    fs::write(out.join(TRAIN_REPORT_FILE), report.to_tsv()).map_err(|e| Error::Io {
        path: out.join(TRAIN_REPORT_FILE),
        source: e,
    })?;
    write_json(out.join(SPLIT_FILE), &split)?;
    if let Some(last) = report.epochs.last() {
        log::info!("final epoch: ce {:.5}, mse {:.5}, val {:?}", last.stage_ce, last.subtask_mse, last.val_mse);
    }
    write_stamp(out, "train-reward", config)
}

fn learned(path: &Path) -> Result<LearnedPredictor> {
    let (model, priors, _) = checkpoint::load_estimator(path)?;
    let priors = priors
        .into_iter()
        .find(|p| p.scheme_id == model.config.scheme_id)
        .ok_or_else(|| Error::Validation(format!("{}: no priors for scheme `{}`", path.display(), model.config.scheme_id)))?;
    Ok(LearnedPredictor { model, priors })
}

fn predictor(args: &PredictorArgs, ds: Option<&Dataset>) -> Result<Box<dyn ProgressPredictor>> {
    if let Some(path) = &args.checkpoint {
        return Ok(Box::new(learned(path)?));
    }
    if let Some(c) = args.constant {
        return Ok(Box::new(ConstantPredictor(c)));
    }
    if args.oracle {
        let ds = ds.ok_or_else(|| Error::Config("--oracle needs a dataset with ground truth".into()))?;
        return Ok(Box::new(OraclePredictor::new(ds.truth.clone())));
    }
    Err(Error::Config("choose a predictor: --oracle, --checkpoint or --constant".into()).into())
}

#[derive(Debug, Serialize, Deserialize)]
struct DemoEval {
    predictor: String,
    trajectories: usize,
    demo_mse: f64,
}

fn eval_demo(
    ckpt: &Path,
    dataset_dir: &Path,
    labels_dir: &Path,
    split: Option<&Path>,
    out: Option<&Path>,
    config: &Config,
    exec: Exec,
) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let labeled = load_labels(labels_dir)?;
    let ids = match split {
        Some(p) => read_json::<Split>(p)?.test,
        None => labeled.kept.clone(),
    };
    let pred = learned(ckpt)?;
    let items = items(&ds, &labeled, &ids)?;
    let mse = demo_mse(&pred, &items, &config.sampler.geometry(), exec)?;
    let result = DemoEval {
        predictor: pred.id(),
        trajectories: ids.len(),
        demo_mse: mse,
    };
    println!("demo_mse\t{mse:.6}\ttrajectories\t{}", ids.len());
    if let Some(out) = out {
        write_json(out, &result)?;
    }
    Ok(())
}

fn eval_rollout(
    traces: Option<&Path>,
    dataset_dir: Option<&Path>,
    truth: Option<&Path>,
    args: &PredictorArgs,
    out: Option<&Path>,
    config: &Config,
    exec: Exec,
) -> Result<()> {
    let (series, mut classes) = match (traces, dataset_dir) {
        (Some(path), _) => (dataset::read_traces(path)?, None),
        (None, Some(dir)) => {
            let ds = Dataset::load(dir)?;
            let pred = predictor(args, Some(&ds))?;
            let geo = config.sampler.geometry();
            let series = ds
                .trajectories
                .iter()
                .map(|t| Ok((t.id.clone(), progress_curve(pred.as_ref(), t, &geo, exec)?)))
                .collect::<Result<Vec<_>>>()?;
            let classes: BTreeMap<String, RolloutClass> = ds
                .manifest
                .trajectories
                .iter()
                .filter_map(|e| {
                    let c = match e.quality? {
                        Quality::RolloutSe => RolloutClass::Success,
                        Quality::RolloutPse => RolloutClass::PartialSuccess,
                        Quality::RolloutFe => RolloutClass::Failure,
                        _ => return None,
                    };
                    Some((e.id.clone(), c))
                })
                .collect();
            (series, (!classes.is_empty()).then_some(classes))
        }
        (None, None) => bail!(Error::Config("eval-rollout needs --traces or --dataset".into())),
    };
    if let Some(path) = truth {
        let rows: Vec<ClassRow> = read_jsonl(path)?;
        classes = Some(rows.into_iter().map(|r| (r.rollout_id, r.class)).collect());
    }
    let report = evaluate_rollouts(&series, classes.as_ref())?;
    print_eval(&report);
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn print_eval(r: &EvalReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("rho\t{}\txi\t{}", fmt(r.rho), fmt(r.xi));
    for (class, tally) in &r.per_class {
        println!("{class}\t{tally}");
    }
}

fn weigh(dataset_dir: &Path, args: &PredictorArgs, out: &Path, config: &Config, exec: Exec) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let pred = predictor(args, Some(&ds))?;
    let (table, _) = weight_dataset(pred.as_ref(), &ds.trajectories, &config.weights, &config.sampler.geometry(), exec)?;
    let header = serde_json::to_value(&table.header).map_err(|e| Error::Format {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    let rows = table
        .rows
        .iter()
        .map(|r| serde_json::to_value(r).expect("plain struct"));
    write_jsonl(out, std::iter::once(header).chain(rows))?;
    log::info!(
        "{} chunks weighted, {} skipped; mu {:.5}, sigma {:.5}",
        table.rows.len(),
        table.skipped.len(),
        table.header.mu,
        table.header.sigma
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct BcRow {
    mode: String,
    seed: u64,
    holdout_mse: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_bc_cmd(
    dataset_dir: &Path,
    holdout_dir: Option<&Path>,
    modes: &[stagewise_core::bc::BcMode],
    seeds: &[u64],
    args: &PredictorArgs,
    out: &Path,
    config: &Config,
    exec: Exec,
) -> Result<()> {
    let ds = Dataset::load(dataset_dir)?;
    let (train_trajs, eval_trajs): (Vec<Trajectory>, Vec<Trajectory>) = match holdout_dir {
        Some(dir) => (ds.trajectories.clone(), Dataset::load(dir)?.trajectories),
        None => {
            let ids: Vec<String> = ds.trajectories.iter().map(|t| t.id.clone()).collect();
            let split = split_dataset(&ids, config.train.holdout, config.bc.seed)?;
            let pick = |set: &[String]| ds.trajectories.iter().filter(|t| set.contains(&t.id)).cloned().collect();
            (pick(&split.train), pick(&split.test))
        }
    };
    let needs_predictor = modes.contains(&stagewise_core::bc::BcMode::RaBc);
    let pred = if needs_predictor {
        Some(predictor(args, Some(&ds))?)
    } else {
        None
    };
    let first = train_trajs.first().context("empty training dataset")?;
    let geo = config.sampler.geometry();

    let mut rows = Vec::new();
    for &seed in seeds {
        for &mode in modes {
            let mut policy = PolicyModel::new(PolicyConfig {
                obs_dim: first.feature_dim(),
                action_dim: first.action_dim(),
                seed,
                ..config.policy.clone()
            })?;
            let bc = stagewise_core::bc::BcConfig {
                mode,
                seed,
                weights: config.weights,
                ..config.bc.clone()
            };
            let report: BcReport = train_bc(&mut policy, &train_trajs, pred.as_deref(), &geo, &bc, exec)?;
            let mse = eval_policy(&policy, &eval_trajs, exec)?;
            let tag = serde_json::to_value(mode).expect("enum").as_str().expect("string").to_string();
            log::info!("{tag} seed {seed}: hold-out action mse {mse:.6}");
            let mut meta = Metadata::new();
            meta.insert("holdout_mse".into(), mse.into());
            policy.save(out.join(format!("policy-{tag}-{seed}.json")), meta)?;
            write_json(out.join(format!("bc_report-{tag}-{seed}.json")), &report)?;
            rows.push(BcRow {
                mode: tag,
                seed,
                holdout_mse: mse,
            });
        }
    }
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let path = out.join(BC_TABLE_FILE);
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    fs::write(&path, w.into_inner()?).map_err(|e| Error::Io { path, source: e })?;
    for (mode, mean) in mode_means(&rows) {
        println!("{mode}\tmean_holdout_mse\t{mean:.6}");
    }
    write_stamp(out, "train-bc", config)
}

fn mode_means(rows: &[BcRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.mode.clone()).or_default();
        e.0 += r.holdout_mse;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Files directly in `dir` or one level below it, sorted.
fn find(dir: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let direct = dir.join(name);
    if direct.is_file() {
        found.push(direct);
    }
    if let Ok(entries) = fs::read_dir(dir) {
        let mut subdirs: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        found.extend(subdirs.into_iter().map(|d| d.join(name)).filter(|p| p.is_file()));
    }
    found
}

fn report(run: &Path) -> Result<()> {
    if !run.is_dir() {
        bail!(Error::Io {
            path: run.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        });
    }
    let mut any = false;
    for p in find(run, PRIORS_FILE) {
        let priors: PriorProfile = read_json(&p)?;
        let alpha: Vec<String> = priors.alpha.iter().map(|a| format!("{a:.4}")).collect();
        println!("priors\t{}\tM={}\talpha=[{}]", p.display(), priors.m, alpha.join(", "));
        any = true;
    }
    for p in find(run, TRAIN_REPORT_FILE) {
        let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        if let Some(last) = text.lines().last() {
            println!("train-reward\t{}\tlast epoch\t{last}", p.display());
            any = true;
        }
    }
    for p in find(run, DEMO_EVAL_FILE) {
        let d: DemoEval = read_json(&p)?;
        println!("eval-demo\t{}\tdemo_mse={:.6}\ttrajectories={}", p.display(), d.demo_mse, d.trajectories);
        any = true;
    }
    for p in find(run, "eval_report.json") {
        let r: EvalReport = read_json(&p)?;
        println!("eval-rollout\t{}", p.display());
        print_eval(&r);
        any = true;
    }
    for p in find(run, BC_TABLE_FILE) {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(&p)
            .map_err(|e| Error::Format {
                path: p.clone(),
                message: e.to_string(),
            })?;
        let rows = rdr.deserialize().collect::<Result<Vec<BcRow>, _>>().map_err(|e| Error::Format {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let means = mode_means(&rows);
        for (mode, m) in &means {
            println!("train-bc\t{}\t{mode}\tmean_holdout_mse={m:.6}", p.display());
        }
        if let (Some(u), Some(r)) = (means.get("uniform"), means.get("ra-bc")) {
            println!("train-bc\tra-bc / uniform = {:.4}", r / u);
        }
        any = true;
    }
    if !any {
        log::warn!("no known artifacts under {}", run.display());
    }
    Ok(())
}
