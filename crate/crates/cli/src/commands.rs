use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use fcn_core::data::{
    generate_synthetic, load_dataset, load_label_embeddings, save_dataset, save_label_embeddings, split_dataset,
    Dataset, Split, SyntheticConfig, EMBEDDINGS_FILE,
};
use fcn_core::gradcheck::{check_gradients, Corruption, GradCheckConfig, TensorCheck};
use fcn_core::graph::LabelGraph;
use fcn_core::metrics::{evaluate, EvalResult};
use fcn_core::model::{load_model, save_model, Fcn};
use fcn_core::training::{train as train_fcn, train_linear_baseline, write_history, GraphFcn, LinearBaseline};
use fcn_core::Tensor;

use crate::config::{apply_overrides, load_json, require, RunConfig};
use crate::{
    ablate, BuildGraphArgs, Command, EvalArgs, GenDataArgs, GradcheckArgs, RunArgs, TrainArgs, ValidationError,
};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.bin";
pub const BASELINE_FILE: &str = "baseline.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_MD: &str = "metrics.md";

pub fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a).map(|_| ()),
        Command::BuildGraph(a) => build_graph(&a).map(|_| ()),
        Command::Train(a) => {
            let r = train(&a)?;
            println!("{}", summary_line("test", &r));
            Ok(())
        }
        Command::Eval(a) => {
            let r = eval(&a)?;
            println!("{}", summary_line(&a.split, &r));
            Ok(())
        }
        Command::Ablate(a) => {
            let report = ablate::run(&a)?;
            print!("{}", report.to_markdown());
            if let Some(failed) = report.rows.iter().find(|r| r.error.is_some()) {
                bail!(
                    "ablation row {} failed: {}",
                    failed.setting,
                    failed.error.as_deref().unwrap_or("")
                );
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            let checks = gradcheck(&a)?;
            let failed: Vec<&TensorCheck> = checks.iter().filter(|c| !c.passed).collect();
            if !failed.is_empty() {
                bail!(
                    "gradient check failed for {}",
                    failed.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
                );
            }
            Ok(())
        }
    }
}

fn summary_line(split: &str, r: &EvalResult) -> String {
    format!(
        "{split}: mAP {:.2}  CF1 {:.2}  OF1 {:.2}  top-3 CF1 {:.2}  top-3 OF1 {:.2}",
        r.map * 100.0,
        r.all.cf1 * 100.0,
        r.all.of1 * 100.0,
        r.top3.cf1 * 100.0,
        r.top3.of1 * 100.0
    )
}

fn parse_split_ratios(s: &str) -> Result<[u32; 3], ValidationError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parsed: Option<Vec<u32>> = parts.iter().map(|p| p.parse().ok()).collect();
    match parsed {
        Some(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        _ => Err(ValidationError(vec![format!(
            "--split {s:?} must be three integers like 8,1,1"
        )])),
    }
}

pub fn gen_data(args: &GenDataArgs) -> anyhow::Result<Dataset> {
    let ratios = parse_split_ratios(&args.split)?;
    let data = generate_synthetic(&SyntheticConfig {
        num_outfits: args.outfits,
        num_labels: args.labels,
        rule_count: args.rules,
        n_attrs: args.n_attrs,
        feat_dim: args.dim,
        embed_dim: args.embed_dim,
        n_max: args.n_max,
        num_items: args.items,
        seed: args.seed,
        ..SyntheticConfig::default()
    })?;
    let dataset = split_dataset(data.dataset, ratios, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_dataset(&dataset, &args.out)?;
    save_label_embeddings(&args.out.join(EMBEDDINGS_FILE), dataset.vocabulary(), &data.embeddings)?;
    log::info!(
        "wrote {} outfits, {} items, {} labels to {}",
        dataset.outfits().len(),
        dataset.items().len(),
        dataset.num_labels(),
        args.out.display()
    );
    Ok(dataset)
}

/// Co-occurrence graph over the labelled training outfits.
pub fn graph_for(dataset: &Dataset) -> anyhow::Result<LabelGraph> {
    let train = dataset.labelled_indices(Split::Train);
    if train.is_empty() {
        bail!(ValidationError(vec!["dataset has no labelled training outfits".into()]));
    }
    Ok(LabelGraph::from_labels(
        dataset.num_labels(),
        train.iter().map(|&i| dataset.outfits()[i].labels.as_slice()),
    )?)
}

pub fn build_graph(args: &BuildGraphArgs) -> anyhow::Result<LabelGraph> {
    let dataset = load_dataset(&args.data)?;
    let graph = graph_for(&dataset)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    graph.save(&args.out)?;
    Ok(graph)
}

fn load_graph_for(path: &Path, dataset: &Dataset) -> anyhow::Result<LabelGraph> {
    let graph = LabelGraph::load(path)?;
    if graph.num_labels() != dataset.num_labels() {
        bail!(ValidationError(vec![format!(
            "graph has {} labels, dataset has {}",
            graph.num_labels(),
            dataset.num_labels()
        )]));
    }
    Ok(graph)
}

/// Effective configuration after file, flags and overrides.
pub fn resolve_config(run: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(run.config.as_deref())?.with_overrides(&run.overrides)?;
    if let Some(seed) = run.seed {
        cfg.train.seed = seed;
    }
    if run.data.is_some() {
        cfg.paths.data = run.data.clone();
    }
    if run.graph.is_some() {
        cfg.paths.graph = run.graph.clone();
    }
    if run.run_dir.is_some() {
        cfg.paths.run_dir = run.run_dir.clone();
    }
    Ok(cfg)
}

/// Loaded inputs shared by `train` and `ablate`.
pub struct Inputs {
    pub dataset: Dataset,
    pub graph: LabelGraph,
    pub embeddings: Tensor,
}

pub fn load_inputs(cfg: &RunConfig) -> anyhow::Result<Inputs> {
    let data_dir = require(&cfg.paths.data, "data")?;
    let dataset = load_dataset(&data_dir)?;
    let graph = match &cfg.paths.graph {
        Some(p) => load_graph_for(p, &dataset)?,
        None => graph_for(&dataset)?,
    };
    let embeddings = load_label_embeddings(
        &data_dir.join(EMBEDDINGS_FILE),
        dataset.vocabulary(),
        dataset.embed_dim(),
        cfg.train.seed,
    )?
    .matrix;
    Ok(Inputs {
        dataset,
        graph,
        embeddings,
    })
}

/// Trains with `cfg` on preloaded inputs and writes every artifact to `run_dir`.
pub fn train_in(cfg: &RunConfig, inputs: &Inputs, run_dir: &Path, baseline: bool) -> anyhow::Result<EvalResult> {
    let dataset = &inputs.dataset;
    let model_cfg = cfg.model_config(dataset)?;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_json())?;
    let labels: Vec<String> = dataset.vocabulary().names().map(str::to_string).collect();

    let result = if baseline {
        let out = train_linear_baseline(dataset, cfg.baseline.hidden_dim, &cfg.train)?;
        write_history(&run_dir.join(HISTORY_FILE), &out.history)?;
        save_baseline(&out.model, &run_dir.join(BASELINE_FILE))?;
        evaluate(&out.model, dataset, Split::Test)?
    } else {
        let model = Fcn::init(model_cfg, inputs.embeddings.clone(), cfg.train.seed)?;
        let out = train_fcn(model, &inputs.graph.normalized, dataset, &cfg.train)?;
        write_history(&run_dir.join(HISTORY_FILE), &out.history)?;
        save_model(&out.model, &run_dir.join(MODEL_FILE))?;
        log::info!(
            "best validation mAP {:.4} at epoch {}",
            out.best_val_map,
            out.best_epoch
        );
        let predictor = GraphFcn {
            model: out.model,
            a_hat: &inputs.graph.normalized,
        };
        evaluate(&predictor, dataset, Split::Test)?
    };
    result.write(&labels, &run_dir.join(METRICS_JSON), &run_dir.join(METRICS_MD))?;
    Ok(result)
}

pub fn train(args: &TrainArgs) -> anyhow::Result<EvalResult> {
    let cfg = resolve_config(&args.run)?;
    let run_dir = require(&cfg.paths.run_dir, "run_dir")?;
    let inputs = load_inputs(&cfg)?;
    train_in(&cfg, &inputs, &run_dir, args.baseline)
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    w1: Tensor,
    w2: Tensor,
}

fn save_baseline(model: &LinearBaseline, path: &Path) -> anyhow::Result<()> {
    let file = BaselineFile {
        w1: model.w1.clone(),
        w2: model.w2.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<EvalResult> {
    let split: Split = args
        .split
        .parse()
        .map_err(|_| ValidationError(vec![format!("unknown split {:?}", args.split)]))?;
    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    model.check_dataset(&dataset)?;
    let graph = load_graph_for(&args.graph, &dataset)?;
    let predictor = GraphFcn {
        model,
        a_hat: &graph.normalized,
    };
    let result = evaluate(&predictor, &dataset, split)?;
    let out: PathBuf = match &args.out {
        Some(o) => o.clone(),
        None => args
            .model
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out)?;
    let labels: Vec<String> = dataset.vocabulary().names().map(str::to_string).collect();
    let name = split.name();
    result.write(
        &labels,
        &out.join(format!("metrics_{name}.json")),
        &out.join(format!("metrics_{name}.md")),
    )?;
    Ok(result)
}

pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<Vec<TensorCheck>> {
    let cfg: GradCheckConfig = apply_overrides(load_json(args.config.as_deref())?, &args.overrides)?;
    let corruption = if args.corrupt_backward {
        Corruption::ScaleFirstGradient
    } else {
        Corruption::None
    };
    let checks = check_gradients(&cfg, corruption)?;
    for c in &checks {
        println!(
            "{:<28} max_rel_err {:.3e}  skipped {:>3}  {}",
            c.name,
            c.max_rel_error,
            c.skipped,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(checks)
}
