//! The four entry points: `train`, `eval`, `audit`, `sweep`. Each run
//! directory receives the materialized config, a progress log, the best and
//! last checkpoints, and a newline-delimited `key: value` metrics file —
//! enough to reproduce the metrics exactly in deterministic mode.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgcn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tgcn_core::{
    add_reciprocals, count_parameters, evaluate, load_dataset, Error, KnowledgeGraph, Model,
    ParamCounts, RankingReport, Result, Split, Trainer,
};

use crate::config::RunConfig;

/// Loads the three split files named by the config and applies reciprocal
/// augmentation.
pub fn load_augmented(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    if !cfg.reciprocal {
        return Err(Error::Config(
            "the training and evaluation pipeline requires reciprocal = true".into(),
        ));
    }
    let (train, valid, test) = cfg.split_paths()?;
    let kg = load_dataset(train, valid, test)?;
    add_reciprocals(kg)
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iterations_run: u64,
    pub best_val_mrr: f64,
    pub best_iteration: u64,
    pub final_loss: f64,
    pub out_dir: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

fn write_metrics(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (k, v) in fields {
        writeln!(f, "{k}: {v}")?;
    }
    Ok(())
}

fn dataset_label(cfg: &RunConfig) -> String {
    if !cfg.data_dir.is_empty() {
        Path::new(&cfg.data_dir)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| cfg.data_dir.clone())
    } else if !cfg.train_path.is_empty() {
        cfg.train_path.clone()
    } else {
        "synthetic".to_string()
    }
}

/// Trains with periodic validation, early stopping on validation MRR, and
/// checkpointing (best by validation MRR, plus the final state).
pub fn cmd_train(cfg: &RunConfig, quiet: bool) -> Result<TrainOutcome> {
    let kg = load_augmented(cfg)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.cfg"), cfg.serialize())?;
    let mut log = fs::File::create(out_dir.join("progress.log"))?;

    let model_cfg = cfg.model_config(kg.entities.len(), kg.relations.len());
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::<f32>::init(model_cfg, &mut init_rng)?;
    let counts = count_parameters(&model);
    let mut trainer = Trainer::new(model, cfg.train_config())?;

    let best_path = out_dir.join("checkpoint_best.tgcn");
    let last_path = out_dir.join("checkpoint_last.tgcn");
    let make_ckpt = |model: &Model<f32>| Checkpoint {
        run_config: cfg.to_map(),
        entity_names: kg.entities.names().to_vec(),
        relation_names: kg.relations.names().to_vec(),
        model: model.clone(),
    };

    let mut best_val_mrr = f64::NEG_INFINITY;
    let mut best_iteration = 0u64;
    let mut evals_since_best = 0u64;
    let mut final_loss = f64::NAN;
    let mut iterations_run = 0u64;

    while trainer.iteration < cfg.max_iterations {
        let stats = trainer.train_step(&kg)?;
        final_loss = stats.loss;
        iterations_run = stats.iteration + 1;
        if iterations_run.is_multiple_of(cfg.eval_period) {
            let eval_seed = cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(iterations_run);
            let report = evaluate(&trainer.model, &kg, Split::Valid, eval_seed)?;
            let line = format!(
                "iter={} lr={:.6} loss={:.6} val_mrr={:.4}",
                iterations_run, stats.lr, stats.loss, report.mrr
            );
            if !quiet {
                println!("{line}");
            }
            writeln!(log, "{line}")?;
            if report.is_valid && report.mrr > best_val_mrr {
                best_val_mrr = report.mrr;
                best_iteration = iterations_run;
                evals_since_best = 0;
                save_checkpoint(&best_path, &make_ckpt(&trainer.model))?;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    let line = format!(
                        "early stop at iter={iterations_run}: no improvement in {} evaluations",
                        cfg.patience
                    );
                    if !quiet {
                        println!("{line}");
                    }
                    writeln!(log, "{line}")?;
                    break;
                }
            }
        }
    }
    save_checkpoint(&last_path, &make_ckpt(&trainer.model))?;
    if !best_path.exists() {
        // No evaluation improved on -inf (e.g. empty valid split); keep the
        // final state as the best one.
        save_checkpoint(&best_path, &make_ckpt(&trainer.model))?;
    }

    write_metrics(
        &out_dir.join("metrics.txt"),
        &[
            ("dataset", dataset_label(cfg)),
            ("iterations_run", iterations_run.to_string()),
            ("final_loss", format!("{final_loss}")),
            ("best_val_mrr", format!("{best_val_mrr}")),
            ("best_iteration", best_iteration.to_string()),
            ("seed", cfg.seed.to_string()),
            ("nfp", counts.nfp.to_string()),
            ("efp", counts.efp.to_string()),
        ],
    )?;

    Ok(TrainOutcome {
        iterations_run,
        best_val_mrr,
        best_iteration,
        final_loss,
        out_dir,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
    })
}

/// Formats a ranking report as the newline-delimited record the eval
/// command prints and writes.
pub fn format_report(
    dataset: &str,
    split: Split,
    report: &RankingReport,
    counts: &ParamCounts,
) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("dataset", dataset.to_string()),
        ("split", split.as_str().to_string()),
        ("seed", report.seed.to_string()),
        ("n_queries", report.n_queries.to_string()),
        ("mrr", format!("{:.6}", report.mrr)),
        ("hits1", format!("{:.6}", report.hits_at(1))),
        ("hits3", format!("{:.6}", report.hits_at(3))),
        ("hits10", format!("{:.6}", report.hits_at(10))),
        ("nfp", counts.nfp.to_string()),
        ("efp", counts.efp.to_string()),
    ] {
        s.push_str(k);
        s.push_str(": ");
        s.push_str(&v);
        s.push('\n');
    }
    s
}

/// Loads a checkpoint, re-reads its dataset, verifies the persisted
/// vocabulary still matches, and runs the filtered random-protocol
/// evaluation on the requested split.
pub fn cmd_eval(
    checkpoint_path: &Path,
    split: Split,
    seed: u64,
    out: Option<&Path>,
) -> Result<(RankingReport, String)> {
    let ckpt: Checkpoint<f32> = load_checkpoint(checkpoint_path)?;
    let cfg = RunConfig::from_map(&ckpt.run_config)?;
    let kg = load_augmented(&cfg)?;
    if kg.entities.names() != ckpt.entity_names.as_slice()
        || kg.relations.names() != ckpt.relation_names.as_slice()
    {
        return Err(Error::Checkpoint(
            "dataset vocabulary no longer matches the checkpoint".into(),
        ));
    }
    let report = evaluate(&ckpt.model, &kg, split, seed)?;
    let counts = count_parameters(&ckpt.model);
    let text = format_report(&dataset_label(&cfg), split, &report, &counts);
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, &text)?;
    }
    Ok((report, text))
}

/// Parameter audit without training: vocabulary sizes come from
/// `n_entities`/`n_relations` when set, otherwise from the dataset files.
pub fn audit_counts(cfg: &RunConfig) -> Result<ParamCounts> {
    let (n_entities, n_relations_raw) = if cfg.n_entities > 0 && cfg.n_relations > 0 {
        (cfg.n_entities, cfg.n_relations)
    } else {
        let (train, valid, test) = cfg.split_paths()?;
        let kg = load_dataset(train, valid, test)?;
        (kg.entities.len(), kg.relations.len())
    };
    let n_relations = if cfg.reciprocal {
        2 * n_relations_raw
    } else {
        n_relations_raw
    };
    let model_cfg = cfg.model_config(n_entities, n_relations);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f32>::init(model_cfg, &mut rng)?;
    Ok(count_parameters(&model))
}

pub fn format_audit(counts: &ParamCounts) -> String {
    format!(
        "nfp: {}\nnfp_millions: {:.2}\nefp: {}\nefp_millions: {:.2}\nencoder_nfp: {}\nencoder_nfp_millions: {:.2}\n",
        counts.nfp,
        counts.nfp_millions(),
        counts.efp,
        counts.efp_millions(),
        counts.encoder_nfp,
        counts.encoder_nfp_millions(),
    )
}

/// One sweep row: swept value, validation MRR, and for `n_b` sweeps the
/// encoder nonembedding parameter count in millions.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: usize,
    pub mrr: f64,
    pub enfp_millions: Option<f64>,
}

/// Trains and validates once per value of `key` (`n_b` or `g_s`), reusing
/// the base config's hyperparameters for every point. Returns the rows and
/// the rendered plot-ready table.
pub fn cmd_sweep(
    base: &RunConfig,
    key: &str,
    values: &[usize],
    parallel: bool,
    quiet: bool,
) -> Result<(Vec<SweepRow>, String)> {
    if key != "n_b" && key != "g_s" {
        return Err(Error::InvalidArgument(format!(
            "sweep key must be n_b or g_s, got '{key}'"
        )));
    }
    let run_one = |&value: &usize| -> Result<SweepRow> {
        let mut cfg = base.clone();
        cfg.set(key, &value.to_string())?;
        cfg.out_dir = format!("{}/sweep_{key}_{value}", base.out_dir);
        let outcome = cmd_train(&cfg, true)?;
        let enfp_millions = if key == "n_b" {
            Some(audit_counts(&cfg)?.encoder_nfp_millions())
        } else {
            None
        };
        if !quiet {
            println!("sweep {key}={value}: val_mrr={:.4}", outcome.best_val_mrr);
        }
        Ok(SweepRow {
            value,
            mrr: outcome.best_val_mrr,
            enfp_millions,
        })
    };
    let rows: Vec<SweepRow> = if parallel {
        // Runs are fully independent: separate configs, rngs and out dirs.
        std::thread::scope(|scope| {
            let handles: Vec<_> = values.iter().map(|v| scope.spawn(move || run_one(v))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        values.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };

    let mut table = if key == "n_b" {
        format!("# {key}\tmrr\tenfp_millions\n")
    } else {
        format!("# {key}\tmrr\n")
    };
    for row in &rows {
        match row.enfp_millions {
            Some(e) => table.push_str(&format!("{}\t{:.4}\t{:.3}\n", row.value, row.mrr, e)),
            None => table.push_str(&format!("{}\t{:.4}\n", row.value, row.mrr)),
        }
    }
    Ok((rows, table))
}
