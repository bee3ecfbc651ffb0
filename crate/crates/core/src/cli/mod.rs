//! The `dense` command-line front end.

pub mod config;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    composition_alignment, entity_axis_alignment, export_histogram, inverse_alignment,
    mine_triangles, relation_geometry, symmetry_deviation, write_columns, CompositionVariant,
    Manifest, ManifestEntry,
};
use crate::checkpoint;
use crate::dataio::{augment_reciprocal, build_dataset, build_dataset_dir, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{check_compatible, evaluate, EvalOptions};
use crate::model::ModelParams;
use crate::train::{prepare_dataset, train_prepared};

pub use config::RunConfig;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "DENSE_SEED";
/// Environment variable naming the directory that holds `<dataset>/{train,valid,test}.txt`.
pub const DATA_DIR_ENV: &str = "DENSE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "dense",
    version,
    about = "Quaternion rotation-and-scaling knowledge graph embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints and a JSON-lines log.
    Train(TrainArgs),
    /// Rank a split with a checkpoint and write metrics.
    Eval(EvalArgs),
    /// Export relation geometry and pattern statistics as CSV.
    Analyze(AnalyzeArgs),
    /// Print split and vocabulary sizes.
    Stats(DataArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, or a name looked up under --data-dir.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding named datasets (default: $DENSE_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Units per embedding.
    #[arg(long)]
    pub k: Option<usize>,
    /// Positives per batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Margin.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Negatives per positive.
    #[arg(long)]
    pub neg: Option<usize>,
    /// Adversarial temperature.
    #[arg(long)]
    pub adv_temp: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Epochs between validation runs (0 disables).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Epochs without improvement before the learning rate halves.
    #[arg(long)]
    pub lr_patience: Option<usize>,
    /// Non-improving validations before stopping.
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 = bit-reproducible).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Components to switch off: scaling, adv, reciprocal (comma-separated).
    #[arg(long)]
    pub ablate: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `test` or `valid`.
    #[arg(long)]
    pub split: Option<String>,
    /// Rank against all entities without removing known-true answers.
    #[arg(long, default_missing_value = "true", num_args = 0)]
    pub raw: Option<bool>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Histogram bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Relations whose per-unit geometry is exported.
    #[arg(long, num_args = 1.., value_name = "REL")]
    pub geometry: Option<Vec<String>>,
    /// Relations checked for the symmetry pattern.
    #[arg(long, num_args = 1.., value_name = "REL")]
    pub symmetry: Option<Vec<String>>,
    /// A relation pair checked for the inversion pattern.
    #[arg(long, num_args = 2, value_names = ["R1", "R2"])]
    pub inverse: Option<Vec<String>>,
    /// A relation triple `r1 r2 r3` with r1(x,y) ∧ r2(y,z) ⇒ r3(x,z).
    #[arg(long, num_args = 3, value_names = ["R1", "R2", "R3"])]
    pub composition: Option<Vec<String>>,
    /// compare-to-r3, compare-to-r1, compare-to-r2, scale-square or double-angle.
    #[arg(long)]
    pub variant: Option<String>,
    /// A relation triple whose training triangles are mined, with entity/axis collinearity.
    #[arg(long, num_args = 3, value_names = ["R1", "R2", "R3"])]
    pub triangles: Option<Vec<String>>,
}

impl DataArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: self.test.clone(),
            ..RunConfig::default()
        }
    }
}

impl TrainArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            out: self.out.clone(),
            k: self.k,
            batch: self.batch,
            gamma: self.gamma,
            neg: self.neg,
            adv_temp: self.adv_temp,
            lr: self.lr,
            max_steps: self.max_steps,
            steps_per_epoch: self.steps_per_epoch,
            eval_every: self.eval_every,
            lr_patience: self.lr_patience,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed,
            workers: self.workers,
            ablate: self.ablate.clone(),
            ..self.data.to_config()
        }
    }
}

impl EvalArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            split: self.split.clone(),
            raw: self.raw,
            workers: self.workers,
            ..self.data.to_config()
        }
    }
}

impl AnalyzeArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            bins: self.bins,
            geometry: self.geometry.clone(),
            symmetry: self.symmetry.clone(),
            inverse: self.inverse.clone(),
            composition: self.composition.clone(),
            variant: self.variant.clone(),
            triangles: self.triangles.clone(),
            ..self.data.to_config()
        }
    }
}

/// Config file, then `DENSE_SEED`, then flags.
fn resolve(config_file: Option<&Path>, flags: RunConfig) -> Result<RunConfig> {
    let mut cfg = match config_file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an integer, got `{seed}`")))?;
        cfg.seed = Some(seed);
    }
    cfg.merge(&flags);
    Ok(cfg)
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&resolve(a.data.config.as_deref(), a.to_config())?),
        Command::Eval(a) => cmd_eval(&resolve(a.data.config.as_deref(), a.to_config())?),
        Command::Analyze(a) => cmd_analyze(&resolve(a.data.config.as_deref(), a.to_config())?),
        Command::Stats(a) => cmd_stats(&resolve(a.config.as_deref(), a.to_config())?),
    }
}

/// Loads the raw (unaugmented) dataset named by `cfg`.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let (Some(tr), Some(va), Some(te)) = (&cfg.train, &cfg.valid, &cfg.test) {
        return build_dataset(tr, va, te);
    }
    if cfg.train.is_some() || cfg.valid.is_some() || cfg.test.is_some() {
        return Err(Error::Config(
            "--train, --valid and --test must be given together".into(),
        ));
    }
    let name = cfg.dataset.as_deref().ok_or_else(|| {
        Error::Config("no dataset given (use --dataset or --train/--valid/--test)".into())
    })?;
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return build_dataset_dir(&direct);
    }
    let root = cfg
        .data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(format!("dataset `{name}` is not a directory and neither --data-dir nor {DATA_DIR_ENV} is set"))
        })?;
    for candidate in [name.to_owned(), name.to_lowercase(), name.to_uppercase()] {
        let dir = root.join(&candidate);
        if dir.is_dir() {
            return build_dataset_dir(&dir);
        }
    }
    Err(Error::Config(format!(
        "dataset `{name}` not found under {}",
        root.display()
    )))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn echo_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&out.join("effective_config.txt"), &cfg.render())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let tcfg = cfg.training()?;
    let out = output_dir(cfg)?;
    let mut echoed = cfg.clone();
    echoed.fill_training(&tcfg);
    echo_config(&out, &echoed)?;

    let raw = load_dataset(cfg)?;
    let ds = prepare_dataset(&raw, &tcfg)?;
    log::info!(
        "training on {} triples ({} entities, {} relations), k={}",
        ds.train.len(),
        ds.num_entities(),
        ds.num_relations(),
        tcfg.k
    );
    let outcome = train_prepared(&ds, &tcfg)?;

    let mut log_body = String::new();
    for rec in &outcome.log {
        log_body.push_str(&serde_json::to_string(rec).expect("log record serializes"));
        log_body.push('\n');
    }
    write_file(&out.join("train_log.jsonl"), &log_body)?;
    checkpoint::save(&outcome.best, &out.join("checkpoint_best.bin"))?;
    checkpoint::save(&outcome.last, &out.join("checkpoint_final.bin"))?;

    if ds.valid.is_empty() {
        println!("{{\"steps\": {}}}", outcome.steps);
        return Ok(());
    }
    let opts = EvalOptions {
        filtered: true,
        workers: tcfg.workers,
    };
    let metrics = evaluate(&outcome.best, &ds, Split::Valid, &opts)?.metrics;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_file(&out.join("valid_metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

/// Loads the checkpoint and the dataset in the matching reciprocal mode.
fn load_model(cfg: &RunConfig) -> Result<(ModelParams, Dataset)> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let params = checkpoint::load(path)?;
    let raw = load_dataset(cfg)?;
    let ds = if params.reciprocal {
        augment_reciprocal(&raw)?
    } else {
        raw
    };
    check_compatible(&params, &ds)?;
    Ok((params, ds))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let out = output_dir(cfg)?;
    echo_config(&out, cfg)?;
    let (params, ds) = load_model(cfg)?;
    let split: Split = cfg.split.as_deref().unwrap_or("test").parse()?;
    if split == Split::Train {
        log::warn!("ranking the training split");
    }
    let opts = EvalOptions {
        filtered: !cfg.raw.unwrap_or(false),
        workers: cfg.workers(),
    };
    let ev = evaluate(&params, &ds, split, &opts)?;
    let json = serde_json::to_string_pretty(&ev.metrics).expect("metrics serialize");
    write_file(&out.join("metrics.json"), &json)?;
    let mut csv = String::from("relation_name,test_fraction,mrr\n");
    for r in &ev.per_relation {
        csv.push_str(&format!("{},{},{}\n", r.name, r.test_fraction, r.mrr));
    }
    write_file(&out.join("per_relation.csv"), &csv)?;
    println!("{json}");
    Ok(())
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let stats = ds.stats();
    let mut value = serde_json::to_value(stats).expect("stats serialize");
    value["split_overlaps"] = ds.split_overlaps().into();
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("stats serialize")
    );
    Ok(())
}

fn relation_id(ds: &Dataset, name: &str) -> Result<u32> {
    ds.relations.get(name).ok_or_else(|| Error::Vocabulary {
        kind: "relation",
        name: name.to_owned(),
        known: ds.relations.names()[..ds.base_relations()].join(", "),
    })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_owned()
}

fn somes(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().copied().map(Some).collect()
}

fn flatten(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

struct Emitter<'a> {
    out: &'a Path,
    bins: usize,
    manifest: Manifest,
}

impl Emitter<'_> {
    fn columns(
        &mut self,
        file: &str,
        kind: &str,
        relations: &[&str],
        headers: &[&str],
        cols: &[Vec<Option<f64>>],
        excluded: usize,
    ) -> Result<()> {
        write_columns(&self.out.join(file), headers, cols)?;
        self.manifest.files.push(ManifestEntry {
            file: file.to_owned(),
            kind: kind.to_owned(),
            relations: relations.iter().map(|s| s.to_string()).collect(),
            values: cols.first().map_or(0, Vec::len),
            excluded,
            ..ManifestEntry::default()
        });
        Ok(())
    }

    fn histogram(
        &mut self,
        file: &str,
        kind: &str,
        relations: &[&str],
        variant: Option<&str>,
        values: &[f64],
        excluded: usize,
    ) -> Result<()> {
        if values.is_empty() {
            log::warn!("{file}: no values, histogram skipped");
            return Ok(());
        }
        export_histogram(values, self.bins, &self.out.join(file))?;
        self.manifest.files.push(ManifestEntry {
            file: file.to_owned(),
            kind: kind.to_owned(),
            relations: relations.iter().map(|s| s.to_string()).collect(),
            variant: variant.map(str::to_owned),
            bins: Some(self.bins),
            values: values.len(),
            excluded,
        });
        Ok(())
    }
}

fn parse_groups(list: &Option<Vec<String>>, size: usize, flag: &str) -> Result<Vec<Vec<String>>> {
    let Some(items) = list else {
        return Ok(Vec::new());
    };
    if items.is_empty() || items.len() % size != 0 {
        return Err(Error::Config(format!(
            "--{flag} takes {size} relation names"
        )));
    }
    Ok(items.chunks(size).map(<[String]>::to_vec).collect())
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let out = output_dir(cfg)?;
    echo_config(&out, cfg)?;
    let ckpt = cfg.checkpoint.clone().unwrap_or_default();
    let (params, ds) = load_model(cfg)?;
    let bins = cfg.bins.unwrap_or(40);
    if bins == 0 {
        return Err(Error::Config("--bins must be at least 1".into()));
    }
    let variant: CompositionVariant = cfg.variant.as_deref().unwrap_or("compare-to-r3").parse()?;
    let mut em = Emitter {
        out: &out,
        bins,
        manifest: Manifest {
            checkpoint: ckpt.display().to_string(),
            files: Vec::new(),
        },
    };
    let dims: Vec<Option<f64>> = (0..params.k()).map(|i| Some(i as f64)).collect();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut lookup = |name: &str| -> Result<u32> {
        if let Some(&id) = ids.get(name) {
            return Ok(id);
        }
        let id = relation_id(&ds, name)?;
        ids.insert(name.to_owned(), id);
        Ok(id)
    };

    for name in cfg.geometry.iter().flatten() {
        let g = relation_geometry(&params, lookup(name)?)?;
        let deg: Vec<Option<f64>> = g
            .degenerate
            .iter()
            .map(|&d| Some(if d { 1.0 } else { 0.0 }))
            .collect();
        let stem = file_safe(name);
        em.columns(
            &format!("geometry_{stem}.csv"),
            "geometry",
            &[name],
            &["dim", "scale", "psi", "theta", "phi", "degenerate"],
            &[
                dims.clone(),
                somes(&g.scale),
                somes(&g.psi),
                somes(&g.theta),
                somes(&g.phi),
                deg,
            ],
            0,
        )?;
        em.histogram(
            &format!("hist_geometry_{stem}_scale.csv"),
            "scale",
            &[name],
            None,
            &g.scale,
            0,
        )?;
        em.histogram(
            &format!("hist_geometry_{stem}_psi.csv"),
            "psi",
            &[name],
            None,
            &g.psi,
            0,
        )?;
    }

    for name in cfg.symmetry.iter().flatten() {
        let g = relation_geometry(&params, lookup(name)?)?;
        let d = symmetry_deviation(&g);
        let stem = file_safe(name);
        em.columns(
            &format!("symmetry_{stem}.csv"),
            "symmetry",
            &[name],
            &["dim", "scale", "psi", "scale_dev", "angle_dev"],
            &[
                dims.clone(),
                somes(&g.scale),
                somes(&g.psi),
                somes(&d.scale_dev),
                somes(&d.angle_dev),
            ],
            0,
        )?;
        em.histogram(
            &format!("hist_symmetry_{stem}_scale.csv"),
            "scale",
            &[name],
            None,
            &g.scale,
            0,
        )?;
        em.histogram(
            &format!("hist_symmetry_{stem}_psi.csv"),
            "psi",
            &[name],
            None,
            &g.psi,
            0,
        )?;
    }

    for pair in parse_groups(&cfg.inverse, 2, "inverse")? {
        let (a, b) = (pair[0].as_str(), pair[1].as_str());
        let g1 = relation_geometry(&params, lookup(a)?)?;
        let g2 = relation_geometry(&params, lookup(b)?)?;
        let inv = inverse_alignment(&g1, &g2)?;
        let stem = format!("{}__{}", file_safe(a), file_safe(b));
        let rels = [a, b];
        em.columns(
            &format!("inverse_{stem}.csv"),
            "inverse",
            &rels,
            &[
                "dim",
                "psi_sum",
                "psi_sum_raw",
                "scale_prod",
                "theta_diff",
                "phi_diff",
            ],
            &[
                dims.clone(),
                somes(&inv.psi_sum),
                somes(&inv.psi_sum_raw),
                somes(&inv.scale_prod),
                inv.theta_diff.clone(),
                inv.phi_diff.clone(),
            ],
            inv.excluded_axes,
        )?;
        em.histogram(
            &format!("hist_inverse_{stem}_psi_sum.csv"),
            "psi_sum",
            &rels,
            None,
            &inv.psi_sum,
            0,
        )?;
        em.histogram(
            &format!("hist_inverse_{stem}_scale_prod.csv"),
            "scale_prod",
            &rels,
            None,
            &inv.scale_prod,
            0,
        )?;
        em.histogram(
            &format!("hist_inverse_{stem}_theta_diff.csv"),
            "theta_diff",
            &rels,
            None,
            &flatten(&inv.theta_diff),
            inv.excluded_axes,
        )?;
        em.histogram(
            &format!("hist_inverse_{stem}_phi_diff.csv"),
            "phi_diff",
            &rels,
            None,
            &flatten(&inv.phi_diff),
            inv.excluded_axes,
        )?;
    }

    for triple in parse_groups(&cfg.composition, 3, "composition")? {
        let names: Vec<&str> = triple.iter().map(String::as_str).collect();
        let c = composition_alignment(
            &params,
            lookup(names[0])?,
            lookup(names[1])?,
            lookup(names[2])?,
            variant,
        )?;
        let stem = format!(
            "{}_{}",
            variant.name(),
            names
                .iter()
                .map(|n| file_safe(n))
                .collect::<Vec<_>>()
                .join("__")
        );
        let v = Some(variant.name());
        em.columns(
            &format!("composition_{stem}.csv"),
            "composition",
            &names,
            &[
                "dim",
                "scale_diff",
                "psi_diff",
                "psi_diff_raw",
                "theta_diff",
                "phi_diff",
            ],
            &[
                dims.clone(),
                somes(&c.scale_diff),
                somes(&c.psi_diff),
                somes(&c.psi_diff_raw),
                c.theta_diff.clone(),
                c.phi_diff.clone(),
            ],
            c.excluded_axes,
        )?;
        let show_scale = variant != CompositionVariant::DoubleAngle;
        let show_psi = variant != CompositionVariant::ScaleSquare;
        if show_scale {
            em.histogram(
                &format!("hist_composition_{stem}_scale_diff.csv"),
                "scale_diff",
                &names,
                v,
                &c.scale_diff,
                0,
            )?;
        }
        if show_psi {
            em.histogram(
                &format!("hist_composition_{stem}_psi_diff.csv"),
                "psi_diff",
                &names,
                v,
                &c.psi_diff,
                0,
            )?;
        }
        em.histogram(
            &format!("hist_composition_{stem}_theta_diff.csv"),
            "theta_diff",
            &names,
            v,
            &flatten(&c.theta_diff),
            c.excluded_axes,
        )?;
        em.histogram(
            &format!("hist_composition_{stem}_phi_diff.csv"),
            "phi_diff",
            &names,
            v,
            &flatten(&c.phi_diff),
            c.excluded_axes,
        )?;
    }

    let mut counts = String::from("r1,r2,r3,triangles\n");
    let mut any_triangles = false;
    for triple in parse_groups(&cfg.triangles, 3, "triangles")? {
        any_triangles = true;
        let names: Vec<&str> = triple.iter().map(String::as_str).collect();
        let (r1, r2, r3) = (lookup(names[0])?, lookup(names[1])?, lookup(names[2])?);
        let set = mine_triangles(&ds, r1, r2, r3);
        counts.push_str(&format!(
            "{},{},{},{}\n",
            names[0],
            names[1],
            names[2],
            set.len()
        ));
        let stem = names
            .iter()
            .map(|n| file_safe(n))
            .collect::<Vec<_>>()
            .join("__");
        let mut listing = String::from("x,y,z\n");
        for &(x, y, z) in &set.triangles {
            let n = |e: u32| ds.entities.name(e).unwrap_or_default().to_owned();
            listing.push_str(&format!("{},{},{}\n", n(x), n(y), n(z)));
        }
        let file = format!("triangles_{stem}.csv");
        write_file(&out.join(&file), &listing)?;
        em.manifest.files.push(ManifestEntry {
            file,
            kind: "triangles".into(),
            relations: triple.clone(),
            values: set.len(),
            ..ManifestEntry::default()
        });
        if set.is_empty() {
            log::warn!("no triangles for {}", names.join(" "));
            continue;
        }
        let g = relation_geometry(&params, r1)?;
        let al = entity_axis_alignment(&params, &g, &set)?;
        let excluded = al.skipped_zero_units + al.skipped_degenerate_axes;
        let heads: Vec<Option<f64>> = al.entries.iter().map(|e| Some(e.0 as f64)).collect();
        let units: Vec<Option<f64>> = al.entries.iter().map(|e| Some(e.1 as f64)).collect();
        em.columns(
            &format!("collinearity_{stem}.csv"),
            "collinearity",
            &names,
            &["head", "dim", "theta_diff"],
            &[heads, units, somes(&al.values())],
            excluded,
        )?;
        em.histogram(
            &format!("hist_collinearity_{stem}.csv"),
            "collinearity",
            &names,
            None,
            &al.values(),
            excluded,
        )?;
    }
    if any_triangles {
        write_file(&out.join("triangle_counts.csv"), &counts)?;
        em.manifest.files.push(ManifestEntry {
            file: "triangle_counts.csv".into(),
            kind: "triangle_counts".into(),
            ..ManifestEntry::default()
        });
    }

    let manifest_path = out.join("manifest.json");
    em.manifest.write(&manifest_path)?;
    println!(
        "wrote {} files; manifest at {}",
        em.manifest.files.len(),
        manifest_path.display()
    );
    Ok(())
}
