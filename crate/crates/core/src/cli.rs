//! Command-line interface. `run` parses arguments, dispatches, and maps
//! failures to exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autolabel::{autolabel_pair, segment_colored, HarrisMatcher};
use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{Manifest, ManifestRecord};
use crate::metrics::{
    block_entries, evaluate_patches, evaluate_regions, mean_patch_reports, mean_region_reports,
    patch_table, pr_curve, region_table,
};
use crate::patchsim::{
    build_gt, infer_similarity, init_params, load_checkpoint, load_training_pairs, save_checkpoint,
    train, write_loss_csv, Block, SimMatrix,
};
use crate::pipeline::{predict_pair, PipelineConfig};
use crate::regionize::regionize;
use crate::regionmap::RegionMap;
use crate::regionmatch::greedy_match;
use crate::synthgen::{generate_benchmark, BenchmarkOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "linecorr", version, about = "Region correspondences between line art images")]
pub struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with `model`, `merge`, `theta`, `autolabel`, `train`,
    /// `purity_min` and `topk` sections; missing keys keep defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic pairs with exact ground truth.
    Synth(SynthArgs),
    /// Segment colored images and derive correspondences for training.
    Autolabel(AutolabelArgs),
    /// Train the patch similarity model.
    Train(TrainArgs),
    /// Similarity, regions and correspondences for one pair.
    Infer(InferArgs),
    /// Region map of one image, from a similarity matrix or colors.
    Segment(SegmentArgs),
    /// Match the regions of two images using a similarity matrix.
    Match(MatchArgs),
    /// Patch-level precision, recall, AP and top-K on a manifest.
    EvalPatch(EvalPatchArgs),
    /// Region-level metrics of predicted against ground-truth manifests.
    EvalRegion(EvalRegionArgs),
    /// Serve a dataset for annotation over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of pairs.
    #[arg(long, default_value_t = 25)]
    pub pairs: usize,
    /// Probability scale for opening gaps in contours.
    #[arg(long)]
    pub gap_noise: Option<f64>,
    #[arg(long)]
    pub min_shapes: Option<usize>,
    #[arg(long)]
    pub max_shapes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AutolabelArgs {
    /// Manifest whose records carry `colored_a` and `colored_b`.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest with `regions_a`, `regions_b` and `corr` per record.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub img_a: PathBuf,
    #[arg(long)]
    pub img_b: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Line art image (with `--sim`) or colored image (with `--colored`).
    #[arg(long)]
    pub image: PathBuf,
    /// Similarity matrix from `infer`.
    #[arg(long, required_unless_present = "colored", conflicts_with = "colored")]
    pub sim: Option<PathBuf>,
    /// Which image of the similarity matrix `--image` is.
    #[arg(long, default_value = "a", value_parser = ["a", "b"])]
    pub side: String,
    /// Segment by color instead of by similarity.
    #[arg(long)]
    pub colored: bool,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long)]
    pub regions_a: PathBuf,
    #[arg(long)]
    pub regions_b: PathBuf,
    /// Match threshold; defaults to the config value or 1.5/N.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalPatchArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalRegionArgs {
    /// Predicted manifest (`regions_a`, `regions_b`, `corr` per record).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth manifest, record-aligned with `--pred`.
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Dataset directory containing `manifest.jsonl`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

/// Parses `args` (including the program name) and runs the command.
/// Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
            let _ = writeln!(err, "error: {e}");
            code
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli, name: &str) -> PathBuf {
    cli.out_dir.join(name)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::file(&cli.out_dir, e))?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth(a) => {
            let mut opts = BenchmarkOptions::default();
            if let Some(g) = a.gap_noise {
                opts.scene.gap_noise = g;
            }
            opts.min_shapes = a.min_shapes.unwrap_or(opts.min_shapes);
            opts.max_shapes = a.max_shapes.unwrap_or(opts.max_shapes);
            if opts.min_shapes > opts.max_shapes {
                return Err(Error::invalid("--min-shapes exceeds --max-shapes"));
            }
            opts.scene.validate()?;
            let m = generate_benchmark(&cli.out_dir, a.pairs, seed, &opts)?;
            writeln!(out, "wrote {} pairs to {}", m.records.len(), cli.out_dir.join("manifest.jsonl").display())?;
        }
        Command::Autolabel(a) => {
            if let Some(s) = cli.seed {
                cfg.autolabel.seed = s;
            }
            let m = Manifest::load(&a.manifest)?;
            let labelled = autolabel_manifest(&m, &cfg, &cli.out_dir)?;
            writeln!(out, "labelled {} pairs", labelled.records.len())?;
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = a.batch {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            if a.max_steps.is_some() {
                cfg.train.max_steps = a.max_steps;
            }
            cfg.train.validate()?;
            let m = Manifest::load(&a.manifest)?;
            let pairs = load_training_pairs(&m, &cfg.model)?;
            let init = match &a.init {
                Some(p) => load_checkpoint(p, &cfg.model)?,
                None => init_params(&cfg.model, seed)?,
            };
            let outcome = train(&cfg.model, &pairs, &cfg.train, init, seed, |_| {})?;
            save_checkpoint(&out_path(cli, "model.ckpt"), &outcome.params)?;
            write_loss_csv(&out_path(cli, "loss.csv"), &outcome.log)?;
            if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
                writeln!(out, "{} steps, loss {:.4} -> {:.4}", outcome.log.len(), first.loss, last.loss)?;
            }
        }
        Command::Infer(a) => {
            let params = load_checkpoint(&a.checkpoint, &cfg.model)?;
            let img_a = io::read_gray_png(&a.img_a)?;
            let img_b = io::read_gray_png(&a.img_b)?;
            let pred = predict_pair(&cfg, &params, &img_a, &img_b)?;
            io::write_bytes(&out_path(cli, "sim.bin"), &pred.sim.to_bytes())?;
            pred.regions_a.save(&out_path(cli, "regions_a.png"))?;
            pred.regions_b.save(&out_path(cli, "regions_b.png"))?;
            pred.corr.save(&out_path(cli, "corr.json"))?;
            writeln!(
                out,
                "{} regions in a, {} in b, {} pairs",
                pred.regions_a.regions().len(),
                pred.regions_b.regions().len(),
                pred.corr.pairs.len()
            )?;
        }
        Command::Segment(a) => {
            let regions = if a.colored {
                if let Some(s) = cli.seed {
                    cfg.autolabel.seed = s;
                }
                segment_colored(&io::read_rgb_png(&a.image)?, &cfg.autolabel)?
            } else {
                let sim_path = a.sim.as_ref().ok_or_else(|| Error::invalid("--sim is required"))?;
                let sim = SimMatrix::from_bytes(&io::read_bytes(sim_path)?)?;
                let img = io::read_gray_png(&a.image)?;
                let block = if a.side == "a" { sim.s_aa() } else { sim.s_bb() };
                regionize(block, &img, cfg.model.patch_size, &cfg.merge)?.0
            };
            regions.save(&out_path(cli, "regions.png"))?;
            writeln!(out, "{} regions", regions.regions().len())?;
        }
        Command::Match(a) => {
            let sim = SimMatrix::from_bytes(&io::read_bytes(&a.sim)?)?;
            let ra = RegionMap::load(&a.regions_a)?;
            let rb = RegionMap::load(&a.regions_b)?;
            let theta = a.theta.unwrap_or_else(|| cfg.theta_for(sim.n()));
            let corr = greedy_match(&ra, &rb, sim.s_ab(), sim.s_ba(), theta)?;
            corr.save(&out_path(cli, "corr.json"))?;
            writeln!(out, "{} pairs", corr.pairs.len())?;
        }
        Command::EvalPatch(a) => {
            let m = Manifest::load(&a.manifest)?;
            let params = load_checkpoint(&a.checkpoint, &cfg.model)?;
            let mut reports = Vec::new();
            let (mut scores, mut labels) = (Vec::new(), Vec::new());
            for (i, rec) in m.records.iter().enumerate() {
                let img_a = io::read_gray_png(&m.resolve(&rec.img_a))?;
                let img_b = io::read_gray_png(&m.resolve(&rec.img_b))?;
                let ra = RegionMap::load(&m.require(i, "regions_a", &rec.regions_a)?)?;
                let rb = RegionMap::load(&m.require(i, "regions_b", &rec.regions_b)?)?;
                let corr = CorrSet::load(&m.require(i, "corr", &rec.corr)?)?;
                let sim = infer_similarity(&cfg.model, &params, &img_a, &img_b)?;
                let (gt, ga, gb) = build_gt(&ra, &rb, &corr, &cfg.model)?;
                let rows_a: Vec<bool> = ga.region_id.iter().map(Option::is_some).collect();
                let rows_b: Vec<bool> = gb.region_id.iter().map(Option::is_some).collect();
                reports.extend(evaluate_patches(&sim, &gt, &rows_a, &rows_b, &cfg.topk)?);
                let (s, l) = block_entries(sim.s_ab(), gt.block(Block::AB), &rows_a, false)?;
                scores.extend(s);
                labels.extend(l);
            }
            let mean = mean_patch_reports(&reports);
            io::write_json(&out_path(cli, "patch_report.json"), &mean)?;
            let table = patch_table(&mean);
            io::write_bytes(&out_path(cli, "patch_report.txt"), table.as_bytes())?;
            if labels.iter().any(|&l| l) {
                let mut csv = String::from("threshold,precision,recall\n");
                for p in pr_curve(&scores, &labels)? {
                    csv.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
                }
                io::write_bytes(&out_path(cli, "pr_cross.csv"), csv.as_bytes())?;
            }
            write!(out, "{table}")?;
        }
        Command::EvalRegion(a) => {
            let pred = Manifest::load(&a.pred)?;
            let gt = Manifest::load(&a.gt)?;
            if pred.records.len() != gt.records.len() {
                return Err(Error::invalid(format!(
                    "--pred has {} records but --gt has {}",
                    pred.records.len(),
                    gt.records.len()
                )));
            }
            let load = |m: &Manifest, i: usize| -> Result<(RegionMap, RegionMap, CorrSet)> {
                let r = &m.records[i];
                Ok((
                    RegionMap::load(&m.require(i, "regions_a", &r.regions_a)?)?,
                    RegionMap::load(&m.require(i, "regions_b", &r.regions_b)?)?,
                    CorrSet::load(&m.require(i, "corr", &r.corr)?)?,
                ))
            };
            let mut reports = Vec::new();
            for i in 0..pred.records.len() {
                let (pa, pb, pc) = load(&pred, i)?;
                let (ga, gb, gc) = load(&gt, i)?;
                reports.push(evaluate_regions(
                    &pc,
                    &gc,
                    (pa.labels(), pb.labels()),
                    (ga.labels(), gb.labels()),
                    cfg.purity_min,
                )?);
            }
            let mean = mean_region_reports(&reports).ok_or_else(|| Error::invalid("manifests are empty"))?;
            io::write_json(&out_path(cli, "region_report.json"), &mean)?;
            let table = region_table(&mean);
            io::write_bytes(&out_path(cli, "region_report.txt"), table.as_bytes())?;
            write!(out, "{table}")?;
        }
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::annoserve::serve(&a.dataset, (a.host, a.port).into()))?;
        }
    }
    Ok(())
}

/// Auto-labels every record of `m`, copying its images into `out_dir` so
/// the written manifest is self-contained.
pub fn autolabel_manifest(m: &Manifest, cfg: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    let matcher = HarrisMatcher::default();
    let mut labelled = Manifest::new(out_dir);
    for (i, rec) in m.records.iter().enumerate() {
        let ca = io::read_rgb_png(&m.require(i, "colored_a", &rec.colored_a)?)?;
        let cb = io::read_rgb_png(&m.require(i, "colored_b", &rec.colored_b)?)?;
        let auto = autolabel_pair(&ca, &cb, &cfg.autolabel, &matcher)?;
        let dir = format!("pair_{i:04}");
        let rel = |name: &str| format!("{dir}/{name}");
        let copy = |from: &str, to: &str| -> Result<()> {
            let bytes = io::read_bytes(&m.resolve(from))?;
            io::write_bytes(&out_dir.join(rel(to)), &bytes)
        };
        copy(&rec.img_a, "lineart_a.png")?;
        copy(&rec.img_b, "lineart_b.png")?;
        io::write_rgb_png(&out_dir.join(rel("colored_a.png")), &ca)?;
        io::write_rgb_png(&out_dir.join(rel("colored_b.png")), &cb)?;
        auto.regions_a.save(&out_dir.join(rel("regions_a.png")))?;
        auto.regions_b.save(&out_dir.join(rel("regions_b.png")))?;
        auto.corr.save(&out_dir.join(rel("corr.json")))?;
        labelled.records.push(ManifestRecord {
            img_a: rel("lineart_a.png"),
            img_b: rel("lineart_b.png"),
            colored_a: Some(rel("colored_a.png")),
            colored_b: Some(rel("colored_b.png")),
            regions_a: Some(rel("regions_a.png")),
            regions_b: Some(rel("regions_b.png")),
            corr: Some(rel("corr.json")),
        });
    }
    labelled.save(&out_dir.join("manifest.jsonl"))?;
    Ok(labelled)
}
