//! Command-line surface of `inspex`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use inspex_core::lungseg::{emphysema_percent, mask_volume_ml, segment_lungs, QuantConfig};
use inspex_core::phantom::{cohort_case, PhantomSpec};
use inspex_core::registration::Stage;
use inspex_core::volume::{load_nifti, save_nifti};
use inspex_core::{BinaryMask, InspexError, Volume};
use inspex_harmonizer::{harmonize_volume, load_generator, train, TrainingSlices};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{register_arm, regenerate_report, run_pipeline};

#[derive(Debug, Parser)]
#[command(
    name = "inspex",
    version,
    about = "Kernel harmonization and registration study on paired inspiratory/expiratory CT",
    after_help = "Environment: INSPEX_OUT sets the default output root of `inspex run`.\nExit codes: 0 success, 2 usage, 3 data or format, 4 numerical failure, 5 I/O."
)]
pub struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full two-arm study and write its report.
    Run(RunArgs),
    /// Generate a synthetic phantom cohort.
    Phantom(PhantomArgs),
    /// Train the hard-to-soft slice harmonizer on NIfTI volumes.
    Train(TrainArgs),
    /// Harmonize one volume with a trained checkpoint.
    Harmonize(HarmonizeArgs),
    /// Segment the lungs of one volume.
    Segment(SegmentArgs),
    /// Register a moving volume onto a fixed one.
    Register(RegisterArgs),
    /// Print the emphysema percentage of one volume.
    Quantify(QuantifyArgs),
    /// Rebuild the report of a run directory from its cached case records.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// 96x96x64 phantoms, width-16 harmonizer, 10 epochs of batch 4.
    Desk,
    /// Width-64 harmonizer with 9 residual blocks, 50 epochs of batch 12, fifth-epoch inference.
    Paper,
    /// Four 32^3 cases and two epochs.
    Smoke,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file; missing keys take the preset values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Override a key, e.g. `--set registration.cc_radius=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::load(Some(p), &self.overrides),
            None => {
                let base = match self.preset {
                    Preset::Desk => PipelineConfig::desk(),
                    Preset::Paper => PipelineConfig::paper(),
                    Preset::Smoke => PipelineConfig::smoke(),
                };
                let mut doc = toml::Table::try_from(base).map_err(|e| CliError::Config(e.to_string()))?;
                for o in &self.overrides {
                    crate::config::apply_override(&mut doc, o)?;
                }
                doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (default: paths.out_dir, or the INSPEX_OUT variable).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Case workers; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Recompute every stage even when cached outputs match.
    #[arg(long)]
    pub no_reuse: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Grid shape as X,Y,Z.
    #[arg(long, value_delimiter = ',', default_values_t = [96, 96, 64])]
    pub shape: Vec<usize>,
    /// Emphysema cases.
    #[arg(long, default_value_t = 4)]
    pub cases: usize,
    /// Blob-free controls (written first).
    #[arg(long, default_value_t = 0)]
    pub controls: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest true displacement in voxels.
    #[arg(long, default_value_t = 5.0)]
    pub max_displacement: f64,
    /// Hard-kernel noise, HU.
    #[arg(long, default_value_t = 30.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Source-domain (hard kernel) volumes.
    #[arg(long, num_args = 1.., required = true)]
    pub source: Vec<PathBuf>,
    /// Target-domain (soft kernel) volumes.
    #[arg(long, num_args = 1.., required = true)]
    pub target: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output mask (0/1 NIfTI).
    #[arg(long)]
    pub out: PathBuf,
    /// Air threshold for lung candidates, HU.
    #[arg(long, default_value_t = -320.0, allow_hyphen_values = true)]
    pub air_threshold: f32,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    /// Comma-separated subset of rigid, affine, deform_half, deform_full.
    #[arg(long, value_delimiter = ',', default_value = "rigid,affine,deform_half,deform_full")]
    pub stages: Vec<String>,
    /// Directory for transforms, warped image and fields.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Voxels strictly below this value count as emphysema, HU.
    #[arg(long, default_value_t = -950.0, allow_hyphen_values = true)]
    pub threshold: f32,
    /// Lung mask; segmented from the input when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory written by `inspex run`.
    #[arg(long)]
    pub dir: PathBuf,
}

fn load_mask(path: &Path, shape: [usize; 3]) -> Result<BinaryMask> {
    let v = load_nifti(path)?;
    if v.shape() != shape {
        return Err(InspexError::Shape(v.shape(), shape).into());
    }
    Ok(BinaryMask::from_volume(&v, |x| x > 0.5))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(InspexError::io(p))?;
    Ok(())
}

fn json_text<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::from(InspexError::Data(e.to_string())))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Train(a) => cmd_train(a),
        Command::Harmonize(a) => {
            let v = load_nifti(&a.input)?;
            let (g, window) = load_generator(&a.checkpoint)?;
            save_nifti(&harmonize_volume(&v, &g, window)?, &a.out)?;
            Ok(())
        }
        Command::Segment(a) => {
            let v = load_nifti(&a.input)?;
            let q = QuantConfig {
                air_threshold_hu: a.air_threshold,
                ..QuantConfig::default()
            };
            let lung = segment_lungs(&v, &q)?;
            if let Some(w) = &lung.warning {
                log::warn!("{w}");
            }
            save_nifti(&lung.mask.to_volume(v.grid())?, &a.out)?;
            println!("{:.3}", mask_volume_ml(&lung.mask, v.grid()));
            Ok(())
        }
        Command::Register(a) => cmd_register(a),
        Command::Quantify(a) => {
            let v = load_nifti(&a.input)?;
            let q = QuantConfig {
                emphysema_threshold_hu: a.threshold,
                ..QuantConfig::default()
            };
            let lung = match &a.mask {
                Some(p) => load_mask(p, v.shape())?,
                None => segment_lungs(&v, &q)?.mask,
            };
            println!("{:.4}", emphysema_percent(&v, &lung, &q)?);
            Ok(())
        }
        Command::Report(a) => {
            let r = regenerate_report(&a.dir)?;
            println!("{} cases, report in {}", r.rows.len(), a.dir.join("report").display());
            Ok(())
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(o) = a.out {
        cfg.paths.out_dir = o;
    }
    if let Some(w) = a.workers {
        cfg.run.workers = w;
    }
    if a.no_reuse {
        cfg.run.reuse = false;
    }
    if a.print_config {
        print!("{}", cfg.emit()?);
        return Ok(());
    }
    let out = run_pipeline(&cfg)?;
    for t in &out.report.tests {
        println!(
            "{:<44} n={:<3} statistic={:<12} p={}",
            t.name,
            t.n,
            t.statistic.map_or("NA".into(), |s| format!("{s:.6}")),
            t.p_value.map_or("NA".into(), |p| format!("{p:.3e}"))
        );
    }
    println!("report: {}", out.report_dir.display());
    Ok(())
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let shape: [usize; 3] = a
        .shape
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage("--shape takes three values".into()))?;
    let mut spec = PhantomSpec::desk(shape).with_max_displacement(a.max_displacement);
    spec.hard.noise_hu = a.noise;
    spec.validate()?;
    create_dir(&a.out)?;
    for i in 0..a.controls + a.cases {
        let c = cohort_case(a.controls, i, &spec, a.seed)?;
        let dir = a.out.join(&c.id);
        create_dir(&dir)?;
        let g = c.inspiratory.grid();
        save_nifti(&c.inspiratory, &dir.join("inspiratory_hard.nii.gz"))?;
        save_nifti(&c.inspiratory_soft, &dir.join("inspiratory_soft.nii.gz"))?;
        save_nifti(&c.expiratory, &dir.join("expiratory_soft.nii.gz"))?;
        save_nifti(&c.lung_inspiratory.to_volume(g)?, &dir.join("lung_inspiratory.nii.gz"))?;
        save_nifti(&c.lung_expiratory.to_volume(g)?, &dir.join("lung_expiratory.nii.gz"))?;
        save_nifti(&c.emphysema_inspiratory.to_volume(g)?, &dir.join("emphysema_inspiratory.nii.gz"))?;
        save_nifti(&c.emphysema_expiratory.to_volume(g)?, &dir.join("emphysema_expiratory.nii.gz"))?;
        c.truth_field.save(&dir.join("truth_field.nii.gz"))?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (window, stride) = (cfg.training.window, cfg.harmonization.slice_stride);
    let domain = |paths: &[PathBuf]| -> Result<TrainingSlices> {
        let first = load_nifti(&paths[0])?;
        let [nx, ny, _] = first.shape();
        let mut d = TrainingSlices::new(ny, nx, vec![])?;
        d.extend_from_volume(&first, window, stride)?;
        for p in &paths[1..] {
            d.extend_from_volume(&load_nifti(p)?, window, stride)?;
        }
        Ok(d)
    };
    let (src, dst) = (domain(&a.source)?, domain(&a.target)?);
    let outcome = train(&src, &dst, &cfg.training, &a.out)?;
    for (epoch, p) in &outcome.checkpoints {
        println!("{epoch}\t{}", p.display());
    }
    Ok(())
}

fn cmd_register(a: RegisterArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    cfg.registration.stages = a.stages.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?;
    cfg.registration.validate()?;
    let fixed = load_nifti(&a.fixed)?;
    let moving = load_nifti(&a.moving)?;
    let q = &cfg.quantification;
    let lung_f = segment_lungs(&fixed, q)?.mask;
    let lung_m = segment_lungs(&moving, q)?.mask;
    let moving_in = crate::pipeline::registration_input(&moving, &lung_m, cfg.run.mask_margin)?;
    let emph_m = inspex_core::lungseg::emphysema_mask(&moving, &lung_m, q)?;
    let run = register_arm(&fixed, &lung_f, &moving_in, &emph_m, None, &cfg, "register")?;
    create_dir(&a.out)?;
    let transforms: Vec<(String, &inspex_core::registration::AffineTransform)> =
        run.linear.iter().map(|(s, t)| (s.name().to_string(), t)).collect();
    let text = json_text(&transforms)?;
    inspex_core::io::write_atomic_str(&a.out.join("transforms.json"), &text)?;
    println!("{text}");
    if let Some(r) = run.full.as_ref().or(run.half.as_ref()) {
        let warped: Volume = inspex_core::registration::warp_volume_fill(
            &moving,
            &r.forward,
            inspex_core::volume::Interp::Linear,
            -1024.0,
        )?;
        save_nifti(&warped, &a.out.join("warped.nii.gz"))?;
        r.forward.save(&a.out.join("forward.nii.gz"))?;
        r.inverse.save(&a.out.join("inverse.nii.gz"))?;
        save_nifti(&r.inverse_warped, &a.out.join("inverse_warped.nii.gz"))?;
    }
    inspex_core::io::write_atomic_str(&a.out.join("scores.json"), &json_text(&run.record)?)?;
    Ok(())
}
