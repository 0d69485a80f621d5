//! The two-arm study: phantoms, harmonizer training and selection,
//! harmonization, staged registration, quantification and the report.
//!
//! Layout of the output directory:
//! `config.toml`, `manifest.json`, `harmonizer/` (checkpoints, training log,
//! `selection.json`), `cases/<id>/` (volumes, transforms, previews,
//! `record.json`) and `report/`. Every cached stage output stores the hash of
//! the configuration it depends on and is reused only when that matches.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use inspex_core::io::write_atomic_str;
use inspex_core::lungseg::{dilate, emphysema_mask, emphysema_percent, segment_lungs};
use inspex_core::metrics::{build_report, checkerboard, dice, write_slice_png, ArmRecord, CaseRecord, StudyReport};
use inspex_core::phantom::{cohort_case, derive_seed, CaseLabel, PhantomCase, PhantomSpec};
use inspex_core::registration::{
    jacobian_determinant, register_affine, register_deformable_stages, register_rigid, warp_mask, warp_volume_fill,
    AffineTransform, DisplacementField, RegistrationResult, Stage,
};
use inspex_core::volume::{apply_mask, clip_hu, save_nifti, Interp, MaskMode};
use inspex_core::{BinaryMask, InspexError, Volume};
use inspex_harmonizer::{
    harmonize_volume, load_generator, select_checkpoint, train, GeneratorNet, TrainingSlices, ValidationCase,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const ARM_RAW: &str = "raw";
pub const ARM_HARMONIZED: &str = "harmonized";
/// HU window of the masked registration inputs.
pub const REGISTRATION_WINDOW: (f32, f32) = (-1024.0, 0.0);
const AIR_HU: f32 = -1024.0;

/// Cohort seeds derived from the study seed.
pub fn cohort_seeds(seed: u64) -> CohortSeeds {
    CohortSeeds {
        evaluation: derive_seed(seed, 0),
        training: derive_seed(seed, 1),
        validation: derive_seed(seed, 2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSeeds {
    pub evaluation: u64,
    pub training: u64,
    pub validation: u64,
}

/// Hashes of the configuration slices each stage depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub config: String,
    pub phantom: String,
    pub harmonizer: String,
    pub cases: String,
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

impl StageHashes {
    pub fn of(cfg: &PipelineConfig) -> Self {
        let phantom = PipelineConfig::digest(&[&json!(cfg.seed), &to_json(&cfg.phantom)]);
        let harmonizer = if cfg.harmonization.enabled {
            PipelineConfig::digest(&[&json!(phantom), &to_json(&cfg.harmonization), &to_json(&cfg.training)])
        } else {
            "none".into()
        };
        let cases = PipelineConfig::digest(&[
            &json!(phantom),
            &json!(harmonizer),
            &to_json(&cfg.registration),
            &to_json(&cfg.quantification),
            &json!(cfg.run.mask_margin),
        ]);
        let config = PipelineConfig::digest(&[&json!(cases)]);
        Self {
            config,
            phantom,
            harmonizer,
            cases,
        }
    }
}

/// Result-bearing files wrap their payload with the hash they were made under.
#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    hash: String,
    value: T,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| InspexError::Data(e.to_string()))?;
    write_atomic_str(path, &(text + "\n"))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(InspexError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::from(InspexError::Format(format!("{}: {e}", path.display()))))
}

fn write_stamped<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<()> {
    write_json(path, &Stamped { hash: hash.to_string(), value })
}

fn read_stamped<T: DeserializeOwned>(path: &Path, hash: &str) -> Option<T> {
    let s: Stamped<T> = read_json(path).ok()?;
    (s.hash == hash).then_some(s.value)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(InspexError::io(p))?;
    Ok(())
}

/// Selected harmonizer, as recorded in `harmonizer/selection.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonizerChoice {
    /// Checkpoint file name inside `harmonizer/`, or the configured path.
    pub checkpoint: PathBuf,
    pub epoch: Option<usize>,
    /// `(epoch, median |E_harm - E_soft|)` per validated checkpoint.
    pub validation: Vec<(usize, f64)>,
    pub pretrained: bool,
}

pub struct Harmonizer {
    pub choice: HarmonizerChoice,
    pub generator: GeneratorNet,
    pub window: (f32, f32),
}

/// The manifest ties the report to its cases and configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub hashes: StageHashes,
    pub arms: Vec<String>,
    pub stages: Vec<Stage>,
    pub cases: Vec<String>,
    pub complete: bool,
    pub provenance: serde_json::Value,
}

/// Wall-clock time of the study stages (cached stages count as loaded).
#[derive(Clone, Copy, Debug)]
pub struct Timings {
    /// Training, checkpoint selection or loading of the harmonizer.
    pub harmonizer: Duration,
    /// Phantoms, harmonization, segmentation and registration of every case.
    pub cases: Duration,
}

pub struct PipelineOutcome {
    pub report: StudyReport,
    /// Case records in report order.
    pub records: Vec<CaseRecord>,
    pub timings: Timings,
    pub out_dir: PathBuf,
    pub report_dir: PathBuf,
    pub harmonizer: Option<HarmonizerChoice>,
}

pub fn arms(cfg: &PipelineConfig) -> Vec<&'static str> {
    if cfg.harmonization.enabled {
        vec![ARM_RAW, ARM_HARMONIZED]
    } else {
        vec![ARM_RAW]
    }
}

/// Training slices: hard inspiratory (source) and soft expiratory (target).
pub fn training_domains(cfg: &PipelineConfig) -> Result<(TrainingSlices, TrainingSlices)> {
    let spec = cfg.phantom.spec();
    let [nx, ny, _] = cfg.phantom.shape;
    let mut a = TrainingSlices::new(ny, nx, vec![])?;
    let mut b = TrainingSlices::new(ny, nx, vec![])?;
    let seed = cohort_seeds(cfg.seed).training;
    for i in 0..cfg.phantom.n_training {
        let c = cohort_case(0, i, &spec, seed)?;
        a.extend_from_volume(&c.inspiratory, cfg.training.window, cfg.harmonization.slice_stride)?;
        b.extend_from_volume(&c.expiratory, cfg.training.window, cfg.harmonization.slice_stride)?;
    }
    Ok((a, b))
}

pub fn validation_cases(cfg: &PipelineConfig) -> Result<Vec<ValidationCase>> {
    let spec = cfg.phantom.spec();
    let seed = cohort_seeds(cfg.seed).validation;
    (0..cfg.phantom.n_validation)
        .map(|i| {
            let c = cohort_case(0, i, &spec, seed)?;
            Ok(ValidationCase {
                id: format!("validation_{i:03}"),
                hard: c.inspiratory,
                soft: c.inspiratory_soft,
            })
        })
        .collect()
}

fn harmonizer_stage(cfg: &PipelineConfig, out: &Path, hash: &str) -> Result<Option<Harmonizer>> {
    if !cfg.harmonization.enabled {
        return Ok(None);
    }
    if let Some(p) = &cfg.harmonization.checkpoint {
        let (generator, window) = load_generator(p)?;
        let choice = HarmonizerChoice {
            checkpoint: p.clone(),
            epoch: None,
            validation: vec![],
            pretrained: true,
        };
        return Ok(Some(Harmonizer { choice, generator, window }));
    }
    let dir = out.join("harmonizer");
    let marker = dir.join("selection.json");
    let choice = match read_stamped::<HarmonizerChoice>(&marker, hash).filter(|_| cfg.run.reuse) {
        Some(c) => {
            log::info!("harmonizer: reusing {}", c.checkpoint.display());
            c
        }
        None => {
            create_dir(&dir)?;
            let (a, b) = training_domains(cfg)?;
            log::info!("harmonizer: training on {} source and {} target slices", a.len(), b.len());
            let outcome = train(&a, &b, &cfg.training, &dir)?;
            let (epoch, path, validation) = match cfg.training.inference_epoch {
                Some(e) => {
                    let (_, p) = outcome.checkpoints.iter().find(|(k, _)| *k == e).ok_or_else(|| {
                        CliError::Config(format!("no checkpoint for inference epoch {e}; check training.checkpoint_every"))
                    })?;
                    (e, p.clone(), vec![])
                }
                None => {
                    let val = validation_cases(cfg)?;
                    let sel = select_checkpoint(&outcome.checkpoints, &val, &cfg.quantification)?;
                    let scores = sel.scores.iter().map(|s| (s.epoch, s.median_gap)).collect();
                    (sel.epoch, sel.path, scores)
                }
            };
            let name = path.file_name().map(PathBuf::from).unwrap_or(path);
            let c = HarmonizerChoice {
                checkpoint: name,
                epoch: Some(epoch),
                validation,
                pretrained: false,
            };
            write_stamped(&marker, hash, &c)?;
            log::info!("harmonizer: selected epoch {epoch}");
            c
        }
    };
    let (generator, window) = load_generator(&dir.join(&choice.checkpoint))?;
    Ok(Some(Harmonizer { choice, generator, window }))
}

/// Lung-masked (dilated by `margin`) volume clipped to the registration window.
pub fn registration_input(v: &Volume, lung: &BinaryMask, margin: usize) -> Result<Volume> {
    let m = if margin > 0 { dilate(lung, margin) } else { lung.clone() };
    let masked = apply_mask(v, &m, MaskMode::Fill(AIR_HU))?;
    Ok(clip_hu(&masked, REGISTRATION_WINDOW.0, REGISTRATION_WINDOW.1)?)
}

/// Emphysema score, or `None` (with a warning) when no lung was found.
fn score(v: &Volume, lung: &BinaryMask, cfg: &PipelineConfig, what: &str, id: &str) -> Result<Option<f64>> {
    match emphysema_percent(v, lung, &cfg.quantification) {
        Ok(e) => Ok(Some(e)),
        Err(InspexError::InsufficientData(m)) => {
            log::warn!("{id}: {what}: {m}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn lung_mask(v: &Volume, cfg: &PipelineConfig, what: &str, id: &str) -> Result<BinaryMask> {
    let l = segment_lungs(v, &cfg.quantification)?;
    if let Some(w) = &l.warning {
        log::warn!("{id}: {what}: {w}");
    }
    Ok(l.mask)
}

/// Mean Jacobian determinant inside `mask` and the percentage of voxels
/// where it is not positive; `None` for an empty mask.
fn jacobian_in(field: &DisplacementField, mask: &BinaryMask) -> Option<(f64, f64)> {
    let jac = jacobian_determinant(field);
    let (mut sum, mut neg, mut n) = (0.0f64, 0u64, 0u64);
    for (&inside, &j) in mask.bits().iter().zip(jac.data()) {
        if inside {
            sum += j as f64;
            neg += (j <= 0.0) as u64;
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64, 100.0 * neg as f64 / n as f64))
}

/// Everything registration produced for one arm of one case.
pub struct ArmRun {
    pub record: ArmRecord,
    pub linear: Vec<(Stage, AffineTransform)>,
    pub half: Option<RegistrationResult>,
    pub full: Option<RegistrationResult>,
    pub final_field: DisplacementField,
}

/// Registers the expiratory `moving` input onto `fixed_src` through the
/// configured stages and scores every stage.
#[allow(clippy::too_many_arguments)]
pub fn register_arm(
    fixed_src: &Volume,
    fixed_lung: &BinaryMask,
    moving: &Volume,
    moving_emphysema: &BinaryMask,
    truth: Option<(&DisplacementField, &BinaryMask)>,
    cfg: &PipelineConfig,
    id: &str,
) -> Result<ArmRun> {
    let rc = &cfg.registration;
    let fixed = registration_input(fixed_src, fixed_lung, cfg.run.mask_margin)?;
    let fixed_emph = emphysema_mask(fixed_src, fixed_lung, &cfg.quantification)?;
    let grid = fixed.grid().clone();
    let mut record = ArmRecord::default();
    let mut linear = Vec::new();
    let mut current = AffineTransform::identity();
    let mut final_field = DisplacementField::zeros(&grid);
    let score_stage = |stage: Stage, field: &DisplacementField, record: &mut ArmRecord| -> Result<()> {
        let d = dice(&warp_mask(moving_emphysema, field), &fixed_emph)?;
        record.dice.insert(stage, d);
        Ok(())
    };
    if rc.has(Stage::Rigid) {
        let r = register_rigid(&fixed, moving, rc)?;
        if let Some(w) = &r.warning {
            log::warn!("{id}: rigid: {w}");
        }
        current = r.transform;
        final_field = current.to_field(&grid)?;
        score_stage(Stage::Rigid, &final_field, &mut record)?;
        linear.push((Stage::Rigid, current.clone()));
    }
    if rc.has(Stage::Affine) {
        let a = register_affine(&fixed, moving, &current, rc)?;
        if let Some(w) = &a.warning {
            log::warn!("{id}: affine: {w}");
        }
        current = a.transform;
        final_field = current.to_field(&grid)?;
        score_stage(Stage::Affine, &final_field, &mut record)?;
        linear.push((Stage::Affine, current.clone()));
    }
    let (want_half, want_full) = (rc.has(Stage::DeformHalf), rc.has(Stage::DeformFull));
    let out = register_deformable_stages(&fixed, moving, &current, rc, want_half, want_full)?;
    for (stage, res) in [(Stage::DeformHalf, &out.half), (Stage::DeformFull, &out.full)] {
        if let Some(r) = res {
            if let Some(w) = &r.warning {
                log::warn!("{id}: {}: {w}", stage.name());
            }
            score_stage(stage, &r.forward, &mut record)?;
            if let Some((_, pct)) = jacobian_in(&r.forward, fixed_lung) {
                record.jacobian_nonpositive_pct.insert(stage, pct);
            }
            final_field = r.forward.clone();
        }
    }
    if let Some((mean, pct)) = jacobian_in(&final_field, fixed_lung) {
        record.jacobian_mean = Some(mean);
        record.jacobian_negative_pct = Some(pct);
    }
    if let Some((t, m)) = truth {
        record.endpoint_error = Some(final_field.mean_endpoint_error(t, m)?);
    }
    Ok(ArmRun {
        record,
        linear,
        half: out.half,
        full: out.full,
        final_field,
    })
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    spec: PhantomSpec,
    seed: u64,
    harmonizer: Option<&'a Harmonizer>,
    hash: &'a str,
}

fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    Ok(save_nifti(v, path)?)
}

fn label_name(l: CaseLabel) -> &'static str {
    match l {
        CaseLabel::Control => "control",
        CaseLabel::Case => "case",
    }
}

fn write_arm_artifacts(ctx: &Context, dir: &Path, arm: &str, run: &ArmRun, fixed: &Volume, moving: &Volume) -> Result<()> {
    let transforms: Vec<(String, &AffineTransform)> = run.linear.iter().map(|(s, t)| (s.name().to_string(), t)).collect();
    write_json(&dir.join(format!("{arm}_transforms.json")), &transforms)?;
    let warped = warp_volume_fill(moving, &run.final_field, Interp::Linear, AIR_HU)?;
    if ctx.cfg.run.save_volumes {
        save_volume(&warped, &dir.join(format!("{arm}_warped.nii.gz")))?;
    }
    if ctx.cfg.run.save_fields {
        run.final_field.save(&dir.join(format!("{arm}_forward.nii.gz")))?;
        if let Some(r) = run.full.as_ref().or(run.half.as_ref()) {
            r.inverse.save(&dir.join(format!("{arm}_inverse.nii.gz")))?;
        }
    }
    let tiles = ctx.cfg.run.checkerboard_tiles;
    if tiles > 0 {
        let cb = checkerboard(fixed, &warped, tiles)?;
        let z = fixed.shape()[2] / 2;
        write_slice_png(&cb, z, REGISTRATION_WINDOW, &dir.join(format!("{arm}_checkerboard.png")))?;
    }
    Ok(())
}

fn process_case(ctx: &Context, index: usize) -> Result<CaseRecord> {
    let cfg = ctx.cfg;
    let case: PhantomCase = cohort_case(cfg.phantom.n_controls, index, &ctx.spec, ctx.seed)
        .map_err(|e| CliError::stage("phantom", &format!("case index {index}"))(e.into()))?;
    let id = case.id.clone();
    let dir = ctx.out.join("cases").join(&id);
    let record_path = dir.join("record.json");
    if cfg.run.reuse {
        if let Some(r) = read_stamped::<CaseRecord>(&record_path, ctx.hash) {
            log::info!("{id}: reusing cached record");
            return Ok(r);
        }
    }
    create_dir(&dir)?;
    let stage = |s: &str| CliError::stage(s, &id);
    if cfg.run.save_volumes {
        (|| -> Result<()> {
            save_volume(&case.inspiratory, &dir.join("inspiratory_hard.nii.gz"))?;
            save_volume(&case.inspiratory_soft, &dir.join("inspiratory_soft.nii.gz"))?;
            save_volume(&case.expiratory, &dir.join("expiratory_soft.nii.gz"))
        })()
        .map_err(stage("phantom"))?;
    }

    let (lung_hard, lung_soft, lung_exp) = (|| -> Result<_> {
        Ok((
            lung_mask(&case.inspiratory, cfg, "hard inspiratory", &id)?,
            lung_mask(&case.inspiratory_soft, cfg, "soft inspiratory", &id)?,
            lung_mask(&case.expiratory, cfg, "expiratory", &id)?,
        ))
    })()
    .map_err(stage("segment"))?;
    let mut record = CaseRecord {
        id: id.clone(),
        label: label_name(case.label).into(),
        ..Default::default()
    };
    (|| -> Result<()> {
        record.emphysema_hard = score(&case.inspiratory, &lung_hard, cfg, "hard inspiratory", &id)?;
        record.emphysema_soft = score(&case.inspiratory_soft, &lung_soft, cfg, "soft inspiratory", &id)?;
        Ok(())
    })()
    .map_err(stage("quantify"))?;

    let harmonized = match ctx.harmonizer {
        Some(h) => {
            let (v, lung) = (|| -> Result<_> {
                let v = harmonize_volume(&case.inspiratory, &h.generator, h.window)?;
                if cfg.run.save_volumes {
                    save_volume(&v, &dir.join("inspiratory_harmonized.nii.gz"))?;
                }
                let lung = lung_mask(&v, cfg, "harmonized inspiratory", &id)?;
                Ok((v, lung))
            })()
            .map_err(stage("harmonize"))?;
            record.emphysema_harmonized =
                score(&v, &lung, cfg, "harmonized inspiratory", &id).map_err(stage("quantify"))?;
            Some((v, lung))
        }
        None => None,
    };

    let moving = registration_input(&case.expiratory, &lung_exp, cfg.run.mask_margin).map_err(stage("register"))?;
    let moving_emph = emphysema_mask(&case.expiratory, &lung_exp, &cfg.quantification)
        .map_err(|e| stage("quantify")(e.into()))?;
    let truth = Some((&case.truth_field, &case.lung_inspiratory));
    let mut fixed_inputs: Vec<(&str, &Volume, &BinaryMask)> = vec![(ARM_RAW, &case.inspiratory, &lung_hard)];
    if let Some((v, l)) = &harmonized {
        fixed_inputs.push((ARM_HARMONIZED, v, l));
    }
    for (arm, src, lung) in fixed_inputs {
        let what = format!("register:{arm}");
        let run = register_arm(src, lung, &moving, &moving_emph, truth, cfg, &id).map_err(stage(&what))?;
        let fixed = registration_input(src, lung, cfg.run.mask_margin).map_err(stage(&what))?;
        write_arm_artifacts(ctx, &dir, arm, &run, &fixed, &moving).map_err(stage(&what))?;
        log::info!(
            "{id}: {arm}: dice {:?}, endpoint error {:?}",
            run.record.dice.iter().map(|(s, d)| (s.name(), d.value)).collect::<Vec<_>>(),
            run.record.endpoint_error
        );
        record.arms.insert(arm.to_string(), run.record);
    }
    write_stamped(&record_path, ctx.hash, &record)?;
    Ok(record)
}

/// Runs `f(i)` for `i in 0..n` on `workers` threads; results keep index order.
pub fn run_pool<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("pool slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("pool slots").into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn provenance(cfg: &PipelineConfig, hashes: &StageHashes, harmonizer: Option<&HarmonizerChoice>) -> serde_json::Value {
    let mut spec = cfg.phantom.spec();
    spec.seed = 0;
    json!({
        "tool": "inspex",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hashes.config,
        "seed": cfg.seed,
        "cohort_seeds": cohort_seeds(cfg.seed),
        "phantom": {
            "cohort": cfg.phantom,
            "spec": spec,
        },
        "kernels": { "hard": spec.hard, "soft": spec.soft },
        "harmonizer": harmonizer.map(|h| json!({
            "pretrained": h.pretrained,
            "selected_epoch": h.epoch,
            "validation_median_gap": h.validation,
            "training": cfg.training,
        })),
        "registration": cfg.registration,
        "quantification": cfg.quantification,
        "mask_margin": cfg.run.mask_margin,
    })
}

fn write_report(report: &StudyReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    report.write(dir, true)?;
    Ok(())
}

/// Executes the whole study into `cfg.paths.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.paths.out_dir.clone();
    create_dir(&out)?;
    write_atomic_str(&out.join("config.toml"), &cfg.emit()?)?;
    let hashes = StageHashes::of(cfg);
    let arm_names = arms(cfg);
    let n = cfg.phantom.n_controls + cfg.phantom.n_cases;
    let ids: Vec<String> = (0..n)
        .map(|i| format!("{}_{i:03}", if i < cfg.phantom.n_controls { "control" } else { "case" }))
        .collect();
    let mut manifest = Manifest {
        tool: "inspex".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        hashes: hashes.clone(),
        arms: arm_names.iter().map(|s| s.to_string()).collect(),
        stages: cfg.registration.stages.clone(),
        cases: ids,
        complete: false,
        provenance: provenance(cfg, &hashes, None),
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    let started = Instant::now();
    let harmonizer =
        harmonizer_stage(cfg, &out, &hashes.harmonizer).map_err(CliError::stage("harmonizer", "training cohort"))?;
    let choice = harmonizer.as_ref().map(|h| h.choice.clone());
    manifest.provenance = provenance(cfg, &hashes, choice.as_ref());
    write_json(&out.join("manifest.json"), &manifest)?;

    let ctx = Context {
        cfg,
        out: &out,
        spec: cfg.phantom.spec(),
        seed: cohort_seeds(cfg.seed).evaluation,
        harmonizer: harmonizer.as_ref(),
        hash: &hashes.cases,
    };
    let harmonizer_time = started.elapsed();
    let started = Instant::now();
    let results = run_pool(n, cfg.run.worker_count(), |i| process_case(&ctx, i));
    let cases_time = started.elapsed();
    let mut records = Vec::with_capacity(n);
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::error!("{e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        if !records.is_empty() {
            let partial = build_report(&records, &cfg.registration.stages, &arm_names, manifest.provenance.clone())?;
            write_report(&partial, &out.join("report_partial"))?;
        }
        return Err(e);
    }
    let report = build_report(&records, &cfg.registration.stages, &arm_names, manifest.provenance.clone())?;
    let report_dir = out.join("report");
    write_report(&report, &report_dir)?;
    manifest.complete = true;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(PipelineOutcome {
        report,
        records,
        timings: Timings {
            harmonizer: harmonizer_time,
            cases: cases_time,
        },
        out_dir: out,
        report_dir,
        harmonizer: choice,
    })
}

/// Rebuilds `report/` from the cached case records of a run directory.
pub fn regenerate_report(out: &Path) -> Result<StudyReport> {
    let manifest: Manifest = read_json(&out.join("manifest.json"))?;
    let mut records = Vec::with_capacity(manifest.cases.len());
    for id in &manifest.cases {
        let p = out.join("cases").join(id).join("record.json");
        let rec = read_stamped::<CaseRecord>(&p, &manifest.hashes.cases).ok_or_else(|| {
            CliError::from(InspexError::Data(format!("{}: missing or stale case record", p.display())))
        })?;
        records.push(rec);
    }
    let arms: Vec<&str> = manifest.arms.iter().map(String::as_str).collect();
    let report = build_report(&records, &manifest.stages, &arms, manifest.provenance)?;
    write_report(&report, &out.join("report"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_keeps_order() {
        let v = run_pool(17, 3, |i| i * i);
        assert_eq!(v, (0..17).map(|i| i * i).collect::<Vec<_>>());
        assert!(run_pool(0, 4, |i| i).is_empty());
    }

    #[test]
    fn hashes_ignore_paths_and_workers() {
        let a = PipelineConfig::smoke();
        let mut b = a.clone();
        b.paths.out_dir = "/elsewhere".into();
        b.run.workers = 7;
        assert_eq!(StageHashes::of(&a), StageHashes::of(&b));
        b.registration.cc_radius = 2;
        let (ha, hb) = (StageHashes::of(&a), StageHashes::of(&b));
        assert_eq!(ha.harmonizer, hb.harmonizer);
        assert_ne!(ha.cases, hb.cases);
    }
}
