//! Cycle-consistent adversarial training loop and checkpoint I/O.

use std::path::{Path, PathBuf};

use inspex_autodiff::{adam_step, load_checkpoint, save_checkpoint, AdamState, Checkpoint, Graph, NodeId, Tensor};
use inspex_core::volume::normalize_value;
use inspex_core::Volume;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarmonizerError, Result};
use crate::losses::{cycle_loss, lsgan_d_loss, lsgan_g_loss};
use crate::nets::{DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, ParamSet};
use crate::pool::ReplayPool;
use crate::schedule::{lr_schedule, TrainingConfig};

/// Normalized single-channel slices of one domain, all `h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSlices {
    pub h: usize,
    pub w: usize,
    pub slices: Vec<Vec<f32>>,
}

impl TrainingSlices {
    pub fn new(h: usize, w: usize, slices: Vec<Vec<f32>>) -> Result<Self> {
        if let Some(s) = slices.iter().find(|s| s.len() != h * w) {
            return Err(HarmonizerError::Usage(format!("slice of {} values in a {h}x{w} domain", s.len())));
        }
        Ok(Self { h, w, slices })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Appends every `stride`-th axial slice of `v`, normalized with `window`.
    pub fn extend_from_volume(&mut self, v: &Volume, window: (f32, f32), stride: usize) -> Result<()> {
        let [nx, ny, _] = v.shape();
        if (ny, nx) != (self.h, self.w) {
            return Err(HarmonizerError::Usage(format!(
                "volume slices are {ny}x{nx}, domain holds {}x{}",
                self.h, self.w
            )));
        }
        self.slices.extend(volume_slices(v, window, stride));
        Ok(())
    }
}

/// Every `stride`-th axial slice (rows along y), mapped from `window` to [-1, 1].
pub fn volume_slices(v: &Volume, window: (f32, f32), stride: usize) -> Vec<Vec<f32>> {
    let nz = v.shape()[2];
    (0..nz)
        .step_by(stride.max(1))
        .map(|z| v.axial_slice(z).iter().map(|&x| normalize_value(x, window.0, window.1)).collect())
        .collect()
}

/// Both generators (`g_ab`: source to target, `g_ba`: back) and their
/// discriminators (`d_a` judges source-domain images, `d_b` target-domain).
#[derive(Clone, Debug, PartialEq)]
pub struct CycleModel {
    pub g_ab: GeneratorNet,
    pub g_ba: GeneratorNet,
    pub d_a: DiscriminatorNet,
    pub d_b: DiscriminatorNet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    window: (f32, f32),
    epoch: usize,
    training: TrainingConfig,
}

impl CycleModel {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            g_ab: GeneratorNet::new(g, &mut rng)?,
            g_ba: GeneratorNet::new(g, &mut rng)?,
            d_a: DiscriminatorNet::new(d, &mut rng)?,
            d_b: DiscriminatorNet::new(d, &mut rng)?,
        })
    }

    fn parts(&self) -> [(&'static str, &ParamSet); 4] {
        [
            ("g_ab.", &self.g_ab.params),
            ("g_ba.", &self.g_ba.params),
            ("d_a.", &self.d_a.params),
            ("d_b.", &self.d_b.params),
        ]
    }

    pub fn save(&self, path: &Path, epoch: usize, cfg: &TrainingConfig) -> Result<()> {
        let tensors = self.parts().iter().flat_map(|(p, s)| s.prefixed(p)).collect();
        let sidecar = Sidecar {
            generator: self.g_ab.config,
            discriminator: self.d_a.config,
            window: cfg.window,
            epoch,
            training: cfg.clone(),
        };
        let sidecar = serde_json::to_value(sidecar).map_err(|e| HarmonizerError::Checkpoint(e.to_string()))?;
        save_checkpoint(path, &Checkpoint { tensors, sidecar })?;
        Ok(())
    }

    /// Returns the model, its training window and epoch.
    pub fn load(path: &Path) -> Result<(Self, (f32, f32), usize)> {
        let ck = load_checkpoint(path)?;
        let side: Sidecar = serde_json::from_value(ck.sidecar.clone())
            .map_err(|e| HarmonizerError::Checkpoint(format!("{}: sidecar: {e}", path.display())))?;
        let mut m = Self::new(side.generator, side.discriminator, 0)?;
        m.g_ab.params.load_prefixed("g_ab.", &ck.tensors)?;
        m.g_ba.params.load_prefixed("g_ba.", &ck.tensors)?;
        m.d_a.params.load_prefixed("d_a.", &ck.tensors)?;
        m.d_b.params.load_prefixed("d_b.", &ck.tensors)?;
        Ok((m, side.window, side.epoch))
    }
}

/// The source-to-target generator of a checkpoint and its HU window.
pub fn load_generator(path: &Path) -> Result<(GeneratorNet, (f32, f32))> {
    let (m, window, _) = CycleModel::load(path)?;
    Ok((m.g_ab, window))
}

/// Mean per-batch losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub g_adversarial: f64,
    pub cycle: f64,
    pub g_total: f64,
    pub d_loss: f64,
    /// Fraction of patch logits on the right side of 0.5, before the update.
    pub d_accuracy: f64,
    pub batches: usize,
}

/// Header of `training_log.csv`, matching [`EpochLog`] field order.
pub const LOG_COLUMNS: [&str; 8] = ["epoch", "lr", "g_adversarial", "cycle", "g_total", "d_loss", "d_accuracy", "batches"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    /// `(completed epochs, path)`; epoch 0 is the initialization.
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub log: Vec<EpochLog>,
    pub model: CycleModel,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_e{epoch:03}.bin")
}

/// Patch size drawn from `domain`: the crop clamped to the slice, or the
/// whole slice when `crop` is 0.
fn crop_sides(domain: &TrainingSlices, crop: usize) -> (usize, usize) {
    match crop {
        0 => (domain.h, domain.w),
        c => (c.min(domain.h), c.min(domain.w)),
    }
}

fn batch_tensor(domain: &TrainingSlices, idx: &[usize], crop: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let (h, w) = (domain.h, domain.w);
    let (ch, cw) = crop_sides(domain, crop);
    let mut data = Vec::with_capacity(idx.len() * ch * cw);
    for &i in idx {
        let s = &domain.slices[i];
        let y0 = if ch < h { rng.gen_range(0..=h - ch) } else { 0 };
        let x0 = if cw < w { rng.gen_range(0..=w - cw) } else { 0 };
        for y in y0..y0 + ch {
            data.extend_from_slice(&s[y * w + x0..y * w + x0 + cw]);
        }
    }
    Ok(Tensor::new(&[idx.len(), 1, ch, cw], data)?)
}

fn scalar(g: &Graph<f32>, id: NodeId) -> f64 {
    g.value(id).item().map_or(f64::NAN, |v| v as f64)
}

/// Adam on the concatenation of several parameter sets.
fn step_sets(sets: &mut [&mut ParamSet], ids: &[Vec<NodeId>], g: &Graph<f32>, loss: NodeId, opt: &mut AdamState<f32>, lr: f64) -> Result<()> {
    let grads = g.backward(loss)?;
    let mut params: Vec<Tensor<f32>> = Vec::new();
    let mut gs: Vec<Tensor<f32>> = Vec::new();
    for (set, ids) in sets.iter_mut().zip(ids) {
        for (t, id) in std::mem::take(&mut set.tensors).into_iter().zip(ids) {
            gs.push(grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())));
            params.push(t);
        }
    }
    let refs: Vec<&Tensor<f32>> = gs.iter().collect();
    adam_step(&mut params, &refs, opt, lr)?;
    let mut it = params.into_iter();
    for (set, ids) in sets.iter_mut().zip(ids) {
        set.tensors = it.by_ref().take(ids.len()).collect();
    }
    Ok(())
}

fn split_batch(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let s = t.shape();
    let plane = s[2] * s[3];
    t.data()
        .chunks(plane)
        .map(|c| Tensor::new(&[1, 1, s[2], s[3]], c.to_vec()).expect("plane size"))
        .collect()
}

fn join_batch(parts: &[Tensor<f32>]) -> Tensor<f32> {
    let s = parts[0].shape();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&[parts.len(), 1, s[2], s[3]], data).expect("uniform parts")
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarmonizerError::Usage(format!("training log: {e}"));
    if log.is_empty() {
        w.write_record(LOG_COLUMNS).map_err(err)?;
    }
    for row in log {
        w.serialize(row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarmonizerError::Usage(format!("training log: {e}")))?;
    inspex_core::io::write_atomic(path, &bytes)?;
    Ok(())
}

/// Trains on unpaired `source` (A) and `target` (B) slices, writing
/// checkpoints and `training_log.csv` into `out_dir`.
pub fn train(source: &TrainingSlices, target: &TrainingSlices, cfg: &TrainingConfig, out_dir: &Path) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(HarmonizerError::Usage(format!(
            "both domains need slices (source {}, target {})",
            source.len(),
            target.len()
        )));
    }
    for d in [source, target] {
        let (h, w) = crop_sides(d, cfg.crop);
        if h % GeneratorNet::SIDE_MULTIPLE != 0 || w % GeneratorNet::SIDE_MULTIPLE != 0 {
            return Err(HarmonizerError::Usage(format!(
                "training patches of {h}x{w} are not a multiple of 4 per side"
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(inspex_core::InspexError::io(out_dir))?;
    let mut model = CycleModel::new(cfg.generator, cfg.discriminator, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut opt_g = AdamState::new(model.g_ab.params.tensors.iter().chain(&model.g_ba.params.tensors), cfg.adam);
    let mut opt_d = AdamState::new(model.d_a.params.tensors.iter().chain(&model.d_b.params.tensors), cfg.adam);
    let (mut pool_a, mut pool_b) = (ReplayPool::new(cfg.pool_size), ReplayPool::new(cfg.pool_size));

    let mut checkpoints = Vec::new();
    let first = out_dir.join(checkpoint_name(0));
    model.save(&first, 0, cfg)?;
    checkpoints.push((0, first));

    let log_path = out_dir.join("training_log.csv");
    let mut log = Vec::new();
    let pairs = source.len().min(target.len());
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut ia: Vec<usize> = (0..source.len()).collect();
        let mut ib: Vec<usize> = (0..target.len()).collect();
        ia.shuffle(&mut rng);
        ib.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut batches = 0;
        for (b, start) in (0..pairs).step_by(cfg.batch_size).enumerate() {
            let end = (start + cfg.batch_size).min(pairs);
            let real_a = batch_tensor(source, &ia[start..end], cfg.crop, &mut rng)?;
            let real_b = batch_tensor(target, &ib[start..end], cfg.crop, &mut rng)?;
            let diverged = |what: &str, v: f64| HarmonizerError::Divergence {
                epoch,
                batch: b,
                detail: format!("{what} = {v}"),
            };

            // generators
            let mut g = Graph::<f32>::new();
            let ids_ab = model.g_ab.params.bind(&mut g, true);
            let ids_ba = model.g_ba.params.bind(&mut g, true);
            let ids_da = model.d_a.params.bind(&mut g, false);
            let ids_db = model.d_b.params.bind(&mut g, false);
            let ra = g.constant(real_a.clone());
            let rb = g.constant(real_b.clone());
            let fake_b = model.g_ab.forward(&mut g, &ids_ab, ra)?;
            let rec_a = model.g_ba.forward(&mut g, &ids_ba, fake_b)?;
            let fake_a = model.g_ba.forward(&mut g, &ids_ba, rb)?;
            let rec_b = model.g_ab.forward(&mut g, &ids_ab, fake_a)?;
            let db_fake = model.d_b.forward(&mut g, &ids_db, fake_b)?;
            let da_fake = model.d_a.forward(&mut g, &ids_da, fake_a)?;
            let adv_b = lsgan_g_loss(&mut g, db_fake, &cfg.loss)?;
            let adv_a = lsgan_g_loss(&mut g, da_fake, &cfg.loss)?;
            let adv = g.add(adv_a, adv_b)?;
            let cyc = cycle_loss(&mut g, ra, rec_a, rb, rec_b, cfg.lambda_cycle)?;
            let total = g.add(adv, cyc)?;
            let (adv_v, cyc_v, total_v) = (scalar(&g, adv), scalar(&g, cyc), scalar(&g, total));
            for (what, v) in [("generator adversarial loss", adv_v), ("cycle loss", cyc_v)] {
                if !v.is_finite() {
                    return Err(diverged(what, v));
                }
            }
            let fake_b_v = g.value(fake_b).clone();
            let fake_a_v = g.value(fake_a).clone();
            step_sets(&mut [&mut model.g_ab.params, &mut model.g_ba.params], &[ids_ab, ids_ba], &g, total, &mut opt_g, lr)?;
            drop(g);

            // discriminators
            let fake_b_q: Vec<Tensor<f32>> = split_batch(&fake_b_v).into_iter().map(|t| pool_b.query(t, &mut rng)).collect();
            let fake_a_q: Vec<Tensor<f32>> = split_batch(&fake_a_v).into_iter().map(|t| pool_a.query(t, &mut rng)).collect();
            let mut g = Graph::<f32>::new();
            let ids_da = model.d_a.params.bind(&mut g, true);
            let ids_db = model.d_b.params.bind(&mut g, true);
            let ra = g.constant(real_a);
            let rb = g.constant(real_b);
            let fa = g.constant(join_batch(&fake_a_q));
            let fb = g.constant(join_batch(&fake_b_q));
            let da_real = model.d_a.forward(&mut g, &ids_da, ra)?;
            let da_fake = model.d_a.forward(&mut g, &ids_da, fa)?;
            let db_real = model.d_b.forward(&mut g, &ids_db, rb)?;
            let db_fake = model.d_b.forward(&mut g, &ids_db, fb)?;
            let la = lsgan_d_loss(&mut g, da_real, da_fake, &cfg.loss)?;
            let lb = lsgan_d_loss(&mut g, db_real, db_fake, &cfg.loss)?;
            let ld = g.add(la, lb)?;
            let ld_v = scalar(&g, ld);
            if !ld_v.is_finite() {
                return Err(diverged("discriminator loss", ld_v));
            }
            let (mut right, mut seen) = (0usize, 0usize);
            for (id, real) in [(da_real, true), (db_real, true), (da_fake, false), (db_fake, false)] {
                for &v in g.value(id).data() {
                    right += ((v > 0.5) == real) as usize;
                    seen += 1;
                }
            }
            step_sets(&mut [&mut model.d_a.params, &mut model.d_b.params], &[ids_da, ids_db], &g, ld, &mut opt_d, lr)?;

            for (s, v) in sums.iter_mut().zip([adv_v, cyc_v, total_v, ld_v, right as f64 / seen as f64]) {
                *s += v;
            }
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let entry = EpochLog {
            epoch,
            lr,
            g_adversarial: sums[0] / nb,
            cycle: sums[1] / nb,
            g_total: sums[2] / nb,
            d_loss: sums[3] / nb,
            d_accuracy: sums[4] / nb,
            batches,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} g {:.4} (adv {:.4}, cycle {:.4}) d {:.4} acc {:.3}",
            entry.g_total,
            entry.g_adversarial,
            entry.cycle,
            entry.d_loss,
            entry.d_accuracy
        );
        log.push(entry);
        write_log(&log_path, &log)?;
        let done = epoch + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
            let p = out_dir.join(checkpoint_name(done));
            model.save(&p, done, cfg)?;
            checkpoints.push((done, p));
        }
    }
    if cfg.epochs == 0 {
        write_log(&log_path, &log)?;
    }
    Ok(TrainingOutcome { checkpoints, log, model })
}
