use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tanet_metrics::{psnr, ssim, Image};
use tanet_model::{forward, init_params, save_checkpoint, ModelConfig, TANetParams};
use tanet_tensor::{Precision, Tape, Tensor};

use crate::{adam_step, augment_pair, l1_loss, AdamState, Result, TrainError, TrainSchedule};

/// One aligned HR/LR pair, planar `[3,H,W]` tensors in [0,1].
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub name: String,
    pub hr: Tensor,
    pub lr: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct TrainDataset {
    pub train: Vec<TrainPair>,
    pub val: Vec<TrainPair>,
    pub scale: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `last.tanc`, `best.tanc`, the optimizer state, and
    /// `loss.csv` are written. Nothing touches disk when unset.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the per-item forward/backward; 0 or 1 runs
    /// sequentially. Gradients reduce in item order either way, so the
    /// thread count never changes the result.
    pub threads: usize,
    pub precision: Precision,
    /// Resume from a loaded parameter set and optimizer state instead of
    /// initializing fresh.
    pub resume: Option<(TANetParams, TrainState)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// What `train` returns: final parameters, per-step history, and the
/// per-epoch validation trace.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: TANetParams,
    pub history: Vec<LossRecord>,
    /// (epoch, mean val PSNR, mean val SSIM when computable)
    pub val_history: Vec<(usize, f64, Option<f64>)>,
    pub best_val_psnr: Option<(usize, f64)>,
    pub next_step: u64,
    pub next_epoch: usize,
}

/// Optimizer state plus loop counters, persisted next to checkpoints so
/// a resumed run continues step numbering.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub next_epoch: usize,
    pub next_step: u64,
    pub adam: AdamState,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 of (seed, epoch): shuffles and augmentation depend only
    // on these two, so a resumed run sees the same data order
    let mut z = seed
        .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn batched(t: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::new(shape, t.data().to_vec()).expect("adding batch dim preserves count")
}

fn check_dataset(dataset: &TrainDataset, cfg: &ModelConfig) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if dataset.scale != cfg.scale {
        return Err(TrainError::State(format!(
            "dataset prepared for scale {}, model configured for {}",
            dataset.scale, cfg.scale
        )));
    }
    for pair in dataset.train.iter().chain(&dataset.val) {
        let (hs, ls) = (pair.hr.shape(), pair.lr.shape());
        let aligned = hs.len() == 3
            && ls.len() == 3
            && hs[0] == 3
            && ls[0] == 3
            && hs[1] == ls[1] * cfg.scale
            && hs[2] == ls[2] * cfg.scale;
        if !aligned {
            return Err(TrainError::ScaleMismatch {
                name: pair.name.clone(),
                hr: hs.to_vec(),
                lr: ls.to_vec(),
                scale: cfg.scale,
            });
        }
    }
    Ok(())
}

/// Forward + backward for one pair; returns the L1 loss and per-parameter
/// gradients.
fn run_item(
    params: &TANetParams,
    cfg: &ModelConfig,
    hr: &Tensor,
    lr: &Tensor,
    precision: Precision,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::with_precision(precision);
    let pass = forward(&mut tape, params, cfg, &batched(lr), true, false)?;
    let target = tape.leaf(batched(hr));
    let loss = l1_loss(&mut tape, pass.output, target)?;
    tape.backward(loss)?;
    let grads = pass
        .params
        .iter()
        .map(|(name, var)| {
            let g = tape.grad(*var).expect("trainable leaf has grad").to_vec();
            (name.clone(), g)
        })
        .collect();
    Ok((tape.value(loss).item(), grads))
}

fn mean_val_scores(
    params: &TANetParams,
    cfg: &ModelConfig,
    val: &[TrainPair],
    precision: Precision,
) -> Result<Option<(f64, Option<f64>)>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut ssim_ok = true;
    for pair in val {
        let mut tape = Tape::with_precision(precision);
        let pass = forward(&mut tape, params, cfg, &batched(&pair.lr), false, false)?;
        let sr = Image::from_tensor(tape.value(pass.output))?;
        let hr = Image::from_tensor(&pair.hr)?;
        psnr_sum += psnr(&sr, &hr)?;
        if hr.height >= 11 && hr.width >= 11 {
            ssim_sum += ssim(&sr, &hr)?;
        } else {
            ssim_ok = false;
        }
    }
    let n = val.len() as f64;
    Ok(Some((psnr_sum / n, ssim_ok.then_some(ssim_sum / n))))
}

/// The deterministic epoch loop: seeded shuffle, dihedral augmentation,
/// per-item forward/backward with ordered gradient reduction, Adam with
/// the scheduled learning rate, per-epoch checkpoints and validation.
pub fn train(
    dataset: &TrainDataset,
    cfg: &ModelConfig,
    sched: &TrainSchedule,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;

    let resuming = opts.resume.is_some();
    let (mut params, mut state) = match opts.resume.clone() {
        Some((params, state)) => (params, state),
        None => {
            let params = init_params(cfg, sched.seed)?;
            let adam = AdamState::new(&params, sched.lr(0));
            (
                params,
                TrainState {
                    next_epoch: 0,
                    next_step: 0,
                    adam,
                },
            )
        }
    };

    let mut csv = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("loss.csv");
            let mut file = if resuming {
                BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?)
            } else {
                BufWriter::new(File::create(path)?)
            };
            if !resuming {
                writeln!(file, "# seed={}", sched.seed)?;
                writeln!(file, "step,epoch,lr,loss")?;
            }
            Some(file)
        }
        None => None,
    };

    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .expect("thread pool"),
        )
    } else {
        None
    };

    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(usize, f64)> = None;

    let start_epoch = state.next_epoch;
    for epoch in start_epoch..sched.epochs {
        state.adam.set_lr(sched.lr(epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(sched.seed, epoch));
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut rng);

        for batch in order.chunks(sched.batch_size.max(1)) {
            let items: Vec<(Tensor, Tensor)> = batch
                .iter()
                .map(|&i| {
                    let pair = &dataset.train[i];
                    augment_pair(&pair.hr, &pair.lr, &mut rng)
                })
                .collect();

            let run = |(hr, lr): &(Tensor, Tensor)| run_item(&params, cfg, hr, lr, opts.precision);
            let results: Vec<Result<(f64, BTreeMap<String, Vec<f64>>)>> = match &pool {
                Some(pool) => pool.install(|| items.par_iter().map(run).collect()),
                None => items.iter().map(run).collect(),
            };

            let mut batch_loss = 0.0;
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let count = results.len() as f64;
            // reduce in item order so the thread count cannot change sums
            for result in results {
                let (loss, item_grads) = result?;
                batch_loss += loss;
                for (name, g) in item_grads {
                    match grads.get_mut(&name) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&g) {
                                *a += v;
                            }
                        }
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
            }
            batch_loss /= count;
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v /= count;
                }
            }

            if !batch_loss.is_finite() {
                if let Some(csv) = csv.as_mut() {
                    csv.flush()?;
                }
                return Err(TrainError::NonFiniteLoss {
                    loss: batch_loss,
                    step: state.next_step,
                });
            }

            adam_step(&mut params, &grads, &mut state.adam)?;

            let record = LossRecord {
                step: state.next_step,
                epoch,
                lr: state.adam.lr,
                loss: batch_loss,
            };
            if let Some(csv) = csv.as_mut() {
                writeln!(csv, "{},{},{},{}", record.step, record.epoch, record.lr, record.loss)?;
            }
            history.push(record);
            state.next_step += 1;
        }

        state.next_epoch = epoch + 1;

        if let Some((psnr, ssim)) = mean_val_scores(&params, cfg, &dataset.val, opts.precision)? {
            val_history.push((epoch, psnr, ssim));
            if best.map(|(_, b)| psnr > b).unwrap_or(true) {
                best = Some((epoch, psnr));
                if let Some(dir) = &opts.out_dir {
                    save_checkpoint(&dir.join("best.tanc"), cfg, &params, opts.precision)?;
                }
            }
        }
        if let Some(dir) = &opts.out_dir {
            save_checkpoint(&dir.join("last.tanc"), cfg, &params, opts.precision)?;
            save_train_state(&dir.join("last.state"), &state)?;
        }
    }

    if let Some(csv) = csv.as_mut() {
        csv.flush()?;
    }

    Ok(TrainOutcome {
        params,
        history,
        val_history,
        best_val_psnr: best,
        next_step: state.next_step,
        next_epoch: state.next_epoch,
    })
}

// ── optimizer-state persistence ─────────────────────────────────────────

const STATE_MAGIC: &[u8; 4] = b"TANS";
const STATE_VERSION: u32 = 1;

/// Little-endian sidecar: magic, version, next_epoch u64, next_step u64,
/// t u64, lr f64, then per parameter (name order) name_len/name and the
/// m and v moment arrays as f64.
pub fn save_train_state(path: &Path, state: &TrainState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(state.next_epoch as u64).to_le_bytes())?;
    w.write_all(&state.next_step.to_le_bytes())?;
    w.write_all(&state.adam.t.to_le_bytes())?;
    w.write_all(&state.adam.lr.to_le_bytes())?;
    for (name, m, v) in state.adam.moments_entries() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        for &x in m.iter().chain(v.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the optimizer state for `params` from a sidecar file.
pub fn load_train_state(path: &Path, params: &TANetParams) -> Result<TrainState> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STATE_MAGIC {
        return Err(TrainError::State("bad magic, not a train state file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != STATE_VERSION {
        return Err(TrainError::State(format!("unknown state version {version}")));
    }
    let next_epoch = read_u64(&mut r)? as usize;
    let next_step = read_u64(&mut r)?;
    let t = read_u64(&mut r)?;
    let lr = f64::from_bits(read_u64(&mut r)?);

    let mut adam = AdamState::new(params, lr);
    adam.t = t;
    for _ in 0..params.len() {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| TrainError::State("state parameter name is not UTF-8".into()))?;
        let numel = params
            .get(&name)
            .map_err(|_| TrainError::State(format!("state names unknown parameter {name}")))?
            .numel();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        let m: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        r.read_exact(&mut buf)?;
        let v: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        adam.restore(&name, m, v)?;
    }
    Ok(TrainState {
        next_epoch,
        next_step,
        adam,
    })
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
