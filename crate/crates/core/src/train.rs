//! Epoch loop shared by both training stages: seeded shuffling, AdamW
//! steps on the warmup/cosine schedule, loss CSVs, resumable checkpoints
//! and divergence dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::optim::AdamW;
use crate::tensor::params::ParamStore;
use crate::tensor::Gradients;

/// Where a training run writes, and how it starts and stops.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Continue from the checkpoint already in `out_dir`, if any.
    pub resume: bool,
    /// Stop once this many epochs are complete (the schedule still spans
    /// the configured total). Used to interrupt runs deliberately.
    pub stop_after: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: false,
            stop_after: None,
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean batch loss over the epoch, measured before each step.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub checkpoint: PathBuf,
    pub csv: PathBuf,
}

/// Sample order for an epoch: a permutation drawn from `(seed, epoch)` only,
/// so a resumed run shuffles exactly as the uninterrupted one would.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub(crate) fn csv_text(rows: &[EpochRow]) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.epoch, r.loss, r.lr);
    }
    s
}

fn read_csv(path: &Path) -> Result<Vec<EpochRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: "expected epoch,loss,lr".into(),
    };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad(i + 1));
            }
            Ok(EpochRow {
                epoch: f[0].parse().map_err(|_| bad(i + 1))?,
                loss: f[1].parse().map_err(|_| bad(i + 1))?,
                lr: f[2].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}

/// One training stage's files and settings.
pub(crate) struct Run<'a> {
    pub stage: &'a str,
    pub train: &'a TrainConfig,
    pub seed: u64,
    /// Canonical config text stored in every checkpoint.
    pub config: String,
    pub meta: Vec<(String, String)>,
    pub opts: &'a TrainOptions,
}

impl Run<'_> {
    pub(crate) fn checkpoint_path(&self) -> PathBuf {
        self.opts.out_dir.join(format!("{}.ckpt", self.stage))
    }

    fn csv_path(&self) -> PathBuf {
        self.opts.out_dir.join(format!("{}_loss.csv", self.stage))
    }

    fn save(&self, store: &ParamStore, opt: &AdamW, epochs_done: usize, rows: &[EpochRow]) -> Result<()> {
        let mut ck = Checkpoint::new(self.config.clone());
        ck.set_meta("stage", self.stage);
        ck.set_meta("epochs_done", epochs_done);
        for (k, v) in &self.meta {
            ck.set_meta(k, v);
        }
        ck.add_params(store);
        ck.add_optimizer(opt, store);
        ck.write(&self.checkpoint_path())?;
        let csv = self.csv_path();
        std::fs::write(&csv, csv_text(rows)).map_err(|e| Error::io(&csv, e))
    }

    /// Writes a plain-text report plus the parameters that produced the
    /// non-finite value, and returns the matching error.
    fn diverged(&self, store: &ParamStore, epoch: usize, batch: &[usize], msg: String) -> Error {
        let dump = self.opts.out_dir.join(format!("{}_divergence.txt", self.stage));
        let mut s = format!("stage: {}\nepoch: {epoch}\nbatch samples: {batch:?}\nreason: {msg}\n\n", self.stage);
        s.push_str("parameter\tmax_abs\tnon_finite\n");
        for (_, name, t) in store.iter() {
            let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let bad = t.data().iter().filter(|v| !v.is_finite()).count();
            let _ = writeln!(s, "{name}\t{max:e}\t{bad}");
        }
        let _ = std::fs::write(&dump, s);
        let mut ck = Checkpoint::new(self.config.clone());
        ck.add_params(store);
        let _ = ck.write(&self.opts.out_dir.join(format!("{}_diverged.ckpt", self.stage)));
        Error::Diverged { msg, dump }
    }

    /// Runs the epoch loop. `batch_step(store, samples, epoch, batch_index)`
    /// returns the batch loss and its gradients.
    pub(crate) fn execute(
        &self,
        store: &mut ParamStore,
        n_samples: usize,
        mut batch_step: impl FnMut(&ParamStore, &[usize], usize, usize) -> Result<(f64, Gradients)>,
    ) -> Result<TrainReport> {
        if n_samples == 0 {
            return Err(Error::config(format!("{}: no training samples", self.stage)));
        }
        std::fs::create_dir_all(&self.opts.out_dir).map_err(|e| Error::io(&self.opts.out_dir, e))?;
        let schedule = self.train.schedule();
        let mut opt = AdamW::new(self.train.weight_decay);
        let mut rows = Vec::new();
        let mut start = 0;
        let ckpt_path = self.checkpoint_path();
        if self.opts.resume && ckpt_path.exists() {
            let ck = Checkpoint::read(&ckpt_path)?;
            if ck.config_hash() != crate::tensor::checkpoint::config_hash(&self.config) {
                return Err(Error::Checkpoint(format!(
                    "{} was written by a different configuration",
                    ckpt_path.display()
                )));
            }
            store.load(ck.params())?;
            ck.restore_optimizer(&mut opt, store)?;
            start = ck
                .meta("epochs_done")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint("missing epochs_done".into()))?;
            rows = read_csv(&self.csv_path())?;
            rows.truncate(start);
        }
        let end = self.opts.stop_after.map_or(self.train.epochs, |s| s.min(self.train.epochs));
        for epoch in start..end {
            let lr = schedule.at(epoch);
            let order = epoch_order(self.seed, epoch, n_samples);
            let mut total = 0.0;
            let mut batches = 0;
            for (bi, batch) in order.chunks(self.train.batch_size).enumerate() {
                let (loss, grads) = match batch_step(store, batch, epoch, bi) {
                    Ok(step) => step,
                    Err(e @ Error::Numeric { .. }) => return Err(self.diverged(store, epoch, batch, e.to_string())),
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    return Err(self.diverged(store, epoch, batch, format!("loss is {loss}")));
                }
                if let Some((id, _)) = grads.params().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                    let msg = format!("non-finite gradient for {}", store.name(id));
                    return Err(self.diverged(store, epoch, batch, msg));
                }
                opt.step(store, grads.params(), lr);
                if let Some((id, _, _)) = store.iter().find(|(_, _, t)| !t.all_finite()) {
                    let msg = format!("parameter {} became non-finite", store.name(id));
                    return Err(self.diverged(store, epoch, batch, msg));
                }
                total += loss;
                batches += 1;
            }
            let row = EpochRow {
                epoch,
                loss: total / batches as f64,
                lr,
            };
            if self.opts.verbose {
                eprintln!("{} epoch {epoch}: loss {:.6e} lr {:.3e}", self.stage, row.loss, lr);
            }
            rows.push(row);
            let every = self.train.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < end {
                self.save(store, &opt, epoch + 1, &rows)?;
            }
        }
        self.save(store, &opt, end.max(start), &rows)?;
        Ok(TrainReport {
            rows,
            checkpoint: ckpt_path,
            csv: self.csv_path(),
        })
    }
}
