use std::fs;
use std::path::{Path, PathBuf};

use quantbench::experiments::{
    baseline_curves, ecr_rows, ecr_to_csv, emit_report, parse_records_csv, records_to_csv, run_sweep, SweepSettings,
};
use quantbench::nn::checkpoint;
use quantbench::quantizer::{direct_quantize, reports_to_csv, GroupSelection};
use quantbench::trainer::{evaluate, retrain_quantized, train_float, TrainConfig};
use quantbench::{Error, Result, Rng};

use crate::config::Loaded;

pub const FLOAT_CKPT: &str = "float.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const QUANT_CKPT: &str = "quantized.ckpt";
pub const QUANT_REPORT: &str = "quant_report.csv";
pub const RETRAIN_CKPT: &str = "retrained.ckpt";
pub const RETRAIN_LOG: &str = "retrain_log.csv";
pub const RECORDS: &str = "records.csv";
pub const ECR: &str = "ecr.csv";

/// Everything a command needs besides the config.
pub struct Context {
    pub loaded: Loaded,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub checkpoint: Option<PathBuf>,
    pub bits: Option<u32>,
    pub groups: Option<Vec<String>>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

impl Context {
    fn seeded(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..cfg.clone()
        }
    }

    fn input_checkpoint(&self, default: &str) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join(default))
    }
}

pub fn train(ctx: &Context) -> Result<()> {
    let l = &ctx.loaded;
    l.validate_training()?;
    l.validate_quant()?;
    let data = l.load_dataset()?;
    let arch = l.arch(data.train.sample_shape(), data.train.class_count, None)?;
    let net = arch.build(&mut Rng::new(ctx.seed))?;
    let (best, log) = train_float(&net, &data, &ctx.seeded(&l.config.train))?;
    create_out(&ctx.out)?;
    checkpoint::save(&best, &ctx.out.join(FLOAT_CKPT))?;
    write(&ctx.out.join(TRAIN_LOG), log.to_csv())?;
    let b = log.best().expect("epoch 0 is always logged");
    println!(
        "trained {} parameters: best epoch {} of {}, validation error {:.2}%",
        best.param_count(),
        b.epoch,
        log.epochs.len() - 1,
        b.val_metric
    );
    println!(
        "wrote {} and {}",
        ctx.out.join(FLOAT_CKPT).display(),
        ctx.out.join(TRAIN_LOG).display()
    );
    Ok(())
}

pub fn quantize(ctx: &Context) -> Result<()> {
    let l = &ctx.loaded;
    l.validate_quant()?;
    let bits = match (ctx.bits, l.config.quant.bits.as_slice()) {
        (Some(b), _) => b,
        (None, [b]) => *b,
        (None, other) => {
            return Err(Error::Config(format!(
                "quant.bits: quantize takes one bit width, got {other:?}; pass --bits"
            )))
        }
    };
    let selection = match ctx.groups.as_ref().or(l.config.quant.groups.as_ref()) {
        Some(g) => GroupSelection::Only(g.clone()),
        None => GroupSelection::All,
    };
    let input = ctx.input_checkpoint(FLOAT_CKPT);
    let net = checkpoint::load(&input)?;
    let (q, reports) = direct_quantize(&net, bits, &selection)?;
    create_out(&ctx.out)?;
    checkpoint::save(&q, &ctx.out.join(QUANT_CKPT))?;
    write(&ctx.out.join(QUANT_REPORT), reports_to_csv(&reports))?;
    for r in &reports {
        println!(
            "{}: M={} delta={:.6e} error={:.6e}",
            r.group, r.levels, r.delta, r.l2_error
        );
    }
    println!(
        "wrote {} and {}",
        ctx.out.join(QUANT_CKPT).display(),
        ctx.out.join(QUANT_REPORT).display()
    );
    Ok(())
}

pub fn retrain(ctx: &Context) -> Result<()> {
    let l = &ctx.loaded;
    l.validate_training()?;
    let input = ctx.input_checkpoint(QUANT_CKPT);
    let net = checkpoint::load(&input)?;
    if !net.is_quantized() {
        return Err(Error::Usage(format!(
            "{} has no quantizer blocks; run `quantbench quantize` first and retrain its output",
            input.display()
        )));
    }
    let data = l.load_dataset()?;
    let (best, log) = retrain_quantized(&net, &data, &ctx.seeded(&l.retrain_config()))?;
    create_out(&ctx.out)?;
    checkpoint::save(&best, &ctx.out.join(RETRAIN_CKPT))?;
    write(&ctx.out.join(RETRAIN_LOG), log.to_csv())?;
    println!(
        "validation error: direct {:.2}% → retrained {:.2}%",
        evaluate(&net, &data.valid)?,
        evaluate(&best, &data.valid)?
    );
    println!(
        "wrote {} and {}",
        ctx.out.join(RETRAIN_CKPT).display(),
        ctx.out.join(RETRAIN_LOG).display()
    );
    Ok(())
}

pub fn sweep(ctx: &Context) -> Result<()> {
    let l = &ctx.loaded;
    l.validate_training()?;
    l.validate_quant()?;
    l.validate_sweep()?;
    let data = l.load_dataset()?;
    let archs = l.sweep_archs(data.train.sample_shape(), data.train.class_count)?;
    let s = &l.config.sweep;
    let settings = SweepSettings {
        bits: l.config.quant.bits.clone(),
        modes: s.modes.clone(),
        seeds: (0..s.seeds_per_point as u64).map(|i| ctx.seed + i).collect(),
        train: l.config.train.clone(),
        retrain: l.retrain_config(),
        jobs: ctx.jobs,
    };
    let records = run_sweep(&archs, &settings, &data)?;
    create_out(&ctx.out)?;
    write(&ctx.out.join(RECORDS), records_to_csv(&records))?;
    println!("{} records from {} architectures", records.len(), archs.len());
    println!("wrote {}", ctx.out.join(RECORDS).display());
    Ok(())
}

fn read_records(out: &Path, required: bool) -> Result<Vec<quantbench::experiments::SweepRecord>> {
    let path = out.join(RECORDS);
    match fs::read_to_string(&path) {
        Ok(text) => parse_records_csv(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !required => Ok(Vec::new()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Config(format!(
            "{} not found; run `quantbench sweep` with mode \"float\" first",
            path.display()
        ))),
        Err(e) => Err(Error::Io { path, source: e }),
    }
}

pub fn ecr(ctx: &Context) -> Result<()> {
    let records = read_records(&ctx.out, true)?;
    let curves = baseline_curves(&records);
    if curves.is_empty() {
        return Err(Error::Config(
            "no float baseline in records.csv; ECR needs a `quantbench sweep` that includes mode \"float\"".into(),
        ));
    }
    let rows = ecr_rows(&records, &curves, ctx.loaded.config.sweep.interpolation)?;
    write(&ctx.out.join(ECR), ecr_to_csv(&rows))?;
    println!("{} ECR rows", rows.len());
    println!("wrote {}", ctx.out.join(ECR).display());
    Ok(())
}

pub fn report(ctx: &Context) -> Result<()> {
    let records = read_records(&ctx.out, false)?;
    let curves = baseline_curves(&records);
    emit_report(&records, &curves, ctx.loaded.config.sweep.interpolation, &ctx.out)?;
    println!("report for {} records written to {}", records.len(), ctx.out.display());
    Ok(())
}
