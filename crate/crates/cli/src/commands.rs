use std::fs;
use std::path::Path;

use lmbf::checks::{gradient_suite, EPS, TOL};
use lmbf::metrics::{write_report, ReportRow};
use lmbf::net::{make_ablation, AblationId, LmbfNet};
use lmbf::patch::{find_plan, manifest_csv, prepare, read_split, resize, synth_fundus, write_split, ImageRecord, ResizeMode};
use lmbf::train::{evaluate, train as fit, AucMode, EvalConfig};
use lmbf::{Error, Result};

use crate::run_config::RunConfig;
use crate::{EvalArgs, GradcheckArgs, ParamsArgs, PatchifyArgs, SynthArgs, TrainArgs};

const METHOD: &str = "LMBF-Net";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(spec: Option<&str>) -> Result<RunConfig> {
    spec.map_or_else(|| Ok(RunConfig::from_ablation(AblationId::Full)), RunConfig::load)
}

/// Resize target and patch size for one record: the dataset's plan if it
/// has one, otherwise the native size. A network patch size wins.
fn sizing(cfg: &RunConfig, record: &ImageRecord) -> ((usize, usize), Option<usize>) {
    let plan = find_plan(cfg.dataset, cfg.feature);
    let resized = plan.map_or((record.height(), record.width()), |p| p.resized);
    let patch = cfg.network.patch_size.or(plan.and_then(|p| p.patch));
    (resized, patch)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let feature = a.feature.parse()?;
    let base = a.seed.wrapping_mul(1_000_000);
    for (split, offset, count) in [("train", 0, a.count), ("test", 500_000, a.test_count)] {
        let records = (0..count as u64)
            .map(|i| synth_fundus(base + offset + i, a.size, feature))
            .collect::<Result<Vec<_>>>()?;
        write_split(&a.out, split, &records)?;
    }
    println!(
        "wrote {} train and {} test {}x{} images to {}",
        a.count,
        a.test_count,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

pub fn patchify(a: &PatchifyArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let records = read_split(&a.data, &a.split, cfg.dataset, cfg.feature)?;
    let mut patches = Vec::new();
    for r in &records {
        let (resized, patch) = sizing(&cfg, r);
        patches.extend(prepare(r, resized, patch, cfg.min_fg)?);
    }
    write(&a.out.join("manifest.csv"), &manifest_csv(&patches))?;
    let kept = patches.iter().filter(|p| p.kept).count();
    println!("{} images, {} patches, {kept} kept", records.len(), patches.len());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let model_dir = a.out.join("model");
    if cfg.train.checkpoint_dir.is_none() {
        cfg.train.checkpoint_dir = Some(model_dir.clone());
    }
    write(&a.out.join("run.txt"), &cfg.to_string())?;

    let records = read_split(&a.data, "train", cfg.dataset, cfg.feature)?;
    let mut patches = Vec::new();
    for r in &records {
        let (resized, patch) = sizing(&cfg, r);
        patches.extend(prepare(r, resized, patch, cfg.min_fg)?);
    }
    let mut net = LmbfNet::<f32>::build(cfg.network.clone(), cfg.train.seed)?;
    println!(
        "{} kept patches, {} parameters",
        patches.iter().filter(|p| p.kept).count(),
        net.count_params().total
    );
    let history = fit(&mut net, &patches, &cfg.train, None, |r| {
        println!("epoch {:>4}  loss {:.6}  dice {:.4}", r.epoch, r.loss, r.dice());
    })?;
    write(&a.out.join("history.csv"), &history.csv())?;
    net.save(&model_dir)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let net = LmbfNet::<f32>::load(&a.model)?;
    let mut records = read_split(&a.data, &a.split, cfg.dataset, cfg.feature)?;
    let Some(first) = records.first() else {
        return Err(Error::Contract(format!("split {:?} holds no images", a.split)));
    };
    let (resized, plan_patch) = sizing(&cfg, first);
    let patch = net.config().patch_size.or(plan_patch);
    for r in &mut records {
        if (r.height(), r.width()) != resized {
            r.image = resize(&r.image, resized.0, resized.1, ResizeMode::Bilinear)?;
            r.mask = resize(&r.mask, resized.0, resized.1, ResizeMode::Nearest)?;
        }
    }
    let eval_cfg = EvalConfig {
        patch,
        auc_mode: if a.per_image_auc { AucMode::PerImageMean } else { AucMode::Pooled },
        ..EvalConfig::default()
    };
    let report = evaluate(&net, &records, &eval_cfg)?;
    let dataset = cfg.dataset.to_string();
    let per_image: Vec<ReportRow> = report
        .per_image
        .iter()
        .map(|e| ReportRow {
            method: METHOD.into(),
            dataset: format!("{dataset}/{}", e.id),
            metrics: e.metrics,
            auc: e.auc,
        })
        .collect();
    let pooled = ReportRow {
        method: METHOD.into(),
        dataset,
        metrics: report.metrics,
        auc: report.auc,
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_report(&a.out.join("per_image.csv"), &per_image)?;
    write_report(&a.out.join("report.csv"), std::slice::from_ref(&pooled))?;
    print!("{}", lmbf::metrics::report_csv(&[pooled]));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = gradient_suite(a.seed)?;
    println!("eps {EPS:e}, tolerance {TOL:e}");
    let mut failed = 0;
    for r in &results {
        let rep = &r.report;
        failed += usize::from(!rep.pass);
        println!(
            "{:<28} max_rel_err {:.3e}  checked {:>5}  kink crossings {:>4}  {}",
            r.name,
            rep.max_rel_err,
            rep.checked,
            rep.kink_crossings,
            if rep.pass { "pass" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} of {} gradient checks failed", results.len())));
    }
    Ok(())
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let net = LmbfNet::<f32>::build(cfg.network, 0)?;
    println!("{}", net.count_params());
    Ok(())
}

pub fn ablate() -> Result<()> {
    for id in AblationId::ALL {
        let net = LmbfNet::<f32>::build(make_ablation(id), 0)?;
        let total = net.count_params().total;
        println!("{:<16} {total:>8}  ({:.3}M)", id.as_str(), total as f64 / 1e6);
    }
    Ok(())
}
