use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sat_core::data::{generate_scene, read_cloud, write_cloud, PointCloud, SceneSpec, CLASS_NAMES, NUM_CLASSES};
use sat_core::evalbench::{
    bench_attention, bench_csv, class_iou_variance, export_reattention, miou_macc, trend_csv, ConfusionMatrix,
};
use sat_core::network::{apply_variant, evaluate, train as fit, ModelConfig, OptimizerKind, SatModel, TrainConfig, Variant};
use sat_core::numcore::Scalar;
use sat_core::{Error, Result};

use crate::settings::{parse_list, Settings};
use crate::{BenchArgs, EvalArgs, GenArgs, InspectArgs, TrainArgs};

pub const MANIFEST: &str = "manifest.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
const CLOUD_EXT: &str = "satpc";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io(path))
}

/// Independent per-scene seed so scene `i` does not depend on how many are
/// generated.
fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

pub fn gen(a: GenArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let s = Settings::load(config, &["out", "scenes", "val_fraction", "points", "seed"])?;
    let out: PathBuf = s.require(a.out, "out")?;
    let scenes = s.or(a.scenes, "scenes", 10)?;
    let val_fraction = s.or(a.val_fraction, "val_fraction", 0.2)?;
    let points = s.or(a.points, "points", 2048)?;
    let seed = s.seed(seed)?;
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    if scenes == 0 {
        return Err(Error::Config("need at least one scene".into()));
    }
    let spec = SceneSpec::desk(points);
    spec.validate()?;
    let n_val = (scenes as f64 * val_fraction).round() as usize;
    let mut manifest = String::from("split,file,points\n");
    for split in ["train", "val"] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    }
    for i in 0..scenes {
        let split = if i < scenes - n_val { "train" } else { "val" };
        let cloud = generate_scene(&spec, scene_seed(seed, i))?;
        let rel = format!("{split}/scene_{i:04}.{CLOUD_EXT}");
        write_cloud(&out.join(&rel), &cloud)?;
        let _ = writeln!(manifest, "{split},{rel},{}", cloud.len());
    }
    write(&out.join(MANIFEST), &manifest)?;
    print!("{manifest}");
    Ok(())
}

/// Scene files of one split, in file-name order. A missing split directory
/// is an empty split.
pub fn read_split(data: &Path, split: &str) -> Result<Vec<PointCloud>> {
    let dir = data.join(split);
    if !dir.exists() {
        if !data.exists() {
            return Err(io(data)(std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
        }
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == CLOUD_EXT))
        .collect();
    files.sort();
    files.iter().map(|p| read_cloud(p)).collect()
}

fn model_config(preset: &str, variant: &str, classes: usize, zero_gate: bool) -> Result<ModelConfig> {
    let mut cfg = apply_variant(ModelConfig::preset(preset, classes)?, Variant::parse(variant)?)?;
    cfg.zero_gate_init = zero_gate;
    Ok(cfg)
}

fn check_classes(model: usize, data: &[PointCloud]) -> Result<()> {
    match data.iter().find(|c| c.num_classes != model) {
        Some(c) => Err(Error::Config(format!(
            "class count mismatch: checkpoint has {model} classes, data has {}",
            c.num_classes
        ))),
        None => Ok(()),
    }
}

pub fn train(a: TrainArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let s = Settings::load(
        config,
        &[
            "data", "out", "preset", "variant", "epochs", "max_steps", "lr", "milestones", "lr_decay", "optimizer",
            "momentum", "weight_decay", "batch_size", "max_points", "clip", "precision", "zero_gate_init", "seed",
        ],
    )?;
    let data: PathBuf = s.require(a.data, "data")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let epochs = s.or(a.epochs, "epochs", 100)?;
    let mut tc = TrainConfig::new(epochs);
    tc.max_steps = s.get(a.max_steps, "max_steps")?;
    tc.lr = s.or(a.lr, "lr", tc.lr)?;
    if let Some(m) = s.get::<String>(a.milestones, "milestones")? {
        tc.milestones = parse_list(&m, "milestones")?;
    }
    tc.lr_decay = s.or(a.lr_decay, "lr_decay", tc.lr_decay)?;
    tc.optimizer = OptimizerKind::parse(&s.or(a.optimizer, "optimizer", "sgd".to_string())?)?;
    tc.momentum = s.or(a.momentum, "momentum", tc.momentum)?;
    tc.weight_decay = s.or(a.weight_decay, "weight_decay", tc.weight_decay)?;
    tc.batch_size = s.or(a.batch_size, "batch_size", tc.batch_size)?;
    tc.max_points = s.or(a.max_points, "max_points", tc.max_points)?;
    tc.clip_grad_norm = match s.get::<String>(a.clip, "clip")?.as_deref() {
        None => tc.clip_grad_norm,
        Some("none") => None,
        Some(v) => Some(sat_core::network::parse_value(v, "clip")?),
    };
    tc.seed = s.seed(seed)?;
    tc.validate()?;

    let train_set = read_split(&data, "train")?;
    let val_set = read_split(&data, "val")?;
    let Some(first) = train_set.first() else {
        return Err(Error::Config(format!("{}: no training scenes", data.join("train").display())));
    };
    let classes = first.num_classes;
    let cfg = model_config(
        &s.or(a.preset, "preset", "desk".to_string())?,
        &s.or(a.variant, "variant", "full".to_string())?,
        classes,
        s.or(a.zero_gate_init, "zero_gate_init", false)?,
    )?;
    match s.or(a.precision, "precision", "f32".to_string())?.as_str() {
        "f32" => run_train::<f32>(cfg, &train_set, &val_set, &tc, &out),
        "f64" => run_train::<f64>(cfg, &train_set, &val_set, &tc, &out),
        p => Err(Error::Config(format!("unknown precision `{p}` (expected f32 or f64)"))),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.4}"))
}

fn run_train<T: Scalar>(
    cfg: ModelConfig,
    train_set: &[PointCloud],
    val_set: &[PointCloud],
    tc: &TrainConfig,
    out: &Path,
) -> Result<()> {
    let model = SatModel::<T>::new(cfg, tc.seed)?;
    println!(
        "training {} ({} parameters) on {} scenes, {} validation",
        model.config.variant().map_or("custom", Variant::name),
        model.num_parameters(),
        train_set.len(),
        val_set.len()
    );
    let mut log = String::from("epoch,steps,lr,loss,train_acc,val_acc,val_miou\n");
    let mut best = f64::NEG_INFINITY;
    let result = fit(&model, train_set, val_set, tc, |l, m| {
        let row = format!(
            "{},{},{:.6e},{:.6},{:.4},{},{}",
            l.epoch,
            l.steps,
            l.lr,
            l.loss,
            l.train_acc,
            opt(l.val_acc),
            opt(l.val_miou)
        );
        println!("{row}");
        let _ = writeln!(log, "{row}");
        let score = l.val_miou.unwrap_or(l.train_acc);
        if score > best {
            best = score;
            m.save(out, "best.ckpt")?;
        }
        Ok(())
    });
    // Keep the partial log even when training aborts.
    std::fs::create_dir_all(out).map_err(io(out))?;
    write(&out.join(TRAIN_LOG), &log)?;
    result?;
    model.save(out, "last.ckpt")?;
    println!("wrote {}", out.display());
    Ok(())
}

fn class_name(k: usize, classes: usize) -> String {
    if classes == NUM_CLASSES {
        CLASS_NAMES[k].to_string()
    } else {
        format!("class{k}")
    }
}

pub fn eval(a: EvalArgs, config: Option<&Path>) -> Result<()> {
    let s = Settings::load(config, &["checkpoint", "data", "split", "out"])?;
    let ckpt: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let data: PathBuf = s.require(a.data, "data")?;
    let split = s.or(a.split, "split", "val".to_string())?;
    let model = SatModel::<f32>::load(&ckpt)?;
    let clouds = read_split(&data, &split)?;
    if clouds.is_empty() {
        return Err(Error::Config(format!("{}: split `{split}` has no scenes", data.display())));
    }
    let k = model.config.num_classes;
    check_classes(k, &clouds)?;
    let cm: ConfusionMatrix = evaluate(&model, &clouds)?;
    let m = miou_macc(&cm)?;
    let present: Vec<f64> = m.per_class_iou.iter().flatten().copied().collect();
    let variance = class_iou_variance(&present, &[]).ok();
    let mut csv = String::from("row,iou,acc,population_variance\n");
    for c in 0..k {
        let _ = writeln!(csv, "{},{},{},", class_name(c, k), opt(m.per_class_iou[c]), opt(m.per_class_acc[c]));
    }
    let _ = writeln!(csv, "mean,{:.4},{:.4},{}", m.miou, m.macc, opt(variance));
    print!("{csv}");
    println!("overall accuracy {:.2}, mIoU {:.2}, mAcc {:.2}", m.oa, m.miou, m.macc);
    if let Some(out) = s.get::<PathBuf>(a.out, "out")? {
        write(&out, &csv)?;
    }
    Ok(())
}

pub fn bench(a: BenchArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let s = Settings::load(config, &["preset", "variant", "points", "out", "seed"])?;
    let cfg = model_config(
        &s.or(a.preset, "preset", "s3dis".to_string())?,
        &s.or(a.variant, "variant", "full".to_string())?,
        NUM_CLASSES,
        false,
    )?;
    let sizes: Vec<usize> = parse_list(&s.or(a.points, "points", "1000,2000,4000".to_string())?, "points")?;
    let seed = s.seed(seed)?;
    // One layout at every size, so rows differ only in point density.
    let scenes = sizes
        .iter()
        .map(|&n| generate_scene(&SceneSpec::desk(n), seed))
        .collect::<Result<Vec<_>>>()?;
    let csv = bench_csv(&bench_attention(&cfg, &scenes, seed)?);
    print!("{csv}");
    if let Some(out) = s.get::<PathBuf>(a.out, "out")? {
        write(&out, &csv)?;
    }
    Ok(())
}

pub fn inspect(a: InspectArgs, config: Option<&Path>) -> Result<()> {
    let s = Settings::load(config, &["checkpoint", "data", "split", "out"])?;
    let ckpt: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let data: PathBuf = s.require(a.data, "data")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let split = s.or(a.split, "split", "train".to_string())?;
    let clouds = read_split(&data, &split)?;
    let (report, files) = export_reattention(&ckpt, &clouds, &out)?;
    println!("{} layers, {} classes", report.layers.len(), report.num_classes);
    print!("{}", trend_csv(&report));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
