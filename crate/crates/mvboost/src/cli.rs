//! Subcommands of the `mvboost` binary.

use crate::artifacts::*;
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::formats::*;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mvboost_core::camera::make_canonical_rig;
use mvboost_core::oracle::{generate_scene, gt_views, mv_generate, BACKGROUND};
use mvboost_core::pipeline::{
    ablate_strength, evaluate_scene, mean_std, paired_sign_test, pretrain_base, refined_pair_from,
    scene_inputs_for, scene_stages_for, train_boost, AblationRow, LogRow, SceneMetrics, SceneStages, SeedRecord,
};
use mvboost_core::reconstructor::{forward, LoraParams, ReconstructorParams};
use mvboost_core::render::render;
use mvboost_core::view_opt::{optimize_residual, pose_search};
use mvboost_core::{GaussianScene, Image, Rng};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "mvboost", version, about = "Boost a multi-view Gaussian reconstructor with refined pseudo ground truth")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneSet {
    /// The `[scenes]` seed range.
    Train,
    /// The held-out `[eval]` seed range.
    Eval,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate procedural scenes and their ground-truth renders.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "train")]
        set: SceneSet,
        /// Number of scenes; defaults to the set's configured count.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the base reconstructor on consistent views.
    PretrainBase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint path; the loss log goes next to it as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build refined training pairs from a scene set. Resumes partial builds.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train adapters on a refined dataset with the base frozen.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Adapter checkpoint path; the loss log goes next to it as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score base and boosted reconstructions against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        lora: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score refined targets against ground truth for several strengths.
    AblateStrength {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        /// Scene set; the configured held-out scenes when omitted.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Comma-separated strengths; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        strength: Option<Vec<f64>>,
        /// Report CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Align a reconstruction to an input image: pose search, then a gated residual.
    OptimizeView {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        lora: Option<PathBuf>,
        /// Ground-truth scene driving the multi-view generator.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Residual iterations.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one scene and write the predicted splats.
    DumpSplats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        lora: Option<PathBuf>,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenes { common, set, count, out } => gen_scenes(&common, set, count, &out),
        Command::PretrainBase { common, steps, out } => pretrain(&common, steps, &out),
        Command::BuildDataset { common, scenes, base, strength, out } => build_dataset(&common, &scenes, &base, strength, &out),
        Command::Train { common, dataset, base, steps, out } => train(&common, &dataset, &base, steps, &out),
        Command::Eval { common, base, lora, scenes, out } => eval(&common, &base, lora.as_deref(), &scenes, &out),
        Command::AblateStrength { common, base, scenes, strength, out } => ablate(&common, &base, scenes.as_deref(), strength, &out),
        Command::OptimizeView { common, base, lora, scene, input, steps, out } => {
            optimize_view(&common, &base, lora.as_deref(), &scene, &input, steps, &out)
        }
        Command::DumpSplats { common, base, lora, scene, out } => dump_splats(&common, &base, lora.as_deref(), &scene, &out),
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn meta(cfg: &Config, command: &str, inputs: &[&Path]) -> RunMeta {
    RunMeta {
        command: command.into(),
        config_hash: cfg.hash(),
        seed: hex(cfg.seed),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    }
}

fn load_model(cfg: &Config, base: &Path) -> Result<ReconstructorParams> {
    let ck = load_base(base)?;
    let want = cfg.model()?;
    if *ck.params.config() != want {
        return Err(CliError::Config(format!(
            "{} holds a {:?} model, config describes {:?}",
            base.display(),
            ck.params.config(),
            want
        )));
    }
    Ok(ck.params)
}

fn load_adapters(path: Option<&Path>, base: &ReconstructorParams) -> Result<Option<LoraParams>> {
    let Some(path) = path else { return Ok(None) };
    let ck = load_lora(path)?;
    if ck.base_fingerprint != base.fingerprint() {
        return Err(CliError::data_at(path, "adapters were trained against a different base checkpoint"));
    }
    Ok(Some(ck.lora))
}

fn log_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn write_log(path: &Path, log: &[LogRow], meta: &RunMeta) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        step: usize,
        loss: f64,
        mse: f64,
        perceptual: f64,
    }
    write_csv(path, log.iter().map(|r| Row { step: r.step, loss: r.loss, mse: r.mse, perceptual: r.perceptual }))?;
    write_toml(&meta_path(path), meta)
}

fn gen_scenes(common: &Common, set: SceneSet, count: Option<usize>, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (first, configured) = match set {
        SceneSet::Train => (cfg.scenes.first_seed, cfg.scenes.count),
        SceneSet::Eval => (cfg.eval.first_seed, cfg.eval.count),
    };
    let ids: Vec<u64> = (0..count.unwrap_or(configured) as u64).map(|i| first + i).collect();
    prepare_output_dir(out, common.force)?;
    let rig = make_canonical_rig(cfg.rig.ortho_half_extent)?;
    ids.par_iter().try_for_each(|&id| -> Result<()> {
        let scene = generate_scene(&cfg.scene_spec(id)?)?;
        let gt = gt_views(&scene, &rig, cfg.rig.resolution)?;
        write_scene_entry(out, id, &scene, &gt)
    })?;
    let m = ScenesManifest {
        format: SCENES_FORMAT.into(),
        config_hash: cfg.hash(),
        resolution: cfg.rig.resolution,
        ortho_half_extent: cfg.rig.ortho_half_extent,
        scene_ids: ids.clone(),
    };
    write_toml(&out.join(MANIFEST), &m)?;
    println!("wrote {} scenes and {} ground-truth views to {}", ids.len(), ids.len() * 6, out.display());
    Ok(())
}

fn pretrain(common: &Common, steps: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = steps {
        cfg.pretrain.steps = s;
    }
    let log_file = log_path(out);
    check_output_file(out, common.force)?;
    check_output_file(&log_file, common.force)?;
    let pc = cfg.pretrain();
    eprintln!("pretraining for {} steps", pc.steps);
    let (params, log) = pretrain_base(cfg.model()?, &cfg.dataset()?, &pc)?;
    let meta_ck = CheckpointMeta { config_hash: cfg.hash(), seed: cfg.seed, steps: pc.steps as u64 };
    save_base(out, &BaseCheckpoint { meta: meta_ck, params })?;
    write_log(&log_file, &log, &meta(&cfg, "pretrain-base", &[]))?;
    println!("base checkpoint {} ({}), {}", out.display(), log_file.display(), tail_loss(&log));
    Ok(())
}

fn tail_loss(log: &[LogRow]) -> String {
    if log.is_empty() {
        return "no steps".into();
    }
    let n = log.len().min(50);
    let mean = log[log.len() - n..].iter().map(|r| r.loss).sum::<f64>() / n as f64;
    format!("mean loss over the last {n} steps {mean:.5}")
}

fn build_dataset(common: &Common, scenes: &Path, base: &Path, strength: Option<f64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = strength {
        cfg.diffusion.strength = s;
        cfg.validate()?;
    }
    let dcfg = cfg.dataset()?;
    let params = load_model(&cfg, base)?;
    let (sm, gts) = read_scene_set(scenes)?;
    if sm.resolution != cfg.rig.resolution {
        return Err(CliError::Config(format!("scene set uses {} px views, config {} px", sm.resolution, cfg.rig.resolution)));
    }
    let template = EntryManifest {
        scene_id: 0,
        scene_seed: String::new(),
        generator_seed: String::new(),
        refine_seed: String::new(),
        config_hash: cfg.hash(),
        base_fingerprint: hex(params.fingerprint()),
        strength: cfg.diffusion.strength,
        resolution: cfg.rig.resolution,
    };
    let top = out.join(MANIFEST);
    if top.exists() {
        let old: DatasetManifest = read_toml(&top)?;
        let same = old.config_hash == template.config_hash && old.base_fingerprint == template.base_fingerprint;
        if !same {
            if !common.force {
                return Err(CliError::Data(format!(
                    "{} was built with another config or base; pass --force to rebuild",
                    out.display()
                )));
            }
            prepare_output_dir(out, true)?;
        }
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let todo: Vec<&(u64, GaussianScene)> = gts
        .iter()
        .filter(|(id, _)| common.force || completed_entry(out, *id, &template).is_none())
        .collect();
    eprintln!("building {} of {} entries", todo.len(), gts.len());
    todo.par_iter().try_for_each(|(id, gt)| -> Result<()> {
        let stages = scene_stages_for(gt.clone(), *id, &dcfg, &params)?;
        let pair = refined_pair_from(stages, &dcfg)?;
        write_entry(out, &pair, &template)
    })?;
    let m = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config_hash: template.config_hash.clone(),
        resolution: template.resolution,
        strength: template.strength,
        base_fingerprint: template.base_fingerprint.clone(),
        scene_ids: gts.iter().map(|(id, _)| *id).collect(),
    };
    write_toml(&top, &m)?;
    println!("dataset {}: {} built, {} reused", out.display(), todo.len(), gts.len() - todo.len());
    Ok(())
}

fn train(common: &Common, dataset: &Path, base: &Path, steps: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = steps {
        cfg.boost.steps = s;
    }
    let (dm, pairs) = read_dataset(dataset, cfg.rig.ortho_half_extent)?;
    if dm.resolution != cfg.rig.resolution {
        return Err(CliError::Config(format!(
            "dataset {} (config {}) holds {} px views, training config expects {} px",
            dataset.display(),
            &dm.config_hash[..12.min(dm.config_hash.len())],
            dm.resolution,
            cfg.rig.resolution
        )));
    }
    if dm.config_hash != cfg.hash() {
        eprintln!("note: dataset was built under config {}, training under {}", dm.config_hash, cfg.hash());
    }
    let params = load_model(&cfg, base)?;
    if dm.base_fingerprint != hex(params.fingerprint()) {
        return Err(CliError::data_at(dataset, "dataset was built with a different base checkpoint"));
    }
    let log_file = log_path(out);
    check_output_file(out, common.force)?;
    check_output_file(&log_file, common.force)?;
    let bc = cfg.boost()?;
    eprintln!("training adapters for {} steps on {} pairs", bc.steps, pairs.len());
    let outcome = train_boost(&pairs, &params, &bc)?;
    let ck = LoraCheckpoint {
        meta: CheckpointMeta { config_hash: cfg.hash(), seed: cfg.seed, steps: bc.steps as u64 },
        base_fingerprint: params.fingerprint(),
        lora: outcome.lora,
    };
    save_lora(out, &ck)?;
    write_log(&log_file, &outcome.log, &meta(&cfg, "train", &[dataset, base]))?;
    println!("adapter checkpoint {} ({}), {}", out.display(), log_file.display(), tail_loss(&outcome.log));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct MetricsRow {
    scene_id: u64,
    psnr: f64,
    ssim: f64,
    perc: f64,
    cd: f64,
    fscore: f64,
}

impl MetricsRow {
    fn new(scene_id: u64, m: &SceneMetrics) -> Self {
        Self { scene_id, psnr: m.psnr, ssim: m.ssim, perc: m.perceptual, cd: m.chamfer, fscore: m.fscore }
    }
}

/// Mean ± std per metric, side by side, with one-sided sign-test p-values
/// when both columns are present.
pub fn summary_table(base: &[SceneMetrics], boosted: Option<&[SceneMetrics]>) -> String {
    type Pick = fn(&SceneMetrics) -> f64;
    let metrics: [(&str, Pick, bool); 5] = [
        ("psnr", |m| m.psnr, true),
        ("ssim", |m| m.ssim, true),
        ("perceptual (proxy)", |m| m.perceptual, false),
        ("chamfer", |m| m.chamfer, false),
        ("fscore", |m| m.fscore, true),
    ];
    let mut s = String::new();
    let _ = write!(s, "{:<20}{:>22}", "metric", "base");
    if boosted.is_some() {
        let _ = write!(s, "{:>22}{:>12}", "boosted", "p");
    }
    s.push('\n');
    for (name, pick, higher) in metrics {
        let a: Vec<f64> = base.iter().map(pick).collect();
        let (m, sd) = mean_std(&a);
        let _ = write!(s, "{name:<20}{:>22}", format!("{m:.5} ± {sd:.5}"));
        if let Some(b) = boosted {
            let b: Vec<f64> = b.iter().map(pick).collect();
            let (bm, bsd) = mean_std(&b);
            let p = if higher { paired_sign_test(&b, &a) } else { paired_sign_test(&a, &b) }.unwrap_or(f64::NAN);
            let _ = write!(s, "{:>22}{p:>12.4}", format!("{bm:.5} ± {bsd:.5}"));
        }
        s.push('\n');
    }
    s
}

fn eval(common: &Common, base: &Path, lora: Option<&Path>, scenes: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let dcfg = cfg.dataset()?;
    let ecfg = cfg.eval();
    let params = load_model(&cfg, base)?;
    let adapters = load_adapters(lora, &params)?;
    let (_, gts) = read_scene_set(scenes)?;
    prepare_output_dir(out, common.force)?;
    let res = cfg.rig.resolution;
    let ext = cfg.rig.ortho_half_extent;
    let scored = gts
        .par_iter()
        .map(|(id, gt)| -> Result<(SceneMetrics, Option<SceneMetrics>)> {
            let (gt, _, inputs) = scene_inputs_for(gt.clone(), *id, &dcfg)?;
            let b = evaluate_scene(&forward(&inputs, &params, None)?, &gt, ext, res, &ecfg)?;
            let o = match &adapters {
                Some(l) => Some(evaluate_scene(&forward(&inputs, &params, Some(l))?, &gt, ext, res, &ecfg)?),
                None => None,
            };
            Ok((b, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let base_m: Vec<SceneMetrics> = scored.iter().map(|(b, _)| *b).collect();
    write_csv(&out.join("metrics_base.csv"), gts.iter().zip(&base_m).map(|((id, _), m)| MetricsRow::new(*id, m)))?;
    let boosted: Option<Vec<SceneMetrics>> = adapters.as_ref().map(|_| scored.iter().filter_map(|(_, o)| *o).collect());
    if let Some(bm) = &boosted {
        write_csv(&out.join("metrics_boosted.csv"), gts.iter().zip(bm).map(|((id, _), m)| MetricsRow::new(*id, m)))?;
    }
    let table = summary_table(&base_m, boosted.as_deref());
    std::fs::write(out.join("summary.txt"), &table).map_err(|e| CliError::io(out, e))?;
    let mut inputs = vec![base, scenes];
    inputs.extend(lora);
    write_toml(&out.join(MANIFEST), &meta(&cfg, "eval", &inputs))?;
    print!("{table}");
    Ok(())
}

fn ablate(common: &Common, base: &Path, scenes: Option<&Path>, strengths: Option<Vec<f64>>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = strengths {
        cfg.ablation.strengths = s;
        cfg.validate()?;
    }
    let dcfg = cfg.dataset()?;
    let params = load_model(&cfg, base)?;
    check_output_file(out, common.force)?;
    let gts: Vec<(u64, GaussianScene)> = match scenes {
        Some(dir) => read_scene_set(dir)?.1,
        None => cfg
            .eval_seeds()
            .into_iter()
            .map(|id| Ok((id, generate_scene(&cfg.scene_spec(id)?)?)))
            .collect::<Result<_>>()?,
    };
    let stages = gts
        .par_iter()
        .map(|(id, gt)| scene_stages_for(gt.clone(), *id, &dcfg, &params).map_err(CliError::from))
        .collect::<Result<Vec<SceneStages>>>()?;
    let rows = ablate_strength(&stages, &cfg.ablation.strengths, &dcfg)?;
    let best = best_row(&rows);
    #[derive(Serialize)]
    struct Row {
        strength: f64,
        psnr: f64,
        ssim: f64,
        perc: f64,
        best: bool,
    }
    write_csv(out, rows.iter().enumerate().map(|(i, r)| Row { strength: r.strength, psnr: r.psnr, ssim: r.ssim, perc: r.perceptual, best: Some(i) == best }))?;
    let mut inputs = vec![base];
    inputs.extend(scenes);
    write_toml(&meta_path(out), &meta(&cfg, "ablate-strength", &inputs))?;
    println!("{:>9} {:>10} {:>8} {:>10}", "strength", "psnr", "ssim", "perc");
    for (i, r) in rows.iter().enumerate() {
        let flag = if Some(i) == best { "  <- best" } else { "" };
        println!("{:>9.2} {:>10.4} {:>8.4} {:>10.5}{flag}", r.strength, r.psnr, r.ssim, r.perceptual);
    }
    Ok(())
}

/// Index of the highest-PSNR row; the first one wins ties.
pub fn best_row(rows: &[AblationRow]) -> Option<usize> {
    rows.iter().enumerate().fold(None, |acc: Option<usize>, (i, r)| match acc {
        Some(j) if rows[j].psnr >= r.psnr => Some(j),
        _ => Some(i),
    })
}

/// Ground truth and reconstruction for a scene file. Generator streams are
/// keyed by the id in the file name; `condition` replaces the front view.
fn reconstruct(
    cfg: &Config,
    scene: &Path,
    condition: Option<&Image>,
    params: &ReconstructorParams,
    adapters: Option<&LoraParams>,
) -> Result<(GaussianScene, GaussianScene)> {
    let gt = read_scene(scene)?;
    let id = scene_id_from_path(scene).unwrap_or(0);
    let dcfg = cfg.dataset()?;
    let inputs = match condition {
        Some(c) => {
            let seeds = SeedRecord::derive(id, cfg.seed);
            mv_generate(c, &gt, &dcfg.rig()?, &dcfg.inconsistency, &Rng::new(seeds.generator))?
        }
        None => scene_inputs_for(gt.clone(), id, &dcfg)?.2,
    };
    Ok((gt, forward(&inputs, params, adapters)?))
}

fn optimize_view(
    common: &Common,
    base: &Path,
    lora: Option<&Path>,
    scene: &Path,
    input: &Path,
    steps: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = steps {
        cfg.view_opt.iters = s;
    }
    let res = cfg.rig.resolution;
    let view = read_png(input)?;
    if (view.width(), view.height()) != (res, res) {
        return Err(CliError::data_at(input, format!("image is {}x{}, config expects {res}x{res}", view.width(), view.height())));
    }
    let params = load_model(&cfg, base)?;
    let adapters = load_adapters(lora, &params)?;
    prepare_output_dir(out, common.force)?;
    let (gt, theta) = reconstruct(&cfg, scene, Some(&view), &params, adapters.as_ref())?;
    let found = pose_search(&theta, &view, &cfg.pose_search())?;
    let refs = gt_views(&gt, &make_canonical_rig(cfg.rig.ortho_half_extent)?, res)?;
    let outcome = optimize_residual(&theta, &found.pose, &view, &cfg.residual(), Some(&refs))?;
    let r = &outcome.report;
    write_png(&out.join("before.png"), &render(&theta, &found.pose, res, BACKGROUND))?;
    write_png(&out.join("after.png"), &render(&outcome.scene, &found.pose, res, BACKGROUND))?;
    write_scene(&out.join("optimized.mvbgs"), &outcome.scene)?;
    #[derive(Serialize)]
    struct Row {
        pose_az: f64,
        pose_el: f64,
        dist_before: f64,
        dist_after: f64,
        psnr_drift_per_view: String,
    }
    let drift: Vec<String> = r.psnr_drift.iter().map(|(l, d)| format!("{}={d:+.4}", l.as_str())).collect();
    let row = Row {
        pose_az: r.pose.azimuth(),
        pose_el: r.pose.elevation(),
        dist_before: r.dist_before,
        dist_after: r.dist_after,
        psnr_drift_per_view: drift.join(";"),
    };
    write_csv(&out.join("report.csv"), [row])?;
    let mut inputs = vec![base, scene, input];
    inputs.extend(lora);
    write_toml(&out.join(MANIFEST), &meta(&cfg, "optimize-view", &inputs))?;
    println!(
        "pose az {:.2} el {:.1}; distance {:.5} -> {:.5}; drift {}",
        r.pose.azimuth(),
        r.pose.elevation(),
        r.dist_before,
        r.dist_after,
        drift.join(" ")
    );
    Ok(())
}

fn dump_splats(common: &Common, base: &Path, lora: Option<&Path>, scene: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let params = load_model(&cfg, base)?;
    let adapters = load_adapters(lora, &params)?;
    check_output_file(out, common.force)?;
    let (_, theta) = reconstruct(&cfg, scene, None, &params, adapters.as_ref())?;
    write_scene(out, &theta)?;
    println!("wrote {} splats to {}", theta.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn best_row_prefers_first_maximum() {
        let row = |strength, psnr| AblationRow { strength, psnr, ssim: 0.0, perceptual: 0.0 };
        assert_eq!(best_row(&[]), None);
        assert_eq!(best_row(&[row(0.1, 3.0), row(0.5, 4.0), row(0.9, 4.0)]), Some(1));
    }

    #[test]
    fn summary_reports_each_metric() {
        let m = |v: f64| SceneMetrics { psnr: v, ssim: v, perceptual: v, chamfer: v, fscore: v };
        let t = summary_table(&[m(1.0), m(2.0)], Some(&[m(2.0), m(3.0)]));
        assert_eq!(t.lines().count(), 6);
        assert!(t.contains("1.50000 ± 0.70711"));
        assert!(t.contains("perceptual (proxy)"));
    }
}
