use std::path::{Path, PathBuf};

use conepose::cone_model::default_cone_model;
use conepose::eval::plot::{render, Series};
use conepose::eval::report::{
    write_accuracy_csv, write_fit_csv, write_history_csv, write_perturbation_csv,
};
use conepose::eval::{
    run_accuracy_study, run_perturbation_study, KeypointProvider, StudyConfig, DEPTH_BINS,
};
use conepose::gradcheck::{
    check_loss_gradient, check_model_gradient, LOSS_TOLERANCE, MODEL_TOLERANCE,
};
use conepose::keypoint_loss::LossConfig;
use conepose::pnp::RansacConfig;
use conepose::regressor::{augment, train, LabeledPatch, RegressorModel, TrainConfig};
use conepose::seed;
use conepose::synth::{
    default_extrinsic, generate_scene, load_patches, read_manifest, write_dataset, SceneLayout,
    SceneSpec, DEFAULT_CAMERA_HEIGHT, DEFAULT_DEPTH_RANGE, SCENE_FILE,
};

use crate::config::{
    announce, out_dir, pick, EvalRun, FileConfig, GradcheckRun, SynthRun, TrainRun,
};
use crate::{Cli, Command, EvalCommon, EvalMode, GradcheckArgs, Provider, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<conepose::Error> for Failure {
    fn from(e: conepose::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(args) => synth(args, file),
        Command::Train(args) => train_cmd(args, file),
        Command::Eval { mode } => eval(mode, file),
        Command::Gradcheck(args) => gradcheck(args, file),
    }
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn synth(args: SynthArgs, file: FileConfig) -> Outcome {
    let run = SynthRun {
        seed: pick(args.seed, file.seed, 0),
        out: out_dir(args.out, file.out),
        cones: pick(args.cones, file.synth.cones, 104),
        depth_min: pick(args.depth_min, file.synth.depth_min, DEFAULT_DEPTH_RANGE.0),
        depth_max: pick(args.depth_max, file.synth.depth_max, DEFAULT_DEPTH_RANGE.1),
        camera_height: pick(
            args.camera_height,
            file.synth.camera_height,
            DEFAULT_CAMERA_HEIGHT,
        ),
    };
    let resolved = announce("synth", &run);
    let model = default_cone_model();
    let layout = SceneLayout {
        cones: run.cones,
        depth_min: run.depth_min,
        depth_max: run.depth_max,
        camera_extrinsic: default_extrinsic(run.camera_height),
        seed: run.seed,
        ..Default::default()
    };
    let spec = SceneSpec::random(&layout, &model)?;
    let scene = generate_scene(&spec, &model);
    create_dir(&run.out)?;
    let manifest = write_dataset(&scene.cones, &run.out)?;
    write_text(&run.out.join(SCENE_FILE), &spec.to_toml())?;
    write_text(&run.out.join("synth-config.toml"), &resolved)?;
    println!(
        "synth: {} cones placed, {} rendered, {} skipped -> {}",
        spec.cones.len(),
        manifest.records.len(),
        scene.skipped,
        manifest.path.display()
    );
    Ok(())
}

fn require(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("missing {flag} (flag or config file)")))
}

fn load_dataset(dir: &Path) -> Result<Vec<LabeledPatch>, Failure> {
    let manifest = read_manifest(dir)?;
    let patches = load_patches(dir, &manifest)?;
    Ok(patches
        .into_iter()
        .zip(&manifest.records)
        .map(|(patch, r)| LabeledPatch {
            patch,
            truth: r.keypoints,
        })
        .collect())
}

fn train_cmd(args: TrainArgs, file: FileConfig) -> Outcome {
    let defaults = TrainConfig::default();
    let t = file.train;
    let run = TrainRun {
        seed: pick(args.seed, file.seed, 0),
        out: out_dir(args.out, file.out),
        data: require(args.data.or(t.data), "--data")?,
        epochs: pick(args.epochs, t.epochs, defaults.epochs),
        lr: pick(args.lr, t.lr, defaults.learning_rate),
        momentum: pick(args.momentum, t.momentum, defaults.momentum),
        batch_size: pick(args.batch_size, t.batch_size, defaults.batch_size),
        decay_epochs: pick(args.decay_epochs, t.decay_epochs, defaults.lr_decay_epochs),
        decay_factor: pick(args.decay_factor, t.decay_factor, defaults.lr_decay_factor),
        gamma: pick(args.gamma, t.gamma, defaults.gamma),
        augment: pick(args.augment, t.augment, 0),
        jitter: !args.no_jitter && t.jitter.unwrap_or(defaults.photometric_jitter),
    };
    let resolved = announce("train", &run);
    println!(
        "train: lr={} momentum={} batch={} epochs={} decay={:?}x{} gamma={} seed={}",
        run.lr,
        run.momentum,
        run.batch_size,
        run.epochs,
        run.decay_epochs,
        run.decay_factor,
        run.gamma,
        run.seed
    );

    let base = load_dataset(&run.data)?;
    let augment_seed = seed::derive(run.seed, seed::AUGMENT);
    let mut data = Vec::with_capacity(base.len() * (1 + run.augment));
    for (i, d) in base.iter().enumerate() {
        data.push(d.clone());
        for a in 0..run.augment {
            let s = seed::indexed(augment_seed, (i * run.augment + a) as u64);
            let (patch, truth) = augment(&d.patch, &d.truth, s);
            data.push(LabeledPatch { patch, truth });
        }
    }
    let cfg = TrainConfig {
        learning_rate: run.lr,
        momentum: run.momentum,
        batch_size: run.batch_size,
        epochs: run.epochs,
        lr_decay_epochs: run.decay_epochs.clone(),
        lr_decay_factor: run.decay_factor,
        gamma: run.gamma,
        seed: run.seed,
        photometric_jitter: run.jitter,
        ..defaults
    };
    let outcome = train(&data, &cfg)?;
    create_dir(&run.out)?;
    let ckpt = run.out.join("model.bin");
    outcome.model.save(&ckpt)?;
    write_history_csv(&outcome.history, &run.out.join("history.csv"))?;
    write_text(&run.out.join("train-config.toml"), &resolved)?;
    match (outcome.history.first(), outcome.history.last()) {
        (Some(first), Some(last)) => println!(
            "train: {} patches, loss {} -> {} over {} epochs -> {}",
            data.len(),
            first.mean_loss,
            last.mean_loss,
            outcome.history.len(),
            ckpt.display()
        ),
        _ => println!(
            "train: {} patches, 0 epochs -> {}",
            data.len(),
            ckpt.display()
        ),
    }
    Ok(())
}

fn load_scene(data: &Path) -> Result<SceneSpec, Failure> {
    let path = data.join(SCENE_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(SceneSpec::from_toml(&text)?)
}

fn load_model(ckpt: Option<&Path>) -> Result<RegressorModel, Failure> {
    let path = ckpt.ok_or_else(|| Failure::Usage("model provider needs --ckpt".into()))?;
    RegressorModel::load(path).map_err(|e| Failure::Runtime(format!("cannot load checkpoint: {e}")))
}

fn study_config(seed_value: u64, inlier_threshold: f64) -> StudyConfig {
    StudyConfig {
        ransac: RansacConfig {
            inlier_threshold,
            seed: seed::derive(seed_value, seed::RANSAC),
            ..Default::default()
        },
        seed: seed_value,
    }
}

fn provider_name(p: Provider) -> String {
    match p {
        Provider::Oracle => "oracle".into(),
        Provider::Model => "model".into(),
    }
}

fn eval(mode: EvalMode, file: FileConfig) -> Outcome {
    let e = file.eval;
    let resolve_common =
        |c: EvalCommon| -> Result<(u64, PathBuf, PathBuf, Option<PathBuf>, f64), Failure> {
            Ok((
                pick(c.seed, file.seed, 0),
                out_dir(c.out, file.out.clone()),
                require(c.data.or(e.data.clone()), "--data")?,
                c.ckpt.or(e.ckpt.clone()),
                pick(
                    c.inlier_threshold,
                    e.inlier_threshold,
                    RansacConfig::default().inlier_threshold,
                ),
            ))
        };
    match mode {
        EvalMode::Accuracy {
            provider,
            sigma,
            common,
        } => {
            let (seed_value, out, data, ckpt, threshold) = resolve_common(common)?;
            let sigma = pick(sigma, e.sigma, 1.0);
            let run = EvalRun {
                mode: "accuracy".into(),
                seed: seed_value,
                out,
                data,
                provider: provider_name(provider),
                sigma: (provider == Provider::Oracle).then_some(sigma),
                ckpt: ckpt.clone().filter(|_| provider == Provider::Model),
                perturb: None,
                trials: None,
                inlier_threshold: threshold,
            };
            let resolved = announce("eval accuracy", &run);
            accuracy(&run, provider, sigma, &resolved)
        }
        EvalMode::Perturb {
            provider,
            perturb,
            trials,
            common,
        } => {
            let (seed_value, out, data, ckpt, threshold) = resolve_common(common)?;
            let run = EvalRun {
                mode: "perturb".into(),
                seed: seed_value,
                out,
                data,
                provider: provider_name(provider),
                sigma: None,
                ckpt,
                perturb: Some(pick(perturb, e.perturb.clone(), vec![0.01, 0.05, 0.1, 0.2])),
                trials: Some(pick(trials, e.trials, 30)),
                inlier_threshold: threshold,
            };
            let resolved = announce("eval perturb", &run);
            perturbation(&run, provider, &resolved)
        }
    }
}

fn accuracy(run: &EvalRun, provider: Provider, sigma: f64, resolved: &str) -> Outcome {
    let spec = load_scene(&run.data)?;
    let regressor;
    let keypoints = match provider {
        Provider::Oracle => KeypointProvider::Oracle { sigma },
        Provider::Model => {
            regressor = load_model(run.ckpt.as_deref())?;
            KeypointProvider::Model(&regressor)
        }
    };
    let study = run_accuracy_study(
        &spec,
        &default_cone_model(),
        keypoints,
        &study_config(run.seed, run.inlier_threshold),
    )?;
    create_dir(&run.out)?;
    write_accuracy_csv(&study, &run.out.join("accuracy.csv"))?;
    let depths: Vec<f64> = (4..=18).map(f64::from).collect();
    write_fit_csv(&study, &depths, &run.out.join("fit.csv"))?;
    let curve: Vec<(f64, f64)> = (0..=140)
        .map(|i| 4.0 + 0.1 * i as f64)
        .map(|d| (d, study.curve.eval(d)))
        .collect();
    let svg = render(
        "Cone position error versus depth",
        "depth (m)",
        "position error (m)",
        &[
            Series::Scatter {
                label: "per cone".into(),
                points: study.curve.samples.clone(),
            },
            Series::Line {
                label: "quadratic fit".into(),
                points: curve,
            },
        ],
    );
    write_text(&run.out.join("accuracy.svg"), &svg)?;
    write_text(&run.out.join("eval-accuracy-config.toml"), resolved)?;

    let max_error = study.curve.samples.iter().map(|s| s.1).fold(0.0, f64::max);
    println!(
        "accuracy: {} cones, {} failures, max error {max_error:.3e} m",
        study.outcomes.len(),
        study.failures()
    );
    for ((lo, hi), m) in DEPTH_BINS.iter().zip(study.binned_median_errors()) {
        match m {
            Some(m) => println!("accuracy: median error {lo}-{hi} m: {m:.4} m"),
            None => println!("accuracy: median error {lo}-{hi} m: no cones"),
        }
    }
    println!(
        "accuracy: fitted error at 10 m {:.4} m, at 16 m {:.4} m",
        study.curve.eval(10.0),
        study.curve.eval(16.0)
    );
    Ok(())
}

fn perturbation(run: &EvalRun, provider: Provider, resolved: &str) -> Outcome {
    let spec = load_scene(&run.data)?;
    let regressor;
    let keypoints = match provider {
        Provider::Oracle => KeypointProvider::Oracle { sigma: 0.0 },
        Provider::Model => {
            regressor = load_model(run.ckpt.as_deref())?;
            KeypointProvider::Model(&regressor)
        }
    };
    let magnitudes = run.perturb.clone().unwrap_or_default();
    let study = run_perturbation_study(
        &spec,
        &default_cone_model(),
        keypoints,
        &magnitudes,
        run.trials.unwrap_or(30),
        &study_config(run.seed, run.inlier_threshold),
    )?;
    create_dir(&run.out)?;
    write_perturbation_csv(&study, &run.out.join("perturbation.csv"))?;
    let series: Vec<Series> = study
        .series
        .iter()
        .map(|s| Series::Scatter {
            label: format!("±{}%", s.magnitude * 100.0),
            points: s
                .cones
                .iter()
                .filter_map(|c| c.variance.map(|v| (c.true_depth, v)))
                .collect(),
        })
        .collect();
    let svg = render(
        "Depth variance under bounding-box perturbation",
        "depth (m)",
        "depth variance (m²)",
        &series,
    );
    write_text(&run.out.join("perturbation.svg"), &svg)?;
    write_text(&run.out.join("eval-perturb-config.toml"), resolved)?;
    println!(
        "perturb: {} series, {} trials, {} common cones",
        study.series.len(),
        study.trials,
        study.common_cones().len()
    );
    for (s, mean) in study.series.iter().zip(study.mean_variances()) {
        println!(
            "perturb: magnitude {} mean depth variance {mean:.6} m^2",
            s.magnitude
        );
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs, file: FileConfig) -> Outcome {
    let run = GradcheckRun {
        seed: pick(args.seed, file.seed, 0),
        trials: pick(args.trials, file.gradcheck.trials, 1000),
        model: !args.no_model,
    };
    announce("gradcheck", &run);
    let flip = args.inject_sign_flip;
    if flip {
        log::warn!("gradcheck: analytic gradients are negated (test hook)");
    }
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };

    let loss = check_loss_gradient(run.trials, run.seed, flip);
    let mut ok = loss.passes(LOSS_TOLERANCE);
    println!(
        "loss grad max rel err < {LOSS_TOLERANCE:e}: {} (max {:.3e} over {} components, {} trials)",
        verdict(ok),
        loss.max_relative_error,
        loss.checked,
        run.trials
    );
    if run.model {
        let model = check_model_gradient(run.seed, &LossConfig::default(), flip);
        let model_ok = model.passes(MODEL_TOLERANCE);
        println!(
            "model grad max rel err < {MODEL_TOLERANCE:e}: {} (max {:.3e} over {} parameters, {} skipped at ReLU kinks)",
            verdict(model_ok),
            model.max_relative_error,
            model.checked,
            model.skipped
        );
        ok &= model_ok;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}
