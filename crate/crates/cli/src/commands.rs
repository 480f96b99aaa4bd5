use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use drivecast_core::forecaster::{
    train_with_observer, write_predictions_csv, EpochRecord, Hyperparams, ModelWeights,
    TrainHistory, TrainingSchedule, PRIMARY_INDICES, VEHICLE_FEATURE_NAMES,
};
use drivecast_core::hyperopt::{tune as run_tuner, SearchSpace, TrialValue, TunerConfig};
use drivecast_core::neural_core::Tensor2;
use drivecast_core::signal_pipeline::{
    fit_norm_stats, make_windows, power_retention, split_laps, LapManifest, LapRecording,
    ManifestEntry, NormStats, SignalError, Split, WindowShape, WindowedDataset, CUTOFF_HZ,
};
use drivecast_core::synth_world::{scenario, simulate_laps};
use drivecast_core::track_geometry::{
    fit_track, fit_track_with_report, read_margins_csv, write_margins_csv, TrackSpline,
    DEFAULT_KNOT_SPACING,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::config::expand_config;
use crate::error::HarnessError;
use crate::eval::*;
use crate::manifest::{Run, MANIFEST_SUFFIX};
use crate::svg::{plot_csv, PanelSpec};

/// Loss weight used when no model supplies one.
pub const DEFAULT_SECONDARY_WEIGHT: f64 = 0.3138;

/// Parses `argv` (program name first) and runs the command. Help and
/// version requests print and return `Ok`.
pub fn run(argv: Vec<String>) -> Result<()> {
    let argv = expand_config(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let msg = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(HarnessError::Usage(msg).into());
        }
    };
    match &cli.command {
        Command::TrackFit(a) => track_fit(&cli, a, &argv),
        Command::Gen(a) => gen(&cli, a, &argv),
        Command::Prepare(a) => prepare(&cli, a, &argv),
        Command::Train(a) => train(&cli, a, &argv),
        Command::Tune(a) => tune(&cli, a, &argv),
        Command::Crossval(a) => crossval(&cli, a, &argv),
        Command::Evaluate(a) => evaluate(&cli, a, &argv),
        Command::Predict(a) => predict(&cli, a, &argv),
        Command::Bench(a) => bench(&cli, a, &argv),
    }
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| {
        HarnessError::InvalidArgument(format!("{} needs --out", cli.command.name())).into()
    })
}

/// A `.json` `--out` names the primary file; anything else is a directory
/// holding `default_file`.
fn file_or_dir(out: &Path, default_file: &str) -> (PathBuf, String, String) {
    if out.extension().is_some_and(|e| e == "json") {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        let dir = if dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            dir
        };
        let file = out.file_name().unwrap().to_string_lossy().into_owned();
        let stem = out.file_stem().unwrap().to_string_lossy().into_owned();
        (dir, file, format!("{stem}.{MANIFEST_SUFFIX}"))
    } else {
        (
            out.to_path_buf(),
            default_file.to_string(),
            MANIFEST_SUFFIX.to_string(),
        )
    }
}

fn start(cli: &Cli, dir: &Path, manifest_name: String, argv: &[String]) -> Result<Run> {
    let mut run = Run::new(cli.command.name(), dir, manifest_name, argv.to_vec())?;
    run.seed("seed", cli.seed);
    if let Some(c) = &cli.config {
        run.read_input(c)?;
    }
    Ok(run)
}

fn progress(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn track_fit(cli: &Cli, a: &TrackFitArgs, argv: &[String]) -> Result<()> {
    let (dir, file, manifest) = file_or_dir(out_path(cli)?, "track.json");
    let mut run = start(cli, &dir, manifest, argv)?;
    let text = run.read_input_string(&a.input)?;
    let margins = read_margins_csv(&text)?;
    let (track, rep) = fit_track_with_report(&margins, a.knot_spacing)?;
    run.write(&file, track.to_json().as_bytes())?;
    let report_name = if file == "track.json" {
        "fit_report.json".to_string()
    } else {
        format!("{}.fit_report.json", file.trim_end_matches(".json"))
    };
    run.write_json(
        &report_name,
        &json!({
            "length": rep.length,
            "closed": track.is_closed(),
            "knots": track.knots().len(),
            "residual_rms": rep.residual_rms,
            "residual_max": rep.residual_max,
            "min_width": rep.min_width,
            "continuity_residual": track.continuity_residual(),
        }),
    )?;
    progress(
        cli,
        format!(
            "fitted {:.1} m track, margin residual max {:.4} m",
            rep.length, rep.residual_max
        ),
    );
    run.finish(cli)?;
    Ok(())
}

fn gen(cli: &Cli, a: &GenArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    let sc = scenario(&a.scenario)?;
    let mut profile = sc.profile;
    profile.seed = cli.seed;
    run.seed("driver", profile.seed);
    let margins = sc.margins()?;
    let track = fit_track(&margins, DEFAULT_KNOT_SPACING)?;
    let sim = simulate_laps(&track, &profile, a.laps, a.fs)?;
    run.write("margins.csv", write_margins_csv(&margins).as_bytes())?;
    let mut entries = Vec::new();
    for lap in &sim.laps {
        let file = format!("laps/{}.csv", lap.lap_id);
        run.write(&file, lap.to_csv()?.as_bytes())?;
        entries.push(ManifestEntry {
            id: lap.lap_id.clone(),
            file,
        });
    }
    let manifest = LapManifest {
        sample_rate: a.fs,
        track: "margins.csv".into(),
        laps: entries,
        scenario: Some(sc.name.clone()),
    };
    run.write_json("laps.json", &manifest)?;
    run.write_json(
        "gen_report.json",
        &json!({
            "scenario": sc.name,
            "laps": sim.laps.len(),
            "lap_samples": sim.laps.iter().map(|l| l.len()).collect::<Vec<_>>(),
            "aborted": sim.aborted,
            "track_length": track.length(),
            "recipe": sc.recipe,
            "profile": profile,
            "reversed": sc.reversed,
        }),
    )?;
    progress(
        cli,
        format!(
            "{} laps of {} ({} aborted attempts)",
            sim.laps.len(),
            sc.name,
            sim.aborted.len()
        ),
    );
    run.finish(cli)?;
    Ok(())
}

fn read_laps(run: &mut Run, manifest: &Path) -> Result<(LapManifest, PathBuf, Vec<LapRecording>)> {
    let text = run.read_input_string(manifest)?;
    let m: LapManifest = serde_json::from_str(&text)
        .map_err(|e| SignalError::Format(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    if m.laps.is_empty() {
        return Err(SignalError::NoLaps.into());
    }
    let mut laps = Vec::with_capacity(m.laps.len());
    for e in &m.laps {
        let p = LapManifest::resolve(&base, &e.file);
        let text = run.read_input_string(&p)?;
        laps.push(
            LapRecording::from_csv(&text, &e.id, m.sample_rate)
                .with_context(|| format!("lap {}", e.id))?,
        );
    }
    Ok((m, base, laps))
}

/// `explicit`, or the manifest's track entry; margins CSVs are fitted.
fn load_track(
    run: &mut Run,
    explicit: Option<&Path>,
    m: &LapManifest,
    base: &Path,
) -> Result<(TrackSpline, PathBuf)> {
    let p = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| LapManifest::resolve(base, &m.track));
    let text = run.read_input_string(&p)?;
    let track = if p.extension().is_some_and(|e| e == "csv") {
        fit_track(&read_margins_csv(&text)?, DEFAULT_KNOT_SPACING)?
    } else {
        TrackSpline::from_json(&text)?
    };
    Ok((track, p))
}

fn to_window_rate(laps: &[LapRecording]) -> Result<Vec<LapRecording>> {
    laps.iter()
        .map(|lap| {
            let ratio = lap.sample_rate / WINDOW_RATE;
            let factor = ratio.round() as usize;
            if factor == 0 || (ratio - factor as f64).abs() > 1e-9 {
                return Err(HarnessError::InvalidArgument(format!(
                    "lap {} is sampled at {} Hz, not a multiple of {WINDOW_RATE} Hz",
                    lap.lap_id, lap.sample_rate
                ))
                .into());
            }
            if factor == 1 {
                Ok(lap.clone())
            } else {
                Ok(lap.downsample(CUTOFF_HZ, factor)?)
            }
        })
        .collect()
}

/// Train/validation/test lap counts for `ratio` scaled to `n` laps; each
/// nonzero share keeps at least one lap.
pub fn scaled_split(ratio: &str, n: usize) -> Result<(usize, usize, usize)> {
    let parts: Vec<f64> = ratio
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            HarnessError::InvalidArgument(format!("split {ratio:?} is not three numbers"))
        })?;
    if parts.len() != 3 || parts.iter().any(|v| !v.is_finite() || *v < 0.0) || parts[0] <= 0.0 {
        return Err(HarnessError::InvalidArgument(format!(
            "split {ratio:?} needs three non-negative numbers with a positive train share"
        ))
        .into());
    }
    let sum: f64 = parts.iter().sum();
    let share = |v: f64| {
        if v == 0.0 {
            0
        } else {
            ((v * n as f64 / sum).round() as usize).max(1)
        }
    };
    let (val, test) = (share(parts[1]), share(parts[2]));
    if val + test >= n {
        return Err(HarnessError::InsufficientLaps {
            laps: n,
            reason: format!("split {ratio} leaves no training lap"),
        }
        .into());
    }
    Ok((n - val - test, val, test))
}

/// Lap assignment and window shape of a prepared directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub ratio: String,
    pub counts: [usize; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub shape: WindowShape,
}

fn pick(laps: &[LapRecording], idx: &[usize]) -> Vec<LapRecording> {
    idx.iter().map(|&i| laps[i].clone()).collect()
}

fn pick_ids(laps: &[LapRecording], ids: &[String]) -> Result<Vec<LapRecording>> {
    ids.iter()
        .map(|id| {
            laps.iter()
                .find(|l| &l.lap_id == id)
                .cloned()
                .ok_or_else(|| {
                    HarnessError::InvalidArgument(format!("lap {id} is not in the dataset")).into()
                })
        })
        .collect()
}

fn prepare(cli: &Cli, a: &PrepareArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    run.seed("split", cli.seed);
    let (m, base, raw) = read_laps(&mut run, &a.manifest)?;
    let (track, track_path) = load_track(&mut run, a.track.as_deref(), &m, &base)?;
    let n = raw.len();
    let counts = scaled_split(&a.split, n)?;
    let laps = to_window_rate(&raw)?;
    let retention: BTreeMap<String, BTreeMap<String, f64>> = raw
        .iter()
        .zip(&laps)
        .map(|(r, d)| {
            let per = PRIMARY_INDICES
                .iter()
                .map(|&j| {
                    (
                        VEHICLE_FEATURE_NAMES[j].to_string(),
                        power_retention(r.feature(j), d.feature(j)),
                    )
                })
                .collect();
            (r.lap_id.clone(), per)
        })
        .collect();
    let (tr, va, te) = split_laps(n, counts, cli.seed)?;
    let stats = fit_norm_stats(&pick(&laps, &tr), Some(&track))?;
    let shape = WindowShape::new(a.tp, a.tf, a.dr, a.pr);
    let source = json!({
        "manifest": a.manifest.to_string_lossy(),
        "track": track_path.to_string_lossy(),
    });
    let mut window_counts = BTreeMap::new();
    for (split, idx) in [
        (Split::Train, &tr),
        (Split::Validation, &va),
        (Split::Test, &te),
    ] {
        let mut ds = make_windows(&pick(&laps, idx), &track, shape, &stats)?.with_split(split);
        ds.source = source.clone();
        ds.save(&dir, split.as_str())?;
        run.record_output(&format!("{}.bin", split.as_str()))?;
        run.record_output(&format!("{}.json", split.as_str()))?;
        window_counts.insert(split.as_str(), ds.len());
    }

    let mut entries = Vec::new();
    for lap in &laps {
        let file = format!("laps/{}.csv", lap.lap_id);
        run.write(&file, lap.to_csv()?.as_bytes())?;
        entries.push(ManifestEntry {
            id: lap.lap_id.clone(),
            file,
        });
    }
    run.write_json(
        "laps.json",
        &LapManifest {
            sample_rate: WINDOW_RATE,
            track: "track.json".into(),
            laps: entries,
            scenario: m.scenario.clone(),
        },
    )?;
    run.write("track.json", track.to_json().as_bytes())?;
    let ids = |idx: &[usize]| {
        idx.iter()
            .map(|&i| laps[i].lap_id.clone())
            .collect::<Vec<_>>()
    };
    let split_file = SplitFile {
        seed: cli.seed,
        ratio: a.split.clone(),
        counts: [counts.0, counts.1, counts.2],
        train: ids(&tr),
        validation: ids(&va),
        test: ids(&te),
        shape,
    };
    run.write_json("split.json", &split_file)?;
    run.write_json("stats.json", &stats)?;
    run.write_json(
        "prepare_report.json",
        &json!({
            "laps": n,
            "source_rate": m.sample_rate,
            "window_rate": WINDOW_RATE,
            "counts": split_file.counts,
            "windows": window_counts,
            "power_retention": retention,
        }),
    )?;
    progress(
        cli,
        format!(
            "{n} laps split {}-{}-{}, {} training windows",
            counts.0, counts.1, counts.2, window_counts["train"]
        ),
    );
    run.finish(cli)?;
    Ok(())
}

/// Everything a prepared directory holds besides the windows.
pub struct Prepared {
    pub split: SplitFile,
    pub stats: NormStats,
    pub laps: Vec<LapRecording>,
    pub track: TrackSpline,
}

fn load_prepared(run: &mut Run, dir: &Path) -> Result<Prepared> {
    let split: SplitFile = serde_json::from_str(&run.read_input_string(&dir.join("split.json"))?)
        .context("parsing split.json")?;
    let stats: NormStats = serde_json::from_str(&run.read_input_string(&dir.join("stats.json"))?)
        .context("parsing stats.json")?;
    let (m, base, laps) = read_laps(run, &dir.join("laps.json"))?;
    let (track, _) = load_track(run, None, &m, &base)?;
    Ok(Prepared {
        split,
        stats,
        laps,
        track,
    })
}

fn load_dataset(run: &mut Run, dir: &Path, stem: &str) -> Result<WindowedDataset> {
    run.read_input(&dir.join(format!("{stem}.json")))?;
    run.read_input(&dir.join(format!("{stem}.bin")))?;
    Ok(WindowedDataset::load(dir, stem)?)
}

fn load_model(run: &mut Run, path: &Path) -> Result<ModelWeights> {
    let bytes = run.read_input(path)?;
    ModelWeights::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// Keeps every `stride`-th window.
pub fn subsample(ds: &WindowedDataset, stride: usize) -> WindowedDataset {
    let st = ds.shape.stride();
    let keep: Vec<usize> = (0..ds.len()).step_by(stride.max(1)).collect();
    let mut data = Vec::with_capacity(keep.len() * st);
    for &i in &keep {
        data.extend_from_slice(&ds.data[i * st..(i + 1) * st]);
    }
    WindowedDataset {
        shape: ds.shape,
        split: ds.split,
        stats: ds.stats.clone(),
        lap_ids: ds.lap_ids.clone(),
        origins: keep.iter().map(|&i| ds.origins[i]).collect(),
        data,
        source: ds.source.clone(),
    }
}

pub fn schedule_for(b: &BudgetArgs) -> Result<TrainingSchedule> {
    let mut s = TrainingSchedule::default();
    match b.budget {
        Budget::Full => {}
        Budget::Small => {
            s.phase1.decay_epochs = 10;
            s.phase1.max_epochs = 12;
            s.phase1.patience = 4;
            s.phase2.max_epochs = 6;
            s.phase2.patience = 3;
        }
        Budget::Tiny => {
            s.phase1.decay_epochs = 2;
            s.phase1.max_epochs = 2;
            s.phase1.patience = 1;
            s.phase2.max_epochs = 1;
            s.phase2.patience = 1;
        }
    }
    if let Some(e) = b.phase1_epochs {
        s.phase1.max_epochs = e;
        s.phase1.decay_epochs = s.phase1.decay_epochs.min(e.max(1));
    }
    if let Some(e) = b.phase2_epochs {
        s.phase2.max_epochs = e;
    }
    if let Some(p) = b.patience {
        s.phase1.patience = p;
        s.phase2.patience = p;
    }
    if let Some(bs) = b.batch_size {
        s.batch_size = bs;
    }
    if b.train_stride == 0 {
        return Err(
            HarnessError::InvalidArgument("--train-stride must be at least 1".into()).into(),
        );
    }
    s.validate()?;
    Ok(s)
}

fn hyperparams(a: &HpArgs, t_p: usize) -> Result<Hyperparams> {
    let hp = Hyperparams {
        r: a.r,
        w: a.w,
        t_p,
        u_ed: a.u_ed,
        xi: a.xi,
    };
    hp.validate()?;
    Ok(hp)
}

fn history_csv(h: &TrainHistory) -> Result<String> {
    csv_string(
        &[
            "row",
            "phase",
            "epoch",
            "lr",
            "train_loss",
            "val_loss",
            "val_metric",
        ],
        h.epochs.iter().enumerate().map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                e.phase.to_string(),
                e.epoch.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_metric.to_string(),
            ]
        }),
    )
}

fn history_svg(csv_text: &str) -> Result<String> {
    plot_csv(
        csv_text,
        "Training history",
        "row",
        &[
            PanelSpec {
                y_label: "loss",
                columns: &["train_loss", "val_loss"],
            },
            PanelSpec {
                y_label: "validation metric",
                columns: &["val_metric"],
            },
        ],
    )
}

/// Trains from `seed` with progress lines on stderr.
fn fit_model(
    cli: &Cli,
    model: ModelWeights,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<(ModelWeights, TrainHistory)> {
    let quiet = cli.quiet;
    let mut observer = |e: &EpochRecord, _: &ModelWeights| {
        if !quiet {
            eprintln!(
                "phase {} epoch {:>3}  lr {:.2e}  train {:.5}  val {:.5}  metric {:.5}",
                e.phase, e.epoch, e.lr, e.train_loss, e.val_loss, e.val_metric
            );
        }
    };
    Ok(train_with_observer(
        model,
        train_ds,
        val_ds,
        schedule,
        seed,
        &mut observer,
    )?)
}

fn score_splits(
    model: &ModelWeights,
    parts: &[(&str, &WindowedDataset)],
) -> Result<Vec<WindowScore>> {
    let mut all = Vec::new();
    for (name, ds) in parts {
        if !ds.is_empty() {
            all.extend(score_windows(&ModelPredictor(model), ds, model.hp.w, name)?.scores);
        }
    }
    Ok(all)
}

fn train(cli: &Cli, a: &TrainArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    let p = load_prepared(&mut run, &a.data)?;
    let train_ds = load_dataset(&mut run, &a.data, "train")?;
    let val_ds = load_dataset(&mut run, &a.data, "validation")?;
    let test_ds = load_dataset(&mut run, &a.data, "test")?;
    let shape = train_ds.shape;
    let hp = hyperparams(&a.hp, shape.t_p)?;
    let schedule = schedule_for(&a.budget)?;
    run.seed("init", cli.seed);
    run.seed("training", cli.seed);
    let model = ModelWeights::build(
        hp,
        shape.t_f,
        shape.p_r,
        shape.d_r,
        p.stats.clone(),
        cli.seed,
    )?;
    progress(
        cli,
        format!(
            "training {} parameters on {} windows (stride {})",
            model.param_count(),
            train_ds.len(),
            a.budget.train_stride
        ),
    );
    let (model, history) = fit_model(
        cli,
        model,
        &subsample(&train_ds, a.budget.train_stride),
        &val_ds,
        &schedule,
        cli.seed,
    )?;
    run.write("model.bin", &model.to_bytes())?;
    let hist = history_csv(&history)?;
    run.write("history.csv", hist.as_bytes())?;
    run.write_json("history.json", &history)?;
    run.write("loss.svg", history_svg(&hist)?.as_bytes())?;
    let scores = score_splits(
        &model,
        &[
            ("train", &train_ds),
            ("validation", &val_ds),
            ("test", &test_ds),
        ],
    )?;
    run.write("windows.csv", scores_to_csv(&scores)?.as_bytes())?;
    let report = EvaluationReport::from_scores("model", &scores, "validation");
    run.write_json("report.json", &report)?;
    run.write_json("schedule.json", &schedule)?;
    if let Some(v) = report.splits.get("validation") {
        progress(
            cli,
            format!(
                "validation metric {:.5} (constant hold {:.5})",
                v.metric, v.baseline_metric
            ),
        );
    }
    run.finish(cli)?;
    Ok(())
}

fn tune(cli: &Cli, a: &TuneArgs, argv: &[String]) -> Result<()> {
    let (dir, file, manifest) = file_or_dir(out_path(cli)?, "trials.json");
    let mut run = start(cli, &dir, manifest, argv)?;
    let space = match a.space.as_str() {
        "default" => SearchSpace::forecaster_default(),
        other => {
            return Err(
                HarnessError::InvalidArgument(format!("unknown search space {other:?}")).into(),
            )
        }
    };
    let p = load_prepared(&mut run, &a.data)?;
    let schedule = schedule_for(&a.budget)?;
    let cfg = TunerConfig {
        n_random: a.n_random,
        n_bayes: a.n_bayes,
        seed: cli.seed,
        ..Default::default()
    };
    run.seed("tuner", cli.seed);
    let train_laps = pick_ids(&p.laps, &p.split.train)?;
    let val_laps = pick_ids(&p.laps, &p.split.validation)?;
    let base = p.split.shape;
    let stem = file.trim_end_matches(".json").to_string();
    let mut histories: Vec<(String, String)> = Vec::new();
    let mut trial = 0usize;
    let (best, trials) = run_tuner(&space, &cfg, &mut |hp, seed| {
        trial += 1;
        progress(cli, format!("trial {trial}: {hp:?}"));
        let shape = WindowShape::new(hp.t_p, base.t_f, base.d_r, base.p_r);
        let go = || -> Result<TrainHistory> {
            let tr = make_windows(&train_laps, &p.track, shape, &p.stats)?;
            let va = make_windows(&val_laps, &p.track, shape, &p.stats)?;
            let model =
                ModelWeights::build(*hp, base.t_f, base.p_r, base.d_r, p.stats.clone(), seed)?;
            let (_, h) = fit_model(
                cli,
                model,
                &subsample(&tr, a.budget.train_stride),
                &va,
                &schedule,
                seed,
            )?;
            Ok(h)
        };
        let h = go().map_err(|e| format!("{e:#}"))?;
        let rel = format!("{stem}_history/trial_{trial:02}.csv");
        histories.push((rel.clone(), history_csv(&h).map_err(|e| e.to_string())?));
        Ok(TrialValue {
            metric: h.best_val_metric,
            history: Some(rel),
        })
    })?;
    for (rel, text) in &histories {
        run.write(rel, text.as_bytes())?;
    }
    let incumbent = trials
        .iter()
        .filter(|t| t.metric.is_some())
        .min_by(|x, y| x.metric.unwrap().total_cmp(&y.metric.unwrap()))
        .map(|t| t.index);
    run.write_json(
        &file,
        &json!({
            "space": space,
            "budget": a.budget,
            "schedule": schedule,
            "tuner": cfg,
            "incumbent": incumbent,
            "best": best,
            "trials": trials,
        }),
    )?;
    run.write_json(&format!("{stem}.best.json"), &best)?;
    progress(cli, format!("best {best:?}"));
    run.finish(cli)?;
    Ok(())
}

fn crossval(cli: &Cli, a: &CrossvalArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    if a.repeats == 0 {
        return Err(HarnessError::InvalidArgument("--repeats must be at least 1".into()).into());
    }
    let p = load_prepared(&mut run, &a.data)?;
    let n = p.laps.len();
    let counts = scaled_split(&a.split, n)?;
    if counts.1 == 0 {
        return Err(HarnessError::InsufficientLaps {
            laps: n,
            reason: "cross-validation needs a validation lap".into(),
        }
        .into());
    }
    let shape = p.split.shape;
    let hp = hyperparams(&a.hp, shape.t_p)?;
    let schedule = schedule_for(&a.budget)?;
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut pooled_val = Vec::new();
    let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in 0..a.repeats {
        let rs = cli.seed + r as u64 * a.seed_stride;
        seeds.push(rs);
        progress(
            cli,
            format!("repeat {} of {} (seed {rs})", r + 1, a.repeats),
        );
        let (tr, va, te) = split_laps(n, counts, rs)?;
        let stats = fit_norm_stats(&pick(&p.laps, &tr), Some(&p.track))?;
        let windows = |idx: &[usize]| make_windows(&pick(&p.laps, idx), &p.track, shape, &stats);
        let (train_ds, val_ds, test_ds) = (windows(&tr)?, windows(&va)?, windows(&te)?);
        let model = ModelWeights::build(hp, shape.t_f, shape.p_r, shape.d_r, stats.clone(), rs)?;
        let (model, history) = fit_model(
            cli,
            model,
            &subsample(&train_ds, a.budget.train_stride),
            &val_ds,
            &schedule,
            rs,
        )?;
        let scores = score_splits(
            &model,
            &[
                ("train", &train_ds),
                ("validation", &val_ds),
                ("test", &test_ds),
            ],
        )?;
        let rep = format!("repeats/repeat_{:02}", r + 1);
        run.write(
            &format!("{rep}/windows.csv"),
            scores_to_csv(&scores)?.as_bytes(),
        )?;
        run.write(
            &format!("{rep}/history.csv"),
            history_csv(&history)?.as_bytes(),
        )?;
        let summary = EvaluationReport::from_scores("model", &scores, "validation");
        run.write_json(&format!("{rep}/report.json"), &summary)?;
        let s = |k: &str| summary.splits.get(k).copied();
        let (t, v) = (
            s("train").expect("train windows"),
            s("validation").expect("validation windows"),
        );
        per.entry("train_loss").or_default().push(t.loss);
        per.entry("train_metric").or_default().push(t.metric);
        per.entry("validation_loss").or_default().push(v.loss);
        per.entry("validation_metric").or_default().push(v.metric);
        per.entry("validation_baseline_metric")
            .or_default()
            .push(v.baseline_metric);
        let test = s("test");
        if let Some(x) = test {
            per.entry("test_metric").or_default().push(x.metric);
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        rows.push(vec![
            (r + 1).to_string(),
            rs.to_string(),
            t.loss.to_string(),
            t.metric.to_string(),
            v.loss.to_string(),
            v.metric.to_string(),
            v.baseline_metric.to_string(),
            opt(test.map(|x| x.loss)),
            opt(test.map(|x| x.metric)),
        ]);
        pooled_val.extend(scores.into_iter().filter(|s| s.split == "validation"));
    }
    let table = csv_string(
        &[
            "repeat",
            "seed",
            "train_loss",
            "train_metric",
            "validation_loss",
            "validation_metric",
            "validation_baseline_metric",
            "test_loss",
            "test_metric",
        ],
        rows,
    )?;
    run.write("crossval.csv", table.as_bytes())?;
    let ms = |k: &str| MeanStd::of(&per[k]);
    let mut report = EvaluationReport::from_scores("model", &pooled_val, "validation");
    report.splits.clear();
    report.crossval = Some(CrossvalStats {
        repeats: a.repeats,
        seeds,
        train_loss: ms("train_loss"),
        train_metric: ms("train_metric"),
        validation_loss: ms("validation_loss"),
        validation_metric: ms("validation_metric"),
        validation_baseline_metric: ms("validation_baseline_metric"),
        test_metric: (per.get("test_metric").map(|v| v.len()) == Some(a.repeats))
            .then(|| ms("test_metric")),
    });
    run.write_json("crossval.json", &report)?;
    run.finish(cli)?;
    Ok(())
}

/// The evaluation windows selected by `--data`/`--manifest`, and a name for them.
fn load_source(
    run: &mut Run,
    src: &DataArgs,
    model: Option<&ModelWeights>,
) -> Result<(WindowedDataset, String)> {
    match (&src.data, &src.manifest) {
        (Some(dir), _) => {
            if !["train", "validation", "test"].contains(&src.split.as_str()) {
                return Err(HarnessError::InvalidArgument(format!(
                    "--split must be train, validation or test, not {:?}",
                    src.split
                ))
                .into());
            }
            let ds = load_dataset(run, dir, &src.split)?;
            if let Some(m) = model {
                check_shape(m, &ds)?;
                if ds.stats != m.stats {
                    return Err(HarnessError::ShapeMismatch {
                        expected: "the model's normalization statistics".into(),
                        found: format!(
                            "different statistics in {}; pass the raw laps with --manifest",
                            dir.display()
                        ),
                    }
                    .into());
                }
            }
            if ds.is_empty() {
                return Err(HarnessError::InvalidArgument(format!(
                    "split {} has no windows",
                    src.split
                ))
                .into());
            }
            Ok((ds, src.split.clone()))
        }
        (None, Some(manifest)) => {
            let m = model
                .ok_or_else(|| HarnessError::InvalidArgument("--manifest needs --model".into()))?;
            let (lm, base, raw) = read_laps(run, manifest)?;
            let (track, _) = load_track(run, src.track.as_deref(), &lm, &base)?;
            let laps = to_window_rate(&raw)?;
            let shape = WindowShape::new(m.hp.t_p, m.t_f, m.d_r, m.p_r);
            let mut ds = make_windows(&laps, &track, shape, &m.stats)?;
            ds.source = json!({ "manifest": manifest.to_string_lossy() });
            Ok((ds, lm.scenario.unwrap_or_else(|| "laps".into())))
        }
        (None, None) => {
            Err(HarnessError::InvalidArgument("give --data or --manifest".into()).into())
        }
    }
}

fn lap_index(ds: &WindowedDataset, lap: Option<&str>) -> Result<usize> {
    match lap {
        None => Ok(0),
        Some(id) => ds.lap_ids.iter().position(|l| l == id).ok_or_else(|| {
            HarnessError::InvalidArgument(format!(
                "lap {id} not found (have {})",
                ds.lap_ids.join(", ")
            ))
            .into()
        }),
    }
}

fn primary_panels<'a>(columns: &'a [Vec<&'a str>]) -> Vec<PanelSpec<'a>> {
    PRIMARY_INDICES
        .iter()
        .zip(columns)
        .map(|(&j, cols)| PanelSpec {
            y_label: VEHICLE_FEATURE_NAMES[j],
            columns: cols,
        })
        .collect()
}

pub fn trace_svg(csv_text: &str, title: &str) -> Result<String> {
    let cols: Vec<Vec<String>> = PRIMARY_INDICES
        .iter()
        .map(|&j| {
            let n = VEHICLE_FEATURE_NAMES[j];
            vec![format!("{n}_truth"), format!("{n}_pred")]
        })
        .collect();
    let refs: Vec<Vec<&str>> = cols
        .iter()
        .map(|c| c.iter().map(String::as_str).collect())
        .collect();
    plot_csv(csv_text, title, "time_s", &primary_panels(&refs))
}

pub fn window_svg(csv_text: &str, title: &str) -> Result<String> {
    let cols: Vec<Vec<String>> = PRIMARY_INDICES
        .iter()
        .map(|&j| {
            let n = VEHICLE_FEATURE_NAMES[j];
            vec![
                format!("{n}_truth"),
                format!("{n}_pred"),
                format!("{n}_hold"),
            ]
        })
        .collect();
    let refs: Vec<Vec<&str>> = cols
        .iter()
        .map(|c| c.iter().map(String::as_str).collect())
        .collect();
    plot_csv(csv_text, title, "step", &primary_panels(&refs))
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    let model = a
        .model
        .as_deref()
        .map(|p| load_model(&mut run, p))
        .transpose()?;
    if a.predictor == PredictorKind::Model && model.is_none() {
        return Err(
            HarnessError::InvalidArgument("the model predictor needs --model".into()).into(),
        );
    }
    let (ds, split) = load_source(&mut run, &a.source, model.as_ref())?;
    let w = model.as_ref().map_or(DEFAULT_SECONDARY_WEIGHT, |m| m.hp.w);
    let model_predictor;
    let predictor: &dyn Predictor = match a.predictor {
        PredictorKind::Model => {
            model_predictor = ModelPredictor(model.as_ref().expect("checked above"));
            &model_predictor
        }
        PredictorKind::Hold => &ConstantHold,
        PredictorKind::Oracle => &Oracle,
    };
    let scored = score_windows(predictor, &ds, w, &split)?;
    let report = EvaluationReport::from_scores(predictor.label(), &scored.scores, &split);
    run.write_json("report.json", &report)?;
    run.write("windows.csv", scores_to_csv(&scored.scores)?.as_bytes())?;
    run.write(
        "per_feature.csv",
        per_feature_csv(&report.feature_mae)?.as_bytes(),
    )?;
    for (li, lap) in ds.lap_ids.iter().enumerate() {
        let text = trace_csv(&ds, &scored.pred, li)?;
        run.write(&format!("traces/{lap}.csv"), text.as_bytes())?;
        let title = format!("{lap}: forecast made {} steps earlier", ds.shape.t_f);
        run.write(
            &format!("traces/{lap}.svg"),
            trace_svg(&text, &title)?.as_bytes(),
        )?;
    }
    if !a.window_at.is_empty() {
        let li = lap_index(&ds, a.lap.as_deref())?;
        let lap = &ds.lap_ids[li];
        let ks: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.origins[i].lap as usize == li)
            .map(|i| ds.origins[i].k as usize)
            .collect();
        for &k in &a.window_at {
            let i = (0..ds.len())
                .find(|&i| ds.origins[i].lap as usize == li && ds.origins[i].k as usize == k)
                .ok_or_else(|| {
                    HarnessError::InvalidArgument(format!(
                        "lap {lap} has windows at k = {}..={}, not {k}",
                        ks.first().copied().unwrap_or(0),
                        ks.last().copied().unwrap_or(0)
                    ))
                })?;
            let text = window_csv(&ds, &scored.pred, i)?;
            run.write(&format!("windows/{lap}_k{k}.csv"), text.as_bytes())?;
            let title = format!("{lap}, window at k = {k}");
            run.write(
                &format!("windows/{lap}_k{k}.svg"),
                window_svg(&text, &title)?.as_bytes(),
            )?;
        }
    }
    let s = &report.splits[&split];
    progress(
        cli,
        format!(
            "{split}: metric {:.5}, constant hold {:.5}, ratio {:.3}",
            s.metric, s.baseline_metric, s.metric_ratio
        ),
    );
    run.finish(cli)?;
    Ok(())
}

fn predict(cli: &Cli, a: &PredictArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    let model = load_model(&mut run, &a.model)?;
    let (ds, _) = load_source(&mut run, &a.source, Some(&model))?;
    for (li, lap) in ds.lap_ids.iter().enumerate() {
        let idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.origins[i].lap as usize == li)
            .collect();
        let mut buf = Vec::new();
        write_predictions_csv(&model, &ds, &idx, &mut buf)?;
        run.write(&format!("predictions/{lap}.csv"), &buf)?;
    }
    run.finish(cli)?;
    Ok(())
}

/// Physical-unit inputs of window `i`, as an online caller would supply them.
fn raw_window(ds: &WindowedDataset, i: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (ds.shape.n, ds.shape.m);
    let st = &ds.stats;
    let past = ds
        .past(i)
        .iter()
        .enumerate()
        .map(|(e, &z)| st.denormalize_vehicle(e % n, f64::from(z)))
        .collect();
    let road = ds
        .road(i)
        .iter()
        .enumerate()
        .map(|(e, &z)| f64::from(z) * st.road_std[e % m] + st.road_mean[e % m])
        .collect();
    (past, road)
}

/// Normalizes raw inputs, forecasts and denormalizes the forecast.
pub fn predict_raw(model: &ModelWeights, past: &[f64], road: &[f64]) -> Result<Vec<f64>> {
    let (n, m) = (model.n, model.m);
    let st = &model.stats;
    let pz = past
        .iter()
        .enumerate()
        .map(|(e, &v)| st.normalize_vehicle(e % n, v))
        .collect();
    let rz = road
        .iter()
        .enumerate()
        .map(|(e, &v)| st.normalize_road(e % m, v))
        .collect();
    let out = model.predict(
        &Tensor2::from_vec(model.hp.t_p + 1, n, pz)?,
        &Tensor2::from_vec(model.p_r, m, rz)?,
    )?;
    Ok(out
        .data
        .iter()
        .enumerate()
        .map(|(e, &z)| st.denormalize_vehicle(e % n, z))
        .collect())
}

fn bench(cli: &Cli, a: &BenchArgs, argv: &[String]) -> Result<()> {
    let dir = out_path(cli)?.to_path_buf();
    let mut run = start(cli, &dir, MANIFEST_SUFFIX.into(), argv)?;
    let model = load_model(&mut run, &a.model)?;
    let (ds, _) = load_source(&mut run, &a.source, Some(&model))?;
    let li = lap_index(&ds, a.lap.as_deref())?;
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.origins[i].lap as usize == li)
        .collect();
    if a.n_windows == 0 || a.start + a.n_windows > idx.len() {
        return Err(HarnessError::InvalidArgument(format!(
            "lap {} has {} windows; cannot time {} from {}",
            ds.lap_ids[li],
            idx.len(),
            a.n_windows,
            a.start
        ))
        .into());
    }
    let chosen = &idx[a.start..a.start + a.n_windows];
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = chosen.iter().map(|&i| raw_window(&ds, i)).collect();
    // one untimed call so allocation and page faults stay out of the first sample
    std::hint::black_box(predict_raw(&model, &inputs[0].0, &inputs[0].1)?);
    let mut ms = Vec::with_capacity(inputs.len());
    for (past, road) in &inputs {
        let t0 = Instant::now();
        let out = predict_raw(
            &model,
            std::hint::black_box(past),
            std::hint::black_box(road),
        )?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let table = csv_string(
        &["window", "lap", "k", "ms"],
        chosen.iter().zip(&ms).enumerate().map(|(w, (&i, t))| {
            vec![
                (w + 1).to_string(),
                ds.lap_ids[li].clone(),
                ds.origins[i].k.to_string(),
                t.to_string(),
            ]
        }),
    )?;
    run.write("bench.csv", table.as_bytes())?;
    run.write(
        "bench.svg",
        plot_csv(
            &table,
            "Computation time per prediction window",
            "window",
            &[PanelSpec {
                y_label: "ms",
                columns: &["ms"],
            }],
        )?
        .as_bytes(),
    )?;
    let timing = TimingStats::of(&ms);
    let report = EvaluationReport {
        predictor: "model".into(),
        splits: BTreeMap::new(),
        mae_split: None,
        primary_mae: BTreeMap::new(),
        feature_mae: BTreeMap::new(),
        crossval: None,
        timing: Some(timing),
    };
    run.write_json("bench.json", &report)?;
    progress(
        cli,
        format!(
            "{} windows: mean {:.3} ms, std {:.3} ms",
            timing.windows,
            timing.mean_ms,
            timing.std_ms.unwrap_or(0.0)
        ),
    );
    run.finish(cli)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_scales_with_lap_count() {
        assert_eq!(scaled_split("31,4,1", 36).unwrap(), (31, 4, 1));
        assert_eq!(scaled_split("31,4,1", 12).unwrap(), (10, 1, 1));
        assert_eq!(scaled_split("31,4,1", 3).unwrap(), (1, 1, 1));
        assert_eq!(scaled_split("2,1,0", 6).unwrap(), (4, 2, 0));
        let err = scaled_split("31,4,1", 2).unwrap_err();
        assert_eq!(crate::error::error_kind(&err), "InsufficientLaps");
        assert!(scaled_split("a,b", 5).is_err());
    }

    #[test]
    fn budgets_validate() {
        for budget in [Budget::Full, Budget::Small, Budget::Tiny] {
            let b = BudgetArgs {
                budget,
                phase1_epochs: None,
                phase2_epochs: None,
                patience: None,
                batch_size: None,
                train_stride: 1,
            };
            schedule_for(&b).unwrap();
        }
    }

    #[test]
    fn json_out_names_the_file() {
        let (d, f, m) = file_or_dir(Path::new("runs/trials.json"), "x.json");
        assert_eq!(d, PathBuf::from("runs"));
        assert_eq!(f, "trials.json");
        assert_eq!(m, "trials.run_manifest.json");
        let (d, f, m) = file_or_dir(Path::new("runs/t"), "track.json");
        assert_eq!(
            (d, f.as_str(), m.as_str()),
            (PathBuf::from("runs/t"), "track.json", MANIFEST_SUFFIX)
        );
    }
}
