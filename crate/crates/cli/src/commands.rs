use std::time::Instant;

use orthoinfer::inference::{
    estimate_variance_split, infer as infer_all, InferenceReport, MarginalCorrelation, SplitMode,
    VarianceEstimate,
};
use orthoinfer::model_sets::{
    candidate_count, ci_compatibility_filter, default_screen_size, enumerate_confidence_set,
    stability_screen, MAX_CANDIDATES,
};
use orthoinfer::rng::{derive_seed, Role};
use orthoinfer::simlab::{
    export_figure_data, factorial_effects, run_experiment, table1_csv, table1_preset, CellSummary,
    SimConfig,
};
use orthoinfer::{center_columns, collapse_correlated, load_csv, Dataset, OrthoConfig};
use serde_json::json;

use crate::error::CliError;
use crate::output::{input_digest, resolve_seed, OutputDir, RunManifest};
use crate::{DataArgs, InferArgs, ModelsArgs, SimulateArgs};

const STABILITY_THRESHOLD: f64 = 0.5;

struct Prepared {
    data: Dataset,
    manifest: RunManifest,
    out: OutputDir,
    seed: u64,
    started: Instant,
}

fn check_alpha(alpha: f64, name: &str) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!("--{name} must lie in (0, 1), got {alpha}")))
    }
}

fn prepare(a: &DataArgs, command: &str, extra: serde_json::Value) -> Result<Prepared, CliError> {
    let started = Instant::now();
    check_alpha(a.alpha, "alpha")?;
    if !(a.delta > 0.0 && a.delta.is_finite()) {
        return Err(CliError::Input(format!("--delta must be positive, got {}", a.delta)));
    }
    if let Some(t) = a.tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Input(format!("--tau must be positive, got {t}")));
        }
    }
    let raw = load_csv(&a.data, &a.response).map_err(|e| CliError::from_lib("loading data", e))?;
    let centered = center_columns(&raw);
    let mut out = OutputDir::create(&a.out)?;
    let data = if a.no_collapse {
        centered
    } else {
        let (d, map) = collapse_correlated(&centered, a.collapse_threshold)
            .map_err(|e| CliError::from_lib("collapsing columns", e))?;
        out.write("collapse.json", &(map.to_json()? + "\n"))?;
        d
    };

    let (seed, source) = resolve_seed(a.seed, None);
    let mut config = json!({
        "response": a.response,
        "delta": a.delta,
        "alpha": a.alpha,
        "tau": a.tau,
        "collapse_threshold": if a.no_collapse { None } else { Some(a.collapse_threshold) },
    });
    if let (Some(c), serde_json::Value::Object(e)) = (config.as_object_mut(), extra) {
        c.extend(e);
    }
    let mut manifest = RunManifest::new(command, config, seed, source);
    manifest.body.inputs.push(input_digest(&a.data)?);
    manifest.note("n", data.n());
    manifest.note("p", data.p());
    Ok(Prepared {
        data,
        manifest,
        out,
        seed,
        started,
    })
}

fn variance(p: &mut Prepared, tau: Option<f64>) -> Result<VarianceEstimate, CliError> {
    let v = match tau {
        Some(t) => VarianceEstimate::known(t)?,
        None => {
            let s = derive_seed(p.seed, Role::Split, 0);
            p.manifest.body.seeds.insert("variance_split".into(), s);
            estimate_variance_split(&p.data, &MarginalCorrelation, s, SplitMode::Refitted)
                .map_err(|e| CliError::from_lib("estimating the error variance", e))?
        }
    };
    p.manifest.note("variance", v);
    Ok(v)
}

fn run_inference(
    p: &Prepared,
    a: &DataArgs,
    columns: Option<&[usize]>,
    v: VarianceEstimate,
) -> Result<InferenceReport, CliError> {
    infer_all(&p.data, columns, &OrthoConfig::with_delta(a.delta), v, a.alpha)
        .map_err(|e| CliError::from_lib("estimating coefficients", e))
}

fn finish(p: Prepared) -> Result<(), CliError> {
    let mut m = p.manifest;
    m.wall_time_seconds = p.started.elapsed().as_secs_f64();
    p.out.finish(m)?;
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    let a = &a.data;
    let mut p = prepare(a, "infer", json!({}))?;
    let v = variance(&mut p, a.tau)?;
    let report = run_inference(&p, a, None, v)?;
    p.out.write("report.csv", &report.to_csv())?;
    p.out.write_json("report.json", &report)?;
    finish(p)
}

/// Resolves each entry as a column label first, then as a zero-based index.
fn resolve_columns(d: &Dataset, names: &[String]) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let name = name.trim();
        let j = match d.column_ids().iter().position(|c| c == name) {
            Some(j) => j,
            None => match name.parse::<usize>() {
                Ok(j) if j < d.p() => j,
                _ => {
                    return Err(CliError::Input(format!(
                        "--s-hat entry '{name}' is neither a retained column label nor an index below {}",
                        d.p()
                    )))
                }
            },
        };
        if out.contains(&j) {
            return Err(CliError::Input(format!("--s-hat lists column '{name}' twice")));
        }
        out.push(j);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn models(a: &ModelsArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.alpha_f) {
        return Err(CliError::Input(format!("--alpha-f must lie in [0, 1], got {}", a.alpha_f)));
    }
    if !(a.slack > 0.0 && a.slack.is_finite()) {
        return Err(CliError::Input(format!("--slack must be positive, got {}", a.slack)));
    }
    if a.max_size == 0 {
        return Err(CliError::Input("--max-size must be at least 1".into()));
    }
    let extra = json!({
        "alpha_f": a.alpha_f,
        "max_size": a.max_size,
        "slack": a.slack,
        "s_hat": if a.screen { None } else { Some(&a.s_hat) },
        "stability_reps": if a.screen { Some(a.stability_reps) } else { None },
        "screen_size": a.screen_size,
    });
    let mut p = prepare(&a.data, "models", extra)?;

    let s_hat = if a.screen {
        let size = a.screen_size.unwrap_or_else(|| default_screen_size(p.data.n()));
        let s = derive_seed(p.seed, Role::Screen, 0);
        p.manifest.body.seeds.insert("stability".into(), s);
        let sel = stability_screen(
            &p.data,
            &MarginalCorrelation,
            size,
            a.stability_reps,
            STABILITY_THRESHOLD,
            s,
        )
        .map_err(|e| CliError::from_lib("stability screening", e))?;
        p.out.write_json("stability.json", &sel)?;
        if sel.selected.is_empty() {
            return Err(CliError::Input(
                "stability screening selected no variables; lower --screen-size or add data".into(),
            ));
        }
        sel.selected
    } else {
        resolve_columns(&p.data, &a.s_hat)?
    };
    let labels: Vec<String> = s_hat.iter().map(|&j| p.data.column_ids()[j].clone()).collect();
    p.manifest.note("encompassing", &labels);

    let count = candidate_count(s_hat.len(), a.max_size);
    p.manifest.note("candidates", count);
    if count > MAX_CANDIDATES {
        return Err(CliError::Sizing(format!(
            "{count} candidate models from |S| = {} and max size {} exceed the limit of {MAX_CANDIDATES}",
            s_hat.len(),
            a.max_size
        )));
    }

    let v = variance(&mut p, a.data.tau)?;
    let report = run_inference(&p, &a.data, Some(&s_hat), v)?;
    let set = enumerate_confidence_set(p.data.y(), &p.data, &s_hat, a.alpha_f, a.max_size)
        .map_err(|e| CliError::from_lib("building the model confidence set", e))?;
    let set = ci_compatibility_filter(&set, &report, a.slack)?;
    let all_labels = p.data.column_ids().to_vec();

    p.manifest.note("retained", set.members.len());
    p.manifest.note("compatible", set.compatible_members().len());
    p.out.write("inference.csv", &report.to_csv())?;
    p.out.write("models.csv", &set.to_table_csv(&all_labels, false)?)?;
    p.out.write("compatible.csv", &set.to_table_csv(&all_labels, true)?)?;
    p.out.write_json("models.json", &set)?;
    finish(p)
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if a.reps == Some(0) {
        return Err(CliError::Input("--reps must be at least 1".into()));
    }
    let (configs, seed, source, inputs, command_config) = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg = SimConfig::from_json(&text)
                .map_err(|e| CliError::from_lib(&format!("config {}", path.display()), e))?;
            if let Some(r) = a.reps {
                cfg.reps = r;
            }
            let (seed, source) = resolve_seed(a.seed, cfg.master_seed);
            cfg.master_seed = Some(seed);
            let value = serde_json::to_value(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
            (vec![cfg], seed, source, vec![input_digest(path)?], value)
        }
        None => {
            let reps = a.reps.unwrap_or(1000);
            let (seed, source) = resolve_seed(a.seed, None);
            (table1_preset(reps, seed), seed, source, Vec::new(), json!({ "preset": "table1", "reps": reps }))
        }
    };

    let mut out = OutputDir::create(&a.out)?;
    let mut manifest = RunManifest::new("simulate", command_config, seed, source);
    manifest.body.inputs = inputs;
    let mut cells = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let cell_seed = cfg.master_seed.expect("seed assigned above");
        let report = run_experiment(cfg).map_err(|e| {
            CliError::from_lib(&format!("cell rho={} n={} p={}", cfg.rho, cfg.n, cfg.p), e)
        })?;
        let stem = if configs.len() == 1 {
            "simulation".to_owned()
        } else {
            format!("cell{}_rho{}_n{}_p{}", i + 1, cfg.rho, cfg.n, cfg.p)
        };
        manifest.body.seeds.insert(stem.clone(), cell_seed);
        if let Some(m) = report.mean_variance_estimate() {
            manifest.note(&format!("{stem}_mean_variance_estimate"), m);
        }
        out.write_json(&format!("{stem}.json"), &report)?;
        out.write(&format!("{stem}_figure.csv"), &export_figure_data(&report))?;
        cells.push(CellSummary::from_report(&report));
    }
    out.write("table1.csv", &table1_csv(&cells))?;
    if cells.len() == 8 {
        match factorial_effects(&cells) {
            Ok(eff) => {
                out.write("effects.csv", &eff.to_csv())?;
                out.write_json("effects.json", &eff)?;
            }
            Err(e) => manifest.note("effects_error", e.to_string()),
        }
    }
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    out.finish(manifest)?;
    Ok(())
}
