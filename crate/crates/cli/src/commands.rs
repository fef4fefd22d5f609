use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use nlqkd_core::analysis::keyrate::WINDOW_SPAN_FWHM;
use nlqkd_core::analysis::{
    cross_correlate, fit_gaussian, heralding_efficiencies, optimize_window_up_to, CorrelationHistogram, FitError,
    GaussianFit, HeraldingEstimate, KeyRateReport, Normalization, PairFilter,
};
use nlqkd_core::model::{dcm_sweep, distance_curves, local_compensation_comparison, DistanceCurve, LocalComparison};
use nlqkd_core::montecarlo::{expected_singles_cps, simulate, SimError, TagStreams, TimeTag};
use nlqkd_core::physics::{CompensationModule, LinkScenario};
use nlqkd_core::rng::child_seed;
use nlqkd_core::tagio::{read_tags_file, write_tags_file};

use crate::config::{HistogramPairs, ScenarioFile};
use crate::error::CliError;
use crate::output::{write_json, Cell, Format, Table};

/// Soft bounds on the optimized brightness for the distance preset, cps.
pub const REFERENCE_BRIGHTNESS_RANGE: (f64, f64) = (6.6e6, 2.5e9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Mc,
    Model,
    Both,
}

pub struct Context {
    pub file: ScenarioFile,
    /// Preset name or config path, recorded in the manifest.
    pub config_source: String,
    pub out: PathBuf,
    pub format: Format,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_source: &'a str,
    outputs: Vec<String>,
    results: Value,
    resolved_config: &'a ScenarioFile,
}

impl Context {
    fn prepare(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }

    fn manifest(&self, command: &str, mut outputs: Vec<String>, results: Value) -> Result<(), CliError> {
        outputs.push("manifest.json".into());
        let m = Manifest {
            tool: "nlqkd",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_source: &self.config_source,
            outputs,
            results,
            resolved_config: &self.file,
        };
        write_json(&self.out, "manifest.json", &m)?;
        Ok(())
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Capacity { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let scenario = ctx.file.scenario()?;
    let run = ctx.file.simulation.run();
    let streams = simulate(&scenario, &run).map_err(sim_error)?;
    let ext = if ctx.file.simulation.compress { "csv.gz" } else { "csv" };
    let names = [format!("tags_a.{ext}"), format!("tags_b.{ext}")];
    for (name, tags) in names.iter().zip([&streams.a, &streams.b]) {
        write_tags_file(tags, &ctx.out.join(name)).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let (exp_a, exp_b) = expected_singles_cps(&scenario);
    let d = run.duration_s;
    ctx.manifest(
        "simulate",
        names.to_vec(),
        json!({
            "seed": run.seed,
            "duration_s": d,
            "tags_a": streams.a.len(),
            "tags_b": streams.b.len(),
            "expected_tags_a": exp_a * d,
            "expected_tags_b": exp_b * d,
            "timing_budget_ps": scenario.timing_budget(),
        }),
    )
}

/// Everything the analysis of one pair of streams produces.
#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub histogram: CorrelationHistogram,
    pub fit: Result<GaussianFit, FitError>,
    pub report: KeyRateReport,
    pub heralding: Option<HeraldingEstimate>,
}

/// Histogram, fit, window optimization and Klyshko estimate.
///
/// When the fit fails the window search spans eight predicted ΔT instead.
pub fn analyze_streams(
    file: &ScenarioFile,
    scenario: &LinkScenario,
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    duration_s: f64,
) -> Result<AnalysisOutcome, CliError> {
    let a = &file.analysis;
    let delay = a.delay_ps.unwrap_or_else(|| scenario.expected_delay_ps());
    let filter = match a.histogram_pairs {
        HistogramPairs::All => PairFilter::All,
        HistogramPairs::Correct => PairFilter::Correct,
    };
    let histogram = cross_correlate(
        tags_a,
        tags_b,
        a.bin_width_ps,
        delay.round() as i64,
        a.search_half_range_ps,
        duration_s,
        filter,
    )
    .map_err(|e| CliError::Config(e.to_string()))?
    .normalized(Normalization::PerSecond);
    let fit = fit_gaussian(&histogram);
    let width = match &fit {
        Ok(f) => f.fwhm,
        Err(_) => scenario.timing_budget().delta_t,
    };
    let report = optimize_window_up_to(
        tags_a,
        tags_b,
        delay,
        duration_s,
        scenario.error_correction_efficiency,
        WINDOW_SPAN_FWHM * width,
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    let heralding = if duration_s > 0.0 && fit.is_ok() {
        heralding_efficiencies(
            tags_a,
            tags_b,
            delay,
            3.0 * width,
            a.background_offset_ps,
            scenario.arm_a.detector.dark_count_cps,
            scenario.arm_b.detector.dark_count_cps,
            duration_s,
        )
        .ok()
    } else {
        None
    };
    Ok(AnalysisOutcome {
        histogram,
        fit,
        report,
        heralding,
    })
}

#[derive(Serialize)]
struct FitFile<'a> {
    ok: bool,
    fit: Option<&'a GaussianFit>,
    error: Option<&'a FitError>,
    message: Option<String>,
}

#[derive(Serialize)]
struct KeyRateFile<'a> {
    #[serde(flatten)]
    report: &'a KeyRateReport,
    heralding: Option<&'a HeraldingEstimate>,
}

fn read_stream(path: &Path) -> Result<Vec<TimeTag>, CliError> {
    read_tags_file(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn analyze_cmd(ctx: &Context, tags_a: &Path, tags_b: &Path, duration_s: Option<f64>) -> Result<(), CliError> {
    ctx.prepare()?;
    let scenario = ctx.file.scenario()?;
    let a = read_stream(tags_a)?;
    let b = read_stream(tags_b)?;
    let duration = duration_s.unwrap_or(ctx.file.simulation.duration_s);
    if !(duration > 0.0) {
        return Err(CliError::Config(format!("analysis duration {duration} s must be > 0")));
    }
    let outcome = analyze_streams(&ctx.file, &scenario, &a, &b, duration)?;

    let mut hist = Table::new(&["delay_ps", "counts", "counts_per_s"]);
    let per_s = outcome.histogram.values();
    for (k, (&c, v)) in outcome.histogram.counts.iter().zip(per_s).enumerate() {
        hist.push(vec![
            Cell::Int(outcome.histogram.bin_start(k)),
            Cell::Int(c as i64),
            v.into(),
        ]);
    }
    let mut outputs = vec![hist.write(&ctx.out, "histogram", Format::Csv)?];
    let fit_file = FitFile {
        ok: outcome.fit.is_ok(),
        fit: outcome.fit.as_ref().ok(),
        error: outcome.fit.as_ref().err(),
        message: outcome.fit.as_ref().err().map(|e| e.to_string()),
    };
    outputs.push(write_json(&ctx.out, "fit.json", &fit_file)?);
    outputs.push(write_json(
        &ctx.out,
        "keyrate.json",
        &KeyRateFile {
            report: &outcome.report,
            heralding: outcome.heralding.as_ref(),
        },
    )?);
    ctx.manifest(
        "analyze",
        outputs,
        json!({
            "tags_a": a.len(),
            "tags_b": b.len(),
            "duration_s": duration,
            "fit_ok": outcome.fit.is_ok(),
            "secure_key_rate": outcome.report.secure_key_rate,
        }),
    )
}

pub const DCM_COLUMNS: [&str; 7] = [
    "dcm_ps_per_nm",
    "delta_t_ps",
    "t_cc_ps",
    "cc_tot_cps",
    "qber",
    "r_s_bits_per_s",
    "source",
];

/// Scenario with the compensator reading replaced; the module delivers
/// `reading + offset`.
fn scenario_at_reading(base: &LinkScenario, reading: f64, offset: f64) -> Result<LinkScenario, CliError> {
    let mut s = base.clone();
    let arm = if s.arm_a.compensator.is_some() {
        &mut s.arm_a
    } else if s.arm_b.compensator.is_some() {
        &mut s.arm_b
    } else {
        return Err(CliError::Config(
            "Monte Carlo DCM sweep needs a compensator in arm_a or arm_b".into(),
        ));
    };
    let c = arm.compensator.as_ref().expect("checked above");
    let module = CompensationModule::new(
        reading + offset,
        c.insertion_loss_db,
        c.range_min_ps_per_nm.min(reading) + offset,
        c.range_max_ps_per_nm.max(reading) + offset,
        c.step_ps_per_nm,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    arm.compensator = Some(module);
    Ok(s)
}

/// Rows of the DCM sweep in ascending reading order, model before MC at
/// each reading.
pub fn dcm_table(file: &ScenarioFile, mode: Mode) -> Result<Table, CliError> {
    let sw = &file.dcm_sweep;
    let readings = nlqkd_core::model::grid(sw.dcm_min_ps_per_nm, sw.dcm_max_ps_per_nm, sw.step_ps_per_nm)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let model_rows = if mode != Mode::Mc {
        let params = file.model_parameters();
        let sweep = dcm_sweep(
            &params,
            sw.fiber_dispersion_ps_per_nm.expect("resolved"),
            sw.sigma_lambda_nm.expect("resolved"),
            sw.dcm_min_ps_per_nm,
            sw.dcm_max_ps_per_nm,
            sw.step_ps_per_nm,
            sw.calibration_offset_ps_per_nm,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        sweep
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.x.into(),
                    r.delta_t_ps.into(),
                    r.t_cc_ps.into(),
                    r.cc_tot_cps.into(),
                    r.qber.into(),
                    r.r_s.into(),
                    "model".into(),
                ]
            })
            .collect()
    } else {
        Vec::new()
    };

    let mc_rows = if mode != Mode::Model {
        let base = file.scenario()?;
        let mut rows = Vec::with_capacity(readings.len());
        for (i, &d) in readings.iter().enumerate() {
            let scenario = scenario_at_reading(&base, d, sw.calibration_offset_ps_per_nm)?;
            let mut run = file.simulation.run();
            run.seed = child_seed(file.simulation.seed, i as u64);
            run.duration_s = sw.mc_duration_s;
            let TagStreams { a, b } = simulate(&scenario, &run).map_err(sim_error)?;
            let o = analyze_streams(file, &scenario, &a, &b, sw.mc_duration_s)?;
            rows.push(vec![
                d.into(),
                o.fit.as_ref().ok().map(|f| f.fwhm).into(),
                o.report.t_cc_ps.into(),
                o.report.cc_total_cps.into(),
                o.report.qber.into(),
                o.report.secure_key_rate.into(),
                "mc".into(),
            ]);
        }
        rows
    } else {
        Vec::new()
    };

    let mut table = Table::new(&DCM_COLUMNS);
    let mut model_iter = model_rows.into_iter();
    let mut mc_iter = mc_rows.into_iter();
    for _ in &readings {
        if let Some(r) = model_iter.next() {
            table.push(r);
        }
        if let Some(r) = mc_iter.next() {
            table.push(r);
        }
    }
    Ok(table)
}

pub fn sweep_dcm_cmd(ctx: &Context, mode: Mode) -> Result<(), CliError> {
    ctx.prepare()?;
    let table = dcm_table(&ctx.file, mode)?;
    let name = table.write(&ctx.out, "sweep_dcm", ctx.format)?;
    let mode_name = match mode {
        Mode::Mc => "mc",
        Mode::Model => "model",
        Mode::Both => "both",
    };
    ctx.manifest(
        "sweep-dcm",
        vec![name],
        json!({ "mode": mode_name, "rows": table.rows.len(), "seed": ctx.file.simulation.seed }),
    )
}

pub const DISTANCE_COLUMNS: [&str; 9] = [
    "distance_km",
    "compensated",
    "brightness_cps",
    "sigma_d_ps",
    "delta_t_ps",
    "t_cc_ps",
    "cc_tot_cps",
    "qber",
    "r_s_bits_per_s",
];

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub width_ghz: f64,
    pub compensated: bool,
    pub max_distance_km: Option<f64>,
    pub no_key: bool,
    pub rows: usize,
    /// Optimized brightness over the rows that carry key.
    pub brightness_min_cps: Option<f64>,
    pub brightness_max_cps: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthGain {
    pub width_ghz: f64,
    /// Compensated minus uncompensated maximum distance, km.
    pub gain_km: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceSummary {
    pub epsilon_bits_per_s: f64,
    pub curves: Vec<CurveSummary>,
    pub gains: Vec<WidthGain>,
    /// Whether every optimized brightness with key lies in the reference range.
    pub brightness_within_reference_range: bool,
}

pub fn summarize_curves(curves: &[DistanceCurve], epsilon: f64) -> DistanceSummary {
    let summaries: Vec<CurveSummary> = curves
        .iter()
        .map(|c| {
            let keyed: Vec<f64> = c
                .sweep
                .rows
                .iter()
                .filter(|r| r.r_s > epsilon)
                .map(|r| r.brightness_cps)
                .collect();
            CurveSummary {
                width_ghz: c.width_ghz,
                compensated: c.compensated,
                max_distance_km: c.max_distance_km,
                no_key: c.max_distance_km.is_none(),
                rows: c.sweep.rows.len(),
                brightness_min_cps: keyed.iter().copied().reduce(f64::min),
                brightness_max_cps: keyed.iter().copied().reduce(f64::max),
            }
        })
        .collect();
    let mut gains = Vec::new();
    for c in &summaries {
        if c.compensated {
            let other = summaries.iter().find(|u| !u.compensated && u.width_ghz == c.width_ghz);
            let gain = match (c.max_distance_km, other.and_then(|u| u.max_distance_km)) {
                (Some(comp), Some(unc)) => Some(comp - unc),
                _ => None,
            };
            gains.push(WidthGain {
                width_ghz: c.width_ghz,
                gain_km: gain,
            });
        }
    }
    let (lo, hi) = REFERENCE_BRIGHTNESS_RANGE;
    let brightness_within_reference_range = summaries
        .iter()
        .all(|c| c.brightness_min_cps.is_none_or(|b| b >= lo) && c.brightness_max_cps.is_none_or(|b| b <= hi));
    DistanceSummary {
        epsilon_bits_per_s: epsilon,
        curves: summaries,
        gains,
        brightness_within_reference_range,
    }
}

pub fn sweep_distance_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let cfg = &ctx.file.distance_sweep;
    let curves = distance_curves(cfg).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut outputs = Vec::new();
    for &w in &cfg.widths_ghz {
        let mut table = Table::new(&DISTANCE_COLUMNS);
        for c in curves.iter().filter(|c| c.width_ghz == w) {
            for r in &c.sweep.rows {
                table.push(vec![
                    r.x.into(),
                    Cell::Int(c.compensated as i64),
                    r.brightness_cps.into(),
                    r.sigma_d_ps.into(),
                    r.delta_t_ps.into(),
                    r.t_cc_ps.into(),
                    r.cc_tot_cps.into(),
                    r.qber.into(),
                    r.r_s.into(),
                ]);
            }
        }
        outputs.push(table.write(&ctx.out, &format!("distance_{w}ghz"), ctx.format)?);
    }
    let summary = summarize_curves(&curves, cfg.epsilon_bits_per_s);
    if !summary.brightness_within_reference_range {
        eprintln!(
            "note: optimized brightness leaves [{:.1e}, {:.1e}] cps on at least one curve",
            REFERENCE_BRIGHTNESS_RANGE.0, REFERENCE_BRIGHTNESS_RANGE.1
        );
    }
    outputs.push(write_json(&ctx.out, "distance_summary.json", &summary)?);
    ctx.manifest("sweep-distance", outputs, json!({ "curves": curves.len() }))
}

pub fn compare_local(file: &ScenarioFile) -> Result<LocalComparison, CliError> {
    local_compensation_comparison(&file.model_parameters(), file.local_comparison.second_module_loss_db)
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn compare_local_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.prepare()?;
    let c = compare_local(&ctx.file)?;
    let name = write_json(
        &ctx.out,
        "compare_local.json",
        &json!({
            "nonlocal_rs": c.nonlocal_rs,
            "local_rs": c.local_rs,
            "ratio": c.ratio,
            "second_module_loss_db": ctx.file.local_comparison.second_module_loss_db,
        }),
    )?;
    ctx.manifest("compare-local", vec![name], json!({ "ratio": c.ratio }))
}
