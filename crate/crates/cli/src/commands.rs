//! The five commands. Each returns the text it wants printed; artifacts go
//! to the paths it is given. Nothing here depends on wall-clock time, so a
//! rerun with the same inputs produces byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use reparam_core::diagnostics::{coverage_check, histogram_samples, injectivity_check, kl_divergence, HistDomain};
use reparam_core::estimator::{
    convergence_curve, estimate_emitter, estimate_mis, estimate_reparam, Estimate, EstimatorSetup, Strategy, ToyScene,
};
use reparam_core::pdfnet::{train_pdf, PdfApprox, PdfModel};
use reparam_core::reparam::{train_sampler, SamplerModel, TrainLog};
use reparam_core::rng::derive_seed;
use reparam_core::targets::{Condition, TargetDensity};
use reparam_core::{Error, Real, Result};

use crate::config::{ExperimentConfig, Precision};
use crate::model_file::{ModelFile, TrainingMeta};

const TAG_INIT: u64 = 1;
const TAG_PDF_INIT: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_ESTIMATE: u64 = 4;
const TAG_CONVERGE: u64 = 5;

/// Log rows kept in loss CSVs: every 10th step plus the last one.
const LOG_EVERY: usize = 10;

/// Process exit code for an error: 3 for numerical/training failures,
/// 2 for everything the user can fix (usage, config, files).
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config("out", format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::config("out", format!("cannot write {}: {e}", path.display())))
}

fn loss_csv(log: &TrainLog) -> String {
    let mut s = String::from("step,loss,grad_norm,clamped\n");
    let last = log.rows.len().saturating_sub(1);
    for r in log.rows.iter().filter(|r| r.step % LOG_EVERY == 0 || r.step == last) {
        writeln!(s, "{},{},{},{}", r.step, r.loss, r.grad_norm, r.clamped).unwrap();
    }
    s
}

fn condition_of<R: Real>(c: &Condition<R>) -> Option<[f64; 2]> {
    c.omega_o.map(|o| [o[0].as_f64(), o[1].as_f64()])
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub reference: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `(mean − reference) / std_error`.
    pub z: f64,
}

impl EstimateRow {
    fn new<R: Real>(e: &Estimate<R>, reference: f64) -> Self {
        let (mean, se) = (e.mean.as_f64(), e.std_error().as_f64());
        EstimateRow { reference, mean, std_error: se, z: (mean - reference) / se }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub brdf: EstimateRow,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mis: Option<EstimateRow>,
    pub emitter: EstimateRow,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub condition: Option<[f64; 2]>,
    pub kl: f64,
    pub coverage_miss: f64,
    pub outside_fraction: f64,
    pub min_det: f64,
    pub negative_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdf_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<EstimateReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub precision: Precision,
    pub samples: usize,
    pub bins: usize,
    pub conditions: Vec<ConditionReport>,
}

fn hist_domain<R: Real>(target: &TargetDensity<R>) -> HistDomain {
    if target.dim() == 1 {
        let (lo, hi) = target.line_bounds();
        HistDomain::Line { lo: lo.as_f64(), hi: hi.as_f64() }
    } else {
        HistDomain::Disk
    }
}

fn point<R: Real>(u: &[f64]) -> Vec<R> {
    u.iter().map(|&v| R::lit(v)).collect()
}

/// Histogram diagnostics, optional `p̂` fidelity and estimator checks for
/// every evaluation condition. `write_hist` receives each histogram's CSV.
fn evaluate_model<R: Real>(
    cfg: &ExperimentConfig,
    target: &TargetDensity<R>,
    sampler: &SamplerModel<R>,
    pdf: Option<&PdfModel<R>>,
    scene: Option<&ToyScene<R>>,
    mut write_hist: impl FnMut(usize, &[u8]) -> Result<()>,
) -> Result<Report> {
    if target.dim() != sampler.dim() {
        return Err(Error::config("target", "model and config target dimensions differ"));
    }
    let ev = &cfg.evaluate;
    let bins = ev.bins_for(target.dim());
    let mut out = Vec::new();
    for (ci, cond) in cfg.eval_conditions::<R>().iter().enumerate() {
        let draws = sampler.draw_samples(cond, ev.samples, derive_seed(cfg.seed, &[TAG_EVAL, ci as u64]))?;
        let hist = histogram_samples(&draws.u, bins, hist_domain(target))?;
        let reference = |u: &[f64]| target.density(&point::<R>(u), cond).as_f64();
        let kl = kl_divergence(&hist, &reference)?;
        let coverage_miss = coverage_check(&hist, &reference, ev.coverage_threshold)?;
        let inj = injectivity_check(sampler, cond, ev.injectivity_resolution)?;
        let pdf_kl = match pdf {
            Some(p) => {
                let q = |u: &[f64]| p.pdf_eval(&point::<R>(u), cond).map_or(f64::NAN, |v| v.as_f64());
                Some(kl_divergence(&hist, &q)?)
            }
            None => None,
        };
        let estimates = match scene {
            Some(s) => Some(estimate_report(cfg, s, sampler, pdf, cond, ci)?),
            None => None,
        };
        let mut csv = Vec::new();
        hist.write_csv(&mut csv)?;
        write_hist(ci, &csv)?;
        out.push(ConditionReport {
            condition: condition_of(cond),
            kl,
            coverage_miss,
            outside_fraction: hist.outside as f64 / hist.n as f64,
            min_det: inj.min_det,
            negative_fraction: inj.negative_fraction,
            pdf_kl,
            estimates,
        });
    }
    Ok(Report { precision: cfg.precision, samples: ev.samples, bins, conditions: out })
}

fn emitter_reference<R: Real>(scene: &ToyScene<R>, cond: &Condition<R>, res: usize) -> Result<f64> {
    let li = |u: &[R]| scene.emitter.radiance(u);
    Ok(scene.target.quadrature_integral(cond, Some(&li), res)?.value.as_f64())
}

fn estimate_report<R: Real>(
    cfg: &ExperimentConfig,
    scene: &ToyScene<R>,
    sampler: &SamplerModel<R>,
    pdf: Option<&PdfModel<R>>,
    cond: &Condition<R>,
    ci: usize,
) -> Result<EstimateReport> {
    let ev = &cfg.evaluate;
    let n = ev.estimate_samples;
    let full = scene.reference(cond, ev.quadrature_resolution)?.as_f64();
    let emit_ref = emitter_reference(scene, cond, ev.quadrature_resolution)?;
    let seed = |k: u64| derive_seed(cfg.seed, &[TAG_ESTIMATE, ci as u64, k]);
    let brdf = estimate_reparam(sampler, scene, cond, n, seed(0))?;
    let mis = pdf.map(|p| estimate_mis(sampler, p, scene, cond, n, seed(1))).transpose()?;
    let emitter = estimate_emitter(scene, cond, n, seed(2))?;
    Ok(EstimateReport {
        brdf: EstimateRow::new(&brdf, full),
        mis: mis.map(|e| EstimateRow::new(&e, full)),
        emitter: EstimateRow::new(&emitter, emit_ref),
    })
}

fn scene_for<R: Real>(cfg: &ExperimentConfig, target: &TargetDensity<R>) -> Result<Option<ToyScene<R>>> {
    cfg.scene.as_ref().map(|s| s.build(target.clone(), &cfg.base_dir)).transpose()
}

fn summary_line(s: &mut String, r: &ConditionReport) {
    let cond = r.condition.map_or("none".to_string(), |c| format!("{},{}", c[0], c[1]));
    write!(s, "condition {cond} kl {:.6e} coverage_miss {} negative_fraction {}", r.kl, r.coverage_miss, r.negative_fraction)
        .unwrap();
    if let Some(k) = r.pdf_kl {
        write!(s, " pdf_kl {k:.6e}").unwrap();
    }
    s.push('\n');
}

fn run_train_sampler<R: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let target = cfg.target.build::<R>(&cfg.base_dir)?;
    let prior = cfg.prior.build::<R>(target.dim())?;
    let mut model = SamplerModel::build(&target, prior, &cfg.sampler, derive_seed(cfg.seed, &[TAG_INIT]))?;
    let log = train_sampler(&mut model, &target, &cfg.train)?;
    create_dir(out)?;
    let model_path = out.join("sampler.json");
    ModelFile::from_sampler(&model, TrainingMeta::from_log(&log, cfg.seed)).save(&model_path)?;
    write_file(&out.join("sampler_loss.csv"), loss_csv(&log))?;
    let report = evaluate_model(cfg, &target, &model, None, None, |_, _| Ok(()))?;
    let mut s = String::new();
    writeln!(s, "model {}", model_path.display()).unwrap();
    writeln!(s, "steps {}", log.rows.len()).unwrap();
    writeln!(s, "final_loss {}", log.final_loss().unwrap_or(f64::NAN)).unwrap();
    writeln!(s, "clamped {}", log.total_clamped()).unwrap();
    for r in &report.conditions {
        summary_line(&mut s, r);
    }
    Ok(s)
}

pub fn train_sampler_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    match cfg.precision {
        Precision::F32 => run_train_sampler::<f32>(cfg, out),
        Precision::F64 => run_train_sampler::<f64>(cfg, out),
    }
}

fn run_train_pdf<R: Real>(cfg: &ExperimentConfig, file: &ModelFile, out: &Path) -> Result<String> {
    let sampler = file.to_sampler::<R>()?;
    let target = cfg.target.build::<R>(&cfg.base_dir)?;
    let mut pdf = PdfModel::for_sampler(&sampler, &cfg.pdf.arch(), derive_seed(cfg.seed, &[TAG_PDF_INIT]))?;
    let log = train_pdf(&mut pdf, &sampler, &cfg.pdf.train)?;
    create_dir(out)?;
    let model_path = out.join("pdf.json");
    ModelFile::from_pdf(&pdf, TrainingMeta::from_log(&log, cfg.seed)).save(&model_path)?;
    write_file(&out.join("pdf_loss.csv"), loss_csv(&log))?;
    let report = evaluate_model(cfg, &target, &sampler, Some(&pdf), None, |_, _| Ok(()))?;
    let mut s = String::new();
    writeln!(s, "model {}", model_path.display()).unwrap();
    writeln!(s, "steps {}", log.rows.len()).unwrap();
    writeln!(s, "final_loss {}", log.final_loss().unwrap_or(f64::NAN)).unwrap();
    for r in &report.conditions {
        summary_line(&mut s, r);
    }
    Ok(s)
}

pub fn train_pdf_cmd(cfg: &ExperimentConfig, sampler_path: &Path, out: &Path) -> Result<String> {
    let file = ModelFile::load(sampler_path)?;
    match file.precision {
        Precision::F32 => run_train_pdf::<f32>(cfg, &file, out),
        Precision::F64 => run_train_pdf::<f64>(cfg, &file, out),
    }
}

fn run_sample<R: Real>(file: &ModelFile, cond: Option<[f64; 2]>, n: usize, seed: u64) -> Result<String> {
    let m = file.to_sampler::<R>()?;
    let cond = match (m.cond_dim > 0, cond) {
        (true, Some(c)) => Condition::at(R::lit(c[0]), R::lit(c[1])).map_err(|e| Error::config("cond", e.to_string()))?,
        (true, None) => return Err(Error::config("cond", "this model needs an outgoing direction (--cond x,y)")),
        (false, Some(_)) => return Err(Error::config("cond", "this model takes no condition")),
        (false, None) => Condition::none(),
    };
    let b = m.draw_samples(&cond, n, seed)?;
    let d = m.dim();
    let mut s = String::new();
    let names: Vec<String> = (0..d).map(|k| format!("z{k}")).chain((0..d).map(|k| format!("u{k}"))).collect();
    writeln!(s, "{},det_j", names.join(",")).unwrap();
    for i in 0..b.len() {
        for v in b.z[i * d..(i + 1) * d].iter().chain(b.point(i)) {
            write!(s, "{},", v.as_f64()).unwrap();
        }
        writeln!(s, "{}", b.det_j[i].as_f64()).unwrap();
    }
    Ok(s)
}

/// Draw `n` samples; the CSV goes to `out` or is returned for printing.
pub fn sample_cmd(model: &Path, cond: Option<[f64; 2]>, n: usize, seed: u64, out: Option<&Path>) -> Result<String> {
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    let file = ModelFile::load(model)?;
    let csv = match file.precision {
        Precision::F32 => run_sample::<f32>(&file, cond, n, seed)?,
        Precision::F64 => run_sample::<f64>(&file, cond, n, seed)?,
    };
    match out {
        Some(path) => {
            write_file(path, csv)?;
            Ok(format!("wrote {n} samples to {}\n", path.display()))
        }
        None => Ok(csv),
    }
}

fn run_evaluate<R: Real>(cfg: &ExperimentConfig, file: &ModelFile, pdf: Option<&ModelFile>, out: Option<&Path>) -> Result<String> {
    let sampler = file.to_sampler::<R>()?;
    let pdf = pdf.map(|p| p.to_pdf::<R>()).transpose()?;
    let target = cfg.target.build::<R>(&cfg.base_dir)?;
    let scene = scene_for(cfg, &target)?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let report = evaluate_model(cfg, &target, &sampler, pdf.as_ref(), scene.as_ref(), |ci, csv| match out {
        Some(dir) => write_file(&dir.join(format!("histogram_{ci}.csv")), csv),
        None => Ok(()),
    })?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    if let Some(dir) = out {
        write_file(&dir.join("report.json"), &json)?;
    }
    Ok(json)
}

pub fn evaluate_cmd(cfg: &ExperimentConfig, model: &Path, pdf: Option<&Path>, out: Option<&Path>) -> Result<String> {
    let file = ModelFile::load(model)?;
    let pdf = pdf.map(ModelFile::load).transpose()?;
    match file.precision {
        Precision::F32 => run_evaluate::<f32>(cfg, &file, pdf.as_ref(), out),
        Precision::F64 => run_evaluate::<f64>(cfg, &file, pdf.as_ref(), out),
    }
}

pub fn strategy_name(s: Strategy) -> String {
    serde_json::to_string(&s).expect("strategies serialize").trim_matches('"').to_string()
}

fn run_converge<R: Real>(
    cfg: &ExperimentConfig,
    file: &ModelFile,
    pdf: Option<&ModelFile>,
    out: &Path,
    timings: bool,
) -> Result<String> {
    let sampler = file.to_sampler::<R>()?;
    let pdf = pdf.map(|p| p.to_pdf::<R>()).transpose()?;
    let target = cfg.target.build::<R>(&cfg.base_dir)?;
    let scene = scene_for(cfg, &target)?.ok_or_else(|| Error::config("scene", "convergence runs need a scene"))?;
    let cv = &cfg.converge;
    let cond = cfg.converge_condition::<R>();
    let full = scene.reference(&cond, cv.reference_resolution)?.as_f64();
    let emit_ref = emitter_reference(&scene, &cond, cv.reference_resolution)?;
    create_dir(out)?;
    let mut s = String::new();
    writeln!(s, "reference {full}").unwrap();
    for (k, &strategy) in cv.strategies.iter().enumerate() {
        let name = strategy_name(strategy);
        let pdf_ref: Option<&dyn PdfApprox<R>> = pdf.as_ref().map(|p| p as &dyn PdfApprox<R>);
        if strategy == Strategy::Mis && pdf_ref.is_none() {
            return Err(Error::config("converge.strategies", "`mis` needs a pdf model (--pdf)"));
        }
        let setup = EstimatorSetup { strategy, sampler: Some(&sampler), pdf: pdf_ref, scene: &scene, cond };
        let reference = if strategy == Strategy::Emitter { emit_ref } else { full };
        let seed = derive_seed(cfg.seed, &[TAG_CONVERGE, k as u64]);
        let rec = convergence_curve(&setup, reference, &cv.spps, cv.trials, seed)?;
        let mut csv = Vec::new();
        rec.write_csv(&mut csv, timings)?;
        write_file(&out.join(format!("convergence_{name}.csv")), csv)?;
        let pooled = setup.run(cv.spps.last().unwrap() * cv.trials, derive_seed(seed, &[u64::MAX]))?;
        let row = EstimateRow::new(&pooled, reference);
        writeln!(s, "{name} slope {:.4} mean {} std_error {} z {:.3}", rec.slope()?, row.mean, row.std_error, row.z).unwrap();
    }
    Ok(s)
}

pub fn converge_cmd(cfg: &ExperimentConfig, model: &Path, pdf: Option<&Path>, out: &Path, timings: bool) -> Result<String> {
    let file = ModelFile::load(model)?;
    let pdf = pdf.map(ModelFile::load).transpose()?;
    match file.precision {
        Precision::F32 => run_converge::<f32>(cfg, &file, pdf.as_ref(), out, timings),
        Precision::F64 => run_converge::<f64>(cfg, &file, pdf.as_ref(), out, timings),
    }
}

/// Default output directory when `--out` is not given.
pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}
