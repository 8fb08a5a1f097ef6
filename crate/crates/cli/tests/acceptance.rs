//! Acceptance checks for the sampler, the pdf network, the estimators and the
//! command-line tool. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Numeric arguments select criteria: `cargo test --test acceptance -- 3 4`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use tempfile::TempDir;

use reparam_cli::{ExperimentConfig, ModelFile};
use reparam_core::diagnostics::{coverage_check, coverage_in_regions, histogram_samples, kl_divergence, HistDomain};
use reparam_core::estimator::{mis_samples, Estimate};
use reparam_core::nnet::{Init, MlpParams};
use reparam_core::pdfnet::{ConstantPdf, PdfArch, PdfModel};
use reparam_core::reparam::{
    defensive_map, defensive_map_inverse, train_sampler, DefensiveSampler, DetMode, LossKind, Sampler, SamplerArch,
    SamplerModel, TrainBatch, TrainConfig,
};
use reparam_core::rng;
use reparam_core::targets::{sample_condition, Condition, Grid, Prior, TargetDensity};

type Outcome = Result<(bool, String), String>;

const MAX_MIXTURE_SECONDS: f64 = 300.0;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reparam(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reparam"))
        .env("REPARAM_THREADS", "1")
        .args(args)
        .output()
        .map_err(|e| format!("cannot run reparam: {e}"))?;
    if !out.status.success() {
        return Err(format!("`reparam {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Value following `key` on a whitespace-separated summary line.
fn field(line: &str, key: &str) -> Option<f64> {
    let mut it = line.split_whitespace();
    while let Some(w) = it.next() {
        if w == key {
            return it.next()?.parse().ok();
        }
    }
    None
}

fn condition_values(text: &str, key: &str) -> Vec<f64> {
    text.lines().filter(|l| l.starts_with("condition ")).filter_map(|l| field(l, key)).collect()
}

/// A trained sampler and pdf model from one of the shipped configs.
struct Run {
    config: PathBuf,
    out: PathBuf,
    sampler_stdout: String,
    sampler_seconds: f64,
    pdf_stdout: Option<String>,
}

impl Run {
    fn sampler(&self) -> PathBuf {
        self.out.join("sampler.json")
    }

    fn pdf(&self) -> PathBuf {
        self.out.join("pdf.json")
    }
}

struct Ctx {
    dir: TempDir,
    runs: BTreeMap<&'static str, Run>,
}

impl Ctx {
    fn run(&mut self, name: &'static str, with_pdf: bool) -> Result<&Run, String> {
        if !self.runs.contains_key(name) {
            let config = configs_dir().join(format!("{name}.json"));
            let out = self.dir.path().join(name);
            let start = Instant::now();
            let sampler_stdout = reparam(&["train-sampler", "--config", s(&config), "--out", s(&out)])?;
            let sampler_seconds = start.elapsed().as_secs_f64();
            self.runs.insert(name, Run { config, out, sampler_stdout, sampler_seconds, pdf_stdout: None });
        }
        let run = self.runs.get_mut(name).unwrap();
        if with_pdf && run.pdf_stdout.is_none() {
            let text =
                reparam(&["train-pdf", "--config", s(&run.config), "--sampler", s(&run.sampler()), "--out", s(&run.out)])?;
            run.pdf_stdout = Some(text);
        }
        Ok(&self.runs[name])
    }
}

fn mixture_sampler(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run("mixture1d", false)?;
    let kl = condition_values(&run.sampler_stdout, "kl");
    let kl = *kl.first().ok_or("no kl in train-sampler output")?;
    let secs = run.sampler_seconds;
    Ok((
        kl < 5e-3 && secs < MAX_MIXTURE_SECONDS,
        format!("1D mixture: kl {kl:.3e} (< 5e-3), train + evaluate {secs:.1} s on one thread (< {MAX_MIXTURE_SECONDS} s)"),
    ))
}

fn convergence(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run("ggx", true)?;
    let out = run.out.join("converge");
    let text = reparam(&[
        "converge", "--config", s(&run.config), "--model", s(&run.sampler()), "--pdf", s(&run.pdf()), "--out", s(&out),
    ])?;
    let slope = |name: &str| {
        text.lines()
            .find(|l| l.starts_with(&format!("{name} slope")))
            .and_then(|l| field(l, "slope"))
            .ok_or(format!("no slope for {name}"))
    };
    let (brdf, mis, biased) = (slope("brdf")?, slope("mis")?, slope("biased_no_jacobian")?);
    let within = |v: f64| (-1.1..=-0.9).contains(&v);
    Ok((
        within(brdf) && within(mis) && !within(biased),
        format!("GGX slopes: brdf {brdf:.3}, mis {mis:.3} (in [-1.1, -0.9]); biased control {biased:.3} (must fall outside)"),
    ))
}

fn random_target(g: &mut impl Rng, line: bool) -> TargetDensity<f64> {
    if line {
        let a = g.random_range(-2.0..0.0);
        let b = g.random_range(0.0..2.0);
        TargetDensity::gauss_mix(vec![0.4, 0.6], vec![a, b], vec![g.random_range(0.2..0.8), g.random_range(0.2..0.8)])
            .unwrap()
    } else {
        TargetDensity::ggx(g.random_range(0.1..0.8), 0.04).unwrap()
    }
}

fn random_model(g: &mut impl Rng, line: bool, seed: u64) -> (TargetDensity<f64>, SamplerModel<f64>) {
    let t = random_target(g, line);
    let arch = SamplerArch {
        hidden: if g.random_bool(0.5) { vec![8, 8] } else { vec![16] },
        init: Init::Standard,
        alpha: Some([0.0, 1e-3, 0.1][g.random_range(0..3)]),
        skip_identity: Some(g.random_bool(0.5)),
        cond_freqs: if g.random_bool(0.5) { Some(2) } else { None },
    };
    let m = SamplerModel::build(&t, Prior::std_normal(t.dim()), &arch, seed).unwrap();
    (t, m)
}

fn upper_bound() -> Outcome {
    let mut g = rng::stream(3, &[]);
    let (mut checked, mut strict, mut violations) = (0, 0, 0);
    for i in 0..200u64 {
        let (t, m) = random_model(&mut g, i % 2 == 0, i);
        let batch = TrainBatch::draw(t.is_conditional(), &m.prior, 2, 8, 1000 + i);
        let bound = m.loss_terms(&t, &batch, m.alpha, DetMode::Clamp).map_err(|e| e.to_string())?;
        let rep = m.loss_terms(&t, &batch, m.alpha, DetMode::Abs).map_err(|e| e.to_string())?;
        for (b, r) in bound.iter().zip(&rep) {
            checked += 1;
            strict += usize::from(b > r);
            violations += usize::from(b < r);
        }
    }
    Ok((violations == 0, format!("200 model/batch pairs, {checked} per-sample terms: {violations} below the plain loss ({strict} strictly above)")))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => unreachable!("line or disk only"),
    }
}

fn fd_gradient(values: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = values.to_vec();
    (0..v.len())
        .map(|j| {
            let x = v[j];
            v[j] = x + h;
            let up = loss(&v);
            v[j] = x - h;
            let down = loss(&v);
            v[j] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn derivatives() -> Outcome {
    const TOL: f64 = 1e-4;
    const CONFIGS: u64 = 100;
    let mut g = rng::stream(4, &[]);
    let mut worst = [0.0f64; 4];
    for i in 0..CONFIGS {
        let line = i % 2 == 0;
        let (t, m) = random_model(&mut g, line, i);
        let d = t.dim();
        let cond = if t.is_conditional() { sample_condition(500 + i) } else { Condition::none() };

        // Jacobian determinant of the sampler
        let z: Vec<f64> = (0..d).map(|_| g.random_range(-2.0..2.0)).collect();
        let exact = m.transform(&z, &cond).map_err(|e| e.to_string())?.det_j;
        let h = 1e-5;
        let mut jac = vec![0.0; d * d];
        for k in 0..d {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[k] += h;
            zm[k] -= h;
            let up = m.transform(&zp, &cond).map_err(|e| e.to_string())?.u;
            let down = m.transform(&zm, &cond).map_err(|e| e.to_string())?.u;
            for r in 0..d {
                jac[r * d + k] = (up[r] - down[r]) / (2.0 * h);
            }
        }
        worst[0] = worst[0].max(rel_err(&[exact], &[det(&jac, d)]));

        // full input Jacobian of the network
        let net: &MlpParams<f64> = &m.net;
        let input: Vec<f64> = (0..net.input_dim()).map(|_| g.random_range(-1.5..1.5)).collect();
        let wrt: Vec<usize> = (0..input.len()).collect();
        let (_, exact) = net.forward_with_input_jacobian(&input, &wrt).map_err(|e| e.to_string())?;
        let mut fd = vec![0.0; exact.len()];
        for k in 0..input.len() {
            let (mut ip, mut im) = (input.clone(), input.clone());
            ip[k] += h;
            im[k] -= h;
            let up = net.forward(&ip).map_err(|e| e.to_string())?;
            let down = net.forward(&im).map_err(|e| e.to_string())?;
            for r in 0..up.len() {
                fd[r * input.len() + k] = (up[r] - down[r]) / (2.0 * h);
            }
        }
        worst[1] = worst[1].max(rel_err(&exact, &fd));

        // parameter gradient of the sampler loss
        let kind = [LossKind::RepPrime, LossKind::Rep, LossKind::Nll][i as usize % 3];
        let batch = TrainBatch::draw(t.is_conditional(), &m.prior, 2, 4, 900 + i);
        let exact = m.loss_and_grad(&t, &batch, kind).map_err(|e| e.to_string())?.grad;
        let mut probe = m.clone();
        let fd = fd_gradient(m.net.values(), 1e-6, |v| {
            probe.net.values_mut().copy_from_slice(v);
            probe.loss_and_grad(&t, &batch, kind).expect("loss evaluates").loss
        });
        worst[2] = worst[2].max(rel_err(&exact, &fd));

        // parameter gradient of the pdf loss
        let arch = PdfArch {
            hidden: vec![16],
            point_freqs: if g.random_bool(0.5) { Some(2) } else { None },
            init: Init::Standard,
            ..PdfArch::default()
        };
        let p = PdfModel::for_sampler(&m, &arch, 700 + i).map_err(|e| e.to_string())?;
        let exact = p.loss_pdf(&m, &batch).map_err(|e| e.to_string())?.grad;
        let mut probe = p.clone();
        let fd = fd_gradient(p.net.values(), 1e-6, |v| {
            probe.net.values_mut().copy_from_slice(v);
            probe.loss_pdf(&m, &batch).expect("pdf loss evaluates").loss
        });
        worst[3] = worst[3].max(rel_err(&exact, &fd));
    }
    Ok((
        worst.iter().all(|&w| w < TOL),
        format!(
            "{CONFIGS} configs each, worst relative error vs central differences: det J {:.1e}, network Jacobian {:.1e}, \
             sampler gradient {:.1e}, pdf gradient {:.1e} (< {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

fn mis_constant_pdf(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run("ggx", false)?;
    let cfg = ExperimentConfig::load(&run.config, None).map_err(|e| e.to_string())?;
    let sampler = ModelFile::load(&run.sampler()).and_then(|f| f.to_sampler::<f64>()).map_err(|e| e.to_string())?;
    let target = cfg.target.build::<f64>(&cfg.base_dir).map_err(|e| e.to_string())?;
    let scene =
        cfg.scene.as_ref().ok_or("ggx config has no scene")?.build(target, &cfg.base_dir).map_err(|e| e.to_string())?;
    let cond = cfg.converge_condition::<f64>();
    let reference = scene.reference(&cond, cfg.converge.reference_resolution).map_err(|e| e.to_string())?;
    let n = 1_000_000;
    let mut pass = true;
    let mut parts = vec![];
    for (k, c) in [0.1, 1.0, 10.0].into_iter().enumerate() {
        let draws = mis_samples(&sampler, &ConstantPdf(c), &scene, &cond, n, 40 + k as u64).map_err(|e| e.to_string())?;
        let sums_to_one =
            draws.brdf_weights.iter().chain(&draws.emitter_weights).all(|&(w, we)| w + we == 1.0);
        let est = Estimate::from_contributions(&draws.contributions).map_err(|e| e.to_string())?;
        let z = (est.mean - reference) / est.std_error();
        pass &= z.abs() < 3.0 && sums_to_one;
        parts.push(format!("p̂ = {c}: z {z:+.2}{}", if sums_to_one { "" } else { " (weights do not sum to 1)" }));
    }
    Ok((pass, format!("{} at n = {n} (|z| < 3, w + w_e == 1 exactly)", parts.join(", "))))
}

fn ring_target() -> TargetDensity<f32> {
    let res = 65;
    let mut vals = Vec::with_capacity(res * res);
    for r in 0..res {
        for c in 0..res {
            let x = -1.0 + 2.0 * c as f64 / (res - 1) as f64;
            let y = -1.0 + 2.0 * r as f64 / (res - 1) as f64;
            let d = ((x * x + y * y).sqrt() - 0.8) / 0.2;
            vals.push((-0.5 * d * d).exp() as f32 + 0.02);
        }
    }
    TargetDensity::grid(Grid::new(res, res, vals).unwrap())
}

fn prior_support() -> Outcome {
    let t = ring_target();
    let reference = |u: &[f64]| t.eval(&[u[0] as f32, u[1] as f32], &Condition::none()).unwrap() as f64;
    let mut miss = vec![];
    for prior in [Prior::uniform(2, -1.0, 1.0).unwrap(), Prior::std_normal(2)] {
        let mut m = SamplerModel::build(&t, prior, &SamplerArch::default(), 0).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { steps: 8000, batch_conditions: 4, batch_z: 256, ..TrainConfig::desk() };
        train_sampler(&mut m, &t, &cfg).map_err(|e| e.to_string())?;
        let b = m.draw_samples(&Condition::none(), 1_000_000, 7).map_err(|e| e.to_string())?;
        let h = histogram_samples(&b.u, 32, HistDomain::Disk).map_err(|e| e.to_string())?;
        miss.push(coverage_check(&h, &reference, 1e-4).map_err(|e| e.to_string())?);
    }
    Ok((
        miss[0] > 0.0 && miss[1] == 0.0,
        format!("ring target, 10^6 samples: uniform prior misses {:.4} of bins (> 0), normal prior {:.4} (= 0)", miss[0], miss[1]),
    ))
}

fn bimodal() -> Outcome {
    let t = TargetDensity::<f32>::bimodal(3.0, 0.5).map_err(|e| e.to_string())?;
    let (lo, hi) = t.line_bounds();
    let reference = |u: &[f64]| t.eval(&[u[0] as f32], &Condition::none()).unwrap() as f64;
    let regions = [(f64::NEG_INFINITY, 0.0), (0.0, f64::INFINITY)];
    let (mut standard, mut identity) = (vec![], vec![]);
    for seed in 0..4u64 {
        for ident in [false, true] {
            let arch = SamplerArch {
                init: if ident { Init::Identity } else { Init::Standard },
                skip_identity: Some(ident),
                ..SamplerArch::default()
            };
            let mut m = SamplerModel::build(&t, Prior::std_normal(1), &arch, seed).map_err(|e| e.to_string())?;
            let cfg = TrainConfig {
                steps: 1000,
                batch_conditions: 4,
                batch_z: 256,
                seed,
                max_grad_norm: if ident { Some(1e-4) } else { None },
                ..TrainConfig::desk()
            };
            train_sampler(&mut m, &t, &cfg).map_err(|e| e.to_string())?;
            let b = m.draw_samples(&Condition::none(), 1_000_000, 7).map_err(|e| e.to_string())?;
            let h = histogram_samples(&b.u, 200, HistDomain::Line { lo: lo as f64, hi: hi as f64 })
                .map_err(|e| e.to_string())?;
            if ident {
                identity.push(coverage_check(&h, &reference, 1e-4).map_err(|e| e.to_string())?);
            } else {
                let r = coverage_in_regions(&h, &reference, 1e-4, &regions).map_err(|e| e.to_string())?;
                standard.push(r.into_iter().fold(0.0, f64::max));
            }
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok((
        standard.iter().all(|&x| x > 0.2) && identity.iter().all(|&x| x < 0.01),
        format!(
            "4 seeds: standard init worst-mode miss [{}] (> 0.2), identity init + clipping miss [{}] (< 0.01)",
            fmt(&standard),
            fmt(&identity)
        ),
    ))
}

fn pdf_fidelity(ctx: &mut Ctx) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["mixture1d", "ggx"] {
        let run = ctx.run(name, true)?;
        let kls = condition_values(run.pdf_stdout.as_deref().unwrap(), "pdf_kl");
        let expected = if name == "ggx" { 5 } else { 1 };
        pass &= kls.len() == expected && kls.iter().all(|&k| k < 0.05);
        parts.push(format!("{name} [{}]", kls.iter().map(|k| format!("{k:.2e}")).collect::<Vec<_>>().join(" ")));
    }
    Ok((pass, format!("KL(histogram ‖ normalized p̂): {} (< 0.05)", parts.join(", "))))
}

fn analytic_pushforward(prior: &Prior<f64>, u: &[f64]) -> f64 {
    if u.iter().map(|x| x * x).sum::<f64>() >= 1.0 {
        return 0.0;
    }
    let z = defensive_map_inverse(u).unwrap();
    prior.pdf(&z) / defensive_map(&z).det_j
}

fn change_of_variables() -> Outcome {
    let n = 1_000_000;
    let mut pass = true;
    let mut parts = vec![];
    for (d, domain, bins) in [(1, HistDomain::Line { lo: -1.0, hi: 1.0 }, 200), (2, HistDomain::Disk, 32)] {
        let sampler = DefensiveSampler { prior: Prior::<f64>::std_normal(d) };
        let b = sampler.draw(&Condition::none(), n, 9).map_err(|e| e.to_string())?;
        let reference = |u: &[f64]| analytic_pushforward(&sampler.prior, u);
        let h = histogram_samples(&b.u, bins, domain).map_err(|e| e.to_string())?;
        let kl = kl_divergence(&h, &reference).map_err(|e| e.to_string())?;
        let pointwise = (0..b.len())
            .map(|i| (b.pdf(i) / reference(b.point(i)) - 1.0).abs())
            .fold(0.0, f64::max);
        pass &= kl < 1e-3 && pointwise < 1e-9;
        parts.push(format!("{d}D kl {kl:.2e}, pointwise density error {pointwise:.1e}"));
    }
    Ok((pass, format!("defensive map at 10^6 samples: {} (kl < 1e-3)", parts.join("; "))))
}

const DET_LINE: &str = r#"{
    "seed": 5,
    "target": {"kind": "gauss_mix", "weights": [0.3, 0.7], "means": [-1.0, 1.0], "stds": [0.4, 0.6]},
    "train": {"steps": 40, "batch_conditions": 2, "batch_z": 64, "learning_rate": 0.01},
    "pdf": {"train": {"steps": 30, "batch_conditions": 1, "batch_z": 128}},
    "evaluate": {"samples": 20000, "bins": 50}
}"#;

const DET_DISK: &str = r#"{
    "seed": 6,
    "target": {"kind": "ggx", "roughness": 0.3, "f0": 0.04},
    "train": {"steps": 20, "batch_conditions": 4, "batch_z": 32},
    "pdf": {"train": {"steps": 20, "batch_conditions": 4, "batch_z": 32}},
    "scene": {"emitter": {"kind": "spot", "center": [0.2, 0.1], "sigma": 0.3, "radiance": 2.0}},
    "evaluate": {"samples": 5000, "bins": 16, "conditions": [[0.1, 0.2]], "quadrature_resolution": 128,
                 "estimate_samples": 2000},
    "converge": {"spps": [4, 8, 16], "trials": 4, "condition": [0.1, 0.2], "reference_resolution": 128,
                 "strategies": ["brdf", "mis", "emitter", "uniform", "biased_no_jacobian"]}
}"#;

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Run every command in `dir` and collect stdout plus all written files.
fn pipeline(dir: &Path, config: &Path, disk: bool) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let out = dir.join("out");
    let (sampler, pdf) = (out.join("sampler.json"), out.join("pdf.json"));
    let mut runs: Vec<Vec<String>> = vec![
        vec!["train-sampler".into(), "--config".into(), s(config).into(), "--out".into(), s(&out).into()],
        vec!["train-pdf".into(), "--config".into(), s(config).into(), "--sampler".into(), s(&sampler).into(), "--out".into(), s(&out).into()],
        vec!["sample".into(), "--model".into(), s(&sampler).into(), "--n".into(), "500".into(), "--seed".into(), "11".into()],
        vec!["evaluate".into(), "--config".into(), s(config).into(), "--model".into(), s(&sampler).into(), "--pdf".into(), s(&pdf).into(), "--out".into(), s(&out.join("eval")).into()],
    ];
    if disk {
        runs[2].extend(["--cond".into(), "0.3,-0.2".into()]);
        runs.push(vec![
            "converge".into(), "--config".into(), s(config).into(), "--model".into(), s(&sampler).into(), "--pdf".into(),
            s(&pdf).into(), "--out".into(), s(&out.join("converge")).into(),
        ]);
    }
    let mut files = BTreeMap::new();
    for (k, args) in runs.iter().enumerate() {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        files.insert(PathBuf::from(format!("stdout_{k}_{}", args[0])), reparam(&args)?.into_bytes());
    }
    files.extend(snapshot(&out));
    Ok(files)
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let mut differing = vec![];
    let mut compared = 0;
    for (name, text, disk) in [("line", DET_LINE, false), ("disk", DET_DISK, true)] {
        let dir = ctx.dir.path().join(format!("det_{name}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let config = dir.join("config.json");
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        let first = pipeline(&dir, &config, disk)?;
        std::fs::remove_dir_all(dir.join("out")).map_err(|e| e.to_string())?;
        let second = pipeline(&dir, &config, disk)?;
        compared += first.len();
        if first.keys().ne(second.keys()) {
            differing.push(format!("{name}: different file sets"));
        }
        for (path, bytes) in &first {
            if second.get(path) != Some(bytes) {
                differing.push(format!("{name}/{}", path.display()));
            }
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("all five commands rerun byte-identically ({compared} outputs compared)")
        } else {
            format!("outputs differ on rerun: {}", differing.join(", "))
        },
    ))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx { dir: TempDir::new().expect("temporary directory"), runs: BTreeMap::new() };
    type Check = fn(&mut Ctx) -> Outcome;
    let criteria: [(&str, Check); 10] = [
        ("1D mixture fit", mixture_sampler),
        ("convergence rate", convergence),
        ("upper-bound loss", |_| upper_bound()),
        ("derivatives", |_| derivatives()),
        ("MIS with constant p̂", mis_constant_pdf),
        ("prior support", |_| prior_support()),
        ("bimodal initialization", |_| bimodal()),
        ("p̂ fidelity", pdf_fidelity),
        ("change of variables", |_| change_of_variables()),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check(&mut ctx).unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!(
            "{} [{id:>2}] {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
