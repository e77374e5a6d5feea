use std::path::{Path, PathBuf};

use gdp_core::deconv::{self, DeconvConfig, ZoomConfig};
use gdp_core::dehaze::{self, DehazeConfig};
use gdp_core::image::{add_gaussian_noise, load_image, save_image};
use gdp_core::models::{self, DomainConvention, Family, FitInput};
use gdp_core::naturalize::naturalize_image;
use gdp_core::noisest::{self, Calibration, CalibrationConfig};
use gdp_core::prior::{self, PriorBundle};
use gdp_core::restore::{self, DiffusionConfig};
use gdp_core::spectrum::{self, CorrScale, Metric, WeightMode};
use gdp_core::{quality, Image, Kernel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{flag, resolve, section};
use crate::{Cli, CliError, CliResult, Command, Timings};

const IMAGE_EXTS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

fn load(path: &Path) -> CliResult<Image> {
    Ok(load_image(path)?)
}

fn save(img: &Image, path: &Path) -> CliResult<()> {
    Ok(save_image(img, path)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Processing(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn load_prior(path: Option<&Path>) -> CliResult<PriorBundle> {
    match path {
        Some(p) => Ok(PriorBundle::load(p)?),
        None => Ok(PriorBundle::bundled()),
    }
}

fn load_calibration(path: Option<&Path>) -> CliResult<Calibration> {
    match path {
        Some(p) => Ok(Calibration::load(p)?),
        None => Ok(Calibration::bundled()?),
    }
}

fn prior_label(path: Option<&Path>) -> Value {
    path.map_or(json!("bundled"), |p| json!(p.display().to_string()))
}

fn require_seed(cli: &Cli, what: &str) -> CliResult<u64> {
    cli.seed.ok_or_else(|| CliError::Usage(format!("{what} injects noise and needs --seed")))
}

/// Files given directly, plus image files inside given directories (sorted).
fn expand_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| CliError::Processing(format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no input images found".into()));
    }
    Ok(out)
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> CliResult<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| CliError::Usage(format!("unknown {what} {s:?}")))
}

pub fn dispatch(cli: &Cli, file: Option<&Value>, tm: &mut Timings) -> CliResult<Value> {
    let sec = section(file, cli.command.name())?;
    match &cli.command {
        Command::LearnPrior { out, elide_histogram, report, inputs } => {
            let files = expand_inputs(inputs)?;
            let (p, rep) = tm.time("learn", || prior::learn_prior(&files))?;
            p.save(out, *elide_histogram)?;
            if let Some(r) = report {
                write_text(r, &serde_json::to_string_pretty(&rep).expect("report serializes"))?;
            }
            let fits: Vec<Value> =
                p.model_fits.iter().map(|f| json!({"family": f.family, "dims": f.dims, "r2": f.r2})).collect();
            print_json(&json!({
                "images_used": rep.images_used,
                "skipped": rep.skipped,
                "t_pr": p.t_pr,
                "b_pr": p.b_pr,
                "entropy": p.entropy,
                "fits": fits,
            }));
            Ok(json!({"inputs": files.len(), "elide_histogram": elide_histogram}))
        }

        Command::Fit { prior, family, domain, dims, inputs } => {
            let domain: DomainConvention = parse_enum(domain, "domain")?;
            let hist = tm.time("load", || -> CliResult<spectrum::GradHist2D> {
                if inputs.is_empty() {
                    Ok(load_prior(prior.as_deref())?.histogram()?.clone())
                } else {
                    let imgs = expand_inputs(inputs)?.iter().map(|p| load(p)).collect::<CliResult<Vec<_>>>()?;
                    Ok(spectrum::accumulate_corpus(&imgs, WeightMode::Images)?)
                }
            })?;
            let mean = spectrum::mean_marginal(&hist);
            let families: Vec<Family> = if family.is_empty() { Family::ALL.to_vec() } else { family.clone() };
            let dim_list: Vec<u8> = dims.map_or(vec![1, 2], |d| vec![d]);
            let mut reports = Vec::new();
            tm.time("fit", || -> CliResult<()> {
                for &f in &families {
                    for &d in &dim_list {
                        if d == 2 && f == Family::CdfModel {
                            continue;
                        }
                        let input = if d == 1 { FitInput::Marginal(&mean) } else { FitInput::Hist(&hist) };
                        reports.push(models::fit(input, f, domain)?);
                    }
                }
                Ok(())
            })?;
            print_json(&reports);
            Ok(json!({"prior": prior_label(prior.as_deref()), "inputs": inputs.len(), "families": families,
                "dims": dim_list, "domain": domain}))
        }

        Command::Naturalize { mode, prior, input, output } => {
            let p = load_prior(prior.as_deref())?;
            let img = tm.time("load", || load(input))?;
            let (out, rep) = tm.time("naturalize", || naturalize_image(&img, &p, *mode))?;
            save(&out, output)?;
            print_json(&rep);
            Ok(json!({"mode": mode, "prior": prior_label(prior.as_deref())}))
        }

        Command::Denoise { lambda, dt, eps, levels, max_iter, prior, calibration, add_noise, log, input, output } => {
            let p = load_prior(prior.as_deref())?;
            let mut img = tm.time("load", || load(input))?;
            if let Some(s) = add_noise {
                if !(*s >= 0.0) {
                    return Err(CliError::Usage("--add-noise must be nonnegative".into()));
                }
                img = add_gaussian_noise(&img, *s, require_seed(cli, "--add-noise")?);
            }
            let lambda_flag = match lambda.as_deref() {
                None => None,
                Some("auto") => Some(None),
                Some(s) => Some(Some(
                    s.parse::<f64>().map_err(|_| CliError::Usage(format!("--lambda expects a number or auto, got {s:?}")))?,
                )),
            };
            let file_has_lambda = sec.is_some_and(|s| s.contains_key("lambda"));
            let mut sigma_hat = None;
            let auto = matches!(lambda_flag, Some(None)) || (lambda_flag.is_none() && !file_has_lambda);
            let mut defaults = DiffusionConfig { t_pr: p.t_pr, b_pr: p.b_pr, ..Default::default() };
            let mut lambda_value = lambda_flag.flatten();
            if auto {
                let cal = load_calibration(calibration.as_deref())?;
                let s = tm.time("noise_estimate", || noisest::estimate_sigma(&img, &cal))?;
                sigma_hat = Some(s);
                defaults.lambda = restore::auto_lambda(s);
                lambda_value = Some(defaults.lambda);
            }
            let cfg: DiffusionConfig = resolve(
                defaults,
                sec,
                &[
                    flag("lambda", lambda_value),
                    flag("dt", *dt),
                    flag("eps", *eps),
                    flag("multiscale_levels", *levels),
                    flag("max_iter", *max_iter),
                ],
            )?;
            let (out, rep) = tm.time("denoise", || restore::denoise(&img, &cfg))?;
            save(&out, output)?;
            match log {
                Some(path) => write_text(path, &rep.log_csv())?,
                None => print!("{}", rep.log_csv()),
            }
            log::info!("{} iterations, converged {}, final energy {:.6e}", rep.iterations, rep.converged, rep.final_energy);
            Ok(json!({"diffusion": cfg, "sigma_estimate": sigma_hat, "add_noise": add_noise, "seed": cli.seed,
                "prior": prior_label(prior.as_deref())}))
        }

        Command::Deconvolve { kernel_size, levels, lambda, max_outer, kernel, kernel_out, prior, input, output } => {
            let p = load_prior(prior.as_deref())?;
            let img = tm.time("load", || load(input))?;
            let cfg: DeconvConfig = resolve(
                DeconvConfig::default(),
                sec,
                &[
                    flag("kernel_size", *kernel_size),
                    flag("levels", *levels),
                    flag("lambda", *lambda),
                    flag("max_outer", *max_outer),
                ],
            )?;
            let (out, k, report) = match kernel {
                Some(kp) => {
                    let ki = load(kp)?;
                    let k = Kernel::new(ki.width(), ki.height(), ki.data().to_vec())?;
                    let (u, energies) = tm.time("deconvolve", || deconv::deconvolve(&img, &k, &p, &cfg))?;
                    (u, k, json!({"mode": "non-blind", "energies": energies}))
                }
                None => {
                    let (u, k, rep) = tm.time("deconvolve", || deconv::blind_deconvolve(&img, &p, &cfg))?;
                    let levels: Vec<Value> = rep
                        .levels
                        .iter()
                        .map(|l| {
                            json!({"width": l.width, "height": l.height, "kernel_size": l.kernel_size,
                                "lambda": l.lambda, "outer_iterations": l.outer_iterations,
                                "converged": l.converged, "final_energy": l.final_energy})
                        })
                        .collect();
                    (u, k, json!({"mode": "blind", "levels": levels, "component_contraction": rep.component_contraction}))
                }
            };
            save(&out, output)?;
            if let Some(ko) = kernel_out {
                let ki = k.to_image();
                let peak = ki.data().iter().cloned().fold(0.0, f64::max);
                save(&ki.map(|v| v / peak), ko)?;
            }
            let mut report = report;
            report["kernel"] = json!({"width": k.width(), "height": k.height(), "weights": k.to_image().data()});
            print_json(&report);
            Ok(json!({"deconv": cfg, "kernel": kernel.as_ref().map(|p| p.display().to_string()),
                "prior": prior_label(prior.as_deref())}))
        }

        Command::Zoom { factor, sigma, lambda, max_iter, prior, input, output } => {
            let p = load_prior(prior.as_deref())?;
            let img = tm.time("load", || load(input))?;
            let cfg: ZoomConfig =
                resolve(ZoomConfig::default(), sec, &[flag("lambda", *lambda), flag("max_iter", *max_iter)])?;
            let out = tm.time("zoom", || deconv::zoom(&img, *factor, *sigma, &p, &cfg))?;
            save(&out, output)?;
            Ok(json!({"factor": factor, "sigma": sigma, "zoom": cfg, "prior": prior_label(prior.as_deref())}))
        }

        Command::Dehaze { lambda, alpha, airlight, iters, t_min, prior, transmission_out, input, output } => {
            let p = load_prior(prior.as_deref())?;
            let img = tm.time("load", || load(input))?;
            let cfg: DehazeConfig = resolve(
                DehazeConfig::default(),
                sec,
                &[
                    flag("lambda", *lambda),
                    flag("alpha", *alpha),
                    flag("airlight", airlight.map(Some)),
                    flag("iters", *iters),
                    flag("t_min", *t_min),
                ],
            )?;
            let (u, model, rep) = tm.time("dehaze", || dehaze::dehaze(&img, &p, &cfg))?;
            save(&u, output)?;
            if let Some(t) = transmission_out {
                save(&model.t, t)?;
            }
            print_json(&json!({
                "airlight": rep.airlight,
                "mean_transmission": model.t.mean(),
                "energies": rep.energies,
                "rejected_t_steps": rep.rejected_t_steps,
            }));
            Ok(json!({"dehaze": cfg, "prior": prior_label(prior.as_deref())}))
        }

        Command::NoiseEst { calibration, calibrate_out, inputs } => {
            let files = expand_inputs(inputs)?;
            let imgs = tm.time("load", || files.iter().map(|p| load(p)).collect::<CliResult<Vec<_>>>())?;
            if let Some(out) = calibrate_out {
                let seed = require_seed(cli, "calibration")?;
                let cfg: CalibrationConfig =
                    resolve(CalibrationConfig::default(), sec, &[flag("seed", Some(seed))])?;
                let sigmas = noisest::default_sigmas();
                let mut cal = tm.time("calibrate", || noisest::build_calibration(&imgs, &sigmas, &cfg))?;
                cal.provenance = format!("{} images via gdp noise-est", imgs.len());
                cal.save(out)?;
                print_json(&json!({"terms": cal.terms, "fit_stats": cal.fit_stats, "warnings": cal.warnings}));
                return Ok(json!({"mode": "calibrate", "calibration": cfg, "sigmas": sigmas, "inputs": files.len()}));
            }
            let cal = load_calibration(calibration.as_deref())?;
            let rows = tm.time("estimate", || -> CliResult<Vec<Value>> {
                files
                    .iter()
                    .zip(&imgs)
                    .map(|(f, img)| {
                        let t = models::fit_t(
                            &spectrum::mean_marginal(&spectrum::accumulate(img)?),
                            cal.domain_convention,
                            cal.t_estimator,
                        )?;
                        let sigma = noisest::estimate_sigma(img, &cal)?;
                        Ok(json!({"path": f.display().to_string(), "t": t, "sigma": sigma}))
                    })
                    .collect()
            })?;
            print_json(&rows);
            Ok(json!({"mode": "estimate", "calibration": calibration.as_ref().map_or("bundled".into(), |p| p.display().to_string())}))
        }

        Command::Quality { metric, reference, prior, input } => {
            let img = tm.time("load", || load(input))?;
            let r = reference.as_deref().map(load).transpose()?;
            let score = tm.time("score", || -> CliResult<f64> {
                match (metric.as_str(), &r, prior) {
                    ("psnr", Some(r), _) => Ok(quality::psnr(r, &img)?),
                    ("ssim", Some(r), _) => Ok(quality::ssim(r, &img)?),
                    ("psnr" | "ssim", None, _) => Err(CliError::Usage(format!("{metric} needs --ref"))),
                    ("nf", Some(r), _) => {
                        let p = load_prior(prior.as_deref())?;
                        let q = quality::Reference::NaturalnessFactor { reference: r, prior: &p };
                        Ok(quality::score(&img, q, Metric::Hellinger)?)
                    }
                    ("nf", None, _) => Err(CliError::Usage("nf needs --ref".into())),
                    (m, Some(r), None) => {
                        let m: Metric = parse_enum(m, "metric")?;
                        Ok(quality::score(&img, quality::Reference::Image(r), m)?)
                    }
                    (m, None, Some(pp)) => {
                        let m: Metric = parse_enum(m, "metric")?;
                        let p = PriorBundle::load(pp)?;
                        Ok(quality::score(&img, quality::Reference::Prior(&p), m)?)
                    }
                    (_, Some(_), Some(_)) => Err(CliError::Usage("give either --ref or --prior, not both".into())),
                    (_, None, None) => Err(CliError::Usage("give --ref or --prior".into())),
                }
            })?;
            let against = match (reference, prior) {
                (Some(r), _) => json!({"ref": r.display().to_string()}),
                (None, p) => json!({"prior": prior_label(p.as_deref())}),
            };
            print_json(&json!({"metric": metric, "against": against, "score": score}));
            Ok(json!({"metric": metric, "against": against}))
        }

        Command::Analyze { nf, prior, curves, max_shift, windows, input } => {
            let p = load_prior(prior.as_deref())?;
            let img = tm.time("load", || load(input))?;
            let n_f = tm.time("nf", || prior::naturalness_factor(&img, &p))?;
            if *nf && curves.is_none() {
                println!("{n_f}");
                return Ok(json!({"nf": true, "prior": prior_label(prior.as_deref())}));
            }
            let h = spectrum::accumulate(&img)?;
            let summary = json!({
                "width": img.width(),
                "height": img.height(),
                "t": p.image_t(&img)?,
                "n_f": n_f,
                "entropy": spectrum::entropy(&h),
                "correlation": spectrum::component_correlation(&h, CorrScale::Linear).ok(),
                "correlation_signed_log_guess": spectrum::component_correlation(&h, CorrScale::Log).ok(),
            });
            if *nf {
                println!("{n_f}");
            } else {
                print_json(&summary);
            }
            if let Some(dir) = curves {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Processing(format!("{}: {e}", dir.display())))?;
                tm.time("curves", || write_curves(dir, &img, &h, &p, *max_shift, windows))?;
            }
            Ok(json!({"prior": prior_label(prior.as_deref()), "max_shift": max_shift, "windows": windows,
                "curves": curves.as_ref().map(|d| d.display().to_string())}))
        }
    }
}

fn write_curves(
    dir: &Path,
    img: &Image,
    h: &spectrum::GradHist2D,
    p: &PriorBundle,
    max_shift: usize,
    windows: &[usize],
) -> CliResult<()> {
    let levels: Vec<f64> = (0..=56).map(|i| 10f64.powf(-8.0 + i as f64 / 8.0)).collect();
    let mut sp = String::from("source,cutoff,s_p,c_h\n");
    let mut sources = vec![("image", h)];
    if let Ok(ph) = p.histogram() {
        sources.push(("prior", ph));
    }
    for (name, hist) in &sources {
        for pt in spectrum::sparsity_curve(hist, &levels)? {
            sp.push_str(&format!("{name},{:e},{:e},{:e}\n", pt.cutoff, pt.s_p, pt.c_h));
        }
    }
    write_text(&dir.join("sparsity.csv"), &sp)?;

    let mut en = String::from("source,dims,entropy\n");
    for (name, hist) in &sources {
        en.push_str(&format!("{name},2,{:e}\n", spectrum::entropy(hist)));
    }
    for f in &p.model_fits {
        if let Ok(e) = models::model_entropy(&f.params, f.domain_convention) {
            let fam = serde_json::to_value(f.family).expect("family serializes");
            en.push_str(&format!("model:{},{},{e:e}\n", fam.as_str().unwrap_or("?"), f.dims));
        }
    }
    write_text(&dir.join("entropy.csv"), &en)?;

    let mut nw = String::from("half_window,mean,median\n");
    let side = img.width().min(img.height());
    let fitting: Vec<usize> = windows.iter().copied().filter(|&w| 2 * w + 1 <= side).collect();
    if fitting.len() < windows.len() {
        log::warn!("N_w curve: skipping half-windows wider than the {side}-pixel image side");
    }
    for (w, mean, median) in prior::naturalness_curve(img, p, &fitting)? {
        nw.push_str(&format!("{w},{mean:e},{median:e}\n"));
    }
    write_text(&dir.join("nw.csv"), &nw)?;

    let mut ac = String::from("order,shift,ac\n");
    for d in 0..=2 {
        match spectrum::autocorrelation(img, d, max_shift) {
            Ok(v) => {
                for (r, a) in v.iter().enumerate() {
                    ac.push_str(&format!("{d},{r},{a:e}\n"));
                }
            }
            Err(e) => log::warn!("autocorrelation of order {d}: {e}"),
        }
    }
    write_text(&dir.join("autocorrelation.csv"), &ac)?;
    write_text(&dir.join("marginals.csv"), &spectrum::marginals_csv(h))?;
    Ok(())
}
