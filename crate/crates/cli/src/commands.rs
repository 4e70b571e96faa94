use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spcrf::evalio::{
    boundary_noise, evaluate, generate_toy_faces, load_image, load_labels, save_image, save_labelmap,
    DatasetManifest, EvalReport,
};
use spcrf::featnet::{load_checkpoint, save_checkpoint, NetParams, Network};
use spcrf::gradcheck::{run_all, HandExample};
use spcrf::pipeline::{infer, train, Faults, LabelMap, Sample};
use spcrf::pnm::Raster;
use spcrf::spgraph::{build_graph, oversegment, ImagePlane};

use crate::config::RunConfig;
use crate::{Cli, Command, Failure, Fault};

type Outcome = Result<(), Failure>;

fn err(msg: impl Into<String>) -> Failure {
    Failure::Error(msg.into())
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| err(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, bytes).map_err(|e| err(format!("{}: {e}", path.display())))
}

/// Writes the effective configuration next to the command's outputs.
fn echo_config(cfg: &RunConfig, command: &str) -> Outcome {
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(format!("{command}.config.toml")), cfg.to_toml())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}{suffix}", stem(path)))
}

pub fn run(cli: &Cli, cfg: &RunConfig) -> Outcome {
    let verbose = cli.verbose;
    match &cli.command {
        Command::Generate {
            dir,
            count,
            size,
            boundary_noise,
        } => cmd_generate(cfg, dir.as_deref(), *count, *size, *boundary_noise),
        Command::Oversegment {
            image,
            regions,
            compactness,
            out,
        } => cmd_oversegment(cfg, image, *regions, *compactness, out.as_deref()),
        Command::Train { manifest } => cmd_train(cfg, manifest.as_deref(), verbose),
        Command::Infer { checkpoint, image, out } => cmd_infer(cfg, checkpoint, image, out.as_deref()),
        Command::Eval {
            checkpoint,
            manifest,
            min_accuracy,
            min_f,
        } => cmd_eval(cfg, checkpoint, manifest.as_deref(), *min_accuracy, *min_f, verbose),
        Command::Gradcheck { inject_fault } => cmd_gradcheck(cfg, *inject_fault, verbose),
    }
}

fn cmd_generate(cfg: &RunConfig, dir: Option<&Path>, count: usize, size: usize, noise: Option<usize>) -> Outcome {
    echo_config(cfg, "generate")?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("data"));
    let multiple = cfg.architecture().size_multiple();
    let manifest = generate_toy_faces(cfg.seed, count, size, multiple, &dir)?;
    if let Some(radius) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6f_6973_65);
        for (ip, lp) in &manifest.entries {
            let noisy = boundary_noise(&load_image(ip)?, &load_labels(lp)?, &mut rng, radius, 0.1)?;
            save_image(ip, &noisy)?;
        }
    }
    println!(
        "wrote {} images of {size}x{size} to {}",
        manifest.entries.len(),
        dir.join("manifest.tsv").display()
    );
    Ok(())
}

fn cmd_oversegment(
    cfg: &RunConfig,
    image: &Path,
    regions: Option<usize>,
    compactness: Option<f64>,
    out: Option<&Path>,
) -> Outcome {
    echo_config(cfg, "oversegment")?;
    let img = load_image(image)?;
    let n = regions.unwrap_or(cfg.superpixels.regions);
    let m = compactness.unwrap_or(cfg.superpixels.compactness);
    let spmap = oversegment(&img, n, m).map_err(|e| e.in_file(image))?;
    let graph = build_graph(&spmap);
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(format!("{}.spx", stem(image))));
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_file(&out, spmap.to_bytes())?;
    let overlay = sibling(&out, "_overlay.ppm");
    write_file(&overlay, spmap.boundary_overlay(&img).encode())?;
    println!(
        "regions={} edges={} map={} overlay={}",
        spmap.region_count(),
        graph.edges().len(),
        out.display(),
        overlay.display()
    );
    Ok(())
}

fn load_samples(cfg: &RunConfig, manifest: &DatasetManifest, verbose: bool) -> Result<Vec<Sample>, Failure> {
    let t = Instant::now();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for (i, (ip, _)) in manifest.entries.iter().enumerate() {
        let (img, lab) = manifest.load_entry(i)?;
        let s = Sample::prepare(img, Some(lab), cfg.superpixels.regions, cfg.superpixels.compactness)
            .map_err(|e| e.in_file(ip))?;
        out.push(s);
    }
    if verbose {
        eprintln!("oversegmented {} images in {:.2?}", out.len(), t.elapsed());
    }
    Ok(out)
}

fn load_manifest(cfg: &RunConfig, path: &Path) -> Result<DatasetManifest, Failure> {
    let m = DatasetManifest::load(path)?;
    if m.classes() != cfg.model.classes {
        return Err(err(format!(
            "{} names {} classes but model.classes = {}",
            path.display(),
            m.classes(),
            cfg.model.classes
        )));
    }
    Ok(m)
}

fn evaluate_samples(
    cfg: &RunConfig,
    net: &Network,
    params: &NetParams,
    samples: &[Sample],
) -> Result<EvalReport, Failure> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(infer(net, params, s, &cfg.pipeline_config())?);
        gts.push(s.labels.clone().expect("loaded with labels"));
    }
    let agg = cfg.aggregation().map_err(err)?;
    Ok(evaluate(&preds, &gts, cfg.model.classes, agg)?)
}

fn cmd_train(cfg: &RunConfig, manifest: Option<&Path>, verbose: bool) -> Outcome {
    let path = manifest
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.train_manifest.clone())
        .ok_or_else(|| err("no training data: set data.train_manifest or pass --manifest"))?;
    let m = load_manifest(cfg, &path)?;
    let test = match &cfg.data.test_manifest {
        Some(p) => Some(load_manifest(cfg, p)?),
        None => None,
    };
    echo_config(cfg, "train")?;
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let samples = load_samples(cfg, &m, verbose)?;

    let arch = cfg.architecture();
    let net = Network::new(arch.clone())?;
    let init = NetParams::init(&arch, cfg.seed)?;
    let log_path = cfg.out_dir.join("metrics.log");
    let mut log = File::create(&log_path).map_err(|e| err(format!("{}: {e}", log_path.display())))?;
    let t = Instant::now();
    let outcome = train(&net, init, &samples, &cfg.train_config(), |metrics, params| {
        println!("{metrics}");
        writeln!(log, "{metrics}").map_err(|e| spcrf::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        save_checkpoint(&ckpt_dir.join(format!("epoch_{:03}.ckpt", metrics.epoch)), params)?;
        if verbose {
            eprintln!("epoch {} done at {:.2?}", metrics.epoch, t.elapsed());
        }
        Ok(())
    })?;
    let final_path = cfg.out_dir.join("final.ckpt");
    save_checkpoint(&final_path, &outcome.params)?;
    println!("final checkpoint {}", final_path.display());

    if let Some(test) = test {
        let samples = load_samples(cfg, &test, verbose)?;
        let report = evaluate_samples(cfg, &net, &outcome.params, &samples)?;
        print!("{}", report.render_table(method_name(cfg), &test.class_names));
        write_file(&cfg.out_dir.join("report.txt"), report.to_text())?;
    }
    Ok(())
}

fn method_name(cfg: &RunConfig) -> &'static str {
    if cfg.model.pairwise {
        "full"
    } else {
        "unary-only"
    }
}

const PALETTE: [[u8; 3]; 3] = [[70, 110, 200], [235, 180, 140], [90, 50, 20]];

fn class_color(k: u8) -> [u8; 3] {
    match PALETTE.get(k as usize) {
        Some(c) => *c,
        None => {
            let h = (k as u32).wrapping_mul(2_654_435_761);
            [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
        }
    }
}

/// Half-and-half blend of the image with the class colors.
fn label_overlay(img: &ImagePlane, labels: &LabelMap) -> Raster {
    let base = img.to_raster();
    let mut out = Raster::new(base.width, base.height, 3);
    for y in 0..base.height {
        for x in 0..base.width {
            let px = base.pixel(y, x);
            let color = class_color(labels.get(y, x));
            let dst = out.pixel_mut(y, x);
            for c in 0..3 {
                let v = px[if base.channels == 3 { c } else { 0 }];
                dst[c] = ((v as u16 + color[c] as u16) / 2) as u8;
            }
        }
    }
    out
}

fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, image: &Path, out: Option<&Path>) -> Outcome {
    echo_config(cfg, "infer")?;
    let arch = cfg.architecture();
    let params = load_checkpoint(checkpoint, &arch)?;
    let net = Network::new(arch)?;
    let img = load_image(image)?;
    let sample = Sample::prepare(img.clone(), None, cfg.superpixels.regions, cfg.superpixels.compactness)
        .map_err(|e| e.in_file(image))?;
    let labels = infer(&net, &params, &sample, &cfg.pipeline_config()).map_err(|e| e.in_file(image))?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(format!("{}_labels.pgm", stem(image))));
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    save_labelmap(&out, &labels)?;
    let overlay = sibling(&out, "_overlay.ppm");
    write_file(&overlay, label_overlay(&img, &labels).encode())?;
    println!(
        "labels={} overlay={} size={}x{}",
        out.display(),
        overlay.display(),
        labels.width(),
        labels.height()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: Option<&Path>,
    min_accuracy: Option<f64>,
    min_f: Option<f64>,
    verbose: bool,
) -> Outcome {
    let path = manifest
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.test_manifest.clone())
        .ok_or_else(|| err("no evaluation data: set data.test_manifest or pass --manifest"))?;
    let m = load_manifest(cfg, &path)?;
    echo_config(cfg, "eval")?;
    let arch = cfg.architecture();
    let params = load_checkpoint(checkpoint, &arch)?;
    let net = Network::new(arch)?;
    let samples = load_samples(cfg, &m, verbose)?;
    let report = evaluate_samples(cfg, &net, &params, &samples)?;
    print!("{}", report.render_table(method_name(cfg), &m.class_names));
    println!();
    print!("{}", report.to_text());
    write_file(&cfg.out_dir.join("report.txt"), report.to_text())?;

    let mut failed = Vec::new();
    if let Some(a) = min_accuracy {
        if report.overall_accuracy < a {
            failed.push(format!("overall_accuracy {} < {a}", report.overall_accuracy));
        }
    }
    if let Some(fmin) = min_f {
        for (k, f) in report.f.iter().enumerate() {
            if *f < fmin {
                failed.push(format!("f_class_{k} {f} < {fmin}"));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("metric thresholds not met: {}", failed.join(", "))))
    }
}

fn cmd_gradcheck(cfg: &RunConfig, fault: Option<Fault>, verbose: bool) -> Outcome {
    echo_config(cfg, "gradcheck")?;
    let faults = Faults {
        flip_phi_sign: fault == Some(Fault::PhiSign),
        drop_pair_normalization: fault == Some(Fault::PairNormalization),
    };
    let t = Instant::now();
    let hand = HandExample::compute(faults)?;
    println!("two-region example (W_01 = 1, lambda = 1, Z_s = [3, 0], dL/dZ_c = [1, 0]):");
    println!("{hand}");
    println!("expected:");
    println!("{}", HandExample::EXPECTED);
    let results = run_all(&spcrf::gradcheck::GradcheckConfig {
        faults,
        ..cfg.gradcheck_config()
    })?;
    for r in &results {
        println!("{r}");
    }
    if verbose {
        eprintln!("gradcheck finished in {:.2?}", t.elapsed());
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(Failure::Check(format!("failing checks: {}", failed.join(", "))))
    }
}
