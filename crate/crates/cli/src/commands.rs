use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dgp_core::chi2::{chi_square_tail, large_psi_bound, psi_for_tail, tail_upper_bound};
use dgp_core::fixtures::{toy_scene, ToyModels};
use dgp_core::geometry::{
    arap_deform, homography_from_pairs, mapping_rule, rough_align_detailed, warp_image, ArapMesh, Control,
};
use dgp_core::gradcheck::{check_gradient, MIN_RELIABLE_STEP};
use dgp_core::io::{read_image_grid, read_mask, write_image_grid, write_mask, ImageGrid, Mask};
use dgp_core::keypoints::read_keypoints;
use dgp_core::latent::{fit_pca as fit_basis, in_ellipse, project_code, truncate, LatentCode, PcaBasis, StrengthCode};
use dgp_core::par::{map_indexed, stream_rng, Execution};
use dgp_core::pgd::{trace_to_csv, Objective};
use dgp_core::pipeline::{
    self, masked_pixel_loss, pattern_search, reconstruction_mse, semantic_search, training_batch, DgpInputs,
    LossWeights, PatternObjective, PipelineConfig, Projector, SemanticObjective, TrainStep,
};
use dgp_core::synth::{sample_style, DiscParams, EncoderParams, FeatureMap, FeatureMaps, SynthParams};
use dgp_core::weight::{erosion_distance, weight_map as build_weight_map};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{RunConfig, KEYS};
use crate::models;
use crate::{CliError, Report};

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_floats(what: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::usage(format!("{what}: bad number {t:?}")))
        })
        .collect()
}

fn parse_quad(what: &str, text: &str) -> Result<[(f64, f64); 4], CliError> {
    let pts: Vec<(f64, f64)> = text
        .split(';')
        .map(|p| match parse_floats(what, p)?.as_slice() {
            [x, y] => Ok((*x, *y)),
            _ => Err(CliError::usage(format!("{what}: expected x,y pairs separated by ';'"))),
        })
        .collect::<Result<_, _>>()?;
    pts.try_into()
        .map_err(|_| CliError::usage(format!("{what}: expected exactly four points")))
}

fn read_code(path: &Path) -> Result<LatentCode, CliError> {
    Ok(LatentCode::from_slice(read_image_grid(path)?.values()))
}

fn write_vector(path: &Path, v: &[f64]) -> Result<(), CliError> {
    Ok(write_image_grid(path, &ImageGrid::new(1, v.len(), v.to_vec())?)?)
}

fn to_image(gen: &SynthParams, v: &DVector<f64>) -> Result<ImageGrid, CliError> {
    let (r, c) = gen.image_shape();
    Ok(ImageGrid::new(r, c, v.as_slice().to_vec())?)
}

fn train_csv(trace: &[TrainStep]) -> String {
    let mut out = String::from("iter,total,pixel,feature,attribute,adversarial,disc_objective\n");
    for s in trace {
        let l = &s.losses;
        let _ = writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            s.iter, l.total, l.pixel, l.feature, l.attribute, l.adversarial, s.disc_objective
        );
    }
    out
}

fn generated_basis(run: &RunConfig, count: usize) -> Result<(SynthParams, PcaBasis), CliError> {
    let seed = run.u64("seed")?;
    let gen = SynthParams::random(run.shape()?, seed)?;
    let basis = fit_basis(&sample_style(&gen, count, seed.wrapping_add(1)))?;
    Ok((gen, basis))
}

#[derive(Args)]
pub struct FitPcaArgs {
    /// Matrix file with one sample per row.
    #[arg(long, conflicts_with = "generate")]
    samples: Option<PathBuf>,
    /// Draw samples from the seeded toy mapping network.
    #[arg(long)]
    generate: bool,
    /// Number of generated samples; defaults to pca_samples.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn fit_pca(a: &FitPcaArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let (basis, count) = match (&a.samples, a.generate) {
        (Some(path), _) => {
            let m = read_image_grid(path)?;
            let samples: Vec<LatentCode> = m.values().chunks(m.cols()).map(LatentCode::from_slice).collect();
            (fit_basis(&samples)?, samples.len())
        }
        (None, true) => {
            let count = a.count.map_or_else(|| run.usize("pca_samples"), Ok)?;
            (generated_basis(run, count)?.1, count)
        }
        (None, false) => return Err(CliError::usage("fit-pca needs --samples FILE or --generate")),
    };
    basis.write(&a.out)?;
    out.put("n", basis.dim());
    out.put("samples", count);
    for (i, s) in basis.strengths().iter().take(5).enumerate() {
        out.put(&format!("strength_{}", i + 1), s);
    }
    out.put("orthonormality_error", basis.orthonormality_error());
    out.put("basis", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ProjectArgs {
    #[arg(long)]
    basis: PathBuf,
    /// Comma-separated strength code.
    #[arg(long, allow_hyphen_values = true)]
    strengths: String,
}

pub fn project(a: &ProjectArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let basis = PcaBasis::read(&a.basis)?;
    let cfg = run.pipeline()?.truncation;
    let s = StrengthCode::from_slice(&parse_floats("--strengths", &a.strengths)?);
    let w = project_code(&s, &basis, &cfg)?;
    out.put("psi", cfg.psi());
    out.put("strength_norm", s.norm());
    out.put("truncated_norm", truncate(&s, &cfg).norm());
    out.put_vec("w", w.as_slice());
    out.put("mahalanobis_sq", basis.mahalanobis_sq(&w)?);
    out.put("in_ellipse", in_ellipse(&w, &basis, &cfg)?);
    Ok(())
}

#[derive(Args)]
pub struct TailProbArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    psi: f64,
}

pub fn tail_prob(a: &TailProbArgs, out: &mut Report) -> Result<(), CliError> {
    if a.n == 0 || !(a.psi > 0.0 && a.psi.is_finite()) {
        return Err(CliError::usage("tail-prob needs n >= 1 and psi > 0"));
    }
    out.put("n", a.n);
    out.put("psi", a.psi);
    out.put("tail", chi_square_tail(a.n, a.psi));
    match tail_upper_bound(a.n, a.psi) {
        Ok(b) => out.put("bound", b),
        Err(_) => out.put("bound", "undefined"),
    }
    out.put("coarse_bound", large_psi_bound(a.psi));
    Ok(())
}

#[derive(Args)]
pub struct HomographyArgs {
    /// Four source points as "x,y;x,y;x,y;x,y".
    #[arg(long, allow_hyphen_values = true)]
    src: String,
    #[arg(long, allow_hyphen_values = true)]
    dst: String,
    /// Image to warp.
    #[arg(long, requires = "out")]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output rows; defaults to the input's.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
}

pub fn homography(a: &HomographyArgs, out: &mut Report) -> Result<(), CliError> {
    let src = parse_quad("--src", &a.src)?;
    let dst = parse_quad("--dst", &a.dst)?;
    let h = homography_from_pairs(&src, &dst)?;
    let m = h.matrix();
    let row_major: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect();
    out.put_vec("h", &row_major);
    let residual = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| {
            let p = h.apply(*s);
            (p.0 - d.0).hypot(p.1 - d.1)
        })
        .fold(0.0, f64::max);
    out.put("max_anchor_residual", residual);
    if let (Some(img_path), Some(out_path)) = (&a.image, &a.out) {
        let img = read_image_grid(img_path)?;
        let shape = (a.rows.unwrap_or(img.rows()), a.cols.unwrap_or(img.cols()));
        write_image_grid(out_path, &warp_image(&img, &h, shape))?;
        out.put("warped", out_path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct ArapArgs {
    /// Grid mesh as "x0,y0,x1,y1,pitch".
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Movable control "vertex:x,y"; may be repeated.
    #[arg(long = "control", allow_hyphen_values = true)]
    controls: Vec<String>,
    /// Immovable control vertex; may be repeated.
    #[arg(long = "fixed")]
    fixed: Vec<usize>,
    /// CSV of deformed vertex positions.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn arap(a: &ArapArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let g = parse_floats("--grid", &a.grid)?;
    let [x0, y0, x1, y1, pitch] = g[..] else {
        return Err(CliError::usage("--grid expects x0,y0,x1,y1,pitch"));
    };
    let mesh = ArapMesh::grid(x0, y0, x1, y1, pitch)?;
    let mut controls: Vec<Control> = a
        .fixed
        .iter()
        .map(|&vertex| Control {
            vertex,
            target: [0.0, 0.0],
            fixed: true,
        })
        .collect();
    for c in &a.controls {
        let (v, p) = c
            .split_once(':')
            .ok_or_else(|| CliError::usage(format!("--control expects vertex:x,y, got {c:?}")))?;
        let vertex = v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--control: bad vertex {v:?}")))?;
        let [x, y] = parse_floats("--control", p)?[..] else {
            return Err(CliError::usage("--control expects vertex:x,y"));
        };
        controls.push(Control {
            vertex,
            target: [x, y],
            fixed: false,
        });
    }
    let mesh = mesh.with_controls(controls)?;
    let sol = arap_deform(&mesh, run.usize("arap_iters")?, run.f64("arap_tol")?)?;
    out.put("vertices", mesh.vertices().len());
    out.put("triangles", mesh.triangles().len());
    out.put("iterations", sol.iterations);
    out.put("initial_energy", sol.energies[0]);
    out.put("energy", sol.energies.last().copied().unwrap_or(0.0));
    if let Some(path) = &a.out {
        let mut csv = String::from("vertex,x,y\n");
        for (i, p) in sol.positions.iter().enumerate() {
            let _ = writeln!(csv, "{i},{:.17e},{:.17e}", p[0], p[1]);
        }
        write_file(path, &csv)?;
        out.put("positions", path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct SceneArgs {
    /// Directory holding model.txt, cloth.txt, model_kp.json, cloth_kp.json and body_mask.txt.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    model_kp: Option<PathBuf>,
    #[arg(long)]
    cloth: Option<PathBuf>,
    #[arg(long)]
    cloth_kp: Option<PathBuf>,
    #[arg(long)]
    body_mask: Option<PathBuf>,
}

impl SceneArgs {
    fn path(&self, given: &Option<PathBuf>, file: &str, flag: &str) -> Result<PathBuf, CliError> {
        given
            .clone()
            .or_else(|| self.fixture.as_ref().map(|d| d.join(file)))
            .ok_or_else(|| CliError::usage(format!("missing --{flag} (or --fixture DIR)")))
    }
}

struct Scene {
    model_img: ImageGrid,
    model_kp: dgp_core::keypoints::KeyPointSet,
    cloth_img: ImageGrid,
    cloth_kp: dgp_core::keypoints::KeyPointSet,
}

fn load_scene(s: &SceneArgs) -> Result<Scene, CliError> {
    let model_img = read_image_grid(s.path(&s.model, "model.txt", "model")?)?;
    let model_kp = read_keypoints(s.path(&s.model_kp, "model_kp.json", "model-kp")?)?;
    let cloth_img = read_image_grid(s.path(&s.cloth, "cloth.txt", "cloth")?)?;
    let cloth_kp = read_keypoints(s.path(&s.cloth_kp, "cloth_kp.json", "cloth-kp")?)?;
    model_kp.check_bounds(model_img.rows(), model_img.cols())?;
    cloth_kp.check_bounds(cloth_img.rows(), cloth_img.cols())?;
    Ok(Scene {
        model_img,
        model_kp,
        cloth_img,
        cloth_kp,
    })
}

fn rule_for(scene: &Scene) -> Result<dgp_core::geometry::MappingRule, CliError> {
    let cat = scene
        .cloth_kp
        .category()
        .ok_or_else(|| CliError::usage("clothing keypoints carry no category"))?;
    Ok(mapping_rule(cat))
}

#[derive(Args)]
pub struct RoughAlignArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the warped-garment mask.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

pub fn rough_align(a: &RoughAlignArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let rule = rule_for(&scene)?;
    let cfg = run.pipeline()?;
    let r = rough_align_detailed(
        &scene.model_img,
        &scene.model_kp,
        &scene.cloth_img,
        &scene.cloth_kp,
        &rule,
        &cfg.align,
    )?;
    write_image_grid(&a.out, &r.composite)?;
    if let Some(m) = &a.mask_out {
        write_mask(m, &r.clothing_mask)?;
    }
    out.put("category", rule.category.name());
    let pairs: Vec<String> = rule.pairs.iter().map(|(c, m)| format!("{c}-{m}")).collect();
    out.put("pairs", pairs.join(","));
    out.put("uses_arap", rule.uses_arap);
    out.put("clothing_pixels", r.clothing_mask.count());
    out.put("aligned", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct WeightMapArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn weight_map(a: &WeightMapArgs, out: &mut Report) -> Result<(), CliError> {
    let mask = read_mask(&a.mask)?;
    let w = build_weight_map(&mask);
    write_image_grid(&a.out, &w.to_grid())?;
    out.put("mask_pixels", mask.count());
    out.put("max_depth", erosion_distance(&mask).into_iter().max().unwrap_or(0));
    out.put("weighted_pixels", w.values().iter().filter(|v| **v > 0.0).count());
    out.put("max_weight", w.values().iter().copied().fold(0.0, f64::max));
    out.put("weights", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: &TrainArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let cfg = run.pipeline()?;
    let seed = run.u64("seed")?;
    let toy = ToyModels::build(run.shape()?, &cfg, seed)?;
    models::save(&a.out, &toy, models::feature_seed(seed))?;
    write_file(&a.out.join("train_trace.csv"), &train_csv(&toy.trace))?;
    let held = training_batch(&toy.gen, 256, run.u64("sample_seed")?, usize::MAX);
    let zero = Projector::untrained(toy.basis.clone(), toy.gen.pixels(), cfg.truncation);
    if let Some(last) = toy.trace.last() {
        out.put("final_total", last.losses.total);
        out.put("final_pixel", last.losses.pixel);
        out.put("final_disc_objective", last.disc_objective);
    }
    out.put("iterations", toy.trace.len());
    out.put("heldout_mse", reconstruction_mse(&toy.gen, &toy.projector, &held));
    out.put("heldout_mse_zero_encoder", reconstruction_mse(&toy.gen, &zero, &held));
    out.put("models", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TargetArgs {
    /// Model directory from train-projector; trained from the config when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// CSV trace of the search.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
pub struct SearchArgs {
    #[command(flatten)]
    t: TargetArgs,
    /// Where to write w1.
    #[arg(long)]
    out_code: Option<PathBuf>,
}

fn load_target(t: &TargetArgs, run: &RunConfig) -> Result<(ToyModels, ImageGrid, Mask), CliError> {
    let target = read_image_grid(&t.target)?;
    let mask = read_mask(&t.mask)?;
    let toy = models::obtain(t.models.as_deref(), run)?;
    Ok((toy, target, mask))
}

pub fn semantic(a: &SearchArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let cfg = run.pipeline()?;
    let (toy, target, mask) = load_target(&a.t, run)?;
    let res = semantic_search(&toy.gen, &toy.projector, &toy.disc, &toy.feats, &target, &mask, &cfg)?;
    let wmap = build_weight_map(&mask);
    let x = DVector::from_column_slice(target.values());
    let loss = |w: &LatentCode| masked_pixel_loss(&toy.gen.forward(&w.0, &toy.gen.theta).output, &x, &wmap);
    out.put_vec("w0", res.w0.as_slice());
    out.put_vec("w1", res.w1.as_slice());
    out.put("iterations", res.pgd.iterations());
    out.put("initial_objective", res.pgd.initial_value());
    out.put("final_objective", res.pgd.final_value());
    out.put("masked_pixel_loss_w0", loss(&res.w0));
    out.put("masked_pixel_loss_w1", loss(&res.w1));
    out.put("distance_from_w0", (&res.w1.0 - &res.w0.0).norm());
    out.put("max_violation", res.pgd.max_violation);
    if let Some(p) = &a.out_code {
        write_vector(p, res.w1.as_slice())?;
    }
    if let Some(p) = &a.t.trace {
        write_file(p, &trace_to_csv(&res.pgd.trace))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct PatternArgs {
    #[command(flatten)]
    t: TargetArgs,
    /// Latent code to hold fixed; defaults to the projection of the target.
    #[arg(long)]
    code: Option<PathBuf>,
    #[arg(long)]
    out_theta: Option<PathBuf>,
    #[arg(long)]
    out_image: Option<PathBuf>,
}

pub fn pattern(a: &PatternArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let cfg = run.pipeline()?;
    let (toy, target, mask) = load_target(&a.t, run)?;
    let w = match &a.code {
        Some(p) => read_code(p)?,
        None => toy.projector.project_image(&target)?,
    };
    let res = pattern_search(&toy.gen, &toy.disc, &w, &target, &mask, &cfg)?;
    let wmap = build_weight_map(&mask);
    let x = DVector::from_column_slice(target.values());
    let before = masked_pixel_loss(&toy.gen.forward(&w.0, &toy.gen.theta).output, &x, &wmap);
    let image = toy.gen.forward(&w.0, &res.theta).output;
    out.put("iterations", res.pgd.iterations());
    out.put("initial_objective", res.pgd.initial_value());
    out.put("final_objective", res.pgd.final_value());
    out.put("masked_pixel_loss_before", before);
    out.put("masked_pixel_loss_after", masked_pixel_loss(&image, &x, &wmap));
    out.put("theta_shift", (&res.theta - &toy.gen.theta).norm());
    out.put("max_violation", res.pgd.max_violation);
    if let Some(p) = &a.out_theta {
        write_vector(p, res.theta.as_slice())?;
    }
    if let Some(p) = &a.out_image {
        write_image_grid(p, &to_image(&toy.gen, &image)?)?;
    }
    if let Some(p) = &a.t.trace {
        write_file(p, &trace_to_csv(&res.pgd.trace))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Model directory supplying generator.txt and basis.txt.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    /// Explicit cutoff; overrides the psi config key.
    #[arg(long, conflicts_with = "tail")]
    psi: Option<f64>,
    /// Choose the cutoff whose analytic tail equals this probability.
    #[arg(long)]
    tail: Option<f64>,
    /// Allowed gap between empirical and analytic outside fractions.
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
}

pub fn verify_theorem1(a: &VerifyArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let (gen, basis) = match &a.models {
        Some(dir) => (
            SynthParams::read(dir.join("generator.txt"))?,
            PcaBasis::read(dir.join("basis.txt"))?,
        ),
        None => generated_basis(run, run.usize("pca_samples")?)?,
    };
    let n = basis.dim();
    let psi = match (a.psi, a.tail) {
        (Some(p), _) => p,
        (None, Some(p)) if p > 0.0 && p < 1.0 => psi_for_tail(n, p),
        (None, Some(_)) => return Err(CliError::usage("--tail must lie in (0, 1)")),
        (None, None) => run.f64("psi")?,
    };
    let trunc = dgp_core::latent::TruncationConfig::new(psi)?;
    if a.count == 0 {
        return Err(CliError::usage("--count must be >= 1"));
    }
    let samples = sample_style(&gen, a.count, run.u64("sample_seed")?);
    let chunk = 4096;
    let flags = map_indexed(samples.len().div_ceil(chunk), Execution::default(), |b| {
        samples[b * chunk..((b + 1) * chunk).min(samples.len())]
            .iter()
            .map(|w| in_ellipse(w, &basis, &trunc).map(|inside| !inside as usize))
            .sum::<dgp_core::Result<usize>>()
    });
    let outside: usize = flags.into_iter().sum::<dgp_core::Result<usize>>()?;
    let empirical = outside as f64 / a.count as f64;
    let analytic = chi_square_tail(n, psi);
    let bound = tail_upper_bound(n, psi).ok();
    let coarse = large_psi_bound(psi);
    let gap = (empirical - analytic).abs();
    let bound_ok = bound.is_none_or(|b| analytic <= b);
    let coarse_ok = psi < 10.0 || analytic <= coarse;
    let pass = gap < a.tol && bound_ok && coarse_ok;
    out.put("n", n);
    out.put("psi", psi);
    out.put("samples", a.count);
    out.put("empirical", empirical);
    out.put("analytic", analytic);
    out.put("abs_error", gap);
    out.put("binomial_se", (analytic * (1.0 - analytic) / a.count as f64).sqrt());
    match bound {
        Some(b) => out.put("bound", b),
        None => out.put("bound", "undefined"),
    }
    out.put("coarse_bound", coarse);
    out.put("verdict", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "theorem check failed: |{empirical} - {analytic}| = {gap}"
        )))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stages {
    /// Projection only.
    Projection,
    /// Projection and semantic search.
    Semantic,
    /// Projection, semantic search and pattern search.
    All,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Model directory from train-projector; trained from the config when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Output directory for images, traces and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Stages::All)]
    stages: Stages,
}

pub fn run_dgp(a: &RunArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let mut cfg = run.pipeline()?;
    if a.stages != Stages::All {
        cfg.pattern_pgd.max_iters = 0;
    }
    if a.stages == Stages::Projection {
        cfg.semantic_pgd.max_iters = 0;
    }
    let scene = load_scene(&a.scene)?;
    let body_mask = read_mask(a.scene.path(&a.scene.body_mask, "body_mask.txt", "body-mask")?)?;
    let rule = rule_for(&scene)?;
    let toy = models::obtain(a.models.as_deref(), run)?;
    let inputs = DgpInputs {
        model_img: &scene.model_img,
        model_kp: &scene.model_kp,
        cloth_img: &scene.cloth_img,
        cloth_kp: &scene.cloth_kp,
        body_mask: &body_mask,
        rule: &rule,
    };
    let res = pipeline::run_dgp(&toy.models(), &inputs, &cfg)?;
    res.check_invariants(&toy.models(), &cfg)?;

    let dir = &a.out;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_image_grid(dir.join("rough.txt"), &res.rough)?;
    write_mask(dir.join("mask.txt"), &res.mask)?;
    write_image_grid(dir.join("weights.txt"), &build_weight_map(&res.mask).to_grid())?;
    write_image_grid(dir.join("final.txt"), &res.final_image)?;
    write_vector(&dir.join("w0.txt"), res.w0.as_slice())?;
    write_vector(&dir.join("w1.txt"), res.w1.as_slice())?;
    write_vector(&dir.join("theta.txt"), res.theta.as_slice())?;
    write_file(&dir.join("semantic_trace.csv"), &trace_to_csv(&res.semantic_trace))?;
    write_file(&dir.join("pattern_trace.csv"), &trace_to_csv(&res.pattern_trace))?;
    let seeds = serde_json::json!({
        "seed": run.u64("seed")?,
        "models": a.models.as_ref().map(|p| p.display().to_string()),
    });
    let mut manifest = res.manifest(&cfg, seeds);
    manifest["stages_requested"] = serde_json::json!(match a.stages {
        Stages::Projection => "projection",
        Stages::Semantic => "semantic",
        Stages::All => "all",
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::failure(e.to_string()))?;
    write_file(&dir.join("manifest.json"), &(text + "\n"))?;

    out.put("category", rule.category.name());
    out.put("mask_pixels", res.mask.count());
    out.put("loss_projection", res.losses.projection);
    out.put("loss_semantic", res.losses.semantic);
    out.put("loss_pattern", res.losses.pattern);
    out.put("semantic_iterations", res.semantic_trace.len() - 1);
    out.put("pattern_iterations", res.pattern_trace.len() - 1);
    if let Some(g) = res.grad_check {
        out.put("grad_check_max_rel_error", g);
    }
    out.put("manifest", dir.join("manifest.json").display());
    Ok(())
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Random evaluation points per gradient.
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Relative-error threshold for PASS.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

pub fn grad_check(a: &GradCheckArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    if !(a.step > 0.0 && a.step.is_finite()) || a.points == 0 {
        return Err(CliError::usage("grad-check needs step > 0 and points >= 1"));
    }
    if a.step < MIN_RELIABLE_STEP {
        eprintln!(
            "warning: step {:e} is below {:e}; central differences are dominated by cancellation",
            a.step, MIN_RELIABLE_STEP
        );
    }
    let seed = run.u64("seed")?;
    let gen = SynthParams::random(run.shape()?, seed)?;
    let (n, px) = (gen.latent_dim(), gen.pixels());
    let feats = FeatureMaps::seeded(gen.image_shape(), models::feature_seed(seed))?;
    let disc = DiscParams::random(px, 0.1, seed);
    let mut rng = stream_rng(seed, 0x6c);
    let mut gauss =
        |len: usize, sd: f64| DVector::<f64>::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let enc = EncoderParams {
        weights: DMatrix::from_column_slice(n, px, gauss(n * px, 0.1).as_slice()),
        bias: gauss(n, 0.1),
    };
    let (rows, cols) = gen.image_shape();
    let target = ImageGrid::new(rows, cols, gauss(px, 1.0).as_slice().to_vec())?;
    let (mr, mc) = (rows / 8, cols / 8);
    let mask = Mask::from_fn(rows, cols, |r, c| r >= mr && r < rows - mr && c >= mc && c < cols - mc);
    let wmap = build_weight_map(&mask);
    let sweights = LossWeights {
        pixel: 1.0,
        feature: 0.3,
        attribute: 0.2,
        adversarial: 1.0,
    };
    let sem = SemanticObjective::new(&gen, &disc, &feats, sweights, &target, &wmap)?;
    let cfg = PipelineConfig::default();

    let mut worst_all: f64 = 0.0;
    let mut record = |name: &str, errs: Vec<f64>| {
        let w = errs.into_iter().fold(0.0, f64::max);
        worst_all = worst_all.max(w);
        out.put(&format!("{name}_max_rel_error"), w);
    };
    let h = a.step;
    let mut errs = Vec::new();
    for _ in 0..a.points {
        let w = gauss(n, 1.0);
        let up = gauss(px, 1.0);
        let f = |v: &DVector<f64>| gen.forward(v, &gen.theta).output.dot(&up);
        errs.push(check_gradient(
            f,
            &gen.vjp_latent(&gen.forward(&w, &gen.theta), &up),
            &w,
            h,
        ));
    }
    record("synthesize", std::mem::take(&mut errs));
    for _ in 0..a.points {
        let x = gauss(px, 1.0);
        errs.push(check_gradient(|v| disc.prob(v), &disc.grad_input(&x), &x, h));
    }
    record("discriminate", std::mem::take(&mut errs));
    for (name, map) in [
        ("perceptual_features", &feats.perceptual),
        ("attribute_features", &feats.attribute),
    ] {
        for _ in 0..a.points {
            let x = gauss(px, 1.0);
            let up = gauss(map.out_dim(), 1.0);
            errs.push(check_gradient(|v| map.apply(v).dot(&up), &map.vjp(&x, &up), &x, h));
        }
        record(name, std::mem::take(&mut errs));
    }
    for _ in 0..a.points {
        let x = gauss(px, 1.0);
        let up = gauss(n, 1.0);
        errs.push(check_gradient(
            |v| enc.apply(v).dot(&up),
            &enc.weights.tr_mul(&up),
            &x,
            h,
        ));
    }
    record("encode", std::mem::take(&mut errs));
    for _ in 0..a.points {
        let w = gauss(n, 1.0);
        errs.push(check_gradient(|v| sem.value(v), &sem.gradient(&w), &w, h));
    }
    record("semantic_objective", std::mem::take(&mut errs));
    for _ in 0..a.points {
        let w = LatentCode(gauss(n, 1.0));
        let pat = PatternObjective::new(&gen, &disc, cfg.pattern_weights, &w, &target, &wmap)?;
        let theta = gauss(px, 0.5);
        errs.push(check_gradient(|v| pat.value(v), &pat.gradient(&theta), &theta, h));
    }
    record("pattern_objective", errs);

    out.put("step", h);
    out.put("max_rel_error", worst_all);
    let pass = worst_all < a.tol;
    out.put("verdict", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "worst relative error {worst_all:e} exceeds {:e}",
            a.tol
        )))
    }
}

#[derive(Args)]
pub struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// Also train and save a model directory under OUT/models.
    #[arg(long)]
    with_models: bool,
}

pub fn make_fixture(a: &FixtureArgs, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    let seed = run.u64("seed")?;
    let gen = SynthParams::random(run.shape()?, seed)?;
    let scene = toy_scene(&gen, run.u64("sample_seed")?)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    scene.write_to(&a.out)?;
    out.put("fixture", a.out.display());
    out.put("category", scene.cloth_kp.category().map_or("", |c| c.name()));
    if a.with_models {
        let toy = ToyModels::build(run.shape()?, &run.pipeline()?, seed)?;
        let dir = a.out.join("models");
        models::save(&dir, &toy, models::feature_seed(seed))?;
        out.put("models", dir.display());
    }
    Ok(())
}

/// Published defaults that the configuration must reproduce.
const EXPECTED_DEFAULTS: &[(&str, f64)] = &[
    ("lambda_p", 1.0),
    ("lambda_f", 5e-5),
    ("lambda_attr", 5e-5),
    ("lambda_adv", 0.1),
    ("psi", 6.0),
    ("eta_p", 1.0),
    ("eta_f", 5e-5),
    ("eta_attr", 5e-5),
    ("eta_adv", 1.0),
    ("semantic_radius", 4.0),
    ("pattern_radius", 4.0),
    ("semantic_iters", 1000.0),
    ("pattern_iters", 1000.0),
    ("search_lr", 1e-2),
    ("train_lr", 2e-5),
];

pub fn config(self_test: bool, describe: bool, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    if !self_test {
        run.pipeline()?;
        for ((k, v), key) in run.entries().zip(KEYS) {
            if describe {
                out.comment(key.doc);
            }
            out.put(k, v);
        }
        return Ok(());
    }
    let defaults = RunConfig::default();
    let lib = PipelineConfig::default();
    let mut failures = Vec::new();
    for &(key, want) in EXPECTED_DEFAULTS {
        let got = defaults.f64(key)?;
        if got != want {
            failures.push(format!("{key}={got} (expected {want})"));
        }
    }
    let from_keys = defaults.pipeline()?;
    if from_keys != lib {
        failures.push("config defaults disagree with library defaults".into());
    }
    let checks = [
        (lib.projector_weights == LossWeights::PROJECTOR, "projector weights"),
        (lib.search_weights == LossWeights::SEMANTIC, "search weights"),
        (lib.truncation.psi() == 6.0, "psi"),
        (lib.semantic_radius == 4.0 && lib.pattern_radius == 4.0, "radii"),
        (
            lib.semantic_pgd.max_iters == 1000 && lib.pattern_pgd.max_iters == 1000,
            "iterations",
        ),
        (
            lib.semantic_pgd.step_size == 1e-2 && lib.pattern_pgd.step_size == 1e-2,
            "step size",
        ),
        (
            lib.pattern_weights.pixel == 1.0 && lib.pattern_weights.adversarial == 1.0,
            "pattern weights",
        ),
    ];
    for (ok, what) in checks {
        if !ok {
            failures.push(format!("library default {what}"));
        }
    }
    out.put("keys", KEYS.len());
    out.put("checked", EXPECTED_DEFAULTS.len() + checks.len() + 1);
    out.put("self_test", if failures.is_empty() { "PASS" } else { "FAIL" });
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::failure(failures.join("; ")))
    }
}
