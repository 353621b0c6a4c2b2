use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use loggrid::confidence::{tolerance_report, ViewEvidence, DEFAULT_DELTA_STAR, DEFAULT_PRECISION};
use loggrid::evidence::{synthesize_view, Clutter, DetectorModel, RawEvidence};
use loggrid::fusion::{
    active_loop, fuse_tandem, prepare_view, register_view, ActionKind, ActiveOptions, Registration,
};
use loggrid::geometry::{CameraModel, MetricParams};
use loggrid::grammar::{instantiate, is_valid};
use loggrid::grid::{GridExtent, StructureEstimate};
use loggrid::harness::{
    error_count, error_histogram, random_structure, render, ring_camera, write_atomic, Corpus,
    CorpusParams,
};
use loggrid::nl::{compile, estimate_tandem_with_language, parse, NLConstraintSet};
use loggrid::visibility::{estimate_tandem, TandemOptions, DEFAULT_CAP, DEFAULT_THETA};

#[derive(Parser)]
#[command(
    name = "loggrid",
    version,
    about = "Log-structure estimation from symbolic grid evidence"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Confidence threshold on the estimation tolerance.
    #[arg(long, global = true, default_value_t = DEFAULT_DELTA_STAR)]
    delta_star: f64,
    /// Fraction of blocked samples that makes a feature occluded.
    #[arg(long, global = true, default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Metric parameters as `P,H,R,E,Ns`.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Print iteration traces to stderr.
    #[arg(long, global = true)]
    trace: bool,
    /// A door and window description joined with the grammar.
    #[arg(long, global = true)]
    describe: Option<String>,
}

impl Global {
    fn metric(&self) -> anyhow::Result<MetricParams> {
        Ok(match &self.metric {
            Some(t) => MetricParams::parse(t)?,
            None => MetricParams::default(),
        })
    }

    fn tandem(&self) -> TandemOptions {
        TandemOptions {
            theta: self.theta,
            cap: DEFAULT_CAP,
        }
    }

    fn language(&self, extent: GridExtent) -> anyhow::Result<NLConstraintSet> {
        match &self.describe {
            None => Ok(NLConstraintSet::none(extent)),
            Some(text) => Ok(compile(&parse(text)?, extent)?),
        }
    }
}

#[derive(Args, Clone)]
struct Detector {
    #[arg(long, default_value_t = 0.9)]
    reliability: f64,
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    #[arg(long, default_value = "random")]
    clutter: String,
}

impl Detector {
    fn model(&self, seed: u64) -> anyhow::Result<DetectorModel> {
        Ok(DetectorModel::new(
            self.reliability,
            self.jitter,
            Clutter::parse(&self.clutter)?,
            seed,
        )?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Views,
    Disassembly,
    Combined,
}

impl Regime {
    fn kind(self) -> ActionKind {
        match self {
            Regime::Views => ActionKind::NewViewpoint,
            Regime::Disassembly => ActionKind::Disassembly,
            Regime::Combined => ActionKind::Combined,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random structure, or a whole corpus with `--corpus`.
    Gen {
        #[arg(long, value_parser = parse_extent)]
        extent: GridExtent,
        #[arg(long, default_value_t = 8)]
        logs: usize,
        /// Write a corpus to this directory instead of a single structure.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        scenes: usize,
        #[arg(long, default_value_t = 5)]
        views: usize,
        /// Length of each disassembly chain.
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[command(flatten)]
        detector: Detector,
        /// Also write a camera looking at the grid to this path.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, default_value_t = 225.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 35.0)]
        elevation: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate detector evidence for a structure seen by a camera.
    Synth {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[command(flatten)]
        detector: Detector,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-view estimate with alternating visibility estimation.
    Estimate {
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Ground truth to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register and fuse the views of a corpus scene.
    Fuse {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scene: String,
        /// Views in fusion order; the first defines the canonical frame.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimation tolerance of a single-view estimate.
    Confidence {
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        camera: PathBuf,
    },
    /// Run the active-vision loop over the base scenes of a corpus.
    Active {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        #[arg(long, value_enum, default_value = "combined")]
        regime: Regime,
        #[arg(long, default_value_t = 4)]
        budget: usize,
        #[arg(long, default_value = "v0")]
        initial: String,
    },
    /// Error counts and the error histogram for structure pairs.
    Score {
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        #[arg(long, required = true)]
        estimate: Vec<PathBuf>,
        /// Comma-separated output.
        #[arg(long)]
        csv: bool,
    },
    /// Render a structure to a binary PPM image.
    Render {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Color spans green or red against this ground truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a description and optionally compile it for an extent.
    ParseNl {
        sentence: String,
        #[arg(long, value_parser = parse_extent)]
        extent: Option<GridExtent>,
    },
}

fn parse_extent(text: &str) -> Result<GridExtent, String> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [i, j, k] => GridExtent::new(*i, *j, *k).map_err(|e| e.to_string()),
        _ => Err("expected `i,j,k`".into()),
    }
}

/// Marks a failure of the program's own invariants.
#[derive(Debug)]
struct Internal(String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal invariant violated: {}", self.0)
    }
}

impl std::error::Error for Internal {}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn check_valid(s: &StructureEstimate) -> anyhow::Result<()> {
    if !is_valid(s, &instantiate(s.extent())) {
        return Err(Internal("estimate violates the grammar".into()).into());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen {
            extent,
            logs,
            corpus,
            scenes,
            views,
            depth,
            detector,
            camera,
            azimuth,
            elevation,
            out,
        } => {
            if let Some(path) = camera {
                let cam = ring_camera(*extent, &g.metric()?, *azimuth, *elevation, (320, 240))?;
                write_atomic(path, cam.to_text().as_bytes())?;
            }
            match corpus {
                Some(dir) => {
                    let mut p = CorpusParams::new(*extent, *scenes, g.seed);
                    p.views_per_scene = *views;
                    p.logs = *logs;
                    p.subset_depth = *depth;
                    p.detector = detector.model(g.seed)?;
                    p.metric = g.metric()?;
                    let c = Corpus::generate(&p)?;
                    c.write(dir)?;
                    eprintln!(
                        "wrote {} scenes, {} views to {}",
                        c.scenes.len(),
                        c.views.len(),
                        dir.display()
                    );
                    Ok(())
                }
                None => emit(
                    out.as_deref(),
                    &random_structure(*extent, g.seed, *logs).to_text(),
                ),
            }
        }
        Command::Synth {
            structure,
            camera,
            detector,
            out,
        } => {
            let s = StructureEstimate::from_text(&read(structure)?)?;
            let cam = CameraModel::from_text(&read(camera)?)?;
            let raw = synthesize_view(&s, &cam, &detector.model(g.seed)?, &g.metric()?)?;
            emit(out.as_deref(), &raw.to_text(0))
        }
        Command::Estimate {
            evidence,
            camera,
            truth,
            out,
        } => {
            let (_, raw) = RawEvidence::from_text(&read(evidence)?)?;
            let cam = CameraModel::from_text(&read(camera)?)?;
            let grammar = instantiate(raw.extent());
            let psi = g.language(raw.extent())?;
            let (sol, _, trace) = if psi.is_empty() {
                estimate_tandem(&grammar, raw.priors(), &cam, &g.metric()?, g.tandem())?
            } else {
                estimate_tandem_with_language(
                    &grammar,
                    raw.priors(),
                    &cam,
                    &g.metric()?,
                    g.tandem(),
                    &psi,
                )?
            };
            check_valid(&sol.structure)?;
            if !psi.is_satisfied(&sol.structure) {
                return Err(Internal("estimate does not satisfy the description".into()).into());
            }
            if g.trace {
                eprint!("{}", trace.to_text());
            }
            eprintln!("log_probability {}", sol.log_probability);
            if let Some(t) = truth {
                let gt = StructureEstimate::from_text(&read(t)?)?;
                eprintln!("errors {}", error_count(&gt, &sol.structure)?);
            }
            emit(out.as_deref(), &sol.structure.to_text())
        }
        Command::Fuse {
            corpus,
            scene,
            views,
            out,
        } => {
            let c = Corpus::read(corpus)?;
            let m = g.metric()?;
            let extent = c
                .scene(scene)
                .ok_or_else(|| anyhow!("unknown scene `{scene}`"))?
                .structure
                .extent();
            let grammar = instantiate(extent);
            let order: Vec<String> = match views {
                Some(v) => v.clone(),
                None => c.views_of(scene).map(|v| v.id.clone()).collect(),
            };
            let records = order
                .iter()
                .map(|id| {
                    c.views_of(scene)
                        .find(|v| &v.id == id)
                        .map(|v| c.record(v))
                        .ok_or_else(|| anyhow!("unknown view `{scene}/{id}`"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let Some((first, rest)) = records.split_first() else {
                bail!("no views to fuse");
            };
            let mut fused = vec![prepare_view(&grammar, first, Registration::R0, &m)?];
            let (mut sol, _) = fuse_tandem(&grammar, &mut fused, &m, g.tandem())?;
            for rec in rest {
                let o = register_view(&grammar, &fused, rec, &m, g.tandem())?;
                eprintln!("view {} registered at {}", rec.id, o.registration);
                fused = o.updated;
                fused.push(o.view);
                sol = o.solution;
            }
            check_valid(&sol.structure)?;
            eprintln!("log_probability {}", sol.log_probability);
            emit(out.as_deref(), &sol.structure.to_text())
        }
        Command::Confidence { evidence, camera } => {
            let (_, raw) = RawEvidence::from_text(&read(evidence)?)?;
            let cam = CameraModel::from_text(&read(camera)?)?;
            let grammar = instantiate(raw.extent());
            let (sol, vis, _) =
                estimate_tandem(&grammar, raw.priors(), &cam, &g.metric()?, g.tandem())?;
            let masked = vis.mask(raw.priors())?;
            let ev = [ViewEvidence {
                grammar: &grammar,
                priors: &masked,
                visibility: &vis,
            }];
            let r = tolerance_report(&grammar, &ev, &sol, g.delta_star, DEFAULT_PRECISION)?;
            println!("tolerance {}", r.delta.unwrap_or(f64::NAN));
            println!("confident {}", r.confident);
            Ok(())
        }
        Command::Active {
            corpus,
            scene,
            regime,
            budget,
            initial,
        } => {
            let c = Corpus::read(corpus)?;
            let m = g.metric()?;
            let opts = ActiveOptions {
                delta_star: g.delta_star,
                precision: DEFAULT_PRECISION,
                budget: *budget,
                tandem: g.tandem(),
            };
            let ids: Vec<String> = match scene {
                Some(s) => vec![s.clone()],
                None => c.base_scenes().map(|s| s.id.clone()).collect(),
            };
            println!("scene,initial_errors,final_errors,actions,initially_confident,confident");
            for id in ids {
                let gt = &c
                    .scene(&id)
                    .ok_or_else(|| anyhow!("unknown scene `{id}`"))?
                    .structure;
                let grammar = instantiate(gt.extent());
                let (init, cands) = c.active_setup(&id, initial, regime.kind(), &m)?;
                let out = active_loop(&grammar, &init, cands, &m, opts)?;
                check_valid(&out.solution.structure)?;
                if g.trace {
                    eprint!("# {id}\n{}", out.trace_text());
                }
                let confident = out
                    .trace
                    .last()
                    .map_or(out.initially_confident, |s| s.confident);
                println!(
                    "{id},{},{},{},{},{}",
                    error_count(gt, &out.initial.structure)?,
                    error_count(gt, &out.solution.structure)?,
                    out.trace.len(),
                    out.initially_confident,
                    confident
                );
            }
            Ok(())
        }
        Command::Score {
            truth,
            estimate,
            csv,
        } => {
            if truth.len() != estimate.len() {
                return Err(Usage(
                    "--truth and --estimate must be given the same number of times".into(),
                )
                .into());
            }
            let mut counts = Vec::new();
            let mut out = String::new();
            if *csv {
                out.push_str("truth,estimate,errors\n");
            }
            for (t, e) in truth.iter().zip(estimate) {
                let gt = StructureEstimate::from_text(&read(t)?)?;
                let est = StructureEstimate::from_text(&read(e)?)?;
                let n = error_count(&gt, &est)?;
                counts.push(n);
                if *csv {
                    out.push_str(&format!("{},{},{n}\n", t.display(), e.display()));
                } else {
                    out.push_str(&format!("{} {} errors {n}\n", t.display(), e.display()));
                }
            }
            let h = error_histogram(&counts);
            if *csv {
                out.push('\n');
                out.push_str(&h.to_csv());
            } else {
                for (t, n) in &h.rows {
                    out.push_str(&format!("fewer than {t}: {n}/{}\n", counts.len()));
                }
            }
            emit(None, &out)
        }
        Command::Render {
            structure,
            camera,
            truth,
            out,
        } => {
            let s = StructureEstimate::from_text(&read(structure)?)?;
            let cam = CameraModel::from_text(&read(camera)?)?;
            let gt = match truth {
                Some(t) => Some(StructureEstimate::from_text(&read(t)?)?),
                None => None,
            };
            let img = render(&s, &cam, &g.metric()?, gt.as_ref())?;
            Ok(write_atomic(out, &img.to_ppm())?)
        }
        Command::ParseNl { sentence, extent } => {
            let ast = parse(sentence)?;
            println!("sentence {ast}");
            for e in &ast.entities {
                println!("entity {} {}", e.id, e.noun.word());
            }
            for (r, a, b) in ast.relations() {
                println!("relation {} {a} {b}", r.phrase());
            }
            if let Some(e) = extent {
                print!("{}", compile(&ast, *e)?.to_text());
            }
            Ok(())
        }
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(1)
            } else if e.is::<Internal>() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
