use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ftcnkit::arch::{
    apply_rule, build_canonical_scaled, describe, output_shape, parse_arch, render_arch, ArchSpec, CanonicalName,
};
use ftcnkit::eval::{
    cross_set, curves_csv, export_features, grid_csv, robustness, videos_csv, EvalReport, Grid, Protocol,
};
use ftcnkit::gradcheck::{suite, GradCheckOptions};
use ftcnkit::localize::{default_geometry, localize, render_heatmap, Rgb8};
use ftcnkit::model::{load_checkpoint, save_checkpoint, HeadConfig, Model, TransformerConfig};
use ftcnkit::synth::{build_manifest, load_clips, loo_rows, read_manifest, Clip, DataSpec, Label, ManifestRow, Method, Split};
use ftcnkit::tensor::io::read_stn;
use ftcnkit::train::{log_csv, train, TrainConfig};
use ftcnkit::{Error, Result};

/// Fully temporal convolution networks for video forgery detection.
#[derive(Parser, Debug)]
#[command(name = "ftcnkit", version, arg_required_else_help = true)]
struct Cli {
    /// Seed for everything random; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress at info level (FTCNKIT_LOG overrides).
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ArchSource {
    /// Architecture file in the text format.
    #[arg(long, conflicts_with = "canonical", required_unless_present = "canonical")]
    arch: Option<PathBuf>,
    /// Built-in architecture: ftcn, r50, spatial, fhcn, fwcn, sp, fk3, fk5.
    #[arg(long)]
    canonical: Option<CanonicalName>,
    /// Divide every channel count of a built-in architecture by this.
    #[arg(long, default_value_t = 1)]
    width_div: usize,
    /// Input shape CxTxHxW of a built-in architecture.
    #[arg(long, value_parser = parse_shape4, default_value = "3x32x224x224")]
    input: [usize; 4],
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print stage output shapes and parameter counts.
    Describe {
        #[command(flatten)]
        src: ArchSource,
        /// Head config file (key=value); default: the standard transformer.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Also write describe.txt and describe.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite an architecture.
    Transform {
        /// ftcn, spatial, fhcn, fwcn, fk3 or fk5.
        #[arg(long)]
        rule: String,
        #[command(flatten)]
        src: ArchSource,
        /// Output architecture file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with a JSONL manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Real videos.
        #[arg(long, default_value_t = 8)]
        real: usize,
        /// Fake videos per method.
        #[arg(long, default_value_t = 8)]
        fake: usize,
        /// Comma-separated fake methods.
        #[arg(long, value_delimiter = ',', default_value = "flickerA")]
        methods: Vec<Method>,
        /// Video size TxHxW.
        #[arg(long, value_parser = parse_shape3, default_value = "16x32x32")]
        size: [usize; 3],
        /// Artifact strength.
        #[arg(long, default_value_t = 0.3)]
        strength: f64,
        /// Train and validation fractions, comma-separated.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.6, 0.2])]
        fractions: Vec<f64>,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[command(flatten)]
        src: ArchSource,
        /// Dataset manifest (manifest.jsonl).
        #[arg(long)]
        data: PathBuf,
        /// Training config file (key=value); absent keys use the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Head config file; default: the standard transformer sized to the
        /// backbone output.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Train on the leave-one-out view that holds this method out.
        #[arg(long)]
        held_out: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints under a protocol.
    Eval {
        /// Checkpoint directory; for `loo`, a directory holding one
        /// checkpoint per held-out method, named after the method.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset manifest; repeat for `cross-set`.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// loo, cross-set or robustness.
        #[arg(long)]
        protocol: Protocol,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sliding-window localization heat map of one clip.
    Localize {
        #[arg(long)]
        ckpt: PathBuf,
        /// Video tensor 3xTxHxW in STN1 format.
        #[arg(long)]
        clip: PathBuf,
        /// Window side; default H/2.
        #[arg(long)]
        window: Option<usize>,
        /// Window stride; default H/8.
        #[arg(long)]
        stride: Option<usize>,
        /// Blend the heat map 50/50 over the first frame.
        #[arg(long)]
        overlay: bool,
        /// Output PPM image.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// Random shapes per operation.
        #[arg(long, default_value_t = 5)]
        shapes: usize,
        /// Also write gradcheck.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one mean feature vector per video as CSV.
    ExportFeatures {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_dims<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != N {
        return Err(format!("expected {N} sizes separated by `x`, got `{s}`"));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a size"))?;
        if *o == 0 {
            return Err("sizes must be positive".into());
        }
    }
    Ok(out)
}

fn parse_shape4(s: &str) -> std::result::Result<[usize; 4], String> {
    parse_dims(s)
}

fn parse_shape3(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_dims(s)
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
}

fn missing(flag: &str) -> Error {
    Error::InvalidArgument(format!("missing {flag}"))
}

impl ArchSource {
    fn load(&self) -> Result<ArchSpec> {
        match (&self.arch, self.canonical) {
            (Some(p), _) => parse_arch(&read_text(p)?),
            (None, Some(name)) => Ok(build_canonical_scaled(name, self.width_div, self.input)),
            (None, None) => Err(missing("--arch or --canonical")),
        }
    }

    fn describe(&self) -> String {
        match (&self.arch, self.canonical) {
            (Some(p), _) => format!("arch={}", p.display()),
            (None, Some(name)) => format!(
                "canonical={name}\nwidth_div={}\ninput={}",
                self.width_div,
                self.input.map(|v| v.to_string()).join("x")
            ),
            (None, None) => "arch=".into(),
        }
    }
}

/// Standard transformer head sized to the backbone's output.
fn default_head(arch: &ArchSpec) -> Result<HeadConfig> {
    let out = output_shape(arch)?;
    Ok(HeadConfig::Transformer(TransformerConfig {
        tokens: out[1],
        feature_dim: out[0],
        ..TransformerConfig::default()
    }))
}

fn load_head(path: &Option<PathBuf>, arch: &ArchSpec) -> Result<HeadConfig> {
    match path {
        Some(p) => HeadConfig::parse(&read_text(p)?),
        None => default_head(arch),
    }
}

fn print_config(lines: &str) {
    for l in lines.lines() {
        println!("# {l}");
    }
}

fn load_data(manifest: &Path) -> Result<(Vec<ManifestRow>, PathBuf)> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((rows, base))
}

fn clips_of(rows: &[ManifestRow], base: &Path, split: Option<Split>) -> Result<Vec<Clip>> {
    let picked: Vec<ManifestRow> = rows.iter().filter(|r| split.map_or(true, |s| r.split == s)).cloned().collect();
    load_clips(base, &picked)
}

fn write_reports(out: &Path, grid: &str, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("grid.csv"), grid)?;
    fs::write(out.join("videos.csv"), videos_csv(reports))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let globals = format!(
        "seed={}\nthreads={}",
        cli.seed.map_or("default".into(), |s| s.to_string()),
        cli.threads.map_or("all".into(), |t| t.to_string())
    );
    match cli.command {
        Command::Describe { src, head, out } => {
            print_config(&format!("command=describe\n{}\nhead={}\n{globals}", src.describe(), head.as_ref().map_or("default".into(), |p| p.display().to_string())));
            let arch = src.load()?;
            let head = load_head(&head, &arch)?;
            let report = describe(&arch, &head)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("describe.txt"), &text)?;
                fs::write(dir.join("describe.csv"), report.to_csv())?;
            }
        }
        Command::Transform { rule, src, out } => {
            print_config(&format!("command=transform\nrule={rule}\n{}\nout={}\n{globals}", src.describe(), out.display()));
            let arch = src.load()?;
            let result = apply_rule(&arch, &rule)?;
            fs::write(&out, render_arch(&result))?;
        }
        Command::GenData { out, real, fake, methods, size, strength, fractions } => {
            let spec = DataSpec {
                real,
                fake,
                methods,
                size,
                strength,
                fractions: [fractions[0], fractions[1]],
                seed: cli.seed.unwrap_or(0),
            };
            let methods: Vec<&str> = spec.methods.iter().map(|m| m.as_str()).collect();
            print_config(&format!(
                "command=gen-data\nout={}\nreal={real}\nfake={fake}\nmethods={}\nsize={}\nstrength={strength}\nfractions={},{}\n{globals}",
                out.display(),
                methods.join(","),
                size.map(|v| v.to_string()).join("x"),
                spec.fractions[0],
                spec.fractions[1]
            ));
            let path = build_manifest(&spec, &out)?;
            println!("manifest {}", path.display());
        }
        Command::Train { src, data, config, head, held_out, out } => {
            let arch = src.load()?;
            let head_cfg = load_head(&head, &arch)?;
            let base = TrainConfig {
                clip_len: arch.input[1],
                ..TrainConfig::default()
            };
            let mut cfg = match &config {
                Some(p) => TrainConfig::parse_over(&read_text(p)?, &base)?,
                None => base,
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            print_config(&format!(
                "command=train\n{}\ndata={}\nheld_out={}\nout={}\n{globals}\n{}{}",
                src.describe(),
                data.display(),
                held_out.as_deref().unwrap_or("none"),
                out.display(),
                head_cfg.to_text(),
                cfg.to_text()
            ));
            let (rows, base_dir) = load_data(&data)?;
            let rows = match &held_out {
                Some(m) => loo_rows(&rows, m),
                None => rows,
            };
            let train_set = clips_of(&rows, &base_dir, Some(Split::Train))?;
            let val_set = clips_of(&rows, &base_dir, Some(Split::Val))?;
            let model = Model::new(arch, head_cfg, cfg.seed)?;
            let outcome = train(model, &train_set, &val_set, &cfg)?;
            fs::create_dir_all(&out)?;
            save_checkpoint(&outcome.best, &out)?;
            save_checkpoint(&outcome.last, out.join("last"))?;
            fs::write(out.join("train_log.csv"), log_csv(&outcome.log))?;
            fs::write(out.join("train.cfg"), cfg.to_text())?;
            println!("best epoch {}", outcome.best_epoch);
        }
        Command::Eval { ckpt, data, protocol, out } => {
            let sets: Vec<String> = data.iter().map(|p| p.display().to_string()).collect();
            print_config(&format!(
                "command=eval\nckpt={}\ndata={}\nprotocol={protocol}\nout={}\n{globals}",
                ckpt.display(),
                sets.join(","),
                out.display()
            ));
            match protocol {
                Protocol::Loo => {
                    let [manifest] = &data[..] else {
                        return Err(Error::InvalidArgument("loo takes exactly one --data".into()));
                    };
                    let (rows, base) = load_data(manifest)?;
                    let mut methods: Vec<String> = Vec::new();
                    for r in rows.iter().filter(|r| r.label == Label::Fake.value()) {
                        if !methods.contains(&r.method) {
                            methods.push(r.method.clone());
                        }
                    }
                    let mut cells = Vec::new();
                    let mut reports = Vec::new();
                    for m in &methods {
                        let model = load_checkpoint(ckpt.join(m))?;
                        let test = clips_of(&loo_rows(&rows, m), &base, Some(Split::Test))?;
                        let report = ftcnkit::eval::evaluate(&model, &test, m)?;
                        cells.push((m.clone(), report.auc));
                        reports.push(report);
                    }
                    let grid = Grid { protocol, cells };
                    let text = grid_csv(&grid);
                    print!("{text}");
                    write_reports(&out, &text, &reports)?;
                }
                Protocol::CrossSet => {
                    let model = load_checkpoint(&ckpt)?;
                    let mut sets = Vec::new();
                    for manifest in &data {
                        let (rows, base) = load_data(manifest)?;
                        let name = base.file_name().map_or_else(|| manifest.display().to_string(), |n| n.to_string_lossy().into_owned());
                        sets.push((name, clips_of(&rows, &base, Some(Split::Test))?));
                    }
                    let (grid, reports) = cross_set(&model, &sets)?;
                    let text = grid_csv(&grid);
                    print!("{text}");
                    write_reports(&out, &text, &reports)?;
                }
                Protocol::Robustness => {
                    let [manifest] = &data[..] else {
                        return Err(Error::InvalidArgument("robustness takes exactly one --data".into()));
                    };
                    let model = load_checkpoint(&ckpt)?;
                    let (rows, base) = load_data(manifest)?;
                    let (curves, reports) = robustness(&model, &clips_of(&rows, &base, Some(Split::Test))?)?;
                    let text = curves_csv(&curves);
                    print!("{text}");
                    write_reports(&out, &text, &reports)?;
                }
            }
        }
        Command::Localize { ckpt, clip, window, stride, overlay, out } => {
            let video = read_stn::<f32>(&clip)?;
            let s = video.shape().to_vec();
            if s.len() != 4 || s[0] != 3 {
                return Err(Error::Shape(format!("clip must be 3xTxHxW, got {s:?}")));
            }
            let (dw, ds) = default_geometry(s[2]);
            let (window, stride) = (window.unwrap_or(dw), stride.unwrap_or(ds));
            print_config(&format!(
                "command=localize\nckpt={}\nclip={}\nwindow={window}\nstride={stride}\noverlay={overlay}\nout={}\n{globals}",
                ckpt.display(),
                clip.display(),
                out.display()
            ));
            let model = load_checkpoint(&ckpt)?;
            let id = clip.file_stem().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let c = Clip {
                video,
                label: Label::Real,
                method: String::new(),
                video_id: id,
                seed: 0,
            };
            let map = localize(&model, &c, window, stride)?;
            let base = if overlay { Some(Rgb8::from_frame(&c.video, 0)?) } else { None };
            render_heatmap(&map, base.as_ref(), &out)?;
            let mut grid = String::new();
            for i in 0..map.rows {
                let row: Vec<String> = (0..map.cols).map(|j| format!("{:.6}", map.get(i, j))).collect();
                let _ = writeln!(grid, "{}", row.join(" "));
            }
            print!("{grid}");
        }
        Command::Gradcheck { shapes, out } => {
            let seed = cli.seed.unwrap_or(0);
            print_config(&format!("command=gradcheck\nshapes={shapes}\nstep=1e-4\ntolerance=1e-4\n{globals}"));
            let cases = suite(
                seed,
                shapes,
                GradCheckOptions {
                    seed,
                    ..GradCheckOptions::default()
                },
            )?;
            let mut csv = String::from("op,shape,max_rel_error,passed\n");
            let mut failed = 0;
            for c in &cases {
                let ok = c.report.passed();
                failed += usize::from(!ok);
                println!("{} {:<22} {:.3e}  {}", if ok { "ok  " } else { "FAIL" }, c.op, c.report.max_rel_error(), c.shape);
                let _ = writeln!(csv, "{},\"{}\",{:.6e},{ok}", c.op, c.shape, c.report.max_rel_error());
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("gradcheck.csv"), csv)?;
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} of {} gradient checks failed", cases.len())));
            }
        }
        Command::ExportFeatures { ckpt, data, split, out } => {
            print_config(&format!(
                "command=export-features\nckpt={}\ndata={}\nsplit={split}\nout={}\n{globals}",
                ckpt.display(),
                data.display(),
                out.display()
            ));
            let split = match split.as_str() {
                "train" => Some(Split::Train),
                "val" => Some(Split::Val),
                "test" => Some(Split::Test),
                "all" => None,
                other => return Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
            };
            let model = load_checkpoint(&ckpt)?;
            let (rows, base) = load_data(&data)?;
            let n = export_features(&model, &clips_of(&rows, &base, split)?, &out)?;
            println!("exported {n} videos");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FTCNKIT_LOG", level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: invalid_argument: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.detail().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
