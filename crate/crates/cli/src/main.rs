//! `tvstrata`: spectral TV transform, separation-surface decomposition,
//! texture manipulation and orientation maps from the command line.
//!
//! Exit codes: 0 success, 1 I/O or image format error, 2 insufficient data
//! for a surface fit, 3 invalid configuration or usage.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use tvstrata::config::{GridKind, RunConfig};
use tvstrata::imagecore::load_image;
use tvstrata::pipeline::{self, write_config_echo, write_file};
use tvstrata::spectv::{load_stack, SpectralStack};
use tvstrata::surface::FitKind;
use tvstrata::{ColorImage, Error};

#[derive(Parser, Debug)]
#[command(name = "tvstrata", version, about = "Spectral total-variation texture decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the spectral stack, spectrum CSV and spectrum plot.
    Transform {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split an image into a texture stratum and the rest.
    Decompose {
        input: PathBuf,
        /// Reuse a stack written by `transform` instead of recomputing it.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Attenuate, enhance or invert the extracted texture.
    Manipulate {
        input: PathBuf,
        /// Reuse a stack written by `transform` instead of recomputing it.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Orientation maps of the spectral layers (or of the image itself).
    Sod {
        input: PathBuf,
        /// Analyse the input luminance directly instead of spectral layers.
        #[arg(long)]
        direct: bool,
        /// Reuse a stack written by `transform` instead of recomputing it.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Idle session lifetime in minutes.
        #[arg(long, default_value_t = 30)]
        ttl_minutes: u64,
        /// Upload size limit in MiB.
        #[arg(long, default_value_t = 16)]
        max_upload_mb: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Flags shared by all subcommands; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First flow time of the grid.
    #[arg(long = "t-min")]
    t_min: Option<f64>,
    /// Last flow time of the grid.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Number of grid nodes.
    #[arg(long)]
    steps: Option<usize>,
    /// Grid spacing.
    #[arg(long, value_parser = ["uniform", "geometric"])]
    grid: Option<String>,
    /// Lower end of the texture band in flow time.
    #[arg(long = "band-lo")]
    band_lo: Option<f64>,
    /// Upper end of the texture band in flow time.
    #[arg(long = "band-hi")]
    band_hi: Option<f64>,
    /// Separation surface model.
    #[arg(long, value_parser = ["plane", "local"])]
    fit: Option<String>,
    /// Stratum half-width relative to the surface time.
    #[arg(long)]
    alpha: Option<f64>,
    /// Lower salience percentile of the regression samples.
    #[arg(long = "pct-lo")]
    pct_lo: Option<f64>,
    /// Upper salience percentile of the regression samples.
    #[arg(long = "pct-hi")]
    pct_hi: Option<f64>,
    /// Border width in pixels excluded from the regression.
    #[arg(long)]
    margin: Option<usize>,
    /// Texture gain: 0 removes, above 1 enhances, negative inverts.
    #[arg(long, allow_negative_numbers = true)]
    gain: Option<f64>,
    /// Image whose bright pixels select where the gain applies.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> tvstrata::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.t_min {
            c.grid.t_min = v;
        }
        if let Some(v) = self.t_max {
            c.grid.t_max = v;
        }
        if let Some(v) = self.steps {
            c.grid.steps = v;
        }
        if let Some(v) = &self.grid {
            c.grid.kind = v.parse::<GridKind>()?;
        }
        if self.band_lo.is_some() {
            c.band_lo = self.band_lo;
        }
        if self.band_hi.is_some() {
            c.band_hi = self.band_hi;
        }
        if let Some(v) = &self.fit {
            c.surface.fit = v.parse::<FitKind>()?;
        }
        if let Some(v) = self.alpha {
            c.surface.alpha = v;
        }
        if let Some(v) = self.pct_lo {
            c.surface.pct_lo = v;
        }
        if let Some(v) = self.pct_hi {
            c.surface.pct_hi = v;
        }
        if let Some(v) = self.margin {
            c.surface.margin = v;
        }
        if let Some(v) = self.gain {
            c.manipulate.gain = v;
        }
        if self.mask.is_some() {
            c.manipulate.mask = self.mask.clone();
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if c.out.is_none() {
            c.out = Some(PathBuf::from("out"));
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(c: &RunConfig) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn warn_capped(capped: usize, total: usize) {
    if capped > 0 {
        eprintln!("warning: {capped} of {total} flow steps stopped at the inner iteration limit");
    }
}

fn stack_for(image: &ColorImage, stack: Option<&Path>, c: &RunConfig) -> tvstrata::Result<SpectralStack> {
    match stack {
        Some(dir) => {
            let s = load_stack(dir)?;
            if s.dims() != image.dims() {
                return Err(Error::Contract(format!(
                    "stack is {:?} but the image is {:?}",
                    s.dims(),
                    image.dims()
                )));
            }
            Ok(s)
        }
        None => {
            let (s, capped) = pipeline::run_transform(image.luma(), c)?;
            warn_capped(capped, c.grid.steps);
            Ok(s)
        }
    }
}

fn run(command: Command) -> tvstrata::Result<()> {
    match command {
        Command::Transform { input, common } => {
            let c = common.resolve()?;
            let image = load_image(&input)?;
            let (stack, capped) = pipeline::run_transform(image.luma(), &c)?;
            warn_capped(capped, c.grid.steps);
            let dir = out_dir(&c);
            pipeline::write_transform(&stack, &dir)?;
            write_config_echo(&c, &dir)
        }
        Command::Decompose { input, stack, common } => {
            let c = common.resolve()?;
            c.band()?;
            let image = load_image(&input)?;
            let stack = stack_for(&image, stack.as_deref(), &c)?;
            let out = pipeline::decompose_image(&image, &stack, &c)?;
            let dir = out_dir(&c);
            pipeline::write_decompose(&out, &dir)?;
            write_config_echo(&c, &dir)
        }
        Command::Manipulate { input, stack, common } => {
            let c = common.resolve()?;
            c.band()?;
            let image = load_image(&input)?;
            let mask = match &c.manipulate.mask {
                Some(p) => Some(load_image(p)?.luma().clone()),
                None => None,
            };
            let stack = stack_for(&image, stack.as_deref(), &c)?;
            let (_, png) = pipeline::manipulate_image(&image, &stack, &c, mask)?;
            let dir = out_dir(&c);
            write_file(&dir.join("output.png"), &png)?;
            write_config_echo(&c, &dir)
        }
        Command::Sod { input, direct, stack, common } => {
            let c = common.resolve()?;
            let image = load_image(&input)?;
            let layers = if direct {
                vec![("image".to_string(), image.luma().clone())]
            } else {
                pipeline::sod_layers(&stack_for(&image, stack.as_deref(), &c)?, &c)?
            };
            let maps = pipeline::orientation_maps(&layers, &c)?;
            let dir = out_dir(&c);
            let mut summary = Vec::new();
            for ((name, _), m) in layers.iter().zip(&maps) {
                m.export(dir.join("sod"), name)?;
                summary.push(serde_json::json!({
                    "layer": name,
                    "confident_pixels": m.confident_count(),
                    "robust_max": m.robust_max,
                }));
            }
            write_file(&dir.join("sod").join("summary.json"), pipeline::to_json(&summary)?.as_bytes())?;
            write_config_echo(&c, &dir)
        }
        Command::Serve { addr, ttl_minutes, max_upload_mb, common } => {
            let c = common.resolve()?;
            let config = tvstrata_service::ServiceConfig {
                max_upload_bytes: max_upload_mb * 1024 * 1024,
                ttl: Duration::from_secs(ttl_minutes * 60),
                run: c,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(tvstrata_service::serve(addr, config)).map_err(|e| Error::io(addr.to_string(), e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) => 1,
        Error::InsufficientData { .. } | Error::DegenerateGeometry(_) => 2,
        Error::Contract(_) | Error::Range(_) | Error::Parameter(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
