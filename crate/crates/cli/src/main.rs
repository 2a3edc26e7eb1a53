use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cobb::audit::{self, ProbeConfig, Verdict};
use cobb::baselines::{codec_by_name, Codec, CODEC_NAMES};
use cobb::geom::OrientedBox;
use cobb::io::{self, Sweep};
use cobb::Error;

#[derive(Parser, Debug)]
#[command(name = "cobb-audit", version, about = "Continuity audit for oriented box encodings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every continuity metric and write a report.
    Audit(Common),
    /// Encode/decode seeded boxes and report the worst IoU.
    Roundtrip(Common),
    /// Compare the closed-form candidate IoU matrix with polygon clipping.
    IouCheck(Common),
    /// Fit and encode a DOTA annotation file.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Write encoding curves over a rotation or aspect sweep.
    Curves {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "rotation")]
        sweep: SweepKind,
        /// Base box as cx,cy,w,h,theta
        #[arg(long = "box", default_value = "0,0,4,2,0")]
        base: String,
        #[arg(long, default_value_t = 0.5)]
        from: f64,
        #[arg(long, default_value_t = 2.0)]
        to: f64,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Codec name, comma list, or "all"
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated, strictly decreasing
    #[arg(long)]
    steps: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepKind {
    Rotation,
    Aspect,
}

/// Flags merged over the optional config file.
struct Settings {
    codecs: Vec<String>,
    seed: u64,
    samples: Option<usize>,
    steps: Option<Vec<f64>>,
    format: Format,
    out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| usage(format!("bad {what} '{t}'"))))
        .collect()
}

fn settings(c: &Common, default_codec: &str) -> Result<Settings, Error> {
    let file: BTreeMap<String, String> = match &c.config {
        Some(p) => io::read_config(p)?,
        None => BTreeMap::new(),
    };
    for k in file.keys() {
        if !["codec", "seed", "samples", "steps", "format", "out"].contains(&k.as_str()) {
            return Err(usage(format!("unknown config key '{k}'")));
        }
    }
    let codec = c.codec.clone().or_else(|| file.get("codec").cloned()).unwrap_or(default_codec.into());
    let codecs = if codec == "all" {
        CODEC_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        codec.split(',').map(|s| s.trim().to_string()).collect()
    };
    let seed = match (c.seed, file.get("seed")) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse().map_err(|_| usage(format!("bad seed '{s}'")))?,
        (None, None) => ProbeConfig::default().seed,
    };
    let samples = match (c.samples, file.get("samples")) {
        (Some(s), _) => Some(s),
        (None, Some(s)) => Some(s.parse().map_err(|_| usage(format!("bad samples '{s}'")))?),
        (None, None) => None,
    };
    let steps = match c.steps.as_deref().or(file.get("steps").map(String::as_str)) {
        Some(s) => Some(parse_list(s, "step")?),
        None => None,
    };
    let format = match (c.format, file.get("format").map(String::as_str)) {
        (Some(f), _) => f,
        (None, Some("csv")) => Format::Csv,
        (None, Some("json")) | (None, None) => Format::Json,
        (None, Some(other)) => return Err(usage(format!("unknown format '{other}'"))),
    };
    let out = c.out.clone().or_else(|| file.get("out").map(PathBuf::from));
    Ok(Settings {
        codecs,
        seed,
        samples,
        steps,
        format,
        out,
    })
}

fn codecs(names: &[String]) -> Result<Vec<Box<dyn Codec>>, Error> {
    names.iter().map(|n| codec_by_name(n)).collect()
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => io::write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                message: e.to_string(),
            }),
    }
}

fn probe_config(s: &Settings) -> ProbeConfig {
    let mut cfg = ProbeConfig {
        seed: s.seed,
        ..ProbeConfig::default()
    };
    if let Some(n) = s.samples {
        cfg.samples = n;
    }
    if let Some(steps) = &s.steps {
        cfg.steps = steps.clone();
    }
    cfg
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Audit(c) => {
            let s = settings(&c, "cobb")?;
            let cfg = probe_config(&s);
            let list = codecs(&s.codecs)?;
            let refs: Vec<&dyn Codec> = list.iter().map(|b| b.as_ref()).collect();
            let reports = audit::run_audit(&refs, &cfg)?;
            let text = match s.format {
                Format::Json => io::reports_to_json(&reports),
                Format::Csv => io::reports_to_csv(&reports),
            };
            emit(&s.out, &text)?;
            Ok(reports.iter().all(|r| r.all_pass()))
        }
        Command::Roundtrip(c) => {
            let s = settings(&c, "cobb")?;
            let cfg = probe_config(&s);
            let mut ok = true;
            let mut text = String::new();
            for codec in codecs(&s.codecs)? {
                let m = audit::check_decoding_completeness(codec.as_ref(), &cfg)?;
                let worst = 1.0 - m.steps[0].gap;
                ok &= m.verdict == Verdict::Pass;
                text.push_str(&format!(
                    "{} worst_iou={worst:.17e} verdict={}\n",
                    codec.descriptor().name,
                    if m.verdict == Verdict::Pass { "pass" } else { "fail" }
                ));
            }
            emit(&s.out, &text)?;
            Ok(ok)
        }
        Command::IouCheck(c) => {
            let s = settings(&c, "cobb")?;
            let r = audit::iou_check(s.samples.unwrap_or(10_000), s.seed)?;
            let ok = r.max_abs_diff <= 1e-7;
            emit(
                &s.out,
                &format!(
                    "samples={} max_abs_diff={:.3e} worst_w={} worst_h={} worst_rs={}\n",
                    r.samples, r.max_abs_diff, r.worst.0, r.worst.1, r.worst.2
                ),
            )?;
            Ok(ok)
        }
        Command::Convert { common, input } => {
            let s = settings(&common, "cobb")?;
            let [name] = s.codecs.as_slice() else {
                return Err(usage("convert takes exactly one codec"));
            };
            let out = s.out.clone().ok_or_else(|| usage("convert requires --out"))?;
            let n = io::convert_annotations(&input, codec_by_name(name)?.as_ref(), &out)?;
            eprintln!("wrote {n} rows to {}", out.display());
            Ok(true)
        }
        Command::Curves {
            common,
            sweep,
            base,
            from,
            to,
        } => {
            let s = settings(&common, "cobb")?;
            let [name] = s.codecs.as_slice() else {
                return Err(usage("curves takes exactly one codec"));
            };
            let v: Vec<f64> = parse_list(&base, "box field")?;
            let [cx, cy, w, h, t] = v.as_slice() else {
                return Err(usage("--box needs cx,cy,w,h,theta"));
            };
            let b = OrientedBox::new(*cx, *cy, *w, *h, *t)?;
            let sweep = match sweep {
                SweepKind::Rotation => Sweep::Rotation {
                    samples: s.samples.unwrap_or(720),
                },
                SweepKind::Aspect => Sweep::Aspect {
                    from,
                    to,
                    samples: s.samples.unwrap_or(301),
                },
            };
            let codec = codec_by_name(name)?;
            let rows = io::curve_data(codec.as_ref(), sweep, &b)?;
            emit(&s.out, &io::curves_to_csv(codec.as_ref(), sweep, &rows))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
