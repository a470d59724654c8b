//! One-shot utilities that need no service.

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use picoflow_core::analysis::{analyze_emdl, FsInput};
use picoflow_core::bench::{aggregate_log, generate, GeneratorConfig, ReportOptions};
use picoflow_core::digest::sha256_hex;
use picoflow_core::emdlite;
use picoflow_core::synth::{parse_shape, synthesize, SynthConfig, SynthKind};
use serde_json::json;

use crate::config::{seconds, GlobalConfig};
use crate::{emit, usage, AnalyzeArgs, GenerateArgs, KindArg, MkemdlArgs, ReportArgs, ReportFormat};

pub fn analyze(args: &AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let out = analyze_emdl(&FsInput, &args.file, &args.out).with_context(|| format!("analyzing {}", args.file.display()))?;
    emit(&format!("{}\n", serde_json::to_string_pretty(&out.manifest)?))?;
    Ok(ExitCode::SUCCESS)
}

/// Writes via a temporary sibling and a rename, so a watcher never sees a
/// half-written file under the final name.
fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn mkemdl(args: &MkemdlArgs) -> anyhow::Result<ExitCode> {
    let kind = match args.kind {
        KindArg::Hyperspectral => SynthKind::Hyperspectral,
        KindArg::Spatiotemporal => SynthKind::Spatiotemporal,
    };
    let shape = parse_shape(&args.shape).map_err(|e| usage(e.to_string()))?;
    let mut cfg = SynthConfig::new(kind, shape, args.seed);
    if let Some(k) = args.blobs {
        cfg.blobs = k;
    }
    if let Some(dt) = &args.datetime {
        cfg.acquisition_datetime = dt.clone();
    }
    let synth = synthesize(&cfg).map_err(|e| usage(e.to_string()))?;
    let bytes = emdlite::encode(&synth.file)?;
    write_atomically(&args.out, &bytes).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(truth) = &args.truth {
        let text = serde_json::to_vec_pretty(&synth.ground_truth)?;
        write_atomically(truth, &text).with_context(|| format!("writing {}", truth.display()))?;
    }
    let summary = json!({
        "path": args.out,
        "bytes": bytes.len(),
        "sha256": sha256_hex(&bytes),
    });
    emit(&format!("{summary}\n"))?;
    Ok(ExitCode::SUCCESS)
}

pub fn bench_report(config: &GlobalConfig, args: &ReportArgs) -> anyhow::Result<ExitCode> {
    let b = &config.bench;
    let run_log = args
        .run_log
        .clone()
        .or(b.run_log.clone())
        .ok_or_else(|| usage("--run-log is required (or set bench.run_log in the config)"))?;
    let start_period_s = args.start_period.or(b.start_period);
    if let Some(s) = start_period_s {
        seconds("start_period", s).map_err(|e| usage(e.to_string()))?;
    }
    let report = aggregate_log(&run_log, &ReportOptions { start_period_s })
        .with_context(|| format!("reading {}", run_log.display()))?;
    if let Some(path) = &args.json_out {
        write_atomically(path, report.to_json().as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    match args.format {
        ReportFormat::Table => emit(&report.to_table())?,
        ReportFormat::Json => emit(&format!("{}\n", report.to_json()))?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn bench_generate(config: &GlobalConfig, args: &GenerateArgs) -> anyhow::Result<ExitCode> {
    let b = &config.bench;
    let template = args
        .template
        .clone()
        .or(b.template.clone())
        .ok_or_else(|| usage("--template is required (or set bench.template)"))?;
    let dest = args
        .dest
        .clone()
        .or(b.dest_dir.clone())
        .ok_or_else(|| usage("--dest is required (or set bench.dest_dir)"))?;
    let period = args.period.or(b.period).ok_or_else(|| usage("--period is required (or set bench.period)"))?;
    let duration = args
        .duration
        .or(b.duration)
        .ok_or_else(|| usage("--duration is required (or set bench.duration)"))?;
    let mut cfg = GeneratorConfig::new(
        template,
        dest,
        seconds("period", period).map_err(|e| usage(e.to_string()))?,
        seconds("duration", duration).map_err(|e| usage(e.to_string()))?,
    );
    cfg.unique_names = !args.same_name && b.unique_names.unwrap_or(true);
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let stop = Arc::new(AtomicBool::new(false));
    let trip = stop.clone();
    // second Ctrl-C falls through to the default handler
    let _ = ctrlc_once(move || trip.store(true, Ordering::SeqCst));
    match generate(&cfg, Some(&stop)) {
        Ok(n) => {
            emit(&format!("{n}\n"))?;
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            emit(&format!("{}\n", e.dropped))?;
            Err(e.into())
        }
    }
}

/// Runs `f` on the first SIGINT, on a small helper runtime.
fn ctrlc_once(f: impl FnOnce() + Send + 'static) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    std::thread::spawn(move || {
        rt.block_on(async {
            if tokio::signal::ctrl_c().await.is_ok() {
                f();
            }
        })
    });
    Ok(())
}
