use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use nanotouch::session::server::{serve, spawn_audio_pump};
use nanotouch::session::{
    first_difference, read_recording, replay, run_engine, run_session, write_recording, Engine, Mode, Publisher,
    RunOptions, SessionConfig, SessionError,
};
use nanotouch::teleop::KeyMailbox;

#[derive(Parser)]
#[command(name = "nanotouch", version, about = "AFM force-curve simulator with a virtual force-feedback key")]
struct Cli {
    /// Reserved; the simulation has no randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a session; interactive configs serve WebSocket clients.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many seconds of virtual time.
        #[arg(long)]
        duration: Option<f64>,
        /// Record frames here (overrides the config).
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Headless approach-retract sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Re-run a recording and regenerate its frames.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Session config to replay under; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = cli.seed;
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, SessionError> {
    match cmd {
        Cmd::Run { config, duration, record } => {
            let mut cfg = SessionConfig::load(&config)?;
            if record.is_some() {
                cfg.record_path = record;
            }
            run(cfg, duration)
        }
        Cmd::Sweep {
            config,
            out,
            events,
            record,
        } => {
            let mut cfg = SessionConfig::load(&config)?;
            if cfg.mode != Mode::Sweep {
                cfg.mode = Mode::Sweep;
                cfg.sweep.get_or_insert_with(Default::default);
            }
            if record.is_some() {
                cfg.record_path = record;
            }
            let summary = run_session(&cfg, RunOptions::default())?;
            let trace = summary.trace.expect("sweep yields a trace");
            let ev = summary.events.expect("sweep yields events");
            trace.save_csv(&out)?;
            std::fs::write(&events, ev.to_json()?)?;
            eprintln!("{} ticks, {} samples -> {}", summary.ticks, trace.samples.len(), out.display());
            Ok(fault_code(summary.fault.is_some()))
        }
        Cmd::Replay { input, out, config } => {
            let cfg = match config {
                Some(p) => SessionConfig::load(p)?,
                None => SessionConfig::default(),
            };
            let rec = read_recording(&input)?;
            if rec.truncated {
                eprintln!("recording truncated; replaying the intact {} frames", rec.frames.len());
            }
            let frames = replay(&cfg, &rec.frames)?;
            match first_difference(&rec.frames, &frames) {
                None => eprintln!("replayed {} frames, identical", frames.len()),
                Some(i) => eprintln!("replayed {} frames, first difference at frame {i}", frames.len()),
            }
            if let Some(out) = out {
                write_recording(out, &frames)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fault_code(faulted: bool) -> ExitCode {
    if faulted {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cfg: SessionConfig, duration: Option<f64>) -> Result<ExitCode, SessionError> {
    if cfg.mode != Mode::Interactive {
        let summary = run_session(&cfg, RunOptions { duration, ..Default::default() })?;
        eprintln!(
            "{} ticks, mean {:.1} us, p99 {:.1} us",
            summary.ticks, summary.timing.mean_us, summary.timing.p99_us
        );
        return Ok(fault_code(summary.fault.is_some()));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let mailbox = KeyMailbox::new();
    let (publisher, handle) = Publisher::new(cfg.queue_depth, cfg.ui_decimation);
    let engine = Engine::new(&cfg)?;
    let addr = cfg.listen_address.clone().unwrap_or_else(|| "127.0.0.1:8765".into());
    let listener = TcpListener::bind(&addr)?;
    eprintln!("listening on ws://{}", listener.local_addr()?);

    let per_tick = (cfg.audio.sample_rate as f64 / cfg.tick_rate) as usize;
    let chunk = (cfg.audio.sample_rate / 60).max(1) as usize;
    let (pump, audio) = spawn_audio_pump(engine.audio_ring(), per_tick, chunk, 16, Arc::clone(&stop));
    let server = serve(listener, handle, Some(audio), mailbox.clone(), Arc::clone(&stop))?;

    let summary = run_engine(
        engine,
        RunOptions {
            duration,
            stop: Some(Arc::clone(&stop)),
            mailbox: Some(mailbox),
            publisher: Some(publisher),
            realtime: true,
        },
    );
    stop.store(true, Ordering::Relaxed);
    let _ = pump.join();
    let _ = server.join();
    let summary = summary?;
    eprintln!(
        "{} ticks, {} overruns, mean {:.1} us, p99 {:.1} us{}",
        summary.ticks,
        summary.overruns,
        summary.timing.mean_us,
        summary.timing.p99_us,
        if summary.active { ", passivity monitor ACTIVE" } else { "" }
    );
    Ok(fault_code(summary.fault.is_some()))
}
