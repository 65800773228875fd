//! Reference external segmenter: answers each request frame on stdin with a
//! threshold segmentation on stdout. `--fault` makes it misbehave on purpose
//! so callers can exercise their error handling.

use std::io::{self, Read, Write};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use spinewalker::segbackend::wire::{self, decode_request, encode_response};
use spinewalker::segbackend::ThresholdSegmenter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fault {
    None,
    BadMagic,
    BadVersion,
    OutOfRange,
    Truncate,
    Exit,
    Hang,
}

#[derive(Debug, Parser)]
#[command(name = "spinewalker-echo", version)]
struct Cli {
    /// Level reported with every non-empty answer.
    #[arg(long, default_value_t = 20.0)]
    level: f32,
    /// Bone threshold in HU.
    #[arg(long, default_value_t = 200.0)]
    threshold_hu: f64,
    #[arg(long, value_enum, default_value = "none")]
    fault: Fault,
    /// Number of well-formed answers before the fault kicks in.
    #[arg(long, default_value_t = 0)]
    fault_after: usize,
}

/// Reads one request frame; `None` on a clean end of input.
fn read_frame(input: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut frame = vec![0u8; wire::REQUEST_HEADER_BYTES];
    match input.read_exact(&mut frame) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let dim = |o: usize| u32::from_le_bytes(frame[o..o + 4].try_into().unwrap()) as usize;
    let voxels = dim(8) * dim(12) * dim(16);
    frame.resize(wire::request_len(voxels), 0);
    input.read_exact(&mut frame[wire::REQUEST_HEADER_BYTES..]).context("request body")?;
    Ok(Some(frame))
}

fn serve(cli: &Cli) -> Result<()> {
    let seg = ThresholdSegmenter::from_hu(cli.threshold_hu, -100.0, 2000.0, cli.level);
    let mut stdin = io::stdin().lock();
    let mut stdout = io::stdout().lock();
    let mut served = 0;
    while let Some(frame) = read_frame(&mut stdin)? {
        let req = decode_request(&frame)?;
        let mut out = encode_response(&seg.respond(&req));
        let fault = if served >= cli.fault_after { cli.fault } else { Fault::None };
        match fault {
            Fault::None => {}
            Fault::BadMagic => out[0] ^= 0xff,
            Fault::BadVersion => out[4..8].copy_from_slice(&(wire::VERSION + 1).to_le_bytes()),
            Fault::OutOfRange => {
                if out.len() > wire::RESPONSE_HEADER_BYTES {
                    out[12..16].copy_from_slice(&1.5f32.to_le_bytes());
                } else {
                    out[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
                }
            }
            Fault::Truncate => {
                stdout.write_all(&out[..out.len() / 2])?;
                stdout.flush()?;
                return Ok(());
            }
            Fault::Exit => return Ok(()),
            Fault::Hang => loop {
                std::thread::park();
            },
        }
        stdout.write_all(&out)?;
        stdout.flush()?;
        served += 1;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match serve(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spinewalker-echo: {e:#}");
            ExitCode::from(1)
        }
    }
}
