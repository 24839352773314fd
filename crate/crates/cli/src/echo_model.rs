//! Test double for an external model process. Speaks the line-delimited
//! JSON wire protocol and answers with canned joints, with switches to
//! exercise the failure paths a real model could hit.

use clap::{Parser, ValueEnum};
use poseval_core::runner::{WireHandshake, WireRequest, WireResponse};
use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Every joint at the origin.
    Zeros,
    /// Joint j of the reply is (u, v, j) from the last input frame, so the
    /// caller can verify bit-exact transport.
    Echo,
}

#[derive(Parser)]
#[command(
    name = "poseval-echo-model",
    about = "Wire-protocol test model: answers every request with canned joints"
)]
struct Args {
    #[arg(long, value_enum, default_value_t = Mode::Zeros)]
    mode: Mode,
    /// Declare this joint count in the handshake instead of the caller's.
    #[arg(long)]
    joints: Option<usize>,
    /// Declare this protocol version instead of the caller's.
    #[arg(long)]
    protocol: Option<u32>,
    /// Buffer requests in batches of 8 and answer each batch in reverse.
    /// Callers must send a multiple of 8 requests or the tail batch never
    /// flushes.
    #[arg(long)]
    shuffle: bool,
    /// Complete the handshake, then never answer anything.
    #[arg(long)]
    hang: bool,
    /// Answer the first request with a line that is not JSON.
    #[arg(long)]
    garbage: bool,
    /// Exit cleanly after answering this many requests.
    #[arg(long)]
    die_after: Option<usize>,
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let stdout = io::stdout();
    let mut out = stdout.lock();

    let first = match lines.next() {
        Some(line) => line?,
        None => return Ok(()),
    };
    let mut handshake: WireHandshake =
        serde_json::from_str(&first).expect("first line is the caller's handshake");
    if let Some(j) = args.joints {
        handshake.num_joints = j;
    }
    if let Some(p) = args.protocol {
        handshake.protocol = p;
    }
    writeln!(out, "{}", serde_json::to_string(&handshake).unwrap())?;
    out.flush()?;

    if args.hang {
        // stay alive without answering; the caller's timeout handles us
        loop {
            std::thread::sleep(std::time::Duration::from_millis(100));
        }
    }

    let mut sent_garbage = false;
    let mut answered = 0usize;
    let mut batch: Vec<WireResponse> = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let request: WireRequest = serde_json::from_str(&line).expect("request json");
        if args.garbage && !sent_garbage {
            writeln!(out, "this is not a wire response")?;
            out.flush()?;
            sent_garbage = true;
            continue;
        }
        let joints: Vec<[f64; 3]> = match args.mode {
            Mode::Zeros => vec![[0.0; 3]; handshake.num_joints],
            Mode::Echo => {
                let last = request.keypoints.last().expect("at least one frame");
                last.iter()
                    .enumerate()
                    .map(|(j, kp)| [kp[0], kp[1], j as f64])
                    .collect()
            }
        };
        let response = WireResponse {
            id: request.id,
            joints,
        };
        if args.shuffle {
            batch.push(response);
            if batch.len() == 8 {
                for r in batch.drain(..).rev() {
                    writeln!(out, "{}", serde_json::to_string(&r).unwrap())?;
                }
                out.flush()?;
            }
        } else {
            writeln!(out, "{}", serde_json::to_string(&response).unwrap())?;
            out.flush()?;
        }
        answered += 1;
        if args.die_after == Some(answered) {
            return Ok(());
        }
    }
    for r in batch.drain(..).rev() {
        writeln!(out, "{}", serde_json::to_string(&r).unwrap())?;
    }
    out.flush()?;
    Ok(())
}
