use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use teleop_server::{run, Args};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    match run(&args, stop) {
        Ok(report) => {
            println!("{}", report.summary.render());
            let p = report.final_state.position;
            println!(
                "final position: [{:.2}, {:.2}, {:.2}] m at t = {:.2} s",
                p.x, p.y, p.z, report.end_time
            );
            println!(
                "frames: {} keyframes, {} subframes, {} buffer frames",
                report.frame_counts.keyframes, report.frame_counts.subframes, report.frame_counts.buffer_frames
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
