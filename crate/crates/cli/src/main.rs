use std::process::ExitCode;

use seqopt_cli::{parse_cli, run_experiment};

fn main() -> ExitCode {
    let config = match parse_cli(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_experiment(&config) {
        Ok(out) => {
            if let Some(last) = out.summary.rows.last() {
                println!(
                    "{} {} after {} steps: mean cumulative objective {:.6e} (std {:.3e}) over {} runs",
                    config.problem, config.mode, last.iter, last.mean_cum_obj_mean, last.mean_cum_obj_std, config.runs
                );
            }
            println!("wrote {}", config.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
