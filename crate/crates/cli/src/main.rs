//! `dsgs` — training and evaluation harness for the dynamic specular
//! Gaussian splatting engine.
//!
//! Usage: `dsgs <command> [--config file.json] [--<key> <value>]...`
//! Flags mirror the flat dotted keys of the JSON config one-to-one;
//! precedence is flag > file > default.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data error,
//! 4 numerical/geometric failure.

mod commands;
mod config;

use dsgs_core::Error;

const USAGE: &str = "usage: dsgs <command> [--config file.json] [--<key> <value>]...

commands:
  synth      generate a synthetic dataset (--out DIR --synth.recipe NAME ...)
  train      train a model (--dataset DIR --out DIR [--resume CKPT] ...)
  render     render checkpoint views to images (--checkpoint F --dataset DIR ...)
  eval       report mean PSNR/SSIM over a split (--checkpoint F --dataset DIR ...)
  gradcheck  run the finite-difference gradient audit (--seed N --instances N)
  inspect    print checkpoint statistics (--checkpoint F)

run `dsgs <command> --help` semantics: every key has a built-in default;
unknown keys are rejected.";

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Domain(_) | Error::Geometry(_) | Error::Contract(_) | Error::Numerical(_) => 4,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        std::process::exit(2);
    };
    let rest = &args[1..];
    let result = match command.as_str() {
        "synth" => commands::cmd_synth(rest),
        "train" => commands::cmd_train(rest),
        "render" => commands::cmd_render(rest),
        "eval" => commands::cmd_eval(rest),
        "gradcheck" => commands::cmd_gradcheck(rest),
        "inspect" => commands::cmd_inspect(rest),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            return;
        }
        other => Err(Error::Usage(format!("unknown command {other:?}"))),
    };
    if let Err(err) = result {
        // Single machine-parsable line: category prefix comes from Display.
        eprintln!("dsgs: {err}");
        std::process::exit(exit_code(&err));
    }
}
