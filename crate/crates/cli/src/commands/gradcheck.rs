//! `gradcheck`: finite-difference verification of the training gradients.
//! Exit code 6 signals a failed check.

use graphemb::error::Result;
use graphemb::gradcheck::{run_gradcheck, GradCheckConfig};
use graphemb::losses::DistanceMetric;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Fix alpha; by default trials alternate between 1 (full objective) and
    /// 0 (supervised path only).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fix the metric (cosine or euclidean); by default trials alternate.
    #[arg(long)]
    pub metric: Option<String>,
    /// Test fixture: plant a sign flip in one analytic gradient so the
    /// harness can be shown to catch it.
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

pub fn run(args: &Args) -> Result<u8> {
    let metric: Option<DistanceMetric> = match &args.metric {
        Some(m) => Some(m.parse()?),
        None => None,
    };
    let cfg = GradCheckConfig {
        trials: args.trials,
        seed: args.seed,
        step: args.step,
        alpha: args.alpha,
        metric,
        inject_sign_flip: args.inject_sign_flip,
    };
    let report = run_gradcheck::<f64>(&cfg)?;
    for t in &report.trials {
        println!(
            "trial {}\talpha {}\tmetric {}\tparams {}\tmax rel error {:.3e}",
            t.trial, t.alpha, t.metric, t.params_checked, t.max_rel_error
        );
    }
    println!(
        "max relative error\t{:.3e}\ttolerance\t{:.0e}",
        report.max_rel_error, report.tolerance
    );
    if report.passed() {
        println!("gradient check\tpass");
        Ok(0)
    } else {
        eprintln!("gradient check failed");
        Ok(6)
    }
}
