//! Prints the cosine schedule and the evenly spaced inference subsequence.
//!
//! ```text
//! cargo run --example noise_schedule -- [T] [inference_steps]
//! ```

use diffsr::{NoiseSchedule, TimestepSubsequence};

fn main() -> diffsr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let t_max = args.next().unwrap_or(1000);
    let steps = args.next().unwrap_or(10);

    let schedule = NoiseSchedule::cosine(t_max)?;
    println!("{:>6}  {:>10}  {:>10}  {:>12}", "t", "alpha", "sigma", "snr");
    for i in 0..=10 {
        let t = i * t_max / 10;
        println!(
            "{t:>6}  {:>10.6}  {:>10.6}  {:>12.4e}",
            schedule.alpha(t),
            schedule.sigma(t),
            schedule.snr(t)
        );
    }

    let seq = TimestepSubsequence::evenly_spaced(&schedule, steps)?;
    println!("\n{steps} inference steps: {:?}", seq.steps());
    let hops: Vec<String> = seq.transitions().map(|(t, p)| format!("{t}->{p}")).collect();
    println!("transitions: {}", hops.join(" "));
    Ok(())
}
