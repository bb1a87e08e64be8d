//! Load the bundled CSV, split it chronologically, standardize and window it.

use std::path::Path;

use lemole::data::{chrono_split, expert_views, fit_stats, halving_schedule, load_csv, make_windows, standardize};
use lemole::SplitSpec;

fn main() -> lemole::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic.csv");
    let frame = load_csv(&path, "date", 3600)?;
    println!("{} rows x {} channels {:?}", frame.rows(), frame.channels(), frame.channel_names);

    let (train, val, test) = chrono_split(&frame, &SplitSpec::default(), 120)?;
    println!("split {} / {} / {}", train.rows(), val.rows(), test.rows());

    let stats = fit_stats(&train)?;
    println!("train mean {:.4} std {:.4}", stats.mean[0], stats.std[0]);
    let test = standardize(&test, &stats)?;

    let windows = make_windows(&test, 96, 24, 1)?;
    println!("{} test windows of 96 -> 24", windows.len());
    let first = &windows[0];
    println!(
        "first window {} .. {}",
        lemole::data::format_iso(first.lookback_timestamps[0]),
        lemole::data::format_iso(*first.target_timestamps.last().unwrap())
    );

    let lengths = halving_schedule(96, 4);
    for (w, v) in lengths.iter().zip(expert_views(&first.lookback, &lengths)?) {
        println!("expert view w={w}: {} rows, last value {:.4}", v.rows(), v.as_slice().last().unwrap());
    }
    Ok(())
}
