//! A bank of linear experts over nested lookback windows.

use lemole::data::{expert_views, halving_schedule};
use lemole::experts::LinearExpert;
use lemole::params::Parameterized;
use lemole::{synth, ExpertBank};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lemole::Result<()> {
    let (t, h, c) = (96, 24, 2);
    let frame = synth::sinusoid_trend(&synth::SynthSpec { channels: c, ..synth::SynthSpec::new(t) })?;
    let lengths = halving_schedule(t, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = ExpertBank::new_time(lengths.iter().map(|&w| LinearExpert::init(w, h, c, &mut rng)).collect())?;
    println!("{} experts, windows {:?}, {} parameters", bank.len(), bank.window_lengths(), bank.num_params());

    let outputs = bank.forward(&expert_views(&frame.values, &lengths)?)?;
    for (w, y) in lengths.iter().zip(&outputs) {
        println!("w={w:>3}: forecast {}x{}, first step {:?}", y.rows(), y.cols(), y.row(0));
    }
    Ok(())
}
