//! A prompt embedding modulates a forecast through FiLM.

use lemole::conditioning::{film_apply, film_params, FilmPair};
use lemole::prompts::{hash_encoder, render_static_prompt, DatasetMeta};
use lemole::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lemole::Result<()> {
    let (h, c, d) = (6, 2, 16);
    let z = hash_encoder(&render_static_prompt(&DatasetMeta::ett())?.text, d, 0)?;
    let y = Matrix::from_fn(h, c, |i, j| i as f64 - j as f64);

    let identity = FilmPair::identity(z.rows(), d, h, c);
    let (g, b) = film_params(&identity.gamma, &identity.beta, &z)?;
    println!("identity FiLM changes the forecast by {:.1e}", film_apply(&g, &b, &y)?.max_abs_diff(&y));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pair = FilmPair::init(z.rows(), d, h, c, &mut rng);
    let (g, b) = film_params(&pair.gamma, &pair.beta, &z)?;
    println!("initialised gamma[0] {:?}, beta[0] {:?}", g.row(0), b.row(0));
    println!("modulated forecast differs by {:.3e}", film_apply(&g, &b, &y)?.max_abs_diff(&y));
    Ok(())
}
