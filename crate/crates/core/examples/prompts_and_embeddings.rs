//! Render static and dynamic prompts, embed them, and round-trip a file store.

use lemole::prompts::{
    embed, render_dynamic_prompt, render_static_prompt, tokenize, write_embedding_store, DatasetMeta, EmbeddingProvider, FileProvider,
    HashEncoder,
};
use lemole::synth::{DEFAULT_START, HOURLY};

fn main() -> lemole::Result<()> {
    let meta = DatasetMeta::ett();
    let s = render_static_prompt(&meta)?;
    println!("static ({} tokens): {}", tokenize(&s.text).len(), s.text);

    let stamps: Vec<i64> = (0..96).map(|i| DEFAULT_START + i * HOURLY).collect();
    let d = render_dynamic_prompt(&stamps, HOURLY)?;
    println!("dynamic ({} tokens): {}", tokenize(&d.text).len(), d.text);

    let encoder = HashEncoder::new(32, 7);
    let zs = embed(&encoder, &s)?;
    let zd = embed(&encoder, &d)?;
    println!("Z_S {}x{}, Z_D {}x{} via {}", zs.rows(), zs.dim(), zd.rows(), zd.dim(), zs.provider_id);

    let dir = std::env::temp_dir().join(format!("lemole-store-{}", std::process::id()));
    write_embedding_store(&dir, &[(s.text.clone(), (*zs.matrix).clone()), (d.text.clone(), (*zd.matrix).clone())])?;
    let store = FileProvider::load(&dir)?;
    let back = store.encode(&s.text)?;
    println!("store at {} holds {} entries; static max diff {:.2e}", dir.display(), store.len(), back.max_abs_diff(&zs.matrix));
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
