//! Fits a patch codebook on synthetic shapes, tokenizes a few images and
//! writes the originals next to their reconstructions.
//!
//! ```text
//! cargo run --release --example patch_tokenizer [OUT_DIR]
//! ```

use std::path::PathBuf;

use promptgen::io::ppm::write_image;
use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::{fit_codebook, Image};

fn main() -> promptgen::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("promptgen-examples"));
    std::fs::create_dir_all(&out)?;

    let data = synth_dataset(&SyntheticDatasetSpec::source(20, 0))?;
    let book = fit_codebook(&data.images, 64, 4, 4, 15, 0)?;
    println!(
        "{} images, {} codewords of {}x{} pixels",
        data.len(),
        book.len(),
        book.patch_h(),
        book.patch_w()
    );
    let history = book.sse_history();
    println!(
        "k-means SSE {:.1} -> {:.1} over {} assignments",
        history[0],
        history[history.len() - 1],
        history.len()
    );

    let mut tiles = Vec::new();
    let mut error = 0.0;
    for image in data.images.iter().step_by(20) {
        let grid = book.encode(image)?;
        let back = book.decode(&grid)?;
        error += image.l2_distance(&back);
        tiles.push(image.clone());
        tiles.push(back);
    }
    let shown = tiles.len() / 2;
    println!("mean reconstruction L2 over {shown} images: {:.3}", error / shown as f64);
    let first = book.encode(&data.images[0])?;
    println!("token grid of the first image ({}x{}):", first.height(), first.width());
    for row in 0..first.height() {
        let line: Vec<String> = (0..first.width()).map(|c| format!("{:>3}", first.get(row, c))).collect();
        println!("  {}", line.join(""));
    }
    let path = out.join("tokenizer_pairs.ppm");
    write_image(&path, &Image::tile(&tiles, 2)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
