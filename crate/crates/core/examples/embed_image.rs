//! Embeds a small synthetic image and shows that overlaps of product states
//! are products of per-pixel overlaps.
//!
//!     cargo run --example embed_image

use blockstate::dataset::Image;
use blockstate::embedding::{embed_image, embed_pixel, pixel_overlap};

fn main() -> blockstate::Result<()> {
    for x in [0.0, 0.25, 0.5, 1.0] {
        let [c, s] = embed_pixel(x)?;
        println!("pixel {x:.2} -> ({c:.6}, {s:.6})");
    }

    let a = Image::new(2, 2, vec![0.0, 0.3, 0.7, 1.0], 0)?;
    let b = Image::new(2, 2, vec![0.1, 0.3, 0.2, 0.9], 1)?;
    let (xa, xb) = (embed_image(&a)?, embed_image(&b)?);
    let direct = xa.log_overlap(&xb).value();
    let mut by_pixel = 1.0;
    for (p, q) in a.pixels.iter().zip(&b.pixels) {
        by_pixel *= pixel_overlap(*p, *q)?;
    }
    println!("<a|b> = {direct:.12}  (product of pixel overlaps {by_pixel:.12})");
    println!("<a|a> = {:.12}", xa.log_overlap(&xa).value());
    Ok(())
}
