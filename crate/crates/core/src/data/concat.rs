use rand::seq::SliceRandom;

use super::image::ImageTensor;
use crate::error::{Error, Result};
use crate::rng::child_rng;

/// Pairs the pool at random and joins each pair side by side.
///
/// Both halves are first resized to the smallest height and width found in
/// the pool, so every output is `h x 2w`.
pub fn make_concat_nonmembers(pool: &[ImageTensor], seed: u64) -> Result<Vec<ImageTensor>> {
    if pool.len() % 2 != 0 {
        return Err(Error::OddPool(pool.len()));
    }
    let Some(h) = pool.iter().map(ImageTensor::height).min() else { return Ok(Vec::new()) };
    let w = pool.iter().map(ImageTensor::width).min().unwrap_or(1);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut child_rng(seed, "concat-nonmembers"));
    order
        .chunks(2)
        .map(|pair| {
            let left = pool[pair[0]].clone().into_rgb().resize_bilinear(h, w);
            let right = pool[pair[1]].clone().into_rgb().resize_bilinear(h, w);
            left.hconcat(&right)
        })
        .collect()
}
