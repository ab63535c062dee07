//! Distance metrics over complex images, k-nearest-neighbor selection and
//! the neighbor-matching-accuracy diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    L2,
    /// Normalized cross-correlation, converted to the distance
    /// `1 - |a^H b| / (||a|| ||b||)` so smaller is closer for every metric.
    Ncc,
}

/// Distance between two images of identical dimensions.
pub fn distance(a: &ComplexImage, b: &ComplexImage, metric: Metric) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape(format!(
            "distance: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(match metric {
        Metric::L1 => a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| (x - y).norm())
            .sum(),
        Metric::L2 => a.sub(b).norm(),
        Metric::Ncc => {
            let na = a.norm();
            let nb = b.norm();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::invalid(
                    "NCC distance is undefined for a zero image",
                ));
            }
            1.0 - a.dot(b).norm() / (na * nb)
        }
    })
}

/// Indices and distances of the k nearest gallery entries, distances
/// non-decreasing, ties broken by lower index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Selects the k gallery images closest to `query`.
pub fn knn(
    query: &ComplexImage,
    gallery: &[ComplexImage],
    k: usize,
    metric: Metric,
) -> Result<NeighborSet> {
    if k == 0 || k > gallery.len() {
        return Err(Error::invalid(format!(
            "k = {k} out of range for gallery of {}",
            gallery.len()
        )));
    }
    let mut scored: Vec<(f64, usize)> = gallery
        .iter()
        .enumerate()
        .map(|(i, img)| distance(query, img, metric).map(|d| (d, i)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(NeighborSet {
        indices: scored.iter().map(|&(_, i)| i).collect(),
        distances: scored.iter().map(|&(d, _)| d).collect(),
    })
}

/// Neighbor-matching accuracy: mean percentage overlap between found and
/// oracle neighbor sets over a test set.
pub fn nma(found: &[NeighborSet], oracle: &[NeighborSet], k: usize) -> Result<f64> {
    if found.len() != oracle.len() {
        return Err(Error::invalid(format!(
            "nma: {} found sets vs {} oracle sets",
            found.len(),
            oracle.len()
        )));
    }
    if found.is_empty() {
        return Err(Error::invalid("nma: empty test set"));
    }
    for set in found.iter().chain(oracle) {
        if set.k() != k {
            return Err(Error::invalid(format!(
                "nma: neighbor set has k = {}, expected {k}",
                set.k()
            )));
        }
    }
    let mut total = 0.0;
    for (f, o) in found.iter().zip(oracle) {
        let overlap = f
            .indices
            .iter()
            .filter(|i| o.indices.contains(i))
            .count();
        total += overlap as f64 / k as f64;
    }
    Ok(100.0 * total / found.len() as f64)
}
