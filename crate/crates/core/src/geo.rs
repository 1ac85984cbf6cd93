//! Distance-based weight matrices from station coordinates.

use nalgebra::DMatrix;

use crate::error::{NarError, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const DEFAULT_CUTOFF_KM: f64 = 500.0;

/// Inverse-distance weights: `w` restricted to pairs within `cutoff_km`,
/// `phi` over all pairs. Both row-normalized with zero diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoWeights {
    pub w: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub cutoff_km: f64,
}

/// Great-circle distance between `(lat, lon)` points given in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn distance_matrix(coords: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    for (i, &(lat, lon)) in coords.iter().enumerate() {
        if !(lat.abs() <= 90.0 && lon.abs() <= 360.0) {
            return Err(NarError::Data(format!("node {i} has invalid coordinates ({lat}, {lon})")));
        }
    }
    let n = coords.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = haversine_km(coords[i], coords[j]);
            if v == 0.0 {
                return Err(NarError::Data(format!("nodes {i} and {j} share a location")));
            }
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Row-normalized inverse distances, from precomputed distances.
pub fn inverse_distance_weights(d: &DMatrix<f64>, cutoff_km: Option<f64>) -> Result<DMatrix<f64>> {
    let n = d.nrows();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if i != j && cutoff_km.is_none_or(|c| d[(i, j)] <= c) {
                w[(i, j)] = 1.0 / d[(i, j)];
                total += w[(i, j)];
            }
        }
        if total == 0.0 {
            return Err(NarError::Data(match cutoff_km {
                Some(c) => format!("node {i} has no neighbour within {c} km"),
                None => format!("node {i} has no neighbour"),
            }));
        }
        w.row_mut(i).unscale_mut(total);
    }
    Ok(w)
}

pub fn build_geo_weights(coords: &[(f64, f64)], cutoff_km: f64) -> Result<GeoWeights> {
    if !(cutoff_km > 0.0) {
        return Err(NarError::InvalidParameter("cutoff must be positive".into()));
    }
    let d = distance_matrix(coords)?;
    Ok(GeoWeights {
        w: inverse_distance_weights(&d, Some(cutoff_km))?,
        phi: inverse_distance_weights(&d, None)?,
        cutoff_km,
    })
}
