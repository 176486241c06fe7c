use nalgebra::DMatrix;

use crate::error::{Error, Result};

const RANK_RTOL: f64 = 1e-10;

fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let qr = a.clone().qr();
    let r = qr.r();
    for i in 0..a.ncols() {
        if !(r[(i, i)].abs() > RANK_RTOL * scale) {
            return Err(Error::RankDeficientInput);
        }
    }
    Ok(qr.q())
}

/// Principal angles between the column spans of `a` and `b`, ascending, in
/// `[0, pi/2]`. Small angles come from sines and large ones from cosines so
/// both ends stay accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "subspaces live in dimensions {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 || b.ncols() == 0 || a.ncols() > a.nrows() || b.ncols() > b.nrows() {
        return Err(Error::RankDeficientInput);
    }
    let (wide, narrow) = if a.ncols() >= b.ncols() { (a, b) } else { (b, a) };
    let qa = orthonormal_basis(wide)?;
    let qb = orthonormal_basis(narrow)?;
    let m = qa.transpose() * &qb;
    let mut cosines: Vec<f64> = m.singular_values().iter().copied().collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    let residual = &qb - &qa * &m;
    let mut sines: Vec<f64> = residual.singular_values().iter().copied().collect();
    sines.sort_by(|x, y| x.total_cmp(y));
    let half_pi = std::f64::consts::FRAC_PI_2;
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let angle = if c * c >= 0.5 { s.min(1.0).asin() } else { c.min(1.0).acos() };
            angle.clamp(0.0, half_pi)
        })
        .collect())
}
