use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::raster::{SceneRaster, Tile, TilePair};
use crate::rng::substream;

/// Floor on the MAD variances `2(1 − ρ)`, reached when post is an exact linear image of pre.
const MIN_MAD_VARIANCE: f64 = 1e-6;
/// Relative ridge added to a covariance diagonal when its Cholesky factorisation fails.
const RIDGE: f64 = 1e-6;

/// Upper tail `Q(k/2, x/2)` of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: usize) -> f64 {
    if x.is_nan() || k == 0 {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    gamma_ur(k as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrmadOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Pixels used for fitting; larger scenes are subsampled (seeded). `None` uses every pixel.
    pub max_pixels: Option<usize>,
    pub seed: u64,
}

impl Default for IrmadOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-6,
            max_pixels: Some(200_000),
            seed: 0,
        }
    }
}

/// Fitted canonical transformation of a scene pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrmadModel {
    pub bands: usize,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Canonical vectors for the pre scene, one per variate, ordered by decreasing correlation.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl IrmadModel {
    /// Chi-square statistic `Σ_k (M_k / σ_k)²` of one pixel pair.
    pub fn chi_square(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut t = 0.0;
        for k in 0..self.bands {
            let mut m = 0.0;
            for j in 0..self.bands {
                m +=
                    self.a[k][j] * (x[j] - self.mean_x[j]) - self.b[k][j] * (y[j] - self.mean_y[j]);
            }
            t += m * m / self.sigma2[k];
        }
        t
    }

    /// Statistic for every pixel of row-major `n×C` pixel arrays.
    pub fn chi_square_pixels(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let c = self.bands;
        x.chunks_exact(c)
            .zip(y.chunks_exact(c))
            .map(|(px, py)| self.chi_square(px, py))
            .collect()
    }

    /// Mean statistic over the pixels of a tile pair.
    pub fn tile_score(&self, pre: &Tile, post: &Tile) -> Result<f64> {
        if pre.bands != self.bands || post.bands != self.bands || pre.size != post.size {
            return Err(Error::Shape(
                "tile pair does not match the fitted model".into(),
            ));
        }
        let n = pre.size * pre.size;
        let (mut x, mut y) = (vec![0.0; self.bands], vec![0.0; self.bands]);
        let mut acc = 0.0;
        for p in 0..n {
            for b in 0..self.bands {
                x[b] = f64::from(pre.values[b * n + p]);
                y[b] = f64::from(post.values[b * n + p]);
            }
            acc += self.chi_square(&x, &y);
        }
        Ok(acc / n as f64)
    }
}

/// Mean chi-square statistic over the tile pair.
pub fn irmad_score(pair: &TilePair, model: &IrmadModel) -> Result<f64> {
    model.tile_score(&pair.pre, &pair.post)
}

/// Fits IR-MAD on all pixels valid in both scenes.
pub fn irmad_fit(pre: &SceneRaster, post: &SceneRaster, opts: &IrmadOptions) -> Result<IrmadModel> {
    if pre.width() != post.width() || pre.height() != post.height() || pre.bands() != post.bands() {
        return Err(Error::Pairing("IR-MAD scenes differ in shape".into()));
    }
    let c = pre.bands();
    let (h, w) = (pre.height(), pre.width());
    let mut valid: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for col in 0..w {
            if !pre.pixel_is_nodata(r, col) && !post.pixel_is_nodata(r, col) {
                valid.push((r, col));
            }
        }
    }
    if let Some(m) = opts.max_pixels {
        if valid.len() > m {
            let mut rng = substream(opts.seed, "irmad");
            let mut pick = index::sample(&mut rng, valid.len(), m).into_vec();
            pick.sort_unstable();
            valid = pick.into_iter().map(|i| valid[i]).collect();
        }
    }
    let mut x = Vec::with_capacity(valid.len() * c);
    let mut y = Vec::with_capacity(valid.len() * c);
    for &(r, col) in &valid {
        for b in 0..c {
            x.push(f64::from(pre.get(b, r, col)));
            y.push(f64::from(post.get(b, r, col)));
        }
    }
    irmad_fit_pixels(&x, &y, c, opts)
}

fn cholesky_with_fallback(m: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let c = m.nrows();
    let lambda = RIDGE * m.trace() / c as f64;
    let mut r = m.clone();
    for i in 0..c {
        r[(i, i)] += lambda;
    }
    r.cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::DegenerateFit(format!("{which} covariance is singular after ridge")))
}

struct Moments {
    mean_x: DVector<f64>,
    mean_y: DVector<f64>,
    sxx: DMatrix<f64>,
    syy: DMatrix<f64>,
    sxy: DMatrix<f64>,
}

fn weighted_moments(x: &[f64], y: &[f64], w: &[f64], c: usize) -> Result<Moments> {
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::DegenerateFit("all IR-MAD weights vanished".into()));
    }
    let mut mx = DVector::zeros(c);
    let mut my = DVector::zeros(c);
    for ((px, py), wi) in x.chunks_exact(c).zip(y.chunks_exact(c)).zip(w) {
        for j in 0..c {
            mx[j] += wi * px[j];
            my[j] += wi * py[j];
        }
    }
    mx /= sw;
    my /= sw;
    let mut sxx = DMatrix::zeros(c, c);
    let mut syy = DMatrix::zeros(c, c);
    let mut sxy = DMatrix::zeros(c, c);
    let (mut dx, mut dy) = (vec![0.0; c], vec![0.0; c]);
    for ((px, py), wi) in x.chunks_exact(c).zip(y.chunks_exact(c)).zip(w) {
        for j in 0..c {
            dx[j] = px[j] - mx[j];
            dy[j] = py[j] - my[j];
        }
        for i in 0..c {
            for j in 0..c {
                sxx[(i, j)] += wi * dx[i] * dx[j];
                syy[(i, j)] += wi * dy[i] * dy[j];
                sxy[(i, j)] += wi * dx[i] * dy[j];
            }
        }
    }
    Ok(Moments {
        mean_x: mx,
        mean_y: my,
        sxx: sxx / sw,
        syy: syy / sw,
        sxy: sxy / sw,
    })
}

/// One canonical-correlation solve: `(a, b, ρ)` with unit-variance variates.
fn cca(m: &Moments) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let c = m.sxx.nrows();
    let lx = cholesky_with_fallback(&m.sxx, "pre")?;
    let ly = cholesky_with_fallback(&m.syy, "post")?;
    let singular = || Error::DegenerateFit("triangular solve failed".into());
    // K = Lx⁻¹ Σxy Ly⁻ᵀ
    let left = lx.solve_lower_triangular(&m.sxy).ok_or_else(singular)?;
    let k = ly
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(singular)?
        .transpose();
    let svd = k.svd(true, true);
    let u = svd.u.ok_or_else(singular)?;
    let vt = svd.v_t.ok_or_else(singular)?;
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let lxt = lx.transpose();
    let lyt = ly.transpose();
    let (mut a, mut b, mut rho) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &order {
        let ak = lxt
            .solve_upper_triangular(&u.column(i).into_owned())
            .ok_or_else(singular)?;
        let bk = lyt
            .solve_upper_triangular(&vt.row(i).transpose().into_owned())
            .ok_or_else(singular)?;
        let mut ak: Vec<f64> = ak.iter().copied().collect();
        let mut bk: Vec<f64> = bk.iter().copied().collect();
        let lead = ak
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            ak.iter_mut().for_each(|v| *v = -*v);
            bk.iter_mut().for_each(|v| *v = -*v);
        }
        a.push(ak);
        b.push(bk);
        rho.push(svd.singular_values[i].clamp(0.0, 1.0));
    }
    Ok((a, b, rho))
}

/// IR-MAD on row-major `n×C` pixel arrays.
pub fn irmad_fit_pixels(
    x: &[f64],
    y: &[f64],
    bands: usize,
    opts: &IrmadOptions,
) -> Result<IrmadModel> {
    let c = bands;
    if c == 0 || x.len() != y.len() || x.len() % c != 0 {
        return Err(Error::Shape("IR-MAD pixel arrays do not match".into()));
    }
    let n = x.len() / c;
    if n < 10 * c {
        return Err(Error::Domain(format!(
            "IR-MAD needs at least {} pixels, got {n}",
            10 * c
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite pixel values".into()));
    }
    let mut w = vec![1.0; n];
    let mut model: Option<IrmadModel> = None;
    for it in 1..=opts.max_iter.max(1) {
        let m = weighted_moments(x, y, &w, c)?;
        let (a, b, rho) = cca(&m)?;
        let sigma2 = rho
            .iter()
            .map(|r| (2.0 * (1.0 - r)).max(MIN_MAD_VARIANCE))
            .collect();
        let converged = model.as_ref().is_some_and(|prev| {
            prev.rho
                .iter()
                .zip(&rho)
                .all(|(p, r)| (p - r).abs() < opts.tol)
        });
        let next = IrmadModel {
            bands: c,
            mean_x: m.mean_x.iter().copied().collect(),
            mean_y: m.mean_y.iter().copied().collect(),
            a,
            b,
            rho,
            sigma2,
            iterations_used: it,
            converged,
        };
        if converged {
            return Ok(next);
        }
        for ((wi, px), py) in w.iter_mut().zip(x.chunks_exact(c)).zip(y.chunks_exact(c)) {
            *wi = chi2_sf(next.chi_square(px, py), c);
        }
        model = Some(next);
    }
    Ok(model.expect("at least one iteration"))
}
