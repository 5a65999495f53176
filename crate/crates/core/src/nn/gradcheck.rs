use rand::Rng;

use crate::error::Result;
use crate::rng::substream;

use super::{Graph, NodeId, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e−8)` over all coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates whose ±step probes straddled a kink (leaky-ReLU sign change
    /// or clamp boundary) and were checked again with `step / REFINE_FACTOR`.
    pub refined: usize,
    /// Coordinates left out because even the refined probes straddle a kink.
    pub skipped_kinks: usize,
}

pub const REFINE_FACTOR: f64 = 100.0;

impl GradCheckReport {
    pub(crate) fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            coordinates: 0,
            refined: 0,
            skipped_kinks: 0,
        }
    }

    /// Folds one coordinate in: `probe(h)` returns `(f(x+h), f(x−h))` and
    /// whether both probes kept the activation pattern.
    pub(crate) fn record<P>(&mut self, analytic: f64, step: f64, mut probe: P) -> Result<()>
    where
        P: FnMut(f64) -> Result<(f64, f64, bool)>,
    {
        let mut h = step;
        let (mut fp, mut fm, mut stable) = probe(h)?;
        if !stable {
            h = step / REFINE_FACTOR;
            (fp, fm, stable) = probe(h)?;
            if !stable {
                self.skipped_kinks += 1;
                return Ok(());
            }
            self.refined += 1;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        self.max_rel_error = self.max_rel_error.max(rel);
        self.coordinates += 1;
        Ok(())
    }
}

/// Central finite differences against the tape gradient, for the input and every parameter.
///
/// The scalar objective is `Σ out ⊙ r` with a fixed random projection `r`, so
/// every output coordinate contributes.
pub fn grad_check<F>(
    params: &Params<f64>,
    input: &Tensor<f64>,
    step: f64,
    seed: u64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    let forward = |p: &Params<f64>, x: &Tensor<f64>| -> Result<(Vec<f64>, Vec<u8>)> {
        let mut g = Graph::new(p);
        let xi = g.input(x.clone());
        let out = build(&mut g, xi)?;
        Ok((g.value(out).data.clone(), g.activation_pattern()))
    };

    let (out0, pattern0) = forward(params, input)?;
    let mut rng = substream(seed, "gradcheck");
    let proj: Vec<f64> = (0..out0.len())
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    let objective = |p: &Params<f64>, x: &Tensor<f64>| -> Result<(f64, bool)> {
        let (v, pattern) = forward(p, x)?;
        Ok((
            v.iter().zip(&proj).map(|(a, b)| a * b).sum(),
            pattern == pattern0,
        ))
    };

    let mut g = Graph::new(params);
    let xi = g.input(input.clone());
    let out = build(&mut g, xi)?;
    let grads = g.backward(&[(out, &proj)])?;
    let dx = grads
        .node(xi)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let mut report = GradCheckReport::empty();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data[i];
        report.record(dx[i], step, |h| {
            x.data[i] = orig + h;
            let (fp, sp) = objective(params, &x)?;
            x.data[i] = orig - h;
            let (fm, sm) = objective(params, &x)?;
            x.data[i] = orig;
            Ok((fp, fm, sp && sm))
        })?;
    }

    let mut p = params.clone();
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let orig = p.get(id).data[j];
            report.record(grads.params.get(id)[j], step, |h| {
                p.get_mut(id).data[j] = orig + h;
                let (fp, sp) = objective(&p, input)?;
                p.get_mut(id).data[j] = orig - h;
                let (fm, sm) = objective(&p, input)?;
                p.get_mut(id).data[j] = orig;
                Ok((fp, fm, sp && sm))
            })?;
        }
    }
    Ok(report)
}
