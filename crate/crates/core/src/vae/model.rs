use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{
    ConvSpec, DepthwiseFilter, GradCheckReport, Grads, Graph, NodeId, ParamId, Params, Tensor,
};
use crate::raster::Tile;
use crate::rng::substream;
use crate::scalar::Scalar;

use super::loss::{vae_loss, LossParts};
use super::{EncoderConfig, LEAKY_SLOPE};

/// Clamp applied to the encoder's log-variance head.
pub const LOG_VAR_RANGE: (f64, f64) = (-10.0, 10.0);

/// Diagonal-Gaussian posterior `N(μ, diag(exp(log σ²)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior<T> {
    pub mu: Vec<T>,
    pub log_var: Vec<T>,
}

/// `z = μ + exp(log σ²/2) ⊙ η` with `η ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(
    post: &LatentPosterior<T>,
    rng: &mut R,
) -> Vec<T> {
    post.mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| {
            let eta: f64 = rng.sample(StandardNormal);
            *m + (*lv * T::lit(0.5)).exp() * T::lit(eta)
        })
        .collect()
}

/// Low/high frequency split of a tile, concatenated to `2C` channels.
///
/// The low band is rounded to `f32` before the residual is formed, so for
/// `f32` tiles evaluated in 64-bit mode `low + high` reproduces the tile bit for bit.
pub fn freq_decompose<T: Scalar>(tile: &Tile, kernel: usize, sigma: f64) -> Result<Tensor<T>> {
    let (c, s) = (tile.bands, tile.size);
    let x = Tensor::<f64>::from_f32(vec![c, s, s], &tile.values)?;
    let low = DepthwiseFilter::gaussian(kernel, sigma).forward(&x)?;
    let n = c * s * s;
    let mut out = Vec::with_capacity(2 * n);
    let low32: Vec<f32> = low.data.iter().map(|v| *v as f32).collect();
    out.extend(low32.iter().map(|v| T::lit(f64::from(*v))));
    out.extend(
        tile.values
            .iter()
            .zip(&low32)
            .map(|(x, l)| T::lit(f64::from(*x) - f64::from(*l))),
    );
    Tensor::new(vec![2 * c, s, s], out)
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    scale: ParamId,
    shift: ParamId,
}

#[derive(Debug, Clone)]
struct MultiScaleStage {
    branches: Vec<Conv>,
    fuse: Conv,
    norm: Norm,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct ResidualStage {
    entry: Conv,
    entry_norm: Norm,
    blocks: Vec<ResBlock>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    conv: Conv,
    norm: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    multiscale: Vec<MultiScaleStage>,
    residual: Vec<ResidualStage>,
    mu_head: Conv,
    log_var_head: Conv,
    projection: Conv,
    decoder: Vec<DecoderStage>,
    output: Conv,
}

/// Builds parameters in a fixed order; values are drawn in f64 so both
/// precisions start from the same weights.
struct Builder<'a, R: Rng> {
    params: Params<f64>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (self.rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        self.params.add(name, Tensor { shape, data })
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, v: f64) -> ParamId {
        self.params.add(name, Tensor::filled(shape, v))
    }

    /// He-uniform for leaky-ReLU layers, zero bias.
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        Conv {
            w: self.uniform(format!("{name}.weight"), vec![cout, cin, k, k], bound),
            b: self.constant(format!("{name}.bias"), vec![cout], 0.0),
        }
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) -> Conv {
        let bound = 1.0 / (inp as f64).sqrt();
        Conv {
            w: self.uniform(format!("{name}.weight"), vec![out, inp], bound),
            b: self.uniform(format!("{name}.bias"), vec![out], bound),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            scale: self.constant(format!("{name}.scale"), vec![c], 1.0),
            shift: self.constant(format!("{name}.shift"), vec![c], 0.0),
        }
    }
}

impl Layout {
    fn build<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> (Self, Params<f64>) {
        let mut b = Builder {
            params: Params::new(),
            rng,
        };
        let ch = &cfg.stage_channels;
        let mut cin = 2 * cfg.input_bands;
        let mut multiscale = Vec::new();
        for (s, &cout) in ch[..2].iter().enumerate() {
            let branches = cfg
                .dilation_rates
                .iter()
                .map(|d| b.conv(&format!("enc{s}.dil{d}"), cout, cin, 3))
                .collect();
            let fuse = b.conv(
                &format!("enc{s}.fuse"),
                cout,
                cout * cfg.dilation_rates.len(),
                1,
            );
            let norm = b.norm(&format!("enc{s}.norm"), cout);
            multiscale.push(MultiScaleStage {
                branches,
                fuse,
                norm,
            });
            cin = cout;
        }
        let mut residual = Vec::new();
        for (s, &cout) in ch[2..].iter().enumerate() {
            let s = s + 2;
            let entry = b.conv(&format!("enc{s}.entry"), cout, cin, 3);
            let entry_norm = b.norm(&format!("enc{s}.entry_norm"), cout);
            let blocks = (0..cfg.res_blocks)
                .map(|k| ResBlock {
                    conv1: b.conv(&format!("enc{s}.res{k}.conv1"), cout, cout, 3),
                    norm1: b.norm(&format!("enc{s}.res{k}.norm1"), cout),
                    conv2: b.conv(&format!("enc{s}.res{k}.conv2"), cout, cout, 3),
                    norm2: b.norm(&format!("enc{s}.res{k}.norm2"), cout),
                })
                .collect();
            residual.push(ResidualStage {
                entry,
                entry_norm,
                blocks,
            });
            cin = cout;
        }
        let last = ch[3];
        let mu_head = b.dense("mu_head", cfg.latent_dim, last);
        let log_var_head = b.dense("log_var_head", cfg.latent_dim, last);
        let bn = cfg.bottleneck_size();
        let projection = b.dense("dec.projection", last * bn * bn, cfg.latent_dim);
        let widths: Vec<usize> = ch.iter().rev().copied().collect();
        let mut decoder = Vec::new();
        let mut cin = last;
        for s in 0..4 {
            let cout = *widths.get(s + 1).unwrap_or(&widths[3]);
            decoder.push(DecoderStage {
                conv: b.conv(&format!("dec{s}.conv"), cout, cin, 3),
                norm: b.norm(&format!("dec{s}.norm"), cout),
            });
            cin = cout;
        }
        let output = b.conv("dec.output", cfg.input_bands, cin, 3);
        (
            Self {
                multiscale,
                residual,
                mu_head,
                log_var_head,
                projection,
                decoder,
                output,
            },
            b.params,
        )
    }
}

/// Model: configuration, layout and parameters.
#[derive(Debug, Clone)]
pub struct Vae<T: Scalar> {
    pub config: EncoderConfig,
    pub params: Params<T>,
    pub init_seed: u64,
    layout: Layout,
}

/// Per-sample forward record used by training and gradient checks.
pub struct SampleForward {
    pub mu: NodeId,
    pub log_var: NodeId,
    pub z: NodeId,
    pub recon: NodeId,
}

impl<T: Scalar> Vae<T> {
    /// Freshly initialised model; the same seed gives the same weights in both precisions.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "init");
        let (layout, params) = Layout::build(&config, &mut rng);
        Ok(Self {
            config,
            params: params.cast(),
            init_seed: seed,
            layout,
        })
    }

    /// Model with externally supplied parameters (names and shapes must match the layout).
    pub fn from_params(config: EncoderConfig, params: Params<T>, seed: u64) -> Result<Self> {
        let mut vae = Self::new(config, seed)?;
        vae.params.assign_from(&params)?;
        Ok(vae)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn output_conv(&self) -> (ParamId, ParamId) {
        (self.layout.output.w, self.layout.output.b)
    }

    fn check_tile(&self, tile: &Tile) -> Result<()> {
        if tile.bands != self.config.input_bands || tile.size != self.config.tile_size {
            return Err(Error::Shape(format!(
                "model expects {}x{}x{} tiles, got {}x{}x{}",
                self.config.tile_size,
                self.config.tile_size,
                self.config.input_bands,
                tile.size,
                tile.size,
                tile.bands
            )));
        }
        Ok(())
    }

    pub fn decompose(&self, tile: &Tile) -> Result<Tensor<T>> {
        self.check_tile(tile)?;
        freq_decompose(tile, self.config.lowpass_kernel, self.config.lowpass_sigma)
    }

    fn conv_norm_act(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        c: Conv,
        n: Norm,
        act: bool,
    ) -> Result<NodeId> {
        let y = g.conv2d(x, c.w, Some(c.b), ConvSpec::same(1))?;
        let y = g.channel_norm(y, Some((n.scale, n.shift)))?;
        Ok(if act { g.leaky_relu(y, LEAKY_SLOPE) } else { y })
    }

    /// Encoder on an already decomposed `2C×S×S` input; returns `(μ, clamped log σ², stage outputs)`.
    pub fn encode_graph(
        &self,
        g: &mut Graph<T>,
        input: NodeId,
    ) -> Result<(NodeId, NodeId, Vec<NodeId>)> {
        let mut x = input;
        let mut stages = Vec::with_capacity(4);
        for st in &self.layout.multiscale {
            let branches = st
                .branches
                .iter()
                .zip(&self.config.dilation_rates)
                .map(|(c, d)| g.conv2d(x, c.w, Some(c.b), ConvSpec::same(*d)))
                .collect::<Result<Vec<_>>>()?;
            let cat = g.concat(&branches)?;
            let fused = g.conv2d(cat, st.fuse.w, Some(st.fuse.b), ConvSpec::same(1))?;
            let fused = g.channel_norm(fused, Some((st.norm.scale, st.norm.shift)))?;
            let fused = g.leaky_relu(fused, LEAKY_SLOPE);
            x = g.blurpool(fused)?;
            stages.push(x);
        }
        for st in &self.layout.residual {
            let mut h = self.conv_norm_act(g, x, st.entry, st.entry_norm, true)?;
            for blk in &st.blocks {
                let r = self.conv_norm_act(g, h, blk.conv1, blk.norm1, true)?;
                let r = self.conv_norm_act(g, r, blk.conv2, blk.norm2, false)?;
                let sum = g.add(h, r)?;
                h = g.leaky_relu(sum, LEAKY_SLOPE);
            }
            x = g.blurpool(h)?;
            stages.push(x);
        }
        let pooled = g.global_avg_pool(x)?;
        let mu = g.linear(pooled, self.layout.mu_head.w, self.layout.mu_head.b)?;
        let lv = g.linear(
            pooled,
            self.layout.log_var_head.w,
            self.layout.log_var_head.b,
        )?;
        let lv = g.clamp(lv, LOG_VAR_RANGE.0, LOG_VAR_RANGE.1);
        Ok((mu, lv, stages))
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, z: NodeId) -> Result<NodeId> {
        let bn = self.config.bottleneck_size();
        let p = &self.layout.projection;
        let h = g.linear(z, p.w, p.b)?;
        let mut x = g.reshape(h, vec![self.config.stage_channels[3], bn, bn])?;
        for st in &self.layout.decoder {
            let up = g.upsample(x, 2)?;
            x = self.conv_norm_act(g, up, st.conv, st.norm, true)?;
        }
        let o = &self.layout.output;
        g.conv2d(x, o.w, Some(o.b), ConvSpec::same(1))
    }

    pub fn encode(&self, tile: &Tile) -> Result<LatentPosterior<T>> {
        let input = self.decompose(tile)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(input);
        let (mu, lv, _) = self.encode_graph(&mut g, x)?;
        Ok(LatentPosterior {
            mu: g.value(mu).data.clone(),
            log_var: g.value(lv).data.clone(),
        })
    }

    /// `[c, h, w]` after each of the four encoder stages.
    pub fn stage_shapes(&self, tile: &Tile) -> Result<Vec<Vec<usize>>> {
        let input = self.decompose(tile)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(input);
        let (_, _, stages) = self.encode_graph(&mut g, x)?;
        Ok(stages.iter().map(|s| g.value(*s).shape.clone()).collect())
    }

    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent length {} vs {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut g = Graph::new(&self.params);
        let zi = g.input(Tensor::vector(z.to_vec()));
        let out = self.decode_graph(&mut g, zi)?;
        Ok(g.value(out).clone())
    }

    /// Encoder → reparameterization with fixed noise `eta` → decoder, on one graph.
    pub fn forward_sample(
        &self,
        g: &mut Graph<T>,
        tile: &Tile,
        eta: Vec<T>,
    ) -> Result<SampleForward> {
        let input = self.decompose(tile)?;
        let x = g.input(input);
        let (mu, log_var, _) = self.encode_graph(g, x)?;
        let z = g.reparameterize(mu, log_var, eta)?;
        let recon = self.decode_graph(g, z)?;
        Ok(SampleForward {
            mu,
            log_var,
            z,
            recon,
        })
    }

    /// Loss and parameter gradients for one tile with noise `eta`.
    pub fn sample_loss_and_grads(
        &self,
        tile: &Tile,
        eta: Vec<T>,
        beta: f64,
    ) -> Result<(LossParts, Grads<T>)> {
        let mut g = Graph::new(&self.params);
        let f = self.forward_sample(&mut g, tile, eta)?;
        let target: Vec<T> = tile.values.iter().map(|v| T::lit(f64::from(*v))).collect();
        let post = LatentPosterior {
            mu: g.value(f.mu).data.clone(),
            log_var: g.value(f.log_var).data.clone(),
        };
        let recon = &g.value(f.recon).data;
        let loss = vae_loss(&target, recon, &post, beta)?;
        let n = T::lit(target.len() as f64);
        let two = T::lit(2.0);
        let d_recon: Vec<T> = recon
            .iter()
            .zip(&target)
            .map(|(r, t)| two * (*r - *t) / n)
            .collect();
        let b = T::lit(beta);
        let half = T::lit(0.5);
        let d_mu: Vec<T> = post.mu.iter().map(|m| b * *m).collect();
        let d_lv: Vec<T> = post
            .log_var
            .iter()
            .map(|l| b * half * (l.exp() - T::one()))
            .collect();
        let grads = g.backward(&[(f.recon, &d_recon), (f.mu, &d_mu), (f.log_var, &d_lv)])?;
        Ok((loss, grads.params))
    }

    /// Loss only (same arithmetic as [`sample_loss_and_grads`](Self::sample_loss_and_grads)).
    pub fn sample_loss(&self, tile: &Tile, eta: Vec<T>, beta: f64) -> Result<LossParts> {
        Ok(self.loss_and_pattern(tile, eta, beta)?.0)
    }

    fn loss_and_pattern(
        &self,
        tile: &Tile,
        eta: Vec<T>,
        beta: f64,
    ) -> Result<(LossParts, Vec<u8>)> {
        let mut g = Graph::new(&self.params);
        let f = self.forward_sample(&mut g, tile, eta)?;
        let target: Vec<T> = tile.values.iter().map(|v| T::lit(f64::from(*v))).collect();
        let post = LatentPosterior {
            mu: g.value(f.mu).data.clone(),
            log_var: g.value(f.log_var).data.clone(),
        };
        let loss = vae_loss(&target, &g.value(f.recon).data, &post, beta)?;
        Ok((loss, g.activation_pattern()))
    }

    /// Deterministic evaluation loss with `z = μ`.
    pub fn eval_loss(&self, tile: &Tile, beta: f64) -> Result<LossParts> {
        self.sample_loss(tile, vec![T::zero(); self.config.latent_dim], beta)
    }
}

/// Central-difference check of the batch-mean loss gradient with respect to every parameter.
///
/// `etas[i]` is the fixed latent noise of `tiles[i]`. Coordinates whose probes
/// straddle an activation kink are counted in `skipped_kinks` instead of compared.
pub fn loss_grad_check(
    vae: &Vae<f64>,
    tiles: &[Tile],
    etas: &[Vec<f64>],
    step: f64,
) -> Result<GradCheckReport> {
    if tiles.is_empty() || tiles.len() != etas.len() {
        return Err(Error::Shape("one noise vector per tile is required".into()));
    }
    let beta = vae.config.beta;
    let k = tiles.len() as f64;
    let evaluate = |v: &Vae<f64>| -> Result<(f64, Vec<u8>)> {
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (t, e) in tiles.iter().zip(etas) {
            let (l, p) = v.loss_and_pattern(t, e.clone(), beta)?;
            total += l.total;
            pattern.extend(p);
        }
        Ok((total / k, pattern))
    };
    let mut grads = vae.params.zero_grads();
    for (t, e) in tiles.iter().zip(etas) {
        grads.add_assign(&vae.sample_loss_and_grads(t, e.clone(), beta)?.1);
    }
    grads.scale(1.0 / k);
    let (_, base) = evaluate(vae)?;

    let mut probe = vae.clone();
    let mut report = GradCheckReport::empty();
    let ids: Vec<ParamId> = vae.params.ids().collect();
    for id in ids {
        for j in 0..vae.params.get(id).len() {
            let orig = vae.params.get(id).data[j];
            report.record(grads.get(id)[j], step, |h| {
                probe.params.get_mut(id).data[j] = orig + h;
                let (fp, pp) = evaluate(&probe)?;
                probe.params.get_mut(id).data[j] = orig - h;
                let (fm, pm) = evaluate(&probe)?;
                probe.params.get_mut(id).data[j] = orig;
                Ok((fp, fm, pp == base && pm == base))
            })?;
        }
    }
    Ok(report)
}
