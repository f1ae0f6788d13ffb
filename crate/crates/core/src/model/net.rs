use crate::nn::{Conv, Eca, ModelParams, ParamBuilder, ProjectionHead, ResBlock};
use crate::tensor::{no_grad, Real, Tensor, WaveletBands};

use super::{ModelConfig, ModelError};

type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Input extents must be multiples of this (four halvings, then one more
/// inside the wavelet expert at the coarsest scale).
pub const MULTIPLE: usize = 16;

/// Constant offsets added to each expert's output. Zero in normal use; the
/// ablation harness sets them to prove a disabled expert cannot reach the output.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExpertProbe {
    pub spatial_offset: f64,
    pub wavelet_offset: f64,
}

/// Which expert paths were evaluated during a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExpertTrace {
    pub spatial: bool,
    pub wavelet: bool,
    pub mixer: bool,
}

/// Gating maps of one scale. `w1`, `w2` are `N×1×h×w`; `alpha` is the `N×2×h×w`
/// mixing simplex when the mixer ran.
#[derive(Clone, Debug)]
pub struct ScaleDiagnostics<T: Real> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub alpha: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct FusionOutput<T: Real> {
    /// `N×1×H×W`, in [0, 1].
    pub fused: Tensor<T>,
    /// Raw decoder output before `tanh`.
    pub residual: Tensor<T>,
    pub scales: Vec<ScaleDiagnostics<T>>,
    /// Encoder pyramids of the two sources, finest level first.
    pub features1: Vec<Tensor<T>>,
    pub features2: Vec<Tensor<T>>,
    pub trace: ExpertTrace,
    /// Original `[H, W]` when the inputs were reflect-padded before fusion.
    /// `fused` and `residual` are cropped back; diagnostics stay padded.
    pub padded_from: Option<[usize; 2]>,
}

/// Unit-norm embeddings of the fused image and both sources, each `N×D`.
#[derive(Clone, Debug)]
pub struct Embeddings<T: Real> {
    pub fused: Tensor<T>,
    pub source1: Tensor<T>,
    pub source2: Tensor<T>,
}

/// Everything the training objective needs from one forward pass. The
/// auxiliary outputs are only computed when requested.
#[derive(Clone, Debug)]
pub struct TrainingOutput<T: Real> {
    pub fusion: FusionOutput<T>,
    pub recon: Option<(Tensor<T>, Tensor<T>)>,
    pub embeddings: Option<Embeddings<T>>,
}

#[derive(Clone, Debug)]
struct EncoderStage<T: Real> {
    down: Option<Conv<T>>,
    res: ResBlock<T>,
    eca: Eca<T>,
}

#[derive(Clone, Debug)]
struct SpatialExpert<T: Real> {
    local: Conv<T>,
    dilated: Conv<T>,
    reduce: Conv<T>,
}

#[derive(Clone, Debug)]
struct ScaleModules<T: Real> {
    rel_hidden: Conv<T>,
    rel_scores: Conv<T>,
    spatial: Option<SpatialExpert<T>>,
    mixer: Option<Conv<T>>,
}

#[derive(Clone, Debug)]
struct ReconHead<T: Real> {
    convs: [Conv<T>; 3],
}

impl<T: Real> ReconHead<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.convs[0].forward(x)?.relu();
        let h = self.convs[1].forward(&h)?.relu();
        Ok(self.convs[2].forward(&h)?.sigmoid())
    }
}

#[derive(Clone, Debug)]
pub struct FusionNet<T: Real = f32> {
    config: ModelConfig,
    params: ModelParams<T>,
    encoder: Vec<EncoderStage<T>>,
    scales: Vec<ScaleModules<T>>,
    /// Coarse to fine: merges into scales 3, 2, 1.
    decoder: Vec<ResBlock<T>>,
    output: Conv<T>,
    recon: [ReconHead<T>; 2],
    projection: ProjectionHead<T>,
    pub probe: ExpertProbe,
    /// Averages the reliability head with its source-swapped evaluation so
    /// that exchanging the inputs exchanges the weight maps.
    pub symmetric_reliability: bool,
}

impl<T: Real> FusionNet<T> {
    /// Fresh network with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::new();
        let parts = Self::assemble(&config, &mut ParamBuilder::init(&mut params, seed))?;
        Ok(Self::from_parts(config, params, parts))
    }

    /// Binds an existing parameter set, e.g. one read from a checkpoint.
    pub fn from_params(config: ModelConfig, mut params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::load(&mut params);
        let parts = Self::assemble(&config, &mut b)?;
        let declared = b.declared();
        if declared != params.len() {
            return Err(ModelError::Incompatible(format!(
                "configuration declares {declared} tensors, parameter set holds {}",
                params.len()
            )));
        }
        Ok(Self::from_parts(config, params, parts))
    }

    #[allow(clippy::type_complexity)]
    fn assemble(
        cfg: &ModelConfig,
        b: &mut ParamBuilder<'_, T>,
    ) -> Result<(
        Vec<EncoderStage<T>>,
        Vec<ScaleModules<T>>,
        Vec<ResBlock<T>>,
        Conv<T>,
        [ReconHead<T>; 2],
        ProjectionHead<T>,
    )> {
        let w = cfg.widths;
        let mut encoder = Vec::with_capacity(4);
        for s in 0..4 {
            let p = format!("encoder.stage{}", s + 1);
            let (down, cin) = if s == 0 {
                (None, 1)
            } else {
                (Some(Conv::new(b, &format!("{p}.down"), w[s - 1], w[s], 3, 2, 1)?), w[s])
            };
            encoder.push(EncoderStage {
                down,
                res: ResBlock::new(b, &format!("{p}.res"), cin, w[s])?,
                eca: Eca::new(b, &format!("{p}.eca"), cfg.eca_kernel)?,
            });
        }

        let mut scales = Vec::with_capacity(4);
        for (s, &c) in w.iter().enumerate() {
            let p = format!("fusion.scale{}", s + 1);
            let rel_hidden = Conv::new(b, &format!("{p}.reliability.conv1"), 2 * c, c, 3, 1, 1)?;
            let rel_scores = Conv::new(b, &format!("{p}.reliability.conv2"), c, 2, 1, 1, 1)?;
            let spatial = if cfg.experts.use_gce {
                Some(SpatialExpert {
                    local: Conv::new(b, &format!("{p}.spatial.local"), c, c, 3, 1, 1)?,
                    dilated: Conv::new(b, &format!("{p}.spatial.dilated"), c, c, 3, 1, 2)?,
                    reduce: Conv::new(b, &format!("{p}.spatial.reduce"), 2 * c, c, 1, 1, 1)?,
                })
            } else {
                None
            };
            let mixer = cfg
                .experts
                .mixer_active()
                .then(|| Conv::new(b, &format!("{p}.mixer"), 2 * c, 2, 1, 1, 1))
                .transpose()?;
            scales.push(ScaleModules {
                rel_hidden,
                rel_scores,
                spatial,
                mixer,
            });
        }

        let mut decoder = Vec::with_capacity(3);
        for s in (0..3).rev() {
            let name = format!("decoder.stage{}", s + 1);
            decoder.push(ResBlock::new(b, &name, w[s + 1] + w[s], w[s])?);
        }
        let output = Conv::new(b, "decoder.out", w[0], 1, 3, 1, 1)?;

        let rw = cfg.recon_width;
        let mut head = |k: usize| -> Result<ReconHead<T>> {
            let p = format!("recon{k}");
            Ok(ReconHead {
                convs: [
                    Conv::new(b, &format!("{p}.conv1"), 1, rw, 3, 1, 1)?,
                    Conv::new(b, &format!("{p}.conv2"), rw, rw, 3, 1, 1)?,
                    Conv::new(b, &format!("{p}.conv3"), rw, 1, 3, 1, 1)?,
                ],
            })
        };
        let recon = [head(1)?, head(2)?];
        let projection = ProjectionHead::new(b, "projection", w[3], cfg.projection_dim)?;
        Ok((encoder, scales, decoder, output, recon, projection))
    }

    #[allow(clippy::type_complexity)]
    fn from_parts(
        config: ModelConfig,
        params: ModelParams<T>,
        (encoder, scales, decoder, output, recon, projection): (
            Vec<EncoderStage<T>>,
            Vec<ScaleModules<T>>,
            Vec<ResBlock<T>>,
            Conv<T>,
            [ReconHead<T>; 2],
            ProjectionHead<T>,
        ),
    ) -> Self {
        Self {
            config,
            params,
            encoder,
            scales,
            decoder,
            output,
            recon,
            projection,
            probe: ExpertProbe::default(),
            symmetric_reliability: false,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Deep copy in another precision.
    pub fn cast<U: Real>(&self) -> FusionNet<U> {
        let mut net = FusionNet::from_params(self.config.clone(), self.params.cast::<U>())
            .expect("same configuration and names");
        net.probe = self.probe;
        net.symmetric_reliability = self.symmetric_reliability;
        net
    }

    /// Zeroes the final decoder convolution so the residual vanishes and the
    /// output is exactly the clipped source average.
    pub fn zero_residual(&self) {
        self.output.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
        self.output.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    /// Four-level feature pyramid of a `N×1×H×W` batch, finest first.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        check_image_batch(x)?;
        let mut levels = Vec::with_capacity(4);
        let mut h = x.clone();
        for stage in &self.encoder {
            if let Some(down) = &stage.down {
                h = down.forward(&h)?.relu();
            }
            h = stage.eca.forward(&stage.res.forward(&h)?)?;
            levels.push(h.clone());
        }
        Ok(levels)
    }

    /// Raw non-negative scores `N×2×h×w` of the reliability head at `scale` (0-based).
    fn reliability_scores(&self, scale: usize, f1: &Tensor<T>, f2: &Tensor<T>) -> Result<Tensor<T>> {
        let m = &self.scales[scale];
        let h = m.rel_hidden.forward(&Tensor::concat(&[f1, f2], 1)?)?.relu();
        Ok(m.rel_scores.forward(&h)?.softplus())
    }

    /// Per-pixel gates `(w1, w2)`, each `N×1×h×w`, summing to one.
    pub fn reliability(&self, scale: usize, f1: &Tensor<T>, f2: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if f1.shape() != f2.shape() {
            return Err(ModelError::Input(format!(
                "feature shapes differ: {:?} vs {:?}",
                f1.shape(),
                f2.shape()
            )));
        }
        let a = self.reliability_scores(scale, f1, f2)?;
        let (r1, r2) = if self.symmetric_reliability {
            let b = self.reliability_scores(scale, f2, f1)?;
            let half = T::lit(0.5);
            (
                a.narrow(1, 0, 1)?.add(&b.narrow(1, 1, 1)?)?.scale(half),
                a.narrow(1, 1, 1)?.add(&b.narrow(1, 0, 1)?)?.scale(half),
            )
        } else {
            (a.narrow(1, 0, 1)?, a.narrow(1, 1, 1)?)
        };
        let eps = self.config.reliability_eps;
        if self.symmetric_reliability {
            // Half of eps on each score keeps the gates exactly swap-equivariant.
            let half = T::lit(eps / 2.0);
            gates_from_scores(&r1.add_scalar(half), &r2, eps / 2.0)
        } else {
            gates_from_scores(&r1, &r2, eps)
        }
    }

    /// Local and dilated convolution branches over the gated base features.
    pub fn spatial_expert(&self, scale: usize, base: &Tensor<T>) -> Result<Tensor<T>> {
        let e = self.scales[scale]
            .spatial
            .as_ref()
            .ok_or_else(|| ModelError::Config("spatial expert is disabled".into()))?;
        let local = e.local.forward(base)?.relu();
        let wide = e.dilated.forward(base)?.relu();
        Ok(e.reduce.forward(&Tensor::concat(&[&local, &wide], 1)?)?)
    }

    /// Two-channel mixing logits from gradient-enhanced expert outputs.
    pub fn mixer_logits(&self, scale: usize, spatial: &Tensor<T>, wavelet: &Tensor<T>) -> Result<Tensor<T>> {
        let conv = self.scales[scale]
            .mixer
            .as_ref()
            .ok_or_else(|| ModelError::Config("gradient mixer is disabled".into()))?;
        let es = spatial.add(&spatial.sobel_magnitude()?)?;
        let ew = wavelet.add(&wavelet.sobel_magnitude()?)?;
        Ok(conv.forward(&Tensor::concat(&[&es, &ew], 1)?)?)
    }

    /// Softmax-weighted combination; returns the mixed features and the weights.
    pub fn mix(logits: &Tensor<T>, spatial: &Tensor<T>, wavelet: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let alpha = logits.softmax_channel()?;
        let mixed = spatial
            .mul(&alpha.narrow(1, 0, 1)?)?
            .add(&wavelet.mul(&alpha.narrow(1, 1, 1)?)?)?;
        Ok((mixed, alpha))
    }

    /// Raw residual `N×1×H×W` from the four fused levels.
    pub fn decode(&self, levels: &[Tensor<T>]) -> Result<Tensor<T>> {
        if levels.len() != 4 {
            return Err(ModelError::Input(format!("decoder needs 4 levels, got {}", levels.len())));
        }
        let mut x = levels[3].clone();
        for (block, skip) in self.decoder.iter().zip(levels[..3].iter().rev()) {
            let up = x.upsample_nearest2x()?;
            x = block.forward(&Tensor::concat(&[&up, skip], 1)?)?;
        }
        Ok(self.output.forward(&x)?)
    }

    /// `clip((I1 + I2)/2 + λ·tanh(R), 0, 1)`.
    pub fn compose(&self, i1: &Tensor<T>, i2: &Tensor<T>, residual: &Tensor<T>) -> Result<Tensor<T>> {
        let avg = i1.add(i2)?.scale(T::lit(0.5));
        let step = residual.tanh().scale(T::lit(self.config.residual_scale));
        Ok(avg.add(&step)?.clip(T::zero(), T::one())?)
    }

    /// Full fusion of two `N×1×H×W` batches whose extents are multiples of 16.
    pub fn forward(&self, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<FusionOutput<T>> {
        if i1.shape() != i2.shape() {
            return Err(ModelError::Input(format!(
                "source shapes differ: {:?} vs {:?}",
                i1.shape(),
                i2.shape()
            )));
        }
        let n = i1.shape()[0];
        let pyramid = self.encode(&Tensor::concat(&[i1, i2], 0)?)?;
        let mut features1 = Vec::with_capacity(4);
        let mut features2 = Vec::with_capacity(4);
        for f in &pyramid {
            features1.push(f.narrow(0, 0, n)?);
            features2.push(f.narrow(0, n, n)?);
        }

        let sw = self.config.experts;
        let mut trace = ExpertTrace::default();
        let mut fused_levels = Vec::with_capacity(4);
        let mut scales = Vec::with_capacity(4);
        for s in 0..4 {
            let (f1, f2) = (&features1[s], &features2[s]);
            let (w1, w2) = self.reliability(s, f1, f2)?;
            let spatial = if sw.use_gce {
                trace.spatial = true;
                let base = f1.mul(&w1)?.add(&f2.mul(&w2)?)?;
                Some(offset(self.spatial_expert(s, &base)?, self.probe.spatial_offset))
            } else {
                None
            };
            let wavelet = if sw.use_we {
                trace.wavelet = true;
                Some(offset(wavelet_expert(f1, f2, &w1, &w2)?, self.probe.wavelet_offset))
            } else {
                None
            };
            let (level, alpha) = match (spatial, wavelet) {
                (Some(es), Some(ew)) if sw.mixer_active() => {
                    trace.mixer = true;
                    let logits = self.mixer_logits(s, &es, &ew)?;
                    let (m, a) = Self::mix(&logits, &es, &ew)?;
                    (m, Some(a))
                }
                (Some(es), Some(ew)) => (es.add(&ew)?.scale(T::lit(0.5)), None),
                (Some(e), None) | (None, Some(e)) => (e, None),
                (None, None) => unreachable!("validated configuration enables an expert"),
            };
            fused_levels.push(level);
            scales.push(ScaleDiagnostics { w1, w2, alpha });
        }

        let residual = self.decode(&fused_levels)?;
        let fused = self.compose(i1, i2, &residual)?;
        Ok(FusionOutput {
            fused,
            residual,
            scales,
            features1,
            features2,
            trace,
            padded_from: None,
        })
    }

    /// Inference on arbitrary extents: reflect-pads to a multiple of 16, runs
    /// without recording gradients, and crops the image outputs back.
    pub fn fuse_image(&self, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<FusionOutput<T>> {
        if i1.shape() != i2.shape() {
            return Err(ModelError::Input(format!(
                "source shapes differ: {:?} vs {:?}",
                i1.shape(),
                i2.shape()
            )));
        }
        check_rank4_single_channel(i1)?;
        let (h, w) = (i1.shape()[2], i1.shape()[3]);
        let (ph, pw) = (h.next_multiple_of(MULTIPLE), w.next_multiple_of(MULTIPLE));
        no_grad(|| {
            if (ph, pw) == (h, w) {
                return self.forward(i1, i2);
            }
            let mut out = self.forward(&pad_reflect(i1, ph, pw)?, &pad_reflect(i2, ph, pw)?)?;
            out.fused = out.fused.narrow(2, 0, h)?.narrow(3, 0, w)?;
            out.residual = out.residual.narrow(2, 0, h)?.narrow(3, 0, w)?;
            out.padded_from = Some([h, w]);
            Ok(out)
        })
    }

    /// The two auxiliary source estimates from a fused image.
    pub fn reconstruct(&self, fused: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.recon[0].forward(fused)?, self.recon[1].forward(fused)?))
    }

    /// Unit-norm embedding of coarsest-level features.
    pub fn embed(&self, coarse: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.projection.forward(coarse)?)
    }

    /// Forward pass plus, on request, reconstructions and embeddings. The fused
    /// image is embedded by passing it through the shared encoder again.
    pub fn forward_train(
        &self,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
        reconstruct: bool,
        embed: bool,
    ) -> Result<TrainingOutput<T>> {
        let fusion = self.forward(i1, i2)?;
        let recon = reconstruct.then(|| self.reconstruct(&fusion.fused)).transpose()?;
        let embeddings = if embed {
            Some(Embeddings {
                fused: self.embed(&self.encode(&fusion.fused)?[3])?,
                source1: self.embed(&fusion.features1[3])?,
                source2: self.embed(&fusion.features2[3])?,
            })
        } else {
            None
        };
        Ok(TrainingOutput {
            fusion,
            recon,
            embeddings,
        })
    }
}

fn offset<T: Real>(x: Tensor<T>, c: f64) -> Tensor<T> {
    if c == 0.0 {
        x
    } else {
        x.add_scalar(T::lit(c))
    }
}

/// `w1 = r1 / (r1 + r2 + eps)`, `w2 = 1 − w1`.
pub(crate) fn gates_from_scores<T: Real>(r1: &Tensor<T>, r2: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let w1 = r1.div(&r1.add(r2)?.add_scalar(T::lit(eps)))?;
    let w2 = w1.neg().add_scalar(T::one());
    Ok((w1, w2))
}

fn check_rank4_single_channel<T: Real>(x: &Tensor<T>) -> Result<()> {
    match x.shape() {
        &[n, 1, h, w] if n > 0 && h > 0 && w > 0 => Ok(()),
        s => Err(ModelError::Input(format!("expected a non-empty N×1×H×W batch, got {s:?}"))),
    }
}

fn check_image_batch<T: Real>(x: &Tensor<T>) -> Result<()> {
    check_rank4_single_channel(x)?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h % MULTIPLE != 0 || w % MULTIPLE != 0 {
        return Err(ModelError::Input(format!(
            "extents {h}×{w} are not multiples of {MULTIPLE}; pad first"
        )));
    }
    Ok(())
}

/// Extends the last two axes to `h × w` by mirroring (edge sample not
/// repeated, periodic when the pad exceeds the extent). Not differentiable.
pub fn pad_reflect<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, crate::tensor::TensorError> {
    let shape = x.shape();
    let r = shape.len();
    let (sh, sw) = (shape[r - 2], shape[r - 1]);
    let mirror = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    let planes: usize = shape[..r - 2].iter().product();
    let data = x.data();
    let mut out = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        let plane = &data[p * sh * sw..(p + 1) * sh * sw];
        for i in 0..h {
            let row = mirror(i, sh) * sw;
            out.extend((0..w).map(|j| plane[row + mirror(j, sw)]));
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[r - 2] = h;
    new_shape[r - 1] = w;
    Tensor::from_vec(&new_shape, out)
}

/// Appends one mirrored row/column on each odd spatial axis.
fn pad_to_even<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = x.clone();
    for axis in [2, 3] {
        let n = x.shape()[axis];
        if n % 2 == 1 {
            let src = if n >= 2 { n - 2 } else { 0 };
            let edge = x.narrow(axis, src, 1)?;
            x = Tensor::concat(&[&x, &edge], axis)?;
        }
    }
    Ok(x)
}

/// Fused sub-bands of the wavelet expert: reliability-weighted approximation
/// band, magnitude-max detail bands (ties keep the first source).
pub fn wavelet_expert_bands<T: Real>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
) -> Result<WaveletBands<T>> {
    let (b1, b2) = (pad_to_even(f1)?.haar_dwt()?, pad_to_even(f2)?.haar_dwt()?);
    let (g1, g2) = (pad_to_even(w1)?.avg_pool2x2()?, pad_to_even(w2)?.avg_pool2x2()?);
    Ok(WaveletBands {
        ll: b1.ll.mul(&g1)?.add(&b2.ll.mul(&g2)?)?,
        lh: b1.lh.select_max_abs(&b2.lh)?,
        hl: b1.hl.select_max_abs(&b2.hl)?,
        hh: b1.hh.select_max_abs(&b2.hh)?,
    })
}

/// Parameter-free wavelet-domain fusion of two feature maps.
pub fn wavelet_expert<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>, w1: &Tensor<T>, w2: &Tensor<T>) -> Result<Tensor<T>> {
    if f1.shape() != f2.shape() || f1.rank() != 4 {
        return Err(ModelError::Input(format!(
            "wavelet expert needs equal NCHW features, got {:?} and {:?}",
            f1.shape(),
            f2.shape()
        )));
    }
    let (h, w) = (f1.shape()[2], f1.shape()[3]);
    let out = wavelet_expert_bands(f1, f2, w1, w2)?.inverse()?;
    if out.shape()[2] == h && out.shape()[3] == w {
        Ok(out)
    } else {
        Ok(out.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }
}
