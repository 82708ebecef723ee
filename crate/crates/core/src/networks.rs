//! The four networks: transformation `f`, discriminator `d`, decomposer `g1`
//! and reconstructor `g2`, plus the bundle that ties them to a `(M, S)` pair.
//!
//! `f` fuses an encoded feature row with a decoded latent vector by
//! element-wise multiplication and decodes the product back to feature
//! space. `g1` expands a feature row into `M` contiguous blocks of size `S`
//! (one estimated change map per latent component) and `g2` squashes each
//! block to a scalar in `(0,1)`, one shared head for all blocks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::neural::{Activation, DenseLayer, LayerGrads};
use crate::{Error, Result};

/// Hidden widths of the encoder/decoder stacks. Fixed constants by default,
/// overridable for ablations and small-scale tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            hidden1: 69,
            hidden2: 34,
        }
    }
}

/// Largest supported pattern count; metric alignment enumerates all `M!`
/// column permutations.
pub const MAX_PATTERNS: usize = 8;

// ---------------------------------------------------------------------------
// Transformation function f
// ---------------------------------------------------------------------------

/// `y' = dec(enc(x) ⊙ zdec(z))`.
#[derive(Debug, Clone)]
pub struct TransformationNet {
    pub(crate) enc1: DenseLayer,
    pub(crate) enc2: DenseLayer,
    pub(crate) zdec: DenseLayer,
    pub(crate) dec1: DenseLayer,
    pub(crate) dec2: DenseLayer,
}

/// Forward cache of the feature-encoder branch; shared by every latent
/// variant evaluated against the same input batch.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    x: Mat,
    pre1: Mat,
    h1: Mat,
    pre2: Mat,
    /// Encoded features, `n x hidden2`.
    pub e: Mat,
}

/// Forward cache of one latent branch (latent decoding, fusion, decoding).
#[derive(Debug, Clone)]
pub struct BranchCache {
    z: Mat,
    pre_z: Mat,
    s: Mat,
    h: Mat,
    pre_d1: Mat,
    h_d1: Mat,
    pre_d2: Mat,
    /// Synthesized output, `n x S`.
    pub y: Mat,
}

/// Parameter gradients of `f`, layer order: enc1, enc2, zdec, dec1, dec2.
#[derive(Debug, Clone)]
pub struct TransformGrads {
    pub enc1: LayerGrads,
    pub enc2: LayerGrads,
    pub zdec: LayerGrads,
    pub dec1: LayerGrads,
    pub dec2: LayerGrads,
}

impl TransformGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        [&self.enc1, &self.enc2, &self.zdec, &self.dec1, &self.dec2]
            .iter()
            .flat_map(|g| g.slices())
            .collect()
    }
}

impl TransformationNet {
    fn new<R: Rng + ?Sized>(num_features: usize, num_patterns: usize, arch: NetArch, rng: &mut R) -> Self {
        let (s, m) = (num_features, num_patterns);
        let enc1 = DenseLayer::new(s, arch.hidden1, false, Activation::LeakyRelu, rng);
        let enc2 = DenseLayer::new(arch.hidden1, arch.hidden2, false, Activation::LeakyRelu, rng);
        // Latent-decoder columns start mutually orthogonal (Gram-Schmidt
        // on the random init): each latent component gates a distinct
        // direction of the fused encoding from the first step, giving the
        // separation pressures distinct handles instead of a symmetric
        // mixture to untangle.
        let mut zdec = DenseLayer::new(m, arch.hidden2, true, Activation::Sigmoid, rng);
        {
            let mut slices = zdec.param_slices_mut();
            let w = &mut slices[0]; // in x out row-major: m rows of hidden2
            let h = arch.hidden2;
            for k in 0..m {
                for prev in 0..k {
                    let dot: f64 = (0..h).map(|j| w[k * h + j] * w[prev * h + j]).sum();
                    let nrm: f64 = (0..h).map(|j| w[prev * h + j] * w[prev * h + j]).sum();
                    if nrm > 1e-24 {
                        let f = dot / nrm;
                        for j in 0..h {
                            w[k * h + j] -= f * w[prev * h + j];
                        }
                    }
                }
            }
        }
        TransformationNet {
            enc1,
            enc2,
            zdec,
            dec1: DenseLayer::new(arch.hidden2, arch.hidden1, false, Activation::LeakyRelu, rng),
            dec2: DenseLayer::new(arch.hidden1, s, false, Activation::LeakyRelu, rng),
        }
    }

    pub fn num_features(&self) -> usize {
        self.enc1.in_dim()
    }

    pub fn num_patterns(&self) -> usize {
        self.zdec.in_dim()
    }

    /// Encode a feature batch once; the cache can serve many latent branches.
    pub fn encode(&self, x: &Mat) -> Result<EncoderCache> {
        let (h1, pre1) = self.enc1.forward(x)?;
        let (e, pre2) = self.enc2.forward(&h1)?;
        Ok(EncoderCache {
            x: x.clone(),
            pre1,
            h1,
            pre2,
            e,
        })
    }

    /// Decode one latent batch against an encoded feature batch.
    pub fn decode(&self, enc: &EncoderCache, z: &Mat) -> Result<BranchCache> {
        if z.rows() != enc.e.rows() {
            return Err(Error::shape(
                "transform decode",
                format!("{} latent rows", enc.e.rows()),
                format!("{} latent rows", z.rows()),
            ));
        }
        if z.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "latent entries must lie in [0, 1]".into(),
            ));
        }
        let (s, pre_z) = self.zdec.forward(z)?;
        let h = enc.e.zip_map(&s, |a, b| a * b);
        let (h_d1, pre_d1) = self.dec1.forward(&h)?;
        let (y, pre_d2) = self.dec2.forward(&h_d1)?;
        Ok(BranchCache {
            z: z.clone(),
            pre_z,
            s,
            h,
            pre_d1,
            h_d1,
            pre_d2,
            y,
        })
    }

    /// Convenience single-branch forward.
    pub fn forward(&self, x: &Mat, z: &Mat) -> Result<Mat> {
        let enc = self.encode(x)?;
        Ok(self.decode(&enc, z)?.y)
    }

    /// Backward through any number of latent branches that share `enc`.
    /// `upstream[i]` is `dL/dy` of branch `i`; encoder gradients accumulate
    /// across branches before a single encoder backward pass.
    pub fn backward_branches(
        &self,
        enc: &EncoderCache,
        branches: &[&BranchCache],
        upstream: &[&Mat],
    ) -> Result<TransformGrads> {
        assert_eq!(branches.len(), upstream.len(), "branch/upstream count");
        let mut g_zdec = LayerGrads::zeros_like(&self.zdec);
        let mut g_dec1 = LayerGrads::zeros_like(&self.dec1);
        let mut g_dec2 = LayerGrads::zeros_like(&self.dec2);
        let mut de = Mat::zeros(enc.e.rows(), enc.e.cols());

        for (br, dy) in branches.iter().zip(upstream) {
            let dh_d1 = {
                let dpre = self.dec2.backward(&br.h_d1, &br.pre_d2, dy)?;
                g_dec2.add_assign(&dpre.1);
                dpre.0
            };
            let dh = {
                let dpre = self.dec1.backward(&br.h, &br.pre_d1, &dh_d1)?;
                g_dec1.add_assign(&dpre.1);
                dpre.0
            };
            // Product fusion: dL/de += dh ⊙ s, dL/ds = dh ⊙ e.
            de.add_assign(&dh.zip_map(&br.s, |a, b| a * b));
            let ds = dh.zip_map(&enc.e, |a, b| a * b);
            self.zdec
                .backward_params_into(&br.z, &br.pre_z, &ds, &mut g_zdec)?;
        }

        let (dh1, g_enc2) = self.enc2.backward(&enc.h1, &enc.pre2, &de)?;
        let mut g_enc1 = LayerGrads::zeros_like(&self.enc1);
        self.enc1
            .backward_params_into(&enc.x, &enc.pre1, &dh1, &mut g_enc1)?;

        Ok(TransformGrads {
            enc1: g_enc1,
            enc2: g_enc2,
            zdec: g_zdec,
            dec1: g_dec1,
            dec2: g_dec2,
        })
    }

    pub fn layers(&self) -> [&DenseLayer; 5] {
        [&self.enc1, &self.enc2, &self.zdec, &self.dec1, &self.dec2]
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.enc1.param_slices_mut();
        v.extend(self.enc2.param_slices_mut());
        v.extend(self.zdec.param_slices_mut());
        v.extend(self.dec1.param_slices_mut());
        v.extend(self.dec2.param_slices_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Discriminator d
// ---------------------------------------------------------------------------

/// Three-layer classifier ending in a two-class softmax; row index 1 is the
/// "real" class.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    pub(crate) l1: DenseLayer,
    pub(crate) l2: DenseLayer,
    pub(crate) l3: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    x: Mat,
    pre1: Mat,
    h1: Mat,
    pre2: Mat,
    h2: Mat,
    pre3: Mat,
}

#[derive(Debug, Clone)]
pub struct DiscGrads {
    pub l1: LayerGrads,
    pub l2: LayerGrads,
    pub l3: LayerGrads,
}

impl DiscGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2, &self.l3]
            .iter()
            .flat_map(|g| g.slices())
            .collect()
    }
}

impl DiscriminatorNet {
    fn new<R: Rng + ?Sized>(num_features: usize, arch: NetArch, rng: &mut R) -> Self {
        DiscriminatorNet {
            l1: DenseLayer::new(num_features, arch.hidden1, true, Activation::LeakyRelu, rng),
            l2: DenseLayer::new(arch.hidden1, arch.hidden2, true, Activation::LeakyRelu, rng),
            l3: DenseLayer::new(arch.hidden2, 2, true, Activation::Softmax, rng),
        }
    }

    /// Class probabilities, one `(p_synthetic, p_real)` row per input row.
    pub fn forward(&self, y: &Mat) -> Result<(Mat, DiscCache)> {
        let (h1, pre1) = self.l1.forward(y)?;
        let (h2, pre2) = self.l2.forward(&h1)?;
        let (probs, pre3) = self.l3.forward(&h2)?;
        Ok((
            probs,
            DiscCache {
                x: y.clone(),
                pre1,
                h1,
                pre2,
                h2,
                pre3,
            },
        ))
    }

    /// Parameter gradients accumulated over `(cache, dL/dprobs)` pairs.
    pub fn backward_params(&self, parts: &[(&DiscCache, &Mat)]) -> Result<DiscGrads> {
        let mut g1 = LayerGrads::zeros_like(&self.l1);
        let mut g2 = LayerGrads::zeros_like(&self.l2);
        let mut g3 = LayerGrads::zeros_like(&self.l3);
        for (cache, up) in parts {
            let (dh2, g) = self.l3.backward(&cache.h2, &cache.pre3, up)?;
            g3.add_assign(&g);
            let (dh1, g) = self.l2.backward(&cache.h1, &cache.pre2, &dh2)?;
            g2.add_assign(&g);
            self.l1
                .backward_params_into(&cache.x, &cache.pre1, &dh1, &mut g1)?;
        }
        Ok(DiscGrads { l1: g1, l2: g2, l3: g3 })
    }

    /// Gradient w.r.t. the discriminator's input (parameters untouched).
    pub fn backward_input(&self, cache: &DiscCache, up: &Mat) -> Result<Mat> {
        let dh2 = self.l3.backward_input(&cache.pre3, up)?;
        let dh1 = self.l2.backward_input(&cache.pre2, &dh2)?;
        self.l1.backward_input(&cache.pre1, &dh1)
    }

    pub fn layers(&self) -> [&DenseLayer; 3] {
        [&self.l1, &self.l2, &self.l3]
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.l1.param_slices_mut();
        v.extend(self.l2.param_slices_mut());
        v.extend(self.l3.param_slices_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Decomposer g1
// ---------------------------------------------------------------------------

/// Leaky rectifier on the input, then one dense map `S -> S*M`. Block `i`
/// of the output estimates the change synthesized by latent component `i`.
#[derive(Debug, Clone)]
pub struct DecomposerNet {
    pub(crate) layer: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct DecomposerCache {
    y: Mat,
    ly: Mat,
    pre: Mat,
}

#[derive(Debug, Clone)]
pub struct DecomposerGrads {
    pub layer: LayerGrads,
}

impl DecomposerGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layer.slices()
    }
}

impl DecomposerNet {
    fn new<R: Rng + ?Sized>(num_features: usize, num_patterns: usize, rng: &mut R) -> Self {
        DecomposerNet {
            layer: DenseLayer::new(
                num_features,
                num_features * num_patterns,
                true,
                Activation::Identity,
                rng,
            ),
        }
    }

    pub fn forward(&self, y: &Mat) -> Result<(Mat, DecomposerCache)> {
        y.check_cols("decomposer forward", self.layer.in_dim())?;
        let ly = Activation::LeakyRelu.apply(y);
        let (out, pre) = self.layer.forward(&ly)?;
        Ok((
            out,
            DecomposerCache {
                y: y.clone(),
                ly,
                pre,
            },
        ))
    }

    pub fn backward_params(&self, cache: &DecomposerCache, up: &Mat) -> Result<DecomposerGrads> {
        let mut g = LayerGrads::zeros_like(&self.layer);
        self.layer
            .backward_params_into(&cache.ly, &cache.pre, up, &mut g)?;
        Ok(DecomposerGrads { layer: g })
    }

    /// Gradient w.r.t. the original input `y` (through the input rectifier).
    pub fn backward_input(&self, cache: &DecomposerCache, up: &Mat) -> Result<Mat> {
        let dly = self.layer.backward_input(&cache.pre, up)?;
        Ok(Activation::LeakyRelu.backprop(&cache.y, &dly))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layer.param_slices()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.param_slices_mut()
    }
}

// ---------------------------------------------------------------------------
// Reconstructor g2
// ---------------------------------------------------------------------------

/// Shared per-block head mapping one `S`-block of `g1`'s output to a scalar
/// in `(0,1)`; applied independently to each of the `M` blocks.
#[derive(Debug, Clone)]
pub struct ReconstructorNet {
    pub(crate) l1: DenseLayer,
    pub(crate) l2: DenseLayer,
    pub(crate) head: DenseLayer,
}

#[derive(Debug, Clone)]
struct BlockCache {
    xb: Mat,
    pre1: Mat,
    h1: Mat,
    pre2: Mat,
    h2: Mat,
    pre3: Mat,
}

#[derive(Debug, Clone)]
pub struct ReconstructorCache {
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
pub struct ReconstructorGrads {
    pub l1: LayerGrads,
    pub l2: LayerGrads,
    pub head: LayerGrads,
}

impl ReconstructorGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2, &self.head]
            .iter()
            .flat_map(|g| g.slices())
            .collect()
    }
}

impl ReconstructorNet {
    fn new<R: Rng + ?Sized>(num_features: usize, arch: NetArch, rng: &mut R) -> Self {
        ReconstructorNet {
            l1: DenseLayer::new(num_features, arch.hidden1, true, Activation::LeakyRelu, rng),
            l2: DenseLayer::new(arch.hidden1, arch.hidden2, true, Activation::LeakyRelu, rng),
            head: DenseLayer::new(arch.hidden2, 1, true, Activation::Sigmoid, rng),
        }
    }

    fn block_size(&self) -> usize {
        self.l1.in_dim()
    }

    /// Map `n x (S*M)` block matrix to `n x M` reconstructed latents.
    pub fn forward(&self, blocks: &Mat) -> Result<(Mat, ReconstructorCache)> {
        let s = self.block_size();
        if blocks.cols() % s != 0 || blocks.cols() == 0 {
            return Err(Error::shape(
                "reconstructor forward",
                format!("multiple of {} columns", s),
                format!("{} columns", blocks.cols()),
            ));
        }
        let m = blocks.cols() / s;
        let mut r = Mat::zeros(blocks.rows(), m);
        let mut caches = Vec::with_capacity(m);
        for b in 0..m {
            let xb = blocks.col_range(b * s, (b + 1) * s);
            let (h1, pre1) = self.l1.forward(&xb)?;
            let (h2, pre2) = self.l2.forward(&h1)?;
            let (rb, pre3) = self.head.forward(&h2)?;
            for i in 0..r.rows() {
                r.set(i, b, rb.get(i, 0));
            }
            caches.push(BlockCache {
                xb,
                pre1,
                h1,
                pre2,
                h2,
                pre3,
            });
        }
        Ok((r, ReconstructorCache { blocks: caches }))
    }

    /// Gradient w.r.t. the stacked block input only (parameters untouched).
    pub fn backward_input(&self, cache: &ReconstructorCache, dr: &Mat) -> Result<Mat> {
        let s = self.block_size();
        let m = cache.blocks.len();
        dr.check_cols("reconstructor backward_input", m)?;
        let n = dr.rows();
        let mut dblocks = Mat::zeros(n, s * m);
        for (b, bc) in cache.blocks.iter().enumerate() {
            let up = Mat::from_vec(n, 1, dr.col(b));
            let dh2 = self.head.backward_input(&bc.pre3, &up)?;
            let dh1 = self.l2.backward_input(&bc.pre2, &dh2)?;
            let dxb = self.l1.backward_input(&bc.pre1, &dh1)?;
            for i in 0..n {
                dblocks.row_mut(i)[b * s..(b + 1) * s].copy_from_slice(dxb.row(i));
            }
        }
        Ok(dblocks)
    }

    /// Backward over all blocks. `want_input` additionally produces the
    /// gradient w.r.t. the stacked block input.
    pub fn backward(
        &self,
        cache: &ReconstructorCache,
        dr: &Mat,
        want_input: bool,
    ) -> Result<(Option<Mat>, ReconstructorGrads)> {
        let s = self.block_size();
        let m = cache.blocks.len();
        dr.check_cols("reconstructor backward", m)?;
        let n = dr.rows();
        let mut g1 = LayerGrads::zeros_like(&self.l1);
        let mut g2 = LayerGrads::zeros_like(&self.l2);
        let mut g3 = LayerGrads::zeros_like(&self.head);
        let mut dblocks = want_input.then(|| Mat::zeros(n, s * m));
        for (b, bc) in cache.blocks.iter().enumerate() {
            let up = Mat::from_vec(n, 1, dr.col(b));
            let (dh2, g) = self.head.backward(&bc.h2, &bc.pre3, &up)?;
            g3.add_assign(&g);
            let (dh1, g) = self.l2.backward(&bc.h1, &bc.pre2, &dh2)?;
            g2.add_assign(&g);
            if let Some(db) = dblocks.as_mut() {
                let (dxb, g) = self.l1.backward(&bc.xb, &bc.pre1, &dh1)?;
                g1.add_assign(&g);
                for i in 0..n {
                    db.row_mut(i)[b * s..(b + 1) * s].copy_from_slice(dxb.row(i));
                }
            } else {
                self.l1
                    .backward_params_into(&bc.xb, &bc.pre1, &dh1, &mut g1)?;
            }
        }
        Ok((dblocks, ReconstructorGrads { l1: g1, l2: g2, head: g3 }))
    }

    pub fn layers(&self) -> [&DenseLayer; 3] {
        [&self.l1, &self.l2, &self.head]
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.l1.param_slices_mut();
        v.extend(self.l2.param_slices_mut());
        v.extend(self.head.param_slices_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

/// All four networks plus their shared `(M, S)` contract.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub f: TransformationNet,
    pub d: DiscriminatorNet,
    pub g1: DecomposerNet,
    pub g2: ReconstructorNet,
    num_patterns: usize,
    num_features: usize,
    arch: NetArch,
}

impl ModelBundle {
    /// Deterministic construction from a seed, default hidden widths.
    pub fn init(num_patterns: usize, num_features: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(num_patterns, num_features, NetArch::default(), &mut rng)
    }

    /// Reassemble a bundle from explicit layers (checkpoint loading).
    /// Validates that every width chains correctly.
    pub fn from_layers(
        f_layers: Vec<DenseLayer>,
        d_layers: Vec<DenseLayer>,
        g1_layers: Vec<DenseLayer>,
        g2_layers: Vec<DenseLayer>,
    ) -> Result<Self> {
        let wiring = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::CheckpointFormat(format!("inconsistent {what} wiring")))
            }
        };
        wiring(f_layers.len() == 5, "transformation layer count")?;
        wiring(d_layers.len() == 3, "discriminator layer count")?;
        wiring(g1_layers.len() == 1, "decomposer layer count")?;
        wiring(g2_layers.len() == 3, "reconstructor layer count")?;

        let mut fl = f_layers.into_iter();
        let (enc1, enc2, zdec, dec1, dec2) = (
            fl.next().unwrap(),
            fl.next().unwrap(),
            fl.next().unwrap(),
            fl.next().unwrap(),
            fl.next().unwrap(),
        );
        let mut dl = d_layers.into_iter();
        let (d1, d2, d3) = (dl.next().unwrap(), dl.next().unwrap(), dl.next().unwrap());
        let g1_layer = g1_layers.into_iter().next().unwrap();
        let mut gl = g2_layers.into_iter();
        let (r1, r2, head) = (gl.next().unwrap(), gl.next().unwrap(), gl.next().unwrap());

        let s = enc1.in_dim();
        let m = zdec.in_dim();
        let arch = NetArch {
            hidden1: enc1.out_dim(),
            hidden2: enc2.out_dim(),
        };
        wiring(enc2.in_dim() == arch.hidden1, "encoder")?;
        wiring(zdec.out_dim() == arch.hidden2, "latent decoder")?;
        wiring(
            dec1.in_dim() == arch.hidden2
                && dec1.out_dim() == arch.hidden1
                && dec2.in_dim() == arch.hidden1
                && dec2.out_dim() == s,
            "decoder",
        )?;
        wiring(
            d1.in_dim() == s
                && d2.in_dim() == d1.out_dim()
                && d3.in_dim() == d2.out_dim()
                && d3.out_dim() == 2,
            "discriminator",
        )?;
        wiring(
            g1_layer.in_dim() == s && g1_layer.out_dim() == s * m,
            "decomposer",
        )?;
        wiring(
            r1.in_dim() == s
                && r2.in_dim() == r1.out_dim()
                && head.in_dim() == r2.out_dim()
                && head.out_dim() == 1,
            "reconstructor",
        )?;
        if m == 0 || m > MAX_PATTERNS {
            return Err(Error::CheckpointFormat(format!(
                "pattern count {m} out of supported range"
            )));
        }

        Ok(ModelBundle {
            f: TransformationNet {
                enc1,
                enc2,
                zdec,
                dec1,
                dec2,
            },
            d: DiscriminatorNet {
                l1: d1,
                l2: d2,
                l3: d3,
            },
            g1: DecomposerNet { layer: g1_layer },
            g2: ReconstructorNet {
                l1: r1,
                l2: r2,
                head,
            },
            num_patterns: m,
            num_features: s,
            arch,
        })
    }

    pub fn init_with_rng<R: Rng + ?Sized>(
        num_patterns: usize,
        num_features: usize,
        arch: NetArch,
        rng: &mut R,
    ) -> Result<Self> {
        if num_patterns == 0 || num_features == 0 {
            return Err(Error::InvalidArgument(
                "pattern and feature counts must be positive".into(),
            ));
        }
        if num_patterns > MAX_PATTERNS {
            return Err(Error::InvalidArgument(format!(
                "at most {} patterns supported (alignment enumerates M! permutations)",
                MAX_PATTERNS
            )));
        }
        if arch.hidden1 == 0 || arch.hidden2 == 0 {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(ModelBundle {
            f: TransformationNet::new(num_features, num_patterns, arch, rng),
            d: DiscriminatorNet::new(num_features, arch, rng),
            g1: DecomposerNet::new(num_features, num_patterns, rng),
            g2: ReconstructorNet::new(num_features, arch, rng),
            num_patterns,
            num_features,
            arch,
        })
    }

    pub fn num_patterns(&self) -> usize {
        self.num_patterns
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn arch(&self) -> NetArch {
        self.arch
    }

    /// Synthesize patient-like rows from reference rows and latent severities.
    pub fn transform(&self, x: &Mat, z: &Mat) -> Result<Mat> {
        x.check_cols("transform", self.num_features)?;
        z.check_cols("transform latent", self.num_patterns)?;
        if x.rows() != z.rows() {
            return Err(Error::shape(
                "transform",
                format!("{} rows", x.rows()),
                format!("{} latent rows", z.rows()),
            ));
        }
        self.f.forward(x, z)
    }

    /// Probability pairs `(synthetic, real)` per row.
    pub fn discriminate(&self, y: &Mat) -> Result<Mat> {
        y.check_cols("discriminate", self.num_features)?;
        Ok(self.d.forward(y)?.0)
    }

    /// `M` contiguous `S`-blocks of estimated per-component change.
    pub fn decompose(&self, y: &Mat) -> Result<Mat> {
        y.check_cols("decompose", self.num_features)?;
        Ok(self.g1.forward(y)?.0)
    }

    /// Full inverse mapping `g = g2 ∘ g1`: per-row indices in `(0,1)^M`.
    pub fn reconstruct_indices(&self, y: &Mat) -> Result<Mat> {
        y.check_cols("reconstruct", self.num_features)?;
        let (blocks, _) = self.g1.forward(y)?;
        Ok(self.g2.forward(&blocks)?.0)
    }

    /// Clamp `f`, `g1`, `g2` parameters into `[-bound, bound]`. The
    /// discriminator is intentionally left unclipped.
    pub fn clip_generators(&mut self, bound: f64) {
        crate::adam::clip_weights(&mut self.f.param_slices_mut(), bound);
        crate::adam::clip_weights(&mut self.g1.param_slices_mut(), bound);
        crate::adam::clip_weights(&mut self.g2.param_slices_mut(), bound);
    }

    pub fn max_abs_weight_f(&self) -> f64 {
        max_abs(&self.f.param_slices())
    }

    pub fn max_abs_weight_d(&self) -> f64 {
        max_abs(&self.d.param_slices())
    }

    pub fn max_abs_weight_g1(&self) -> f64 {
        max_abs(&self.g1.param_slices())
    }

    pub fn max_abs_weight_g2(&self) -> f64 {
        max_abs(&self.g2.param_slices())
    }
}

fn max_abs(slices: &[&[f64]]) -> f64 {
    slices
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(m: usize, s: usize, seed: u64) -> ModelBundle {
        ModelBundle::init(m, s, seed).unwrap()
    }

    #[test]
    fn init_builds_declared_shapes() {
        let b = bundle(3, 139, 7);
        assert_eq!((b.f.enc1.in_dim(), b.f.enc1.out_dim()), (139, 69));
        assert_eq!((b.f.enc2.in_dim(), b.f.enc2.out_dim()), (69, 34));
        assert_eq!((b.f.zdec.in_dim(), b.f.zdec.out_dim()), (3, 34));
        assert!(b.f.zdec.bias().is_some());
        assert!(b.f.enc1.bias().is_none());
        assert_eq!((b.f.dec1.in_dim(), b.f.dec1.out_dim()), (34, 69));
        assert_eq!((b.f.dec2.in_dim(), b.f.dec2.out_dim()), (69, 139));
        assert_eq!((b.d.l3.in_dim(), b.d.l3.out_dim()), (34, 2));
    }

    #[test]
    fn decomposer_width_scales_with_pattern_count() {
        let b = bundle(2, 139, 1);
        assert_eq!(b.g1.layer.out_dim(), 278);
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let a = bundle(3, 21, 9);
        let b = bundle(3, 21, 9);
        assert_eq!(a.f.param_slices(), b.f.param_slices());
        assert_eq!(a.d.param_slices(), b.d.param_slices());
        assert_eq!(a.g1.param_slices(), b.g1.param_slices());
        assert_eq!(a.g2.param_slices(), b.g2.param_slices());
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(ModelBundle::init(0, 10, 1).is_err());
        assert!(ModelBundle::init(2, 0, 1).is_err());
        assert!(ModelBundle::init(9, 10, 1).is_err());
    }

    #[test]
    fn construction_succeeds_for_small_and_large_sizes() {
        for &(m, s) in &[(1, 1), (1, 2), (4, 5), (8, 200)] {
            let b = ModelBundle::init(m, s, 3).unwrap();
            assert_eq!(b.g1.layer.out_dim(), s * m);
        }
    }

    #[test]
    fn transform_shape_and_determinism() {
        let b = bundle(3, 139, 2);
        let x = Mat::from_vec(5, 139, (0..5 * 139).map(|i| (i as f64 * 0.37).sin()).collect());
        let z = Mat::from_vec(5, 3, vec![0.5; 15]);
        let y = b.transform(&x, &z).unwrap();
        assert_eq!(y.shape(), (5, 139));
        let y2 = b.transform(&x, &z).unwrap();
        assert_eq!(y, y2);
        // Identical input rows with identical latents map identically.
        let x_same = Mat::from_rows(&[x.row(0).to_vec(), x.row(0).to_vec()]);
        let z_same = Mat::from_rows(&[vec![0.2, 0.7, 0.1], vec![0.2, 0.7, 0.1]]);
        let y_same = b.transform(&x_same, &z_same).unwrap();
        assert_eq!(y_same.row(0), y_same.row(1));
    }

    #[test]
    fn latent_outside_unit_interval_is_rejected() {
        let b = bundle(2, 8, 2);
        let x = Mat::zeros(1, 8);
        let z = Mat::from_rows(&[vec![0.5, 1.2]]);
        assert!(b.transform(&x, &z).is_err());
    }

    #[test]
    fn discriminator_rows_are_probability_pairs() {
        let b = bundle(2, 17, 5);
        let y = Mat::from_vec(6, 17, (0..102).map(|i| ((i % 11) as f64 - 5.0) / 3.0).collect());
        let p = b.discriminate(&y).unwrap();
        for i in 0..p.rows() {
            let row = p.row(i);
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn decompose_shape_and_purity() {
        let b = bundle(3, 139, 4);
        let y = Mat::from_vec(4, 139, (0..4 * 139).map(|i| (i as f64 * 0.11).cos()).collect());
        let q = b.decompose(&y).unwrap();
        assert_eq!(q.shape(), (4, 417));
        assert_eq!(q, b.decompose(&y).unwrap());
    }

    #[test]
    fn reconstructed_indices_live_in_open_unit_interval() {
        let b = bundle(3, 31, 6);
        let y = Mat::from_vec(7, 31, (0..217).map(|i| ((i % 13) as f64 - 6.0) / 2.0).collect());
        let r = b.reconstruct_indices(&y).unwrap();
        assert_eq!(r.shape(), (7, 3));
        assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0));
        // Batch result equals row-wise concatenation of single-row calls.
        for i in 0..y.rows() {
            let single = Mat::from_rows(&[y.row(i).to_vec()]);
            let ri = b.reconstruct_indices(&single).unwrap();
            assert_eq!(ri.row(0), r.row(i));
        }
    }

    #[test]
    fn transform_gradient_matches_finite_differences() {
        // d/dθ of the mean L1 transformation distance, through every layer
        // of f, against central differences.
        let mut b = bundle(2, 9, 8);
        let n = 4;
        let x = Mat::from_vec(n, 9, (0..36).map(|i| ((i % 7) as f64 - 3.0) / 2.5).collect());
        let z = Mat::from_vec(n, 2, (0..8).map(|i| (i as f64 + 0.5) / 9.0).collect());

        let loss = |b: &ModelBundle| -> f64 {
            let y = b.transform(&x, &z).unwrap();
            (0..n)
                .map(|i| {
                    y.row(i)
                        .iter()
                        .zip(x.row(i))
                        .map(|(&a, &c)| (a - c).abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        };

        let enc = b.f.encode(&x).unwrap();
        let br = b.f.decode(&enc, &z).unwrap();
        let dy = br.y.zip_map(&x, |a, c| (a - c).signum() / n as f64);
        let grads = b.f.backward_branches(&enc, &[&br], &[&dy]).unwrap();
        let analytic = grads.slices();

        let err = crate::gradcheck::finite_difference_check(
            &mut b,
            |b| b.f.param_slices_mut(),
            &analytic,
            loss,
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }
}
