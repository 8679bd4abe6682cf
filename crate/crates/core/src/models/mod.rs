//! The four meta-model architectures behind one handle.

mod cdt;
pub mod checkpoint;
mod context;
mod robomorph;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use context::{ContextEncoder, ContextEncoding};
pub use unet::TimeMlp;

use icl_tensor::{Elem, Graph, Params, Registry, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use cdt::Cdt;
use robomorph::RoboMorph;
use unet::UNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    #[serde(alias = "robomorph")]
    RoboMorph,
    #[serde(alias = "diffuser")]
    Diffuser,
    #[serde(rename = "CDCNN", alias = "cdcnn")]
    Cdcnn,
    #[serde(rename = "CDT", alias = "cdt")]
    Cdt,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::RoboMorph, Arch::Diffuser, Arch::Cdcnn, Arch::Cdt];

    pub fn name(self) -> &'static str {
        match self {
            Arch::RoboMorph => "RoboMorph",
            Arch::Diffuser => "Diffuser",
            Arch::Cdcnn => "CDCNN",
            Arch::Cdt => "CDT",
        }
    }

    pub fn is_diffusion(self) -> bool {
        self != Arch::RoboMorph
    }

    /// Denoisers that generate only the horizon, conditioned on the context.
    pub fn is_conditioned(self) -> bool {
        matches!(self, Arch::Cdcnn | Arch::Cdt)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub blocks: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub down_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_u: usize,
    pub d_y: usize,
    #[serde(alias = "N")]
    pub n_steps: usize,
    #[serde(alias = "m")]
    pub context: usize,
    pub transformer: TransformerConfig,
    pub unet: UNetConfig,
    pub diffusion_steps: usize,
    pub preset: Preset,
}

impl ModelConfig {
    pub fn for_preset(preset: Preset, arch: Arch, d_u: usize, d_y: usize) -> Self {
        let (n_steps, context, transformer, unet) = match preset {
            Preset::Desk => (
                128,
                96,
                TransformerConfig { blocks: 4, heads: 4, embed_dim: 64 },
                UNetConfig { base_channels: 32, down_steps: 2 },
            ),
            Preset::Paper => (
                400,
                320,
                TransformerConfig { blocks: 12, heads: 8, embed_dim: 384 },
                UNetConfig { base_channels: 128, down_steps: 3 },
            ),
        };
        Self { arch, d_u, d_y, n_steps, context, transformer, unet, diffusion_steps: 100, preset }
    }

    pub fn horizon(&self) -> usize {
        self.n_steps - self.context
    }

    /// `(length, channels)` of the tensor a denoiser generates.
    pub fn target_dims(&self) -> (usize, usize) {
        match self.arch {
            Arch::Diffuser => (self.n_steps, self.d_u + self.d_y),
            _ => (self.horizon(), self.d_y),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(format!("model: {msg}")));
        if !(0 < self.context && self.context < self.n_steps) {
            return Err(Error::BadSplit { m: self.context, n: self.n_steps });
        }
        if self.d_u == 0 || self.d_y == 0 {
            return bad("d_u and d_y must be positive".into());
        }
        let t = &self.transformer;
        if t.heads == 0 || t.embed_dim == 0 || t.embed_dim % t.heads != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", t.embed_dim, t.heads));
        }
        if self.arch == Arch::RoboMorph && t.blocks < 2 {
            return bad("RoboMorph needs at least 2 blocks (encoder + decoder)".into());
        }
        if self.arch == Arch::Cdt && t.blocks == 0 {
            return bad("CDT needs at least 1 block".into());
        }
        if self.arch.is_diffusion() {
            if self.diffusion_steps == 0 {
                return Err(Error::BadT(0));
            }
            let u = &self.unet;
            if matches!(self.arch, Arch::Diffuser | Arch::Cdcnn) {
                if u.base_channels < 2 || u.base_channels % 2 != 0 {
                    return bad(format!("base_channels {} must be even and >= 2", u.base_channels));
                }
                let factor = 1usize << u.down_steps;
                let (len, _) = self.target_dims();
                if len % factor != 0 {
                    return Err(Error::LengthNotDivisible { len, factor });
                }
            }
            if self.arch == Arch::Cdt && t.embed_dim % 2 != 0 {
                return bad("CDT embed_dim must be even".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Net {
    RoboMorph(RoboMorph),
    Diffuser(UNet),
    Cdcnn { ctx: ContextEncoder, unet: UNet },
    Cdt { ctx: ContextEncoder, net: Cdt },
}

/// Layer structure plus parameter declarations for one architecture.
/// Parameters live outside, in a [`Params`] map keyed by name.
#[derive(Debug)]
pub struct MetaModel {
    pub config: ModelConfig,
    net: Net,
    registry: Registry,
}

impl MetaModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Self::build(config, true)
    }

    fn build(config: &ModelConfig, zero_final: bool) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut reg = Registry::new();
        let ctx = |reg: &mut Registry| {
            ContextEncoder::new(reg, "ctx", c.n_steps, c.context, c.d_u, c.d_y, c.transformer.embed_dim)
        };
        let net = match c.arch {
            Arch::RoboMorph => Net::RoboMorph(RoboMorph::new(&mut reg, c)),
            Arch::Diffuser => {
                let ch = c.d_u + c.d_y;
                Net::Diffuser(UNet::new(&mut reg, "unet", ch, ch, c.unet.base_channels, c.unet.down_steps, 0, zero_final))
            }
            Arch::Cdcnn => {
                let ctx = ctx(&mut reg);
                let unet = UNet::new(
                    &mut reg,
                    "unet",
                    c.d_y + c.d_u,
                    c.d_y,
                    c.unet.base_channels,
                    c.unet.down_steps,
                    c.transformer.embed_dim,
                    zero_final,
                );
                Net::Cdcnn { ctx, unet }
            }
            Arch::Cdt => {
                let ctx = ctx(&mut reg);
                Net::Cdt { ctx, net: Cdt::new(&mut reg, c, zero_final) }
            }
        };
        Ok(Self { config: config.clone(), net, registry: reg })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn num_params(&self) -> usize {
        self.registry.num_scalars()
    }

    /// Names of the zero-initialized output layer parameters (empty for
    /// RoboMorph).
    pub fn final_layer_params(&self) -> Vec<String> {
        let prefix = match self.net {
            Net::RoboMorph(_) => return Vec::new(),
            Net::Diffuser(_) | Net::Cdcnn { .. } => "unet.out.",
            Net::Cdt { .. } => "head.",
        };
        self.registry.specs().iter().filter(|s| s.name.starts_with(prefix)).map(|s| s.name.clone()).collect()
    }

    pub fn init_params(&self, seed: u64) -> Params<f32> {
        self.registry.init(seed)
    }

    /// Like [`init_params`](Self::init_params), but with `zero_final = false`
    /// the denoiser output layer gets a random init instead of zeros.
    pub fn init_params_with<T: Elem>(&self, seed: u64, zero_final: bool) -> Params<T> {
        if zero_final {
            return self.registry.init(seed);
        }
        let alt = Self::build(&self.config, false).expect("config validated at construction");
        alt.registry.init(seed)
    }

    /// Checks that `params` holds exactly the declared tensors.
    pub fn check_params<T: Elem>(&self, params: &Params<T>) -> Result<()> {
        if params.len() != self.registry.specs().len() {
            return Err(Error::SchemaMismatch(format!(
                "{} parameter tensors, model declares {}",
                params.len(),
                self.registry.specs().len()
            )));
        }
        for s in self.registry.specs() {
            let t = params.get(&s.name).map_err(|_| Error::SchemaMismatch(format!("missing parameter `{}`", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::SchemaMismatch(format!("`{}` has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        Ok(())
    }

    fn wrong_arch(&self, op: &str) -> Error {
        Error::ConfigInvalid(format!("{op} is not available for {}", self.arch()))
    }

    /// Deterministic horizon prediction, RoboMorph only.
    pub fn robomorph_forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        p: &Params<T>,
        ctx_u: Var,
        ctx_y: Var,
        fut_u: Var,
    ) -> Result<Var> {
        match &self.net {
            Net::RoboMorph(net) => net.forward(g, p, ctx_u, ctx_y, fut_u),
            _ => Err(self.wrong_arch("robomorph_forward")),
        }
    }

    /// Context pathway for CDCNN and CDT. `u [B, N, d_u]`, `y_ctx [B, m, d_y]`.
    pub fn encode_context<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, u: Var, y_ctx: Var) -> Result<ContextEncoding> {
        match &self.net {
            Net::Cdcnn { ctx, .. } | Net::Cdt { ctx, .. } => ctx.forward(g, p, u, y_ctx),
            _ => Err(self.wrong_arch("encode_context")),
        }
    }

    /// Predicts the noise in `x_t`, channel-last `[B, L, C]` with
    /// `(L, C) = config.target_dims()`. `ts` holds one step in `1..=T` per
    /// batch element; conditioned archs need `ctx`.
    pub fn denoise<T: Elem>(
        &self,
        g: &mut Graph<T>,
        p: &Params<T>,
        x_t: Var,
        ts: &[usize],
        ctx: Option<&ContextEncoding>,
    ) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(x_t).to_vec();
        let (len, ch) = c.target_dims();
        if s.len() != 3 || s[2] != ch || ts.len() != s[0] {
            return Err(Error::ShapeMismatch(format!(
                "denoiser input {s:?} with {} steps, expected [B, {len}, {ch}]",
                ts.len()
            )));
        }
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > c.diffusion_steps) {
            return Err(Error::BadT(t));
        }
        let need_ctx = || ctx.ok_or_else(|| Error::ConfigInvalid(format!("{} needs a context encoding", c.arch)));
        match &self.net {
            Net::RoboMorph(_) => Err(self.wrong_arch("denoise")),
            Net::Diffuser(unet) | Net::Cdcnn { unet, .. } => {
                if s[1] % unet.factor() != 0 {
                    return Err(Error::LengthNotDivisible { len: s[1], factor: unet.factor() });
                }
                if s[1] != len {
                    return Err(Error::ShapeMismatch(format!("denoiser length {} != {len}", s[1])));
                }
                let (x, extra) = match self.net {
                    Net::Cdcnn { .. } => {
                        let e = need_ctx()?;
                        (g.concat(&[x_t, e.horizon_u], 2)?, Some(e.cond_vector))
                    }
                    _ => (x_t, None),
                };
                let x = g.swap_axes(x, 1, 2)?;
                let out = unet.forward(g, p, x, ts, extra)?;
                Ok(g.swap_axes(out, 1, 2)?)
            }
            Net::Cdt { net, .. } => net.forward(g, p, x_t, ts, need_ctx()?),
        }
    }
}
