use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockIdx {
    pub query: Vec<usize>,
    pub key: Vec<usize>,
    pub value: Vec<usize>,
    pub out: LinearIdx,
    pub norm1: (usize, usize),
    pub fc1: LinearIdx,
    pub fc2: LinearIdx,
    pub norm2: (usize, usize),
}

/// Positions of every parameter in [`ModelState::params`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub extractors: Vec<LinearIdx>,
    pub encoder: Vec<BlockIdx>,
    pub decoder: Vec<BlockIdx>,
    pub heads: Vec<LinearIdx>,
}

struct ParamDecl {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamDecl>) {
    let mut specs: Vec<ParamDecl> = Vec::new();
    let mut reg = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamDecl { name, shape, init });
        specs.len() - 1
    };
    let linear = |reg: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, prefix: &str, i: usize, o: usize| LinearIdx {
        weight: reg(
            format!("{prefix}.weight"),
            vec![i, o],
            Init::Glorot { fan_in: i, fan_out: o },
        ),
        bias: reg(format!("{prefix}.bias"), vec![o], Init::Zeros),
    };
    let (d_e, d_h, hid) = (cfg.d_e, cfg.head_dim(), cfg.mlp_hidden);

    let extractors = cfg
        .dims
        .iter()
        .enumerate()
        .map(|(v, &d)| linear(&mut reg, &format!("extractor.{v}"), d, d_e))
        .collect();

    let block = |reg: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, prefix: String| {
        let proj = |reg: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, kind: &str| {
            (0..cfg.heads)
                .map(|t| {
                    reg(
                        format!("{prefix}.attn.{t}.{kind}"),
                        vec![d_e, d_h],
                        Init::Glorot { fan_in: d_e, fan_out: d_h },
                    )
                })
                .collect::<Vec<_>>()
        };
        let query = proj(reg, "query");
        let key = proj(reg, "key");
        let value = proj(reg, "value");
        let out = linear(reg, &format!("{prefix}.attn.out"), d_e, d_e);
        let norm1 = (
            reg(format!("{prefix}.norm1.gamma"), vec![d_e], Init::Ones),
            reg(format!("{prefix}.norm1.beta"), vec![d_e], Init::Zeros),
        );
        let fc1 = linear(reg, &format!("{prefix}.mlp.fc1"), d_e, hid);
        let fc2 = linear(reg, &format!("{prefix}.mlp.fc2"), hid, d_e);
        let norm2 = (
            reg(format!("{prefix}.norm2.gamma"), vec![d_e], Init::Ones),
            reg(format!("{prefix}.norm2.beta"), vec![d_e], Init::Zeros),
        );
        BlockIdx {
            query,
            key,
            value,
            out,
            norm1,
            fc1,
            fc2,
            norm2,
        }
    };
    let encoder = (0..cfg.layers)
        .map(|l| block(&mut reg, format!("encoder.{l}")))
        .collect();
    let decoder = (0..cfg.layers)
        .map(|l| block(&mut reg, format!("decoder.{l}")))
        .collect();
    let heads = cfg
        .dims
        .iter()
        .enumerate()
        .map(|(v, &d)| linear(&mut reg, &format!("head.{v}"), d_e, d))
        .collect();
    (
        Layout {
            extractors,
            encoder,
            decoder,
            heads,
        },
        specs,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Every trainable tensor of the network plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<NamedTensor>,
}

const CHECKPOINT_FORMAT: &str = "recformer-checkpoint";

impl ModelState {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases,
    /// unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut rng = seeded(seed);
        let params = specs
            .iter()
            .map(|s| {
                let numel: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![0.0; numel],
                    Init::Ones => vec![1.0; numel],
                    Init::Glorot { fan_in, fan_out } => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-a..=a)).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelState {
            config: config.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| NamedTensor {
                name: n.clone(),
                shape: p.shape().to_vec(),
                values: p.data().to_vec(),
            })
            .collect()
    }

    pub fn from_named(config: &ModelConfig, named: Vec<NamedTensor>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        if named.len() != specs.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, configuration needs {}",
                named.len(),
                specs.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (s, t) in specs.iter().zip(named) {
            if s.name != t.name || s.shape != t.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, s.name, s.shape
                )));
            }
            params.push(Tensor::new(t.shape, t.values)?);
        }
        Ok(ModelState {
            config: config.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            layout,
        })
    }

    /// JSON checkpoint: `{format, version, config, params: [{name, shape,
    /// values}]}` with values in row-major order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            params: self.to_named(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("{}: not a checkpoint file", path.display())));
        }
        Self::from_named(&ck.config, ck.params)
    }
}
