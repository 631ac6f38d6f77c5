//! Layer-by-layer network descriptions and the HomographyNet builders.

use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::nn::quant::{GROUPS, NUM_BINS};

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { in_ch: usize, out_ch: usize },
    /// Per-channel batch normalization (per feature on flat inputs).
    BatchNorm { ch: usize },
    ReLU,
    /// 2x2 max pooling with stride 2.
    MaxPool2x2,
    Flatten,
    FullyConnected { inputs: usize, outputs: usize },
    /// Inverted dropout with drop probability `p`.
    Dropout { p: f64 },
    /// Independent softmax over each of `groups` runs of `bins` values.
    GroupSoftmax { groups: usize, bins: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GroupSoftmax { .. } => "group_softmax",
        }
    }

    /// Output shape (per sample) for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || {
            Err(NnError::ShapeMismatch(format!(
                "{} cannot take input {input:?}",
                self.name()
            )))
        };
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch } => match input {
                &[c, h, w] if c == in_ch && out_ch > 0 => Ok(vec![out_ch, h, w]),
                _ => bad(),
            },
            LayerSpec::BatchNorm { ch } => match input {
                &[c, _, _] | &[c] if c == ch => Ok(input.to_vec()),
                _ => bad(),
            },
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => match input {
                &[c, h, w] if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => Ok(vec![c, h / 2, w / 2]),
                _ => bad(),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::FullyConnected { inputs, outputs } => match input {
                &[n] if n == inputs && outputs > 0 => Ok(vec![outputs]),
                _ => bad(),
            },
            LayerSpec::GroupSoftmax { groups, bins } => match input {
                &[n] if n == groups * bins && bins > 0 => Ok(vec![n]),
                _ => bad(),
            },
        }
    }
}

/// What the network output means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// 8 corner offsets in pixels.
    Regression,
    /// 8 x 21 bin scores over `[-rho, rho]`.
    Classification { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape, `[channels, height, width]` or `[features]`.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Set for HomographyNets; generic test networks leave it empty.
    pub head: Option<Head>,
}

impl NetworkSpec {
    /// Per-sample shapes of every activation, input first.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, batch: usize) -> Result<Vec<usize>> {
        let mut s = self.activation_shapes()?.pop().expect("non-empty");
        s.insert(0, batch);
        Ok(s)
    }

    /// Checks shapes and, for HomographyNets, the head layout.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.activation_shapes()?;
        let out: usize = shapes.last().expect("non-empty").iter().product();
        let softmax_last = matches!(self.layers.last(), Some(LayerSpec::GroupSoftmax { .. }));
        let softmax_count = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::GroupSoftmax { .. }))
            .count();
        match self.head {
            None => Ok(()),
            Some(Head::Regression) if out == 8 && softmax_count == 0 => Ok(()),
            Some(Head::Classification { rho })
                if rho > 0.0
                    && softmax_last
                    && softmax_count == 1
                    && self.layers.last()
                        == Some(&LayerSpec::GroupSoftmax {
                            groups: GROUPS,
                            bins: NUM_BINS,
                        }) =>
            {
                Ok(())
            }
            Some(h) => Err(NnError::InvalidSpec(format!(
                "head {h:?} does not match output of {out} values"
            ))),
        }
    }

    /// Input side length for square image inputs.
    pub fn input_side(&self) -> Option<usize> {
        match self.input[..] {
            [_, h, w] if h == w => Some(h),
            _ => None,
        }
    }

    /// Number of leading layers producing the raw scores (excludes a final
    /// group softmax).
    pub fn logits_end(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::GroupSoftmax { .. }) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }
}

/// Convolutional trunk and fully connected sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub input_side: usize,
    /// Filters per 3x3 conv layer, grouped in pairs.
    pub filters: Vec<usize>,
    /// Max pools, placed after the first `pools` conv pairs.
    pub pools: usize,
    pub fc: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scale {
    /// 128x128x2 input, filters 64,64,64,64,128,128,128,128, FC 1024.
    Full,
    /// 32x32x2 input, filters 16,16,32,32, FC 128, no dropout.
    Desk,
    Custom(ScaleConfig),
}

impl Scale {
    pub fn config(&self) -> ScaleConfig {
        match self {
            Scale::Full => ScaleConfig {
                input_side: 128,
                filters: vec![64, 64, 64, 64, 128, 128, 128, 128],
                pools: 3,
                fc: 1024,
                dropout: 0.5,
            },
            Scale::Desk => ScaleConfig {
                input_side: 32,
                filters: vec![16, 16, 32, 32],
                pools: 2,
                fc: 128,
                dropout: 0.0,
            },
            Scale::Custom(c) => c.clone(),
        }
    }
}

/// VGG-style HomographyNet: conv3x3 + BN + ReLU blocks with a 2x2 max pool
/// after each of the first `pools` conv pairs, dropout after the last conv
/// block and after the first FC layer, then the head.
pub fn homography_net(head: Head, scale: &Scale) -> Result<NetworkSpec> {
    let cfg = scale.config();
    if cfg.filters.is_empty() || !cfg.filters.len().is_multiple_of(2) {
        return Err(NnError::InvalidSpec(format!(
            "conv filters must come in pairs, got {:?}",
            cfg.filters
        )));
    }
    if cfg.pools > cfg.filters.len() / 2 {
        return Err(NnError::InvalidSpec(format!(
            "{} pools need at least {} conv pairs",
            cfg.pools, cfg.pools
        )));
    }
    let div = 1usize << cfg.pools;
    if cfg.input_side == 0 || !cfg.input_side.is_multiple_of(div) {
        return Err(NnError::ShapeMismatch(format!(
            "input side {} not divisible by {div}",
            cfg.input_side
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(NnError::InvalidSpec(format!("dropout {} not in [0, 1)", cfg.dropout)));
    }

    let mut layers = Vec::new();
    let mut ch = 2;
    for (i, &f) in cfg.filters.iter().enumerate() {
        layers.push(LayerSpec::Conv3x3 { in_ch: ch, out_ch: f });
        layers.push(LayerSpec::BatchNorm { ch: f });
        layers.push(LayerSpec::ReLU);
        ch = f;
        if i % 2 == 1 && i / 2 < cfg.pools {
            layers.push(LayerSpec::MaxPool2x2);
        }
    }
    let side = cfg.input_side / div;
    if cfg.dropout > 0.0 {
        layers.push(LayerSpec::Dropout { p: cfg.dropout });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::FullyConnected {
        inputs: ch * side * side,
        outputs: cfg.fc,
    });
    layers.push(LayerSpec::ReLU);
    if cfg.dropout > 0.0 {
        layers.push(LayerSpec::Dropout { p: cfg.dropout });
    }
    match head {
        Head::Regression => layers.push(LayerSpec::FullyConnected {
            inputs: cfg.fc,
            outputs: GROUPS,
        }),
        Head::Classification { .. } => {
            layers.push(LayerSpec::FullyConnected {
                inputs: cfg.fc,
                outputs: GROUPS * NUM_BINS,
            });
            layers.push(LayerSpec::GroupSoftmax {
                groups: GROUPS,
                bins: NUM_BINS,
            });
        }
    }
    let spec = NetworkSpec {
        input: vec![2, cfg.input_side, cfg.input_side],
        layers,
        head: Some(head),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_shapes() {
        let reg = homography_net(Head::Regression, &Scale::Full).unwrap();
        assert_eq!(reg.output_shape(64).unwrap(), vec![64, 8]);
        let cls = homography_net(Head::Classification { rho: 32.0 }, &Scale::Full).unwrap();
        assert_eq!(cls.output_shape(64).unwrap(), vec![64, 168]);

        let shapes = reg.activation_shapes().unwrap();
        let convs: Vec<usize> = reg
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv3x3 { out_ch, .. } => Some(*out_ch),
                _ => None,
            })
            .collect();
        assert_eq!(convs, vec![64, 64, 64, 64, 128, 128, 128, 128]);
        assert!(shapes.contains(&vec![128, 16, 16]));
        assert!(reg.layers.contains(&LayerSpec::FullyConnected {
            inputs: 32768,
            outputs: 1024
        }));
        let pools = reg.layers.iter().filter(|l| **l == LayerSpec::MaxPool2x2).count();
        assert_eq!(pools, 3);
        let drops = reg
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dropout { p } if *p == 0.5))
            .count();
        assert_eq!(drops, 2);
    }

    #[test]
    fn desk_scale_shapes() {
        let spec = homography_net(Head::Regression, &Scale::Desk).unwrap();
        assert_eq!(spec.input, vec![2, 32, 32]);
        assert!(spec.layers.contains(&LayerSpec::FullyConnected {
            inputs: 32 * 8 * 8,
            outputs: 128
        }));
    }

    #[test]
    fn rejects_bad_scales() {
        let mut c = Scale::Desk.config();
        c.input_side = 30;
        assert!(homography_net(Head::Regression, &Scale::Custom(c)).is_err());
        let mut c = Scale::Desk.config();
        c.filters = vec![16, 16, 32];
        assert!(homography_net(Head::Regression, &Scale::Custom(c)).is_err());
        let mut c = Scale::Desk.config();
        c.pools = 3;
        assert!(homography_net(Head::Regression, &Scale::Custom(c)).is_err());
    }

    #[test]
    fn head_mismatch_detected() {
        let mut spec = homography_net(Head::Regression, &Scale::Desk).unwrap();
        spec.head = Some(Head::Classification { rho: 8.0 });
        assert!(spec.validate().is_err());
    }
}
