//! Parameterised builders for the three architecture families.
//!
//! Every family shares a stem (`conv → bn → swish`), a sequence of stages with
//! a 2×2 max pool before each stage after the first (skipped once the map is
//! smaller than 4 pixels on a side), and the head
//! `global-avg-pool → dense(head_hidden) → swish → dense(num_classes)`.
//! Residual families use pre-activation blocks (`bn → swish → conv` units),
//! so a block whose branch weights are zero passes its shortcut through, and
//! close with a final `bn → swish` before pooling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ops::ConvShape;
use super::{layout_output_shape, LayerSpec, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Vgg,
    Resnet,
    ResnetB,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Vgg, Family::Resnet, Family::ResnetB];

    pub fn name(self) -> &'static str {
        match self {
            Family::Vgg => "vgg",
            Family::Resnet => "resnet",
            Family::ResnetB => "resnet-b",
        }
    }

    /// Convolutions per block, excluding shortcut projections.
    fn convs_per_block(self) -> usize {
        match self {
            Family::Vgg => 1,
            Family::Resnet => 2,
            Family::ResnetB => 3,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture family {s:?} (expected vgg, resnet or resnet-b)")))
    }
}

pub const BOTTLENECK_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub family: Family,
    /// `[h, w, bands]` of the input cubes.
    pub input_dims: [usize; 3],
    pub stem_width: usize,
    #[serde(default = "default_stem_kernel")]
    pub stem_kernel: usize,
    /// Output channels of each stage (for bottlenecks: after expansion).
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub head_hidden: usize,
    pub num_classes: usize,
}

fn default_stem_kernel() -> usize {
    3
}

impl ArchConfig {
    /// Full-size configuration with 116 (resnet-b), 34 (resnet) or 31 (vgg) convolutions
    /// on 50 × 170 × 110 cubes; widths are chosen so each family has roughly 36 M parameters.
    pub fn reference(family: Family, num_classes: usize) -> Self {
        let (stem_width, stage_widths, blocks_per_stage) = match family {
            Family::ResnetB => (64, vec![256, 512, 832, 1984], vec![3, 8, 23, 3]),
            Family::Resnet => (112, vec![112, 224, 448, 512], vec![3, 4, 5, 3]),
            Family::Vgg => (64, vec![64, 128, 256, 480, 448], vec![2, 4, 8, 8, 8]),
        };
        Self {
            family,
            input_dims: [50, 170, 110],
            stem_width,
            stem_kernel: 3,
            stage_widths,
            blocks_per_stage,
            head_hidden: 1024,
            num_classes,
        }
    }

    /// Two-stage configuration small enough to train on a laptop CPU in seconds per epoch.
    pub fn desk(family: Family, input_dims: [usize; 3], num_classes: usize) -> Self {
        let (stage_widths, blocks_per_stage) = match family {
            Family::ResnetB => (vec![16, 32], vec![2, 2]),
            Family::Resnet => (vec![8, 16], vec![1, 1]),
            Family::Vgg => (vec![8, 16], vec![1, 2]),
        };
        Self {
            family,
            input_dims,
            stem_width: 8,
            stem_kernel: 1,
            stage_widths,
            blocks_per_stage,
            head_hidden: 16,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dims.contains(&0) {
            return bad(format!("input dims {:?} must be positive", self.input_dims));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return bad("stage_widths and blocks_per_stage must be non-empty and of equal length".into());
        }
        if self.stem_width == 0 || self.stem_kernel == 0 || self.head_hidden == 0 {
            return bad("stem width, stem kernel and head size must be positive".into());
        }
        if self.stage_widths.contains(&0) || self.blocks_per_stage.contains(&0) {
            return bad("every stage needs a positive width and at least one block".into());
        }
        if self.family == Family::ResnetB && self.stage_widths.iter().any(|w| w % BOTTLENECK_EXPANSION != 0) {
            return bad(format!("bottleneck stage widths must be multiples of {BOTTLENECK_EXPANSION}"));
        }
        if self.num_classes < 2 {
            return bad("at least two classes required".into());
        }
        Ok(())
    }

    fn is_residual(&self) -> bool {
        self.family != Family::Vgg
    }

    /// Input channel count of each stage.
    fn stage_inputs(&self) -> Vec<usize> {
        std::iter::once(self.stem_width).chain(self.stage_widths.iter().copied()).take(self.stage_widths.len()).collect()
    }

    pub fn projection_count(&self) -> usize {
        if !self.is_residual() {
            return 0;
        }
        self.stage_inputs().iter().zip(&self.stage_widths).filter(|(a, b)| a != b).count()
    }

    /// Convolution count from the block structure alone.
    pub fn conv_layer_count(&self) -> usize {
        1 + self.family.convs_per_block() * self.blocks_per_stage.iter().sum::<usize>() + self.projection_count()
    }

    /// Trainable parameter count from the block structure alone.
    pub fn parameter_count(&self) -> usize {
        let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
        let bn = |c: usize| 2 * c;
        let mut total = conv(self.stem_kernel, self.input_dims[2], self.stem_width) + bn(self.stem_width);
        for ((&cin0, &w), &blocks) in self.stage_inputs().iter().zip(&self.stage_widths).zip(&self.blocks_per_stage) {
            for b in 0..blocks {
                let cin = if b == 0 { cin0 } else { w };
                total += match self.family {
                    Family::Vgg => conv(3, cin, w) + bn(w),
                    Family::Resnet => bn(cin) + conv(3, cin, w) + bn(w) + conv(3, w, w),
                    Family::ResnetB => {
                        let m = w / BOTTLENECK_EXPANSION;
                        bn(cin) + conv(1, cin, m) + bn(m) + conv(3, m, m) + bn(m) + conv(1, m, w)
                    }
                };
                if self.is_residual() && cin != w {
                    total += conv(1, cin, w);
                }
            }
        }
        let last = *self.stage_widths.last().expect("validated");
        if self.is_residual() {
            total += bn(last);
        }
        total + last * self.head_hidden + self.head_hidden + self.head_hidden * self.num_classes + self.num_classes
    }

    pub fn layout(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let conv = |k: usize, cin: usize, cout: usize| LayerSpec::Conv(ConvShape { kh: k, kw: k, cin, cout });
        let bn = |c: usize| LayerSpec::BatchNorm { channels: c };
        let [mut h, mut w, bands] = self.input_dims;
        let mut layers = vec![conv(self.stem_kernel, bands, self.stem_width), bn(self.stem_width), LayerSpec::Swish];
        let mut cur = self.stem_width;
        for (s, (&width, &blocks)) in self.stage_widths.iter().zip(&self.blocks_per_stage).enumerate() {
            if s > 0 && h.min(w) >= 4 {
                layers.push(LayerSpec::MaxPool2);
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            for _ in 0..blocks {
                match self.family {
                    Family::Vgg => layers.extend([conv(3, cur, width), bn(width), LayerSpec::Swish]),
                    Family::Resnet | Family::ResnetB => {
                        let branch = if self.family == Family::Resnet {
                            vec![bn(cur), LayerSpec::Swish, conv(3, cur, width), bn(width), LayerSpec::Swish, conv(3, width, width)]
                        } else {
                            let m = width / BOTTLENECK_EXPANSION;
                            vec![
                                bn(cur),
                                LayerSpec::Swish,
                                conv(1, cur, m),
                                bn(m),
                                LayerSpec::Swish,
                                conv(3, m, m),
                                bn(m),
                                LayerSpec::Swish,
                                conv(1, m, width),
                            ]
                        };
                        let projection = (cur != width).then_some(ConvShape { kh: 1, kw: 1, cin: cur, cout: width });
                        layers.push(LayerSpec::Residual { branch, projection });
                    }
                }
                cur = width;
            }
        }
        if self.is_residual() {
            layers.extend([bn(cur), LayerSpec::Swish]);
        }
        layers.extend([
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { inp: cur, out: self.head_hidden },
            LayerSpec::Swish,
            LayerSpec::Dense { inp: self.head_hidden, out: self.num_classes },
        ]);
        layout_output_shape(&layers, (self.input_dims[0], self.input_dims[1], bands))?;
        Ok(layers)
    }

    /// Spatial size of the map entering global pooling.
    pub fn final_map(&self) -> Result<(usize, usize)> {
        let layout = self.layout()?;
        let pools = layout.iter().filter(|l| matches!(l, LayerSpec::MaxPool2)).count();
        let (mut h, mut w) = (self.input_dims[0], self.input_dims[1]);
        for _ in 0..pools {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok((h, w))
    }
}

pub fn build_network(cfg: &ArchConfig, seed: u64) -> Result<Network> {
    let layout = cfg.layout()?;
    let [h, w, c] = cfg.input_dims;
    Network::from_layout((h, w, c), layout, Some(cfg.clone()), seed)
}

#[cfg(test)]
mod tests {
    use super::super::{layout_conv_layers, layout_parameters};
    use super::*;

    #[test]
    fn reference_conv_counts() {
        for (family, expected) in [(Family::ResnetB, 116), (Family::Resnet, 34), (Family::Vgg, 31)] {
            let cfg = ArchConfig::reference(family, 10);
            let layout = cfg.layout().unwrap();
            assert_eq!(layout_conv_layers(&layout), expected, "{family}");
            assert_eq!(cfg.conv_layer_count(), expected, "{family}");
            assert_eq!(layout_parameters(&layout), cfg.parameter_count(), "{family}");
            let (h, w) = cfg.final_map().unwrap();
            assert!(h >= 2 && w >= 2);
        }
    }

    #[test]
    fn desk_counts_match_construction() {
        for family in Family::ALL {
            let cfg = ArchConfig::desk(family, [16, 48, 24], 4);
            let net = build_network(&cfg, 1).unwrap();
            assert_eq!(net.conv_layer_count(), cfg.conv_layer_count(), "{family}");
            assert_eq!(net.parameter_count(), cfg.parameter_count(), "{family}");
            assert_eq!(net.num_classes(), 4);
        }
        let cfg = ArchConfig::desk(Family::ResnetB, [16, 48, 24], 4);
        assert_eq!(cfg.conv_layer_count(), 1 + 2 * 2 * 3 + cfg.projection_count());
    }

    #[test]
    fn randomised_configs_agree_with_closed_form() {
        let mut seed = 0u64;
        for family in Family::ALL {
            for stages in 1..4 {
                for blocks in 1..3 {
                    seed += 1;
                    let widths: Vec<usize> = (0..stages).map(|s| 4 * (1 + (seed as usize + s) % 3)).collect();
                    let cfg = ArchConfig {
                        family,
                        input_dims: [7, 9, 3],
                        stem_width: 4 + (seed as usize % 2) * 4,
                        stem_kernel: 1 + 2 * (seed as usize % 2),
                        stage_widths: widths,
                        blocks_per_stage: vec![blocks; stages],
                        head_hidden: 5,
                        num_classes: 3,
                    };
                    let net = build_network(&cfg, seed).unwrap();
                    assert_eq!(net.conv_layer_count(), cfg.conv_layer_count());
                    assert_eq!(net.parameter_count(), cfg.parameter_count());
                }
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ArchConfig::desk(Family::ResnetB, [16, 48, 24], 4);
        cfg.stage_widths = vec![18, 32];
        assert!(cfg.validate().is_err());
        let mut cfg = ArchConfig::desk(Family::Vgg, [16, 48, 24], 4);
        cfg.blocks_per_stage.pop();
        assert!(cfg.validate().is_err());
        assert!("resnet-c".parse::<Family>().is_err());
        assert_eq!("resnet-b".parse::<Family>().unwrap(), Family::ResnetB);
    }

    #[test]
    fn convolutions_preserve_spatial_size() {
        for family in Family::ALL {
            let cfg = ArchConfig::reference(family, 10);
            let mut shape = (50, 170, 110);
            for l in cfg.layout().unwrap() {
                let next = l.output_shape(shape).unwrap();
                if let LayerSpec::Conv(_) | LayerSpec::Residual { .. } = l {
                    assert_eq!((next.0, next.1), (shape.0, shape.1));
                }
                shape = next;
            }
        }
    }
}
