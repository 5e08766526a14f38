use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    PointnetLite,
    EdgeconvLite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub n_points: usize,
    /// Hidden widths of the shared per-point (or per-edge) MLP.
    pub hidden: Vec<usize>,
    /// Neighbourhood size for the edge encoder.
    pub k: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::PointnetLite,
            in_dim: 3,
            out_dim: 64,
            n_points: 128,
            hidden: vec![64],
            k: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtmmConfig {
    pub layers: usize,
    pub d: usize,
    /// Hidden widths of the residual head block; `None` means `[2d]`.
    pub mlp_res: Option<Vec<usize>>,
    /// Hidden widths of the key-side positional MLP; `None` means `[d]`.
    pub pos_mlp: Option<Vec<usize>>,
    /// Hidden widths of the fusion MLP inside each block; `None` means `[d]`.
    pub cfa_mlp: Option<Vec<usize>>,
}

impl Default for RtmmConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d: 64,
            mlp_res: None,
            pos_mlp: None,
            cfa_mlp: None,
        }
    }
}

impl RtmmConfig {
    pub fn mlp_res_widths(&self) -> Vec<usize> {
        self.mlp_res.clone().unwrap_or_else(|| vec![2 * self.d])
    }

    pub fn pos_mlp_widths(&self) -> Vec<usize> {
        self.pos_mlp.clone().unwrap_or_else(|| vec![self.d])
    }

    pub fn cfa_mlp_widths(&self) -> Vec<usize> {
        self.cfa_mlp.clone().unwrap_or_else(|| vec![self.d])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub rtmm: RtmmConfig,
}

impl ModelConfig {
    /// Point-cloud encoder and head sharing channel width `d`, on `n` points.
    pub fn with_dims(kind: EncoderKind, d: usize, n: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                kind,
                out_dim: d,
                n_points: n,
                hidden: vec![d],
                ..EncoderConfig::default()
            },
            rtmm: RtmmConfig {
                d,
                ..RtmmConfig::default()
            },
        }
    }

    /// Replaces every `None` width with its effective value.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.rtmm.mlp_res = Some(self.rtmm.mlp_res_widths());
        out.rtmm.pos_mlp = Some(self.rtmm.pos_mlp_widths());
        out.rtmm.cfa_mlp = Some(self.rtmm.cfa_mlp_widths());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let r = &self.rtmm;
        let fail = |msg: String| Err(Error::Config(msg));
        if e.in_dim != 3 {
            return fail(format!("encoder.in_dim must be 3, got {}", e.in_dim));
        }
        if e.out_dim == 0 || e.n_points == 0 {
            return fail("encoder.out_dim and encoder.n_points must be positive".into());
        }
        if r.d != e.out_dim {
            return fail(format!("rtmm.d ({}) must equal encoder.out_dim ({})", r.d, e.out_dim));
        }
        if r.layers == 0 {
            return fail("rtmm.layers must be at least 1".into());
        }
        if e.kind == EncoderKind::EdgeconvLite && (e.k == 0 || e.n_points < e.k) {
            return fail(format!(
                "edge encoder needs 1 <= k <= n_points, got k={} n_points={}",
                e.k, e.n_points
            ));
        }
        let widths = [&e.hidden, &r.mlp_res_widths(), &r.pos_mlp_widths(), &r.cfa_mlp_widths()];
        if widths.iter().any(|w| w.contains(&0)) {
            return fail("hidden widths must be positive".into());
        }
        Ok(())
    }
}
