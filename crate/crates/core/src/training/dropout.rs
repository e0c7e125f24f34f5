//! Inverted dropout with one mask per site, reused at every time step of a
//! sequence.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Places in the network where a dropout mask is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    SrcEmb,
    /// Forward encoder states before concatenation.
    EncFwd,
    EncBwd,
    /// Text annotations `h_i` as read by the text attention.
    Annotations,
    /// Image features `a_l` as read by the image attention.
    Image,
    /// Previous-word embedding fed to REC1.
    TgtEmb,
    /// Text context entering REC2.
    CtxText,
    /// Gated image context entering REC2.
    CtxImage,
    OutState,
    OutCtxText,
    OutCtxImage,
    OutEmb,
    /// The deep-output tanh layer, right before the readout `L_o`.
    OutHidden,
}

impl Site {
    pub const ALL: [Site; 13] = [
        Site::SrcEmb,
        Site::EncFwd,
        Site::EncBwd,
        Site::Annotations,
        Site::Image,
        Site::TgtEmb,
        Site::CtxText,
        Site::CtxImage,
        Site::OutState,
        Site::OutCtxText,
        Site::OutCtxImage,
        Site::OutEmb,
        Site::OutHidden,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::SrcEmb => "src_emb",
            Site::EncFwd => "enc_fwd",
            Site::EncBwd => "enc_bwd",
            Site::Annotations => "annotations",
            Site::Image => "image",
            Site::TgtEmb => "tgt_emb",
            Site::CtxText => "ctx_text",
            Site::CtxImage => "ctx_image",
            Site::OutState => "out_state",
            Site::OutCtxText => "out_ctx_text",
            Site::OutCtxImage => "out_ctx_image",
            Site::OutEmb => "out_emb",
            Site::OutHidden => "out_hidden",
        }
    }
}

/// Masks for one sequence. A site without a mask is the identity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DropoutPlan {
    p: f64,
    masks: BTreeMap<Site, Vec<f64>>,
}

impl DropoutPlan {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mask(&self, site: Site) -> Option<&[f64]> {
        self.masks.get(&site).map(Vec::as_slice)
    }

    pub fn set_mask(&mut self, site: Site, mask: Vec<f64>) {
        self.masks.insert(site, mask);
    }

    /// `x ⊙ mask(site)`; also the backward map for a gradient at that site.
    pub fn apply(&self, site: Site, x: &[f64]) -> Vec<f64> {
        match self.mask(site) {
            Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        }
    }

    pub fn apply_in_place(&self, site: Site, x: &mut [f64]) {
        if let Some(m) = self.mask(site) {
            x.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
    }
}

/// Samples a Bernoulli(1 − p) mask scaled by 1/(1 − p) for every
/// `(site, width)`. With `p = 0` the plan is the identity and the RNG is
/// left untouched.
pub fn sample_dropout_plan(p: f64, rng: &mut Rng, shapes: &[(Site, usize)]) -> Result<DropoutPlan> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    let mut plan = DropoutPlan {
        p,
        masks: BTreeMap::new(),
    };
    if p == 0.0 {
        return Ok(plan);
    }
    let keep = 1.0 - p;
    for &(site, n) in shapes {
        let mask = (0..n)
            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        plan.masks.insert(site, mask);
    }
    Ok(plan)
}

/// The masks a decoder step actually applied, one map per target step.
#[derive(Clone, Debug, Default)]
pub struct MaskTrace {
    pub steps: Vec<BTreeMap<Site, Vec<f64>>>,
}

impl MaskTrace {
    pub fn record(&mut self, step: usize, site: Site, mask: Option<&[f64]>) {
        if self.steps.len() <= step {
            self.steps.resize_with(step + 1, BTreeMap::new);
        }
        if let Some(m) = mask {
            self.steps[step].insert(site, m.to_vec());
        }
    }

    /// True when every step saw the same mask at every site.
    pub fn is_time_constant(&self) -> bool {
        self.steps.windows(2).all(|w| w[0] == w[1])
    }
}
